//! Seeded software-fault injectors.
//!
//! Output faults corrupt one output slot after the reference transform has
//! run; `param_perturb` corrupts a parameter before it. All choices derive
//! from the fault's seed, so a fault spec always produces the same
//! corruption.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::NdArray;
use crate::module::{DtmModule, Implementation};
use crate::num::{fmt_real, is_integral};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Negate one cell.
    SignFlip,
    /// Rotate the flattened row-major data (and mask) right by `magnitude`.
    IndexShift,
    /// Multiply one parameter entry by `1 + magnitude`.
    ParamPerturb,
    /// Replace one cell with NaN.
    NanInject,
    /// Multiply every cell by `magnitude`.
    UnitScale,
    /// Overwrite one cell with the value of the first cell.
    StuckValue,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::SignFlip,
        FaultKind::IndexShift,
        FaultKind::ParamPerturb,
        FaultKind::NanInject,
        FaultKind::UnitScale,
        FaultKind::StuckValue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::SignFlip => "sign_flip",
            FaultKind::IndexShift => "index_shift",
            FaultKind::ParamPerturb => "param_perturb",
            FaultKind::NanInject => "nan_inject",
            FaultKind::UnitScale => "unit_scale",
            FaultKind::StuckValue => "stuck_value",
        }
    }

    /// Whether the fault targets an output slot (as opposed to a parameter).
    pub fn targets_output(self) -> bool {
        self != FaultKind::ParamPerturb
    }

    /// Whether the fault touches a single seed-chosen cell.
    pub fn single_cell(self) -> bool {
        matches!(
            self,
            FaultKind::SignFlip
                | FaultKind::NanInject
                | FaultKind::StuckValue
                | FaultKind::ParamPerturb
        )
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fault kind '{s}'"))
    }
}

/// Where a fault lands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultTarget {
    /// Chain stage id; informational when injecting into a lone module.
    pub stage: String,
    /// Output slot, or parameter name for `param_perturb`.
    pub name: String,
    /// Flat cell index; `None` lets the seed choose. Taken modulo the
    /// cell count.
    pub cell: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: FaultTarget,
    pub magnitude: f64,
    pub seed: u64,
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FaultKind::IndexShift | FaultKind::UnitScale | FaultKind::ParamPerturb => write!(
                f,
                "{}({})@{}",
                self.kind,
                fmt_real(self.magnitude),
                self.target.name
            ),
            _ => write!(f, "{}@{}", self.kind, self.target.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultError {
    #[error("{kind} magnitude {magnitude} invalid: must be {requirement}")]
    Magnitude {
        kind: FaultKind,
        magnitude: f64,
        requirement: &'static str,
    },
    #[error("{kind} target '{name}' is not {expected} of module '{module}'")]
    Target {
        kind: FaultKind,
        name: String,
        expected: &'static str,
        module: String,
    },
}

impl FaultSpec {
    pub fn new(kind: FaultKind, stage: &str, name: &str, magnitude: f64, seed: u64) -> Self {
        Self {
            kind,
            target: FaultTarget {
                stage: stage.to_string(),
                name: name.to_string(),
                cell: None,
            },
            magnitude,
            seed,
        }
    }

    pub fn at_cell(mut self, cell: usize) -> Self {
        self.target.cell = Some(cell);
        self
    }

    pub fn validate(&self) -> Result<(), FaultError> {
        let m = self.magnitude;
        let bad = |requirement| {
            Err(FaultError::Magnitude {
                kind: self.kind,
                magnitude: m,
                requirement,
            })
        };
        match self.kind {
            FaultKind::IndexShift if !(is_integral(m) && m >= 1.0) => bad("an integer >= 1"),
            FaultKind::UnitScale if !(m.is_finite() && m > 0.0 && m != 1.0) => {
                bad("finite, > 0 and != 1")
            }
            FaultKind::ParamPerturb if !(m.is_finite() && m > 0.0) => bad("finite and > 0"),
            _ => Ok(()),
        }
    }

    /// The cell this fault hits in an array of `n` cells.
    pub fn cell_for(&self, n: usize) -> usize {
        match self.target.cell {
            Some(c) => c % n,
            None => resolve_cell(self.seed, n),
        }
    }
}

/// Seed-determined cell choice, uniform over `0..n`.
pub fn resolve_cell(seed: u64, n: usize) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

/// Wraps `m` so that its runs carry `fault`. The original module is not
/// modified; wrapping an already-wrapped module stacks the faults.
pub fn inject(m: &DtmModule, fault: &FaultSpec) -> Result<DtmModule, FaultError> {
    fault.validate()?;
    let mut out = m.clone();
    if fault.kind == FaultKind::ParamPerturb {
        let Some(p) = out.params.get_mut(&fault.target.name) else {
            return Err(FaultError::Target {
                kind: fault.kind,
                name: fault.target.name.clone(),
                expected: "a parameter",
                module: m.id.clone(),
            });
        };
        let values = p.values_mut();
        let i = fault.cell_for(values.len());
        values[i] *= 1.0 + fault.magnitude;
    } else if !m.output_slots().contains(&fault.target.name) {
        return Err(FaultError::Target {
            kind: fault.kind,
            name: fault.target.name.clone(),
            expected: "an output slot",
            module: m.id.clone(),
        });
    }
    out.implementation = Implementation::Faulted {
        inner: Box::new(out.implementation),
        fault: fault.clone(),
    };
    Ok(out)
}

/// Applies an output fault in place. Masked cells are never corrupted by
/// single-cell faults.
pub(crate) fn apply_output_fault(fault: &FaultSpec, a: &mut NdArray) {
    let n = a.len();
    match fault.kind {
        FaultKind::ParamPerturb => {}
        FaultKind::IndexShift => {
            let s = (fault.magnitude as usize) % n;
            a.data_mut().rotate_right(s);
            if let Some(m) = a.mask_mut() {
                m.rotate_right(s);
            }
        }
        FaultKind::UnitScale => {
            let k = fault.magnitude;
            let masked: alloc::vec::Vec<bool> = (0..n).map(|i| a.is_masked(i)).collect();
            for (v, m) in a.data_mut().iter_mut().zip(masked) {
                if !m {
                    *v *= k;
                }
            }
        }
        FaultKind::SignFlip | FaultKind::NanInject | FaultKind::StuckValue => {
            let c = fault.cell_for(n);
            if a.is_masked(c) {
                return;
            }
            let first = a.data()[0];
            let v = &mut a.data_mut()[c];
            *v = match fault.kind {
                FaultKind::SignFlip => -*v,
                FaultKind::NanInject => f64::NAN,
                _ => first,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Phase;
    use crate::module::{params, run_checked, run_raw, Mode, Param, Params, Status};
    use crate::ArrayMap;
    use alloc::vec;
    use alloc::vec::Vec;

    fn one(slot: &str, a: NdArray) -> ArrayMap {
        let mut m = ArrayMap::new();
        m.insert(slot.to_string(), a);
        m
    }

    #[test]
    fn magnitude_rules() {
        let f = |k, m| FaultSpec::new(k, "s", "out", m, 0).validate();
        assert!(f(FaultKind::IndexShift, 1.0).is_ok());
        assert!(f(FaultKind::IndexShift, 0.0).is_err());
        assert!(f(FaultKind::IndexShift, 1.5).is_err());
        assert!(f(FaultKind::UnitScale, 1.0).is_err());
        assert!(f(FaultKind::UnitScale, -2.0).is_err());
        assert!(f(FaultKind::UnitScale, 100.0).is_ok());
        assert!(f(FaultKind::ParamPerturb, 0.0).is_err());
        assert!(f(FaultKind::ParamPerturb, 0.1).is_ok());
        assert!(f(FaultKind::SignFlip, 0.0).is_ok());
    }

    #[test]
    fn sign_flip_breaks_unit_range() {
        let m = DtmModule::new("r", "rescale_minmax", Params::new())
            .unwrap()
            .with_post("out", "in_range(0, 1)")
            .unwrap();
        let input = one("in", NdArray::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        // cell 0 rescales to 0; pick a nonzero one
        let f = FaultSpec::new(FaultKind::SignFlip, "r", "out", 0.0, 7).at_cell(2);
        let bad = inject(&m, &f).unwrap();
        let out = run_checked(&bad, &input, Mode::Observe).unwrap();
        assert_eq!(out.status, Status::PostFailed);
        assert_eq!(out.violations[0].phase, Phase::Post);
        // the original module is untouched
        assert_eq!(
            run_checked(&m, &input, Mode::Enforce).unwrap().status,
            Status::Pass
        );
    }

    #[test]
    fn index_shift_on_constant_is_silent() {
        let m = DtmModule::canonical("f", "focal_mean", params([("window", Param::Scalar(3.0))]))
            .unwrap();
        let input = one("in", NdArray::filled(vec![4, 4], 2.0).unwrap());
        let f = FaultSpec::new(FaultKind::IndexShift, "f", "out", 1.0, 1);
        let bad = inject(&m, &f).unwrap();
        assert_eq!(run_raw(&bad, &input).unwrap(), run_raw(&m, &input).unwrap());
        assert_eq!(
            run_checked(&bad, &input, Mode::Observe).unwrap().status,
            Status::Pass
        );
    }

    #[test]
    fn unit_scale_exceeds_layer_max() {
        let m = DtmModule::canonical(
            "w",
            "weighted_sum",
            params([("weights", Param::Array(vec![0.5, 0.5]))]),
        )
        .unwrap();
        let layers = NdArray::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let bad = inject(
            &m,
            &FaultSpec::new(FaultKind::UnitScale, "w", "out", 100.0, 0),
        )
        .unwrap();
        let out = run_checked(&bad, &one("layers", layers), Mode::Observe).unwrap();
        assert_eq!(out.status, Status::PostFailed);
        assert!(out.violations.iter().all(|v| v.predicate == "max_le_slot"));
    }

    #[test]
    fn param_perturb_is_visible_to_pre() {
        let m = DtmModule::canonical(
            "w",
            "weighted_sum",
            params([("weights", Param::Array(vec![0.5, 0.5]))]),
        )
        .unwrap();
        let f = FaultSpec::new(FaultKind::ParamPerturb, "w", "weights", 0.1, 3);
        let bad = inject(&m, &f).unwrap();
        let w = bad.params["weights"].values();
        assert!(w.contains(&0.55) && w.contains(&0.5));
        let layers = NdArray::from_rows(&[[1.0], [3.0]]).unwrap();
        let out = run_checked(&bad, &one("layers", layers), Mode::Observe).unwrap();
        assert_eq!(out.status, Status::PreFailed);
        assert_eq!(m.params["weights"].values(), &[0.5, 0.5]);
    }

    #[test]
    fn target_errors() {
        let m = DtmModule::new("r", "rescale_minmax", Params::new()).unwrap();
        assert!(inject(&m, &FaultSpec::new(FaultKind::SignFlip, "r", "in", 0.0, 0)).is_err());
        assert!(inject(
            &m,
            &FaultSpec::new(FaultKind::ParamPerturb, "r", "out", 0.1, 0)
        )
        .is_err());
    }

    #[test]
    fn faults_compose() {
        let m = DtmModule::new("r", "rescale_minmax", Params::new()).unwrap();
        let once = inject(
            &m,
            &FaultSpec::new(FaultKind::UnitScale, "r", "out", 2.0, 0),
        )
        .unwrap();
        let twice = inject(
            &once,
            &FaultSpec::new(FaultKind::UnitScale, "r", "out", 3.0, 0),
        )
        .unwrap();
        let input = one("in", NdArray::vector(vec![0.0, 1.0]).unwrap());
        assert_eq!(run_raw(&twice, &input).unwrap()["out"].data(), &[0.0, 6.0]);
        assert_eq!(
            twice.impl_ref(),
            "rescale_minmax+unit_scale(2)@out+unit_scale(3)@out"
        );
    }

    #[test]
    fn output_faults_are_deterministic() {
        let base = NdArray::vector((0..10).map(f64::from).collect()).unwrap();
        for kind in [
            FaultKind::SignFlip,
            FaultKind::NanInject,
            FaultKind::StuckValue,
        ] {
            let f = FaultSpec::new(kind, "s", "out", 0.0, 99);
            let mut a = base.clone();
            let mut b = base.clone();
            apply_output_fault(&f, &mut a);
            apply_output_fault(&f, &mut b);
            assert_eq!(a, b);
            let c = f.cell_for(10);
            let changed: Vec<usize> = (0..10)
                .filter(|&i| !crate::num::same_value(a.data()[i], base.data()[i]))
                .collect();
            assert!(changed.is_empty() || changed == vec![c]);
        }
        let mut s = base.clone();
        apply_output_fault(
            &FaultSpec::new(FaultKind::IndexShift, "s", "out", 3.0, 0),
            &mut s,
        );
        assert_eq!(&s.data()[..4], &[7.0, 8.0, 9.0, 0.0]);
    }
}
