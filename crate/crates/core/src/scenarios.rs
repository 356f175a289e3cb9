//! Shipped demonstration scenarios.

use alloc::vec::Vec;

use crate::array::NdArray;
use crate::dsl::Violation;
use crate::ensemble::{run_ensemble, shipped_set, EnsembleError, EnsembleReport, VariantSet};
use crate::fault::{inject, FaultKind, FaultSpec};
use crate::module::{params, run_checked, DtmModule, Mode, Param, Status};
use crate::ArrayMap;

/// A fault that every value-range contract accepts but an ensemble rejects.
#[derive(Debug, Clone, PartialEq)]
pub struct Complementarity {
    pub input: NdArray,
    /// The reference module with the faulted implementation and value-range
    /// post-conditions only.
    pub faulted: DtmModule,
    /// Two clean implementations plus `faulted`, in that order.
    pub variants: VariantSet,
    pub tol: f64,
}

/// Outcome of [`Complementarity::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityOutcome {
    pub contract_status: Status,
    pub violations: Vec<Violation>,
    pub ensemble: EnsembleReport,
}

impl ComplementarityOutcome {
    /// Contracts missed the fault and the ensemble singled out the faulted
    /// variant.
    pub fn demonstrated(&self, faulted_id: &str) -> bool {
        self.contract_status == Status::Pass
            && self.violations.is_empty()
            && self.ensemble.dissenters.iter().any(|d| d == faulted_id)
            && self.ensemble.dissenters.len() == 1
    }
}

/// Non-constant 6x6 grid with values in `[0, 1]`.
pub fn complementarity_grid() -> NdArray {
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|r| {
            (0..6)
                .map(|c| ((r * 5 + c * 3) % 13) as f64 / 12.0)
                .collect()
        })
        .collect();
    NdArray::from_rows(&rows)
        .expect("rectangular")
        .with_name("in")
}

/// `focal_mean` with window 3, faulted by `index_shift(1)`.
pub fn complementarity() -> Result<Complementarity, EnsembleError> {
    let p = params([("window", Param::Scalar(3.0))]);
    let clean = shipped_set("focal_mean", p.clone())?;
    let base = DtmModule::new("focal_mean/sliding_window+index_shift", "focal_mean", p)?
        .with_pre("in", "finite")?
        .with_post("out", "finite, in_range(0, 1)")?;
    let fault = FaultSpec::new(FaultKind::IndexShift, "focal", "out", 1.0, 0);
    let faulted = inject(&base, &fault).expect("index_shift(1) on out is valid");
    let mut members = clean.variants().to_vec();
    members.push(faulted.clone());
    Ok(Complementarity {
        input: complementarity_grid(),
        faulted,
        variants: VariantSet::new("focal_mean", members)?,
        tol: 1e-9,
    })
}

impl Complementarity {
    pub fn inputs(&self) -> ArrayMap {
        let mut m = ArrayMap::new();
        m.insert("in".into(), self.input.clone());
        m
    }

    pub fn evaluate(&self) -> Result<ComplementarityOutcome, EnsembleError> {
        let checked = run_checked(&self.faulted, &self.inputs(), Mode::Enforce)
            .expect("inputs match the module signature");
        Ok(ComplementarityOutcome {
            contract_status: checked.status,
            violations: checked.violations,
            ensemble: run_ensemble(&self.variants, &self.inputs(), self.tol)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_is_silent_to_contracts_but_not_to_the_ensemble() {
        let s = complementarity().unwrap();
        let out = s.evaluate().unwrap();
        assert!(out.demonstrated(&s.faulted.id), "{out:?}");
        assert!(out.ensemble.consensus.is_some());
    }
}
