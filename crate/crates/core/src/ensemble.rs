//! Design-diversity ensembles.
//!
//! A [`VariantSet`] groups modules that claim to compute the same thing.
//! [`run_ensemble`] runs each one unchecked, measures pairwise agreement and
//! looks for a strict-majority group of variants that agree within a
//! tolerance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::array::{compare, NdArray, DEFAULT_REL_FLOOR};
use crate::module::{run_raw, DtmModule, ModuleError, Params};
use crate::transform::Builtin;
use crate::ArrayMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("a variant set needs at least 2 variants, got {0}")]
    TooFew(usize),
    #[error("duplicate variant id '{0}'")]
    DuplicateId(String),
    #[error("variant '{variant}' has a different {what} than '{first}'")]
    SignatureMismatch {
        variant: String,
        first: String,
        what: &'static str,
    },
    #[error("input slot '{0}' missing")]
    MissingInput(String),
    #[error("unexpected input slot '{0}'")]
    UnexpectedInput(String),
    #[error("tolerance must be a finite number >= 0, got {0}")]
    Tolerance(f64),
    #[error("unknown variant set '{0}'")]
    UnknownSet(String),
    #[error(transparent)]
    Module(#[from] ModuleError),
}

/// Modules that should be interchangeable.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSet {
    abstract_id: String,
    variants: Vec<DtmModule>,
}

impl VariantSet {
    pub fn new(
        abstract_id: impl Into<String>,
        variants: Vec<DtmModule>,
    ) -> Result<Self, EnsembleError> {
        if variants.len() < 2 {
            return Err(EnsembleError::TooFew(variants.len()));
        }
        let first = &variants[0];
        for (i, v) in variants.iter().enumerate() {
            if variants[..i].iter().any(|u| u.id == v.id) {
                return Err(EnsembleError::DuplicateId(v.id.clone()));
            }
            let mismatch = |what| EnsembleError::SignatureMismatch {
                variant: v.id.clone(),
                first: first.id.clone(),
                what,
            };
            if v.input_slots() != first.input_slots() {
                return Err(mismatch("input slot list"));
            }
            if v.output_slots() != first.output_slots() {
                return Err(mismatch("output slot list"));
            }
            if !v.params.keys().eq(first.params.keys()) {
                return Err(mismatch("parameter schema"));
            }
        }
        Ok(Self {
            abstract_id: abstract_id.into(),
            variants,
        })
    }

    pub fn abstract_id(&self) -> &str {
        &self.abstract_id
    }

    pub fn variants(&self) -> &[DtmModule] {
        &self.variants
    }

    pub fn ids(&self) -> Vec<String> {
        self.variants.iter().map(|v| v.id.clone()).collect()
    }

    /// Replaces the variant at `index`, keeping the signature rules.
    pub fn replace(&self, index: usize, module: DtmModule) -> Result<Self, EnsembleError> {
        let mut variants = self.variants.clone();
        variants[index] = module;
        Self::new(self.abstract_id.clone(), variants)
    }

    /// The same set with variants reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, EnsembleError> {
        Self::new(
            self.abstract_id.clone(),
            order.iter().map(|&i| self.variants[i].clone()).collect(),
        )
    }
}

/// Names of the shipped variant sets.
pub const SHIPPED_SETS: &[&str] = &["focal_mean", "weighted_sum"];

/// A shipped variant set, each member carrying the canonical contracts of
/// its transform. Variant ids are the qualified transform names.
pub fn shipped_set(name: &str, params: Params) -> Result<VariantSet, EnsembleError> {
    if !SHIPPED_SETS.contains(&name) {
        return Err(EnsembleError::UnknownSet(name.to_string()));
    }
    let first = Builtin::resolve(name).map_err(ModuleError::from)?;
    let mut builtins = vec![first];
    builtins.extend(first.alternates());
    let variants = builtins
        .into_iter()
        .map(|b| DtmModule::canonical(b.qualified_name(), b.qualified_name(), params.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    VariantSet::new(name, variants)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub abstract_id: String,
    pub variant_ids: Vec<String>,
    /// `agreement[i][j]`: largest absolute cell difference over all output
    /// slots. Infinite when the outputs differ in shape or mask, or when
    /// either variant failed.
    pub agreement: Vec<Vec<f64>>,
    /// Largest relative cell difference, informational only.
    pub relative: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub consensus_members: Vec<String>,
    pub consensus: Option<ArrayMap>,
    pub dissenters: Vec<String>,
    /// Variant id to failure message.
    pub failures: BTreeMap<String, String>,
    pub unanimous: bool,
}

impl EnsembleReport {
    pub fn has_consensus(&self) -> bool {
        self.consensus.is_some()
    }

    pub fn agreement_between(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.variant_ids.iter().position(|v| v == a)?;
        let j = self.variant_ids.iter().position(|v| v == b)?;
        Some(self.agreement[i][j])
    }
}

fn pair_diff(a: &ArrayMap, b: &ArrayMap) -> (f64, f64) {
    let mut abs: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for (slot, x) in a {
        let Some(y) = b.get(slot) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        match compare(x, y, DEFAULT_REL_FLOOR) {
            Ok(d) if d.mask_mismatch_count == 0 => {
                abs = abs.max(d.max_abs_diff);
                rel = rel.max(d.max_rel_diff);
            }
            _ => return (f64::INFINITY, f64::INFINITY),
        }
    }
    (abs, rel)
}

/// Runs every variant on `inputs` and votes.
pub fn run_ensemble(
    vs: &VariantSet,
    inputs: &ArrayMap,
    tol: f64,
) -> Result<EnsembleReport, EnsembleError> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(EnsembleError::Tolerance(tol));
    }
    let slots = vs.variants[0].input_slots();
    if let Some(s) = slots.iter().find(|s| !inputs.contains_key(*s)) {
        return Err(EnsembleError::MissingInput(s.clone()));
    }
    if let Some(s) = inputs.keys().find(|k| !slots.contains(k)) {
        return Err(EnsembleError::UnexpectedInput(s.clone()));
    }
    let k = vs.variants.len();
    let results: Vec<Result<ArrayMap, String>> = vs
        .variants
        .iter()
        .map(|v| run_raw(v, inputs).map_err(|e| e.to_string()))
        .collect();
    let mut agreement = vec![vec![0.0; k]; k];
    let mut relative = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (a, r) = match (&results[i], &results[j]) {
                (Ok(x), Ok(y)) => pair_diff(x, y),
                _ => (f64::INFINITY, f64::INFINITY),
            };
            agreement[i][j] = a;
            agreement[j][i] = a;
            relative[i][j] = r;
            relative[j][i] = r;
        }
    }
    let failures: BTreeMap<String, String> = results
        .iter()
        .zip(&vs.variants)
        .filter_map(|(r, v)| r.as_ref().err().map(|e| (v.id.clone(), e.clone())))
        .collect();
    let ok = |i: usize| results[i].is_ok();
    let agrees = |i: usize, j: usize| agreement[i][j] <= tol;

    let ids: Vec<&str> = vs.variants.iter().map(|v| v.id.as_str()).collect();
    let best = largest_group(k, &ids, |i, j| ok(i) && ok(j) && agrees(i, j), ok);
    let members: Vec<usize> = (0..k).filter(|i| best & (1u64 << i) != 0).collect();
    let has_consensus = 2 * members.len() > k;
    let (consensus, consensus_members, dissenters) = if has_consensus {
        let outs: Vec<&ArrayMap> = members
            .iter()
            .map(|&i| results[i].as_ref().expect("members succeeded"))
            .collect();
        (
            Some(median(&outs)),
            members.iter().map(|&i| ids[i].to_string()).collect(),
            (0..k)
                .filter(|i| !members.contains(i))
                .map(|i| ids[i].to_string())
                .collect(),
        )
    } else {
        (
            None,
            Vec::new(),
            ids.iter().map(|s| s.to_string()).collect(),
        )
    };
    let unanimous = has_consensus && members.len() == k;
    Ok(EnsembleReport {
        abstract_id: vs.abstract_id.clone(),
        variant_ids: ids.iter().map(|s| s.to_string()).collect(),
        agreement,
        relative,
        tolerance: tol,
        consensus_members,
        consensus,
        dissenters,
        failures,
        unanimous,
    })
}

/// Bitmask of the largest set of usable variants that pairwise agree. Among
/// equally large sets the one whose sorted id list is lexicographically
/// smallest wins, so the result does not depend on variant order.
fn largest_group(
    k: usize,
    ids: &[&str],
    agree: impl Fn(usize, usize) -> bool,
    usable: impl Fn(usize) -> bool,
) -> u64 {
    assert!(k <= 20, "variant sets are limited to 20 members");
    let sorted_ids = |mask: u64| {
        let mut v: Vec<&str> = (0..k)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| ids[i])
            .collect();
        v.sort_unstable();
        v
    };
    let mut best = 0u64;
    let mut best_ids: Vec<&str> = Vec::new();
    for mask in 1u64..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if members.len() < best_ids.len() {
            continue;
        }
        if !members.iter().all(|&i| usable(i)) {
            continue;
        }
        let clique = members
            .iter()
            .enumerate()
            .all(|(n, &i)| members[n + 1..].iter().all(|&j| agree(i, j)));
        if !clique {
            continue;
        }
        let cand = sorted_ids(mask);
        if cand.len() > best_ids.len() || cand < best_ids {
            best = mask;
            best_ids = cand;
        }
    }
    best
}

/// Cellwise median across equally shaped output maps. With an even count the
/// midpoint of the two central values is used.
fn median(outs: &[&ArrayMap]) -> ArrayMap {
    let mut result = ArrayMap::new();
    for (slot, first) in outs[0] {
        let n = first.len();
        let mut data = Vec::with_capacity(n);
        let mut column = Vec::with_capacity(outs.len());
        for c in 0..n {
            if first.is_masked(c) {
                data.push(0.0);
                continue;
            }
            column.clear();
            column.extend(outs.iter().map(|o| o[slot].data()[c]));
            column.sort_by(f64::total_cmp);
            let m = column.len();
            let v = if m % 2 == 1 {
                column[m / 2]
            } else {
                let (a, b) = (column[m / 2 - 1], column[m / 2]);
                a + (b - a) / 2.0
            };
            data.push(v);
        }
        let arr: NdArray = first.with_data(data).expect("same length");
        result.insert(slot.clone(), arr);
    }
    result
}

/// Formats a matrix entry for reports; infinite entries become `inf`.
pub fn format_entry(x: f64) -> String {
    if x.is_infinite() {
        "inf".to_string()
    } else {
        format!("{x:.3e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{inject, FaultKind, FaultSpec};
    use crate::module::{params, Param};

    fn focal_set() -> VariantSet {
        shipped_set("focal_mean", params([("window", Param::Scalar(3.0))])).unwrap()
    }

    fn grid() -> ArrayMap {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|r| {
                (0..5)
                    .map(|c| ((r * 7 + c * 3) % 11) as f64 / 10.0)
                    .collect()
            })
            .collect();
        let mut m = ArrayMap::new();
        m.insert("in".into(), NdArray::from_rows(&rows).unwrap());
        m
    }

    fn identical(n: usize) -> VariantSet {
        let vs = (0..n)
            .map(|i| {
                DtmModule::new(
                    format!("v{i}"),
                    "focal_mean",
                    params([("window", Param::Scalar(3.0))]),
                )
                .unwrap()
            })
            .collect();
        VariantSet::new("focal_mean", vs).unwrap()
    }

    #[test]
    fn identical_variants_are_unanimous() {
        let r = run_ensemble(&identical(3), &grid(), 1e-9).unwrap();
        assert!(r.unanimous);
        assert!(r.dissenters.is_empty());
        assert_eq!(r.consensus_members, ["v0", "v1", "v2"]);
        for i in 0..3 {
            assert_eq!(r.agreement[i][i], 0.0);
        }
    }

    #[test]
    fn scaled_variant_dissents() {
        let base = identical(3);
        let bad = inject(
            &base.variants()[2],
            &FaultSpec::new(FaultKind::UnitScale, "v2", "out", 100.0, 0),
        )
        .unwrap();
        let vs = base.replace(2, bad).unwrap();
        let r = run_ensemble(&vs, &grid(), 1e-9).unwrap();
        assert!(!r.unanimous);
        assert_eq!(r.dissenters, ["v2"]);
        assert_eq!(r.consensus_members, ["v0", "v1"]);
        let plain = run_raw(&base.variants()[0], &grid()).unwrap();
        assert_eq!(r.consensus.unwrap(), plain);
    }

    #[test]
    fn pair_disagreement_has_no_consensus() {
        let base = identical(2);
        let bad = inject(
            &base.variants()[1],
            &FaultSpec::new(FaultKind::UnitScale, "v1", "out", 2.0, 0),
        )
        .unwrap();
        let r = run_ensemble(&base.replace(1, bad).unwrap(), &grid(), 1e-9).unwrap();
        assert!(r.consensus.is_none());
        assert!(!r.unanimous);
        assert_eq!(r.dissenters, ["v0", "v1"]);
    }

    #[test]
    fn shipped_focal_pair_agrees() {
        let r = run_ensemble(&focal_set(), &grid(), 1e-9).unwrap();
        assert!(r.unanimous, "{:?}", r.agreement);
        assert_eq!(
            r.variant_ids,
            ["focal_mean/sliding_window", "focal_mean/summed_area_table"]
        );
    }

    #[test]
    fn weighted_sum_pair_exact() {
        let vs = shipped_set(
            "weighted_sum",
            params([("weights", Param::Array(vec![0.5, 0.5]))]),
        )
        .unwrap();
        let mut inputs = ArrayMap::new();
        inputs.insert(
            "layers".into(),
            NdArray::from_rows(&[[2.0], [4.0]]).unwrap(),
        );
        for v in vs.variants() {
            assert_eq!(run_raw(v, &inputs).unwrap()["out"].data(), &[3.0]);
        }
        assert!(run_ensemble(&vs, &inputs, 0.0).unwrap().unanimous);
    }

    #[test]
    fn construction_rules() {
        let one = identical(2).variants()[..1].to_vec();
        assert_eq!(VariantSet::new("x", one), Err(EnsembleError::TooFew(1)));
        let dup = vec![identical(2).variants()[0].clone(); 2];
        assert!(matches!(
            VariantSet::new("x", dup),
            Err(EnsembleError::DuplicateId(_))
        ));
        let mixed = vec![
            identical(2).variants()[0].clone(),
            DtmModule::new("r", "rescale_minmax", Params::new()).unwrap(),
        ];
        assert!(matches!(
            VariantSet::new("x", mixed),
            Err(EnsembleError::SignatureMismatch { .. })
        ));
        assert!(matches!(
            shipped_set("nope", Params::new()),
            Err(EnsembleError::UnknownSet(_))
        ));
        assert!(matches!(
            run_ensemble(&identical(2), &grid(), -1.0),
            Err(EnsembleError::Tolerance(_))
        ));
    }

    #[test]
    fn failing_variant_dissents() {
        let base = identical(3);
        let mut inputs = ArrayMap::new();
        inputs.insert("in".into(), NdArray::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let r = run_ensemble(&base, &inputs, 1e-9).unwrap();
        assert_eq!(r.failures.len(), 3);
        assert!(r.consensus.is_none());
        assert!(r.agreement[0][1].is_infinite());
    }

    #[test]
    fn even_median_is_midpoint() {
        let mut a = ArrayMap::new();
        a.insert("out".into(), NdArray::vector(vec![1.0]).unwrap());
        let mut b = ArrayMap::new();
        b.insert("out".into(), NdArray::vector(vec![2.0]).unwrap());
        assert_eq!(median(&[&a, &b])["out"].data(), &[1.5]);
    }
}
