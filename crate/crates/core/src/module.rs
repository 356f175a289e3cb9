//! Contract-annotated transformation modules and checked execution.
//!
//! A [`DtmModule`] couples a transform with parameters and three kinds of
//! contract: `pre` expressions on input slots or array parameters, `post`
//! expressions on output slots, and one optional `invariant` evaluated once
//! every slot exists. [`run_checked`] evaluates them in the order
//! pre, execute, post, invariant. In [`Mode::Enforce`] outputs are only
//! released when no contract is violated.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::NdArray;
use crate::dsl::{
    check, parse_constraints, CheckError, ConstraintExpr, ParseError, Phase, Violation,
};
use crate::fault::{apply_output_fault, FaultSpec};
use crate::num::fmt_real;
use crate::transform::{Builtin, TransformError};
use crate::ArrayMap;

/// A parameter value: a scalar or a flat list of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(f64),
    Array(Vec<f64>),
}

impl Param {
    pub fn values(&self) -> &[f64] {
        match self {
            Param::Scalar(x) => core::slice::from_ref(x),
            Param::Array(v) => v,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Param::Scalar(x) => core::slice::from_mut(x),
            Param::Array(v) => v,
        }
    }

    /// The parameter as a 1-D array, for contract checks.
    pub fn to_array(&self, name: &str) -> Option<NdArray> {
        NdArray::vector(self.values().to_vec())
            .ok()
            .map(|a| a.with_name(name))
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Scalar(x) => f.write_str(&fmt_real(*x)),
            Param::Array(v) => {
                f.write_str("[")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(&fmt_real(*x))?;
                }
                f.write_str("]")
            }
        }
    }
}

pub type Params = BTreeMap<String, Param>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Withhold outputs unless every contract holds.
    Enforce,
    /// Always deliver outputs; report violations alongside.
    Observe,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Enforce => "enforce",
            Mode::Observe => "observe",
        })
    }
}

impl core::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enforce" => Ok(Mode::Enforce),
            "observe" => Ok(Mode::Observe),
            other => Err(format!(
                "unknown mode '{other}' (expected enforce or observe)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    PreFailed,
    PostFailed,
    InvariantFailed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::PreFailed => "pre_failed",
            Status::PostFailed => "post_failed",
            Status::InvariantFailed => "invariant_failed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What actually computes a module's outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Implementation {
    Builtin(Builtin),
    /// Another implementation whose outputs (or parameters) are corrupted.
    Faulted {
        inner: Box<Implementation>,
        fault: FaultSpec,
    },
}

impl Implementation {
    /// The builtin at the bottom of any fault wrappers.
    pub fn builtin(&self) -> Builtin {
        match self {
            Implementation::Builtin(b) => *b,
            Implementation::Faulted { inner, .. } => inner.builtin(),
        }
    }

    fn execute(&self, params: &Params, inputs: &ArrayMap) -> Result<ArrayMap, TransformError> {
        match self {
            Implementation::Builtin(b) => b.apply(params, inputs),
            Implementation::Faulted { inner, fault } => {
                let mut out = inner.execute(params, inputs)?;
                if let Some(a) = out.get_mut(&fault.target.name) {
                    apply_output_fault(fault, a);
                }
                Ok(out)
            }
        }
    }
}

impl fmt::Display for Implementation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Implementation::Builtin(b) => write!(f, "{b}"),
            Implementation::Faulted { inner, fault } => write!(f, "{inner}+{fault}"),
        }
    }
}

/// A contract expression attached to one slot or parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotContract {
    pub target: String,
    pub expr: ConstraintExpr,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModuleError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("contract for '{target}': {source}")]
    Parse { target: String, source: ParseError },
    #[error("{phase} contract targets '{target}', which is not {allowed}")]
    UnknownTarget {
        phase: Phase,
        target: String,
        allowed: &'static str,
    },
    #[error("{phase} contract references '{slot}', which is not visible in that phase")]
    UnknownReference { phase: Phase, slot: String },
    #[error("unexpected parameter '{0}'")]
    UnexpectedParam(String),
}

/// A named transform with parameters and contracts.
#[derive(Debug, Clone, PartialEq)]
pub struct DtmModule {
    pub id: String,
    pub params: Params,
    inputs: Vec<String>,
    outputs: Vec<String>,
    pub pre: Vec<SlotContract>,
    pub post: Vec<SlotContract>,
    pub invariant: Option<ConstraintExpr>,
    pub implementation: Implementation,
}

impl DtmModule {
    /// A module without contracts. `impl_ref` is a transform name such as
    /// `focal_mean` or `focal_mean/summed_area_table`.
    pub fn new(id: impl Into<String>, impl_ref: &str, params: Params) -> Result<Self, ModuleError> {
        let builtin = Builtin::resolve(impl_ref)?;
        Self::from_builtin(id, builtin, params)
    }

    pub fn from_builtin(
        id: impl Into<String>,
        builtin: Builtin,
        params: Params,
    ) -> Result<Self, ModuleError> {
        let sig = builtin.signature();
        if let Some(extra) = params
            .keys()
            .find(|k| !sig.params.iter().any(|(p, _)| p == k))
        {
            return Err(ModuleError::UnexpectedParam(extra.clone()));
        }
        builtin.validate_params(&params)?;
        Ok(Self {
            id: id.into(),
            params,
            inputs: sig.inputs.iter().map(|s| s.to_string()).collect(),
            outputs: sig.outputs.iter().map(|s| s.to_string()).collect(),
            pre: Vec::new(),
            post: Vec::new(),
            invariant: None,
            implementation: Implementation::Builtin(builtin),
        })
    }

    /// A module carrying the shipped contracts of its transform.
    pub fn canonical(
        id: impl Into<String>,
        impl_ref: &str,
        params: Params,
    ) -> Result<Self, ModuleError> {
        let m = Self::new(id, impl_ref, params)?;
        let c = canonical_contracts(m.implementation.builtin());
        m.with_contracts(c.pre, c.post, c.invariant)
    }

    /// Adds contracts given as constraint-language text.
    pub fn with_contracts(
        mut self,
        pre: &[(&str, &str)],
        post: &[(&str, &str)],
        invariant: Option<&str>,
    ) -> Result<Self, ModuleError> {
        for (t, e) in pre {
            self = self.with_pre(t, e)?;
        }
        for (t, e) in post {
            self = self.with_post(t, e)?;
        }
        if let Some(e) = invariant {
            self = self.with_invariant(e)?;
        }
        Ok(self)
    }

    pub fn with_pre(mut self, target: &str, text: &str) -> Result<Self, ModuleError> {
        let expr = parse_for(target, text)?;
        if !self.inputs.iter().any(|s| s == target) && !self.params.contains_key(target) {
            return Err(ModuleError::UnknownTarget {
                phase: Phase::Pre,
                target: target.to_string(),
                allowed: "an input slot or parameter",
            });
        }
        self.check_refs(&expr, Phase::Pre)?;
        self.pre.push(SlotContract {
            target: target.to_string(),
            expr,
        });
        Ok(self)
    }

    pub fn with_post(mut self, target: &str, text: &str) -> Result<Self, ModuleError> {
        let expr = parse_for(target, text)?;
        if !self.outputs.iter().any(|s| s == target) {
            return Err(ModuleError::UnknownTarget {
                phase: Phase::Post,
                target: target.to_string(),
                allowed: "an output slot",
            });
        }
        self.check_refs(&expr, Phase::Post)?;
        self.post.push(SlotContract {
            target: target.to_string(),
            expr,
        });
        Ok(self)
    }

    pub fn with_invariant(mut self, text: &str) -> Result<Self, ModuleError> {
        let expr = parse_for("invariant", text)?;
        self.check_refs(&expr, Phase::Invariant)?;
        self.invariant = Some(match self.invariant.take() {
            Some(prev) => prev.and(&expr),
            None => expr,
        });
        Ok(self)
    }

    fn check_refs(&self, expr: &ConstraintExpr, phase: Phase) -> Result<(), ModuleError> {
        for slot in expr.slot_refs() {
            let visible = self.inputs.iter().any(|s| s == slot)
                || self.params.contains_key(slot)
                || (phase != Phase::Pre && self.outputs.iter().any(|s| s == slot));
            if !visible {
                return Err(ModuleError::UnknownReference {
                    phase,
                    slot: slot.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn input_slots(&self) -> &[String] {
        &self.inputs
    }

    pub fn output_slots(&self) -> &[String] {
        &self.outputs
    }

    /// Implementation reference, including any fault wrappers.
    pub fn impl_ref(&self) -> String {
        self.implementation.to_string()
    }

    /// All contracts as canonical strings, e.g. `pre in: finite, nonempty`.
    pub fn contract_text(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.pre {
            out.push(format!("pre {}: {}", c.target, c.expr));
        }
        for c in &self.post {
            out.push(format!("post {}: {}", c.target, c.expr));
        }
        if let Some(e) = &self.invariant {
            out.push(format!("invariant: {e}"));
        }
        out
    }

    /// Every contract expression, for round-trip and listing purposes.
    pub fn contracts(&self) -> impl Iterator<Item = &ConstraintExpr> {
        self.pre
            .iter()
            .chain(&self.post)
            .map(|c| &c.expr)
            .chain(self.invariant.as_ref())
    }

    /// Same module with every contract removed.
    pub fn without_contracts(&self) -> Self {
        let mut m = self.clone();
        m.pre.clear();
        m.post.clear();
        m.invariant = None;
        m
    }
}

fn parse_for(target: &str, text: &str) -> Result<ConstraintExpr, ModuleError> {
    parse_constraints(text).map_err(|source| ModuleError::Parse {
        target: target.to_string(),
        source,
    })
}

/// Shipped contracts of one builtin, as constraint-language text.
pub struct CanonicalContracts {
    pub pre: &'static [(&'static str, &'static str)],
    pub post: &'static [(&'static str, &'static str)],
    pub invariant: Option<&'static str>,
}

pub fn canonical_contracts(b: Builtin) -> CanonicalContracts {
    match b {
        Builtin::RescaleMinmax => CanonicalContracts {
            pre: &[("in", "finite, nonempty")],
            post: &[("out", "in_range(0, 1)")],
            invariant: None,
        },
        Builtin::FocalMean(_) => CanonicalContracts {
            pre: &[("in", "finite"), ("window", "integer_valued, positive")],
            post: &[("out", "finite")],
            invariant: Some("same_shape(in, out)"),
        },
        Builtin::WeightedSum(_) => CanonicalContracts {
            pre: &[("weights", "sums_to(1, 0, 1e-9), nonnegative")],
            post: &[("out", "min_ge_slot(layers), max_le_slot(layers)")],
            invariant: None,
        },
        Builtin::Reclassify => CanonicalContracts {
            pre: &[("breaks", "sorted_ascending(0)")],
            post: &[("out", "integer_valued")],
            invariant: None,
        },
        Builtin::ThresholdMask => CanonicalContracts {
            pre: &[],
            post: &[("out", "binary")],
            invariant: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DtmError {
    #[error("module '{module}': missing input slot '{slot}'")]
    MissingSlot { module: String, slot: String },
    #[error("module '{module}': unexpected input slot '{slot}'")]
    UnexpectedSlot { module: String, slot: String },
    #[error("module '{module}': {source}")]
    Transform {
        module: String,
        source: TransformError,
    },
    #[error("module '{module}': {source}")]
    Check { module: String, source: CheckError },
}

/// Runs the transform without any contract check.
pub fn run_raw(m: &DtmModule, inputs: &ArrayMap) -> Result<ArrayMap, DtmError> {
    for slot in &m.inputs {
        if !inputs.contains_key(slot) {
            return Err(DtmError::MissingSlot {
                module: m.id.clone(),
                slot: slot.clone(),
            });
        }
    }
    if let Some(extra) = inputs.keys().find(|k| !m.inputs.contains(k)) {
        return Err(DtmError::UnexpectedSlot {
            module: m.id.clone(),
            slot: extra.clone(),
        });
    }
    m.implementation
        .execute(&m.params, inputs)
        .map_err(|source| DtmError::Transform {
            module: m.id.clone(),
            source,
        })
}

/// Result of a checked run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub status: Status,
    /// Present when `status == Pass` or `mode == Observe`, except when the
    /// transform itself failed after a failed pre-condition.
    pub outputs: Option<ArrayMap>,
    pub violations: Vec<Violation>,
    pub mode: Mode,
}

/// Checks pre-conditions, runs the transform, then checks post-conditions
/// and the invariant.
///
/// Array parameters are visible to contracts under their own names. The
/// invariant's subject is the first output slot; its relational predicates
/// may name any slot or parameter. In enforce mode a pre-condition failure
/// skips execution; in observe mode the transform still runs, and if it then
/// fails the outcome is the pre-condition failure without outputs.
pub fn run_checked(m: &DtmModule, inputs: &ArrayMap, mode: Mode) -> Result<CheckOutcome, DtmError> {
    let mut context = ArrayMap::new();
    for (name, p) in &m.params {
        if let Some(a) = p.to_array(name) {
            context.insert(name.clone(), a);
        }
    }
    for (slot, a) in inputs {
        context.insert(slot.clone(), a.clone().with_name(slot.clone()));
    }
    let check_err = |source| DtmError::Check {
        module: m.id.clone(),
        source,
    };
    let mut violations = Vec::new();
    for c in &m.pre {
        if let Some(subject) = context.get(&c.target) {
            violations.extend(check(&c.expr, subject, &context, Phase::Pre).map_err(check_err)?);
        } else {
            return Err(DtmError::MissingSlot {
                module: m.id.clone(),
                slot: c.target.clone(),
            });
        }
    }
    let pre_failed = !violations.is_empty();
    if pre_failed && mode == Mode::Enforce {
        return Ok(CheckOutcome {
            status: Status::PreFailed,
            outputs: None,
            violations,
            mode,
        });
    }
    let outputs = match run_raw(m, inputs) {
        Ok(o) => o,
        // The pre-condition already explains why the transform could not run.
        Err(DtmError::Transform { .. }) if pre_failed => {
            return Ok(CheckOutcome {
                status: Status::PreFailed,
                outputs: None,
                violations,
                mode,
            })
        }
        Err(e) => return Err(e),
    };
    for (slot, a) in &outputs {
        context.insert(slot.clone(), a.clone().with_name(slot.clone()));
    }
    let mut post_failed = false;
    for c in &m.post {
        let subject = &context[&c.target];
        let v = check(&c.expr, subject, &context, Phase::Post).map_err(check_err)?;
        post_failed |= !v.is_empty();
        violations.extend(v);
    }
    let mut inv_failed = false;
    if let (Some(expr), Some(first)) = (&m.invariant, m.outputs.first()) {
        let v = check(expr, &context[first], &context, Phase::Invariant).map_err(check_err)?;
        inv_failed = !v.is_empty();
        violations.extend(v);
    }
    let status = if pre_failed {
        Status::PreFailed
    } else if post_failed {
        Status::PostFailed
    } else if inv_failed {
        Status::InvariantFailed
    } else {
        Status::Pass
    };
    let deliver = status == Status::Pass || mode == Mode::Observe;
    Ok(CheckOutcome {
        status,
        outputs: deliver.then_some(outputs),
        violations,
        mode,
    })
}

/// Convenience for building parameter maps.
pub fn params<const N: usize>(items: [(&str, Param); N]) -> Params {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one(slot: &str, a: NdArray) -> ArrayMap {
        let mut m = ArrayMap::new();
        m.insert(slot.to_string(), a);
        m
    }

    #[test]
    fn bad_weights_fail_pre_and_withhold() {
        let m = DtmModule::new(
            "ws",
            "weighted_sum",
            params([("weights", Param::Array(vec![0.7, 0.6]))]),
        )
        .unwrap()
        .with_pre("weights", "sums_to(1.0, axis=0, tol=1e-9)")
        .unwrap();
        let layers = NdArray::from_rows(&[[1.0], [2.0]]).unwrap();
        let out = run_checked(&m, &one("layers", layers.clone()), Mode::Enforce).unwrap();
        assert_eq!(out.status, Status::PreFailed);
        assert_eq!(out.violations.len(), 1);
        assert!(out.outputs.is_none());
        let obs = run_checked(&m, &one("layers", layers), Mode::Observe).unwrap();
        assert_eq!(obs.status, Status::PreFailed);
        assert!(obs.outputs.is_some());
    }

    #[test]
    fn rescale_passes_range_post() {
        let m = DtmModule::new("r", "rescale_minmax", Params::new())
            .unwrap()
            .with_post("out", "in_range(0,1)")
            .unwrap();
        let out = run_checked(
            &m,
            &one("in", NdArray::vector(vec![1.0, 2.0, 3.0]).unwrap()),
            Mode::Enforce,
        )
        .unwrap();
        assert_eq!(out.status, Status::Pass);
        assert_eq!(out.outputs.unwrap()["out"].data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn post_failure_withholds_in_enforce() {
        let m = DtmModule::new("t", "threshold_mask", params([("t", Param::Scalar(0.5))]))
            .unwrap()
            .with_post("out", "nonempty, positive")
            .unwrap();
        let out = run_checked(
            &m,
            &one("in", NdArray::vector(vec![0.1, 0.9]).unwrap()),
            Mode::Enforce,
        )
        .unwrap();
        assert_eq!(out.status, Status::PostFailed);
        assert!(out.outputs.is_none());
        assert_eq!(out.violations[0].phase, Phase::Post);
        assert_eq!(out.violations[0].slot, "out");
    }

    #[test]
    fn invariant_sees_all_slots() {
        let m = DtmModule::canonical("f", "focal_mean", params([("window", Param::Scalar(3.0))]))
            .unwrap();
        assert!(m.invariant.is_some());
        let out = run_checked(
            &m,
            &one("in", NdArray::filled(vec![3, 3], 2.0).unwrap()),
            Mode::Enforce,
        )
        .unwrap();
        assert_eq!(out.status, Status::Pass);
    }

    #[test]
    fn contract_targets_are_validated() {
        let m = DtmModule::new("r", "rescale_minmax", Params::new()).unwrap();
        assert!(matches!(
            m.clone().with_pre("out", "finite"),
            Err(ModuleError::UnknownTarget { .. })
        ));
        assert!(matches!(
            m.clone().with_post("in", "finite"),
            Err(ModuleError::UnknownTarget { .. })
        ));
        assert!(matches!(
            m.clone().with_pre("in", "same_shape(in, out)"),
            Err(ModuleError::UnknownReference { .. })
        ));
        assert!(matches!(
            m.clone().with_invariant("same_shape(in, nope)"),
            Err(ModuleError::UnknownReference { .. })
        ));
        assert!(matches!(
            m.with_post("out", "bogus"),
            Err(ModuleError::Parse { .. })
        ));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            DtmModule::new("x", "nope", Params::new()),
            Err(ModuleError::Transform(TransformError::Unknown(_)))
        ));
        assert!(matches!(
            DtmModule::new("x", "focal_mean", Params::new()),
            Err(ModuleError::Transform(TransformError::MissingParam(
                "window"
            )))
        ));
        assert!(matches!(
            DtmModule::new("x", "focal_mean", params([("window", Param::Scalar(4.0))])),
            Err(ModuleError::Transform(TransformError::BadWindow(_)))
        ));
        assert!(matches!(
            DtmModule::new("x", "rescale_minmax", params([("k", Param::Scalar(1.0))])),
            Err(ModuleError::UnexpectedParam(_))
        ));
    }

    #[test]
    fn missing_and_extra_slots() {
        let m = DtmModule::new("r", "rescale_minmax", Params::new()).unwrap();
        assert!(matches!(
            run_raw(&m, &ArrayMap::new()),
            Err(DtmError::MissingSlot { .. })
        ));
        let mut inputs = one("in", NdArray::vector(vec![1.0]).unwrap());
        inputs.insert("other".into(), NdArray::vector(vec![1.0]).unwrap());
        assert!(matches!(
            run_raw(&m, &inputs),
            Err(DtmError::UnexpectedSlot { .. })
        ));
    }

    #[test]
    fn contract_text_is_canonical() {
        let m = DtmModule::canonical(
            "w",
            "weighted_sum",
            params([("weights", Param::Array(vec![0.5, 0.5]))]),
        )
        .unwrap();
        assert_eq!(
            m.contract_text(),
            vec![
                "pre weights: sums_to(1, 0, 1e-9), nonnegative".to_string(),
                "post out: min_ge_slot(layers), max_le_slot(layers)".to_string(),
            ]
        );
    }

    #[test]
    fn observe_mode_transform_failure_after_pre() {
        let mut m =
            DtmModule::canonical("f", "focal_mean", params([("window", Param::Scalar(3.0))]))
                .unwrap();
        m.params.insert("window".into(), Param::Scalar(2.5));
        let inputs: ArrayMap =
            [("in".to_string(), NdArray::filled(vec![3, 3], 1.0).unwrap())].into();
        assert!(run_raw(&m, &inputs).is_err());
        let out = run_checked(&m, &inputs, Mode::Observe).unwrap();
        assert_eq!(out.status, Status::PreFailed);
        assert!(out.outputs.is_none());
        assert_eq!(out.violations.len(), 1);
    }
}
