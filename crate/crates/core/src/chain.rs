//! Acyclic chains of modules.
//!
//! A chain names its external sources, lists stages in a valid execution
//! order and designates sink outputs. Each stage binds every input slot of
//! its module either to one reference or to a list of references that are
//! stacked along a new leading axis. A reference is a source name or
//! `stage.slot`, and may only point at strictly earlier stages.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::NdArray;
use crate::dsl::Violation;
use crate::module::{run_checked, DtmModule, Mode, Status};
use crate::ArrayMap;

/// A reference to a source array or to one stage output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ref {
    Source(String),
    Output { stage: String, slot: String },
}

impl Ref {
    /// Parses `name` or `stage.slot`.
    pub fn parse(text: &str) -> Ref {
        match text.split_once('.') {
            Some((stage, slot)) => Ref::Output {
                stage: stage.to_string(),
                slot: slot.to_string(),
            },
            None => Ref::Source(text.to_string()),
        }
    }
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Source(s) => f.write_str(s),
            Ref::Output { stage, slot } => write!(f, "{stage}.{slot}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    One(Ref),
    /// Stacked along a new leading axis, in list order.
    Stack(Vec<Ref>),
}

impl Binding {
    pub fn refs(&self) -> &[Ref] {
        match self {
            Binding::One(r) => core::slice::from_ref(r),
            Binding::Stack(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub id: String,
    pub module: DtmModule,
    pub bindings: BTreeMap<String, Binding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub sources: Vec<String>,
    pub stages: Vec<Stage>,
    /// `(stage id, output slot)` pairs.
    pub sinks: Vec<(String, String)>,
}

/// A static problem found by [`validate_chain`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: Option<String>,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "stage {s}: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

/// Lists every structural problem; an empty list means the chain is valid.
pub fn validate_chain(chain: &Chain) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |stage: Option<&str>, reason: String| {
        out.push(Diagnostic {
            stage: stage.map(str::to_string),
            reason,
        })
    };
    let mut sources = BTreeSet::new();
    for s in &chain.sources {
        if !sources.insert(s.as_str()) {
            diag(None, format!("duplicate source name {s}"));
        }
        if s.contains('.') {
            diag(None, format!("source name {s} must not contain '.'"));
        }
    }
    let position: BTreeMap<&str, usize> = chain
        .stages
        .iter()
        .enumerate()
        .rev()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut seen = BTreeSet::new();
    for (i, stage) in chain.stages.iter().enumerate() {
        let id = stage.id.as_str();
        if !seen.insert(id) {
            diag(Some(id), format!("duplicate stage id {id}"));
        }
        if sources.contains(id) {
            diag(Some(id), format!("stage id {id} shadows a source name"));
        }
        for slot in stage.module.input_slots() {
            if !stage.bindings.contains_key(slot) {
                diag(Some(id), format!("input slot {slot} is unbound"));
            }
        }
        for (slot, binding) in &stage.bindings {
            if !stage.module.input_slots().contains(slot) {
                diag(Some(id), format!("binding for unknown input slot {slot}"));
            }
            if binding.refs().is_empty() {
                diag(Some(id), format!("empty stack binding for slot {slot}"));
            }
            for r in binding.refs() {
                match r {
                    Ref::Source(name) => {
                        if !sources.contains(name.as_str()) {
                            diag(Some(id), format!("unknown source {name}"));
                        }
                    }
                    Ref::Output {
                        stage: other,
                        slot: out,
                    } => match position.get(other.as_str()) {
                        None => diag(Some(id), format!("unknown stage {other}")),
                        Some(&j) if j == i => diag(Some(id), format!("self reference {id}←{id}")),
                        Some(&j) if j > i => {
                            diag(Some(id), format!("forward reference {id}←{other}"))
                        }
                        Some(&j) => {
                            if !chain.stages[j].module.output_slots().contains(out) {
                                diag(Some(id), format!("stage {other} has no output slot {out}"));
                            }
                        }
                    },
                }
            }
        }
    }
    for (stage, slot) in &chain.sinks {
        match position.get(stage.as_str()) {
            None => diag(None, format!("sink references unknown stage {stage}")),
            Some(&j) => {
                if !chain.stages[j].module.output_slots().contains(slot) {
                    diag(None, format!("sink {stage}.{slot}: no such output slot"));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pass,
    PreFailed,
    PostFailed,
    InvariantFailed,
    /// Not executed: the chain halted, or an input was unavailable.
    Skipped,
    /// The transform or a contract evaluation raised an error.
    Error,
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Pass => "pass",
            StageStatus::PreFailed => "pre_failed",
            StageStatus::PostFailed => "post_failed",
            StageStatus::InvariantFailed => "invariant_failed",
            StageStatus::Skipped => "skipped",
            StageStatus::Error => "error",
        }
    }
}

impl From<Status> for StageStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Pass => StageStatus::Pass,
            Status::PreFailed => StageStatus::PreFailed,
            Status::PostFailed => StageStatus::PostFailed,
            Status::InvariantFailed => StageStatus::InvariantFailed,
        }
    }
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What happened at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub stage_id: String,
    pub module_id: String,
    pub impl_ref: String,
    pub status: StageStatus,
    /// The arrays bound to each input slot (empty when skipped).
    pub inputs: ArrayMap,
    /// Outputs actually released.
    pub outputs: ArrayMap,
    pub violations: Vec<Violation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub mode: Mode,
    /// One record per stage, in execution order.
    pub stages: Vec<StageRun>,
    /// Available sink arrays keyed `stage.slot`.
    pub sinks: ArrayMap,
    /// Stage that stopped an enforce-mode run.
    pub halted_at: Option<String>,
}

impl ChainRun {
    pub fn stage(&self, id: &str) -> Option<&StageRun> {
        self.stages.iter().find(|s| s.stage_id == id)
    }

    /// Every released output keyed `stage.slot`.
    pub fn intermediates(&self) -> ArrayMap {
        let mut out = ArrayMap::new();
        for s in &self.stages {
            for (slot, a) in &s.outputs {
                out.insert(format!("{}.{slot}", s.stage_id), a.clone());
            }
        }
        out
    }

    pub fn violation_count(&self) -> usize {
        self.stages.iter().map(|s| s.violations.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("invalid chain: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("source '{0}' was not supplied")]
    MissingSource(String),
    #[error("execution order is not a valid topological order: {0}")]
    BadOrder(String),
}

fn join(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Receives stage events during [`execute_observed`]. A stage's `finished`
/// call completes before any later stage starts.
pub trait StageObserver {
    type Error;

    fn started(&mut self, _stage: &Stage) -> Result<(), Self::Error> {
        Ok(())
    }

    fn finished(&mut self, _run: &StageRun) -> Result<(), Self::Error> {
        Ok(())
    }
}

impl StageObserver for () {
    type Error = core::convert::Infallible;
}

#[derive(Debug, Error)]
pub enum RunError<E> {
    #[error(transparent)]
    Chain(ChainError),
    #[error("stage observer failed: {0}")]
    Observer(E),
}

/// Runs every stage in declaration order.
pub fn execute(chain: &Chain, sources: &ArrayMap, mode: Mode) -> Result<ChainRun, ChainError> {
    let order: Vec<usize> = (0..chain.stages.len()).collect();
    execute_in_order(chain, sources, mode, &order)
}

/// Runs the stages in `order`, which must be a permutation of stage indices
/// respecting every binding dependency.
pub fn execute_in_order(
    chain: &Chain,
    sources: &ArrayMap,
    mode: Mode,
    order: &[usize],
) -> Result<ChainRun, ChainError> {
    match execute_observed(chain, sources, mode, order, &mut ()) {
        Ok(run) => Ok(run),
        Err(RunError::Chain(e)) => Err(e),
        Err(RunError::Observer(never)) => match never {},
    }
}

/// Indices of the stages `stage_index` reads from.
pub fn dependencies(chain: &Chain, stage_index: usize) -> BTreeSet<usize> {
    chain.stages[stage_index]
        .bindings
        .values()
        .flat_map(|b| b.refs())
        .filter_map(|r| match r {
            Ref::Output { stage, .. } => chain.stages.iter().position(|s| &s.id == stage),
            Ref::Source(_) => None,
        })
        .collect()
}

pub fn execute_observed<O: StageObserver>(
    chain: &Chain,
    sources: &ArrayMap,
    mode: Mode,
    order: &[usize],
    observer: &mut O,
) -> Result<ChainRun, RunError<O::Error>> {
    let diags = validate_chain(chain);
    if !diags.is_empty() {
        return Err(RunError::Chain(ChainError::Invalid(diags)));
    }
    for name in &chain.sources {
        if !sources.contains_key(name) {
            return Err(RunError::Chain(ChainError::MissingSource(name.clone())));
        }
    }
    check_order(chain, order).map_err(RunError::Chain)?;

    let mut produced: BTreeMap<(String, String), NdArray> = BTreeMap::new();
    let mut runs = Vec::with_capacity(order.len());
    let mut halted_at = None;
    for &i in order {
        let stage = &chain.stages[i];
        let skipped = |reason: String| StageRun {
            stage_id: stage.id.clone(),
            module_id: stage.module.id.clone(),
            impl_ref: stage.module.impl_ref(),
            status: StageStatus::Skipped,
            inputs: ArrayMap::new(),
            outputs: ArrayMap::new(),
            violations: Vec::new(),
            error: Some(reason),
        };
        if let Some(h) = &halted_at {
            let run = skipped(format!("chain halted at stage {h}"));
            observer.finished(&run).map_err(RunError::Observer)?;
            runs.push(run);
            continue;
        }
        let inputs = match bind_inputs(stage, sources, &produced) {
            Ok(inputs) => inputs,
            Err(BindFailure::Unavailable(r)) => {
                let run = skipped(format!("input {r} unavailable"));
                observer.finished(&run).map_err(RunError::Observer)?;
                runs.push(run);
                continue;
            }
            Err(BindFailure::Stack(e)) => {
                let run = StageRun {
                    status: StageStatus::Error,
                    error: Some(e),
                    ..skipped(String::new())
                };
                observer.finished(&run).map_err(RunError::Observer)?;
                runs.push(run);
                if mode == Mode::Enforce {
                    halted_at = Some(stage.id.clone());
                }
                continue;
            }
        };
        observer.started(stage).map_err(RunError::Observer)?;
        let run = match run_checked(&stage.module, &inputs, mode) {
            Ok(outcome) => StageRun {
                stage_id: stage.id.clone(),
                module_id: stage.module.id.clone(),
                impl_ref: stage.module.impl_ref(),
                status: outcome.status.into(),
                inputs,
                outputs: outcome.outputs.unwrap_or_default(),
                violations: outcome.violations,
                error: None,
            },
            Err(e) => StageRun {
                stage_id: stage.id.clone(),
                module_id: stage.module.id.clone(),
                impl_ref: stage.module.impl_ref(),
                status: StageStatus::Error,
                inputs,
                outputs: ArrayMap::new(),
                violations: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        for (slot, a) in &run.outputs {
            produced.insert((stage.id.clone(), slot.clone()), a.clone());
        }
        if mode == Mode::Enforce && run.status != StageStatus::Pass {
            halted_at = Some(stage.id.clone());
        }
        observer.finished(&run).map_err(RunError::Observer)?;
        runs.push(run);
    }
    let mut sinks = ArrayMap::new();
    for (stage, slot) in &chain.sinks {
        if let Some(a) = produced.get(&(stage.clone(), slot.clone())) {
            sinks.insert(format!("{stage}.{slot}"), a.clone());
        }
    }
    Ok(ChainRun {
        mode,
        stages: runs,
        sinks,
        halted_at,
    })
}

fn check_order(chain: &Chain, order: &[usize]) -> Result<(), ChainError> {
    let n = chain.stages.len();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in order.iter().enumerate() {
        if i >= n || pos[i] != usize::MAX {
            return Err(ChainError::BadOrder(format!(
                "{order:?} is not a permutation of 0..{n}"
            )));
        }
        pos[i] = k;
    }
    if order.len() != n {
        return Err(ChainError::BadOrder(format!(
            "{order:?} is not a permutation of 0..{n}"
        )));
    }
    for i in 0..n {
        for d in dependencies(chain, i) {
            if pos[d] > pos[i] {
                return Err(ChainError::BadOrder(format!(
                    "stage {} runs before its dependency {}",
                    chain.stages[i].id, chain.stages[d].id
                )));
            }
        }
    }
    Ok(())
}

enum BindFailure {
    Unavailable(String),
    Stack(String),
}

fn bind_inputs(
    stage: &Stage,
    sources: &ArrayMap,
    produced: &BTreeMap<(String, String), NdArray>,
) -> Result<ArrayMap, BindFailure> {
    let lookup = |r: &Ref| -> Result<&NdArray, BindFailure> {
        let found = match r {
            Ref::Source(name) => sources.get(name),
            Ref::Output { stage, slot } => produced.get(&(stage.clone(), slot.clone())),
        };
        found.ok_or_else(|| BindFailure::Unavailable(r.to_string()))
    };
    let mut inputs = ArrayMap::new();
    for (slot, binding) in &stage.bindings {
        let a = match binding {
            Binding::One(r) => lookup(r)?.clone(),
            Binding::Stack(refs) => {
                let parts = refs.iter().map(lookup).collect::<Result<Vec<_>, _>>()?;
                NdArray::stack(&parts)
                    .map_err(|e| BindFailure::Stack(format!("stacking slot {slot}: {e}")))?
            }
        };
        inputs.insert(slot.clone(), a.with_name(slot.clone()));
    }
    Ok(inputs)
}
