//! Seeded fault-injection campaigns over a chain.
//!
//! Every trial injects one fault into one stage, runs the chain in observe
//! mode and compares the violations against a clean run. A violation counts
//! as a detection when it appears at the faulted stage or later and is not
//! present in the clean run.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::NdArray;
use crate::chain::{execute, validate_chain, Chain, ChainError, ChainRun, Diagnostic, StageStatus};
use crate::dsl::Phase;
use crate::ensemble::{run_ensemble, VariantSet};
use crate::fault::{inject, FaultKind, FaultSpec};
use crate::module::{DtmModule, Mode};
use crate::num::same_value;
use crate::ArrayMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub kinds: Vec<FaultKind>,
    pub trials_per_kind: usize,
    pub master_seed: u64,
    /// Fall back to an ensemble of alternate implementations when no
    /// contract catches a fault.
    pub ensemble: bool,
    /// Ensemble agreement tolerance.
    pub tol: f64,
}

impl CampaignConfig {
    pub fn new(kinds: Vec<FaultKind>, trials_per_kind: usize, master_seed: u64) -> Self {
        Self {
            kinds,
            trials_per_kind,
            master_seed,
            ensemble: false,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    Pre,
    Post,
    Invariant,
    Ensemble,
    /// The faulted run raised an error the clean run did not.
    Error,
}

impl From<Phase> for Detection {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Pre => Detection::Pre,
            Phase::Post => Detection::Post,
            Phase::Invariant => Detection::Invariant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub kind: FaultKind,
    pub trial: usize,
    pub seed: u64,
    pub stage: String,
    /// Output slot or parameter name.
    pub target: String,
    /// Flat cell (or parameter entry) hit by single-cell faults.
    pub cell: Option<usize>,
    pub magnitude: f64,
    pub detected_by: Option<Detection>,
    pub detecting_stage: Option<String>,
    /// Cells, over all stage outputs, that differ from the clean run.
    pub affected_cells: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: Option<FaultKind>,
    pub trials: usize,
    pub detected_pre: usize,
    pub detected_post: usize,
    pub detected_invariant: usize,
    pub detected_ensemble: usize,
    pub errored: usize,
    pub undetected: usize,
}

impl KindSummary {
    pub fn detected(&self) -> usize {
        self.detected_pre + self.detected_post + self.detected_invariant + self.detected_ensemble
    }

    fn rate(&self, n: usize) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            n as f64 / self.trials as f64
        }
    }

    /// Share of trials caught by any check.
    pub fn detection_rate(&self) -> f64 {
        self.rate(self.detected())
    }

    /// Share of trials that changed nothing observable.
    pub fn silent_rate(&self) -> f64 {
        self.rate(self.undetected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub master_seed: u64,
    pub trials_per_kind: usize,
    pub ensemble: bool,
    pub tol: f64,
    /// Number of trials run.
    pub trials: usize,
    pub per_kind: Vec<KindSummary>,
    pub records: Vec<TrialRecord>,
}

impl CampaignReport {
    pub fn empty() -> Self {
        Self {
            master_seed: 0,
            trials_per_kind: 0,
            ensemble: false,
            tol: 0.0,
            trials: 0,
            per_kind: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn summary(&self, kind: FaultKind) -> Option<&KindSummary> {
        self.per_kind.iter().find(|s| s.kind == Some(kind))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CampaignError {
    #[error("trials_per_kind must be >= 1")]
    ZeroTrials,
    #[error("no {0} target in the chain")]
    NoTarget(FaultKind),
    #[error("tolerance must be a finite number >= 0, got {0}")]
    Tolerance(f64),
    #[error("invalid chain: {0:?}")]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Seed of one trial, mixed from the master seed, the kind and the index.
pub fn trial_seed(master: u64, kind: FaultKind, trial: usize) -> u64 {
    let k = FaultKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    let mut z =
        master ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (trial as u64).rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws a kind-appropriate magnitude.
pub fn draw_magnitude(kind: FaultKind, rng: &mut impl Rng) -> f64 {
    match kind {
        FaultKind::IndexShift => rng.random_range(1..=8) as f64,
        FaultKind::UnitScale => {
            const EXPONENTS: [i32; 6] = [-3, -2, -1, 1, 2, 3];
            libm::pow(10.0, EXPONENTS[rng.random_range(0..EXPONENTS.len())] as f64)
        }
        FaultKind::ParamPerturb => rng.random_range(0.01..0.5),
        _ => 0.0,
    }
}

/// `(stage index, name)` pairs a fault of `kind` may target.
pub fn targets(chain: &Chain, kind: FaultKind) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, s) in chain.stages.iter().enumerate() {
        if kind.targets_output() {
            out.extend(s.module.output_slots().iter().map(|o| (i, o.clone())));
        } else {
            out.extend(s.module.params.keys().map(|p| (i, p.clone())));
        }
    }
    out
}

/// The fault a campaign trial injects, with its stage index.
pub fn trial_fault(
    chain: &Chain,
    kind: FaultKind,
    seed: u64,
) -> Result<(usize, FaultSpec), CampaignError> {
    let candidates = targets(chain, kind);
    if candidates.is_empty() {
        return Err(CampaignError::NoTarget(kind));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (stage, name) = candidates[rng.random_range(0..candidates.len())].clone();
    let magnitude = draw_magnitude(kind, &mut rng);
    let fault_seed = rng.random::<u64>();
    Ok((
        stage,
        FaultSpec::new(kind, &chain.stages[stage].id, &name, magnitude, fault_seed),
    ))
}

/// A copy of `chain` whose stage `stage` carries `fault`.
pub fn inject_into(
    chain: &Chain,
    stage: usize,
    fault: &FaultSpec,
) -> Result<Chain, crate::fault::FaultError> {
    let mut c = chain.clone();
    c.stages[stage].module = inject(&chain.stages[stage].module, fault)?;
    Ok(c)
}

/// Runs every trial and tallies detections.
pub fn run_campaign(
    chain: &Chain,
    sources: &ArrayMap,
    config: &CampaignConfig,
) -> Result<CampaignReport, CampaignError> {
    if config.trials_per_kind == 0 {
        return Err(CampaignError::ZeroTrials);
    }
    if !(config.tol.is_finite() && config.tol >= 0.0) {
        return Err(CampaignError::Tolerance(config.tol));
    }
    let diags = validate_chain(chain);
    if !diags.is_empty() {
        return Err(CampaignError::Invalid(diags));
    }
    let clean = execute(chain, sources, Mode::Observe)?;
    let mut per_kind = Vec::new();
    let mut records = Vec::new();
    for &kind in &config.kinds {
        let mut summary = KindSummary {
            kind: Some(kind),
            ..KindSummary::default()
        };
        for trial in 0..config.trials_per_kind {
            let seed = trial_seed(config.master_seed, kind, trial);
            let (stage, fault) = trial_fault(chain, kind, seed)?;
            let record = run_trial(chain, sources, &clean, stage, &fault, config, trial, seed)?;
            summary.trials += 1;
            match record.detected_by {
                Some(Detection::Pre) => summary.detected_pre += 1,
                Some(Detection::Post) => summary.detected_post += 1,
                Some(Detection::Invariant) => summary.detected_invariant += 1,
                Some(Detection::Ensemble) => summary.detected_ensemble += 1,
                Some(Detection::Error) => summary.errored += 1,
                None => summary.undetected += 1,
            }
            records.push(record);
        }
        per_kind.push(summary);
    }
    Ok(CampaignReport {
        master_seed: config.master_seed,
        trials_per_kind: config.trials_per_kind,
        ensemble: config.ensemble,
        tol: config.tol,
        trials: records.len(),
        per_kind,
        records,
    })
}

/// Runs one faulted chain and attributes detections against `clean`.
#[allow(clippy::too_many_arguments)]
fn run_trial(
    chain: &Chain,
    sources: &ArrayMap,
    clean: &ChainRun,
    stage: usize,
    fault: &FaultSpec,
    config: &CampaignConfig,
    trial: usize,
    seed: u64,
) -> Result<TrialRecord, CampaignError> {
    let st = &chain.stages[stage];
    let cell = if fault.kind.single_cell() {
        let n = if fault.kind.targets_output() {
            clean.stages[stage]
                .outputs
                .get(&fault.target.name)
                .map_or(1, NdArray::len)
        } else {
            st.module.params[&fault.target.name].values().len()
        };
        Some(fault.cell_for(n))
    } else {
        None
    };
    let mut record = TrialRecord {
        kind: fault.kind,
        trial,
        seed,
        stage: st.id.clone(),
        target: fault.target.name.clone(),
        cell,
        magnitude: fault.magnitude,
        detected_by: None,
        detecting_stage: None,
        affected_cells: 0,
    };
    let faulted = match inject_into(chain, stage, fault) {
        Ok(c) => c,
        Err(_) => {
            record.detected_by = Some(Detection::Error);
            record.detecting_stage = Some(st.id.clone());
            return Ok(record);
        }
    };
    let run = execute(&faulted, sources, Mode::Observe)?;
    record.affected_cells = affected_cells(clean, &run);
    if let Some((stage_id, how)) = attribute(clean, &run, stage) {
        record.detected_by = Some(how);
        record.detecting_stage = Some(stage_id);
        return Ok(record);
    }
    if config.ensemble {
        if let Some(true) = ensemble_flags(
            &faulted.stages[stage].module,
            &st.module,
            clean,
            stage,
            config.tol,
        ) {
            record.detected_by = Some(Detection::Ensemble);
            record.detecting_stage = Some(st.id.clone());
        }
    }
    Ok(record)
}

fn violation_keys(run: &ChainRun, i: usize) -> BTreeMap<String, (Phase, usize)> {
    let mut keys: BTreeMap<String, (Phase, usize)> = BTreeMap::new();
    for v in &run.stages[i].violations {
        keys.entry(v.to_string()).or_insert((v.phase, 0)).1 += 1;
    }
    keys
}

/// First stage at or after `from` with a new violation or a new error, and
/// the earliest phase in which it showed up.
fn attribute(clean: &ChainRun, run: &ChainRun, from: usize) -> Option<(String, Detection)> {
    for i in from..run.stages.len() {
        let before = violation_keys(clean, i);
        let after = violation_keys(run, i);
        let first_new = after
            .iter()
            .filter(|(k, (_, n))| before.get(*k).map_or(0, |b| b.1) < *n)
            .map(|(_, (p, _))| *p)
            .min();
        if let Some(phase) = first_new {
            return Some((run.stages[i].stage_id.clone(), phase.into()));
        }
        if run.stages[i].status == StageStatus::Error
            && clean.stages[i].status != StageStatus::Error
        {
            return Some((run.stages[i].stage_id.clone(), Detection::Error));
        }
    }
    None
}

fn affected_cells(clean: &ChainRun, run: &ChainRun) -> usize {
    let mut n = 0;
    for (c, r) in clean.stages.iter().zip(&run.stages) {
        let slots: alloc::collections::BTreeSet<&String> =
            c.outputs.keys().chain(r.outputs.keys()).collect();
        for slot in slots {
            n += match (c.outputs.get(slot), r.outputs.get(slot)) {
                (Some(a), Some(b)) if a.shape() == b.shape() => (0..a.len())
                    .filter(|&i| {
                        a.is_masked(i) != b.is_masked(i) || !same_value(a.data()[i], b.data()[i])
                    })
                    .count(),
                (Some(a), Some(b)) => a.len().max(b.len()),
                (Some(a), None) | (None, Some(a)) => a.len(),
                (None, None) => 0,
            };
        }
    }
    n
}

/// Runs the faulted module next to the alternate implementations of its
/// transform on the clean inputs. `None` when no alternate exists.
fn ensemble_flags(
    faulted: &DtmModule,
    clean_module: &DtmModule,
    clean: &ChainRun,
    stage: usize,
    tol: f64,
) -> Option<bool> {
    let alternates = clean_module.implementation.builtin().alternates();
    if alternates.is_empty() || clean.stages[stage].inputs.is_empty() {
        return None;
    }
    let mut variants = vec![{
        let mut m = faulted.clone();
        m.id = format!("{}+fault", faulted.id);
        m
    }];
    for b in alternates {
        let m = DtmModule::from_builtin(b.qualified_name(), b, clean_module.params.clone()).ok()?;
        variants.push(m);
    }
    let vs = VariantSet::new(clean_module.id.clone(), variants).ok()?;
    let report = run_ensemble(&vs, &clean.stages[stage].inputs, tol).ok()?;
    Some(!report.unanimous)
}

/// Result of running the uninjected chain on seeded random sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub trials: usize,
    pub violations: usize,
    pub errors: usize,
    /// Trial indices with any violation or error.
    pub failing_trials: Vec<usize>,
}

/// Random sources shaped and masked like `template`, with values drawn
/// uniformly from each source's unmasked value range.
pub fn random_sources(template: &ArrayMap, seed: u64) -> ArrayMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ArrayMap::new();
    for (name, a) in template {
        let (lo, hi) = a
            .unmasked()
            .filter(|(_, v)| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
                (lo.min(v), hi.max(v))
            });
        let (lo, hi) = if lo < hi { (lo, hi) } else { (0.0, 1.0) };
        let data = (0..a.len()).map(|_| rng.random_range(lo..=hi)).collect();
        let mut b = NdArray::new(a.shape().to_vec(), data).expect("same shape");
        if let Some(m) = a.mask() {
            b = b.with_mask(m.to_vec()).expect("same length");
        }
        out.insert(name.clone(), b.with_name(name.clone()));
    }
    out
}

/// Runs the uninjected chain `trials` times on fresh random sources.
pub fn run_baseline(
    chain: &Chain,
    template: &ArrayMap,
    trials: usize,
    master_seed: u64,
) -> Result<BaselineReport, CampaignError> {
    if trials == 0 {
        return Err(CampaignError::ZeroTrials);
    }
    let mut report = BaselineReport {
        trials,
        violations: 0,
        errors: 0,
        failing_trials: Vec::new(),
    };
    for t in 0..trials {
        let seed = trial_seed(master_seed, FaultKind::SignFlip, t) ^ 0xA5A5_A5A5_A5A5_A5A5;
        let run = execute(chain, &random_sources(template, seed), Mode::Observe)?;
        let v = run.violation_count();
        let e = run
            .stages
            .iter()
            .filter(|s| s.status == StageStatus::Error)
            .count();
        report.violations += v;
        report.errors += e;
        if v + e > 0 {
            report.failing_trials.push(t);
        }
    }
    Ok(report)
}

/// Fixed-width text table, one row per kind.
pub fn summarize(report: &CampaignReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>7} {:>7} {:>7} {:>9} {:>8} {:>7} {:>10} {:>9} {:>9}",
        "kind",
        "trials",
        "pre",
        "post",
        "invariant",
        "ensemble",
        "errored",
        "undetected",
        "detected",
        "silent"
    );
    for k in &report.per_kind {
        let name = k.kind.map_or("-", FaultKind::as_str);
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>7} {:>7} {:>9} {:>8} {:>7} {:>10} {:>9.4} {:>9.4}",
            name,
            k.trials,
            k.detected_pre,
            k.detected_post,
            k.detected_invariant,
            k.detected_ensemble,
            k.errored,
            k.undetected,
            k.detection_rate(),
            k.silent_rate()
        );
    }
    s
}

impl core::fmt::Display for Detection {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Detection::Pre => "pre",
            Detection::Post => "post",
            Detection::Invariant => "invariant",
            Detection::Ensemble => "ensemble",
            Detection::Error => "error",
        })
    }
}
