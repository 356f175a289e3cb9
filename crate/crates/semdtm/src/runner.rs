//! Chain execution with every stage output written to disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use semdtm_core::chain::{execute_observed, ChainError, RunError, Stage, StageObserver, StageRun};
use semdtm_core::module::Params;
use semdtm_core::{ArrayMap, Chain, ChainRun, Mode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{as_two_d, render_grid};
use crate::io::{ensure_dir, write_atomic, IoError};
use crate::provenance::{output_file_name, ProvenanceRecord};
use crate::Settings;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const PROVENANCE_SCHEMA: &str = "semdtm.provenance/1";

#[derive(Debug, Error)]
pub enum RunChainError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// The provenance file's contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceDoc {
    pub schema: String,
    pub settings: Settings,
    /// `stage.slot` of each sink that was produced.
    pub sinks: Vec<String>,
    pub halted_at: Option<String>,
    /// One record per stage, in execution order. Skipped stages are included
    /// with status `skipped`.
    pub stages: Vec<ProvenanceRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: ChainRun,
    pub provenance: Vec<ProvenanceRecord>,
    /// Grid files written, in write order.
    pub persisted: Vec<PathBuf>,
    pub provenance_path: PathBuf,
}

impl RunOutput {
    pub fn sinks(&self) -> &ArrayMap {
        &self.run.sinks
    }

    pub fn intermediates(&self) -> ArrayMap {
        self.run.intermediates()
    }

    /// Whether every executed stage passed its contracts.
    pub fn all_passed(&self) -> bool {
        self.run.halted_at.is_none() && self.run.violation_count() == 0
    }
}

struct Persister<'a> {
    out_dir: &'a Path,
    meta: BTreeMap<String, (Params, Vec<String>)>,
    clock: Option<Instant>,
    records: Vec<ProvenanceRecord>,
    persisted: Vec<PathBuf>,
}

impl StageObserver for Persister<'_> {
    type Error = IoError;

    fn started(&mut self, _stage: &Stage) -> Result<(), IoError> {
        self.clock = Some(Instant::now());
        Ok(())
    }

    fn finished(&mut self, run: &StageRun) -> Result<(), IoError> {
        let wall = self
            .clock
            .take()
            .map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
        for (slot, a) in &run.outputs {
            let path = self.out_dir.join(output_file_name(&run.stage_id, slot));
            let text = render_grid(&as_two_d(a)).expect("2-D view renders");
            write_atomic(&path, text.as_bytes())?;
            self.persisted.push(path);
        }
        let (params, contracts) = &self.meta[&run.stage_id];
        self.records
            .push(ProvenanceRecord::new(run, params, contracts.clone(), wall));
        Ok(())
    }
}

/// Removes grids an earlier run of this chain left behind, so the directory
/// holds exactly this run's outputs.
fn clear_stale(chain: &Chain, out_dir: &Path) -> Result<(), IoError> {
    for s in &chain.stages {
        for slot in s.module.output_slots() {
            let path = out_dir.join(output_file_name(&s.id, slot));
            match std::fs::remove_file(&path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                    return Err(IoError::new(&path, e))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Runs in declaration order with default settings apart from mode and
/// output directory.
pub fn run_chain(
    chain: &Chain,
    sources: &ArrayMap,
    mode: Mode,
    out_dir: &Path,
) -> Result<RunOutput, RunChainError> {
    let settings = Settings {
        mode,
        out: out_dir.display().to_string(),
        ..Settings::default()
    };
    let order: Vec<usize> = (0..chain.stages.len()).collect();
    run_chain_in_order(chain, sources, &settings, &order)
}

/// Runs the stages in `order` under `settings`, writing each stage's
/// outputs before the next stage starts and the provenance file last.
pub fn run_chain_in_order(
    chain: &Chain,
    sources: &ArrayMap,
    settings: &Settings,
    order: &[usize],
) -> Result<RunOutput, RunChainError> {
    let out_dir = Path::new(&settings.out);
    ensure_dir(out_dir)?;
    clear_stale(chain, out_dir)?;
    let mut p = Persister {
        out_dir,
        meta: chain
            .stages
            .iter()
            .map(|s| {
                (
                    s.id.clone(),
                    (s.module.params.clone(), s.module.contract_text()),
                )
            })
            .collect(),
        clock: None,
        records: Vec::new(),
        persisted: Vec::new(),
    };
    let run = match execute_observed(chain, sources, settings.mode, order, &mut p) {
        Ok(run) => run,
        Err(RunError::Chain(e)) => return Err(e.into()),
        Err(RunError::Observer(e)) => return Err(e.into()),
    };
    let doc = ProvenanceDoc {
        schema: PROVENANCE_SCHEMA.to_string(),
        settings: settings.clone(),
        sinks: run.sinks.keys().cloned().collect(),
        halted_at: run.halted_at.clone(),
        stages: p.records.clone(),
    };
    let provenance_path = out_dir.join(PROVENANCE_FILE);
    let mut text = serde_json::to_string_pretty(&doc).expect("provenance serializes");
    text.push('\n');
    write_atomic(&provenance_path, text.as_bytes())?;
    Ok(RunOutput {
        run,
        provenance: p.records,
        persisted: p.persisted,
        provenance_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;
    use semdtm_core::chain::{Binding, Ref};
    use semdtm_core::module::{params, Param};
    use semdtm_core::{run_checked, DtmModule, NdArray};

    fn stage(id: &str, m: DtmModule, from: &str) -> Stage {
        Stage {
            id: id.into(),
            module: m,
            bindings: [("in".to_string(), Binding::One(Ref::parse(from)))].into(),
        }
    }

    fn two_stage() -> Chain {
        Chain {
            sources: vec!["x".into()],
            stages: vec![
                stage(
                    "norm",
                    DtmModule::canonical("norm", "rescale_minmax", Params::new()).unwrap(),
                    "x",
                ),
                stage(
                    "mask",
                    DtmModule::canonical(
                        "mask",
                        "threshold_mask",
                        params([("t", Param::Scalar(0.5))]),
                    )
                    .unwrap(),
                    "norm.out",
                ),
            ],
            sinks: vec![("mask".into(), "out".into())],
        }
    }

    fn sources(v: Vec<f64>) -> ArrayMap {
        [("x".to_string(), NdArray::vector(v).unwrap())].into()
    }

    #[test]
    fn rescale_then_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let chain = two_stage();
        let src = sources(vec![2.0, 4.0, 6.0, 8.0]);
        let out = run_chain(&chain, &src, Mode::Enforce, dir.path()).unwrap();
        // Hand-composed reference.
        let step = |m: &DtmModule, x: &NdArray| {
            let inputs = [("in".to_string(), x.clone())].into();
            run_checked(m, &inputs, Mode::Enforce)
                .unwrap()
                .outputs
                .unwrap()
        };
        let a = step(&chain.stages[0].module, &src["x"]);
        let b = step(&chain.stages[1].module, &a["out"]);
        assert_eq!(out.sinks()["mask.out"], b["out"]);
        assert_eq!(out.sinks()["mask.out"].data(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(
            out.intermediates()["norm.out"].data(),
            &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
        );
        assert_eq!(out.persisted.len(), 2);
        let back = parse_grid(&std::fs::read_to_string(dir.path().join("norm.out.grid")).unwrap())
            .unwrap();
        assert_eq!(back, as_two_d(&out.intermediates()["norm.out"]));
        assert!(out.all_passed());
    }

    #[test]
    fn pre_failure_halts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_chain(
            &two_stage(),
            &sources(vec![1.0, f64::NAN]),
            Mode::Enforce,
            dir.path(),
        )
        .unwrap();
        assert!(out.sinks().is_empty());
        assert_eq!(out.provenance[0].status, "pre_failed");
        assert_eq!(out.provenance[1].status, "skipped");
        assert!(out.persisted.is_empty());
        let doc: ProvenanceDoc =
            serde_json::from_str(&std::fs::read_to_string(&out.provenance_path).unwrap()).unwrap();
        assert_eq!(doc.halted_at.as_deref(), Some("norm"));
        assert_eq!(doc.stages.len(), 2);
    }

    #[test]
    fn rerun_clears_old_outputs() {
        let dir = tempfile::tempdir().unwrap();
        run_chain(
            &two_stage(),
            &sources(vec![1.0, 2.0]),
            Mode::Enforce,
            dir.path(),
        )
        .unwrap();
        assert!(dir.path().join("mask.out.grid").exists());
        run_chain(
            &two_stage(),
            &sources(vec![1.0, f64::NAN]),
            Mode::Enforce,
            dir.path(),
        )
        .unwrap();
        assert!(!dir.path().join("norm.out.grid").exists());
        assert!(!dir.path().join("mask.out.grid").exists());
    }

    #[test]
    fn deterministic_apart_from_timing() {
        let chain = two_stage();
        let src = sources(vec![5.0, 1.0, 3.0]);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run_chain(&chain, &src, Mode::Observe, d1.path()).unwrap();
        let b = run_chain(&chain, &src, Mode::Observe, d2.path()).unwrap();
        let strip = |r: &RunOutput| {
            r.provenance
                .iter()
                .map(|p| p.without_timing())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        for name in ["norm.out.grid", "mask.out.grid"] {
            assert_eq!(
                std::fs::read(d1.path().join(name)).unwrap(),
                std::fs::read(d2.path().join(name)).unwrap()
            );
        }
    }
}
