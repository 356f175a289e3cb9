//! Per-stage audit records and content digests.

use std::collections::BTreeMap;
use std::fmt::Write;

use semdtm_core::chain::StageRun;
use semdtm_core::module::Params;
use semdtm_core::{NdArray, Violation};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{as_two_d, render_grid};

/// Hex SHA-256 of an array's canonical text: its shape line followed by the
/// grid rendering of its 2-D view.
pub fn array_digest(a: &NdArray) -> String {
    let dims: Vec<String> = a.shape().iter().map(|d| d.to_string()).collect();
    let mut h = Sha256::new();
    h.update(format!("shape {}\n", dims.join("x")).as_bytes());
    h.update(render_grid(&as_two_d(a)).expect("2-D view").as_bytes());
    hex::encode(h.finalize())
}

/// Hex SHA-256 of the parameters' JSON form (keys sorted).
pub fn params_digest(p: &Params) -> String {
    let text = serde_json::to_string(p).expect("parameters serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub digest: String,
    pub shape: Vec<usize>,
    /// File name inside the output directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub stage_id: String,
    pub module_id: String,
    pub impl_ref: String,
    pub status: String,
    pub params: Params,
    pub params_digest: String,
    /// Input slot to array digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, OutputRecord>,
    pub contracts: Vec<String>,
    pub violation_count: usize,
    pub violations: Vec<Violation>,
    pub error: Option<String>,
    /// Excluded from any determinism comparison.
    pub wall_time_ms: f64,
}

impl ProvenanceRecord {
    pub fn new(run: &StageRun, params: &Params, contracts: Vec<String>, wall_time_ms: f64) -> Self {
        Self {
            stage_id: run.stage_id.clone(),
            module_id: run.module_id.clone(),
            impl_ref: run.impl_ref.clone(),
            status: run.status.as_str().to_string(),
            params: params.clone(),
            params_digest: params_digest(params),
            inputs: run
                .inputs
                .iter()
                .map(|(k, a)| (k.clone(), array_digest(a)))
                .collect(),
            outputs: run
                .outputs
                .iter()
                .map(|(slot, a)| {
                    (
                        slot.clone(),
                        OutputRecord {
                            digest: array_digest(a),
                            shape: a.shape().to_vec(),
                            file: output_file_name(&run.stage_id, slot),
                        },
                    )
                })
                .collect(),
            contracts,
            violation_count: run.violations.len(),
            violations: run.violations.clone(),
            error: run.error.clone(),
            wall_time_ms,
        }
    }

    /// The record with timing zeroed, for comparisons across runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }
}

pub fn output_file_name(stage: &str, slot: &str) -> String {
    format!("{stage}.{slot}.grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format '{other}' (text|json)")),
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    stage_count: usize,
    violation_count: usize,
    stages: &'a [ProvenanceRecord],
}

/// Serializes records. Text has one line per stage; JSON is one object
/// with a `stages` array.
pub fn export_report(records: &[ProvenanceRecord], format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => {
            let mut s = String::new();
            for r in records {
                let _ = write!(
                    s,
                    "{} {} violations={} impl={}",
                    r.stage_id, r.status, r.violation_count, r.impl_ref
                );
                if let Some(e) = &r.error {
                    let _ = write!(s, " note={e:?}");
                }
                s.push('\n');
            }
            s
        }
        ReportFormat::Json => {
            let doc = JsonReport {
                stage_count: records.len(),
                violation_count: records.iter().map(|r| r.violation_count).sum(),
                stages: records,
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use semdtm_core::chain::StageStatus;
    use semdtm_core::dsl::{Location, Observed, Phase};
    use semdtm_core::ArrayMap;

    fn record(id: &str, violations: usize) -> ProvenanceRecord {
        let v = Violation {
            predicate: "finite".into(),
            location: Location::Index(vec![0]),
            observed: Observed::Value(f64::NAN),
            expectation: "finite value".into(),
            slot: "in".into(),
            phase: Phase::Pre,
        };
        let run = StageRun {
            stage_id: id.into(),
            module_id: id.into(),
            impl_ref: "rescale_minmax".into(),
            status: if violations == 0 {
                StageStatus::Pass
            } else {
                StageStatus::PreFailed
            },
            inputs: ArrayMap::new(),
            outputs: ArrayMap::new(),
            violations: vec![v; violations],
            error: None,
        };
        ProvenanceRecord::new(&run, &Params::new(), vec![], 0.0)
    }

    #[test]
    fn empty_report() {
        assert_eq!(export_report(&[], ReportFormat::Text), "");
        let j: serde_json::Value =
            serde_json::from_str(&export_report(&[], ReportFormat::Json)).unwrap();
        assert_eq!(j["stages"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn two_passing_stages() {
        let t = export_report(&[record("a", 0), record("b", 0)], ReportFormat::Text);
        assert_eq!(t.lines().count(), 2);
        assert!(t.lines().all(|l| l.split(' ').nth(1) == Some("pass")));
    }

    #[test]
    fn violation_counts_in_both_formats() {
        let r = [record("a", 3)];
        assert!(export_report(&r, ReportFormat::Text).contains("violations=3"));
        let j: serde_json::Value =
            serde_json::from_str(&export_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(j["stages"][0]["violation_count"], 3);
        assert_eq!(j["stages"][0]["violations"][0]["observed"]["value"], "NaN");
    }

    #[test]
    fn digests_track_content() {
        let a = NdArray::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = NdArray::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_ne!(array_digest(&a), array_digest(&b));
        assert_eq!(array_digest(&a), array_digest(&a.clone().with_name("z")));
        assert_eq!(array_digest(&a).len(), 64);
    }
}
