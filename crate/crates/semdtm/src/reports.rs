//! JSON and text forms of campaign and ensemble reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use semdtm_core::campaign::{summarize, BaselineReport};
use semdtm_core::ensemble::format_entry;
use semdtm_core::{CampaignReport, EnsembleReport, FaultKind, FaultSpec, NdArray};
use serde::{Deserialize, Serialize};

use crate::Settings;

pub const CAMPAIGN_SCHEMA: &str = "semdtm.campaign/1";
pub const ENSEMBLE_SCHEMA: &str = "semdtm.ensemble/1";

/// A real that survives JSON: non-finite values become strings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Real(#[serde(with = "semdtm_core::num::json_real")] pub f64);

/// An array as JSON. Masked cells are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayJson {
    pub shape: Vec<usize>,
    pub values: Vec<Option<Real>>,
}

impl From<&NdArray> for ArrayJson {
    fn from(a: &NdArray) -> Self {
        Self {
            shape: a.shape().to_vec(),
            values: a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| (!a.is_masked(i)).then_some(Real(v)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignDoc {
    pub schema: String,
    pub settings: Settings,
    pub spec: String,
    pub kinds: Vec<FaultKind>,
    pub report: CampaignReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineReport>,
}

impl CampaignDoc {
    pub fn new(
        settings: &Settings,
        spec: &str,
        kinds: &[FaultKind],
        report: CampaignReport,
    ) -> Self {
        Self {
            schema: CAMPAIGN_SCHEMA.into(),
            settings: settings.clone(),
            spec: spec.into(),
            kinds: kinds.to_vec(),
            report,
            baseline: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("campaign report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "campaign seed={} trials_per_kind={} ensemble={} tol={}\n",
            self.report.master_seed,
            self.report.trials_per_kind,
            self.report.ensemble,
            semdtm_core::num::fmt_real(self.report.tol)
        );
        s.push_str(&summarize(&self.report));
        if let Some(b) = &self.baseline {
            let _ = writeln!(
                s,
                "baseline trials={} violations={} errors={}",
                b.trials, b.violations, b.errors
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionJson {
    pub variant: String,
    pub fault: FaultSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDoc {
    pub schema: String,
    pub settings: Settings,
    pub set: String,
    pub variant_ids: Vec<String>,
    pub tolerance: Real,
    /// Largest absolute cell difference per pair; `"inf"` when outputs are
    /// incomparable or a variant failed.
    pub agreement: Vec<Vec<Real>>,
    pub relative: Vec<Vec<Real>>,
    pub consensus_members: Vec<String>,
    pub dissenters: Vec<String>,
    pub failures: BTreeMap<String, String>,
    pub unanimous: bool,
    pub consensus: Option<BTreeMap<String, ArrayJson>>,
    pub injected: Option<InjectionJson>,
}

fn matrix(m: &[Vec<f64>]) -> Vec<Vec<Real>> {
    m.iter()
        .map(|r| r.iter().copied().map(Real).collect())
        .collect()
}

impl EnsembleDoc {
    pub fn new(
        settings: &Settings,
        set: &str,
        r: &EnsembleReport,
        injected: Option<InjectionJson>,
    ) -> Self {
        Self {
            schema: ENSEMBLE_SCHEMA.into(),
            settings: settings.clone(),
            set: set.into(),
            variant_ids: r.variant_ids.clone(),
            tolerance: Real(r.tolerance),
            agreement: matrix(&r.agreement),
            relative: matrix(&r.relative),
            consensus_members: r.consensus_members.clone(),
            dissenters: r.dissenters.clone(),
            failures: r.failures.clone(),
            unanimous: r.unanimous,
            consensus: r
                .consensus
                .as_ref()
                .map(|c| c.iter().map(|(k, a)| (k.clone(), a.into())).collect()),
            injected,
        }
    }

    pub fn has_consensus(&self) -> bool {
        self.consensus.is_some()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ensemble report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "ensemble {} tol={}\n",
            self.set,
            semdtm_core::num::fmt_real(self.tolerance.0)
        );
        if let Some(i) = &self.injected {
            let _ = writeln!(s, "injected {} into {}", i.fault, i.variant);
        }
        let width = self.variant_ids.iter().map(String::len).max().unwrap_or(0);
        for (id, row) in self.variant_ids.iter().zip(&self.agreement) {
            let cells: Vec<String> = row
                .iter()
                .map(|x| format!("{:>10}", format_entry(x.0)))
                .collect();
            let _ = writeln!(s, "{id:<width$} {}", cells.join(" "));
        }
        for (id, msg) in &self.failures {
            let _ = writeln!(s, "failed {id}: {msg}");
        }
        let verdict = if self.unanimous {
            "unanimous"
        } else if self.has_consensus() {
            "consensus"
        } else {
            "no consensus"
        };
        let _ = writeln!(s, "verdict {verdict}");
        let _ = writeln!(s, "consensus [{}]", self.consensus_members.join(", "));
        let _ = writeln!(s, "dissenters [{}]", self.dissenters.join(", "));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use semdtm_core::ensemble::shipped_set;
    use semdtm_core::module::{params, Param};
    use semdtm_core::{run_ensemble, ArrayMap};

    #[test]
    fn ensemble_round_trip() {
        let vs = shipped_set("focal_mean", params([("window", Param::Scalar(3.0))])).unwrap();
        let grid = NdArray::from_rows(&[[1.0, 2.0], [3.0, 4.0]])
            .unwrap()
            .with_mask(vec![false, true, false, false])
            .unwrap();
        let inputs: ArrayMap = [("in".to_string(), grid)].into();
        let r = run_ensemble(&vs, &inputs, 1e-9).unwrap();
        let doc = EnsembleDoc::new(&Settings::default(), "focal_mean", &r, None);
        let back: EnsembleDoc = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert!(doc.to_text().contains("verdict unanimous"));
        assert_eq!(doc.consensus.unwrap()["out"].shape, [2, 2]);
    }

    #[test]
    fn masked_cells_are_null() {
        let a = NdArray::vector(vec![1.0, 2.0])
            .unwrap()
            .with_mask(vec![true, false])
            .unwrap();
        let j = serde_json::to_value(ArrayJson::from(&a)).unwrap();
        assert_eq!(j["values"], serde_json::json!([null, 2.0]));
    }

    #[test]
    fn infinite_entries_are_strings() {
        let j = serde_json::to_value(Real(f64::INFINITY)).unwrap();
        assert_eq!(j, "inf");
        let back: Real = serde_json::from_str("\"-inf\"").unwrap();
        assert_eq!(back.0, f64::NEG_INFINITY);
        assert!(serde_json::from_str::<Real>("\"abc\"").is_err());
    }

    #[test]
    fn campaign_round_trip() {
        let doc = CampaignDoc::new(
            &Settings::default(),
            "x.json",
            &[FaultKind::SignFlip],
            CampaignReport::empty(),
        );
        let back: CampaignDoc = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert!(doc.to_text().lines().count() >= 2);
    }
}
