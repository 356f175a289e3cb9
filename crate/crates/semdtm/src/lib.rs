//! File formats and provenance for semdtm, plus its command line.

pub mod cli;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod provenance;
pub mod reports;
pub mod runner;

use semdtm_core::Mode;
use serde::{Deserialize, Serialize};

/// Global run settings, echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub mode: Mode,
    pub out: String,
    pub seed: u64,
    pub tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            mode: Mode::Enforce,
            out: "./out".into(),
            seed: 0,
            tol: 1e-9,
        }
    }
}
