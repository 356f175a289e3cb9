//! JSON pipeline specifications.
//!
//! ```json
//! {
//!   "sources": { "elevation": "elevation.grid" },
//!   "stages": [
//!     { "id": "norm", "module": "rescale_minmax", "bindings": { "in": "elevation" } },
//!     { "id": "mask", "module": "threshold_mask", "params": { "t": 0.5 },
//!       "contracts": { "post": { "out": "binary" } },
//!       "bindings": { "in": "norm.out" } }
//!   ],
//!   "sinks": ["mask.out"]
//! }
//! ```
//!
//! Source paths are relative to the spec file. A stage without a
//! `contracts` key gets the shipped contracts of its transform; a stage with
//! one gets exactly the contracts it lists. A binding is a reference
//! (`source` or `stage.slot`) or a list of references to stack.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semdtm_core::chain::{validate_chain, Binding, Ref, Stage};
use semdtm_core::module::{ModuleError, Params};
use semdtm_core::{ArrayMap, Chain, Diagnostic, DtmModule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{parse_csv, parse_grid, GridError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub sources: BTreeMap<String, String>,
    pub stages: Vec<StageSpec>,
    pub sinks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub id: String,
    pub module: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contracts: Option<ContractSpec>,
    pub bindings: BTreeMap<String, BindingSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    #[serde(default)]
    pub pre: BTreeMap<String, String>,
    #[serde(default)]
    pub post: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BindingSpec {
    One(String),
    Stack(Vec<String>),
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("stage {stage}: {source}")]
    Module { stage: String, source: ModuleError },
    #[error("sink '{0}' must be written stage.slot")]
    Sink(String),
    #[error("invalid chain:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("source {name} ({path}): {source}")]
    Source {
        name: String,
        path: PathBuf,
        source: GridError,
    },
}

impl SpecError {
    /// Whether the failure is an I/O problem rather than a bad spec.
    pub fn is_io(&self) -> bool {
        matches!(self, SpecError::Io { .. })
    }
}

/// A spec turned into a chain, with its source files resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub spec: PipelineSpec,
    pub chain: Chain,
    /// Source name to resolved file path.
    pub source_paths: BTreeMap<String, PathBuf>,
}

impl PipelineSpec {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|source| SpecError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Builds modules and the chain, then validates it.
    pub fn to_chain(&self) -> Result<Chain, SpecError> {
        let mut stages = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let module_err = |source| SpecError::Module {
                stage: s.id.clone(),
                source,
            };
            let module = match &s.contracts {
                None => DtmModule::canonical(s.id.clone(), &s.module, s.params.clone()),
                Some(c) => build_with_contracts(s, c),
            }
            .map_err(module_err)?;
            let bindings = s
                .bindings
                .iter()
                .map(|(slot, b)| {
                    let b = match b {
                        BindingSpec::One(r) => Binding::One(Ref::parse(r)),
                        BindingSpec::Stack(rs) => {
                            Binding::Stack(rs.iter().map(|r| Ref::parse(r)).collect())
                        }
                    };
                    (slot.clone(), b)
                })
                .collect();
            stages.push(Stage {
                id: s.id.clone(),
                module,
                bindings,
            });
        }
        let sinks = self
            .sinks
            .iter()
            .map(|s| {
                s.split_once('.')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| SpecError::Sink(s.clone()))
            })
            .collect::<Result<_, _>>()?;
        let chain = Chain {
            sources: self.sources.keys().cloned().collect(),
            stages,
            sinks,
        };
        let diags = validate_chain(&chain);
        if diags.is_empty() {
            Ok(chain)
        } else {
            Err(SpecError::Invalid(diags))
        }
    }
}

fn build_with_contracts(s: &StageSpec, c: &ContractSpec) -> Result<DtmModule, ModuleError> {
    let pre: Vec<(&str, &str)> = c
        .pre
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let post: Vec<(&str, &str)> = c
        .post
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    DtmModule::new(s.id.clone(), &s.module, s.params.clone())?.with_contracts(
        &pre,
        &post,
        c.invariant.as_deref(),
    )
}

/// Reads and validates a spec file.
pub fn load_pipeline(path: &Path) -> Result<Pipeline, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = PipelineSpec::from_json(&text, path)?;
    let chain = spec.to_chain()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let source_paths = spec
        .sources
        .iter()
        .map(|(name, p)| (name.clone(), base.join(p)))
        .collect();
    Ok(Pipeline {
        spec,
        chain,
        source_paths,
    })
}

/// Reads one array file; `.csv` files use the CSV reader.
pub fn read_array(path: &Path) -> Result<semdtm_core::NdArray, ReadError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let parsed = if is_csv {
        parse_csv(&text)
    } else {
        parse_grid(&text)
    };
    parsed.map_err(|source| ReadError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: GridError },
}

impl Pipeline {
    /// Reads every source file, naming each array after its source.
    pub fn read_sources(&self) -> Result<ArrayMap, ReadError> {
        let mut out = ArrayMap::new();
        for (name, path) in &self.source_paths {
            out.insert(name.clone(), read_array(path)?.with_name(name.clone()));
        }
        Ok(out)
    }
}
