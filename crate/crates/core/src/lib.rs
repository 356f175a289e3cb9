//! Contract-checked array transformations.
//!
//! The crate is `no_std` (it needs `alloc`). It holds every pure piece of the
//! toolkit: the [`NdArray`] value type, the constraint language, the builtin
//! transforms with their contracts, chain execution, fault injection
//! campaigns and the design-diversity ensemble runner. File formats, digests,
//! persistence and the command line live in the `semdtm` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod array;
pub mod campaign;
pub mod chain;
pub mod dsl;
pub mod ensemble;
pub mod fault;
pub mod module;
pub mod num;
pub mod scenarios;
pub mod transform;

pub use array::{compare, ArrayError, Discrepancy, NdArray, DEFAULT_REL_FLOOR};
pub use campaign::{run_campaign, summarize, CampaignConfig, CampaignReport};
pub use chain::{validate_chain, Chain, ChainRun, Diagnostic};
pub use dsl::{check, list_predicates, parse_constraints, ConstraintExpr, Phase, Violation};
pub use ensemble::{run_ensemble, EnsembleReport, VariantSet};
pub use fault::{inject, FaultKind, FaultSpec};
pub use module::{run_checked, run_raw, CheckOutcome, DtmModule, Mode, Param, Status};

/// Named arrays bound to slots. Ordered so every traversal is deterministic.
pub type ArrayMap = alloc::collections::BTreeMap<alloc::string::String, NdArray>;
