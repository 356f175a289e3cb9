//! The constraint language: a comma-separated conjunction of predicates.
//!
//! ```text
//! finite, in_range(0, 1), sums_to(1.0, axis=1, tol=1e-9), same_shape(in, out)
//! ```
//!
//! Arguments are positional or `name=value`; keyword arguments follow the
//! positional ones. Predicate names are case-insensitive and rendered in
//! lowercase. Parameterless predicates may be written with or without `()`.

mod check;
mod parser;
mod registry;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::num::fmt_real;

pub use check::{check, CheckError, Location, Observed, Phase, Violation};
pub use parser::{parse_constraints, ParseError};
pub use registry::{list_predicates, lookup, ArgType, PredicateInfo};

/// A parsed predicate with typed arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Binary,
    Finite,
    InRange { lo: f64, hi: f64 },
    IntegerValued,
    MaxLeSlot(String),
    MinGeSlot(String),
    NodataFree,
    Nonempty,
    Nonnegative,
    Positive,
    SameShape(String, String),
    ShapeIs(Vec<usize>),
    SortedAscending { axis: usize },
    SumsTo { target: f64, axis: usize, tol: f64 },
}

/// A literal argument as it appears in canonical text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(usize),
    Real(f64),
    Slot(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(n) => write!(f, "{n}"),
            Literal::Real(x) => f.write_str(&fmt_real(*x)),
            Literal::Slot(s) => f.write_str(s),
        }
    }
}

impl Predicate {
    pub fn name(&self) -> &'static str {
        match self {
            Predicate::Binary => "binary",
            Predicate::Finite => "finite",
            Predicate::InRange { .. } => "in_range",
            Predicate::IntegerValued => "integer_valued",
            Predicate::MaxLeSlot(_) => "max_le_slot",
            Predicate::MinGeSlot(_) => "min_ge_slot",
            Predicate::NodataFree => "nodata_free",
            Predicate::Nonempty => "nonempty",
            Predicate::Nonnegative => "nonnegative",
            Predicate::Positive => "positive",
            Predicate::SameShape(..) => "same_shape",
            Predicate::ShapeIs(_) => "shape_is",
            Predicate::SortedAscending { .. } => "sorted_ascending",
            Predicate::SumsTo { .. } => "sums_to",
        }
    }

    /// Arguments in positional order.
    pub fn args(&self) -> Vec<Literal> {
        use Literal::*;
        match self {
            Predicate::InRange { lo, hi } => alloc::vec![Real(*lo), Real(*hi)],
            Predicate::MaxLeSlot(s) | Predicate::MinGeSlot(s) => alloc::vec![Slot(s.clone())],
            Predicate::SameShape(a, b) => alloc::vec![Slot(a.clone()), Slot(b.clone())],
            Predicate::ShapeIs(dims) => dims.iter().map(|&d| Int(d)).collect(),
            Predicate::SortedAscending { axis } => alloc::vec![Int(*axis)],
            Predicate::SumsTo { target, axis, tol } => {
                alloc::vec![Real(*target), Int(*axis), Real(*tol)]
            }
            _ => Vec::new(),
        }
    }

    /// Slot names this predicate reads besides its subject.
    pub fn slot_refs(&self) -> Vec<&str> {
        match self {
            Predicate::MaxLeSlot(s) | Predicate::MinGeSlot(s) => alloc::vec![s.as_str()],
            Predicate::SameShape(a, b) => alloc::vec![a.as_str(), b.as_str()],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        let args = self.args();
        if !args.is_empty() {
            f.write_str("(")?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// One predicate occurrence with its position in the source text.
#[derive(Debug, Clone)]
pub struct PredicateAtom {
    pub predicate: Predicate,
    /// `(char offset, char length)` in the source text.
    pub span: (usize, usize),
}

impl PredicateAtom {
    pub fn name(&self) -> &'static str {
        self.predicate.name()
    }

    pub fn args(&self) -> Vec<Literal> {
        self.predicate.args()
    }
}

/// A parsed constraint expression.
///
/// Equality compares predicates only; source text and spans are ignored so
/// that an expression equals the parse of its canonical rendering.
#[derive(Debug, Clone)]
pub struct ConstraintExpr {
    pub atoms: Vec<PredicateAtom>,
    pub source_text: String,
}

impl ConstraintExpr {
    /// Canonical text: lowercase names, `", "` between atoms and arguments,
    /// all arguments positional.
    pub fn canonical(&self) -> String {
        alloc::format!("{self}")
    }

    /// Conjunction of two expressions.
    pub fn and(&self, other: &ConstraintExpr) -> ConstraintExpr {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let mut out = ConstraintExpr {
            atoms,
            source_text: String::new(),
        };
        out.source_text = out.canonical();
        out
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.atoms.iter().map(|a| &a.predicate)
    }

    pub fn slot_refs(&self) -> Vec<&str> {
        self.predicates().flat_map(|p| p.slot_refs()).collect()
    }
}

impl PartialEq for ConstraintExpr {
    fn eq(&self, other: &Self) -> bool {
        self.atoms.len() == other.atoms.len()
            && self
                .atoms
                .iter()
                .zip(&other.atoms)
                .all(|(a, b)| a.predicate == b.predicate)
    }
}

impl fmt::Display for ConstraintExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}", a.predicate)?;
        }
        Ok(())
    }
}

impl core::str::FromStr for ConstraintExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_constraints(s)
    }
}
