//! The builtin predicate vocabulary.

use serde::Serialize;

/// Type of one predicate argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgType {
    /// A real literal (`inf` / `-inf` allowed).
    Real,
    /// A zero-based axis index.
    Axis,
    /// An extent, integer >= 1.
    Extent,
    /// The name of another slot in the checking context.
    Slot,
}

impl ArgType {
    pub fn as_str(self) -> &'static str {
        match self {
            ArgType::Real => "real",
            ArgType::Axis => "axis",
            ArgType::Extent => "extent",
            ArgType::Slot => "slot",
        }
    }
}

/// Registry entry for one predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PredicateInfo {
    pub name: &'static str,
    /// Named parameters in positional order.
    pub params: &'static [(&'static str, ArgType)],
    /// When true the single listed parameter repeats one or more times.
    pub variadic: bool,
    pub description: &'static str,
}

impl PredicateInfo {
    /// Arity as shown in listings: a count, or `k+` for variadic entries.
    pub fn arity_label(&self) -> alloc::string::String {
        if self.variadic {
            alloc::format!("{}+", self.params.len())
        } else {
            alloc::format!("{}", self.params.len())
        }
    }
}

use ArgType::*;

// Sorted by name; `list_predicates` relies on it.
static PREDICATES: &[PredicateInfo] = &[
    PredicateInfo {
        name: "binary",
        params: &[],
        variadic: false,
        description: "every unmasked value is exactly 0 or 1",
    },
    PredicateInfo {
        name: "finite",
        params: &[],
        variadic: false,
        description: "every unmasked value is finite (no NaN or infinity)",
    },
    PredicateInfo {
        name: "in_range",
        params: &[("lo", Real), ("hi", Real)],
        variadic: false,
        description: "every unmasked value v satisfies lo <= v <= hi",
    },
    PredicateInfo {
        name: "integer_valued",
        params: &[],
        variadic: false,
        description: "every unmasked value is a finite whole number",
    },
    PredicateInfo {
        name: "max_le_slot",
        params: &[("slot", Slot)],
        variadic: false,
        description: "every unmasked value is <= the maximum unmasked value of another slot",
    },
    PredicateInfo {
        name: "min_ge_slot",
        params: &[("slot", Slot)],
        variadic: false,
        description: "every unmasked value is >= the minimum unmasked value of another slot",
    },
    PredicateInfo {
        name: "nodata_free",
        params: &[],
        variadic: false,
        description: "no cell is masked",
    },
    PredicateInfo {
        name: "nonempty",
        params: &[],
        variadic: false,
        description: "at least one cell is unmasked",
    },
    PredicateInfo {
        name: "nonnegative",
        params: &[],
        variadic: false,
        description: "every unmasked value is >= 0",
    },
    PredicateInfo {
        name: "positive",
        params: &[],
        variadic: false,
        description: "every unmasked value is > 0",
    },
    PredicateInfo {
        name: "same_shape",
        params: &[("a", Slot), ("b", Slot)],
        variadic: false,
        description: "slots a and b have identical shapes",
    },
    PredicateInfo {
        name: "shape_is",
        params: &[("extent", Extent)],
        variadic: true,
        description: "the array has exactly the listed extents",
    },
    PredicateInfo {
        name: "sorted_ascending",
        params: &[("axis", Axis)],
        variadic: false,
        description: "unmasked values are non-decreasing along the axis",
    },
    PredicateInfo {
        name: "sums_to",
        params: &[("target", Real), ("axis", Axis), ("tol", Real)],
        variadic: false,
        description: "unmasked values summed along the axis are within tol of target",
    },
];

/// Every builtin predicate, sorted alphabetically by name.
pub fn list_predicates() -> &'static [PredicateInfo] {
    PREDICATES
}

/// Looks a predicate up by (lowercase) name.
pub fn lookup(name: &str) -> Option<&'static PredicateInfo> {
    PREDICATES
        .binary_search_by(|p| p.name.cmp(name))
        .ok()
        .map(|i| &PREDICATES[i])
}
