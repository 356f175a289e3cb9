use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ConstraintExpr, Predicate};
use crate::array::{strides_of, unravel, NdArray};
use crate::num::{fmt_real, is_integral, same_value};
use crate::ArrayMap;

/// Contract phase a check belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
    Invariant,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
            Phase::Invariant => "invariant",
        })
    }
}

/// Where a violation was found.
///
/// Reductions (`sums_to`) report the index of the reduced lane, i.e. the
/// subject's multi-index with the summed axis removed; a reduction down to
/// a scalar reports `Global`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Global,
    Index(Vec<usize>),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Global => f.write_str("global"),
            Location::Index(idx) => {
                f.write_str("[")?;
                for (i, v) in idx.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observed {
    Value(#[serde(with = "crate::num::json_real")] f64),
    Text(String),
}

/// Values compare bit for bit, so a NaN observation equals itself.
impl PartialEq for Observed {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Observed::Value(a), Observed::Value(b)) => same_value(*a, *b),
            (Observed::Text(a), Observed::Text(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Observed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observed::Value(v) => f.write_str(&fmt_real(*v)),
            Observed::Text(t) => f.write_str(t),
        }
    }
}

/// One failed predicate at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub predicate: String,
    pub location: Location,
    pub observed: Observed,
    pub expectation: String,
    pub slot: String,
    pub phase: Phase,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} observed={} expected {}",
            self.phase, self.slot, self.predicate, self.location, self.observed, self.expectation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("slot '{slot}' referenced by {predicate} is not in the checking context")]
    UnresolvedSlot {
        predicate: &'static str,
        slot: String,
    },
    #[error("{predicate}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        predicate: &'static str,
        axis: usize,
        rank: usize,
    },
}

/// Evaluates every atom of `expr` against `subject` and returns all
/// violations, sorted by location (stable in atom order).
///
/// The subject's `name` is reported as the violation slot. Relational atoms
/// look their slot arguments up in `context`. Value predicates skip masked
/// cells.
pub fn check(
    expr: &ConstraintExpr,
    subject: &NdArray,
    context: &ArrayMap,
    phase: Phase,
) -> Result<Vec<Violation>, CheckError> {
    for p in expr.predicates() {
        for slot in p.slot_refs() {
            if !context.contains_key(slot) {
                return Err(CheckError::UnresolvedSlot {
                    predicate: p.name(),
                    slot: slot.to_string(),
                });
            }
        }
        let axis = match p {
            Predicate::SortedAscending { axis } | Predicate::SumsTo { axis, .. } => Some(*axis),
            _ => None,
        };
        if let Some(axis) = axis {
            if axis >= subject.rank() {
                return Err(CheckError::AxisOutOfRange {
                    predicate: p.name(),
                    axis,
                    rank: subject.rank(),
                });
            }
        }
    }
    let mut out = Vec::new();
    for p in expr.predicates() {
        let mut sink = Sink {
            out: &mut out,
            predicate: p.name(),
            slot: subject.name(),
            phase,
        };
        eval(p, subject, context, &mut sink);
    }
    out.sort_by(|a, b| a.location.cmp(&b.location));
    Ok(out)
}

struct Sink<'a> {
    out: &'a mut Vec<Violation>,
    predicate: &'static str,
    slot: &'a str,
    phase: Phase,
}

impl Sink<'_> {
    fn push(&mut self, location: Location, observed: Observed, expectation: String) {
        self.out.push(Violation {
            predicate: self.predicate.to_string(),
            location,
            observed,
            expectation,
            slot: self.slot.to_string(),
            phase: self.phase,
        });
    }

    fn cells(&mut self, a: &NdArray, ok: impl Fn(f64) -> bool, expectation: &str) {
        for (i, v) in a.unmasked() {
            if !ok(v) {
                self.push(
                    Location::Index(a.unravel(i)),
                    Observed::Value(v),
                    expectation.to_string(),
                );
            }
        }
    }
}

fn shape_text(shape: &[usize]) -> String {
    format!("{shape:?}")
}

fn eval(p: &Predicate, a: &NdArray, context: &ArrayMap, sink: &mut Sink<'_>) {
    match p {
        Predicate::Finite => sink.cells(a, f64::is_finite, "finite value"),
        Predicate::Nonnegative => sink.cells(a, |v| v >= 0.0, ">= 0"),
        Predicate::Positive => sink.cells(a, |v| v > 0.0, "> 0"),
        Predicate::InRange { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            let want = format!("in [{}, {}]", fmt_real(lo), fmt_real(hi));
            sink.cells(a, |v| lo <= v && v <= hi, &want)
        }
        Predicate::IntegerValued => sink.cells(a, is_integral, "whole number"),
        Predicate::Binary => sink.cells(a, |v| v == 0.0 || v == 1.0, "0 or 1"),
        Predicate::Nonempty => {
            if a.unmasked().next().is_none() {
                sink.push(
                    Location::Global,
                    Observed::Value(0.0),
                    "at least one unmasked cell".into(),
                );
            }
        }
        Predicate::NodataFree => {
            for i in 0..a.len() {
                if a.is_masked(i) {
                    sink.push(
                        Location::Index(a.unravel(i)),
                        Observed::Text("nodata".into()),
                        "no masked cells".into(),
                    );
                }
            }
        }
        Predicate::SortedAscending { axis } => sorted_ascending(a, *axis, sink),
        Predicate::SumsTo { target, axis, tol } => sums_to(a, *target, *axis, *tol, sink),
        Predicate::SameShape(x, y) => {
            let (sx, sy) = (context[x].shape(), context[y].shape());
            if sx != sy {
                sink.push(
                    Location::Global,
                    Observed::Text(format!("{} vs {}", shape_text(sx), shape_text(sy))),
                    format!("shape of {x} == shape of {y}"),
                );
            }
        }
        Predicate::ShapeIs(dims) => {
            if a.shape() != dims.as_slice() {
                sink.push(
                    Location::Global,
                    Observed::Text(shape_text(a.shape())),
                    format!("shape {}", shape_text(dims)),
                );
            }
        }
        Predicate::MaxLeSlot(s) => {
            let bound = context[s].unmasked().map(|(_, v)| v).reduce(f64::max);
            if let Some(b) = bound {
                let want = format!("<= max of {s} ({})", fmt_real(b));
                sink.cells(a, |v| v <= b, &want);
            }
        }
        Predicate::MinGeSlot(s) => {
            let bound = context[s].unmasked().map(|(_, v)| v).reduce(f64::min);
            if let Some(b) = bound {
                let want = format!(">= min of {s} ({})", fmt_real(b));
                sink.cells(a, |v| v >= b, &want);
            }
        }
    }
}

/// Visits every lane along `axis`: calls `f(lane_base_index, offsets)` where
/// offsets are the flat indices of the lane's cells in order.
fn for_each_lane(a: &NdArray, axis: usize, mut f: impl FnMut(Vec<usize>, Vec<usize>)) {
    let shape = a.shape();
    let strides = strides_of(shape);
    let mut reduced: Vec<usize> = shape.to_vec();
    reduced.remove(axis);
    let lanes: usize = reduced.iter().product();
    for lane in 0..lanes {
        let ridx = if reduced.is_empty() {
            Vec::new()
        } else {
            unravel(&reduced, lane)
        };
        let mut full = ridx.clone();
        full.insert(axis, 0);
        let base: usize = full.iter().zip(&strides).map(|(i, s)| i * s).sum();
        let offsets = (0..shape[axis]).map(|k| base + k * strides[axis]).collect();
        f(ridx, offsets);
    }
}

fn sorted_ascending(a: &NdArray, axis: usize, sink: &mut Sink<'_>) {
    for_each_lane(a, axis, |_, offsets| {
        let mut prev: Option<f64> = None;
        for i in offsets {
            if a.is_masked(i) {
                continue;
            }
            let v = a.data()[i];
            if let Some(p) = prev {
                if !(v >= p) {
                    sink.push(
                        Location::Index(a.unravel(i)),
                        Observed::Value(v),
                        format!(">= {} (previous along axis {axis})", fmt_real(p)),
                    );
                }
            }
            prev = Some(v);
        }
    });
}

fn sums_to(a: &NdArray, target: f64, axis: usize, tol: f64, sink: &mut Sink<'_>) {
    for_each_lane(a, axis, |ridx, offsets| {
        let mut any = false;
        let mut sum = 0.0;
        for i in offsets {
            if !a.is_masked(i) {
                any = true;
                sum += a.data()[i];
            }
        }
        if any && !((sum - target).abs() <= tol) {
            let location = if ridx.is_empty() {
                Location::Global
            } else {
                Location::Index(ridx)
            };
            sink.push(
                location,
                Observed::Value(sum),
                format!(
                    "sum along axis {axis} = {} +/- {}",
                    fmt_real(target),
                    fmt_real(tol)
                ),
            );
        }
    });
}
