//! The multi-dimensional array value type and cell-wise comparison.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{abs_diff, same_value};

/// Denominator floor for relative differences.
pub const DEFAULT_REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArrayError {
    #[error("shape must have at least one dimension")]
    EmptyShape,
    #[error("extent of axis {axis} is 0; every extent must be >= 1")]
    ZeroExtent { axis: usize },
    #[error("data has {got} values but shape {shape:?} needs {expected}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("mask has {got} entries but array has {expected} cells")]
    MaskLength { expected: usize, got: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("{op} requires 2-D, got rank {rank}")]
    NotTwoD { op: &'static str, rank: usize },
    #[error("cannot stack an empty list of arrays")]
    EmptyStack,
}

/// A dense row-major array of doubles with an optional missing-data mask.
///
/// Masked cells always store `0.0`; the mask, not the stored value, carries
/// missingness. Equality ignores `name` and compares unmasked cells bit for
/// bit (any two NaNs are considered equal).
#[derive(Clone, Debug)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
    name: String,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ArrayError> {
        let expected = checked_len(&shape)?;
        if data.len() != expected {
            return Err(ArrayError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            mask: None,
            name: String::new(),
        })
    }

    /// A 1-D array.
    pub fn vector(data: Vec<f64>) -> Result<Self, ArrayError> {
        Self::new(vec![data.len()], data)
    }

    /// A 2-D array from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ArrayError> {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            data.extend_from_slice(r.as_ref());
        }
        Self::new(vec![rows.len(), ncols], data)
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, ArrayError> {
        let n = checked_len(&shape)?;
        Self::new(shape, vec![value; n])
    }

    /// Attaches a mask (`true` = missing). An all-false mask is dropped.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self, ArrayError> {
        if mask.len() != self.data.len() {
            return Err(ArrayError::MaskLength {
                expected: self.data.len(),
                got: mask.len(),
            });
        }
        if mask.iter().any(|&m| m) {
            for (v, &m) in self.data.iter_mut().zip(&mask) {
                if m {
                    *v = 0.0;
                }
            }
            self.mask = Some(mask);
        } else {
            self.mask = None;
        }
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same shape and mask, new values. Masked cells are reset to `0.0`.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, ArrayError> {
        let out = Self::new(self.shape.clone(), data)?.with_name(self.name.clone());
        match &self.mask {
            Some(m) => out.with_mask(m.clone()),
            None => Ok(out),
        }
    }

    /// Reinterprets the data under another shape with the same cell count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, ArrayError> {
        let expected = checked_len(&shape)?;
        if expected != self.data.len() {
            return Err(ArrayError::DataLength {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        let mut out = self.clone();
        out.shape = shape;
        Ok(out)
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(parts: &[&NdArray]) -> Result<Self, ArrayError> {
        let first = parts.first().ok_or(ArrayError::EmptyStack)?;
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * parts.len());
        let mut mask = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(ArrayError::ShapeMismatch {
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
            mask.extend((0..p.len()).map(|i| p.is_masked(i)));
        }
        Self::new(shape, data)?.with_mask(mask)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of cells (never zero).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_masked(&self, flat: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[flat])
    }

    pub fn masked_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    /// `(flat index, value)` for every unmasked cell, in row-major order.
    pub fn unmasked(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(move |(i, _)| !self.is_masked(*i))
            .map(|(i, &v)| (i, v))
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.ravel(index).map(|i| self.data[i])
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        unravel(&self.shape, flat)
    }

    /// Flat offset of a multi-index, `None` when out of bounds.
    pub fn ravel(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return None;
            }
            flat = flat * n + i;
        }
        Some(flat)
    }

    /// Mutable access for in-crate producers that keep the shape fixed.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn mask_mut(&mut self) -> Option<&mut Vec<bool>> {
        self.mask.as_mut()
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f64>, Option<Vec<bool>>) {
        (self.shape, self.data, self.mask)
    }
}

impl PartialEq for NdArray {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && (0..self.len()).all(|i| {
                let (ma, mb) = (self.is_masked(i), other.is_masked(i));
                ma == mb && (ma || same_value(self.data[i], other.data[i]))
            })
    }
}

impl fmt::Display for NdArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "array{:?}[", self.shape)?;
        for (i, v) in self.data.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if self.is_masked(i) {
                f.write_str("--")?;
            } else {
                write!(f, "{v}")?;
            }
        }
        f.write_str("]")
    }
}

fn checked_len(shape: &[usize]) -> Result<usize, ArrayError> {
    if shape.is_empty() {
        return Err(ArrayError::EmptyShape);
    }
    if let Some(axis) = shape.iter().position(|&n| n == 0) {
        return Err(ArrayError::ZeroExtent { axis });
    }
    Ok(shape.iter().product())
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

pub(crate) fn unravel(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

/// Cell-wise disagreement between two equally shaped arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    /// Zero-based multi-index of the first cell attaining `max_abs_diff`;
    /// `None` when no cell was compared.
    pub worst_cell: Option<Vec<usize>>,
    pub cells_compared: usize,
    pub mask_mismatch_count: usize,
}

impl Discrepancy {
    /// Whether the arrays agree to within `tol` with identical masks.
    pub fn within(&self, tol: f64) -> bool {
        self.mask_mismatch_count == 0 && self.max_abs_diff <= tol
    }
}

/// Compares `a` and `b` over mutually unmasked cells.
///
/// Relative differences divide by `max(|a|, |b|, rel_floor)`. Cells masked in
/// exactly one array count as mask mismatches; cells masked in both are
/// skipped.
pub fn compare(a: &NdArray, b: &NdArray, rel_floor: f64) -> Result<Discrepancy, ArrayError> {
    if a.shape != b.shape {
        return Err(ArrayError::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Discrepancy {
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
        worst_cell: None,
        cells_compared: 0,
        mask_mismatch_count: 0,
    };
    let mut worst = None;
    for i in 0..a.len() {
        match (a.is_masked(i), b.is_masked(i)) {
            (true, true) => continue,
            (true, false) | (false, true) => {
                out.mask_mismatch_count += 1;
                continue;
            }
            (false, false) => {}
        }
        let (x, y) = (a.data[i], b.data[i]);
        let d = abs_diff(x, y);
        out.cells_compared += 1;
        if worst.is_none() || d > out.max_abs_diff {
            out.max_abs_diff = d;
            worst = Some(i);
        }
        let denom = x.abs().max(y.abs()).max(rel_floor);
        let rel = if d == 0.0 {
            0.0
        } else if d.is_infinite() || !denom.is_finite() {
            f64::INFINITY
        } else {
            d / denom
        };
        if rel > out.max_rel_diff {
            out.max_rel_diff = rel;
        }
    }
    out.worst_cell = worst.map(|i| a.unravel(i));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_lengths() {
        assert_eq!(NdArray::new(vec![], vec![]), Err(ArrayError::EmptyShape));
        assert_eq!(
            NdArray::new(vec![2, 0], vec![]),
            Err(ArrayError::ZeroExtent { axis: 1 })
        );
        assert!(matches!(
            NdArray::new(vec![2, 2], vec![1.0; 3]),
            Err(ArrayError::DataLength {
                expected: 4,
                got: 3,
                ..
            })
        ));
        let a = NdArray::vector(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            a.with_mask(vec![true]),
            Err(ArrayError::MaskLength { .. })
        ));
    }

    #[test]
    fn index_round_trip() {
        let a = NdArray::filled(vec![2, 3, 4], 0.0).unwrap();
        for flat in 0..a.len() {
            assert_eq!(a.ravel(&a.unravel(flat)), Some(flat));
        }
        assert_eq!(a.unravel(23), vec![1, 2, 3]);
        assert_eq!(a.strides(), vec![12, 4, 1]);
        assert_eq!(a.ravel(&[2, 0, 0]), None);
    }

    #[test]
    fn masked_cells_are_zeroed_and_ignored_by_eq() {
        let a = NdArray::vector(vec![5.0, 1.0])
            .unwrap()
            .with_mask(vec![true, false])
            .unwrap();
        assert_eq!(a.data(), &[0.0, 1.0]);
        let b = NdArray::vector(vec![9.0, 1.0])
            .unwrap()
            .with_mask(vec![true, false])
            .unwrap();
        assert_eq!(a, b);
        let plain = NdArray::vector(vec![0.0, 1.0]).unwrap();
        assert_ne!(a, plain);
        let all_false = plain.clone().with_mask(vec![false, false]).unwrap();
        assert!(all_false.mask().is_none());
    }

    #[test]
    fn compare_identity() {
        let a = NdArray::from_rows(&[[1.0, -2.0], [3.5, 0.0]]).unwrap();
        let d = compare(&a, &a, DEFAULT_REL_FLOOR).unwrap();
        assert_eq!(d.max_abs_diff, 0.0);
        assert_eq!(d.mask_mismatch_count, 0);
        assert_eq!(d.cells_compared, 4);
    }

    #[test]
    fn compare_arithmetic() {
        let a = NdArray::vector(vec![1.0, 2.0]).unwrap();
        let b = NdArray::vector(vec![1.0, 2.5]).unwrap();
        let d = compare(&a, &b, DEFAULT_REL_FLOOR).unwrap();
        assert_eq!(d.max_abs_diff, 0.5);
        assert_eq!(d.worst_cell, Some(vec![1]));
        assert_eq!(d.max_rel_diff, 0.5 / 2.5);
    }

    #[test]
    fn compare_mask_rule() {
        let a = NdArray::vector(vec![0.0, 1.0])
            .unwrap()
            .with_mask(vec![true, false])
            .unwrap();
        let b = NdArray::vector(vec![0.0, 1.0]).unwrap();
        let d = compare(&a, &b, DEFAULT_REL_FLOOR).unwrap();
        assert_eq!(d.mask_mismatch_count, 1);
        assert_eq!(d.cells_compared, 1);
        assert!(!d.within(1.0));
    }

    #[test]
    fn compare_rejects_shape_mismatch() {
        let a = NdArray::vector(vec![1.0, 2.0]).unwrap();
        let b = NdArray::vector(vec![1.0]).unwrap();
        assert!(matches!(
            compare(&a, &b, DEFAULT_REL_FLOOR),
            Err(ArrayError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stack_adds_leading_axis() {
        let a = NdArray::vector(vec![2.0]).unwrap();
        let b = NdArray::vector(vec![4.0])
            .unwrap()
            .with_mask(vec![true])
            .unwrap();
        let s = NdArray::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert!(!s.is_masked(0));
        assert!(s.is_masked(1));
        let c = NdArray::vector(vec![1.0, 2.0]).unwrap();
        assert!(NdArray::stack(&[&a, &c]).is_err());
    }
}
