//! Builtin transforms and their alternate implementations.
//!
//! Every transform reads named input slots and parameters and returns named
//! output slots. Masked input cells give masked output cells, except in
//! `focal_mean`, which leaves masked cells out of each neighbourhood mean and
//! masks an output cell only when its whole neighbourhood is masked.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::array::{ArrayError, NdArray};
use crate::module::Param;
use crate::num::is_integral;
use crate::ArrayMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("unknown transform '{0}'")]
    Unknown(String),
    #[error("missing parameter '{0}'")]
    MissingParam(&'static str),
    #[error("parameter '{name}' must be {expected}")]
    ParamType {
        name: &'static str,
        expected: &'static str,
    },
    #[error("focal_mean window must be an odd integer >= 1, got {0}")]
    BadWindow(f64),
    #[error("reclassify needs len(classes) == len(breaks) + 1, got {breaks} breaks and {classes} classes")]
    BreaksClasses { breaks: usize, classes: usize },
    #[error("weighted_sum has {weights} weights for {layers} layers")]
    WeightsLayers { weights: usize, layers: usize },
    #[error("weighted_sum layers must have rank >= 2 (layer axis first), got rank {0}")]
    LayerRank(usize),
    #[error("missing input slot '{0}'")]
    MissingInput(&'static str),
    #[error(transparent)]
    Array(#[from] ArrayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FocalAlgo {
    SlidingWindow,
    SummedAreaTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SumAlgo {
    Sequential,
    Compensated,
}

/// A builtin transform together with the implementation variant it uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    RescaleMinmax,
    FocalMean(FocalAlgo),
    WeightedSum(SumAlgo),
    Reclassify,
    ThresholdMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Scalar,
    Array,
}

/// Slots and parameters a transform expects.
#[derive(Debug, Clone, Copy)]
pub struct Signature {
    pub inputs: &'static [&'static str],
    pub outputs: &'static [&'static str],
    pub params: &'static [(&'static str, ParamKind)],
}

/// Every accepted transform reference, including the variant-qualified ones.
pub const TRANSFORM_NAMES: &[&str] = &[
    "focal_mean",
    "focal_mean/sliding_window",
    "focal_mean/summed_area_table",
    "reclassify",
    "rescale_minmax",
    "threshold_mask",
    "weighted_sum",
    "weighted_sum/compensated_sum",
    "weighted_sum/sequential_sum",
];

impl Builtin {
    /// Resolves a transform reference. A bare name picks the reference
    /// implementation (`sliding_window`, `sequential_sum`).
    pub fn resolve(name: &str) -> Result<Self, TransformError> {
        Ok(match name {
            "rescale_minmax" => Builtin::RescaleMinmax,
            "focal_mean" | "focal_mean/sliding_window" => {
                Builtin::FocalMean(FocalAlgo::SlidingWindow)
            }
            "focal_mean/summed_area_table" => Builtin::FocalMean(FocalAlgo::SummedAreaTable),
            "weighted_sum" | "weighted_sum/sequential_sum" => {
                Builtin::WeightedSum(SumAlgo::Sequential)
            }
            "weighted_sum/compensated_sum" => Builtin::WeightedSum(SumAlgo::Compensated),
            "reclassify" => Builtin::Reclassify,
            "threshold_mask" => Builtin::ThresholdMask,
            other => return Err(TransformError::Unknown(other.to_string())),
        })
    }

    /// The abstract transform name, without variant.
    pub fn family(self) -> &'static str {
        match self {
            Builtin::RescaleMinmax => "rescale_minmax",
            Builtin::FocalMean(_) => "focal_mean",
            Builtin::WeightedSum(_) => "weighted_sum",
            Builtin::Reclassify => "reclassify",
            Builtin::ThresholdMask => "threshold_mask",
        }
    }

    /// The variant-qualified name, e.g. `focal_mean/summed_area_table`.
    pub fn qualified_name(self) -> &'static str {
        match self {
            Builtin::FocalMean(FocalAlgo::SlidingWindow) => "focal_mean/sliding_window",
            Builtin::FocalMean(FocalAlgo::SummedAreaTable) => "focal_mean/summed_area_table",
            Builtin::WeightedSum(SumAlgo::Sequential) => "weighted_sum/sequential_sum",
            Builtin::WeightedSum(SumAlgo::Compensated) => "weighted_sum/compensated_sum",
            other => other.family(),
        }
    }

    /// The other registered implementations of the same family.
    pub fn alternates(self) -> Vec<Builtin> {
        let all: &[Builtin] = match self {
            Builtin::FocalMean(_) => &[
                Builtin::FocalMean(FocalAlgo::SlidingWindow),
                Builtin::FocalMean(FocalAlgo::SummedAreaTable),
            ],
            Builtin::WeightedSum(_) => &[
                Builtin::WeightedSum(SumAlgo::Sequential),
                Builtin::WeightedSum(SumAlgo::Compensated),
            ],
            _ => &[],
        };
        all.iter().copied().filter(|&b| b != self).collect()
    }

    pub fn signature(self) -> Signature {
        use ParamKind::*;
        match self {
            Builtin::RescaleMinmax => Signature {
                inputs: &["in"],
                outputs: &["out"],
                params: &[],
            },
            Builtin::FocalMean(_) => Signature {
                inputs: &["in"],
                outputs: &["out"],
                params: &[("window", Scalar)],
            },
            Builtin::WeightedSum(_) => Signature {
                inputs: &["layers"],
                outputs: &["out"],
                params: &[("weights", Array)],
            },
            Builtin::Reclassify => Signature {
                inputs: &["in"],
                outputs: &["out"],
                params: &[("breaks", Array), ("classes", Array)],
            },
            Builtin::ThresholdMask => Signature {
                inputs: &["in"],
                outputs: &["out"],
                params: &[("t", Scalar)],
            },
        }
    }

    /// Checks parameter presence, kinds and transform-specific constraints
    /// that do not depend on the data.
    pub fn validate_params(self, params: &BTreeMap<String, Param>) -> Result<(), TransformError> {
        for &(name, kind) in self.signature().params {
            let p = params.get(name).ok_or(TransformError::MissingParam(name))?;
            match (kind, p) {
                (ParamKind::Scalar, Param::Scalar(_)) => {}
                (ParamKind::Array, _) => {}
                (ParamKind::Scalar, Param::Array(_)) => {
                    return Err(TransformError::ParamType {
                        name,
                        expected: "a scalar",
                    })
                }
            }
        }
        match self {
            Builtin::FocalMean(_) => {
                window_radius(params)?;
            }
            Builtin::Reclassify => {
                let breaks = params["breaks"].values().len();
                let classes = params["classes"].values().len();
                if classes != breaks + 1 {
                    return Err(TransformError::BreaksClasses { breaks, classes });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Runs the transform.
    pub fn apply(
        self,
        params: &BTreeMap<String, Param>,
        inputs: &ArrayMap,
    ) -> Result<ArrayMap, TransformError> {
        self.validate_params(params)?;
        let input = |slot: &'static str| inputs.get(slot).ok_or(TransformError::MissingInput(slot));
        let out = match self {
            Builtin::RescaleMinmax => rescale_minmax(input("in")?)?,
            Builtin::FocalMean(algo) => {
                let r = window_radius(params)?;
                let a = input("in")?;
                match algo {
                    FocalAlgo::SlidingWindow => focal_mean_sliding(a, r)?,
                    FocalAlgo::SummedAreaTable => focal_mean_sat(a, r)?,
                }
            }
            Builtin::WeightedSum(algo) => {
                weighted_sum(input("layers")?, params["weights"].values(), algo)?
            }
            Builtin::Reclassify => reclassify(
                input("in")?,
                params["breaks"].values(),
                params["classes"].values(),
            )?,
            Builtin::ThresholdMask => {
                let t = params["t"].values()[0];
                map_cells(input("in")?, |v| {
                    if v.is_nan() {
                        f64::NAN
                    } else if v >= t {
                        1.0
                    } else {
                        0.0
                    }
                })?
            }
        };
        let mut map = ArrayMap::new();
        map.insert("out".to_string(), out.with_name("out"));
        Ok(map)
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.qualified_name())
    }
}

fn window_radius(params: &BTreeMap<String, Param>) -> Result<usize, TransformError> {
    let w = params
        .get("window")
        .ok_or(TransformError::MissingParam("window"))?
        .values()[0];
    if !is_integral(w) || w < 1.0 || w % 2.0 != 1.0 {
        return Err(TransformError::BadWindow(w));
    }
    Ok(((w - 1.0) / 2.0) as usize)
}

fn map_cells(a: &NdArray, f: impl Fn(f64) -> f64) -> Result<NdArray, ArrayError> {
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if a.is_masked(i) { 0.0 } else { f(v) })
        .collect();
    a.with_data(data)
}

fn rescale_minmax(a: &NdArray) -> Result<NdArray, TransformError> {
    let lo = a.unmasked().map(|(_, v)| v).reduce(f64::min);
    let hi = a.unmasked().map(|(_, v)| v).reduce(f64::max);
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Ok(map_cells(a, |_| 0.0)?);
    };
    let span = hi - lo;
    Ok(if span == 0.0 {
        map_cells(a, |_| 0.0)?
    } else {
        map_cells(a, |v| (v - lo) / span)?
    })
}

fn two_d(a: &NdArray) -> Result<(usize, usize), TransformError> {
    match a.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(ArrayError::NotTwoD {
            op: "focal_mean",
            rank: s.len(),
        }
        .into()),
    }
}

fn from_cells(shape: &[usize], cells: Vec<Option<f64>>) -> Result<NdArray, ArrayError> {
    let mask: Vec<bool> = cells.iter().map(Option::is_none).collect();
    let data = cells.into_iter().map(|c| c.unwrap_or(0.0)).collect();
    NdArray::new(shape.to_vec(), data)?.with_mask(mask)
}

/// Direct neighbourhood loop; windows are clipped at the borders.
fn focal_mean_sliding(a: &NdArray, radius: usize) -> Result<NdArray, TransformError> {
    let (rows, cols) = two_d(a)?;
    let data = a.data();
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(rows - 1));
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(cols - 1));
            let mut sum = 0.0;
            let mut n = 0usize;
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let i = rr * cols + cc;
                    if !a.is_masked(i) {
                        sum += data[i];
                        n += 1;
                    }
                }
            }
            cells.push((n > 0).then(|| sum / n as f64));
        }
    }
    Ok(from_cells(a.shape(), cells)?)
}

/// Same neighbourhood means from summed-area tables of values and counts.
fn focal_mean_sat(a: &NdArray, radius: usize) -> Result<NdArray, TransformError> {
    let (rows, cols) = two_d(a)?;
    let w = cols + 1;
    let mut sum = vec![0.0f64; (rows + 1) * w];
    let mut count = vec![0usize; (rows + 1) * w];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let (v, n) = if a.is_masked(i) {
                (0.0, 0)
            } else {
                (a.data()[i], 1)
            };
            let at = (r + 1) * w + (c + 1);
            sum[at] = v + sum[at - w] + sum[at - 1] - sum[at - w - 1];
            count[at] = n + count[at - w] + count[at - 1] - count[at - w - 1];
        }
    }
    let rect = |t: &dyn Fn(usize) -> f64, r0: usize, r1: usize, c0: usize, c1: usize| {
        t((r1 + 1) * w + c1 + 1) - t(r0 * w + c1 + 1) - t((r1 + 1) * w + c0) + t(r0 * w + c0)
    };
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(rows - 1));
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(cols - 1));
            let n = count[(r1 + 1) * w + c1 + 1] + count[r0 * w + c0]
                - count[r0 * w + c1 + 1]
                - count[(r1 + 1) * w + c0];
            let s = rect(&|k| sum[k], r0, r1, c0, c1);
            cells.push((n > 0).then(|| s / n as f64));
        }
    }
    Ok(from_cells(a.shape(), cells)?)
}

fn weighted_sum(
    layers: &NdArray,
    weights: &[f64],
    algo: SumAlgo,
) -> Result<NdArray, TransformError> {
    if layers.rank() < 2 {
        return Err(TransformError::LayerRank(layers.rank()));
    }
    let k = layers.shape()[0];
    if weights.len() != k {
        return Err(TransformError::WeightsLayers {
            weights: weights.len(),
            layers: k,
        });
    }
    let shape = &layers.shape()[1..];
    let n: usize = shape.iter().product();
    let mut cells = Vec::with_capacity(n);
    for c in 0..n {
        if (0..k).any(|i| layers.is_masked(i * n + c)) {
            cells.push(None);
            continue;
        }
        let terms = (0..k).map(|i| weights[i] * layers.data()[i * n + c]);
        cells.push(Some(match algo {
            SumAlgo::Sequential => terms.fold(0.0, |acc, t| acc + t),
            SumAlgo::Compensated => neumaier(terms),
        }));
    }
    Ok(from_cells(shape, cells)?)
}

/// Neumaier's improved Kahan summation.
fn neumaier(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// Right-open intervals: `(-inf, b1) -> classes[0]`, `[b1, b2) -> classes[1]`,
/// ..., `[bk, inf) -> classes[k]`. NaN maps to NaN.
fn reclassify(a: &NdArray, breaks: &[f64], classes: &[f64]) -> Result<NdArray, TransformError> {
    if classes.len() != breaks.len() + 1 {
        return Err(TransformError::BreaksClasses {
            breaks: breaks.len(),
            classes: classes.len(),
        });
    }
    Ok(map_cells(a, |v| {
        if v.is_nan() {
            return f64::NAN;
        }
        let j = breaks.iter().position(|&b| v < b).unwrap_or(breaks.len());
        classes[j]
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(items: &[(&str, Param)]) -> BTreeMap<String, Param> {
        items
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    fn run(b: Builtin, p: &[(&str, Param)], slot: &str, a: NdArray) -> NdArray {
        let mut m = ArrayMap::new();
        m.insert(slot.to_string(), a);
        b.apply(&params(p), &m).unwrap().remove("out").unwrap()
    }

    #[test]
    fn rescale_examples() {
        let out = run(
            Builtin::RescaleMinmax,
            &[],
            "in",
            NdArray::vector(vec![0.0, 5.0, 10.0]).unwrap(),
        );
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
        let flat = run(
            Builtin::RescaleMinmax,
            &[],
            "in",
            NdArray::vector(vec![4.0, 4.0]).unwrap(),
        );
        assert_eq!(flat.data(), &[0.0, 0.0]);
    }

    #[test]
    fn focal_constant_is_identity() {
        for algo in [FocalAlgo::SlidingWindow, FocalAlgo::SummedAreaTable] {
            let out = run(
                Builtin::FocalMean(algo),
                &[("window", Param::Scalar(3.0))],
                "in",
                NdArray::filled(vec![5, 5], 7.0).unwrap(),
            );
            assert!(out.data().iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn focal_shrinks_at_edges() {
        let a = NdArray::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]).unwrap();
        let out = run(
            Builtin::FocalMean(FocalAlgo::SlidingWindow),
            &[("window", Param::Scalar(3.0))],
            "in",
            a,
        );
        assert_eq!(out.get(&[1, 1]), Some(5.0));
        assert_eq!(out.get(&[0, 0]), Some(3.0));
    }

    #[test]
    fn focal_masks_only_fully_masked_neighbourhoods() {
        let a = NdArray::from_rows(&[[1.0, 2.0, 3.0]])
            .unwrap()
            .with_mask(vec![true, false, false])
            .unwrap();
        for algo in [FocalAlgo::SlidingWindow, FocalAlgo::SummedAreaTable] {
            let out = run(
                Builtin::FocalMean(algo),
                &[("window", Param::Scalar(1.0))],
                "in",
                a.clone(),
            );
            assert!(out.is_masked(0));
            let out3 = run(
                Builtin::FocalMean(algo),
                &[("window", Param::Scalar(3.0))],
                "in",
                a.clone(),
            );
            assert!(out3.mask().is_none());
            assert_eq!(out3.data(), &[2.0, 2.5, 2.5]);
        }
    }

    #[test]
    fn focal_rejects_even_window_and_wrong_rank() {
        let mut m = ArrayMap::new();
        m.insert("in".into(), NdArray::filled(vec![2, 2], 1.0).unwrap());
        let b = Builtin::FocalMean(FocalAlgo::SlidingWindow);
        for w in [2.0, 0.0, 1.5, -1.0] {
            assert!(matches!(
                b.apply(&params(&[("window", Param::Scalar(w))]), &m),
                Err(TransformError::BadWindow(_))
            ));
        }
        m.insert("in".into(), NdArray::vector(vec![1.0]).unwrap());
        assert!(b
            .apply(&params(&[("window", Param::Scalar(1.0))]), &m)
            .is_err());
    }

    #[test]
    fn weighted_sum_examples() {
        let layers = NdArray::stack(&[
            &NdArray::vector(vec![2.0]).unwrap(),
            &NdArray::vector(vec![4.0]).unwrap(),
        ])
        .unwrap();
        for algo in [SumAlgo::Sequential, SumAlgo::Compensated] {
            let out = run(
                Builtin::WeightedSum(algo),
                &[("weights", Param::Array(vec![0.5, 0.5]))],
                "layers",
                layers.clone(),
            );
            assert_eq!(out.data(), &[3.0]);
        }
        let three = NdArray::from_rows(&[[4.0], [4.0], [1.0]]).unwrap();
        let out = run(
            Builtin::WeightedSum(SumAlgo::Sequential),
            &[("weights", Param::Array(vec![0.25, 0.25, 0.5]))],
            "layers",
            three,
        );
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn weighted_sum_shape_errors() {
        let mut m = ArrayMap::new();
        m.insert(
            "layers".into(),
            NdArray::from_rows(&[[1.0], [2.0]]).unwrap(),
        );
        let b = Builtin::WeightedSum(SumAlgo::Sequential);
        assert!(matches!(
            b.apply(&params(&[("weights", Param::Array(vec![1.0]))]), &m),
            Err(TransformError::WeightsLayers {
                weights: 1,
                layers: 2
            })
        ));
        m.insert("layers".into(), NdArray::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            b.apply(&params(&[("weights", Param::Array(vec![0.5, 0.5]))]), &m),
            Err(TransformError::LayerRank(1))
        ));
    }

    #[test]
    fn reclassify_right_open() {
        let p = [
            ("breaks", Param::Array(vec![0.0, 10.0])),
            ("classes", Param::Array(vec![1.0, 2.0, 3.0])),
        ];
        let out = run(
            Builtin::Reclassify,
            &p,
            "in",
            NdArray::vector(vec![-5.0, 5.0, 15.0, 0.0, 10.0]).unwrap(),
        );
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 2.0, 3.0]);
        let bad = [
            ("breaks", Param::Array(vec![0.0])),
            ("classes", Param::Array(vec![1.0])),
        ];
        let mut m = ArrayMap::new();
        m.insert("in".into(), NdArray::vector(vec![1.0]).unwrap());
        assert!(matches!(
            Builtin::Reclassify.apply(&params(&bad), &m),
            Err(TransformError::BreaksClasses {
                breaks: 1,
                classes: 1
            })
        ));
    }

    #[test]
    fn threshold_is_ge() {
        let out = run(
            Builtin::ThresholdMask,
            &[("t", Param::Scalar(0.5))],
            "in",
            NdArray::vector(vec![0.2, 0.5, 0.9]).unwrap(),
        );
        assert_eq!(out.data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn masks_propagate() {
        let a = NdArray::vector(vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_mask(vec![false, true, false])
            .unwrap();
        let out = run(Builtin::RescaleMinmax, &[], "in", a.clone());
        assert_eq!(out.mask(), Some(&[false, true, false][..]));
        assert_eq!(out.data(), &[0.0, 0.0, 1.0]);
        let t = run(
            Builtin::ThresholdMask,
            &[("t", Param::Scalar(2.0))],
            "in",
            a,
        );
        assert_eq!(t.mask(), Some(&[false, true, false][..]));
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let terms = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier(terms.iter().copied()), 2.0);
    }

    #[test]
    fn resolve_names() {
        for name in TRANSFORM_NAMES {
            let b = Builtin::resolve(name).unwrap();
            assert!(name.starts_with(b.family()));
        }
        assert!(Builtin::resolve("nope").is_err());
        assert_eq!(
            Builtin::FocalMean(FocalAlgo::SlidingWindow).alternates(),
            vec![Builtin::FocalMean(FocalAlgo::SummedAreaTable)]
        );
    }
}
