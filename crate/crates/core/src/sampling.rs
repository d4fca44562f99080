//! Offline training-set generation by Gauss-Lobatto-Chebyshev tensor-product
//! collocation.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::ParameterPoint;
use crate::Result;

/// Variable a sampling axis ranges over. `Nu` and `ContractionWidth` support
/// the two-parameter study, where the sampling is carried out on viscosity
/// and slot width rather than on (Re, lambda) directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisVariable {
    Re,
    Lambda,
    Nu,
    ContractionWidth,
}

/// One axis of the tensor sampling plan: either `n` Gauss-Lobatto-Chebyshev
/// points on `[min, max]`, or an explicit list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub variable: AxisVariable,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

impl AxisSpec {
    pub fn chebyshev(variable: AxisVariable, min: f64, max: f64, count: usize) -> Self {
        Self {
            variable,
            min: Some(min),
            max: Some(max),
            count: Some(count),
            values: None,
        }
    }

    pub fn explicit(variable: AxisVariable, values: Vec<f64>) -> Self {
        Self {
            variable,
            min: None,
            max: None,
            count: None,
            values: Some(values),
        }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if let Some(values) = &self.values {
            if values.is_empty() {
                return Err(Error::InvalidParameter("axis value list is empty".into()));
            }
            return Ok(values.clone());
        }
        match (self.min, self.max, self.count) {
            (Some(min), Some(max), Some(n)) => chebyshev_points(min, max, n),
            _ => Err(Error::InvalidParameter(
                "axis needs either explicit values or min/max/count".into(),
            )),
        }
    }
}

/// One sample of the tensor plan: raw axis values plus the derived parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub axis_values: Vec<f64>,
    pub point: ParameterPoint,
}

/// Full tensor-product sampling plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub axes: Vec<AxisSpec>,
    pub samples: Vec<Sample>,
}

/// Gauss-Lobatto-Chebyshev abscissae mapped to `[min, max]`, ascending.
///
/// `mu_j = (min+max)/2 + (max-min)/2 * cos((j-1) pi / (n-1))` for
/// `j = 1..n`; the endpoints are exact.
pub fn chebyshev_points(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 points, got {n}"
        )));
    }
    if !(min < max) {
        return Err(Error::InvalidParameter(format!(
            "need min < max, got [{min}, {max}]"
        )));
    }
    let mid = 0.5 * (min + max);
    let half = 0.5 * (max - min);
    let m = (n - 1) as f64;
    let mut pts: Vec<f64> = (0..n)
        .map(|k| mid + half * (k as f64 * std::f64::consts::PI / m).cos())
        .collect();
    pts.reverse();
    pts[0] = min;
    pts[n - 1] = max;
    Ok(pts)
}

/// Cartesian product of the axes, ordered lexicographically by axis with the
/// first axis slowest; size is the product of the per-axis counts.
pub fn tensor_plan(axes: &[AxisSpec], channel_height: f64) -> Result<SamplingPlan> {
    if axes.is_empty() {
        return Err(Error::InvalidParameter("no sampling axes given".into()));
    }
    if axes.len() > 2 {
        return Err(Error::InvalidParameter(
            "at most two sampling axes are supported".into(),
        ));
    }
    let per_axis: Vec<Vec<f64>> = axes.iter().map(|a| a.points()).collect::<Result<_>>()?;
    let mut samples = Vec::new();
    let mut index = vec![0usize; axes.len()];
    loop {
        let axis_values: Vec<f64> = index.iter().zip(&per_axis).map(|(k, p)| p[*k]).collect();
        samples.push(Sample {
            point: derive_point(axes, &axis_values, channel_height)?,
            axis_values,
        });
        // Odometer increment, last axis fastest.
        let mut pos = axes.len();
        loop {
            if pos == 0 {
                return Ok(SamplingPlan {
                    axes: axes.to_vec(),
                    samples,
                });
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < per_axis[pos].len() {
                break;
            }
            index[pos] = 0;
        }
    }
}

/// Pure conversion from raw axis values to a parameter point.
///
/// The Reynolds number uses the unit-mean-slot-velocity normalization:
/// `Re = 2 w_c / nu`. Unspecified parameters default to `lambda` taken from a
/// `Lambda`/`ContractionWidth` axis when present, otherwise they must come
/// from the caller's fixed geometry (the conversion then leaves `lambda = 1`
/// markers out by requiring both to be derivable).
fn derive_point(axes: &[AxisSpec], values: &[f64], channel_height: f64) -> Result<ParameterPoint> {
    let mut re = None;
    let mut lambda = None;
    let mut nu = None;
    let mut w_c = None;
    for (axis, &v) in axes.iter().zip(values) {
        match axis.variable {
            AxisVariable::Re => re = Some(v),
            AxisVariable::Lambda => lambda = Some(v),
            AxisVariable::Nu => nu = Some(v),
            AxisVariable::ContractionWidth => w_c = Some(v),
        }
    }
    let lambda = match (lambda, w_c) {
        (Some(l), _) => l,
        (None, Some(w)) => {
            if !(w > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "contraction width must be > 0, got {w}"
                )));
            }
            channel_height / w
        }
        (None, None) => return Err(Error::InvalidParameter("no lambda axis in plan".into())),
    };
    let re = match (re, nu) {
        (Some(r), _) => r,
        (None, Some(nu)) => {
            if !(nu > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "viscosity must be > 0, got {nu}"
                )));
            }
            2.0 * (channel_height / lambda) / nu
        }
        (None, None) => return Err(Error::InvalidParameter("no Reynolds axis in plan".into())),
    };
    ParameterPoint::new(re, lambda)
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Plain-text manifest: one line per sample with raw axis values and the
    /// derived (Re, lambda).
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str("# sample");
        for axis in &self.axes {
            out.push_str(&format!("\t{:?}", axis.variable));
        }
        out.push_str("\tre\tlambda\n");
        for (k, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{}", k + 1));
            for v in &s.axis_values {
                out.push_str(&format!("\t{v:.10e}"));
            }
            out.push_str(&format!("\t{:.10e}\t{:.10e}\n", s.point.re, s.point.lambda));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Agreement with a value printed to `place` resolution: the reference is
    /// rounded, so allow half an ulp of the last printed digit.
    fn assert_printed(actual: f64, expected: f64, place: f64) {
        assert!(
            (actual - expected).abs() <= 0.51 * place,
            "got {actual}, want {expected} +- {place}/2"
        );
    }

    #[test]
    fn nine_point_reynolds_set() {
        let pts = chebyshev_points(0.01, 90.0, 9).unwrap();
        // The second entry is fixed by the endpoint-reflection symmetry of
        // the Gauss-Lobatto abscissae (points k and n+1-k sum to min+max,
        // so pts[1] = 90.01 - 86.575 = 3.435); listings of this set that give
        // 4.466 instead break that symmetry and cannot come from the
        // Gauss-Lobatto map.
        let expected = [
            0.010, 3.435, 13.19, 27.79, 45.01, 62.22, 76.82, 86.58, 90.00,
        ];
        let place = [1e-3, 1e-3, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2];
        assert_eq!(pts.len(), 9);
        for ((a, e), p) in pts.iter().zip(expected).zip(place) {
            assert_printed(*a, e, p);
        }
        assert_eq!(pts[0], 0.01);
        assert_eq!(pts[8], 90.0);
    }

    #[test]
    fn eight_point_geometry_set() {
        let pts = chebyshev_points(0.025, 1.0, 8).unwrap();
        let expected = [0.025, 0.0733, 0.2085, 0.4040, 0.6210, 0.8165, 0.9517, 1.0];
        for (a, e) in pts.iter().zip(expected) {
            assert_printed(*a, e, 1e-4);
        }
    }

    #[test]
    fn two_points_are_the_endpoints() {
        let pts = chebyshev_points(-3.5, 7.25, 2).unwrap();
        assert_eq!(pts, vec![-3.5, 7.25]);
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(chebyshev_points(0.0, 1.0, 1).is_err());
        assert!(chebyshev_points(1.0, 1.0, 4).is_err());
        assert!(chebyshev_points(2.0, 1.0, 4).is_err());
    }

    #[test]
    fn reflection_symmetry() {
        let (min, max, n) = (0.3, 17.0, 11);
        let pts = chebyshev_points(min, max, n).unwrap();
        for k in 0..n {
            let mirrored = min + max - pts[n - 1 - k];
            assert!((pts[k] - mirrored).abs() <= 1e-12 * max.abs());
        }
        // Ascending.
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn consecutive_counts_do_not_nest() {
        // The collocation families are not hierarchical: interior points for
        // n = 9 do not reappear for n = 8.
        let p9 = chebyshev_points(0.01, 90.0, 9).unwrap();
        let p8 = chebyshev_points(0.01, 90.0, 8).unwrap();
        let interior_shared = p9[1..8]
            .iter()
            .filter(|a| p8.iter().any(|b| (*b - **a).abs() < 1e-9))
            .count();
        assert_eq!(interior_shared, 0);
    }

    #[test]
    fn single_axis_plan() {
        let plan = tensor_plan(
            &[AxisSpec::chebyshev(AxisVariable::Re, 0.01, 90.0, 9)],
            1.0,
        )
        .unwrap_err();
        // A Reynolds-only plan has no lambda source.
        assert!(matches!(plan, Error::InvalidParameter(_)));

        let plan = tensor_plan(
            &[
                AxisSpec::chebyshev(AxisVariable::Re, 0.01, 90.0, 9),
                AxisSpec::explicit(AxisVariable::Lambda, vec![15.4]),
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(plan.len(), 9);
        assert!(plan.samples.iter().all(|s| s.point.lambda == 15.4));
    }

    #[test]
    fn two_axis_plan_size_and_order() {
        let nu = AxisSpec::explicit(
            AxisVariable::Nu,
            vec![1.5e-3, 1.73446e-3, 2.375e-3, 4.125e-3, 4.76554e-3, 5e-3],
        );
        let wc = AxisSpec::chebyshev(AxisVariable::ContractionWidth, 0.1, 0.5, 7);
        let plan = tensor_plan(&[nu, wc], 1.0).unwrap();
        assert_eq!(plan.len(), 42);
        // Last axis fastest; derived Re = 2 w_c / nu.
        let s = &plan.samples[0];
        assert!((s.point.re - 2.0 * 0.1 / 1.5e-3).abs() < 1e-9);
        assert!((s.point.lambda - 10.0).abs() < 1e-12);
    }

    #[test]
    fn corner_product() {
        let a = AxisSpec::explicit(AxisVariable::Re, vec![1.0, 2.0]);
        let b = AxisSpec::explicit(AxisVariable::Lambda, vec![3.0, 4.0]);
        let plan = tensor_plan(&[a, b], 1.0).unwrap();
        assert_eq!(plan.len(), 4);
        let pairs: Vec<(f64, f64)> = plan
            .samples
            .iter()
            .map(|s| (s.point.re, s.point.lambda))
            .collect();
        assert_eq!(pairs, vec![(1.0, 3.0), (1.0, 4.0), (2.0, 3.0), (2.0, 4.0)]);
    }

    #[test]
    fn empty_axis_rejected() {
        assert!(tensor_plan(&[], 1.0).is_err());
        let empty = AxisSpec::explicit(AxisVariable::Re, vec![]);
        assert!(tensor_plan(&[empty], 1.0).is_err());
    }

    #[test]
    fn manifest_lists_every_sample() {
        let a = AxisSpec::explicit(AxisVariable::Re, vec![1.0, 2.0]);
        let b = AxisSpec::explicit(AxisVariable::Lambda, vec![5.0]);
        let plan = tensor_plan(&[a, b], 1.0).unwrap();
        let m = plan.manifest();
        assert_eq!(m.lines().count(), 3);
        assert!(m.contains("re\tlambda"));
    }
}
