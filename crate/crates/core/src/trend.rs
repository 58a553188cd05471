//! Two-parameter trend fits and covariate binning.
//!
//! Binary outcomes get a logistic model fitted by Newton's method, everything
//! else ordinary least squares. Both report a Wald statistic with a two-sided
//! normal-approximation p-value.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::{format_number, Kind};
use crate::error::{Error, Result};
use crate::json::float_repr;

/// Newton iteration stops with `converged = false` once `|slope|` exceeds this.
pub const SEPARATION_GUARD: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Linear,
    Logistic,
}

impl Model {
    pub fn for_outcome(kind: Kind) -> Model {
        match kind {
            Kind::Binary => Model::Logistic,
            _ => Model::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendFit {
    pub model: Model,
    #[serde(with = "float_repr")]
    pub slope: f64,
    #[serde(with = "float_repr")]
    pub intercept: f64,
    #[serde(with = "float_repr")]
    pub slope_stderr: f64,
    /// `slope / slope_stderr`; `±inf` for a perfect linear fit.
    #[serde(with = "float_repr")]
    pub statistic: f64,
    #[serde(with = "float_repr")]
    pub p_value: f64,
    pub n: usize,
    pub converged: bool,
}

impl TrendFit {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    /// -1, 0 or 1.
    pub fn sign(&self) -> i8 {
        if self.slope > 0.0 {
            1
        } else if self.slope < 0.0 {
            -1
        } else {
            0
        }
    }
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(statistic: f64) -> f64 {
    if statistic.is_nan() {
        return 1.0;
    }
    erfc(statistic.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "xs has {} values, ys has {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite value in trend data".into(),
        ));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ordinary least squares fit of `ys` on `xs`.
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<TrendFit> {
    check_inputs(xs, ys)?;
    let n = xs.len();
    let x_bar = mean(xs);
    let y_bar = mean(ys);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - x_bar;
        let dy = y - y_bar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("zero variance in x".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();

    let (slope_stderr, statistic, p_value) = if syy == 0.0 || slope == 0.0 && rss == 0.0 {
        (0.0, 0.0, 1.0)
    } else if rss <= 1e-24 * syy {
        // perfect fit
        (0.0, slope.signum() * f64::INFINITY, 0.0)
    } else {
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let z = slope / se;
        (se, z, normal_two_sided_p(z))
    };

    Ok(TrendFit {
        model: Model::Linear,
        slope,
        intercept,
        slope_stderr,
        statistic,
        p_value,
        n,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood of `(intercept, slope)`.
pub fn logistic_log_likelihood(xs: &[f64], ys: &[f64], intercept: f64, slope: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let eta = intercept + slope * x;
            y * eta - softplus(eta)
        })
        .sum()
}

/// Gradient and observed information of the log-likelihood.
fn score_and_information(xs: &[f64], ys: &[f64], b0: f64, b1: f64) -> ([f64; 2], [f64; 3]) {
    let (mut g0, mut g1) = (0.0, 0.0);
    let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let p = sigmoid(b0 + b1 * x);
        let r = y - p;
        let w = p * (1.0 - p);
        g0 += r;
        g1 += r * x;
        h00 += w;
        h01 += w * x;
        h11 += w * x * x;
    }
    ([g0, g1], [h00, h01, h11])
}

/// Maximum-likelihood logistic fit of binary `ys` on `xs`.
///
/// Perfect or quasi separation does not raise an error: the fit comes back
/// with `converged = false` and the slope held at [`SEPARATION_GUARD`].
pub fn fit_logistic(xs: &[f64], ys: &[f64], opts: LogisticOptions) -> Result<TrendFit> {
    check_inputs(xs, ys)?;
    if let Some(y) = ys.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "logistic outcome must be 0 or 1, got {y}"
        )));
    }
    let n = xs.len();
    let successes = ys.iter().sum::<f64>();
    if successes == 0.0 || successes == n as f64 {
        return Err(Error::InsufficientData("outcome has a single class".into()));
    }
    let x_bar = mean(xs);
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::InsufficientData("zero variance in x".into()));
    }

    // Newton on centered x keeps the information matrix well conditioned.
    let centered: Vec<f64> = xs.iter().map(|x| x - x_bar).collect();
    let rate = successes / n as f64;
    let mut b0 = (rate / (1.0 - rate)).ln();
    let mut b1 = 0.0;
    let mut ll = logistic_log_likelihood(&centered, ys, b0, b1);
    let mut converged = false;
    let mut diverged = false;

    for _ in 0..opts.max_iter {
        let (g, h) = score_and_information(&centered, ys, b0, b1);
        let det = h[0] * h[2] - h[1] * h[1];
        if !(det.is_finite() && det > 0.0) {
            diverged = true;
            break;
        }
        let mut s0 = (h[2] * g[0] - h[1] * g[1]) / det;
        let mut s1 = (h[0] * g[1] - h[1] * g[0]) / det;

        let mut halvings = 0;
        let (mut nb0, mut nb1, mut nll);
        loop {
            nb0 = b0 + s0;
            nb1 = b1 + s1;
            nll = logistic_log_likelihood(&centered, ys, nb0, nb1);
            if nll >= ll - 1e-12 * ll.abs().max(1.0) || halvings >= 30 {
                break;
            }
            s0 *= 0.5;
            s1 *= 0.5;
            halvings += 1;
        }
        b0 = nb0;
        b1 = nb1;
        ll = nll;

        if b1.abs() > SEPARATION_GUARD {
            b1 = b1.signum() * SEPARATION_GUARD;
            diverged = true;
            break;
        }
        if (s0 * s0 + s1 * s1).sqrt() < opts.tol {
            converged = true;
            break;
        }
    }
    if diverged {
        converged = false;
    }

    let (_, h) = score_and_information(&centered, ys, b0, b1);
    let det = h[0] * h[2] - h[1] * h[1];
    // inverse information, slope entry
    let var_slope = h[0] / det;
    let slope_stderr = if var_slope.is_finite() && var_slope >= 0.0 {
        var_slope.sqrt()
    } else {
        f64::INFINITY
    };
    let statistic = if slope_stderr.is_finite() && slope_stderr > 0.0 {
        b1 / slope_stderr
    } else if b1 == 0.0 {
        0.0
    } else {
        f64::NAN
    };

    Ok(TrendFit {
        model: Model::Logistic,
        slope: b1,
        intercept: b0 - b1 * x_bar,
        slope_stderr,
        statistic,
        p_value: normal_two_sided_p(statistic),
        n,
        converged,
    })
}

/// Fits `model`, using default Newton options for the logistic case.
pub fn fit(model: Model, xs: &[f64], ys: &[f64]) -> Result<TrendFit> {
    match model {
        Model::Linear => fit_linear(xs, ys),
        Model::Logistic => fit_logistic(xs, ys, LogisticOptions::default()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMethod {
    Quantile,
    EqualWidth,
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binning {
    pub method: BinMethod,
    pub k_requested: usize,
    pub k_effective: usize,
    /// Interval bounds (`k_effective + 1` values) or, for
    /// [`BinMethod::Distinct`], the distinct values themselves.
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
    /// Bin index of every input value.
    #[serde(skip)]
    pub assignment: Vec<usize>,
}

impl Binning {
    /// Input positions grouped by bin, ascending within each bin.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k_effective];
        for (row, &bin) in self.assignment.iter().enumerate() {
            out[bin].push(row);
        }
        out
    }
}

fn check_bin_input(values: &[f64], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidArgument(
            "number of bins must be at least 1".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot bin an empty sequence".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite value in binning input".into(),
        ));
    }
    Ok(())
}

fn interval_labels(edges: &[f64]) -> Vec<String> {
    let last = edges.len() - 2;
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let close = if i == last { ']' } else { ')' };
            format!("[{}, {}{}", format_number(w[0]), format_number(w[1]), close)
        })
        .collect()
}

/// Splits at the `i/k` empirical quantiles.
///
/// Interior edge `i` is the sorted value at rank `floor(i * n / k)`; bins are
/// left-closed `[lo, hi)` except the last, which also holds the maximum. Edges
/// that coincide with each other or with the minimum are merged away, so ties
/// never straddle two bins.
pub fn quantile_bins(values: &[f64], k: usize) -> Result<Binning> {
    check_bin_input(values, k)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];

    let mut interior: Vec<f64> = (1..k)
        .map(|i| sorted[i * n / k])
        .filter(|&e| e > min)
        .collect();
    interior.dedup();

    let assignment = values
        .iter()
        .map(|&v| interior.partition_point(|&e| e <= v))
        .collect();

    let mut edges = Vec::with_capacity(interior.len() + 2);
    edges.push(min);
    edges.extend_from_slice(&interior);
    edges.push(max);

    Ok(Binning {
        method: BinMethod::Quantile,
        k_requested: k,
        k_effective: interior.len() + 1,
        labels: interval_labels(&edges),
        edges,
        assignment,
    })
}

/// `k` intervals of equal width between the minimum and maximum. Collapses to
/// a single bin when all values are equal.
pub fn equal_width_bins(values: &[f64], k: usize) -> Result<Binning> {
    check_bin_input(values, k)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if max > min { k } else { 1 };
    let width = (max - min) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| min + width * i as f64).collect();
    edges.push(max);
    let assignment = values
        .iter()
        .map(|&v| {
            if bins == 1 {
                0
            } else {
                (((v - min) / width) as usize).min(bins - 1)
            }
        })
        .collect();
    Ok(Binning {
        method: BinMethod::EqualWidth,
        k_requested: k,
        k_effective: bins,
        labels: interval_labels(&edges),
        edges,
        assignment,
    })
}

/// One bin per distinct value, ascending.
pub fn distinct_bins(values: &[f64]) -> Result<Binning> {
    check_bin_input(values, 1)?;
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let assignment = values
        .iter()
        .map(|v| {
            distinct
                .binary_search_by(|d| d.total_cmp(v))
                .expect("value is present")
        })
        .collect();
    Ok(Binning {
        method: BinMethod::Distinct,
        k_requested: distinct.len(),
        k_effective: distinct.len(),
        labels: distinct.iter().map(|&v| format_number(v)).collect(),
        edges: distinct,
        assignment,
    })
}
