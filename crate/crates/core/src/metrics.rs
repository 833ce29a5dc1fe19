//! Measured quantities and the convergence-bound calculator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector};

/// Fixed column order of the per-round CSV.
pub const CSV_HEADER: &str =
    "t,train_loss,test_loss,train_acc,test_acc,consensus_dist,grad_norm_sq,eta_t,hessian_eig";

/// Metrics for the averaged model after one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Completed rounds, starting at 1.
    pub t: usize,
    /// `(1/m) sum_i f_i(x_bar)` over the full shards.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub consensus_dist: f64,
    pub grad_norm_sq: f64,
    /// Step size used during this round.
    pub eta_t: f64,
    pub hessian_eig: Option<f64>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

impl MetricRecord {
    /// One CSV line (no newline), floats at 17 significant digits.
    pub fn csv_row(&self) -> String {
        [
            self.t.to_string(),
            fmt_f(self.train_loss),
            fmt_opt(self.test_loss),
            fmt_opt(self.train_acc),
            fmt_opt(self.test_acc),
            fmt_f(self.consensus_dist),
            fmt_f(self.grad_norm_sq),
            fmt_f(self.eta_t),
            fmt_opt(self.hessian_eig),
        ]
        .join(",")
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 9 {
            return Err(Error::invalid(format!("expected 9 CSV columns, got {}", cols.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad CSV number `{s}`: {e}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        Ok(MetricRecord {
            t: cols[0]
                .parse()
                .map_err(|e| Error::invalid(format!("bad round `{}`: {e}", cols[0])))?,
            train_loss: num(cols[1])?,
            test_loss: opt(cols[2])?,
            train_acc: opt(cols[3])?,
            test_acc: opt(cols[4])?,
            consensus_dist: num(cols[5])?,
            grad_norm_sq: num(cols[6])?,
            eta_t: num(cols[7])?,
            hessian_eig: opt(cols[8])?,
        })
    }
}

pub fn write_csv<W: Write>(mut out: W, records: &[MetricRecord]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::invalid(format!("unexpected CSV header {other:?}"))),
    }
    lines.filter(|l| !l.is_empty()).map(MetricRecord::from_csv_row).collect()
}

/// Row mean of the client models.
pub fn mean_model(xs: &[ParamVector]) -> ParamVector {
    let p = xs.first().map_or(0, |x| x.len());
    let mut mean = vec![0.0; p];
    for x in xs {
        for (a, v) in mean.iter_mut().zip(x.iter()) {
            *a += v;
        }
    }
    let m = xs.len().max(1) as f64;
    mean.iter_mut().for_each(|a| *a /= m);
    ParamVector(mean)
}

/// `(1/m) sum_i |x_i - x_bar|^2`.
pub fn consensus_distance(xs: &[ParamVector]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = mean_model(xs);
    xs.iter()
        .map(|x| x.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / xs.len() as f64
}

/// `|(1/m) sum_i grad f_i(x_bar)|^2` with `f_i` the full-shard loss.
pub fn avg_model_grad_norm_sq(spec: &ModelSpec, xs: &[ParamVector], shards: &[Batch]) -> Result<f64> {
    if shards.is_empty() {
        return Err(Error::invalid("gradient norm needs at least one shard"));
    }
    let mean = mean_model(xs);
    let mut g = vec![0.0; mean.len()];
    for b in shards {
        let gi = model::gradient(spec, &mean, b)?;
        for (a, v) in g.iter_mut().zip(gi.iter()) {
            *a += v;
        }
    }
    let m = shards.len() as f64;
    Ok(g.iter().map(|v| (v / m) * (v / m)).sum())
}

/// Train accuracy minus test accuracy.
pub fn generalization_gap(train_acc: f64, test_acc: f64) -> Result<f64> {
    for (name, v) in [("train", train_acc), ("test", test_acc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} accuracy {v} outside [0, 1]")));
        }
    }
    Ok(train_acc - test_acc)
}

/// Topology factor of the convergence bound:
/// `(l^Q + 1) / ((1 - l)^2 m^(2(Q-1))) + (l^Q + 1) / (1 - l^Q)^2`.
pub fn phi(lambda: f64, m: usize, q: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::invalid(format!("phi needs lambda in [0, 1), got {lambda}")));
    }
    if m < 2 {
        return Err(Error::invalid(format!("phi needs m >= 2, got {m}")));
    }
    if q < 1 {
        return Err(Error::invalid("phi needs Q >= 1"));
    }
    let lq = lambda.powi(q as i32);
    let first = (lq + 1.0) / ((1.0 - lambda).powi(2) * (m as f64).powi(2 * (q as i32 - 1)));
    let second = (lq + 1.0) / (1.0 - lq).powi(2);
    Ok(first + second)
}

/// Inputs of the convergence-bound calculator. `sigma_g` (global gradient
/// variance) may be replaced by the heterogeneity constant `beta`, which
/// upper-bounds it; when both are given `sigma_g` is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    #[serde(rename = "L")]
    pub l_smooth: f64,
    pub sigma_l: f64,
    #[serde(default)]
    pub sigma_g: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// `f(x_bar^1) - f*`.
    pub f_gap: f64,
    pub eta: f64,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "T")]
    pub t: u64,
    pub rho: f64,
    pub lambda: f64,
    pub m: usize,
    #[serde(rename = "Q")]
    pub q: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `2 f_gap / (T D)` with `D = eta K - 32 eta^3 K^2 L^2 - 6 eta^2 K L`.
    pub optimization_term: f64,
    pub alpha: f64,
    pub beta_coefficient: f64,
    pub phi: f64,
    pub total: f64,
    /// The variance value that entered the bound.
    pub sigma_g_used: f64,
    /// `1 / (10 K L)`.
    pub max_eta: f64,
}

/// Upper bound on `min_t E|grad f(x_bar^t)|^2` for the SAM + multi-gossip
/// scheme. Only meaningful when the smoothness and variance assumptions
/// hold with the supplied constants.
pub fn convergence_bound(b: &BoundInputs) -> Result<BoundReport> {
    let mut bad = Vec::new();
    for (name, v) in [
        ("L", b.l_smooth),
        ("sigma_l", b.sigma_l),
        ("f_gap", b.f_gap),
        ("rho", b.rho),
        ("lambda", b.lambda),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            bad.push(format!("{name}: must be finite and nonnegative, got {v}"));
        }
    }
    if !(b.eta > 0.0 && b.eta.is_finite()) {
        bad.push(format!("eta: must be positive, got {}", b.eta));
    }
    if b.k == 0 {
        bad.push("K: must be at least 1".to_string());
    }
    if b.t == 0 {
        bad.push("T: must be at least 1".to_string());
    }
    let sigma_g = match (b.sigma_g, b.beta) {
        (Some(s), _) => s,
        (None, Some(beta)) => beta,
        (None, None) => {
            bad.push("sigma_g or beta: one is required".to_string());
            0.0
        }
    };
    if !(sigma_g >= 0.0 && sigma_g.is_finite()) {
        bad.push(format!("sigma_g/beta: must be finite and nonnegative, got {sigma_g}"));
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let phi = phi(b.lambda, b.m, b.q)?;

    let (eta, k, l, rho) = (b.eta, f64::from(b.k), b.l_smooth, b.rho);
    let max_eta = 1.0 / (10.0 * k * l);
    if eta > max_eta {
        return Err(Error::config(format!(
            "step size too large for the bound: requires eta <= 1/(10 K L) = {max_eta:.6e}, got eta = {eta}"
        )));
    }
    let denom = eta * k - 32.0 * eta.powi(3) * k * k * l * l - 6.0 * eta * eta * k * l;
    if denom <= 0.0 {
        return Err(Error::config(format!(
            "step size too large for the bound: eta K - 32 eta^3 K^2 L^2 - 6 eta^2 K L = {denom:.6e} <= 0 (eta <= 1/(10 K L) required)"
        )));
    }

    let var = l * l * rho * rho + sigma_g * sigma_g + b.sigma_l * b.sigma_l;
    let two_k_minus_1 = 2.0 * k - 1.0;
    let rho4 = rho.powi(4);

    let alpha = eta * k * l / (2.0 * denom)
        * (2.0 * k * l
            * (4.0 * k.powi(3) * l * l * eta * eta * rho4 / two_k_minus_1
                + 8.0 * k * eta * eta * var
                + rho * rho / two_k_minus_1)
            + eta * (l * l * rho * rho + b.sigma_l * b.sigma_l));

    let beta_coefficient = eta.powi(4) * k * l.powi(3) * (16.0 * eta * k * l + 3.0) / denom
        * (2.0 * k * (4.0 * k.powi(3) * l * l * rho4 / two_k_minus_1 + 8.0 * k * var)
            + 2.0 * k * rho * rho / (eta * eta * two_k_minus_1));

    let optimization_term = 2.0 * b.f_gap / (b.t as f64 * denom);
    Ok(BoundReport {
        optimization_term,
        alpha,
        beta_coefficient,
        phi,
        total: optimization_term + alpha + phi * beta_coefficient,
        sigma_g_used: sigma_g,
        max_eta,
    })
}

/// Least-squares slope of `log(running min of y)` against `log t`.
pub fn rate_fit_series(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 20 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 20 points after burn-in, got {}",
            points.len()
        )));
    }
    let mut best = f64::INFINITY;
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(t, y) in points {
        if t.is_nan() || t <= 0.0 {
            return Err(Error::invalid(format!("rate fit needs positive t, got {t}")));
        }
        best = best.min(y);
        xs.push(t.ln());
        ys.push(best.max(f64::MIN_POSITIVE).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs distinct rounds"));
    }
    Ok(sxy / sxx)
}

/// Empirical decay exponent of the squared gradient norm, skipping the
/// first `burn_in` records. A diagnostic, not a guarantee.
pub fn rate_fit(records: &[MetricRecord], burn_in: usize) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .skip(burn_in)
        .map(|r| (r.t as f64, r.grad_norm_sq))
        .collect();
    rate_fit_series(&pts)
}
