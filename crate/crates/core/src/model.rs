//! Small differentiable objectives with exact first and second order
//! information.
//!
//! Three families share one flat parameter layout convention:
//!
//! - `quadratic`: `1/2 sum_j a_j (theta_j - c_j)^2` around the batch centre `c`
//!   (curvature `a` defaults to all ones). Batch features are ignored.
//! - `logistic`: softmax regression, `theta = [W (C x d) | b (C)]`.
//! - `mlp`: one tanh hidden layer,
//!   `theta = [W1 (h x d) | b1 (h) | W2 (C x h) | b2 (C)]`.
//!
//! Every loss is the batch mean plus `(l2 / 2) * |theta|^2`.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Flat model parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(p: usize) -> Self {
        ParamVector(vec![0.0; p])
    }

    pub fn norm_sq(&self) -> f64 {
        dot(self, self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl FromIterator<f64> for ParamVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        ParamVector(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::Logistic => "logistic",
            ModelKind::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Hidden width, mlp only.
    pub hidden: usize,
    pub classes: usize,
    pub l2: f64,
    /// Diagonal curvature of the quadratic; `None` means the identity.
    pub curvature: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn quadratic(dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Quadratic,
            input_dim: dim,
            hidden: 0,
            classes: 0,
            l2: 0.0,
            curvature: None,
        }
    }

    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            hidden: 0,
            classes,
            l2: 0.0,
            curvature: None,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            hidden,
            classes,
            l2: 0.0,
            curvature: None,
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn with_curvature(mut self, curvature: Vec<f64>) -> Self {
        self.curvature = Some(curvature);
        self
    }

    pub fn num_params(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden, self.classes);
        match self.kind {
            ModelKind::Quadratic => d,
            ModelKind::Logistic => c * d + c,
            ModelKind::Mlp => h * d + h + c * h + c,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.kind != ModelKind::Quadratic
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.input_dim == 0 {
            out.push("model.input_dim: must be positive".to_string());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            out.push(format!("model.l2: must be finite and nonnegative, got {}", self.l2));
        }
        match self.kind {
            ModelKind::Quadratic => {
                if let Some(a) = &self.curvature {
                    if a.len() != self.input_dim {
                        out.push(format!(
                            "model.curvature: length {} does not match dimension {}",
                            a.len(),
                            self.input_dim
                        ));
                    }
                    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        out.push("model.curvature: entries must be finite and nonnegative".to_string());
                    }
                }
            }
            ModelKind::Logistic | ModelKind::Mlp => {
                if self.classes < 2 {
                    out.push("model.classes: classifiers need at least 2 classes".to_string());
                }
                if self.kind == ModelKind::Mlp && self.hidden == 0 {
                    out.push("model.hidden: mlp needs a positive hidden width".to_string());
                }
            }
        }
        out
    }

    /// Random initial parameters: standard normal for the quadratic,
    /// `N(0, 1/fan_in)` weights and zero biases for classifiers.
    pub fn init(&self, seed: u64, keys: &[u64]) -> ParamVector {
        let mut r = rng::stream(seed, keys);
        let mut normal = |scale: f64| -> f64 { scale * r.sample::<f64, _>(StandardNormal) };
        let (d, h, c) = (self.input_dim, self.hidden, self.classes);
        let mut out = Vec::with_capacity(self.num_params());
        match self.kind {
            ModelKind::Quadratic => out.extend((0..d).map(|_| normal(1.0))),
            ModelKind::Logistic => {
                let s = 1.0 / (d as f64).sqrt();
                out.extend((0..c * d).map(|_| normal(s)));
                out.extend(std::iter::repeat_n(0.0, c));
            }
            ModelKind::Mlp => {
                let s1 = 1.0 / (d as f64).sqrt();
                let s2 = 1.0 / (h as f64).sqrt();
                out.extend((0..h * d).map(|_| normal(s1)));
                out.extend(std::iter::repeat_n(0.0, h));
                out.extend((0..c * h).map(|_| normal(s2)));
                out.extend(std::iter::repeat_n(0.0, c));
            }
        }
        ParamVector(out)
    }
}

/// A set of samples drawn from one shard. Quadratic objectives read only
/// `center`; classifiers read `x` (row-major, `len x dim`) and `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub dim: usize,
    pub center: Option<Vec<f64>>,
}

impl Batch {
    pub fn new(x: Vec<f64>, y: Vec<usize>, dim: usize) -> Self {
        Batch {
            x,
            y,
            dim,
            center: None,
        }
    }

    /// A batch that carries only a quadratic centre.
    pub fn centered(center: Vec<f64>) -> Self {
        Batch {
            x: Vec::new(),
            y: Vec::new(),
            dim: center.len(),
            center: Some(center),
        }
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Self {
        self.center = Some(center);
        self
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `idx` of this batch, keeping the centre.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Batch {
            x,
            y,
            dim: self.dim,
            center: self.center.clone(),
        }
    }
}

fn check(spec: &ModelSpec, theta: &[f64], batch: &Batch) -> Result<()> {
    if theta.len() != spec.num_params() {
        return Err(Error::Dimension {
            expected: spec.num_params(),
            got: theta.len(),
            context: "parameter vector",
        });
    }
    match spec.kind {
        ModelKind::Quadratic => {
            let c = batch
                .center
                .as_ref()
                .ok_or_else(|| Error::invalid("quadratic objective needs a batch centre"))?;
            if c.len() != spec.input_dim {
                return Err(Error::Dimension {
                    expected: spec.input_dim,
                    got: c.len(),
                    context: "quadratic centre",
                });
            }
            if let Some(a) = &spec.curvature {
                if a.len() != spec.input_dim {
                    return Err(Error::Dimension {
                        expected: spec.input_dim,
                        got: a.len(),
                        context: "quadratic curvature",
                    });
                }
            }
        }
        ModelKind::Logistic | ModelKind::Mlp => {
            if batch.dim != spec.input_dim {
                return Err(Error::Dimension {
                    expected: spec.input_dim,
                    got: batch.dim,
                    context: "feature dimension",
                });
            }
            if batch.x.len() != batch.y.len() * batch.dim {
                return Err(Error::Dimension {
                    expected: batch.y.len() * batch.dim,
                    got: batch.x.len(),
                    context: "feature buffer",
                });
            }
            if batch.is_empty() {
                return Err(Error::invalid("empty batch"));
            }
            if let Some(&bad) = batch.y.iter().find(|&&y| y >= spec.classes) {
                return Err(Error::invalid(format!(
                    "label {bad} out of range for {} classes",
                    spec.classes
                )));
            }
        }
    }
    Ok(())
}

fn curvature(spec: &ModelSpec, j: usize) -> f64 {
    spec.curvature.as_ref().map_or(1.0, |a| a[j])
}

/// Log-sum-exp stabilised softmax of `z` in place; returns log-sum-exp.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Views of the parameter blocks.
struct Linear<'a> {
    w: &'a [f64],
    b: &'a [f64],
    rows: usize,
    cols: usize,
}

impl Linear<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            out[r] = self.b[r] + dot(&self.w[r * self.cols..(r + 1) * self.cols], x);
        }
    }

    /// `W^T g`.
    fn apply_t(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            for (o, wv) in out.iter_mut().zip(row) {
                *o += wv * g[r];
            }
        }
    }
}

struct Layout {
    d: usize,
    h: usize,
    c: usize,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Self {
        Layout {
            d: spec.input_dim,
            h: spec.hidden,
            c: spec.classes,
        }
    }

    fn logistic<'a>(&self, t: &'a [f64]) -> Linear<'a> {
        let (d, c) = (self.d, self.c);
        Linear {
            w: &t[..c * d],
            b: &t[c * d..c * d + c],
            rows: c,
            cols: d,
        }
    }

    fn mlp<'a>(&self, t: &'a [f64]) -> (Linear<'a>, Linear<'a>) {
        let (d, h, c) = (self.d, self.h, self.c);
        let o1 = h * d;
        let o2 = o1 + h;
        let o3 = o2 + c * h;
        (
            Linear {
                w: &t[..o1],
                b: &t[o1..o2],
                rows: h,
                cols: d,
            },
            Linear {
                w: &t[o2..o3],
                b: &t[o3..o3 + c],
                rows: c,
                cols: h,
            },
        )
    }

    /// Offsets of (W1, b1, W2, b2) for the mlp.
    fn mlp_offsets(&self) -> (usize, usize, usize) {
        let o1 = self.h * self.d;
        let o2 = o1 + self.h;
        (o1, o2, o2 + self.c * self.h)
    }
}

/// Accumulates `scale * outer(g, x)` into `w` and `scale * g` into `b`.
fn accumulate_outer(w: &mut [f64], b: &mut [f64], g: &[f64], x: &[f64], scale: f64) {
    let cols = x.len();
    for (r, gr) in g.iter().enumerate() {
        let s = scale * gr;
        for (wv, xv) in w[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *wv += s * xv;
        }
        b[r] += s;
    }
}

pub fn loss(spec: &ModelSpec, theta: &[f64], batch: &Batch) -> Result<f64> {
    check(spec, theta, batch)?;
    let reg = 0.5 * spec.l2 * dot(theta, theta);
    let data = match spec.kind {
        ModelKind::Quadratic => {
            let c = batch.center.as_ref().expect("checked");
            0.5 * theta
                .iter()
                .zip(c)
                .enumerate()
                .map(|(j, (t, cj))| curvature(spec, j) * (t - cj) * (t - cj))
                .sum::<f64>()
        }
        ModelKind::Logistic | ModelKind::Mlp => {
            let lay = Layout::of(spec);
            let mut z = vec![0.0; lay.c];
            let mut hidden = vec![0.0; lay.h];
            let mut total = 0.0;
            for i in 0..batch.len() {
                logits(spec, &lay, theta, batch.row(i), &mut hidden, &mut z);
                let y = batch.y[i];
                let zy = z[y];
                total += softmax_in_place(&mut z) - zy;
            }
            total / batch.len() as f64
        }
    };
    Ok(data + reg)
}

fn logits(spec: &ModelSpec, lay: &Layout, theta: &[f64], x: &[f64], hidden: &mut [f64], z: &mut [f64]) {
    match spec.kind {
        ModelKind::Logistic => lay.logistic(theta).apply(x, z),
        ModelKind::Mlp => {
            let (l1, l2) = lay.mlp(theta);
            l1.apply(x, hidden);
            hidden.iter_mut().for_each(|v| *v = v.tanh());
            l2.apply(hidden, z);
        }
        ModelKind::Quadratic => unreachable!("quadratic has no logits"),
    }
}

pub fn gradient(spec: &ModelSpec, theta: &[f64], batch: &Batch) -> Result<ParamVector> {
    check(spec, theta, batch)?;
    let p = spec.num_params();
    let mut g = vec![0.0; p];
    match spec.kind {
        ModelKind::Quadratic => {
            let c = batch.center.as_ref().expect("checked");
            for j in 0..p {
                g[j] = curvature(spec, j) * (theta[j] - c[j]);
            }
        }
        ModelKind::Logistic => {
            let lay = Layout::of(spec);
            let (d, c) = (lay.d, lay.c);
            let lin = lay.logistic(theta);
            let scale = 1.0 / batch.len() as f64;
            let mut z = vec![0.0; c];
            let (gw, gb) = g.split_at_mut(c * d);
            for i in 0..batch.len() {
                let x = batch.row(i);
                lin.apply(x, &mut z);
                softmax_in_place(&mut z);
                z[batch.y[i]] -= 1.0;
                accumulate_outer(gw, gb, &z, x, scale);
            }
        }
        ModelKind::Mlp => {
            let lay = Layout::of(spec);
            let (h, c) = (lay.h, lay.c);
            let (l1, l2) = lay.mlp(theta);
            let (o1, o2, o3) = lay.mlp_offsets();
            let scale = 1.0 / batch.len() as f64;
            let mut a = vec![0.0; h];
            let mut z = vec![0.0; c];
            let mut gh = vec![0.0; h];
            for i in 0..batch.len() {
                let x = batch.row(i);
                l1.apply(x, &mut a);
                a.iter_mut().for_each(|v| *v = v.tanh());
                l2.apply(&a, &mut z);
                softmax_in_place(&mut z);
                z[batch.y[i]] -= 1.0;
                {
                    let (_, rest) = g.split_at_mut(o2);
                    let (gw2, gb2) = rest.split_at_mut(o3 - o2);
                    accumulate_outer(gw2, gb2, &z, &a, scale);
                }
                l2.apply_t(&z, &mut gh);
                for (ghk, ak) in gh.iter_mut().zip(&a) {
                    *ghk *= 1.0 - ak * ak;
                }
                let (gw1, rest) = g.split_at_mut(o1);
                accumulate_outer(gw1, &mut rest[..o2 - o1], &gh, x, scale);
            }
        }
    }
    if spec.l2 != 0.0 {
        for (gj, tj) in g.iter_mut().zip(theta) {
            *gj += spec.l2 * tj;
        }
    }
    Ok(ParamVector(g))
}

/// Exact Hessian-vector product `H(theta) v`.
pub fn hvp(spec: &ModelSpec, theta: &[f64], batch: &Batch, v: &[f64]) -> Result<ParamVector> {
    check(spec, theta, batch)?;
    let p = spec.num_params();
    if v.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: v.len(),
            context: "hvp direction",
        });
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::invalid("hvp direction must be nonzero"));
    }
    let mut out = vec![0.0; p];
    match spec.kind {
        ModelKind::Quadratic => {
            for j in 0..p {
                out[j] = curvature(spec, j) * v[j];
            }
        }
        ModelKind::Logistic => {
            let lay = Layout::of(spec);
            let (d, c) = (lay.d, lay.c);
            let lin = lay.logistic(theta);
            let dir = lay.logistic(v);
            let scale = 1.0 / batch.len() as f64;
            let mut s = vec![0.0; c];
            let mut dz = vec![0.0; c];
            let (hw, hb) = out.split_at_mut(c * d);
            for i in 0..batch.len() {
                let x = batch.row(i);
                lin.apply(x, &mut s);
                softmax_in_place(&mut s);
                dir.apply(x, &mut dz);
                softmax_jvp(&s, &mut dz);
                accumulate_outer(hw, hb, &dz, x, scale);
            }
        }
        ModelKind::Mlp => mlp_hvp(spec, theta, batch, v, &mut out),
    }
    if spec.l2 != 0.0 {
        for (o, vj) in out.iter_mut().zip(v) {
            *o += spec.l2 * vj;
        }
    }
    Ok(ParamVector(out))
}

/// `(diag(s) - s s^T) dz`, in place.
fn softmax_jvp(s: &[f64], dz: &mut [f64]) {
    let sd = dot(s, dz);
    for (d, sk) in dz.iter_mut().zip(s) {
        *d = sk * (*d - sd);
    }
}

/// Forward-mode directional derivative of the reverse-mode gradient.
fn mlp_hvp(spec: &ModelSpec, theta: &[f64], batch: &Batch, v: &[f64], out: &mut [f64]) {
    let lay = Layout::of(spec);
    let (h, c) = (lay.h, lay.c);
    let (l1, l2) = lay.mlp(theta);
    let (v1, v2) = lay.mlp(v);
    let (o1, o2, o3) = lay.mlp_offsets();
    let scale = 1.0 / batch.len() as f64;

    let mut a = vec![0.0; h];
    let mut ra = vec![0.0; h];
    let mut rh = vec![0.0; h];
    let mut s = vec![0.0; c];
    let mut rz = vec![0.0; c];
    let mut tmp_c = vec![0.0; c];
    let mut gh = vec![0.0; h];
    let mut rgh = vec![0.0; h];
    let mut tmp_h = vec![0.0; h];
    let mut rga = vec![0.0; h];

    for i in 0..batch.len() {
        let x = batch.row(i);
        // forward and its tangent
        l1.apply(x, &mut a);
        v1.apply(x, &mut ra);
        a.iter_mut().for_each(|t| *t = t.tanh());
        for k in 0..h {
            rh[k] = (1.0 - a[k] * a[k]) * ra[k];
        }
        l2.apply(&a, &mut s);
        softmax_in_place(&mut s);
        // Rz = W2 Rh + V2 h + vb2
        v2.apply(&a, &mut rz);
        for r in 0..c {
            rz[r] += dot(&l2.w[r * h..(r + 1) * h], &rh);
        }
        // gz = s - e_y and its tangent R(gz)
        let mut gz = s.clone();
        gz[batch.y[i]] -= 1.0;
        softmax_jvp(&s, &mut rz);
        let rgz = &rz;

        // R(gW2) = R(gz) h^T + gz Rh^T ; R(gb2) = R(gz)
        {
            let (_, rest) = out.split_at_mut(o2);
            let (hw2, hb2) = rest.split_at_mut(o3 - o2);
            accumulate_outer(hw2, hb2, rgz, &a, scale);
            tmp_c.iter_mut().for_each(|t| *t = 0.0);
            accumulate_outer(hw2, &mut tmp_c, &gz, &rh, scale);
        }
        // gh = W2^T gz ; R(gh) = V2^T gz + W2^T R(gz)
        l2.apply_t(&gz, &mut gh);
        v2.apply_t(&gz, &mut rgh);
        l2.apply_t(rgz, &mut tmp_h);
        for k in 0..h {
            rgh[k] += tmp_h[k];
        }
        // R(ga) = R(gh) (1 - h^2) - 2 gh h Rh
        for k in 0..h {
            rga[k] = rgh[k] * (1.0 - a[k] * a[k]) - 2.0 * gh[k] * a[k] * rh[k];
        }
        let (hw1, rest) = out.split_at_mut(o1);
        accumulate_outer(hw1, &mut rest[..o2 - o1], &rga, x, scale);
    }
}

/// Result of a power-iteration eigenvalue estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on an implicit symmetric operator. Returns the Rayleigh
/// quotient once two successive estimates differ by at most `tol`.
pub fn power_iteration<F>(p: usize, seed: u64, max_iters: usize, tol: f64, mut apply: F) -> Result<EigenEstimate>
where
    F: FnMut(&[f64]) -> Result<ParamVector>,
{
    if max_iters == 0 {
        return Err(Error::invalid("power iteration needs max_iters >= 1"));
    }
    let mut r = rng::stream(seed, &[rng::domain::PROBE]);
    let mut v: Vec<f64> = (0..p).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);

    let mut prev = f64::NAN;
    for it in 1..=max_iters {
        let hv = apply(&v)?;
        let rq = dot(&v, &hv);
        let norm = hv.norm();
        if (rq - prev).abs() <= tol || norm == 0.0 {
            return Ok(EigenEstimate {
                value: rq,
                iterations: it,
                converged: true,
            });
        }
        prev = rq;
        for (vi, hi) in v.iter_mut().zip(hv.iter()) {
            *vi = hi / norm;
        }
    }
    Ok(EigenEstimate {
        value: prev,
        iterations: max_iters,
        converged: false,
    })
}

/// Dominant Hessian eigenvalue of the batch loss at `theta`, by power
/// iteration on [`hvp`] from a fixed-seed start vector.
pub fn largest_hessian_eig(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    max_iters: usize,
    tol: f64,
) -> Result<EigenEstimate> {
    check(spec, theta, batch)?;
    power_iteration(spec.num_params(), 0x5eed, max_iters, tol, |v| hvp(spec, theta, batch, v))
}

/// Index of the largest logit per row, ties to the lowest class.
pub fn predict(spec: &ModelSpec, theta: &[f64], batch: &Batch) -> Result<Vec<usize>> {
    if !spec.is_classifier() {
        return Err(Error::invalid("prediction is undefined for the quadratic objective"));
    }
    check(spec, theta, batch)?;
    let lay = Layout::of(spec);
    let mut z = vec![0.0; lay.c];
    let mut hidden = vec![0.0; lay.h];
    Ok((0..batch.len())
        .map(|i| {
            logits(spec, &lay, theta, batch.row(i), &mut hidden, &mut z);
            let mut best = 0;
            for k in 1..z.len() {
                if z[k] > z[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(spec: &ModelSpec, theta: &[f64], batch: &Batch) -> Result<f64> {
    if !spec.is_classifier() {
        return Err(Error::invalid("accuracy is undefined for the quadratic objective"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("accuracy of an empty slice"));
    }
    let pred = predict(spec, theta, batch)?;
    let hits = pred.iter().zip(&batch.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / batch.len() as f64)
}
