#![allow(dead_code)]

use dflsim::model::{self, Batch, ModelSpec, ParamVector};
use dflsim::topology::{self, MixingMatrix, TopologyKind, TopologySpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Random features and labels; the quadratic gets a random center.
pub fn random_batch(spec: &ModelSpec, n: usize, r: &mut ChaCha8Rng) -> Batch {
    let x = normal_vec(r, n * spec.input_dim, 1.0);
    let classes = spec.classes.max(1);
    let y = (0..n).map(|_| r.random_range(0..classes)).collect();
    let b = Batch::new(x, y, spec.input_dim);
    if spec.classes == 0 {
        b.with_center(normal_vec(r, spec.input_dim, 1.0))
    } else {
        b
    }
}

pub fn families() -> Vec<ModelSpec> {
    vec![
        ModelSpec::quadratic(4).with_l2(0.01),
        ModelSpec::logistic(4, 3).with_l2(5e-4),
        ModelSpec::mlp(4, 5, 3).with_l2(5e-4),
    ]
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-8)
}

/// Central differences of the loss, step `eps` per coordinate.
pub fn fd_gradient(spec: &ModelSpec, theta: &[f64], b: &Batch, eps: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + eps;
            let up = model::loss(spec, &t, b).unwrap();
            t[i] = theta[i] - eps;
            let down = model::loss(spec, &t, b).unwrap();
            t[i] = theta[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `(grad(theta + eps v) - grad(theta - eps v)) / (2 eps)`.
pub fn fd_hvp(spec: &ModelSpec, theta: &[f64], b: &Batch, v: &[f64], eps: f64) -> Vec<f64> {
    let up: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + eps * d).collect();
    let down: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - eps * d).collect();
    let gu = model::gradient(spec, &up, b).unwrap();
    let gd = model::gradient(spec, &down, b).unwrap();
    gu.iter().zip(gd.iter()).map(|(a, c)| (a - c) / (2.0 * eps)).collect()
}

/// Dense softmax-regression Hessian from its closed form
/// `mean_i (diag(p) - p p^T) kron (z z^T) + l2 I`, `z = [x; 1]`, laid out
/// as `[W (C x d) row-major | b (C)]`.
pub fn logistic_hessian(spec: &ModelSpec, theta: &[f64], b: &Batch) -> DMatrix<f64> {
    let (d, c) = (spec.input_dim, spec.classes);
    let p = c * d + c;
    let idx = |k: usize, j: usize| if j < d { k * d + j } else { c * d + k };
    let mut h = DMatrix::zeros(p, p);
    for i in 0..b.len() {
        let x = b.row(i);
        let z: Vec<f64> = (0..c)
            .map(|k| theta[c * d + k] + (0..d).map(|j| theta[k * d + j] * x[j]).sum::<f64>())
            .collect();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let pr: Vec<f64> = e.iter().map(|v| v / s).collect();
        let feat = |j: usize| if j < d { x[j] } else { 1.0 };
        for k in 0..c {
            for l in 0..c {
                let a = if k == l { pr[k] - pr[k] * pr[l] } else { -pr[k] * pr[l] };
                for j in 0..=d {
                    for jj in 0..=d {
                        h[(idx(k, j), idx(l, jj))] += a * feat(j) * feat(jj);
                    }
                }
            }
        }
    }
    h /= b.len() as f64;
    for i in 0..p {
        h[(i, i)] += spec.l2;
    }
    h
}

pub fn all_kinds() -> [TopologyKind; 5] {
    [
        TopologyKind::Ring,
        TopologyKind::Grid,
        TopologyKind::Exponential,
        TopologyKind::Full,
        TopologyKind::TimeVaryingK,
    ]
}

/// Gossip matrix of `kind` over `m` nodes; time-varying graphs use k = 3.
pub fn mixing(kind: TopologyKind, m: usize, seed: u64, round: u64) -> MixingMatrix {
    let spec = if kind == TopologyKind::TimeVaryingK {
        TopologySpec::time_varying(m, 3.min(m - 1), seed)
    } else {
        TopologySpec::new(kind, m)
    };
    topology::mixing_matrix(&topology::build_graph(&spec, round).unwrap()).unwrap()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<ParamVector> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Direct `(1/m) sum_i |x_i - mean|^2`.
pub fn consensus_oracle(xs: &[ParamVector]) -> f64 {
    let m = xs.len() as f64;
    let p = xs[0].len();
    let mean: Vec<f64> = (0..p).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / m).collect();
    xs.iter()
        .map(|x| (0..p).map(|j| (x[j] - mean[j]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / m
}
