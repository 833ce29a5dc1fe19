//! Local update rules.
//!
//! Each rule takes the current parameters and a gradient oracle bound to one
//! minibatch. SAM calls the oracle twice on the same batch (at `theta` and
//! at the perturbed point); SGD and momentum call it once.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector};

/// Gradient norms below this give a zero SAM perturbation.
pub const MIN_PERTURB_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Sam,
    Momentum,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sam => "sam",
            OptimizerKind::Momentum => "momentum",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub kind: OptimizerKind,
    pub eta: f64,
    pub rho: f64,
    pub mu: f64,
    /// Heavy-ball buffer; empty unless `kind` is momentum.
    pub velocity: ParamVector,
}

impl OptState {
    pub fn sgd(eta: f64) -> Self {
        OptState {
            kind: OptimizerKind::Sgd,
            eta,
            rho: 0.0,
            mu: 0.0,
            velocity: ParamVector::default(),
        }
    }

    pub fn sam(eta: f64, rho: f64) -> Self {
        OptState {
            kind: OptimizerKind::Sam,
            rho,
            ..OptState::sgd(eta)
        }
    }

    pub fn momentum(eta: f64, mu: f64, p: usize) -> Self {
        OptState {
            kind: OptimizerKind::Momentum,
            mu,
            velocity: ParamVector::zeros(p),
            ..OptState::sgd(eta)
        }
    }

    /// One step of whichever rule `kind` names.
    pub fn step<G>(&mut self, theta: &[f64], grad: G) -> Result<ParamVector>
    where
        G: FnMut(&[f64]) -> Result<ParamVector>,
    {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(theta, self, grad),
            OptimizerKind::Sam => sam_step(theta, self, grad),
            OptimizerKind::Momentum => momentum_step(theta, self, grad),
        }
    }

    /// [`OptState::step`] with the model's exact gradient on `batch`.
    pub fn step_on(&mut self, spec: &ModelSpec, theta: &[f64], batch: &Batch) -> Result<ParamVector> {
        self.step(theta, |x| model::gradient(spec, x, batch))
    }
}

/// `rho * g / |g|`, or zero when `|g| < 1e-12`.
pub fn perturbation(g: &[f64], rho: f64) -> ParamVector {
    let norm = model::dot(g, g).sqrt();
    if rho == 0.0 || norm < MIN_PERTURB_NORM {
        return ParamVector::zeros(g.len());
    }
    let s = rho / norm;
    g.iter().map(|v| s * v).collect()
}

fn descend(theta: &[f64], eta: f64, dir: &[f64]) -> Result<ParamVector> {
    let out: ParamVector = theta.iter().zip(dir).map(|(t, d)| t - eta * d).collect();
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite {
            context: "local step".to_string(),
        })
    }
}

fn check_len(theta: &[f64], g: &[f64]) -> Result<()> {
    if theta.len() == g.len() {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: theta.len(),
            got: g.len(),
            context: "gradient",
        })
    }
}

pub fn sgd_step<G>(theta: &[f64], st: &OptState, mut grad: G) -> Result<ParamVector>
where
    G: FnMut(&[f64]) -> Result<ParamVector>,
{
    let g = grad(theta)?;
    check_len(theta, &g)?;
    descend(theta, st.eta, &g)
}

/// Ascend to `theta + delta` with `delta = rho g / |g|`, then descend from
/// `theta` along the gradient taken there.
pub fn sam_step<G>(theta: &[f64], st: &OptState, mut grad: G) -> Result<ParamVector>
where
    G: FnMut(&[f64]) -> Result<ParamVector>,
{
    let g = grad(theta)?;
    check_len(theta, &g)?;
    let delta = perturbation(&g, st.rho);
    let ascended: Vec<f64> = if delta.iter().all(|d| *d == 0.0) {
        theta.to_vec()
    } else {
        theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect()
    };
    if !ascended.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "SAM perturbation".to_string(),
        });
    }
    let g_sharp = grad(&ascended)?;
    check_len(theta, &g_sharp)?;
    descend(theta, st.eta, &g_sharp)
}

/// `v <- mu v + g; theta <- theta - eta v`. Updates `st.velocity`.
pub fn momentum_step<G>(theta: &[f64], st: &mut OptState, mut grad: G) -> Result<ParamVector>
where
    G: FnMut(&[f64]) -> Result<ParamVector>,
{
    let g = grad(theta)?;
    check_len(theta, &g)?;
    if st.velocity.len() != theta.len() {
        st.velocity = ParamVector::zeros(theta.len());
    }
    let v: ParamVector = st
        .velocity
        .iter()
        .zip(g.iter())
        .map(|(v, g)| st.mu * v + g)
        .collect();
    let out = descend(theta, st.eta, &v)?;
    st.velocity = v;
    Ok(out)
}
