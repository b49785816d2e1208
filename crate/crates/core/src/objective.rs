//! Training objective. The quantity minimized per sample is
//!
//! ```text
//! total = −rec + δ·reg + γ·lat
//! rec   = Σ_v x·ln x̂ + (1 − x)·ln(1 − x̂)
//! reg   = KL(q(z0|x) ‖ N(0, I)) + Σ_i KL(q(z_i|z_{i-1}, z0, x) ‖ p(z_i|z_{i-1}, z0))
//! lat   = ‖z′ − z‖²
//! ```
//!
//! i.e. the negative evidence lower bound plus the latent-matching penalty
//! of the image regressor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{GaussianParams, LatentState};
use crate::nn::{sigmoid, Scalar};
use crate::voxel::VoxelGrid;

/// Probabilities are clamped to [ε, 1 − ε] before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    Fixed(f64),
    Warmup,
}

impl GammaMode {
    pub fn at(self, epoch: u64) -> f64 {
        match self {
            GammaMode::Fixed(g) => g,
            GammaMode::Warmup => warmup_gamma(epoch),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub delta: f64,
    pub gamma: GammaMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            delta: 1e-3,
            gamma: GammaMode::Warmup,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be ≥ 0, got {}", self.delta)));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be ≥ 0, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Bernoulli log-likelihood (≤ 0).
    pub rec: f64,
    /// Total KL in nats.
    pub reg: f64,
    pub lat: f64,
    pub gamma: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn compose(rec: f64, reg: f64, lat: f64, delta: f64, gamma: f64) -> Self {
        ObjectiveBreakdown {
            rec,
            reg,
            lat,
            gamma,
            total: -rec + delta * reg + gamma * lat,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rec.is_finite() && self.reg.is_finite() && self.lat.is_finite() && self.total.is_finite()
    }

    /// Mean of several breakdowns; `gamma` is taken from the first.
    pub fn mean(items: &[ObjectiveBreakdown]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&ObjectiveBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        ObjectiveBreakdown {
            rec: sum(|b| b.rec),
            reg: sum(|b| b.reg),
            lat: sum(|b| b.lat),
            gamma: items[0].gamma,
            total: sum(|b| b.total),
        }
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    p.max(T::lit(PROB_EPS)).min(T::lit(1.0 - PROB_EPS))
}

/// Bernoulli log-likelihood of binary targets (as 0/1 values) under
/// occupancy probabilities.
pub fn log_likelihood<T: Scalar>(target: &[T], probs: &[T]) -> Result<T> {
    if target.len() != probs.len() {
        return Err(Error::shape(format!(
            "{} targets vs {} probabilities",
            target.len(),
            probs.len()
        )));
    }
    Ok(target
        .iter()
        .zip(probs)
        .map(|(&x, &p)| {
            let p = clamp_prob(p);
            x * p.ln() + (T::one() - x) * (T::one() - p).ln()
        })
        .sum())
}

pub fn reconstruction_term<T: Scalar>(x: &VoxelGrid, probs: &[T]) -> Result<T> {
    let target: Vec<T> = x.cells().iter().map(|&c| if c { T::one() } else { T::zero() }).collect();
    log_likelihood(&target, probs)
}

/// Gradient of `−log_likelihood(target, sigmoid(logits))` with respect to
/// the logits: `x̂ − x`, zero where the clamp is active.
pub(crate) fn neg_log_likelihood_logit_grad<T: Scalar>(target: &[T], logits: &[T]) -> Vec<T> {
    let lo = T::lit(PROB_EPS);
    let hi = T::lit(1.0 - PROB_EPS);
    target
        .iter()
        .zip(logits)
        .map(|(&x, &l)| {
            let p = sigmoid(l);
            if p < lo || p > hi {
                T::zero()
            } else {
                p - x
            }
        })
        .collect()
}

/// KL(q ‖ N(0, I)) = Σ ½(μ² + σ² − 1 − ln σ²).
pub fn kl_to_standard_normal<T: Scalar>(q: &GaussianParams<T>) -> T {
    let half = T::lit(0.5);
    q.mu
        .iter()
        .zip(&q.log_var)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum()
}

/// KL(q ‖ p) for diagonal Gaussians.
pub fn kl_diag_gaussians<T: Scalar>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> Result<T> {
    if q.len() != p.len() {
        return Err(Error::shape(format!(
            "KL between {}- and {}-dimensional Gaussians",
            q.len(),
            p.len()
        )));
    }
    let half = T::lit(0.5);
    Ok((0..q.len())
        .map(|j| {
            let d = q.mu[j] - p.mu[j];
            let var_p = p.log_var[j].exp();
            half * (p.log_var[j] - q.log_var[j] + (q.log_var[j].exp() + d * d) / var_p - T::one())
        })
        .sum())
}

/// `(∂/∂μ, ∂/∂log σ²)` of [`kl_to_standard_normal`].
pub(crate) fn kl_standard_grad<T: Scalar>(q: &GaussianParams<T>) -> (Vec<T>, Vec<T>) {
    let half = T::lit(0.5);
    (
        q.mu.clone(),
        q.log_var.iter().map(|&lv| half * (lv.exp() - T::one())).collect(),
    )
}

pub(crate) struct KlGrad<T> {
    pub mu_q: Vec<T>,
    pub log_var_q: Vec<T>,
    pub mu_p: Vec<T>,
    pub log_var_p: Vec<T>,
}

pub(crate) fn kl_diag_grad<T: Scalar>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> KlGrad<T> {
    let half = T::lit(0.5);
    let n = q.len();
    let mut g = KlGrad {
        mu_q: Vec::with_capacity(n),
        log_var_q: Vec::with_capacity(n),
        mu_p: Vec::with_capacity(n),
        log_var_p: Vec::with_capacity(n),
    };
    for j in 0..n {
        let d = q.mu[j] - p.mu[j];
        let var_p = p.log_var[j].exp();
        let var_q = q.log_var[j].exp();
        g.mu_q.push(d / var_p);
        g.mu_p.push(-d / var_p);
        g.log_var_q.push(half * (var_q / var_p - T::one()));
        g.log_var_p.push(half * (T::one() - (var_q + d * d) / var_p));
    }
    g
}

/// Squared Euclidean distance ‖z′ − z‖².
pub fn latent_term<T: Scalar>(z_pred: &[T], z: &[T]) -> Result<T> {
    if z_pred.len() != z.len() {
        return Err(Error::shape(format!(
            "latent lengths differ: {} vs {}",
            z_pred.len(),
            z.len()
        )));
    }
    Ok(z_pred.iter().zip(z).map(|(&a, &b)| (a - b) * (a - b)).sum())
}

/// Warm-up weight of the latent-matching term at epoch `t`:
/// 10^(⌊t/10⌋−8) up to t = 50, then ⌊(t−40)/10⌋·10⁻³ below t = 100, then 5·10⁻³.
pub fn warmup_gamma(t: u64) -> f64 {
    if t <= 50 {
        10f64.powi((t / 10) as i32 - 8)
    } else if t < 100 {
        ((t - 40) / 10) as f64 * 1e-3
    } else {
        5e-3
    }
}

/// Sum of the global KL and every local KL.
pub fn kl_total<T: Scalar>(state: &LatentState<T>, priors: &[GaussianParams<T>]) -> Result<T> {
    if state.posterior.len() != priors.len() + 1 {
        return Err(Error::shape(format!(
            "{} posterior codes vs {} priors",
            state.posterior.len(),
            priors.len()
        )));
    }
    let mut reg = kl_to_standard_normal(&state.posterior[0]);
    for (q, p) in state.posterior[1..].iter().zip(priors) {
        reg += kl_diag_gaussians(q, p)?;
    }
    Ok(reg)
}

/// Per-sample objective. `z_pred` is the image regressor's prediction, when
/// one participates; without it the latent term and γ are zero.
pub fn total_objective<T: Scalar>(
    x: &VoxelGrid,
    probs: &[T],
    state: &LatentState<T>,
    priors: &[GaussianParams<T>],
    z_pred: Option<&[T]>,
    config: &ObjectiveConfig,
    epoch: u64,
) -> Result<ObjectiveBreakdown> {
    let rec = reconstruction_term(x, probs)?.as_f64();
    let reg = kl_total(state, priors)?.as_f64();
    let (lat, gamma) = match z_pred {
        Some(zp) => (latent_term(zp, &state.z)?.as_f64(), config.gamma.at(epoch)),
        None => (0.0, 0.0),
    };
    Ok(ObjectiveBreakdown::compose(rec, reg, lat, config.delta, gamma))
}
