//! The latent hierarchy: a global code `z0` and a chain of local codes
//! `z1..zn`, each local code conditioned on `z0` and its predecessor.
//!
//! Inference networks q(z_i | z_{i-1}, z0, x) read the shared encoder
//! features; prior networks p(z_i | z_{i-1}, z0) read only the codes. The
//! global code has a fixed standard-normal prior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fully_connected, fully_connected_backward, relu_backward_inplace, relu_inplace, Layer, Scalar};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub n_local: usize,
    pub d_local: usize,
    pub d_global: usize,
}

impl HierarchyConfig {
    pub const fn new(n_local: usize, d_local: usize, d_global: usize) -> Self {
        HierarchyConfig {
            n_local,
            d_local,
            d_global,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.d_global + self.n_local * self.d_local
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_local == 0 || self.d_local == 0 || self.d_global == 0 {
            return Err(Error::Config(format!(
                "hierarchy sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Splits a flat code into `(z0, [z1..zn])`.
    pub fn split<T: Scalar>(&self, z: &[T]) -> Result<(Vec<T>, Vec<Vec<T>>)> {
        if z.len() != self.total_dim() {
            return Err(Error::shape(format!(
                "latent vector has length {}, expected {}",
                z.len(),
                self.total_dim()
            )));
        }
        let (z0, rest) = z.split_at(self.d_global);
        Ok((z0.to_vec(), rest.chunks(self.d_local).map(<[T]>::to_vec).collect()))
    }

    /// Inverse of [`HierarchyConfig::split`].
    pub fn concat<T: Scalar>(&self, z0: &[T], locals: &[Vec<T>]) -> Vec<T> {
        let mut z = Vec::with_capacity(self.total_dim());
        z.extend_from_slice(z0);
        for l in locals {
            z.extend_from_slice(l);
        }
        z
    }
}

/// Diagonal Gaussian; log-variances are kept within [−10, 10].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<T> {
    pub mu: Vec<T>,
    pub log_var: Vec<T>,
}

impl<T: Scalar> GaussianParams<T> {
    pub fn new(mu: Vec<T>, log_var: Vec<T>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(Error::shape("mean and log-variance lengths differ"));
        }
        let log_var = log_var.into_iter().map(clamp_log_var).collect();
        Ok(GaussianParams { mu, log_var })
    }

    pub fn standard(len: usize) -> Self {
        GaussianParams {
            mu: vec![T::zero(); len],
            log_var: vec![T::zero(); len],
        }
    }

    /// Splits a network head output `[mu | raw log-variance]`.
    pub fn from_head(raw: &[T]) -> Self {
        let d = raw.len() / 2;
        GaussianParams {
            mu: raw[..d].to_vec(),
            log_var: raw[d..].iter().copied().map(clamp_log_var).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn variance(&self) -> Vec<T> {
        self.log_var.iter().map(|v| v.exp()).collect()
    }
}

pub fn clamp_log_var<T: Scalar>(v: T) -> T {
    v.max(T::lit(LOG_VAR_MIN)).min(T::lit(LOG_VAR_MAX))
}

/// Zeroes log-variance gradients where the raw head output was clamped.
pub(crate) fn head_gradient<T: Scalar>(raw: &[T], d_mu: &[T], d_log_var: &[T]) -> Vec<T> {
    let d = raw.len() / 2;
    let lo = T::lit(LOG_VAR_MIN);
    let hi = T::lit(LOG_VAR_MAX);
    let mut g = Vec::with_capacity(raw.len());
    g.extend_from_slice(d_mu);
    g.extend(raw[d..].iter().zip(d_log_var).map(|(&r, &dv)| {
        if r < lo || r > hi {
            T::zero()
        } else {
            dv
        }
    }));
    g
}

/// `mu + exp(log_var / 2) ⊙ noise`.
pub fn reparameterize<T: Scalar>(params: &GaussianParams<T>, noise: &[T]) -> Result<Vec<T>> {
    if noise.len() != params.mu.len() {
        return Err(Error::shape(format!(
            "noise length {} does not match {} latent dims",
            noise.len(),
            params.mu.len()
        )));
    }
    let half = T::lit(0.5);
    Ok(params
        .mu
        .iter()
        .zip(&params.log_var)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect())
}

/// Standard-normal draws for every code of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentNoise<T> {
    pub global: Vec<T>,
    pub locals: Vec<Vec<T>>,
}

impl<T: Scalar> LatentNoise<T> {
    pub fn zeros(cfg: &HierarchyConfig) -> Self {
        LatentNoise {
            global: vec![T::zero(); cfg.d_global],
            locals: vec![vec![T::zero(); cfg.d_local]; cfg.n_local],
        }
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &HierarchyConfig, rng: &mut R) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| T::lit(rng.sample(StandardNormal))).collect();
        let global = draw(cfg.d_global);
        let locals = (0..cfg.n_local).map(|_| draw(cfg.d_local)).collect();
        LatentNoise { global, locals }
    }

    pub fn scaled(mut self, s: T) -> Self {
        self.global.iter_mut().for_each(|v| *v *= s);
        self.locals.iter_mut().flatten().for_each(|v| *v *= s);
        self
    }
}

/// Sampled codes and the posterior parameters that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub z0: Vec<T>,
    pub locals: Vec<Vec<T>>,
    /// `[z0, z1, .., zn]` flattened.
    pub z: Vec<T>,
    /// Index 0 is q(z0|x), index i is q(z_i|z_{i-1}, z0, x).
    pub posterior: Vec<GaussianParams<T>>,
}

impl<T: Scalar> LatentState<T> {
    /// Concatenated posterior means.
    pub fn mean_code(&self) -> Vec<T> {
        self.posterior.iter().flat_map(|p| p.mu.iter().copied()).collect()
    }
}

/// Two ReLU hidden layers and a linear Gaussian head emitting `[mu | log_var]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub hidden1: Layer<T>,
    pub hidden2: Layer<T>,
    pub head: Layer<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct MlpCache<T> {
    pub input: Vec<T>,
    pub h1: Vec<T>,
    pub h2: Vec<T>,
    pub raw: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, code: usize, rng: &mut R) -> Self {
        Mlp {
            hidden1: Layer::init_uniform(&[hidden, input], hidden, rng),
            hidden2: Layer::init_uniform(&[hidden, hidden], hidden, rng),
            head: Layer::init_uniform(&[2 * code, hidden], 2 * code, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            hidden1: self.hidden1.zeros_like(),
            hidden2: self.hidden2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn layers(&self) -> [(&'static str, &Layer<T>); 3] {
        [("fc1", &self.hidden1), ("fc2", &self.hidden2), ("head", &self.head)]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut Layer<T>); 3] {
        [
            ("fc1", &mut self.hidden1),
            ("fc2", &mut self.hidden2),
            ("head", &mut self.head),
        ]
    }

    pub(crate) fn forward(&self, input: Vec<T>) -> Result<MlpCache<T>> {
        let mut h1 = fully_connected(&input, &self.hidden1)?;
        relu_inplace(&mut h1);
        let mut h2 = fully_connected(&h1, &self.hidden2)?;
        relu_inplace(&mut h2);
        let raw = fully_connected(&h2, &self.head)?;
        Ok(MlpCache { input, h1, h2, raw })
    }

    pub(crate) fn backward(&self, cache: &MlpCache<T>, d_raw: &[T], grad: &mut Mlp<T>) -> Result<Vec<T>> {
        let mut d_h2 = fully_connected_backward(&cache.h2, &self.head, d_raw, &mut grad.head)?;
        relu_backward_inplace(&cache.h2, &mut d_h2);
        let mut d_h1 = fully_connected_backward(&cache.h1, &self.hidden2, &d_h2, &mut grad.hidden2)?;
        relu_backward_inplace(&cache.h1, &mut d_h1);
        fully_connected_backward(&cache.input, &self.hidden1, &d_h1, &mut grad.hidden1)
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            hidden1: self.hidden1.cast(),
            hidden2: self.hidden2.cast(),
            head: self.head.cast(),
        }
    }
}

/// Inference-side (φ) parameters of the hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams<T> {
    /// Affine map from encoder features to `[mu | log_var]` of z0.
    pub global_head: Layer<T>,
    pub locals: Vec<Mlp<T>>,
}

/// Generative-side (θ) conditional priors for z1..zn.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorParams<T> {
    pub locals: Vec<Mlp<T>>,
}

impl<T: Scalar> PosteriorParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &HierarchyConfig, features: usize, hidden: usize, rng: &mut R) -> Self {
        let global_head = Layer::init_uniform(&[2 * cfg.d_global, features], 2 * cfg.d_global, rng);
        let locals = (0..cfg.n_local)
            .map(|i| {
                let prev = if i == 0 { 0 } else { cfg.d_local };
                Mlp::init(features + cfg.d_global + prev, hidden, cfg.d_local, rng)
            })
            .collect();
        PosteriorParams { global_head, locals }
    }

    pub fn zeros_like(&self) -> Self {
        PosteriorParams {
            global_head: self.global_head.zeros_like(),
            locals: self.locals.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PosteriorParams<U> {
        PosteriorParams {
            global_head: self.global_head.cast(),
            locals: self.locals.iter().map(Mlp::cast).collect(),
        }
    }
}

impl<T: Scalar> PriorParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &HierarchyConfig, hidden: usize, rng: &mut R) -> Self {
        let locals = (0..cfg.n_local)
            .map(|i| {
                let prev = if i == 0 { 0 } else { cfg.d_local };
                Mlp::init(prev + cfg.d_global, hidden, cfg.d_local, rng)
            })
            .collect();
        PriorParams { locals }
    }

    pub fn zeros_like(&self) -> Self {
        PriorParams {
            locals: self.locals.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PriorParams<U> {
        PriorParams {
            locals: self.locals.iter().map(Mlp::cast).collect(),
        }
    }
}

fn posterior_input<T: Scalar>(features: &[T], z0: &[T], prev: Option<&[T]>) -> Vec<T> {
    let mut v = Vec::with_capacity(features.len() + z0.len() + prev.map_or(0, <[T]>::len));
    v.extend_from_slice(features);
    v.extend_from_slice(z0);
    if let Some(p) = prev {
        v.extend_from_slice(p);
    }
    v
}

fn prior_input<T: Scalar>(z0: &[T], prev: Option<&[T]>) -> Vec<T> {
    let mut v = Vec::with_capacity(z0.len() + prev.map_or(0, <[T]>::len));
    if let Some(p) = prev {
        v.extend_from_slice(p);
    }
    v.extend_from_slice(z0);
    v
}

/// Intermediate values of the inference chain kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct PosteriorTrace<T> {
    pub global_raw: Vec<T>,
    pub locals: Vec<MlpCache<T>>,
}

fn check_geometry<T: Scalar>(cfg: &HierarchyConfig, posterior: &PosteriorParams<T>, noise: &LatentNoise<T>) -> Result<()> {
    cfg.validate()?;
    if posterior.locals.len() != cfg.n_local || noise.locals.len() != cfg.n_local {
        return Err(Error::shape(format!(
            "hierarchy expects {} local codes, parameters have {} and noise {}",
            cfg.n_local,
            posterior.locals.len(),
            noise.locals.len()
        )));
    }
    if posterior.global_head.bias.len() != 2 * cfg.d_global {
        return Err(Error::shape("global head width does not match d_global"));
    }
    Ok(())
}

pub(crate) fn infer_posterior_traced<T: Scalar>(
    features: &[T],
    cfg: &HierarchyConfig,
    posterior: &PosteriorParams<T>,
    noise: &LatentNoise<T>,
) -> Result<(LatentState<T>, PosteriorTrace<T>)> {
    check_geometry(cfg, posterior, noise)?;
    let global_raw = fully_connected(features, &posterior.global_head)?;
    let q0 = GaussianParams::from_head(&global_raw);
    let z0 = reparameterize(&q0, &noise.global)?;
    let mut params = vec![q0];
    let mut locals: Vec<Vec<T>> = Vec::with_capacity(cfg.n_local);
    let mut caches = Vec::with_capacity(cfg.n_local);
    for (i, net) in posterior.locals.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(locals[i - 1].as_slice()) };
        let cache = net.forward(posterior_input(features, &z0, prev))?;
        let q = GaussianParams::from_head(&cache.raw);
        if q.len() != cfg.d_local {
            return Err(Error::shape("local head width does not match d_local"));
        }
        locals.push(reparameterize(&q, &noise.locals[i])?);
        params.push(q);
        caches.push(cache);
    }
    let z = cfg.concat(&z0, &locals);
    Ok((
        LatentState {
            z0,
            locals,
            z,
            posterior: params,
        },
        PosteriorTrace {
            global_raw,
            locals: caches,
        },
    ))
}

/// Runs q(z0|x) then q(z_i | z_{i-1}, z0, x) for i = 1..n, sampling each
/// code with the supplied noise.
pub fn infer_posterior_chain<T: Scalar>(
    features: &[T],
    cfg: &HierarchyConfig,
    posterior: &PosteriorParams<T>,
    noise: &LatentNoise<T>,
) -> Result<LatentState<T>> {
    infer_posterior_traced(features, cfg, posterior, noise).map(|(s, _)| s)
}

pub(crate) fn prior_chain_traced<T: Scalar>(
    z0: &[T],
    locals: &[Vec<T>],
    prior: &PriorParams<T>,
) -> Result<(Vec<GaussianParams<T>>, Vec<MlpCache<T>>)> {
    if prior.locals.len() != locals.len() {
        return Err(Error::shape(format!(
            "{} prior networks for {} local codes",
            prior.locals.len(),
            locals.len()
        )));
    }
    let mut params = Vec::with_capacity(locals.len());
    let mut caches = Vec::with_capacity(locals.len());
    for (i, net) in prior.locals.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(locals[i - 1].as_slice()) };
        let cache = net.forward(prior_input(z0, prev))?;
        params.push(GaussianParams::from_head(&cache.raw));
        caches.push(cache);
    }
    Ok((params, caches))
}

/// Conditional priors p(z1|z0) and p(z_i|z_{i-1}, z0) evaluated at the
/// sampled codes of `state`. The prior of z0 is N(0, I) and not included.
pub fn prior_chain<T: Scalar>(state: &LatentState<T>, prior: &PriorParams<T>) -> Result<Vec<GaussianParams<T>>> {
    prior_chain_traced(&state.z0, &state.locals, prior).map(|(p, _)| p)
}

/// Ancestral sampling of a flat code: z0 ~ N(0, I), then each local code
/// from its conditional prior.
pub fn ancestral_sample<T: Scalar, R: Rng + ?Sized>(
    cfg: &HierarchyConfig,
    prior: &PriorParams<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let noise = LatentNoise::<T>::sample(cfg, rng);
    let z0 = noise.global.clone();
    let mut locals: Vec<Vec<T>> = Vec::with_capacity(cfg.n_local);
    for (i, net) in prior.locals.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(locals[i - 1].as_slice()) };
        let cache = net.forward(prior_input(&z0, prev))?;
        locals.push(reparameterize(&GaussianParams::from_head(&cache.raw), &noise.locals[i])?);
    }
    Ok(cfg.concat(&z0, &locals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: HierarchyConfig, features: usize) -> (PosteriorParams<f64>, PriorParams<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (
            PosteriorParams::init(&cfg, features, 16, &mut rng),
            PriorParams::init(&cfg, 16, &mut rng),
        )
    }

    #[test]
    fn zero_noise_returns_mean() {
        let p = GaussianParams::new(vec![1.0, -2.0], vec![0.3, -1.0]).unwrap();
        assert_eq!(reparameterize(&p, &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        assert!(reparameterize(&p, &[0.0]).is_err());
    }

    #[test]
    fn unit_gaussian_sample_variance() {
        let p = GaussianParams::<f64>::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| reparameterize(&p, &[rng.sample(StandardNormal)]).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn clamped_log_var_floor() {
        let p = GaussianParams::<f64>::new(vec![3.0], vec![-50.0]).unwrap();
        assert_eq!(p.log_var[0], -10.0);
        let s = reparameterize(&p, &[2.0]).unwrap()[0];
        assert!((s - 3.0).abs() <= (-5.0f64).exp() * 2.0 + 1e-15);
        let q = GaussianParams::from_head(&[0.0, 0.0, 99.0, -99.0]);
        assert_eq!(q.log_var, vec![10.0, -10.0]);
    }

    #[test]
    fn code_lengths_follow_config() {
        for (cfg, total) in [(HierarchyConfig::new(5, 10, 20), 70), (HierarchyConfig::new(5, 5, 10), 35)] {
            let (post, _) = setup(cfg, 24);
            let feats = vec![0.1; 24];
            let s = infer_posterior_chain(&feats, &cfg, &post, &LatentNoise::zeros(&cfg)).unwrap();
            assert_eq!(s.z.len(), total);
            assert_eq!(s.z, s.mean_code());
            assert_eq!(cfg.split(&s.z).unwrap(), (s.z0.clone(), s.locals.clone()));
        }
    }

    #[test]
    fn mismatched_features_are_rejected() {
        let cfg = HierarchyConfig::new(2, 3, 4);
        let (post, _) = setup(cfg, 24);
        assert!(infer_posterior_chain(&[0.0; 23], &cfg, &post, &LatentNoise::zeros(&cfg)).is_err());
        let other = HierarchyConfig::new(3, 3, 4);
        assert!(infer_posterior_chain(&[0.0; 24], &other, &post, &LatentNoise::zeros(&other)).is_err());
    }

    #[test]
    fn zero_prior_networks_give_unit_gaussians() {
        let cfg = HierarchyConfig::new(5, 3, 4);
        let (post, prior) = setup(cfg, 8);
        let zero = PriorParams {
            locals: prior.locals.iter().map(Mlp::zeros_like).collect(),
        };
        let s = infer_posterior_chain(&[0.5; 8], &cfg, &post, &LatentNoise::zeros(&cfg)).unwrap();
        let p = prior_chain(&s, &zero).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|g| *g == GaussianParams::standard(3)));

        let one = HierarchyConfig::new(1, 3, 4);
        let (post1, prior1) = setup(one, 8);
        let s1 = infer_posterior_chain(&[0.5; 8], &one, &post1, &LatentNoise::zeros(&one)).unwrap();
        assert_eq!(prior_chain(&s1, &prior1).unwrap().len(), 1);
    }

    #[test]
    fn ancestral_sampling_is_seeded() {
        let cfg = HierarchyConfig::new(3, 2, 5);
        let (_, prior) = setup(cfg, 8);
        let a = ancestral_sample(&cfg, &prior, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = ancestral_sample(&cfg, &prior, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 11);
    }
}
