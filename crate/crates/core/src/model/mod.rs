//! The hierarchical voxel VAE: 3D conv encoder, latent inference and prior
//! chains, deconv decoder, and the optional image regressor.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EpochSums, TrainState};
pub use config::{ConvSpec, ModelConfig, RegressorConfig};
pub use params::{ModelParams, RegressorParams};
pub use crate::nn::Mode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::latent::{
    ancestral_sample, head_gradient, infer_posterior_traced, prior_chain_traced, GaussianParams, LatentNoise,
    LatentState, MlpCache, PosteriorTrace,
};
use crate::nn::{
    conv2d, conv2d_backward, conv3d, conv3d_backward, deconv3d, deconv3d_backward, dropout, dropout_backward,
    fully_connected, fully_connected_backward, relu_backward_inplace, relu_inplace, sigmoid, Scalar, Tensor,
};
use crate::objective::{
    kl_diag_grad, kl_standard_grad, kl_total, latent_term, log_likelihood, neg_log_likelihood_logit_grad,
    ObjectiveBreakdown,
};
use crate::voxel::{ImageSample, VoxelGrid};

/// One training example: a voxel grid and, for the image-conditioned
/// variant, its paired rendering.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub grid: &'a VoxelGrid,
    pub image: Option<&'a ImageSample>,
}

impl<'a> Example<'a> {
    pub fn voxel(grid: &'a VoxelGrid) -> Self {
        Example { grid, image: None }
    }
}

/// Per-pass scalars: KL weight δ, latent-matching weight γ, and the
/// regressor's dropout mode and mask seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassOptions {
    pub delta: f64,
    pub gamma: f64,
    pub mode: Mode,
    pub dropout_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vsl<T = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

struct RegressorTrace<T> {
    acts: Vec<Tensor<T>>,
    h1: Vec<T>,
    mask: Option<Vec<T>>,
    h1_dropped: Vec<T>,
    h2: Vec<T>,
    z_pred: Vec<T>,
}

struct Trace<T> {
    enc: Vec<Tensor<T>>,
    state: LatentState<T>,
    post: PosteriorTrace<T>,
    priors: Vec<GaussianParams<T>>,
    prior_caches: Vec<MlpCache<T>>,
    lift_out: Vec<T>,
    dec: Vec<Tensor<T>>,
    target: Vec<T>,
    reg: Option<RegressorTrace<T>>,
}

fn to_scalar<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x as f64)).collect()
}

impl<T: Scalar> Vsl<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Vsl { config, params })
    }

    /// Wraps existing parameters after checking every tensor shape against
    /// a fresh initialization of `config`.
    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        let reference = ModelParams::<T>::init(&config, 0)?;
        let want = reference.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(Error::shape(format!(
                "config expects {} tensors, parameters have {}",
                want.len(),
                got.len()
            )));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(&got) {
            if wn != gn || wt.shape() != gt.shape() {
                return Err(Error::shape(format!(
                    "tensor {gn} {:?} does not match expected {wn} {:?}",
                    gt.shape(),
                    wt.shape()
                )));
            }
        }
        Ok(Vsl { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> Vsl<U> {
        Vsl {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_grid(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.dims() != self.config.grid_dims() {
            return Err(Error::shape(format!(
                "grid dims {:?} do not match model grid {:?}",
                grid.dims(),
                self.config.grid_dims()
            )));
        }
        Ok(())
    }

    fn encoder_forward(&self, grid: &VoxelGrid) -> Result<Vec<Tensor<T>>> {
        self.check_grid(grid)?;
        let s = self.config.grid_side;
        let mut acts = vec![Tensor::from_vec(&[1, s, s, s], to_scalar(&grid.to_f32()))?];
        for (spec, layer) in self.config.encoder.iter().zip(&self.params.encoder) {
            let mut out = conv3d(acts.last().expect("non-empty"), layer, spec.stride)?;
            relu_inplace(out.data_mut());
            acts.push(out);
        }
        Ok(acts)
    }

    /// Flattened encoder features of one grid.
    pub fn features(&self, grid: &VoxelGrid) -> Result<Vec<T>> {
        Ok(self.encoder_forward(grid)?.pop().expect("non-empty").into_data())
    }

    /// Posterior codes of one grid under the given noise.
    pub fn encode(&self, grid: &VoxelGrid, noise: &LatentNoise<T>) -> Result<LatentState<T>> {
        let h = self.features(grid)?;
        infer_posterior_traced(&h, &self.config.hierarchy, &self.params.posterior, noise).map(|(s, _)| s)
    }

    /// Deterministic code: every level sampled with zero noise, so each
    /// code is its posterior mean given the means above it.
    pub fn encode_mean(&self, grid: &VoxelGrid) -> Result<Vec<T>> {
        Ok(self.encode(grid, &LatentNoise::zeros(&self.config.hierarchy))?.z)
    }

    fn decoder_forward(&self, z: &[T]) -> Result<(Vec<T>, Vec<Tensor<T>>)> {
        if z.len() != self.config.total_dim() {
            return Err(Error::shape(format!(
                "code has {} dims, model expects {}",
                z.len(),
                self.config.total_dim()
            )));
        }
        let mut lift_out = fully_connected(z, &self.params.lift)?;
        relu_inplace(&mut lift_out);
        let e = self.config.decoder_extents()?[0];
        let c = self.config.encoder.last().expect("validated").channels;
        let mut dec = vec![Tensor::from_vec(&[c, e, e, e], lift_out.clone())?];
        let n = self.params.decoder.len();
        for (l, layer) in self.params.decoder.iter().enumerate() {
            let stride = self.config.encoder[n - 1 - l].stride;
            let mut out = deconv3d(dec.last().expect("non-empty"), layer, stride)?;
            if l + 1 < n {
                relu_inplace(out.data_mut());
            }
            dec.push(out);
        }
        Ok((lift_out, dec))
    }

    /// Occupancy logits for a flat code, x-fastest like [`VoxelGrid`].
    pub fn decode_logits(&self, z: &[T]) -> Result<Vec<T>> {
        Ok(self.decoder_forward(z)?.1.pop().expect("non-empty").into_data())
    }

    /// Occupancy probabilities for a flat code.
    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        Ok(self.decode_logits(z)?.into_iter().map(sigmoid).collect())
    }

    /// Thresholded reconstruction of a code.
    pub fn decode_grid(&self, z: &[T], threshold: f32) -> Result<VoxelGrid> {
        let probs: Vec<f32> = self.decode(z)?.iter().map(|p| p.as_f32()).collect();
        VoxelGrid::from_probabilities(self.config.grid_dims(), &probs, threshold)
    }

    fn regressor_forward(&self, image: &ImageSample, mode: Mode, seed: u64) -> Result<RegressorTrace<T>> {
        let (rc, rp) = match (&self.config.regressor, &self.params.regressor) {
            (Some(c), Some(p)) => (c, p),
            _ => return Err(Error::Config("model has no image regressor".into())),
        };
        if image.side != rc.image_side {
            return Err(Error::shape(format!(
                "image side {} does not match regressor input {}",
                image.side, rc.image_side
            )));
        }
        let s = rc.image_side;
        let mut acts = vec![Tensor::from_vec(&[3, s, s], to_scalar(&image.to_chw()))?];
        for (spec, layer) in rc.convs.iter().zip(&rp.convs) {
            let mut out = conv2d(acts.last().expect("non-empty"), layer, spec.stride)?;
            relu_inplace(out.data_mut());
            acts.push(out);
        }
        let mut h1 = fully_connected(acts.last().expect("non-empty").data(), &rp.hidden1)?;
        relu_inplace(&mut h1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h1_dropped, mask) = dropout(&h1, rc.dropout, mode, &mut rng)?;
        let mut h2 = fully_connected(&h1_dropped, &rp.hidden2)?;
        relu_inplace(&mut h2);
        let z_pred = fully_connected(&h2, &rp.head)?;
        Ok(RegressorTrace {
            acts,
            h1,
            mask,
            h1_dropped,
            h2,
            z_pred,
        })
    }

    /// Predicted flat code for an image (evaluation mode, no dropout).
    pub fn regress_image(&self, image: &ImageSample) -> Result<Vec<T>> {
        Ok(self.regressor_forward(image, Mode::Eval, 0)?.z_pred)
    }

    /// Regressor output with dropout active, for a given mask seed.
    pub fn regress_image_train(&self, image: &ImageSample, dropout_seed: u64) -> Result<Vec<T>> {
        Ok(self.regressor_forward(image, Mode::Train, dropout_seed)?.z_pred)
    }

    /// Occupancy probabilities of the shape predicted from an image.
    pub fn reconstruct_from_image(&self, image: &ImageSample) -> Result<Vec<T>> {
        self.decode(&self.regress_image(image)?)
    }

    /// Ancestral sample from the prior hierarchy, decoded to probabilities.
    pub fn sample_generative<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<T>> {
        let z = ancestral_sample(&self.config.hierarchy, &self.params.prior, rng)?;
        self.decode(&z)
    }

    /// Posterior-mean codes for many grids.
    pub fn encode_batch(&self, grids: &[VoxelGrid], exec: Exec) -> Result<Vec<Vec<T>>> {
        exec.try_map(grids, |_, g| self.encode_mean(g))
    }

    /// Decoded probabilities for many codes.
    pub fn decode_batch(&self, codes: &[Vec<T>], exec: Exec) -> Result<Vec<Vec<T>>> {
        exec.try_map(codes, |_, z| self.decode(z))
    }

    fn forward_traced(&self, ex: Example<'_>, noise: &LatentNoise<T>, opts: &PassOptions) -> Result<Trace<T>> {
        let enc = self.encoder_forward(ex.grid)?;
        let h = enc.last().expect("non-empty").data();
        let (state, post) = infer_posterior_traced(h, &self.config.hierarchy, &self.params.posterior, noise)?;
        let (priors, prior_caches) = prior_chain_traced(&state.z0, &state.locals, &self.params.prior)?;
        let (lift_out, dec) = self.decoder_forward(&state.z)?;
        let reg = match ex.image {
            Some(img) => Some(self.regressor_forward(img, opts.mode, opts.dropout_seed)?),
            None => None,
        };
        Ok(Trace {
            enc,
            state,
            post,
            priors,
            prior_caches,
            lift_out,
            dec,
            target: to_scalar(&ex.grid.to_f32()),
            reg,
        })
    }

    fn breakdown(&self, tr: &Trace<T>, opts: &PassOptions) -> Result<ObjectiveBreakdown> {
        let logits = tr.dec.last().expect("non-empty").data();
        let probs: Vec<T> = logits.iter().map(|&l| sigmoid(l)).collect();
        let rec = log_likelihood(&tr.target, &probs)?.as_f64();
        let reg = kl_total(&tr.state, &tr.priors)?.as_f64();
        let (lat, gamma) = match &tr.reg {
            Some(r) => (latent_term(&r.z_pred, &tr.state.z)?.as_f64(), opts.gamma),
            None => (0.0, 0.0),
        };
        Ok(ObjectiveBreakdown::compose(rec, reg, lat, opts.delta, gamma))
    }

    /// Per-sample objective without gradients.
    pub fn loss(&self, ex: Example<'_>, noise: &LatentNoise<T>, opts: &PassOptions) -> Result<ObjectiveBreakdown> {
        let tr = self.forward_traced(ex, noise, opts)?;
        self.breakdown(&tr, opts)
    }

    /// Per-sample objective and its gradient with respect to every
    /// parameter, accumulated into `grad`.
    pub fn loss_and_grad_into(
        &self,
        ex: Example<'_>,
        noise: &LatentNoise<T>,
        opts: &PassOptions,
        grad: &mut ModelParams<T>,
    ) -> Result<ObjectiveBreakdown> {
        let tr = self.forward_traced(ex, noise, opts)?;
        let out = self.breakdown(&tr, opts)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("non-finite objective {out:?}")));
        }
        self.backward(&tr, noise, opts, grad)?;
        Ok(out)
    }

    pub fn loss_and_grad(
        &self,
        ex: Example<'_>,
        noise: &LatentNoise<T>,
        opts: &PassOptions,
    ) -> Result<(ObjectiveBreakdown, ModelParams<T>)> {
        let mut grad = self.params.zeros_like();
        let out = self.loss_and_grad_into(ex, noise, opts, &mut grad)?;
        Ok((out, grad))
    }

    fn backward(&self, tr: &Trace<T>, noise: &LatentNoise<T>, opts: &PassOptions, g: &mut ModelParams<T>) -> Result<()> {
        let cfg = &self.config;
        let p = &self.params;
        let delta = T::lit(opts.delta);
        let half = T::lit(0.5);

        // decoder: ∂(−rec)/∂logits, back through the deconvs and the lift
        let logits = tr.dec.last().expect("non-empty");
        let mut d = Tensor::from_vec(
            logits.shape(),
            neg_log_likelihood_logit_grad(&tr.target, logits.data()),
        )?;
        let n_dec = p.decoder.len();
        for l in (0..n_dec).rev() {
            if l + 1 < n_dec {
                relu_backward_inplace(tr.dec[l + 1].data(), d.data_mut());
            }
            let stride = cfg.encoder[n_dec - 1 - l].stride;
            d = deconv3d_backward(&tr.dec[l], &p.decoder[l], stride, &d, &mut g.decoder[l], true)?
                .expect("input gradient requested");
        }
        let mut d_lift = d.into_data();
        relu_backward_inplace(&tr.lift_out, &mut d_lift);
        let mut dz = fully_connected_backward(&tr.state.z, &p.lift, &d_lift, &mut g.lift)?;

        // latent matching: γ‖z′ − z‖² pulls on both the regressor and the code
        if let Some(r) = &tr.reg {
            let gamma = T::lit(opts.gamma);
            let two = T::lit(2.0);
            let dzp: Vec<T> = r.z_pred.iter().zip(&tr.state.z).map(|(&a, &b)| two * gamma * (a - b)).collect();
            for (a, b) in dz.iter_mut().zip(&dzp) {
                *a -= *b;
            }
            self.regressor_backward(r, &dzp, g)?;
        }

        // hierarchy, deepest local code first
        let hier = &cfg.hierarchy;
        let (mut dz0, mut dloc) = hier.split(&dz)?;
        let h = tr.enc.last().expect("non-empty").data();
        let f = h.len();
        let dg = hier.d_global;
        let dl = hier.d_local;
        let mut dh = vec![T::zero(); f];
        let reparam_lv = |dzv: &[T], eps: &[T], lv: &[T]| -> Vec<T> {
            dzv.iter()
                .zip(eps)
                .zip(lv)
                .map(|((&a, &e), &v)| a * e * half * (half * v).exp())
                .collect()
        };
        for i in (0..hier.n_local).rev() {
            let q = &tr.state.posterior[i + 1];
            let pr = &tr.priors[i];
            let kg = kl_diag_grad(q, pr);
            let dmu_q: Vec<T> = kg.mu_q.iter().zip(&dloc[i]).map(|(&k, &a)| delta * k + a).collect();
            let dlv_rep = reparam_lv(&dloc[i], &noise.locals[i], &q.log_var);
            let dlv_q: Vec<T> = kg.log_var_q.iter().zip(&dlv_rep).map(|(&k, &a)| delta * k + a).collect();
            let cache = &tr.post.locals[i];
            let d_raw = head_gradient(&cache.raw, &dmu_q, &dlv_q);
            let d_in = p.posterior.locals[i].backward(cache, &d_raw, &mut g.posterior.locals[i])?;
            add_to(&mut dh, &d_in[..f]);
            add_to(&mut dz0, &d_in[f..f + dg]);
            if i > 0 {
                add_to(&mut dloc[i - 1], &d_in[f + dg..]);
            }

            let dmu_p: Vec<T> = kg.mu_p.iter().map(|&k| delta * k).collect();
            let dlv_p: Vec<T> = kg.log_var_p.iter().map(|&k| delta * k).collect();
            let pc = &tr.prior_caches[i];
            let d_raw = head_gradient(&pc.raw, &dmu_p, &dlv_p);
            let d_in = p.prior.locals[i].backward(pc, &d_raw, &mut g.prior.locals[i])?;
            if i == 0 {
                add_to(&mut dz0, &d_in);
            } else {
                add_to(&mut dloc[i - 1], &d_in[..dl]);
                add_to(&mut dz0, &d_in[dl..]);
            }
        }
        let q0 = &tr.state.posterior[0];
        let (kmu, klv) = kl_standard_grad(q0);
        let dmu0: Vec<T> = kmu.iter().zip(&dz0).map(|(&k, &a)| delta * k + a).collect();
        let dlv_rep = reparam_lv(&dz0, &noise.global, &q0.log_var);
        let dlv0: Vec<T> = klv.iter().zip(&dlv_rep).map(|(&k, &a)| delta * k + a).collect();
        let d_raw = head_gradient(&tr.post.global_raw, &dmu0, &dlv0);
        let d_in = fully_connected_backward(h, &p.posterior.global_head, &d_raw, &mut g.posterior.global_head)?;
        add_to(&mut dh, &d_in);

        // encoder
        let mut d = Tensor::from_vec(tr.enc.last().expect("non-empty").shape(), dh)?;
        for l in (0..p.encoder.len()).rev() {
            relu_backward_inplace(tr.enc[l + 1].data(), d.data_mut());
            match conv3d_backward(&tr.enc[l], &p.encoder[l], cfg.encoder[l].stride, &d, &mut g.encoder[l], l > 0)? {
                Some(next) => d = next,
                None => break,
            }
        }
        Ok(())
    }

    fn regressor_backward(&self, r: &RegressorTrace<T>, dzp: &[T], g: &mut ModelParams<T>) -> Result<()> {
        let rc = self.config.regressor.as_ref().expect("traced regressor");
        let rp = self.params.regressor.as_ref().expect("traced regressor");
        let rg = g.regressor.as_mut().expect("gradient mirrors params");
        let mut d2 = fully_connected_backward(&r.h2, &rp.head, dzp, &mut rg.head)?;
        relu_backward_inplace(&r.h2, &mut d2);
        let mut d1 = fully_connected_backward(&r.h1_dropped, &rp.hidden2, &d2, &mut rg.hidden2)?;
        dropout_backward(r.mask.as_deref(), &mut d1);
        relu_backward_inplace(&r.h1, &mut d1);
        let flat = r.acts.last().expect("non-empty");
        let d_flat = fully_connected_backward(flat.data(), &rp.hidden1, &d1, &mut rg.hidden1)?;
        let mut d = Tensor::from_vec(flat.shape(), d_flat)?;
        for l in (0..rp.convs.len()).rev() {
            relu_backward_inplace(r.acts[l + 1].data(), d.data_mut());
            match conv2d_backward(&r.acts[l], &rp.convs[l], rc.convs[l].stride, &d, &mut rg.convs[l], l > 0)? {
                Some(next) => d = next,
                None => break,
            }
        }
        Ok(())
    }
}

fn add_to<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Tiny geometry used by gradient checks and quick tests: 7³ grid,
/// encoder 7 → 3 → 2 → 1, 12×12 images.
pub fn tiny_config(with_regressor: bool) -> ModelConfig {
    use crate::latent::HierarchyConfig;
    ModelConfig {
        hierarchy: HierarchyConfig::new(2, 2, 3),
        grid_side: 7,
        encoder: vec![ConvSpec::new(2, 3, 2), ConvSpec::new(3, 2, 1), ConvSpec::new(4, 2, 1)],
        local_hidden: 5,
        regressor: with_regressor.then(|| RegressorConfig {
            image_side: 12,
            convs: vec![ConvSpec::new(2, 4, 2), ConvSpec::new(3, 3, 1)],
            hidden: [6, 5],
            dropout: 0.2,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::HierarchyConfig;
    use crate::voxel::ImageSample;

    fn blob(side: usize, seed: u64) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = VoxelGrid::cube(side).unwrap();
        for c in g.cells_mut() {
            *c = rng.gen_bool(0.4);
        }
        g
    }

    fn image(side: usize, seed: u64) -> ImageSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..side * side * 3).map(|_| rng.gen::<f32>()).collect();
        ImageSample::new(side, px, "x").unwrap()
    }

    /// Central differences of the total objective against the analytic
    /// gradient on a handful of entries of every tensor.
    fn check_gradients(with_regressor: bool) {
        let cfg = tiny_config(with_regressor);
        let mut model = Vsl::<f64>::new(cfg.clone(), 5).unwrap();
        // move zero-initialized biases off the ReLU kinks
        let mut jitter = ChaCha8Rng::seed_from_u64(6);
        for (name, t) in model.params.tensors_mut() {
            if name.ends_with(".bias") {
                t.data_mut().iter_mut().for_each(|v| *v = jitter.gen_range(-0.1..0.1));
            }
        }
        let grid = blob(7, 1);
        let img = image(12, 2);
        let ex = Example {
            grid: &grid,
            image: with_regressor.then_some(&img),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = LatentNoise::<f64>::sample(&cfg.hierarchy, &mut rng);
        // large δ and γ so every term carries weight in the check
        let opts = PassOptions {
            delta: 0.7,
            gamma: 0.3,
            mode: Mode::Train,
            dropout_seed: 4,
        };
        let (_, grad) = model.loss_and_grad(ex, &noise, &opts).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = model.params.tensors()[ti].1.len();
            for k in [0, len / 2, len - 1] {
                let eval = |off: f64| {
                    let mut m = model.clone();
                    m.params.tensors_mut()[ti].1.data_mut()[k] += off;
                    m.loss(ex, &noise, &opts).unwrap().total
                };
                let num: f64 = (eval(h) - eval(-h)) / (2.0 * h);
                let ana = grad.tensors()[ti].1.data()[k];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
                assert!(rel < 1e-3, "{name}[{k}]: analytic {ana} numeric {num}");
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3);
    }

    #[test]
    fn composite_gradient_voxel_only() {
        check_gradients(false);
    }

    #[test]
    fn composite_gradient_with_regressor() {
        check_gradients(true);
    }

    #[test]
    fn shapes_of_standard_model() {
        let model = Vsl::<f32>::new(ModelConfig::modelnet40(), 0).unwrap();
        let grid = blob(30, 3);
        assert_eq!(model.features(&grid).unwrap().len(), 1024);
        let z = model.encode_mean(&grid).unwrap();
        assert_eq!(z.len(), 70);
        let probs = model.decode(&z).unwrap();
        assert_eq!(probs.len(), 27000);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(model.features(&blob(7, 0)).is_err());
        assert!(model.decode(&[0.0; 35]).is_err());
    }

    #[test]
    fn regressor_shapes_and_dropout_modes() {
        let cfg = ModelConfig::retrieval_separate().with_channel_divisor(4);
        let model = Vsl::<f32>::new(cfg, 0).unwrap();
        let img = image(100, 1);
        let z = model.regress_image(&img).unwrap();
        assert_eq!(z.len(), 11);
        assert_eq!(z, model.regress_image(&img).unwrap());
        assert_ne!(z, model.regress_image_train(&img, 1).unwrap());
        assert_eq!(model.reconstruct_from_image(&img).unwrap().len(), 27000);
        assert!(model.regress_image(&image(12, 0)).is_err());
        let voxel_only = Vsl::<f32>::new(tiny_config(false), 0).unwrap();
        assert!(voxel_only.regress_image(&image(12, 0)).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let model = Vsl::<f32>::new(tiny_config(false), 2).unwrap();
        let grids: Vec<VoxelGrid> = (0..5).map(|s| blob(7, s)).collect();
        let seq = model.encode_batch(&grids, Exec::Sequential).unwrap();
        let par = model.encode_batch(&grids, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq[3], model.encode_mean(&grids[3]).unwrap());
    }

    #[test]
    fn prior_samples_decode() {
        let model = Vsl::<f32>::new(tiny_config(false), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = model.sample_generative(&mut rng).unwrap();
        assert_eq!(p.len(), 343);
        let hier = HierarchyConfig::new(2, 2, 3);
        assert_eq!(hier, model.config.hierarchy);
    }

    #[test]
    fn from_parts_rejects_mismatch() {
        let a = Vsl::<f32>::new(tiny_config(false), 0).unwrap();
        assert!(Vsl::from_parts(tiny_config(false), a.params.clone()).is_ok());
        assert!(Vsl::from_parts(tiny_config(true), a.params).is_err());
    }
}
