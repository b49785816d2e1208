use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::latent::{PosteriorParams, PriorParams};
use crate::nn::{Layer, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorParams<T> {
    pub convs: Vec<Layer<T>>,
    pub hidden1: Layer<T>,
    pub hidden2: Layer<T>,
    pub head: Layer<T>,
}

/// All network weights: encoder and inference networks (φ), prior networks
/// and decoder (θ), and the optional image regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: Vec<Layer<T>>,
    pub posterior: PosteriorParams<T>,
    pub prior: PriorParams<T>,
    /// Affine lift from the flat code to the decoder's first volume.
    pub lift: Layer<T>,
    pub decoder: Vec<Layer<T>>,
    pub regressor: Option<RegressorParams<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_ch = cfg.encoder_in_channels();
        let encoder = cfg
            .encoder
            .iter()
            .zip(&in_ch)
            .map(|(c, &ci)| Layer::init_uniform(&[c.channels, ci, c.kernel, c.kernel, c.kernel], c.channels, &mut rng))
            .collect();
        let features = cfg.feature_len()?;
        let posterior = PosteriorParams::init(&cfg.hierarchy, features, cfg.local_hidden, &mut rng);
        let prior = PriorParams::init(&cfg.hierarchy, cfg.local_hidden, &mut rng);
        let lift = Layer::init_uniform(&[features, cfg.total_dim()], features, &mut rng);
        // decoder layer i mirrors encoder layer L-1-i: weight [c_in, c_out, k, k, k]
        let decoder = cfg
            .encoder
            .iter()
            .zip(&in_ch)
            .rev()
            .map(|(c, &co)| Layer::init_uniform(&[c.channels, co, c.kernel, c.kernel, c.kernel], co, &mut rng))
            .collect();
        let regressor = match &cfg.regressor {
            None => None,
            Some(r) => {
                let mut ci = 3;
                let mut convs = Vec::new();
                for c in &r.convs {
                    convs.push(Layer::init_uniform(&[c.channels, ci, c.kernel, c.kernel], c.channels, &mut rng));
                    ci = c.channels;
                }
                let flat = r.flat_features()?;
                Some(RegressorParams {
                    convs,
                    hidden1: Layer::init_uniform(&[r.hidden[0], flat], r.hidden[0], &mut rng),
                    hidden2: Layer::init_uniform(&[r.hidden[1], r.hidden[0]], r.hidden[1], &mut rng),
                    head: Layer::init_uniform(&[cfg.total_dim(), r.hidden[1]], cfg.total_dim(), &mut rng),
                })
            }
        };
        Ok(ModelParams {
            encoder,
            posterior,
            prior,
            lift,
            decoder,
            regressor,
        })
    }

    /// Every layer with its dotted name prefix, in a fixed order.
    pub fn layers(&self) -> Vec<(String, &Layer<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}"), l));
        }
        out.push(("posterior.z0.head".to_string(), &self.posterior.global_head));
        for (i, m) in self.posterior.locals.iter().enumerate() {
            for (n, l) in m.layers() {
                out.push((format!("posterior.z{}.{n}", i + 1), l));
            }
        }
        for (i, m) in self.prior.locals.iter().enumerate() {
            for (n, l) in m.layers() {
                out.push((format!("prior.z{}.{n}", i + 1), l));
            }
        }
        out.push(("lift".to_string(), &self.lift));
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}"), l));
        }
        if let Some(r) = &self.regressor {
            for (i, l) in r.convs.iter().enumerate() {
                out.push((format!("regressor.conv{i}"), l));
            }
            out.push(("regressor.fc1".to_string(), &r.hidden1));
            out.push(("regressor.fc2".to_string(), &r.hidden2));
            out.push(("regressor.head".to_string(), &r.head));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::layers`], same order.
    pub fn layers_mut(&mut self) -> Vec<(String, &mut Layer<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            out.push((format!("encoder.{i}"), l));
        }
        out.push(("posterior.z0.head".to_string(), &mut self.posterior.global_head));
        for (i, m) in self.posterior.locals.iter_mut().enumerate() {
            for (n, l) in m.layers_mut() {
                out.push((format!("posterior.z{}.{n}", i + 1), l));
            }
        }
        for (i, m) in self.prior.locals.iter_mut().enumerate() {
            for (n, l) in m.layers_mut() {
                out.push((format!("prior.z{}.{n}", i + 1), l));
            }
        }
        out.push(("lift".to_string(), &mut self.lift));
        for (i, l) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.{i}"), l));
        }
        if let Some(r) = &mut self.regressor {
            for (i, l) in r.convs.iter_mut().enumerate() {
                out.push((format!("regressor.conv{i}"), l));
            }
            out.push(("regressor.fc1".to_string(), &mut r.hidden1));
            out.push(("regressor.fc2".to_string(), &mut r.hidden2));
            out.push(("regressor.head".to_string(), &mut r.head));
        }
        out
    }

    /// Named tensors (`<layer>.weight`, `<layer>.bias`).
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|(n, l)| [(format!("{n}.weight"), &l.weight), (format!("{n}.bias"), &l.bias)])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(n, l)| {
                let Layer { weight, bias } = l;
                [(format!("{n}.weight"), weight), (format!("{n}.bias"), bias)]
            })
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.iter().map(Layer::cast).collect(),
            posterior: self.posterior.cast(),
            prior: self.prior.cast(),
            lift: self.lift.cast(),
            decoder: self.decoder.iter().map(Layer::cast).collect(),
            regressor: self.regressor.as_ref().map(|r| RegressorParams {
                convs: r.convs.iter().map(Layer::cast).collect(),
                hidden1: r.hidden1.cast(),
                hidden2: r.hidden2.cast(),
                head: r.head.cast(),
            }),
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    /// Errors with the name of the first tensor holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.tensors().into_iter().find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("non-finite values in {name}"))),
            None => Ok(()),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn names_are_unique_and_shapes_follow_config() {
        let cfg = ModelConfig::retrieval_joint();
        let p = ModelParams::<f32>::init(&cfg, 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let set: HashSet<&String> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert_eq!(p.encoder[0].weight.shape(), &[32, 1, 6, 6, 6]);
        assert_eq!(p.decoder[0].weight.shape(), &[128, 64, 4, 4, 4]);
        assert_eq!(p.decoder[2].weight.shape(), &[32, 1, 6, 6, 6]);
        assert_eq!(p.lift.weight.shape(), &[1024, 45]);
        assert_eq!(p.posterior.locals[0].hidden1.weight.shape(), &[100, 1024 + 20]);
        assert_eq!(p.posterior.locals[1].hidden1.weight.shape(), &[100, 1024 + 20 + 5]);
        assert_eq!(p.prior.locals[0].hidden1.weight.shape(), &[100, 20]);
        assert_eq!(p.prior.locals[3].hidden1.weight.shape(), &[100, 25]);
        let r = p.regressor.as_ref().unwrap();
        assert_eq!(r.hidden1.weight.shape(), &[200, 512]);
        assert_eq!(r.head.weight.shape(), &[45, 100]);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::modelnet10().with_channel_divisor(8);
        let a = ModelParams::<f32>::init(&cfg, 3).unwrap();
        assert_eq!(a, ModelParams::<f32>::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::<f32>::init(&cfg, 4).unwrap());
        assert!(a.check_finite().is_ok());
    }
}
