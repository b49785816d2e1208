//! Latent-space manipulation on posterior-mean codes: noisy generation
//! around a seed shape, interpolation, and a − b + c arithmetic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vsl;
use crate::voxel::VoxelGrid;

pub const DEFAULT_NOISE: f32 = 0.5;

/// Decode of the seed shape's code plus `sigma`·N(0, I) noise.
pub fn generate_noisy(model: &Vsl<f32>, seed_shape: &VoxelGrid, sigma: f32, seed: u64) -> Result<Vec<f32>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise scale must be ≥ 0, got {sigma}")));
    }
    let mut z = model.encode_mean(seed_shape)?;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut z {
            let n: f32 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
    }
    model.decode(&z)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    #[default]
    Linear,
    /// Great-circle path, falling back to linear for (anti)parallel codes.
    Slerp,
}

/// Code at fraction `t` between `a` and `b`. The endpoints return the
/// inputs unchanged.
pub fn blend(a: &[f32], b: &[f32], t: f64, path: Path) -> Vec<f32> {
    if t == 0.0 {
        return a.to_vec();
    }
    if t == 1.0 {
        return b.to_vec();
    }
    let linear = || a.iter().zip(b).map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32).collect();
    match path {
        Path::Linear => linear(),
        Path::Slerp => {
            let na = a.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let nb = b.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return linear();
            }
            let cos = (a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
            let omega = cos.acos();
            let s = omega.sin();
            if s.abs() < 1e-6 {
                return linear();
            }
            let wa = ((1.0 - t) * omega).sin() / s;
            let wb = (t * omega).sin() / s;
            a.iter().zip(b).map(|(&x, &y)| (wa * x as f64 + wb * y as f64) as f32).collect()
        }
    }
}

/// `steps` decodes along the path from `a`'s code to `b`'s, at αᵢ = i/(steps−1).
pub fn interpolate(model: &Vsl<f32>, a: &VoxelGrid, b: &VoxelGrid, steps: usize, path: Path) -> Result<Vec<Vec<f32>>> {
    if steps < 2 {
        return Err(Error::Config(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let za = model.encode_mean(a)?;
    let zb = model.encode_mean(b)?;
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            model.decode(&blend(&za, &zb, t, path))
        })
        .collect()
}

/// `a − b + c` per coordinate, arranged so the cancellations are exact:
/// equal `b` and `c` entries return `a`, equal `a` and `b` entries return `c`.
pub fn code_arithmetic(a: &[f32], b: &[f32], c: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() || b.len() != c.len() {
        return Err(Error::shape("arithmetic on codes of different lengths"));
    }
    Ok((0..a.len())
        .map(|j| {
            if b[j] == c[j] {
                a[j]
            } else if a[j] == b[j] {
                c[j]
            } else {
                a[j] - b[j] + c[j]
            }
        })
        .collect())
}

/// Decode of z_a − z_b + z_c.
pub fn arithmetic(model: &Vsl<f32>, a: &VoxelGrid, b: &VoxelGrid, c: &VoxelGrid) -> Result<Vec<f32>> {
    let z = code_arithmetic(&model.encode_mean(a)?, &model.encode_mean(b)?, &model.encode_mean(c)?)?;
    model.decode(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_config;
    use rand::Rng;

    fn shapes() -> (Vsl<f32>, Vec<VoxelGrid>) {
        let model = Vsl::<f32>::new(tiny_config(false), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grids = (0..3)
            .map(|_| {
                let mut g = VoxelGrid::cube(7).unwrap();
                for c in g.cells_mut() {
                    *c = rng.gen_bool(0.5);
                }
                g
            })
            .collect();
        (model, grids)
    }

    #[test]
    fn identities_are_bit_exact() {
        let (m, g) = shapes();
        let rec = |x: &VoxelGrid| m.decode(&m.encode_mean(x).unwrap()).unwrap();
        assert_eq!(generate_noisy(&m, &g[0], 0.0, 9).unwrap(), rec(&g[0]));
        for path in [Path::Linear, Path::Slerp] {
            let steps = interpolate(&m, &g[0], &g[1], 7, path).unwrap();
            assert_eq!(steps.len(), 7);
            assert_eq!(steps[0], rec(&g[0]));
            assert_eq!(steps[6], rec(&g[1]));
            let same = interpolate(&m, &g[2], &g[2], 4, path).unwrap();
            assert!(same.iter().all(|s| *s == same[0]));
        }
        assert_eq!(arithmetic(&m, &g[0], &g[1], &g[1]).unwrap(), rec(&g[0]));
        assert_eq!(arithmetic(&m, &g[0], &g[0], &g[2]).unwrap(), rec(&g[2]));
        assert_eq!(
            arithmetic(&m, &g[0], &g[1], &g[2]).unwrap(),
            arithmetic(&m, &g[0], &g[1], &g[2]).unwrap()
        );
    }

    #[test]
    fn noisy_generation_is_seeded() {
        let (m, g) = shapes();
        let a = generate_noisy(&m, &g[0], 0.5, 1).unwrap();
        assert_eq!(a, generate_noisy(&m, &g[0], 0.5, 1).unwrap());
        assert_ne!(a, generate_noisy(&m, &g[0], 0.5, 2).unwrap());
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(generate_noisy(&m, &g[0], -1.0, 1).is_err());
        assert!(interpolate(&m, &g[0], &g[1], 1, Path::Linear).is_err());
    }

    #[test]
    fn slerp_keeps_norm_between_equal_norm_codes() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        let mid = blend(&a, &b, 0.5, Path::Slerp);
        let n = (mid[0] * mid[0] + mid[1] * mid[1]).sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        let lin = blend(&a, &b, 0.5, Path::Linear);
        assert_eq!(lin, vec![0.5, 0.5]);
    }
}
