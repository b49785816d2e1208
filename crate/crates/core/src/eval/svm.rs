//! RBF-kernel support vector classification: a binary SMO solver with
//! second-order working-set selection, one-vs-one voting for multiple
//! classes, and a cross-validated grid over C and the kernel width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

const TAU: f64 = 1e-12;
const TOLERANCE: f64 = 1e-3;
const MAX_ITER: usize = 200_000;

pub const C_GRID: [f64; 3] = [1.0, 10.0, 100.0];
/// Kernel widths as multiples of 1/dim.
pub const GAMMA_GRID: [f64; 3] = [1.0, 10.0, 0.1];

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

struct Binary {
    support: Vec<(usize, f64)>, // (row index, y·α)
    rho: f64,
}

/// Solves the C-SVC dual for labels y ∈ {−1, +1} given the full kernel matrix.
fn solve_binary(k: &[f64], y: &[f64], c: f64) -> Binary {
    let n = y.len();
    let kk = |i: usize, j: usize| k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    for _ in 0..MAX_ITER {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = -y[t] * g[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            if up && v >= gmax {
                gmax = v;
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if !low {
                continue;
            }
            let v = y[t] * g[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = (kk(i, i) + kk(t, t) - 2.0 * kk(i, t)).max(TAU);
                let obj = -diff * diff / quad;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < TOLERANCE || j == usize::MAX {
            break;
        }
        let qij = y[i] * y[j] * kk(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (kk(i, i) + kk(j, j) + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kk(i, i) + kk(j, j) - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            g[t] += y[t] * (y[i] * kk(i, t) * di + y[j] * kk(j, t) * dj);
        }
    }
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    Binary {
        support: (0..n).filter(|&t| alpha[t] > 0.0).map(|t| (t, y[t] * alpha[t])).collect(),
        rho,
    }
}

/// Multi-class RBF classifier over standardized features.
pub struct RbfSvm {
    rows: Vec<Vec<f64>>,
    n_classes: usize,
    gamma: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    // (class a, class b, offsets into `rows`, model); positive side is `a`
    pairs: Vec<(usize, usize, Vec<usize>, Binary)>,
}

fn standardize_stats(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in x {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scale = var.into_iter().map(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

impl RbfSvm {
    /// `labels` are class indices in `0..n_classes`; `gamma` is the absolute
    /// kernel width applied after standardization.
    pub fn fit(x: &[Vec<f64>], labels: &[usize], n_classes: usize, c: f64, gamma: f64) -> Result<Self> {
        if x.is_empty() || x.len() != labels.len() {
            return Err(Error::shape("SVM needs one label per non-empty row"));
        }
        let (mean, scale) = standardize_stats(x);
        let rows: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
            .collect();
        let mut pairs = Vec::new();
        for a in 0..n_classes {
            for b in a + 1..n_classes {
                let idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
                let has_a = idx.iter().any(|&i| labels[i] == a);
                let has_b = idx.iter().any(|&i| labels[i] == b);
                if !has_a || !has_b {
                    continue;
                }
                let n = idx.len();
                let mut k = vec![0.0; n * n];
                for p in 0..n {
                    for q in p..n {
                        let v = rbf(&rows[idx[p]], &rows[idx[q]], gamma);
                        k[p * n + q] = v;
                        k[q * n + p] = v;
                    }
                }
                let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
                let model = solve_binary(&k, &y, c);
                pairs.push((a, b, idx, model));
            }
        }
        Ok(RbfSvm {
            rows,
            n_classes,
            gamma,
            mean,
            scale,
            pairs,
        })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect();
        let mut votes = vec![0usize; self.n_classes];
        for (a, b, idx, m) in &self.pairs {
            let f: f64 = m
                .support
                .iter()
                .map(|&(p, coef)| coef * rbf(&self.rows[idx[p]], &z, self.gamma))
                .sum::<f64>()
                - m.rho;
            votes[if f > 0.0 { *a } else { *b }] += 1;
        }
        // most votes, lowest class index on ties
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, x: &[Vec<f64>], labels: &[usize]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x.iter().zip(labels).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmSelection {
    pub c: f64,
    /// Absolute kernel width.
    pub gamma: f64,
    pub cv_accuracy: f64,
}

/// Stratified fold assignment: within each class, rows go round-robin.
pub fn stratified_folds(labels: &[usize], k: usize) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let c = seen.entry(*l).or_insert(0usize);
            let f = *c % k;
            *c += 1;
            f
        })
        .collect()
}

/// 3-fold cross-validation over C ∈ {1, 10, 100} and γ ∈ {1, 10, 0.1}/dim.
/// Ties keep the earlier grid point.
pub fn select_hyperparameters(x: &[Vec<f64>], labels: &[usize], n_classes: usize, exec: Exec) -> Result<SvmSelection> {
    let dim = x.first().map_or(1, Vec::len).max(1) as f64;
    let folds = stratified_folds(labels, 3);
    let grid: Vec<(f64, f64)> = C_GRID
        .iter()
        .flat_map(|&c| GAMMA_GRID.iter().map(move |&g| (c, g / dim)))
        .collect();
    let scores = exec.try_map(&grid, |_, &(c, gamma)| {
        let mut acc = 0.0;
        let mut used = 0;
        for f in 0..3 {
            let (mut trx, mut try_, mut tex, mut tey) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if folds[i] == f {
                    tex.push(x[i].clone());
                    tey.push(labels[i]);
                } else {
                    trx.push(x[i].clone());
                    try_.push(labels[i]);
                }
            }
            if tex.is_empty() || trx.is_empty() {
                continue;
            }
            acc += RbfSvm::fit(&trx, &try_, n_classes, c, gamma)?.accuracy(&tex, &tey);
            used += 1;
        }
        Ok::<_, Error>(if used > 0 { acc / used as f64 } else { 0.0 })
    })?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(SvmSelection {
        c: grid[best].0,
        gamma: grid[best].1,
        cv_accuracy: scores[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, classes: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % classes;
            let center = c as f64 * 3.0;
            x.push(vec![center + spread * rng.gen_range(-1.0..1.0), -center + spread * rng.gen_range(-1.0..1.0)]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(40, 2, 0.5, 0);
        let m = RbfSvm::fit(&x, &y, 2, 10.0, 0.5).unwrap();
        assert_eq!(m.accuracy(&x, &y), 1.0);
        let (x, y) = blobs(90, 3, 0.5, 1);
        let m = RbfSvm::fit(&x, &y, 3, 10.0, 0.5).unwrap();
        assert_eq!(m.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn xor_needs_the_kernel() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = vec![0, 0, 1, 1];
        let m = RbfSvm::fit(&x, &y, 2, 100.0, 1.0).unwrap();
        assert_eq!(m.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn dual_constraints_hold() {
        let (x, y) = blobs(30, 2, 2.5, 3);
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = rbf(&x[i], &x[j], 0.3);
            }
        }
        let yy: Vec<f64> = y.iter().map(|&c| if c == 0 { 1.0 } else { -1.0 }).collect();
        let b = solve_binary(&k, &yy, 1.0);
        let sum: f64 = b.support.iter().map(|&(_, ya)| ya).sum();
        assert!(sum.abs() < 1e-9, "Σ yα = {sum}");
        assert!(b.support.iter().all(|&(_, ya)| ya.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn folds_are_stratified() {
        let f = stratified_folds(&[0, 0, 0, 1, 1, 1, 0], 3);
        assert_eq!(f, vec![0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn grid_search_picks_a_grid_point() {
        let (x, y) = blobs(60, 3, 0.8, 4);
        let s = select_hyperparameters(&x, &y, 3, Exec::Sequential).unwrap();
        assert!(C_GRID.contains(&s.c));
        assert!(GAMMA_GRID.iter().any(|g| (g / 2.0 - s.gamma).abs() < 1e-15));
        assert!(s.cv_accuracy > 0.9);
    }
}
