use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and, in train mode, the per-unit
/// multiplier (0 or 1/(1−p)) which the backward pass reuses as a constant.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &[T],
    p_drop: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {p_drop}"
        )));
    }
    if mode == Mode::Eval || p_drop == 0.0 {
        return Ok((input.to_vec(), None));
    }
    let keep = T::lit(1.0 / (1.0 - p_drop));
    let mask: Vec<T> = input
        .iter()
        .map(|_| {
            if rng.gen::<f64>() < p_drop {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = input.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, grad: &mut [T]) {
    if let Some(mask) = mask {
        for (g, &m) in grad.iter_mut().zip(mask) {
            *g *= m;
        }
    }
}
