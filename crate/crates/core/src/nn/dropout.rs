use rand::Rng;

use crate::error::{Error, Result};

/// Inverted dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1-p)`. With `p == 0` the rng is not touched.
pub fn dropout_mask<R: Rng + ?Sized>(p: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}
