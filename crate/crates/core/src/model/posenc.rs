//! Fixed sinusoidal position tables.

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_even(d: usize, what: &str) -> Result<()> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::config(format!("{what} positional encoding needs an even, positive dim, got {d}")));
    }
    Ok(())
}

/// `1 / alpha^(2i / d)` for each channel pair `i`.
fn inv_freqs(d: usize, alpha: f64) -> Vec<f64> {
    (0..d / 2).map(|i| alpha.powf(-((2 * i) as f64) / d as f64)).collect()
}

/// `[n, d]` table for 1-based positions `p = 1..=n`: channel `2i` holds
/// `sin(p / alpha^(2i/d))` and channel `2i + 1` the cosine.
pub fn angular_encoding(n: usize, d: usize, alpha: f64) -> Result<Tensor> {
    check_even(d, "angular")?;
    let f = inv_freqs(d, alpha);
    let mut data = Vec::with_capacity(n * d);
    for p in 1..=n {
        for &w in &f {
            let a = p as f64 * w;
            data.push(a.sin());
            data.push(a.cos());
        }
    }
    Tensor::new(vec![n, d], data)
}

/// `[h * w, d]` table; token `r * w + c` sits at `(p_x, p_y) = (r + 1, c + 1)`
/// and channel `2j` holds `sin(p_x / alpha^(2j/d)) + sin(p_y / alpha^(2j/d))`,
/// channel `2j + 1` the cosine sum.
pub fn spatial_encoding(h: usize, w: usize, d: usize, alpha: f64) -> Result<Tensor> {
    check_even(d, "spatial")?;
    let f = inv_freqs(d, alpha);
    let mut data = Vec::with_capacity(h * w * d);
    for px in 1..=h {
        for py in 1..=w {
            for &k in &f {
                let (a, b) = (px as f64 * k, py as f64 * k);
                data.push(a.sin() + b.sin());
                data.push(a.cos() + b.cos());
            }
        }
    }
    Tensor::new(vec![h * w, d], data)
}

/// `[A^2, d_a]`; view `(u, v)` has position `p = u * A + v + 1`.
pub fn angular_pos_encoding(cfg: &ModelConfig) -> Result<Tensor> {
    angular_encoding(cfg.angular * cfg.angular, cfg.d_a, cfg.alpha_pe)
}

pub fn spatial_pos_encoding(cfg: &ModelConfig, h: usize, w: usize) -> Result<Tensor> {
    spatial_encoding(h, w, cfg.d_s, cfg.alpha_pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds() {
        let a = angular_encoding(25, 8, 10000.0).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        let s = spatial_encoding(6, 5, 8, 10000.0).unwrap();
        assert!(s.data().iter().all(|v| v.abs() <= 2.0));
        assert_eq!(s.shape(), &[30, 8]);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(angular_encoding(4, 3, 10000.0).is_err());
        assert!(spatial_encoding(2, 2, 5, 10000.0).is_err());
    }
}
