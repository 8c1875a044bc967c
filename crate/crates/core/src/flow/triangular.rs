//! Packed lower-triangular affine maps read from a hidden-state vector.

use crate::error::{Error, Result};
use crate::numeric::{tri_affine_width, Tensor};

/// Row `i` of `W` starts at `i(i+1)/2` in the packed layout.
fn offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Splits a hidden vector into a lower-triangular `W[K, K]` with
/// exp-mapped diagonal and a bias `b[K]`. Entries past `K(K+1)/2 + K` are
/// ignored.
pub fn split_hidden(h: &[f64], k: usize) -> Result<(Tensor, Vec<f64>)> {
    let need = tri_affine_width(k);
    if h.len() < need {
        return Err(Error::Config(format!(
            "hidden size {} cannot hold a {k}x{k} triangular map and bias ({need} entries)",
            h.len()
        )));
    }
    let mut w = vec![0.0; k * k];
    for i in 0..k {
        let row = &h[offset(i)..offset(i) + i + 1];
        w[i * k..i * k + i].copy_from_slice(&row[..i]);
        w[i * k + i] = row[i].exp();
    }
    let nw = offset(k);
    Ok((Tensor::matrix(k, k, w)?, h[nw..nw + k].to_vec()))
}

/// `u = W x + b` straight from the packed layout.
pub fn packed_affine(h: &[f64], x: &[f64]) -> Vec<f64> {
    let k = x.len();
    let nw = offset(k);
    (0..k)
        .map(|i| {
            let off = offset(i);
            let mut u = h[nw + i] + h[off + i].exp() * x[i];
            for j in 0..i {
                u += h[off + j] * x[j];
            }
            u
        })
        .collect()
}

/// Solves `W x = u - b` by forward substitution.
pub fn packed_affine_inverse(h: &[f64], u: &[f64]) -> Vec<f64> {
    let k = u.len();
    let nw = offset(k);
    let mut x = vec![0.0; k];
    for i in 0..k {
        let off = offset(i);
        let mut acc = u[i] - h[nw + i];
        for j in 0..i {
            acc -= h[off + j] * x[j];
        }
        x[i] = acc * (-h[off + i]).exp();
    }
    x
}

/// `Σ_i ln W_ii`, i.e. the sum of the raw diagonal entries.
pub fn packed_log_diag(h: &[f64], k: usize) -> f64 {
    (0..k).map(|i| h[offset(i) + i]).sum()
}
