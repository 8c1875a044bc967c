use crate::error::{Error, Result};
use crate::numeric::{RngState, Tape, Var};

/// Fixed coordinate shuffle: `out[j] = x[perm[j]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut inv = vec![usize::MAX; perm.len()];
        for (j, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inv[p] != usize::MAX {
                return Err(Error::Config(format!("{perm:?} is not a permutation")));
            }
            inv[p] = j;
        }
        if perm.is_empty() {
            return Err(Error::Config("empty permutation".into()));
        }
        Ok(Permutation { perm, inv })
    }

    pub fn reversal(dim: usize) -> Result<Self> {
        Self::new((0..dim).rev().collect())
    }

    pub fn random(dim: usize, rng: &mut RngState) -> Result<Self> {
        let mut p: Vec<usize> = (0..dim).collect();
        rng.shuffle(&mut p);
        Self::new(p)
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    fn check(&self, op: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.perm.len() {
            return Err(Error::dim(
                op,
                format!("input of length {} for K = {}", v.len(), self.perm.len()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check("permutation_forward", x)?;
        Ok((self.perm.iter().map(|&p| x[p]).collect(), 0.0))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check("permutation_inverse", z)?;
        Ok((self.inv.iter().map(|&i| z[i]).collect(), 0.0))
    }

    /// Returns the permuted batch; the log-determinant is identically zero.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.gather_cols(x, &self.perm)
    }
}
