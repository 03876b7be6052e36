//! Linear MMSE detection of the spread symbols and bit recovery.

use nalgebra::{Cholesky, DVector, Dyn};
use num_complex::Complex64;

use crate::channel::DdOperator;
use crate::error::{Error, Result};
use crate::frame::{demap_qpsk, SpreadingPlan};
use crate::linalg::{adjoint_mul_vec, inner_gram, matmul, outer_gram, CMat};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub s_hat: Vec<Complex64>,
    pub hard_symbols: Vec<Complex64>,
    pub bits_hat: Vec<u8>,
}

impl DetectionResult {
    pub fn from_soft(s_hat: Vec<Complex64>) -> Self {
        let (hard_symbols, bits_hat) = demap_qpsk(&s_hat);
        Self {
            s_hat,
            hard_symbols,
            bits_hat,
        }
    }
}

/// Per-sample noise power for a given Eb/N0 with unit-energy symbols.
pub fn n0_from_ebno_db(ebno_db: f64, bits_per_symbol: usize) -> f64 {
    1.0 / (bits_per_symbol as f64 * 10f64.powf(ebno_db / 10.0))
}

fn add_diagonal(k: &mut CMat, value: f64) {
    for i in 0..k.nrows() {
        k[(i, i)] += value;
    }
}

fn cholesky(k: CMat, what: &str) -> Result<Cholesky<Complex64, Dyn>> {
    Cholesky::new(k).ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))
}

/// `G = (A A^H + N0 I)^{-1} A` with `A = H C`, as a dense `MN x n_s` matrix.
pub fn mmse_matrix(channel: &CMat, plan: &SpreadingPlan, n0: f64) -> Result<CMat> {
    if channel.nrows() != channel.ncols() || channel.nrows() != plan.expanded().nrows() {
        return Err(Error::InvalidParameter(format!(
            "channel is {}x{}, spreading matrix has {} rows",
            channel.nrows(),
            channel.ncols(),
            plan.expanded().nrows()
        )));
    }
    if !(n0 >= 0.0) {
        return Err(Error::Domain(format!("noise power must be non-negative, got {n0}")));
    }
    let a = matmul(channel, plan.expanded());
    let mut k = outer_gram(&a);
    add_diagonal(&mut k, n0);
    Ok(cholesky(k, "MMSE covariance")?.solve(&a))
}

/// Soft estimates `G^H y`.
pub fn detect(g: &CMat, y: &[Complex64]) -> Result<DetectionResult> {
    if g.nrows() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "detector has {} rows, received vector has {} samples",
            g.nrows(),
            y.len()
        )));
    }
    Ok(DetectionResult::from_soft(adjoint_mul_vec(g, y)))
}

/// MMSE detector factored in the `n_s x n_s` domain.
///
/// Applies `(A^H A + N0 I)^{-1} A^H y`, which equals `G^H y` by the
/// push-through identity and is never larger than the `MN x MN` system.
pub struct MmseDetector {
    a: CMat,
    factor: Cholesky<Complex64, Dyn>,
}

impl MmseDetector {
    pub fn new<O: DdOperator + ?Sized>(channel: &O, plan: &SpreadingPlan, n0: f64) -> Result<Self> {
        if channel.dim() != plan.expanded().nrows() {
            return Err(Error::InvalidParameter(format!(
                "channel dimension {} does not match spreading matrix rows {}",
                channel.dim(),
                plan.expanded().nrows()
            )));
        }
        if !(n0 >= 0.0) {
            return Err(Error::Domain(format!("noise power must be non-negative, got {n0}")));
        }
        let a = channel.apply_columns(plan.expanded());
        let mut k = inner_gram(&a);
        add_diagonal(&mut k, n0);
        let factor = cholesky(k, "MMSE normal matrix")?;
        Ok(Self { a, factor })
    }

    /// The effective channel `A = H C`.
    pub fn effective(&self) -> &CMat {
        &self.a
    }

    pub fn estimate(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        if y.len() != self.a.nrows() {
            return Err(Error::InvalidParameter(format!(
                "detector expects {} samples, got {}",
                self.a.nrows(),
                y.len()
            )));
        }
        let rhs = DVector::from_vec(adjoint_mul_vec(&self.a, y));
        Ok(self.factor.solve(&rhs).as_slice().to_vec())
    }

    pub fn detect(&self, y: &[Complex64]) -> Result<DetectionResult> {
        Ok(DetectionResult::from_soft(self.estimate(y)?))
    }
}

/// Hamming distance between two bit vectors.
pub fn count_bit_errors(bits_hat: &[u8], bits: &[u8]) -> Result<usize> {
    if bits_hat.len() != bits.len() {
        return Err(Error::Framing(format!(
            "bit vectors differ in length: {} vs {}",
            bits_hat.len(),
            bits.len()
        )));
    }
    Ok(bits_hat.iter().zip(bits).filter(|(a, b)| a != b).count())
}
