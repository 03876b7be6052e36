//! QPSK mapping, the expanded spreading operator and delay-Doppler frames.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mul_vec, CMat};
use crate::sequences::{build_sequence_matrix, Family, SequenceMatrix};

/// Delay-Doppler grid and RF parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Subcarriers (delay bins).
    pub m: usize,
    /// Time slots (Doppler bins).
    pub n: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub carrier: f64,
    /// Bits per symbol; 2 for QPSK.
    pub bits_per_symbol: usize,
}

impl GridConfig {
    pub fn new(m: usize, n: usize, delta_f: f64, carrier: f64) -> Result<Self> {
        let grid = Self {
            m,
            n,
            delta_f,
            carrier,
            bits_per_symbol: 2,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.m < 2 {
            problems.push(format!("M must be at least 2, got {}", self.m));
        }
        if self.n < 2 {
            problems.push(format!("N must be at least 2, got {}", self.n));
        }
        if !(self.delta_f > 0.0 && self.delta_f.is_finite()) {
            problems.push(format!("delta_f must be positive, got {}", self.delta_f));
        }
        if !(self.carrier > 0.0 && self.carrier.is_finite()) {
            problems.push(format!("carrier frequency must be positive, got {}", self.carrier));
        }
        if self.bits_per_symbol != 2 {
            problems.push(format!("only QPSK (2 bits/symbol) is supported, got {}", self.bits_per_symbol));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// `M * N`.
    pub fn size(&self) -> usize {
        self.m * self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// One symbol per delay-Doppler bin, no spreading.
    PureOtfs,
    /// Length-M sequences spread each symbol along delay.
    DelayCdma,
    /// Length-N sequences spread each symbol along Doppler.
    DopplerCdma,
    /// Length-MN sequences spread each symbol over the whole grid.
    DelayDopplerCdma,
}

impl Scheme {
    pub fn short_name(self) -> &'static str {
        match self {
            Scheme::PureOtfs => "otfs",
            Scheme::DelayCdma => "dl",
            Scheme::DopplerCdma => "dp",
            Scheme::DelayDopplerCdma => "dd",
        }
    }

    /// Spreading sequence length on a grid (`None` for pure OTFS).
    pub fn sequence_length(self, grid: &GridConfig) -> Option<usize> {
        match self {
            Scheme::PureOtfs => None,
            Scheme::DelayCdma => Some(grid.m),
            Scheme::DopplerCdma => Some(grid.n),
            Scheme::DelayDopplerCdma => Some(grid.size()),
        }
    }

    /// Largest number of multiplexed sequences.
    pub fn max_n_mult(self, grid: &GridConfig) -> usize {
        self.sequence_length(grid).unwrap_or(grid.size())
    }

    /// Symbols per frame for a given multiplexing load.
    pub fn symbols_per_frame(self, grid: &GridConfig, n_mult: usize) -> usize {
        match self {
            Scheme::PureOtfs => grid.size(),
            Scheme::DelayCdma => n_mult * grid.n,
            Scheme::DopplerCdma => n_mult * grid.m,
            Scheme::DelayDopplerCdma => n_mult,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::PureOtfs => "OTFS",
            Scheme::DelayCdma => "DL-CDMA-OTFS",
            Scheme::DopplerCdma => "DP-CDMA-OTFS",
            Scheme::DelayDopplerCdma => "DD-CDMA-OTFS",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "otfs" | "pure-otfs" => Ok(Scheme::PureOtfs),
            "delay" | "dl" | "delay-cdma" => Ok(Scheme::DelayCdma),
            "doppler" | "dp" | "doppler-cdma" => Ok(Scheme::DopplerCdma),
            "delay-doppler" | "dd" | "delay-doppler-cdma" => Ok(Scheme::DelayDopplerCdma),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Gray-mapped unit-energy QPSK: the first bit of each pair sets the sign of
/// the real part, the second the sign of the imaginary part (0 -> +).
pub fn map_bits_qpsk(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::Framing(format!("QPSK needs an even bit count, got {}", bits.len())));
    }
    let level = |b: u8| if b == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Ok(bits
        .chunks_exact(2)
        .map(|p| Complex64::new(level(p[0]), level(p[1])))
        .collect())
}

/// Minimum-distance QPSK decisions and their Gray bits.
///
/// A component exactly on a decision boundary (zero) resolves to the
/// positive half-plane, so `0 + 0j` decodes as bits `(0, 0)`.
pub fn demap_qpsk(soft: &[Complex64]) -> (Vec<Complex64>, Vec<u8>) {
    let mut hard = Vec::with_capacity(soft.len());
    let mut bits = Vec::with_capacity(2 * soft.len());
    for s in soft {
        let b0 = u8::from(s.re < 0.0);
        let b1 = u8::from(s.im < 0.0);
        bits.push(b0);
        bits.push(b1);
        hard.push(Complex64::new(
            if b0 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 },
            if b1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 },
        ));
    }
    (hard, bits)
}

/// Scheme, sequence set and the dense `MN x n_s` spreading operator.
#[derive(Debug, Clone)]
pub struct SpreadingPlan {
    scheme: Scheme,
    seq_matrix: Option<SequenceMatrix>,
    n_mult: usize,
    n_s: usize,
    m: usize,
    n: usize,
    expanded: CMat,
}

impl SpreadingPlan {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seq_matrix(&self) -> Option<&SequenceMatrix> {
        self.seq_matrix.as_ref()
    }

    pub fn family(&self) -> Option<Family> {
        self.seq_matrix.as_ref().map(SequenceMatrix::family)
    }

    pub fn n_mult(&self) -> usize {
        self.n_mult
    }

    /// Symbols per frame.
    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn expanded(&self) -> &CMat {
        &self.expanded
    }

    /// Convenience constructor: builds the sequence matrix for `family` at the
    /// scheme's sequence length. `family` is ignored for pure OTFS.
    pub fn from_params(grid: &GridConfig, scheme: Scheme, family: Family, n_mult: usize) -> Result<Self> {
        match scheme.sequence_length(grid) {
            None => build_spreading_plan(grid, scheme, None),
            Some(len) => {
                let c = build_sequence_matrix(family, len, n_mult)?;
                build_spreading_plan(grid, scheme, Some(c))
            }
        }
    }
}

/// Places the sequence matrix into the expanded operator for a scheme.
///
/// * delay spreading: block diagonal with `N` copies of `C`
/// * Doppler spreading: row `n` of `C` lands in rows `nM + m`, column block `m`
/// * delay-Doppler spreading: the operator is `C` itself
/// * pure OTFS: identity, no sequence matrix
pub fn build_spreading_plan(
    grid: &GridConfig,
    scheme: Scheme,
    seq_matrix: Option<SequenceMatrix>,
) -> Result<SpreadingPlan> {
    grid.validate()?;
    let (m, n) = (grid.m, grid.n);
    let mn = grid.size();
    let Some(expected_len) = scheme.sequence_length(grid) else {
        if seq_matrix.is_some() {
            return Err(Error::InvalidParameter("pure OTFS takes no spreading sequences".into()));
        }
        return Ok(SpreadingPlan {
            scheme,
            seq_matrix: None,
            n_mult: mn,
            n_s: mn,
            m,
            n,
            expanded: CMat::identity(mn, mn),
        });
    };
    let c = seq_matrix
        .ok_or_else(|| Error::InvalidParameter(format!("{scheme} needs a sequence matrix")))?;
    if c.length() != expected_len {
        return Err(Error::InvalidParameter(format!(
            "{scheme} needs sequences of length {expected_len}, got {}",
            c.length()
        )));
    }
    let n_mult = c.n_mult();
    if n_mult > expected_len {
        return Err(Error::InvalidParameter(format!(
            "{scheme} supports at most {expected_len} multiplexed sequences, got {n_mult}"
        )));
    }
    let n_s = scheme.symbols_per_frame(grid, n_mult);
    let cm = c.to_matrix();
    let mut e = CMat::zeros(mn, n_s);
    match scheme {
        Scheme::DelayCdma => {
            for slot in 0..n {
                e.view_mut((slot * m, slot * n_mult), (m, n_mult)).copy_from(&cm);
            }
        }
        Scheme::DopplerCdma => {
            for slot in 0..n {
                for bin in 0..m {
                    for k in 0..n_mult {
                        e[(slot * m + bin, bin * n_mult + k)] = cm[(slot, k)];
                    }
                }
            }
        }
        Scheme::DelayDopplerCdma => e.copy_from(&cm),
        Scheme::PureOtfs => unreachable!(),
    }
    Ok(SpreadingPlan {
        scheme,
        seq_matrix: Some(c),
        n_mult,
        n_s,
        m,
        n,
        expanded: e,
    })
}

/// Transmitted or received delay-Doppler signal.
///
/// Stored as a column-major `M x N` grid, so the backing slice is the
/// column-stacked vector with `vec[n M + m] = grid[m, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdFrame {
    grid: CMat,
}

impl DdFrame {
    pub fn from_grid(grid: CMat) -> Self {
        Self { grid }
    }

    pub fn from_vec(m: usize, n: usize, vec: &[Complex64]) -> Result<Self> {
        if vec.len() != m * n {
            return Err(Error::Framing(format!(
                "vector of length {} does not fill a {m}x{n} grid",
                vec.len()
            )));
        }
        Ok(Self {
            grid: CMat::from_column_slice(m, n, vec),
        })
    }

    pub fn grid(&self) -> &CMat {
        &self.grid
    }

    pub fn vec(&self) -> &[Complex64] {
        self.grid.as_slice()
    }

    pub fn m(&self) -> usize {
        self.grid.nrows()
    }

    pub fn n(&self) -> usize {
        self.grid.ncols()
    }

    /// `||x||^2`.
    pub fn energy(&self) -> f64 {
        self.grid.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// `x = C s`, de-stacked into the delay-Doppler grid.
pub fn spread(plan: &SpreadingPlan, symbols: &[Complex64]) -> Result<DdFrame> {
    if symbols.len() != plan.n_s {
        return Err(Error::Framing(format!(
            "plan expects {} symbols, got {}",
            plan.n_s,
            symbols.len()
        )));
    }
    let vec = match plan.scheme {
        Scheme::PureOtfs => symbols.to_vec(),
        _ => mul_vec(&plan.expanded, symbols),
    };
    DdFrame::from_vec(plan.m, plan.n, &vec)
}

/// `beta n_s / (M N)` bits per channel use.
pub fn throughput(plan: &SpreadingPlan, grid: &GridConfig) -> f64 {
    (grid.bits_per_symbol * plan.n_s) as f64 / grid.size() as f64
}
