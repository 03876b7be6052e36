//! Spreading sequence families: Sylvester-Hadamard, Zadoff-Chu and Gold.
//!
//! Every generated [`Sequence`] is power-normalized (`c^H c = 1`). Member
//! ordering within a family is fixed so that `build_sequence_matrix` is
//! deterministic:
//!
//! * Hadamard: natural Sylvester row order, row 0 is the all-ones row.
//! * Zadoff-Chu: root 1, member `k` is the cyclic shift by `k`.
//! * Gold: member 0 and 1 are the two m-sequences, member `2 + k` is their
//!   XOR with the second sequence shifted by `k`.
//!
//! Gold codes have length `2^d - 1`. When the spreading dimension is longer
//! the binary code is extended cyclically (repeating its first chips) before
//! normalization.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gold,
    Hadamard,
    ZadoffChu,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gold, Family::Hadamard, Family::ZadoffChu];

    /// Short name used in file names and CSV metadata.
    pub fn short_name(self) -> &'static str {
        match self {
            Family::Gold => "gold",
            Family::Hadamard => "had",
            Family::ZadoffChu => "zc",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gold => "Gold",
            Family::Hadamard => "Hadamard",
            Family::ZadoffChu => "Zadoff-Chu",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gold" => Ok(Family::Gold),
            "hadamard" | "had" => Ok(Family::Hadamard),
            "zadoff-chu" | "zadoffchu" | "zc" => Ok(Family::ZadoffChu),
            other => Err(Error::InvalidParameter(format!("unknown sequence family '{other}'"))),
        }
    }
}

/// One power-normalized spreading code.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    values: Vec<Complex64>,
    family: Family,
    family_index: usize,
}

impl Sequence {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn family_index(&self) -> usize {
        self.family_index
    }

    /// `c^H c`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Row `index` of the Sylvester-Hadamard matrix of size `order`, scaled by
/// `1/sqrt(order)`.
pub fn gen_hadamard(order: usize, index: usize) -> Result<Sequence> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "Hadamard order must be a power of two, got {order}"
        )));
    }
    if index >= order {
        return Err(Error::InvalidParameter(format!(
            "Hadamard row {index} out of range for order {order}"
        )));
    }
    let a = 1.0 / (order as f64).sqrt();
    let values = (0..order)
        .map(|j| {
            // H[i, j] = (-1)^popcount(i & j) for the Sylvester construction
            let sign = if (index & j).count_ones().is_multiple_of(2) { a } else { -a };
            Complex64::new(sign, 0.0)
        })
        .collect();
    Ok(Sequence {
        values,
        family: Family::Hadamard,
        family_index: index,
    })
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zadoff-Chu sequence of root `root`, cyclically shifted left by `shift`:
/// chip `n` is `exp(-j pi u k (k + q) / L) / sqrt(L)` with `k = (n + shift) mod L`
/// and `q = L mod 2`.
pub fn gen_zadoff_chu(length: usize, root: u64, shift: usize) -> Result<Sequence> {
    if length == 0 {
        return Err(Error::InvalidParameter("Zadoff-Chu length must be positive".into()));
    }
    if length == 1 {
        return Ok(Sequence {
            values: vec![Complex64::new(1.0, 0.0)],
            family: Family::ZadoffChu,
            family_index: 0,
        });
    }
    if root == 0 || gcd(root, length as u64) != 1 {
        return Err(Error::InvalidParameter(format!(
            "Zadoff-Chu root {root} is not coprime with length {length}"
        )));
    }
    if shift >= length {
        return Err(Error::InvalidParameter(format!(
            "cyclic shift {shift} out of range for length {length}"
        )));
    }
    let l = length as u64;
    let q = l % 2;
    let scale = 1.0 / (length as f64).sqrt();
    let values = (0..length)
        .map(|n| {
            let k = ((n + shift) % length) as u64;
            // reduce u k (k + q) modulo 2L to keep the phase argument small
            let e = ((root % (2 * l)) as u128 * (k * (k + q)) as u128 % (2 * l) as u128) as f64;
            cis(-std::f64::consts::PI * e / length as f64) * scale
        })
        .collect();
    Ok(Sequence {
        values,
        family: Family::ZadoffChu,
        family_index: shift,
    })
}

/// Binary feedback polynomial given by the exponents of its non-zero terms,
/// e.g. `[6, 1, 0]` for `x^6 + x + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfsrPolynomial {
    exponents: Vec<u32>,
}

impl LfsrPolynomial {
    pub fn new(exponents: &[u32]) -> Result<Self> {
        let mut exps = exponents.to_vec();
        exps.sort_unstable_by(|a, b| b.cmp(a));
        exps.dedup();
        if exps.len() < 2 || *exps.last().unwrap() != 0 || exps[0] == 0 || exps[0] > 30 {
            return Err(Error::InvalidParameter(format!(
                "polynomial {exponents:?} needs a degree in 1..=30 and a constant term"
            )));
        }
        Ok(Self { exponents: exps })
    }

    pub fn degree(&self) -> u32 {
        self.exponents[0]
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    /// The m-sequence generated from the all-ones state, one period long.
    ///
    /// Uses the recurrence `a[k + d] = sum_i c_i a[k + i] (mod 2)`. Fails when
    /// the polynomial does not produce a maximal-length sequence.
    pub fn m_sequence(&self) -> Result<Vec<u8>> {
        let d = self.degree() as usize;
        let period = (1usize << d) - 1;
        let taps: Vec<usize> = self.exponents[1..].iter().map(|&e| e as usize).collect();
        let mut seq: Vec<u8> = vec![1; d];
        seq.reserve(period);
        while seq.len() < period + d {
            let k = seq.len() - d;
            let bit = taps.iter().fold(0u8, |acc, &i| acc ^ seq[k + i]);
            seq.push(bit);
        }
        // maximal iff the state first returns to all-ones after exactly `period` steps
        let first_return = (1..=period).find(|&k| seq[k..k + d].iter().all(|&b| b == 1));
        if first_return != Some(period) {
            return Err(Error::InvalidParameter(format!(
                "polynomial {:?} is not primitive (no maximal-length sequence)",
                self.exponents
            )));
        }
        seq.truncate(period);
        Ok(seq)
    }
}

/// Polynomial pair used to build a Gold family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub first: LfsrPolynomial,
    pub second: LfsrPolynomial,
    /// Whether the pair is a preferred pair (three-valued cross-correlation).
    /// Degrees divisible by four have no preferred pair; a low-peak pair with
    /// a four-valued spectrum is used instead.
    pub preferred: bool,
}

impl GoldPair {
    pub fn new(first: LfsrPolynomial, second: LfsrPolynomial, preferred: bool) -> Result<Self> {
        if first.degree() != second.degree() {
            return Err(Error::InvalidParameter("Gold pair degrees differ".into()));
        }
        if first == second {
            return Err(Error::InvalidParameter("Gold pair polynomials must differ".into()));
        }
        Ok(Self {
            first,
            second,
            preferred,
        })
    }

    /// Built-in pair for degrees 3 through 12.
    pub fn for_degree(degree: u32) -> Result<Self> {
        let (a, b, preferred): (&[u32], &[u32], bool) = match degree {
            3 => (&[3, 1, 0], &[3, 2, 0], true),
            4 => (&[4, 1, 0], &[4, 3, 0], false),
            5 => (&[5, 2, 0], &[5, 4, 3, 2, 0], true),
            6 => (&[6, 1, 0], &[6, 5, 2, 1, 0], true),
            7 => (&[7, 3, 0], &[7, 3, 2, 1, 0], true),
            8 => (&[8, 4, 3, 2, 0], &[8, 5, 3, 2, 0], false),
            9 => (&[9, 4, 0], &[9, 6, 4, 3, 0], true),
            10 => (&[10, 3, 0], &[10, 8, 3, 2, 0], true),
            11 => (&[11, 2, 0], &[11, 8, 5, 2, 0], true),
            12 => (&[12, 6, 4, 1, 0], &[12, 10, 5, 4, 0], false),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "no built-in Gold pair for degree {degree} (supported: 3..=12)"
                )))
            }
        };
        Self::new(LfsrPolynomial::new(a)?, LfsrPolynomial::new(b)?, preferred)
    }

    pub fn degree(&self) -> u32 {
        self.first.degree()
    }

    pub fn family_size(&self) -> usize {
        (1usize << self.degree()) + 1
    }

    /// Binary code of family member `index`, length `2^d - 1`.
    pub fn code_bits(&self, index: usize) -> Result<Vec<u8>> {
        let size = self.family_size();
        if index >= size {
            return Err(Error::InvalidParameter(format!(
                "Gold member {index} out of range (family size {size})"
            )));
        }
        let u = self.first.m_sequence()?;
        let v = self.second.m_sequence()?;
        Ok(match index {
            0 => u,
            1 => v,
            _ => {
                let k = index - 2;
                let len = u.len();
                (0..len).map(|i| u[i] ^ v[(i + k) % len]).collect()
            }
        })
    }
}

/// Largest Gold degree whose code length `2^d - 1` fits in `length`.
pub fn gold_degree_for_length(length: usize) -> Result<u32> {
    let d = usize::BITS - 1 - (length + 1).leading_zeros();
    if d < 3 {
        return Err(Error::InvalidParameter(format!(
            "Gold codes need a spreading length of at least 7, got {length}"
        )));
    }
    Ok(d)
}

/// Gold family member `index` mapped to `{+1, -1}`, cyclically extended to
/// `target_len` chips and power-normalized.
pub fn gen_gold(pair: &GoldPair, index: usize, target_len: usize) -> Result<Sequence> {
    let bits = pair.code_bits(index)?;
    if target_len < bits.len() {
        return Err(Error::InvalidParameter(format!(
            "target length {target_len} shorter than Gold code length {}",
            bits.len()
        )));
    }
    let a = 1.0 / (target_len as f64).sqrt();
    let values = (0..target_len)
        .map(|i| Complex64::new(if bits[i % bits.len()] == 0 { a } else { -a }, 0.0))
        .collect();
    Ok(Sequence {
        values,
        family: Family::Gold,
        family_index: index,
    })
}

/// Number of distinct members a family provides at a spreading length.
pub fn family_capacity(family: Family, length: usize) -> Result<usize> {
    match family {
        Family::Hadamard => {
            if length.is_power_of_two() {
                Ok(length)
            } else {
                Err(Error::InvalidParameter(format!(
                    "Hadamard order must be a power of two, got {length}"
                )))
            }
        }
        Family::ZadoffChu => {
            if length == 0 {
                Err(Error::InvalidParameter("Zadoff-Chu length must be positive".into()))
            } else {
                Ok(length)
            }
        }
        Family::Gold => Ok((1usize << gold_degree_for_length(length)?) + 1),
    }
}

/// The ordered sequence set `C = (c_0, ..., c_{n_mult - 1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMatrix {
    columns: Vec<Sequence>,
}

impl SequenceMatrix {
    pub fn new(columns: Vec<Sequence>) -> Result<Self> {
        let first = columns
            .first()
            .ok_or_else(|| Error::InvalidParameter("sequence matrix needs a column".into()))?;
        if columns
            .iter()
            .any(|c| c.len() != first.len() || c.family != first.family)
        {
            return Err(Error::InvalidParameter(
                "sequence matrix columns must share one length and family".into(),
            ));
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[Sequence] {
        &self.columns
    }

    pub fn n_mult(&self) -> usize {
        self.columns.len()
    }

    pub fn length(&self) -> usize {
        self.columns[0].len()
    }

    pub fn family(&self) -> Family {
        self.columns[0].family
    }

    /// Dense `length x n_mult` matrix.
    pub fn to_matrix(&self) -> CMat {
        CMat::from_fn(self.length(), self.n_mult(), |r, c| self.columns[c].values[r])
    }

    /// `C^H C`.
    pub fn gram(&self) -> CMat {
        let c = self.to_matrix();
        c.adjoint() * c
    }

    /// CSV dump: one column per sequence, each cell a quoted `re,im` pair.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{}_{}", c.family.short_name(), c.family_index))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.length() {
            let row: Vec<String> = self
                .columns
                .iter()
                .map(|c| format!("\"{},{}\"", c.values[r].re, c.values[r].im))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Members `0..n_mult` of `family` at spreading length `length`.
pub fn build_sequence_matrix(family: Family, length: usize, n_mult: usize) -> Result<SequenceMatrix> {
    let limit = family_capacity(family, length)?;
    if n_mult == 0 {
        return Err(Error::InvalidParameter("n_mult must be at least 1".into()));
    }
    if n_mult > limit {
        return Err(Error::Capacity {
            family,
            length,
            limit,
            requested: n_mult,
        });
    }
    let columns = match family {
        Family::Hadamard => (0..n_mult)
            .map(|i| gen_hadamard(length, i))
            .collect::<Result<Vec<_>>>()?,
        Family::ZadoffChu => (0..n_mult)
            .map(|k| gen_zadoff_chu(length, 1, k))
            .collect::<Result<Vec<_>>>()?,
        Family::Gold => {
            let pair = GoldPair::for_degree(gold_degree_for_length(length)?)?;
            (0..n_mult)
                .map(|i| gen_gold(&pair, i, length))
                .collect::<Result<Vec<_>>>()?
        }
    };
    SequenceMatrix::new(columns)
}
