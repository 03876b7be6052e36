//! Communication and sensing path sampling, and the delay-Doppler channel
//! operator.
//!
//! The channel acts per time slot `n` on the time-domain samples
//! `x_n = (X F_N^H)[:, n]`:
//!
//! ```text
//! y_n[m] = sum_p h_p exp(j 2 pi nu_p (n M + m - tau_p) / (M N)) * x_n[m - tau_p]
//! ```
//!
//! where the shift `x_n[m - tau]` is cyclic within the slot and becomes a
//! band-limited (Dirichlet) interpolation when `tau` is fractional. The
//! delay-Doppler operator is `H = (F_N kron F_M^H) blkdiag(Hbar_n) (F_N^H kron F_M)`
//! with unitary DFT matrices throughout.
//!
//! Two representations are provided:
//!
//! * [`build_dd_channel`] materializes the dense `MN x MN` matrix literally
//!   from the Kronecker sandwich. It picks the integer-delay route
//!   (`Hbar_n = F_M H_n F_M^H`) or the fractional route (`Hbar_n = F_M B_n`).
//! * [`DdChannel`] applies the same operator to vectors with `O(MN (M + N))`
//!   work per path, which is what the Monte-Carlo loops use.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DdFrame, GridConfig};
use crate::linalg::{cis, dft_matrix, matmul, mul_vec, CMat};
use crate::SPEED_OF_LIGHT;

/// Delays closer than this to an integer use the integer-delay route.
const INTEGER_TOLERANCE: f64 = 1e-12;

/// One propagation path in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Complex64,
    /// Delay index `tau = delta_f M tau_seconds`.
    pub delay: f64,
    /// Doppler index `nu = N nu_hz / delta_f`.
    pub doppler: f64,
}

impl Path {
    pub fn new(gain: Complex64, delay: f64, doppler: f64) -> Self {
        Self { gain, delay, doppler }
    }

    fn integer_delay(&self) -> Option<usize> {
        let r = self.delay.round();
        ((self.delay - r).abs() < INTEGER_TOLERANCE && r >= 0.0).then_some(r as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Communication,
    Sensing,
}

/// Ground truth for one sensing target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub range_m: f64,
    pub velocity_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub grid: GridConfig,
    pub kind: PathKind,
    /// Per-target truth for sensing path sets; the first `truth.len()` paths
    /// are the target paths.
    pub truth: Vec<TargetTruth>,
}

impl PathSet {
    /// Line-based record: a header, optional `target` lines, then one
    /// `gain_re gain_im delay doppler` line per path.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let kind = match self.kind {
            PathKind::Communication => "communication",
            PathKind::Sensing => "sensing",
        };
        let g = &self.grid;
        let _ = writeln!(
            out,
            "# pathset kind={kind} m={} n={} delta_f={:e} carrier={:e}",
            g.m, g.n, g.delta_f, g.carrier
        );
        for t in &self.truth {
            let _ = writeln!(out, "# target {:e} {:e}", t.range_m, t.velocity_mps);
        }
        for p in &self.paths {
            let _ = writeln!(out, "{:e} {:e} {:e} {:e}", p.gain.re, p.gain.im, p.delay, p.doppler);
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidParameter(format!("path record: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty record"))?;
        let fields: Vec<&str> = header
            .strip_prefix("# pathset ")
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .collect();
        let lookup = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(&format!("header lacks {key}")))
        };
        let kind = match lookup("kind")? {
            "communication" => PathKind::Communication,
            "sensing" => PathKind::Sensing,
            other => return Err(bad(&format!("unknown kind {other}"))),
        };
        let num = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| bad(&format!("bad number '{s}'"))) };
        let int = |s: &str| -> Result<usize> { s.parse::<usize>().map_err(|_| bad(&format!("bad integer '{s}'"))) };
        let grid = GridConfig::new(
            int(lookup("m")?)?,
            int(lookup("n")?)?,
            num(lookup("delta_f")?)?,
            num(lookup("carrier")?)?,
        )?;
        let mut paths = Vec::new();
        let mut truth = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("# target ") {
                let v: Vec<&str> = rest.split_whitespace().collect();
                if v.len() != 2 {
                    return Err(bad("target line needs range and velocity"));
                }
                truth.push(TargetTruth {
                    range_m: num(v[0])?,
                    velocity_mps: num(v[1])?,
                });
                continue;
            }
            let v: Vec<&str> = line.split_whitespace().collect();
            if v.len() != 4 {
                return Err(bad("path line needs four fields"));
            }
            paths.push(Path::new(Complex64::new(num(v[0])?, num(v[1])?), num(v[2])?, num(v[3])?));
        }
        if paths.is_empty() {
            return Err(bad("no paths"));
        }
        Ok(Self { paths, grid, kind, truth })
    }
}

/// How the NLOS communication Doppler index is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DopplerRounding {
    /// `round(2 nu_max (eta - 0.5))`, integer indices.
    Literal,
    /// `2 nu_max (eta - 0.5)` without rounding.
    #[default]
    Fractional,
}

impl FromStr for DopplerRounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "literal" => Ok(Self::Literal),
            "fractional" => Ok(Self::Fractional),
            other => Err(Error::InvalidParameter(format!("unknown doppler rounding '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommChannelParams {
    /// Number of paths, path 0 is line of sight.
    pub paths: usize,
    /// Number of delay taps.
    pub taps: usize,
    /// Rician K factor (linear, may be infinite).
    pub kappa: f64,
    /// Receiver velocity in m/s.
    pub velocity_mps: f64,
    pub doppler_rounding: DopplerRounding,
}

impl CommChannelParams {
    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        let mut problems = Vec::new();
        if self.paths == 0 {
            problems.push("communication path count must be at least 1".to_string());
        }
        if self.taps == 0 {
            problems.push("communication delay taps must be at least 1".to_string());
        } else if self.taps >= grid.m {
            problems.push(format!("delay taps ({}) must be below M ({})", self.taps, grid.m));
        }
        if !(self.kappa >= 0.0) {
            problems.push(format!("Rician K must be non-negative, got {}", self.kappa));
        }
        if !(self.velocity_mps >= 0.0 && self.velocity_mps.is_finite()) {
            problems.push(format!("receiver velocity must be non-negative, got {}", self.velocity_mps));
        }
        let nu_max = max_doppler_index(grid, self.velocity_mps);
        if 2.0 * nu_max >= grid.n as f64 && self.velocity_mps.is_finite() {
            problems.push(format!(
                "maximum Doppler index {nu_max} must stay below N/2 = {}",
                grid.n as f64 / 2.0
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// `ceil(f_c N V / (delta_f c0))`.
pub fn max_doppler_index(grid: &GridConfig, velocity_mps: f64) -> f64 {
    (grid.carrier * grid.n as f64 * velocity_mps / (grid.delta_f * SPEED_OF_LIGHT)).ceil()
}

/// Circularly-symmetric complex Gaussian with the given total variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Rician communication channel with integer delays.
pub fn sample_comm_channel<R: Rng + ?Sized>(
    params: &CommChannelParams,
    grid: &GridConfig,
    rng: &mut R,
) -> Result<PathSet> {
    params.validate(grid)?;
    let nu_max = max_doppler_index(grid, params.velocity_mps);
    let mut paths = Vec::with_capacity(params.paths);
    if params.kappa.is_infinite() {
        paths.push(Path::new(Complex64::new(1.0, 0.0), 0.0, nu_max));
        return Ok(PathSet {
            paths,
            grid: *grid,
            kind: PathKind::Communication,
            truth: Vec::new(),
        });
    }
    let k = params.kappa;
    paths.push(Path::new(Complex64::new((k / (k + 1.0)).sqrt(), 0.0), 0.0, nu_max));
    let nlos = params.paths - 1;
    let nlos_var = if nlos > 0 { 1.0 / ((k + 1.0) * nlos as f64) } else { 0.0 };
    let taps = params.taps;
    let mut used = vec![0usize];
    for p in 1..params.paths {
        let gain = complex_gaussian(rng, nlos_var);
        let delay = if params.paths >= taps {
            p % taps
        } else {
            // redraw until the tap is distinct from every earlier path
            loop {
                let eta: f64 = rng.random();
                let d = (taps as f64 * eta).round() as usize;
                if !used.contains(&d) {
                    break d;
                }
            }
        };
        used.push(delay);
        let eta: f64 = rng.random();
        let raw = 2.0 * nu_max * (eta - 0.5);
        let doppler = match params.doppler_rounding {
            DopplerRounding::Literal => raw.round(),
            DopplerRounding::Fractional => raw,
        };
        paths.push(Path::new(gain, delay as f64, doppler));
    }
    Ok(PathSet {
        paths,
        grid: *grid,
        kind: PathKind::Communication,
        truth: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingTarget {
    pub range_m: f64,
    pub velocity_mps: f64,
    /// Radar cross-section in m^2.
    pub rcs_m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenChannelParams {
    pub targets: Vec<SensingTarget>,
    /// Number of NLOS clutter paths.
    pub nlos_paths: usize,
    /// Rician K factor (linear, may be infinite).
    pub kappa: f64,
}

impl SenChannelParams {
    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        let mut problems = Vec::new();
        if self.targets.is_empty() {
            problems.push("at least one sensing target is required".to_string());
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(t.range_m > 0.0 && t.range_m.is_finite()) {
                problems.push(format!("target {i}: range must be positive, got {}", t.range_m));
            } else if sensing_delay_index(grid, t.range_m) >= grid.m as f64 {
                problems.push(format!(
                    "target {i}: range {} m is beyond the unambiguous delay range of {:.3} m",
                    t.range_m,
                    index_to_range(grid, grid.m as f64)
                ));
            }
            if !t.velocity_mps.is_finite() {
                problems.push(format!("target {i}: velocity must be finite"));
            }
            if !(t.rcs_m2 > 0.0 && t.rcs_m2.is_finite()) {
                problems.push(format!("target {i}: radar cross-section must be positive, got {}", t.rcs_m2));
            }
        }
        if !(self.kappa >= 0.0) {
            problems.push(format!("sensing Rician K must be non-negative, got {}", self.kappa));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Smallest radar-equation power gain over the targets.
    pub fn min_power_gain(&self, grid: &GridConfig) -> f64 {
        self.targets
            .iter()
            .map(|t| radar_power_gain(grid, t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Squared LOS gain of the weakest target, `kappa / (kappa + 1) * min alpha`.
    pub fn weakest_target_gain2(&self, grid: &GridConfig) -> f64 {
        los_fraction(self.kappa) * self.min_power_gain(grid)
    }
}

fn los_fraction(kappa: f64) -> f64 {
    if kappa.is_infinite() {
        1.0
    } else {
        kappa / (kappa + 1.0)
    }
}

/// Monostatic delay index `2 delta_f M R / c0`.
pub fn sensing_delay_index(grid: &GridConfig, range_m: f64) -> f64 {
    2.0 * grid.delta_f * grid.m as f64 * range_m / SPEED_OF_LIGHT
}

/// Monostatic Doppler index `2 f_c N V / (delta_f c0)`.
pub fn sensing_doppler_index(grid: &GridConfig, velocity_mps: f64) -> f64 {
    2.0 * grid.carrier * grid.n as f64 * velocity_mps / (grid.delta_f * SPEED_OF_LIGHT)
}

/// Range for a (possibly fractional) delay index, `tau c0 / (2 M delta_f)`.
pub fn index_to_range(grid: &GridConfig, delay: f64) -> f64 {
    delay * SPEED_OF_LIGHT / (2.0 * grid.m as f64 * grid.delta_f)
}

/// Velocity for a Doppler index, `nu delta_f c0 / (2 N f_c)`.
pub fn index_to_velocity(grid: &GridConfig, doppler: f64) -> f64 {
    doppler * grid.delta_f * SPEED_OF_LIGHT / (2.0 * grid.n as f64 * grid.carrier)
}

/// Radar-equation power gain `c0^2 sigma / ((4 pi)^3 f_c^2 R^4)`.
pub fn radar_power_gain(grid: &GridConfig, target: &SensingTarget) -> f64 {
    SPEED_OF_LIGHT.powi(2) * target.rcs_m2 / ((4.0 * PI).powi(3) * grid.carrier.powi(2) * target.range_m.powi(4))
}

/// Monostatic sensing channel: one LOS path per target followed by NLOS
/// clutter. Clutter ranges whose delay index falls outside `[0, M)` are
/// redrawn.
pub fn sample_sensing_channel<R: Rng + ?Sized>(
    params: &SenChannelParams,
    grid: &GridConfig,
    rng: &mut R,
) -> Result<PathSet> {
    params.validate(grid)?;
    let los = los_fraction(params.kappa).sqrt();
    let mut paths: Vec<Path> = params
        .targets
        .iter()
        .map(|t| {
            Path::new(
                Complex64::new(los * radar_power_gain(grid, t).sqrt(), 0.0),
                sensing_delay_index(grid, t.range_m),
                sensing_doppler_index(grid, t.velocity_mps),
            )
        })
        .collect();
    let truth = params
        .targets
        .iter()
        .map(|t| TargetTruth {
            range_m: t.range_m,
            velocity_mps: t.velocity_mps,
        })
        .collect();
    if params.nlos_paths > 0 && params.kappa.is_finite() {
        let min_amp = params.min_power_gain(grid).sqrt();
        let var = min_amp * min_amp / (params.nlos_paths as f64 * (params.kappa + 1.0));
        let max_range = params.kappa.powf(0.25)
            * params.targets.iter().map(|t| t.range_m).fold(0.0, f64::max);
        let max_velocity = grid.delta_f * SPEED_OF_LIGHT / (4.0 * grid.carrier);
        for _ in 0..params.nlos_paths {
            let gain = complex_gaussian(rng, var);
            let delay = loop {
                let eta: f64 = rng.random();
                let d = sensing_delay_index(grid, max_range * eta);
                if d < grid.m as f64 {
                    break d;
                }
            };
            let eta: f64 = rng.random();
            let velocity = 2.0 * max_velocity * (eta - 0.5);
            paths.push(Path::new(gain, delay, sensing_doppler_index(grid, velocity)));
        }
    }
    Ok(PathSet {
        paths,
        grid: *grid,
        kind: PathKind::Sensing,
        truth,
    })
}

/// Time-domain gain of a path at sample `n M + m`.
#[inline]
fn td_gain(path: &Path, m: usize, n: usize, mm: usize, nn: usize) -> Complex64 {
    let t = (n * mm + m) as f64 - path.delay;
    path.gain * cis(2.0 * PI * path.doppler * t / (mm * nn) as f64)
}

fn check_delays(paths: &[Path], m: usize) -> Result<()> {
    for (i, p) in paths.iter().enumerate() {
        if !(p.delay >= 0.0 && p.delay < m as f64) {
            return Err(Error::Domain(format!(
                "path {i}: delay index {} outside [0, {m})",
                p.delay
            )));
        }
        if !(p.doppler.is_finite() && p.gain.re.is_finite() && p.gain.im.is_finite()) {
            return Err(Error::Domain(format!("path {i}: non-finite gain or Doppler")));
        }
    }
    Ok(())
}

/// Per-slot time-frequency blocks `F_M H_n F_M^H` from the integer-delay
/// time-domain matrices.
pub fn tfd_blocks_integer(paths: &[Path], m: usize, n: usize) -> Result<Vec<CMat>> {
    check_delays(paths, m)?;
    let shifts: Vec<usize> = paths
        .iter()
        .map(|p| {
            p.integer_delay()
                .ok_or_else(|| Error::Domain(format!("delay {} is not an integer", p.delay)))
        })
        .collect::<Result<_>>()?;
    let fm = dft_matrix(m);
    let fm_h = fm.adjoint();
    Ok((0..n)
        .map(|slot| {
            let mut h = CMat::zeros(m, m);
            for (p, &s) in paths.iter().zip(&shifts) {
                for row in 0..m {
                    h[(row, (row + m - s) % m)] += td_gain(p, row, slot, m, n);
                }
            }
            &fm * h * &fm_h
        })
        .collect())
}

/// Per-slot time-frequency blocks `F_M B_n` with the fractional-delay map
/// `B_n[m, k] = (1/sqrt M) sum_p h_{m,n,p} exp(j 2 pi (m - tau_p) k / M)`.
pub fn tfd_blocks_fractional(paths: &[Path], m: usize, n: usize) -> Result<Vec<CMat>> {
    check_delays(paths, m)?;
    let fm = dft_matrix(m);
    let scale = 1.0 / (m as f64).sqrt();
    Ok((0..n)
        .map(|slot| {
            let mut b = CMat::zeros(m, m);
            for p in paths {
                for row in 0..m {
                    let h = td_gain(p, row, slot, m, n) * scale;
                    for k in 0..m {
                        b[(row, k)] += h * cis(2.0 * PI * (row as f64 - p.delay) * k as f64 / m as f64);
                    }
                }
            }
            &fm * b
        })
        .collect())
}

/// `(F_N kron F_M^H) blkdiag(blocks) (F_N^H kron F_M)`.
pub fn assemble_dd_channel(blocks: &[CMat], m: usize, n: usize) -> CMat {
    assert_eq!(blocks.len(), n);
    let fm = dft_matrix(m);
    let fnn = dft_matrix(n);
    let left = fnn.kronecker(&fm.adjoint());
    let right = fnn.adjoint().kronecker(&fm);
    let mut hx = CMat::zeros(m * n, m * n);
    for (slot, b) in blocks.iter().enumerate() {
        hx.view_mut((slot * m, slot * m), (m, m)).copy_from(b);
    }
    matmul(&matmul(&left, &hx), &right)
}

/// Dense `MN x MN` delay-Doppler channel. Uses the integer-delay route when
/// every delay is an integer and the fractional route otherwise.
pub fn build_dd_channel(paths: &PathSet) -> Result<CMat> {
    let (m, n) = (paths.grid.m, paths.grid.n);
    let blocks = if paths.paths.iter().all(|p| p.integer_delay().is_some()) {
        tfd_blocks_integer(&paths.paths, m, n)?
    } else {
        tfd_blocks_fractional(&paths.paths, m, n)?
    };
    Ok(assemble_dd_channel(&blocks, m, n))
}

/// A linear map on column-stacked delay-Doppler vectors.
pub trait DdOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;

    /// Applies the operator to every column of `x`.
    fn apply_columns(&self, x: &CMat) -> CMat {
        assert_eq!(x.nrows(), self.dim());
        let mut out = CMat::zeros(self.dim(), x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let y = self.apply(col.as_slice());
            out.column_mut(j).copy_from_slice(&y);
        }
        out
    }
}

impl DdOperator for CMat {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        mul_vec(self, x)
    }
}

struct PathTables {
    /// Time-domain gain for every sample `n M + m`.
    gains: Vec<Complex64>,
    shift: Option<usize>,
    /// `exp(-j 2 pi tau k / M)` for fractional delays.
    ramp: Vec<Complex64>,
}

/// Delay-Doppler channel applied without materializing the `MN x MN` matrix.
pub struct DdChannel {
    m: usize,
    n: usize,
    paths: Vec<Path>,
    tables: Vec<PathTables>,
    fm: CMat,
    fm_h: CMat,
    fn_: CMat,
    fn_h: CMat,
    any_fractional: bool,
}

impl DdChannel {
    pub fn new(paths: &[Path], m: usize, n: usize) -> Result<Self> {
        check_delays(paths, m)?;
        if paths.is_empty() {
            return Err(Error::InvalidParameter("channel needs at least one path".into()));
        }
        let tables: Vec<PathTables> = paths
            .iter()
            .map(|p| {
                let shift = p.integer_delay();
                let mut gains = Vec::with_capacity(m * n);
                for slot in 0..n {
                    for row in 0..m {
                        gains.push(td_gain(p, row, slot, m, n));
                    }
                }
                let ramp = if shift.is_none() {
                    (0..m).map(|k| cis(-2.0 * PI * p.delay * k as f64 / m as f64)).collect()
                } else {
                    Vec::new()
                };
                PathTables { gains, shift, ramp }
            })
            .collect();
        let any_fractional = tables.iter().any(|t| t.shift.is_none());
        let fm = dft_matrix(m);
        let fn_ = dft_matrix(n);
        Ok(Self {
            m,
            n,
            paths: paths.to_vec(),
            tables,
            fm_h: fm.adjoint(),
            fm,
            fn_h: fn_.adjoint(),
            fn_,
            any_fractional,
        })
    }

    pub fn from_path_set(paths: &PathSet) -> Result<Self> {
        Self::new(&paths.paths, paths.grid.m, paths.grid.n)
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    /// Dense matrix obtained by applying the operator to unit vectors.
    pub fn to_dense(&self) -> CMat {
        self.apply_columns(&CMat::identity(self.dim(), self.dim()))
    }

    /// Time-domain samples `X F_N^H` of a delay-Doppler grid.
    pub(crate) fn to_time_domain(&self, x: &CMat) -> CMat {
        x * &self.fn_h
    }

    /// Channel output in the time domain, before the final `F_N`.
    pub(crate) fn time_domain_response(&self, td: &CMat) -> CMat {
        let (m, n) = (self.m, self.n);
        let tfd = self.any_fractional.then(|| &self.fm * td);
        let mut y = CMat::zeros(m, n);
        let mut scratch = vec![Complex64::new(0.0, 0.0); m];
        for t in &self.tables {
            match t.shift {
                Some(s) => {
                    for slot in 0..n {
                        let src = td.column(slot);
                        let mut dst = y.column_mut(slot);
                        let g = &t.gains[slot * m..(slot + 1) * m];
                        for row in 0..m {
                            dst[row] += g[row] * src[(row + m - s) % m];
                        }
                    }
                }
                None => {
                    let tfd = tfd.as_ref().expect("fractional path without TFD samples");
                    for slot in 0..n {
                        let src = tfd.column(slot);
                        for (k, v) in scratch.iter_mut().enumerate() {
                            *v = src[k] * t.ramp[k];
                        }
                        let g = &t.gains[slot * m..(slot + 1) * m];
                        let mut dst = y.column_mut(slot);
                        for row in 0..m {
                            let z: Complex64 = (0..m).map(|k| self.fm_h[(row, k)] * scratch[k]).sum();
                            dst[row] += g[row] * z;
                        }
                    }
                }
            }
        }
        y
    }

    pub(crate) fn time_to_delay_doppler(&self, y: &CMat) -> CMat {
        y * &self.fn_
    }
}

impl DdOperator for DdChannel {
    fn dim(&self) -> usize {
        self.m * self.n
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim());
        let grid = CMat::from_column_slice(self.m, self.n, x);
        let td = self.to_time_domain(&grid);
        let y = self.time_domain_response(&td);
        self.time_to_delay_doppler(&y).as_slice().to_vec()
    }
}

/// `y = H x + z` with `z` circularly-symmetric Gaussian of per-sample power `n0`.
pub fn apply_channel<O: DdOperator + ?Sized, R: Rng + ?Sized>(
    channel: &O,
    frame: &DdFrame,
    n0: f64,
    rng: &mut R,
) -> Result<DdFrame> {
    if !(n0 >= 0.0) {
        return Err(Error::Domain(format!("noise power must be non-negative, got {n0}")));
    }
    let mut y = channel.apply(frame.vec());
    if n0 > 0.0 {
        for v in &mut y {
            *v += complex_gaussian(rng, n0);
        }
    }
    DdFrame::from_vec(frame.m(), frame.n(), &y)
}
