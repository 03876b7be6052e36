//! Monostatic target estimation.
//!
//! Estimation runs in two steps:
//!
//! 1. Data cancellation. The received frame is correlated against every
//!    integer delay-Doppler shift of the transmitted frame,
//!    `h = X_X^H y`, and the strongest peaks of `|h|^2` give coarse integer
//!    indices.
//! 2. ML refinement. Around each coarse pair, a `(2 N_ML + 1)^2` grid of
//!    fractional hypotheses is scored with
//!    `|x^H H^H y|^2 / (x^H H^H H x)`, where `H` is a unit-gain single-path
//!    channel.
//!
//! The estimator only consumes the transmitted and received delay-Doppler
//! frames, so OTFS and every spread scheme share the same code path.
//!
//! Indices convert to physical units with the subcarrier spacing as the
//! sampling reference: `R = tau c0 / (2 M delta_f)` and
//! `V = nu delta_f c0 / (2 N f_c)`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::channel::{index_to_range, index_to_velocity, DdChannel, Path, TargetTruth};
use crate::error::{Error, Result};
use crate::frame::{DdFrame, GridConfig};
use crate::linalg::{cis, dft_matrix, CMat};

/// The matrix whose columns are all integer delay-Doppler shifts of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedTx {
    m: usize,
    n: usize,
    matrix: CMat,
}

impl ExpandedTx {
    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `|X_X^H y|^2` for every hypothesis, indexed `tau + M nu`.
    pub fn correlation_power(&self, y: &[Complex64]) -> Result<Vec<f64>> {
        check_len(y.len(), self.m * self.n)?;
        Ok(self
            .matrix
            .column_iter()
            .map(|c| c.iter().zip(y).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr())
            .collect())
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidParameter(format!(
            "received vector has {got} samples, expected {want}"
        )));
    }
    Ok(())
}

/// `exp(j 2 pi nu2 d / (M N))` for `nu2 in 0..N`, `d in -(M-1)..M`.
fn shift_phases(m: usize, n: usize) -> Vec<Complex64> {
    let width = 2 * m - 1;
    let mut table = Vec::with_capacity(n * width);
    for nu in 0..n {
        for d in 0..width {
            let diff = d as f64 - (m as f64 - 1.0);
            table.push(cis(2.0 * PI * nu as f64 * diff / (m * n) as f64));
        }
    }
    table
}

pub fn build_expanded_tx(frame: &DdFrame) -> ExpandedTx {
    let (m, n) = (frame.m(), frame.n());
    let x = frame.grid();
    let phases = shift_phases(m, n);
    let width = 2 * m - 1;
    let mut matrix = CMat::zeros(m * n, m * n);
    for nu2 in 0..n {
        for tau2 in 0..m {
            let col = tau2 + m * nu2;
            for nu1 in 0..n {
                for tau1 in 0..m {
                    let d = tau1 + m - 1 - tau2;
                    matrix[(tau1 + m * nu1, col)] =
                        x[((tau1 + m - tau2) % m, (nu1 + n - nu2) % n)] * phases[nu2 * width + d];
                }
            }
        }
    }
    ExpandedTx { m, n, matrix }
}

/// `|X_X^H y|^2` without materializing the expanded matrix.
pub fn correlation_power(frame: &DdFrame, y: &[Complex64]) -> Result<Vec<f64>> {
    let (m, n) = (frame.m(), frame.n());
    check_len(y.len(), m * n)?;
    let x = frame.grid();
    let phases = shift_phases(m, n);
    let width = 2 * m - 1;
    let mut out = Vec::with_capacity(m * n);
    for nu2 in 0..n {
        let ph = &phases[nu2 * width..(nu2 + 1) * width];
        for tau2 in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for nu1 in 0..n {
                let xc = x.column((nu1 + n - nu2) % n);
                let yc = &y[nu1 * m..(nu1 + 1) * m];
                for tau1 in 0..m {
                    let v = xc[(tau1 + m - tau2) % m] * ph[tau1 + m - 1 - tau2];
                    acc += v.conj() * yc[tau1];
                }
            }
            out.push(acc.norm_sqr());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegerTarget {
    pub delay: usize,
    pub doppler: usize,
    pub peak: f64,
}

/// Coarse per-target indices, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerEstimate {
    pub targets: Vec<IntegerTarget>,
}

fn cyclic_distance(a: usize, b: usize, len: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(len - d)
}

/// Greedy peak picking over `|h|^2` indexed `tau + M nu`. Later picks must
/// lie more than `exclusion_radius` (cyclic, per axis) away from earlier
/// ones. Ties go to the lowest index.
pub fn pick_peaks(
    power: &[f64],
    m: usize,
    n: usize,
    targets: usize,
    exclusion_radius: usize,
) -> Result<IntegerEstimate> {
    if targets == 0 {
        return Err(Error::InvalidParameter("target count must be at least 1".into()));
    }
    check_len(power.len(), m * n)?;
    let mut picked: Vec<IntegerTarget> = Vec::with_capacity(targets);
    for _ in 0..targets {
        let mut best: Option<(usize, f64)> = None;
        for (idx, &p) in power.iter().enumerate() {
            let (tau, nu) = (idx % m, idx / m);
            let excluded = picked.iter().any(|t| {
                cyclic_distance(t.delay, tau, m) <= exclusion_radius
                    && cyclic_distance(t.doppler, nu, n) <= exclusion_radius
            });
            if excluded {
                continue;
            }
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((idx, p));
            }
        }
        let Some((idx, peak)) = best else {
            return Err(Error::InvalidParameter(format!(
                "cannot place {targets} targets with exclusion radius {exclusion_radius}"
            )));
        };
        picked.push(IntegerTarget {
            delay: idx % m,
            doppler: idx / m,
            peak,
        });
    }
    Ok(IntegerEstimate { targets: picked })
}

/// Coarse estimate from the expanded transmit matrix.
pub fn data_cancellation_estimate(
    xx: &ExpandedTx,
    y: &[Complex64],
    targets: usize,
    exclusion_radius: usize,
) -> Result<IntegerEstimate> {
    let power = xx.correlation_power(y)?;
    pick_peaks(&power, xx.m, xx.n, targets, exclusion_radius)
}

/// Unit-gain single-path channel at a (possibly fractional) delay-Doppler pair.
pub fn build_unit_channel(delay: f64, doppler: f64, grid: &GridConfig) -> Result<DdChannel> {
    DdChannel::new(&[Path::new(Complex64::new(1.0, 0.0), delay, doppler)], grid.m, grid.n)
}

/// Offsets `i / N_ML` for `i in -N_ML..=N_ML`.
pub fn candidate_offsets(n_ml: usize) -> Vec<f64> {
    let k = n_ml as i64;
    (-k..=k).map(|i| i as f64 / n_ml as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedTarget {
    pub delay: f64,
    pub doppler: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedEstimate {
    pub targets: Vec<RefinedTarget>,
}

/// Evaluates the ML metric for one transmitted/received frame pair.
///
/// Works in the delay-time domain: the unit channel's Doppler term only
/// rotates each time sample, so `||H x||^2` is the energy of the delayed
/// signal and the correlation reduces to a weighted phase sum.
pub struct MlRefiner {
    m: usize,
    n: usize,
    /// Transmitted frame in the time-frequency domain, `F_M X F_N^H`.
    tfd: CMat,
    fm_h: CMat,
    /// Received frame in the delay-time domain, `Y F_N^H`.
    y_td: CMat,
}

impl MlRefiner {
    pub fn new(x: &DdFrame, y: &DdFrame) -> Result<Self> {
        let (m, n) = (x.m(), x.n());
        if y.m() != m || y.n() != n {
            return Err(Error::InvalidParameter(format!(
                "received frame is {}x{}, transmitted frame is {m}x{n}",
                y.m(),
                y.n()
            )));
        }
        let fm = dft_matrix(m);
        let fn_h = dft_matrix(n).adjoint();
        let tfd = &fm * (x.grid() * &fn_h);
        let y_td = y.grid() * &fn_h;
        Ok(Self {
            m,
            n,
            tfd,
            fm_h: fm.adjoint(),
            y_td,
        })
    }

    /// Delay-time samples of the transmitted frame delayed by `tau`.
    fn delayed(&self, tau: f64) -> CMat {
        let m = self.m;
        let mut shifted = self.tfd.clone();
        for k in 0..m {
            let r = cis(-2.0 * PI * tau * k as f64 / m as f64);
            for v in shifted.row_mut(k).iter_mut() {
                *v *= r;
            }
        }
        &self.fm_h * shifted
    }

    /// Per-sample weights `conj(z) y` and the energy `||z||^2`.
    fn weights(&self, tau: f64) -> (Vec<Complex64>, f64) {
        let z = self.delayed(tau);
        let energy = z.iter().map(|v| v.norm_sqr()).sum();
        let w = z.iter().zip(self.y_td.iter()).map(|(a, b)| a.conj() * b).collect();
        (w, energy)
    }

    fn doppler_metric(&self, w: &[Complex64], energy: f64, nu: f64) -> f64 {
        if energy <= 0.0 {
            return 0.0;
        }
        let step = cis(-2.0 * PI * nu / (self.m * self.n) as f64);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for &v in w {
            acc += v * rot;
            rot *= step;
        }
        acc.norm_sqr() / energy
    }

    /// `|x^H H^H y|^2 / ||H x||^2` for a unit channel at `(tau, nu)`.
    pub fn metric(&self, tau: f64, nu: f64) -> f64 {
        let (w, energy) = self.weights(tau);
        self.doppler_metric(&w, energy, nu)
    }

    /// Best candidate around one coarse pair; ties go to the lowest delay,
    /// then the lowest Doppler.
    pub fn refine_one(&self, coarse_tau: f64, coarse_nu: f64, n_ml: usize) -> Result<(f64, f64, f64)> {
        if n_ml == 0 {
            return Err(Error::InvalidParameter("refinement factor must be at least 1".into()));
        }
        let offsets = candidate_offsets(n_ml);
        let mut best = (coarse_tau, coarse_nu, f64::NEG_INFINITY);
        for &dt in &offsets {
            let tau = coarse_tau + dt;
            // a delay shift of M only rotates the whole response by a constant phase
            let (w, energy) = self.weights(tau.rem_euclid(self.m as f64));
            for &dn in &offsets {
                let nu = coarse_nu + dn;
                let score = self.doppler_metric(&w, energy, nu);
                if score > best.2 {
                    best = (tau, nu, score);
                }
            }
        }
        Ok(best)
    }
}

/// Refines every coarse target independently and converts to range and
/// velocity. Coarse Doppler indices are read in `[0, N)`, so velocities come
/// out non-negative up to the unambiguous limit.
pub fn ml_refine(
    x: &DdFrame,
    y: &DdFrame,
    coarse: &IntegerEstimate,
    n_ml: usize,
    grid: &GridConfig,
) -> Result<RefinedEstimate> {
    let refiner = MlRefiner::new(x, y)?;
    let targets = coarse
        .targets
        .iter()
        .map(|t| {
            let (delay, doppler, metric) = refiner.refine_one(t.delay as f64, t.doppler as f64, n_ml)?;
            Ok(RefinedTarget {
                delay,
                doppler,
                range_m: index_to_range(grid, delay),
                velocity_mps: index_to_velocity(grid, doppler),
                metric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefinedEstimate { targets })
}

/// `((estimated range, estimated velocity), (true range, true velocity))`.
pub type MatchedPair = ((f64, f64), (f64, f64));

/// Pairs each truth with the unused estimate nearest in range.
pub fn match_by_range(estimates: &[RefinedTarget], truths: &[TargetTruth]) -> Result<Vec<MatchedPair>> {
    if estimates.len() != truths.len() {
        return Err(Error::InvalidParameter(format!(
            "{} estimates for {} targets",
            estimates.len(),
            truths.len()
        )));
    }
    let mut used = vec![false; estimates.len()];
    let mut pairs = Vec::with_capacity(truths.len());
    for t in truths {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in estimates.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = (e.range_m - t.range_m).abs();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("equal lengths leave an unused estimate");
        used[i] = true;
        let e = &estimates[i];
        pairs.push(((e.range_m, e.velocity_mps), (t.range_m, t.velocity_mps)));
    }
    Ok(pairs)
}

/// Range and velocity RMSE over matched `(estimate, truth)` pairs.
pub fn rmse(pairs: &[MatchedPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("RMSE needs at least one estimate".into()));
    }
    let k = pairs.len() as f64;
    let (sr, sv) = pairs.iter().fold((0.0, 0.0), |(sr, sv), ((re, ve), (rt, vt))| {
        (sr + (re - rt).powi(2), sv + (ve - vt).powi(2))
    });
    Ok(((sr / k).sqrt(), (sv / k).sqrt()))
}

/// Writes `|h|^2` as `M` rows (delay) by `N` columns (Doppler).
pub fn write_imaging_csv<W: Write>(power: &[f64], m: usize, n: usize, mut out: W) -> Result<()> {
    check_len(power.len(), m * n)?;
    for tau in 0..m {
        let row: Vec<String> = (0..n).map(|nu| format!("{:e}", power[tau + m * nu])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, build_dd_channel, complex_gaussian, DdOperator, PathKind, PathSet};
    use crate::frame::{map_bits_qpsk, spread, Scheme, SpreadingPlan};
    use crate::linalg::{max_abs_diff, mul_vec};
    use crate::sequences::Family;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(m: usize, n: usize) -> GridConfig {
        GridConfig::new(m, n, 120e3, 40e9).unwrap()
    }

    fn random_frame(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DdFrame {
        let bits: Vec<u8> = (0..2 * m * n).map(|_| rng.random_range(0..2u8)).collect();
        DdFrame::from_vec(m, n, &map_bits_qpsk(&bits).unwrap()).unwrap()
    }

    fn unit_path(delay: f64, doppler: f64) -> Vec<Path> {
        vec![Path::new(Complex64::new(1.0, 0.0), delay, doppler)]
    }

    fn receive(x: &DdFrame, delay: f64, doppler: f64) -> DdFrame {
        let op = DdChannel::new(&unit_path(delay, doppler), x.m(), x.n()).unwrap();
        DdFrame::from_vec(x.m(), x.n(), &op.apply(x.vec())).unwrap()
    }

    #[test]
    fn zero_shift_column_is_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_frame(&mut rng, 4, 4);
        let xx = build_expanded_tx(&x);
        let col: Vec<Complex64> = xx.matrix().column(0).iter().copied().collect();
        assert_eq!(col, x.vec());
    }

    #[test]
    fn hand_evaluated_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_frame(&mut rng, 4, 4);
        let xx = build_expanded_tx(&x);
        let (t1, n1, t2, n2) = (1i64, 2i64, 3i64, 1i64);
        let expected = x.grid()[((t1 - t2).rem_euclid(4) as usize, (n1 - n2).rem_euclid(4) as usize)]
            * Complex64::from_polar(1.0, 2.0 * PI * n2 as f64 * (t1 - t2) as f64 / 16.0);
        let got = xx.matrix()[((t1 + 4 * n1) as usize, (t2 + 4 * n2) as usize)];
        assert!((got - expected).norm() < 1e-14);
    }

    #[test]
    fn columns_keep_frame_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_frame(&mut rng, 4, 4);
        let norm = x.energy().sqrt();
        let xx = build_expanded_tx(&x);
        for c in xx.matrix().column_iter() {
            assert!((c.norm() - norm).abs() < 1e-10);
        }
    }

    #[test]
    fn columns_are_shifted_channel_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_frame(&mut rng, 8, 4);
        let xx = build_expanded_tx(&x);
        for (tau, nu) in [(0, 0), (3, 2), (7, 3), (5, 1)] {
            let y = receive(&x, tau as f64, nu as f64);
            let col: Vec<Complex64> = xx.matrix().column(tau + 8 * nu).iter().copied().collect();
            let err = col.iter().zip(y.vec()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "({tau},{nu}) {err}");
        }
    }

    #[test]
    fn streaming_correlation_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_frame(&mut rng, 8, 8);
        let y: Vec<Complex64> = (0..64).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let dense = build_expanded_tx(&x).correlation_power(&y).unwrap();
        let fast = correlation_power(&x, &y).unwrap();
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn noiseless_integer_target_identified() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x = random_frame(&mut rng, 8, 8);
            let tau = rng.random_range(0..8usize);
            let nu = rng.random_range(0..8usize);
            let y = receive(&x, tau as f64, nu as f64);
            let est = data_cancellation_estimate(&build_expanded_tx(&x), y.vec(), 1, 0).unwrap();
            assert_eq!((est.targets[0].delay, est.targets[0].doppler), (tau, nu));
            // exhaustive maximum over all hypotheses agrees
            let power = correlation_power(&x, y.vec()).unwrap();
            let argmax = (0..64).fold(0, |b, i| if power[i] > power[b] { i } else { b });
            assert_eq!(argmax, tau + 8 * nu);
        }
    }

    #[test]
    fn fractional_target_lands_in_neighbourhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0;
        for _ in 0..100 {
            let x = random_frame(&mut rng, 8, 8);
            let y = receive(&x, 3.4, 2.5);
            let est = data_cancellation_estimate(&build_expanded_tx(&x), y.vec(), 1, 0).unwrap();
            let t = est.targets[0];
            if (t.delay as f64 - 3.0).abs() <= 1.0 && (2..=3).contains(&t.doppler) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn zero_input_ties_to_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_frame(&mut rng, 8, 8);
        let est = data_cancellation_estimate(&build_expanded_tx(&x), &vec![Complex64::new(0.0, 0.0); 64], 2, 0)
            .unwrap();
        assert_eq!((est.targets[0].delay, est.targets[0].doppler, est.targets[0].peak), (0, 0, 0.0));
        assert_eq!((est.targets[1].delay, est.targets[1].doppler), (1, 0));
    }

    #[test]
    fn peaks_sorted_and_excluded() {
        let mut power = vec![0.0; 64];
        power[3 + 8 * 2] = 5.0;
        power[4 + 8 * 2] = 4.0;
        power[8 * 6] = 3.0;
        let est = pick_peaks(&power, 8, 8, 2, 0).unwrap();
        assert_eq!((est.targets[1].delay, est.targets[1].doppler), (4, 2));
        let est = pick_peaks(&power, 8, 8, 2, 1).unwrap();
        assert_eq!((est.targets[1].delay, est.targets[1].doppler), (0, 6));
        assert!(est.targets[0].peak >= est.targets[1].peak);
        assert!(pick_peaks(&power, 8, 8, 0, 0).is_err());
        assert!(pick_peaks(&power, 8, 8, 2, 4).is_err());
    }

    #[test]
    fn unit_channel_properties() {
        let g = grid(4, 4);
        let id = build_unit_channel(0.0, 0.0, &g).unwrap().to_dense();
        assert!(max_abs_diff(&id, &CMat::identity(16, 16)) < 1e-10);
        for (tau, nu) in [(1.3, -0.4), (2.0, 1.0), (0.5, 3.7)] {
            let h = build_unit_channel(tau, nu, &g).unwrap().to_dense();
            let trace: Complex64 = (h.adjoint() * &h).trace();
            assert!((trace.re - 16.0).abs() < 1e-8 && trace.im.abs() < 1e-8);
        }
        assert!(matches!(build_unit_channel(4.0, 0.0, &g), Err(Error::Domain(_))));
        // impulse shift at integer indices
        let g8 = grid(8, 8);
        let h = build_unit_channel(2.0, 5.0, &g8).unwrap();
        let mut x = vec![Complex64::new(0.0, 0.0); 64];
        x[1 + 8 * 6] = Complex64::new(1.0, 0.0);
        let y = h.apply(&x);
        assert!(y[3 + 8 * 3].norm_sqr() > 0.9999);
    }

    fn literal_metric(x: &DdFrame, y: &DdFrame, tau: f64, nu: f64) -> f64 {
        let ps = PathSet {
            paths: unit_path(tau, nu),
            grid: grid(x.m(), x.n()),
            kind: PathKind::Sensing,
            truth: vec![],
        };
        let h = build_dd_channel(&ps).unwrap();
        let hx = mul_vec(&h, x.vec());
        let num: Complex64 = hx.iter().zip(y.vec()).map(|(a, b)| a.conj() * b).sum();
        num.norm_sqr() / hx.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    #[test]
    fn metric_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_frame(&mut rng, 8, 8);
        let y = receive(&x, 3.3, 1.7);
        let r = MlRefiner::new(&x, &y).unwrap();
        for (tau, nu) in [(3.0, 2.0), (3.25, 1.75), (0.5, -0.5), (7.75, 7.25)] {
            let a = r.metric(tau, nu);
            let b = literal_metric(&x, &y, tau, nu);
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "({tau},{nu}) {a} vs {b}");
        }
    }

    #[test]
    fn refinement_hits_exact_grid_point() {
        let g = grid(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_frame(&mut rng, 8, 8);
        let y = receive(&x, 3.5, 2.25);
        let coarse = data_cancellation_estimate(&build_expanded_tx(&x), y.vec(), 1, 0).unwrap();
        let est = ml_refine(&x, &y, &coarse, 4, &g).unwrap();
        let t = est.targets[0];
        // exhaustive oracle over the same candidate grid with dense channels
        let c = coarse.targets[0];
        let mut best = (0.0, 0.0, f64::NEG_INFINITY);
        for dt in candidate_offsets(4) {
            for dn in candidate_offsets(4) {
                let tau = c.delay as f64 + dt;
                let nu = c.doppler as f64 + dn;
                let v = literal_metric(&x, &y, tau.rem_euclid(8.0), nu);
                if v > best.2 {
                    best = (tau, nu, v);
                }
            }
        }
        assert_eq!((best.0, best.1), (3.5, 2.25));
        assert!((t.delay - 3.5).abs() < 1e-12 && (t.doppler - 2.25).abs() < 1e-12);
    }

    #[test]
    fn refinement_window_sizes() {
        assert_eq!(candidate_offsets(1), vec![-1.0, 0.0, 1.0]);
        assert_eq!(candidate_offsets(1).len().pow(2), 9);
        assert_eq!(candidate_offsets(4).len(), 9);
    }

    #[test]
    fn range_conversion_by_hand() {
        let g = grid(64, 64);
        let r = index_to_range(&g, 25.6);
        assert!((r - 25.6 * 299_792_458.0 / (2.0 * 64.0 * 120e3)).abs() < 1e-9);
        assert!((r - 499.65).abs() < 0.1);
    }

    #[test]
    fn finer_refinement_lowers_error() {
        let g = grid(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut e1, mut e4) = (0.0, 0.0);
        for _ in 0..100 {
            let x = random_frame(&mut rng, 8, 8);
            let tau = 1.0 + 5.0 * rng.random::<f64>();
            let nu = 1.0 + 5.0 * rng.random::<f64>();
            let y = receive(&x, tau, nu);
            let coarse = data_cancellation_estimate(&build_expanded_tx(&x), y.vec(), 1, 0).unwrap();
            let truth = index_to_range(&g, tau);
            e1 += (ml_refine(&x, &y, &coarse, 1, &g).unwrap().targets[0].range_m - truth).abs();
            e4 += (ml_refine(&x, &y, &coarse, 4, &g).unwrap().targets[0].range_m - truth).abs();
        }
        assert!(e4 <= e1, "N_ML=4 error {e4} vs N_ML=1 error {e1}");
    }

    #[test]
    fn spread_frames_use_same_estimator() {
        let g = grid(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let plan = SpreadingPlan::from_params(&g, Scheme::DelayCdma, Family::Gold, 8).unwrap();
        let bits: Vec<u8> = (0..2 * plan.n_s()).map(|_| rng.random_range(0..2u8)).collect();
        let x = spread(&plan, &map_bits_qpsk(&bits).unwrap()).unwrap();
        let op = DdChannel::new(&unit_path(2.0, 3.0), 8, 8).unwrap();
        let y = apply_channel(&op, &x, 0.0, &mut rng).unwrap();
        let coarse = pick_peaks(&correlation_power(&x, y.vec()).unwrap(), 8, 8, 1, 0).unwrap();
        let est = ml_refine(&x, &y, &coarse, 2, &g).unwrap();
        assert!((est.targets[0].delay - 2.0).abs() < 1e-12);
        assert!((est.targets[0].doppler - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[((500.0, 200.0), (500.0, 200.0))]).unwrap(), (0.0, 0.0));
        assert_eq!(rmse(&[((503.0, 200.0), (500.0, 200.0))]).unwrap().0, 3.0);
        let r = rmse(&[((503.0, 0.0), (500.0, 0.0)), ((496.0, 0.0), (500.0, 0.0))]).unwrap();
        assert!((r.0 - (12.5f64).sqrt()).abs() < 1e-12);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn matching_by_nearest_range() {
        let est = |r: f64, v: f64| RefinedTarget {
            delay: 0.0,
            doppler: 0.0,
            range_m: r,
            velocity_mps: v,
            metric: 0.0,
        };
        let truths = [
            TargetTruth {
                range_m: 100.0,
                velocity_mps: 10.0,
            },
            TargetTruth {
                range_m: 300.0,
                velocity_mps: -5.0,
            },
        ];
        let pairs = match_by_range(&[est(298.0, -4.0), est(101.0, 9.0)], &truths).unwrap();
        assert_eq!(pairs[0], ((101.0, 9.0), (100.0, 10.0)));
        assert_eq!(pairs[1], ((298.0, -4.0), (300.0, -5.0)));
        assert!(match_by_range(&[est(1.0, 1.0)], &truths).is_err());
    }

    #[test]
    fn imaging_csv_shape() {
        let power: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut buf = Vec::new();
        write_imaging_csv(&power, 4, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].split(',').count(), 3);
        assert!(rows[1].starts_with("1e0,5e0"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn refinement_never_degrades(seed in any::<u64>(), tau in 0.0f64..7.0, nu in -3.0f64..3.0, n_ml in 1usize..5) {
            let g = grid(8, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_frame(&mut rng, 8, 8);
            let clean = receive(&x, tau, nu);
            let noisy = apply_channel(&CMat::identity(64, 64), &clean, 0.5, &mut rng).unwrap();
            let coarse = pick_peaks(&correlation_power(&x, noisy.vec()).unwrap(), 8, 8, 1, 0).unwrap();
            let c = coarse.targets[0];
            let r = MlRefiner::new(&x, &noisy).unwrap();
            let est = ml_refine(&x, &noisy, &coarse, n_ml, &g).unwrap().targets[0];
            prop_assert!(est.metric >= r.metric(c.delay as f64, c.doppler as f64));
            prop_assert!((est.delay - c.delay as f64).abs() <= 1.0);
            prop_assert!((est.doppler - c.doppler as f64).abs() <= 1.0);
        }
    }
}
