//! Seeded BER and RMSE sweeps over Eb/N0.
//!
//! Every frame draws from its own RNG stream, derived from
//! `(seed, ebno_index, frame_index)`, in the order channel, bits, noise.
//! Frames run in fixed-size batches on a dedicated thread pool and are
//! accumulated in frame order, so results do not depend on the worker count.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel::{
    apply_channel, sample_comm_channel, sample_sensing_channel, CommChannelParams, DdChannel, PathSet,
    SenChannelParams,
};
use crate::crb::{crb_range, crb_velocity, CrbInputs};
use crate::error::{Error, Result};
use crate::frame::{map_bits_qpsk, spread, DdFrame, GridConfig, Scheme, SpreadingPlan};
use crate::receiver::{count_bit_errors, n0_from_ebno_db, MmseDetector};
use crate::sensing::{correlation_power, match_by_range, ml_refine, pick_peaks};
use crate::sequences::Family;

/// Frames simulated between stopping-rule checks.
const FRAME_BATCH: usize = 16;

/// Stream reserved for the per-sweep clutter draw.
const CLUTTER_STREAM: u64 = u64::MAX;

/// RNG for one frame: ChaCha8 seeded with `seed_from_u64(seed)`, on stream
/// `(ebno_index << 32) | frame_index`.
pub fn derive_rng_stream(seed: u64, ebno_index: u32, frame_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(ebno_index) << 32) | u64::from(frame_index));
    rng
}

fn check_ebno_grid(ebno_db: &[f64], problems: &mut Vec<String>) {
    if ebno_db.is_empty() {
        problems.push("Eb/N0 grid must not be empty".into());
    }
    if ebno_db.iter().any(|v| !v.is_finite()) {
        problems.push("Eb/N0 values must be finite".into());
    }
    if ebno_db.windows(2).any(|w| w[1] <= w[0]) {
        problems.push("Eb/N0 grid must be strictly increasing".into());
    }
}

fn check_plan(grid: &GridConfig, scheme: Scheme, n_mult: usize, problems: &mut Vec<String>) {
    if scheme != Scheme::PureOtfs && (n_mult == 0 || n_mult > scheme.max_n_mult(grid)) {
        problems.push(format!(
            "n_mult must be in 1..={} for {scheme}, got {n_mult}",
            scheme.max_n_mult(grid)
        ));
    }
}

fn collect(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

fn push_err(result: Result<()>, problems: &mut Vec<String>) {
    match result {
        Ok(()) => {}
        Err(Error::Config(p)) => problems.extend(p),
        Err(e) => problems.push(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerSweepConfig {
    pub grid: GridConfig,
    pub scheme: Scheme,
    pub family: Family,
    pub n_mult: usize,
    pub channel: CommChannelParams,
    pub ebno_db: Vec<f64>,
    pub min_bit_errors: u64,
    pub max_bits: u64,
    pub seed: u64,
}

impl BerSweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        push_err(self.grid.validate(), &mut problems);
        if problems.is_empty() {
            push_err(self.channel.validate(&self.grid), &mut problems);
            check_plan(&self.grid, self.scheme, self.n_mult, &mut problems);
        }
        check_ebno_grid(&self.ebno_db, &mut problems);
        if self.min_bit_errors == 0 {
            problems.push("min_bit_errors must be positive".into());
        }
        if self.max_bits == 0 {
            problems.push("max_bits must be positive".into());
        }
        collect(problems)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSweepConfig {
    pub grid: GridConfig,
    pub scheme: Scheme,
    pub family: Family,
    pub n_mult: usize,
    pub channel: SenChannelParams,
    pub ebno_db: Vec<f64>,
    pub frames: usize,
    pub n_ml: usize,
    pub exclusion_radius: usize,
    /// Draw the clutter once per sweep instead of once per frame.
    pub fixed_clutter: bool,
    /// Run without noise; the Eb/N0 grid then only labels rows and sets the
    /// reference bounds.
    pub noiseless: bool,
    pub seed: u64,
}

impl RmseSweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        push_err(self.grid.validate(), &mut problems);
        if problems.is_empty() {
            push_err(self.channel.validate(&self.grid), &mut problems);
            check_plan(&self.grid, self.scheme, self.n_mult, &mut problems);
        }
        check_ebno_grid(&self.ebno_db, &mut problems);
        if self.frames == 0 {
            problems.push("frames must be positive".into());
        }
        if self.n_ml == 0 {
            problems.push("N_ML must be at least 1".into());
        }
        collect(problems)
    }

    /// Noise power per sample: the weakest target's LOS power over `beta Eb/N0`.
    pub fn n0(&self, ebno_db: f64) -> f64 {
        self.channel.weakest_target_gain2(&self.grid) * n0_from_ebno_db(ebno_db, self.grid.bits_per_symbol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerRow {
    pub ebno_db: f64,
    pub ber: f64,
    pub bits: u64,
    pub errors: u64,
    pub frames: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub ebno_db: f64,
    pub rmse_range_m: f64,
    pub rmse_velocity_mps: f64,
    pub crb_range_m: f64,
    pub crb_velocity_mps: f64,
    pub frames: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult<R> {
    pub rows: Vec<R>,
    pub metadata: serde_json::Value,
}

impl SweepResult<BerRow> {
    /// CSV text. Wall-clock seconds are written as 0 unless `timing` is set,
    /// so reruns are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("ebno_db,ber,bits,errors,frames,seconds\n");
        for r in &self.rows {
            let secs = if timing { r.seconds } else { 0.0 };
            out.push_str(&format!(
                "{},{:e},{},{},{},{}\n",
                r.ebno_db, r.ber, r.bits, r.errors, r.frames, secs
            ));
        }
        out
    }
}

impl SweepResult<RmseRow> {
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out =
            String::from("ebno_db,rmse_range_m,rmse_velocity_mps,crb_range_m,crb_velocity_mps,frames,seconds\n");
        for r in &self.rows {
            let secs = if timing { r.seconds } else { 0.0 };
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{},{}\n",
                r.ebno_db, r.rmse_range_m, r.rmse_velocity_mps, r.crb_range_m, r.crb_velocity_mps, r.frames, secs
            ));
        }
        out
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config(vec!["workers must be at least 1".into()]));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))
}

fn locate(seed: u64, ebno_index: usize, frame: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("seed {seed}, Eb/N0 index {ebno_index}, frame {frame}: {msg}")),
        other => other,
    }
}

fn random_bits<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<u8> {
    (0..count).map(|_| u8::from(rng.random::<bool>())).collect()
}

fn ber_frame(cfg: &BerSweepConfig, plan: &SpreadingPlan, ebno_index: usize, frame: usize, n0: f64) -> Result<(u64, u64)> {
    let mut rng = derive_rng_stream(cfg.seed, ebno_index as u32, frame as u32);
    let paths = sample_comm_channel(&cfg.channel, &cfg.grid, &mut rng)?;
    let channel = DdChannel::from_path_set(&paths)?;
    let bits = random_bits(&mut rng, cfg.grid.bits_per_symbol * plan.n_s());
    let x = spread(plan, &map_bits_qpsk(&bits)?)?;
    let y = apply_channel(&channel, &x, n0, &mut rng)?;
    let detected = MmseDetector::new(&channel, plan, n0)?.detect(y.vec())?;
    let errors = count_bit_errors(&detected.bits_hat, &bits)?;
    Ok((errors as u64, bits.len() as u64))
}

/// Runs frames until `min_bit_errors` errors or `max_bits` bits per point.
pub fn run_ber_sweep(cfg: &BerSweepConfig, workers: usize) -> Result<SweepResult<BerRow>> {
    cfg.validate()?;
    let pool = thread_pool(workers)?;
    let plan = SpreadingPlan::from_params(&cfg.grid, cfg.scheme, cfg.family, cfg.n_mult)?;
    let mut rows = Vec::with_capacity(cfg.ebno_db.len());
    for (ei, &ebno) in cfg.ebno_db.iter().enumerate() {
        let start = Instant::now();
        let n0 = n0_from_ebno_db(ebno, cfg.grid.bits_per_symbol);
        let (mut errors, mut bits, mut frames) = (0u64, 0u64, 0u64);
        'point: loop {
            let first = frames as usize;
            let batch: Vec<Result<(u64, u64)>> = pool.install(|| {
                (first..first + FRAME_BATCH)
                    .into_par_iter()
                    .map(|f| ber_frame(cfg, &plan, ei, f, n0).map_err(locate(cfg.seed, ei, f)))
                    .collect()
            });
            for r in batch {
                let (e, b) = r?;
                errors += e;
                bits += b;
                frames += 1;
                if errors >= cfg.min_bit_errors || bits >= cfg.max_bits {
                    break 'point;
                }
            }
        }
        rows.push(BerRow {
            ebno_db: ebno,
            ber: errors as f64 / bits as f64,
            bits,
            errors,
            frames,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let metadata = json!({
        "kind": "ber",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "workers": workers,
        "config": cfg,
        "n_s": plan.n_s(),
        "rng": "ChaCha8 seed_from_u64(seed), stream (ebno_index << 32) | frame_index",
        "noise_power": "N0 = 1 / (beta Eb/N0)",
        "doppler_rounding": cfg.channel.doppler_rounding,
        "seconds": rows.iter().map(|r| r.seconds).collect::<Vec<_>>(),
    });
    Ok(SweepResult { rows, metadata })
}

#[derive(Debug, Clone, Copy, Default)]
struct SensingTally {
    sq_range: f64,
    sq_velocity: f64,
    count: usize,
    power: f64,
}

fn rmse_frame(
    cfg: &RmseSweepConfig,
    plan: &SpreadingPlan,
    fixed: Option<&PathSet>,
    ebno_index: usize,
    frame: usize,
    n0: f64,
) -> Result<SensingTally> {
    let mut rng = derive_rng_stream(cfg.seed, ebno_index as u32, frame as u32);
    let drawn;
    let paths = match fixed {
        Some(p) => p,
        None => {
            drawn = sample_sensing_channel(&cfg.channel, &cfg.grid, &mut rng)?;
            &drawn
        }
    };
    let channel = DdChannel::from_path_set(paths)?;
    let bits = random_bits(&mut rng, cfg.grid.bits_per_symbol * plan.n_s());
    let x = spread(plan, &map_bits_qpsk(&bits)?)?;
    let y = apply_channel(&channel, &x, n0, &mut rng)?;
    let estimate = estimate_targets(&x, &y, cfg)?;
    let pairs = match_by_range(&estimate, &paths.truth)?;
    let mut tally = SensingTally {
        count: pairs.len(),
        power: x.energy() / cfg.grid.size() as f64,
        ..Default::default()
    };
    for ((re, ve), (rt, vt)) in pairs {
        tally.sq_range += (re - rt).powi(2);
        tally.sq_velocity += (ve - vt).powi(2);
    }
    Ok(tally)
}

fn estimate_targets(x: &DdFrame, y: &DdFrame, cfg: &RmseSweepConfig) -> Result<Vec<crate::sensing::RefinedTarget>> {
    let power = correlation_power(x, y.vec())?;
    let coarse = pick_peaks(
        &power,
        cfg.grid.m,
        cfg.grid.n,
        cfg.channel.targets.len(),
        cfg.exclusion_radius,
    )?;
    Ok(ml_refine(x, y, &coarse, cfg.n_ml, &cfg.grid)?.targets)
}

/// `|h|^2` surface and channel of one sensing frame, drawn exactly as frame
/// `frame` of Eb/N0 point `ebno_index` in [`run_rmse_sweep`].
pub fn imaging_surface(cfg: &RmseSweepConfig, ebno_index: usize, frame: usize) -> Result<(Vec<f64>, PathSet)> {
    cfg.validate()?;
    let ebno = *cfg.ebno_db.get(ebno_index).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "Eb/N0 index {ebno_index} outside a grid of {} points",
            cfg.ebno_db.len()
        ))
    })?;
    let plan = SpreadingPlan::from_params(&cfg.grid, cfg.scheme, cfg.family, cfg.n_mult)?;
    let mut rng = derive_rng_stream(cfg.seed, ebno_index as u32, frame as u32);
    let paths = if cfg.fixed_clutter {
        let mut clutter = ChaCha8Rng::seed_from_u64(cfg.seed);
        clutter.set_stream(CLUTTER_STREAM);
        sample_sensing_channel(&cfg.channel, &cfg.grid, &mut clutter)?
    } else {
        sample_sensing_channel(&cfg.channel, &cfg.grid, &mut rng)?
    };
    let channel = DdChannel::from_path_set(&paths)?;
    let bits = random_bits(&mut rng, cfg.grid.bits_per_symbol * plan.n_s());
    let x = spread(&plan, &map_bits_qpsk(&bits)?)?;
    let n0 = if cfg.noiseless { 0.0 } else { cfg.n0(ebno) };
    let y = apply_channel(&channel, &x, n0, &mut rng)?;
    Ok((correlation_power(&x, y.vec())?, paths))
}

/// Runs `frames` sensing frames per point and reports RMSE with the average
/// CRB as reference columns.
pub fn run_rmse_sweep(cfg: &RmseSweepConfig, workers: usize) -> Result<SweepResult<RmseRow>> {
    cfg.validate()?;
    let pool = thread_pool(workers)?;
    let plan = SpreadingPlan::from_params(&cfg.grid, cfg.scheme, cfg.family, cfg.n_mult)?;
    let fixed = if cfg.fixed_clutter {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(CLUTTER_STREAM);
        Some(sample_sensing_channel(&cfg.channel, &cfg.grid, &mut rng)?)
    } else {
        None
    };
    let gain2 = cfg.channel.weakest_target_gain2(&cfg.grid);
    let mut rows = Vec::with_capacity(cfg.ebno_db.len());
    for (ei, &ebno) in cfg.ebno_db.iter().enumerate() {
        let start = Instant::now();
        let nominal_n0 = cfg.n0(ebno);
        let n0 = if cfg.noiseless { 0.0 } else { nominal_n0 };
        let tallies: Vec<Result<SensingTally>> = pool.install(|| {
            (0..cfg.frames)
                .into_par_iter()
                .map(|f| rmse_frame(cfg, &plan, fixed.as_ref(), ei, f, n0).map_err(locate(cfg.seed, ei, f)))
                .collect()
        });
        let mut total = SensingTally::default();
        for t in tallies {
            let t = t?;
            total.sq_range += t.sq_range;
            total.sq_velocity += t.sq_velocity;
            total.count += t.count;
            total.power += t.power;
        }
        let inputs = CrbInputs {
            n0: nominal_n0,
            p_avg: total.power / cfg.frames as f64,
            gain2,
            grid: cfg.grid,
        };
        rows.push(RmseRow {
            ebno_db: ebno,
            rmse_range_m: (total.sq_range / total.count as f64).sqrt(),
            rmse_velocity_mps: (total.sq_velocity / total.count as f64).sqrt(),
            crb_range_m: crb_range(&inputs)?,
            crb_velocity_mps: crb_velocity(&inputs)?,
            frames: cfg.frames as u64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let metadata = json!({
        "kind": "rmse",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "workers": workers,
        "config": cfg,
        "n_s": plan.n_s(),
        "rng": "ChaCha8 seed_from_u64(seed), stream (ebno_index << 32) | frame_index",
        "noise_power": "N0 = |h_weakest_los|^2 / (beta Eb/N0)",
        "sampling_reference": "f_s = delta_f",
        "crb": "average bound, not a strict lower bound",
        "fixed_clutter": cfg.fixed_clutter,
        "seconds": rows.iter().map(|r| r.seconds).collect::<Vec<_>>(),
    });
    Ok(SweepResult { rows, metadata })
}

/// Path of the JSON sidecar written next to a CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
