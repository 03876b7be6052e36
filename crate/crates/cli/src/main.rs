//! `cdma-otfs` command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration and I/O problems, 3 for
//! numeric failures inside a sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cdma_otfs::config::{RunConfig, Section, PRESETS};
use cdma_otfs::crb::{crb_range, crb_velocity, CrbInputs};
use cdma_otfs::frame::SpreadingPlan;
use cdma_otfs::montecarlo::{imaging_surface, run_ber_sweep, run_rmse_sweep, sidecar_path, write_atomic};
use cdma_otfs::sensing::write_imaging_csv;
use cdma_otfs::sequences::{build_sequence_matrix, Family};
use cdma_otfs::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdma-otfs", version, about = "CDMA-spread OTFS sensing and communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Bundled parameter set to start from [default: table3 for ber,
    /// table4 otherwise].
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// TOML file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied last; accepts several values.
    #[arg(long = "override", num_args = 1.., value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed, replacing the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, created when missing.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Bit-error-rate sweeps; one CSV per configured combination.
    Ber {
        #[command(flatten)]
        run: RunArgs,
        /// Write measured wall-clock seconds into the CSV instead of 0.
        #[arg(long)]
        timing: bool,
    },
    /// Range and velocity RMSE sweeps with CRB reference columns.
    Rmse {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        timing: bool,
    },
    /// Print the average CRB table for the sensing configuration.
    Crb {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a spreading-sequence matrix as CSV.
    DumpSeq {
        #[arg(long)]
        family: String,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        n_mult: usize,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Write the delay-Doppler correlation surface of one sensing frame.
    DumpImaging {
        #[command(flatten)]
        run: RunArgs,
        /// Index into the Eb/N0 grid.
        #[arg(long, default_value_t = 0)]
        ebno_index: usize,
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn load(run: &RunArgs, section: Section) -> Result<RunConfig, Error> {
    let text = match &run.config {
        Some(path) => Some(fs::read_to_string(path).map_err(|e| {
            Error::Config(vec![format!("cannot read config file {}: {e}", path.display())])
        })?),
        None => None,
    };
    let mut overrides = run.overrides.clone();
    if let Some(seed) = run.seed {
        overrides.push(format!("seed={seed}"));
    }
    let preset = run.preset.as_deref().unwrap_or(match section {
        Section::Ber => "table3",
        Section::Rmse => "table4",
    });
    RunConfig::load(preset, text.as_deref(), &overrides, section)
}

fn workers(run: &RunArgs) -> usize {
    run.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn prepare_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(vec![format!("cannot create output directory {}: {e}", dir.display())]))
}

/// Writes every file only after all sweeps have succeeded.
fn write_outputs(dir: &Path, files: Vec<(String, String, serde_json::Value)>) -> Result<(), Error> {
    prepare_dir(dir)?;
    for (stem, csv, meta) in files {
        let path = dir.join(format!("{stem}.csv"));
        write_atomic(&path, csv.as_bytes())?;
        let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        write_atomic(&sidecar_path(&path), meta.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn with_config_echo(mut meta: serde_json::Value, cfg: &RunConfig, stem: &str) -> serde_json::Value {
    if let Some(obj) = meta.as_object_mut() {
        obj.insert("output".into(), stem.into());
        obj.insert("run_config".into(), cfg.to_toml().into());
    }
    meta
}

fn cmd_ber(run: &RunArgs, timing: bool) -> Result<(), Error> {
    let cfg = load(run, Section::Ber)?;
    let jobs = cfg.ber_jobs()?;
    prepare_dir(&run.out)?;
    let workers = workers(run);
    let mut files = Vec::new();
    for job in &jobs {
        eprintln!("ber: {} ({} points)", job.outputs.join(", "), job.config.ebno_db.len());
        let result = run_ber_sweep(&job.config, workers)?;
        for stem in &job.outputs {
            files.push((
                stem.clone(),
                result.to_csv(timing),
                with_config_echo(result.metadata.clone(), &cfg, stem),
            ));
        }
    }
    write_outputs(&run.out, files)
}

fn cmd_rmse(run: &RunArgs, timing: bool) -> Result<(), Error> {
    let cfg = load(run, Section::Rmse)?;
    let jobs = cfg.rmse_jobs()?;
    prepare_dir(&run.out)?;
    let workers = workers(run);
    let mut files = Vec::new();
    for job in &jobs {
        eprintln!("rmse: {} ({} points)", job.outputs.join(", "), job.config.ebno_db.len());
        let result = run_rmse_sweep(&job.config, workers)?;
        for stem in &job.outputs {
            files.push((
                stem.clone(),
                result.to_csv(timing),
                with_config_echo(result.metadata.clone(), &cfg, stem),
            ));
        }
    }
    write_outputs(&run.out, files)
}

fn cmd_crb(run: &RunArgs) -> Result<(), Error> {
    let cfg = load(run, Section::Rmse)?;
    let jobs = cfg.rmse_jobs()?;
    let job = &jobs[0];
    let c = &job.config;
    let plan = SpreadingPlan::from_params(&c.grid, c.scheme, c.family, c.n_mult)?;
    // unit-energy symbols on unit-norm columns
    let p_avg = plan.n_s() as f64 / c.grid.size() as f64;
    let gain2 = c.channel.weakest_target_gain2(&c.grid);
    println!("# average CRB for {} (M={}, N={}, P_avg={p_avg})", job.outputs[0], c.grid.m, c.grid.n);
    println!("ebno_db [dB],crb_range [m],crb_velocity [m/s]");
    for &ebno in &c.ebno_db {
        let inputs = CrbInputs {
            n0: c.n0(ebno),
            p_avg,
            gain2,
            grid: c.grid,
        };
        println!("{ebno},{:e},{:e}", crb_range(&inputs)?, crb_velocity(&inputs)?);
    }
    Ok(())
}

fn cmd_dump_seq(family: &str, length: usize, n_mult: usize, out: &Path) -> Result<(), Error> {
    let family: Family = family.parse()?;
    let seqs = build_sequence_matrix(family, length, n_mult)?;
    let mut buf = Vec::new();
    seqs.write_csv(&mut buf)?;
    prepare_dir(out)?;
    let path = out.join(format!("seq_{}_{length}_{n_mult}.csv", family.short_name()));
    write_atomic(&path, &buf)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_dump_imaging(run: &RunArgs, ebno_index: usize, frame: usize) -> Result<(), Error> {
    let cfg = load(run, Section::Rmse)?;
    let jobs = cfg.rmse_jobs()?;
    let job = &jobs[0];
    let (power, paths) = imaging_surface(&job.config, ebno_index, frame)?;
    let mut buf = Vec::new();
    write_imaging_csv(&power, job.config.grid.m, job.config.grid.n, &mut buf)?;
    prepare_dir(&run.out)?;
    let stem = format!("imaging_{}_e{ebno_index}_f{frame}", job.outputs[0]);
    let csv = run.out.join(format!("{stem}.csv"));
    write_atomic(&csv, &buf)?;
    write_atomic(&run.out.join(format!("{stem}.paths.txt")), paths.to_record().as_bytes())?;
    println!("wrote {}", csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ber { run, timing } => cmd_ber(run, *timing),
        Command::Rmse { run, timing } => cmd_rmse(run, *timing),
        Command::Crb { run } => cmd_crb(run),
        Command::DumpSeq {
            family,
            length,
            n_mult,
            out,
        } => cmd_dump_seq(family, *length, *n_mult, out),
        Command::DumpImaging { run, ebno_index, frame } => cmd_dump_imaging(run, *ebno_index, *frame),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
