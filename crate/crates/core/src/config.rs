//! Declarative run configuration: TOML presets, config files and
//! command-line overrides.
//!
//! A configuration has a `seed`, a `[grid]` section and one section per
//! experiment (`[ber]`, `[rmse]`). Loading starts from a bundled preset,
//! deep-merges an optional file on top and finally applies `key=value`
//! overrides. Override keys are either dotted paths (`ber.channel.taps`) or
//! short aliases resolved against the section of the running command
//! (`M`, `N`, `L`, `P`, `V`, `R`, `P_n`, `N_ML`, `frames`, `max_bits`, ...).
//! Values are coerced to the type already present, so `max_bits=2e5` stays
//! an integer.
//!
//! Eb/N0 grids are either a list (`ebno_db = [0, 5, 10]`, override
//! `ebno=0,5,10`) or a range table (`ebno_db = { start = 0, stop = 20,
//! step = 2 }`, override `ebno=0:20:2`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::channel::{CommChannelParams, DopplerRounding, SenChannelParams, SensingTarget};
use crate::error::{Error, Result};
use crate::frame::{GridConfig, Scheme};
use crate::montecarlo::{BerSweepConfig, RmseSweepConfig};
use crate::sequences::Family;

const BASE: &str = r#"
seed = 1

[grid]
m = 64
n = 64
delta_f = 120e3
carrier = 40e9

[ber]
scheme = "delay"
families = ["gold", "hadamard", "zc"]
n_mult = "full"
baseline = true
min_bit_errors = 600
max_bits = 10000000
ebno_db = { start = 0.0, stop = 20.0, step = 2.0 }

[ber.channel]
paths = 3
taps = 3
kappa_db = 0.0
velocity_mps = 200.0
doppler_rounding = "fractional"

[rmse]
scheme = "delay"
families = ["gold", "hadamard", "zc"]
n_mult = "full"
baseline = true
frames = 4000
n_ml = 8
exclusion_radius = 0
fixed_clutter = false
noiseless = false
ebno_db = { start = -30.0, stop = 0.0, step = 2.0 }

[rmse.channel]
kappa_db = 10.0
nlos_paths = 0
targets = [{ range_m = 500.0, velocity_mps = 200.0, rcs_m2 = 1.0 }]
"#;

const CLUTTER_PATCH: &str = r#"
[rmse.channel]
nlos_paths = 7
targets = [{ range_m = 200.0, velocity_mps = 110.0, rcs_m2 = 1.0 }]
"#;

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["table3", "table4", "table4-clutter"];

/// Which experiment section short override aliases resolve against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Ber,
    Rmse,
}

impl Section {
    fn key(self) -> &'static str {
        match self {
            Section::Ber => "ber",
            Section::Rmse => "rmse",
        }
    }
}

/// Raw preset table.
pub fn preset(name: &str) -> Result<Table> {
    let mut base: Table = toml::from_str(BASE).expect("bundled preset parses");
    match name {
        "table3" | "table4" => {}
        "table4-clutter" => merge(&mut base, toml::from_str(CLUTTER_PATCH).expect("bundled patch parses")),
        other => {
            return Err(Error::Config(vec![format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            )]))
        }
    }
    Ok(base)
}

/// Recursive merge; tables merge key by key, everything else is replaced.
pub fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

pub fn parse_file_text(text: &str) -> Result<Table> {
    toml::from_str(text).map_err(|e| Error::Config(vec![format!("config file: {e}")]))
}

fn alias(key: &str, section: Section) -> Option<String> {
    let s = section.key();
    let path = match (key, section) {
        ("M" | "m", _) => "grid.m".to_string(),
        ("N" | "n", _) => "grid.n".to_string(),
        ("delta_f", _) => "grid.delta_f".to_string(),
        ("fc" | "carrier", _) => "grid.carrier".to_string(),
        ("seed", _) => "seed".to_string(),
        ("ebno" | "ebno_db", _) => format!("{s}.ebno_db"),
        ("family", _) => format!("{s}.families"),
        ("scheme" | "families" | "n_mult" | "baseline", _) => format!("{s}.{key}"),
        ("kappa_db" | "K", _) => format!("{s}.channel.kappa_db"),
        ("max_bits" | "min_bit_errors", Section::Ber) => format!("ber.{key}"),
        ("L", Section::Ber) => "ber.channel.taps".to_string(),
        ("P", Section::Ber) => "ber.channel.paths".to_string(),
        ("V", Section::Ber) => "ber.channel.velocity_mps".to_string(),
        ("doppler_rounding", Section::Ber) => "ber.channel.doppler_rounding".to_string(),
        ("frames" | "exclusion_radius" | "fixed_clutter" | "noiseless", Section::Rmse) => format!("rmse.{key}"),
        ("N_ML" | "n_ml", Section::Rmse) => "rmse.n_ml".to_string(),
        ("P_n", Section::Rmse) => "rmse.channel.nlos_paths".to_string(),
        ("R", Section::Rmse) => "rmse.channel.targets.0.range_m".to_string(),
        ("V", Section::Rmse) => "rmse.channel.targets.0.velocity_mps".to_string(),
        _ => return None,
    };
    Some(path)
}

fn lookup_mut<'a>(table: &'a mut Table, path: &[&str]) -> Option<&'a mut Value> {
    let (first, rest) = path.split_first()?;
    let mut cur = table.get_mut(*first)?;
    for seg in rest {
        cur = match cur {
            Value::Table(t) => t.get_mut(*seg)?,
            Value::Array(a) => a.get_mut(seg.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn parse_number(raw: &str) -> Option<f64> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        s => s.parse::<f64>().ok(),
    }
}

fn parse_integer(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.trim().parse::<i64>() {
        return Some(v);
    }
    let f = parse_number(raw)?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

fn coerce(existing: &Value, raw: &str, key: &str) -> std::result::Result<Value, String> {
    let bad = |what: &str| format!("{key}: expected {what}, got '{raw}'");
    Ok(match existing {
        Value::Integer(_) => Value::Integer(parse_integer(raw).ok_or_else(|| bad("an integer"))?),
        Value::Float(_) => Value::Float(parse_number(raw).ok_or_else(|| bad("a number"))?),
        Value::Boolean(_) => Value::Boolean(raw.trim().parse().map_err(|_| bad("true or false"))?),
        _ if key.ends_with("n_mult") => match parse_integer(raw) {
            Some(v) => Value::Integer(v),
            None => Value::String(raw.trim().to_string()),
        },
        Value::String(_) => Value::String(raw.trim().to_string()),
        Value::Array(_) | Value::Table(_) if key.ends_with("ebno_db") => ebno_value(raw).ok_or_else(|| {
            bad("a comma-separated list or start:stop:step")
        })?,
        Value::Array(items) => {
            let template = items.first().cloned().unwrap_or(Value::String(String::new()));
            Value::Array(
                raw.split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| coerce(&template, s, key))
                    .collect::<std::result::Result<_, _>>()?,
            )
        }
        Value::Table(_) | Value::Datetime(_) => return Err(format!("{key}: cannot be overridden with a scalar")),
    })
}

fn ebno_value(raw: &str) -> Option<Value> {
    if raw.contains(':') {
        let parts: Vec<f64> = raw.split(':').map(parse_number).collect::<Option<_>>()?;
        let [start, stop, step] = parts[..] else { return None };
        let mut t = Table::new();
        t.insert("start".into(), Value::Float(start));
        t.insert("stop".into(), Value::Float(stop));
        t.insert("step".into(), Value::Float(step));
        return Some(Value::Table(t));
    }
    let list: Vec<Value> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_number(s).map(Value::Float))
        .collect::<Option<_>>()?;
    Some(Value::Array(list))
}

/// Applies `key=value` overrides, reporting every bad one.
pub fn apply_overrides(table: &mut Table, overrides: &[String], section: Section) -> Result<()> {
    let mut problems = Vec::new();
    for item in overrides {
        let Some((key, raw)) = item.split_once('=') else {
            problems.push(format!("override '{item}' is not key=value"));
            continue;
        };
        let key = key.trim();
        let path = if key.contains('.') {
            key.to_string()
        } else {
            match alias(key, section) {
                Some(p) => p,
                None => {
                    problems.push(format!("unknown override key '{key}'"));
                    continue;
                }
            }
        };
        let segs: Vec<&str> = path.split('.').collect();
        let Some(slot) = lookup_mut(table, &segs) else {
            problems.push(format!("unknown config key '{path}'"));
            continue;
        };
        match coerce(slot, raw, &path) {
            Ok(v) => *slot = v,
            Err(e) => problems.push(e),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

/// Multiplexing load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NMult {
    Count(usize),
    Named(LoadName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadName {
    Full,
    Half,
}

impl NMult {
    pub fn resolve(self, scheme: Scheme, grid: &GridConfig) -> usize {
        let max = scheme.max_n_mult(grid);
        match self {
            NMult::Count(k) => k,
            NMult::Named(LoadName::Full) => max,
            NMult::Named(LoadName::Half) => (max / 2).max(1),
        }
    }

    fn label(self) -> String {
        match self {
            NMult::Count(k) => k.to_string(),
            NMult::Named(LoadName::Full) => "full".into(),
            NMult::Named(LoadName::Half) => "half".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EbnoGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl EbnoGrid {
    pub fn values(&self) -> std::result::Result<Vec<f64>, String> {
        match self {
            EbnoGrid::List(v) => Ok(v.clone()),
            EbnoGrid::Range { start, stop, step } => {
                if !(*step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
                    return Err(format!("Eb/N0 range {start}:{stop}:{step} is empty or malformed"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                // snap to a fine decimal grid so 0.1-style steps print cleanly
                Ok((0..count)
                    .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
    pub n: usize,
    pub delta_f: f64,
    pub carrier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    pub paths: usize,
    pub taps: usize,
    pub kappa_db: f64,
    pub velocity_mps: f64,
    pub doppler_rounding: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub range_m: f64,
    pub velocity_mps: f64,
    #[serde(default = "unit_rcs")]
    pub rcs_m2: f64,
}

fn unit_rcs() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SenSection {
    pub kappa_db: f64,
    pub nlos_paths: usize,
    pub targets: Vec<TargetSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerSection {
    pub scheme: String,
    pub families: Vec<String>,
    pub n_mult: NMult,
    pub baseline: bool,
    pub min_bit_errors: u64,
    pub max_bits: u64,
    pub ebno_db: EbnoGrid,
    pub channel: CommSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmseSection {
    pub scheme: String,
    pub families: Vec<String>,
    pub n_mult: NMult,
    pub baseline: bool,
    pub frames: usize,
    pub n_ml: usize,
    pub exclusion_radius: usize,
    pub fixed_clutter: bool,
    pub noiseless: bool,
    pub ebno_db: EbnoGrid,
    pub channel: SenSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub ber: BerSection,
    pub rmse: RmseSection,
}

/// One sweep and the CSV stems it is written under.
#[derive(Debug, Clone, PartialEq)]
pub struct Job<C> {
    pub outputs: Vec<String>,
    pub config: C,
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

struct Plans {
    scheme: Option<Scheme>,
    families: Vec<Family>,
}

fn parse_plans(scheme: &str, families: &[String], section: &str, problems: &mut Vec<String>) -> Plans {
    let scheme = match scheme.parse::<Scheme>() {
        Ok(s) => Some(s),
        Err(_) => {
            problems.push(format!("{section}.scheme: unknown scheme '{scheme}'"));
            None
        }
    };
    let mut parsed = Vec::new();
    for f in families {
        match f.parse::<Family>() {
            Ok(fam) if !parsed.contains(&fam) => parsed.push(fam),
            Ok(_) => problems.push(format!("{section}.families: '{f}' listed twice")),
            Err(_) => problems.push(format!("{section}.families: unknown family '{f}'")),
        }
    }
    if families.is_empty() && scheme != Some(Scheme::PureOtfs) {
        problems.push(format!("{section}.families must list at least one family"));
    }
    Plans {
        scheme,
        families: parsed,
    }
}

fn absorb(result: Result<()>, problems: &mut Vec<String>) {
    match result {
        Ok(()) => {}
        Err(Error::Config(p)) => problems.extend(p),
        Err(e) => problems.push(e.to_string()),
    }
}

/// Groups jobs with identical configs (the shared OTFS baseline) into one
/// sweep with several output names.
fn dedup<C: PartialEq>(jobs: Vec<(String, C)>) -> Vec<Job<C>> {
    let mut out: Vec<Job<C>> = Vec::new();
    for (name, config) in jobs {
        match out.iter_mut().find(|j| j.config == config) {
            Some(j) => j.outputs.push(name),
            None => out.push(Job {
                outputs: vec![name],
                config,
            }),
        }
    }
    out
}

impl RunConfig {
    pub fn from_table(table: Table) -> Result<Self> {
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string().trim().to_string()]))
    }

    /// Preset, then optional file, then overrides.
    pub fn load(preset_name: &str, file: Option<&str>, overrides: &[String], section: Section) -> Result<Self> {
        let mut table = preset(preset_name)?;
        if let Some(text) = file {
            merge(&mut table, parse_file_text(text)?);
        }
        apply_overrides(&mut table, overrides, section)?;
        Self::from_table(table)
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            m: self.grid.m,
            n: self.grid.n,
            delta_f: self.grid.delta_f,
            carrier: self.grid.carrier,
            bits_per_symbol: 2,
        }
    }

    fn comm_channel(&self, problems: &mut Vec<String>) -> CommChannelParams {
        let c = &self.ber.channel;
        let doppler_rounding = c.doppler_rounding.parse().unwrap_or_else(|e: Error| {
            problems.push(format!("ber.channel.doppler_rounding: {e}"));
            DopplerRounding::default()
        });
        CommChannelParams {
            paths: c.paths,
            taps: c.taps,
            kappa: db_to_linear(c.kappa_db),
            velocity_mps: c.velocity_mps,
            doppler_rounding,
        }
    }

    pub fn sensing_channel(&self) -> SenChannelParams {
        let c = &self.rmse.channel;
        SenChannelParams {
            targets: c
                .targets
                .iter()
                .map(|t| SensingTarget {
                    range_m: t.range_m,
                    velocity_mps: t.velocity_mps,
                    rcs_m2: t.rcs_m2,
                })
                .collect(),
            nlos_paths: c.nlos_paths,
            kappa: db_to_linear(c.kappa_db),
        }
    }

    /// Every BER sweep the configuration asks for, validated in one pass.
    pub fn ber_jobs(&self) -> Result<Vec<Job<BerSweepConfig>>> {
        let mut problems = Vec::new();
        let grid = self.grid();
        absorb(grid.validate(), &mut problems);
        let plans = parse_plans(&self.ber.scheme, &self.ber.families, "ber", &mut problems);
        let channel = self.comm_channel(&mut problems);
        let ebno_db = self.ber.ebno_db.values().unwrap_or_else(|e| {
            problems.push(format!("ber.ebno_db: {e}"));
            Vec::new()
        });
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let scheme = plans.scheme.expect("scheme parsed");
        let make = |scheme: Scheme, family: Family, n_mult: usize| BerSweepConfig {
            grid,
            scheme,
            family,
            n_mult,
            channel,
            ebno_db: ebno_db.clone(),
            min_bit_errors: self.ber.min_bit_errors,
            max_bits: self.ber.max_bits,
            seed: self.seed,
        };
        let mut jobs = Vec::new();
        let families = if scheme == Scheme::PureOtfs {
            vec![Family::ZadoffChu]
        } else {
            plans.families.clone()
        };
        for family in families {
            let n_mult = self.ber.n_mult.resolve(scheme, &grid);
            let cfg = if scheme == Scheme::PureOtfs {
                make(scheme, Family::ZadoffChu, grid.size())
            } else {
                make(scheme, family, n_mult)
            };
            let name = if scheme == Scheme::PureOtfs {
                "ber_otfs".to_string()
            } else {
                format!(
                    "ber_{}_{}_{}",
                    scheme.short_name(),
                    family.short_name(),
                    self.ber.n_mult.label()
                )
            };
            absorb(cfg.validate(), &mut problems);
            jobs.push((name, cfg));
            if self.ber.baseline && scheme != Scheme::PureOtfs {
                jobs.push((
                    format!("ber_otfs_baseline_{}", family.short_name()),
                    make(Scheme::PureOtfs, Family::ZadoffChu, grid.size()),
                ));
            }
        }
        problems.dedup();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(dedup(jobs))
    }

    /// Every RMSE sweep the configuration asks for, validated in one pass.
    pub fn rmse_jobs(&self) -> Result<Vec<Job<RmseSweepConfig>>> {
        let mut problems = Vec::new();
        let grid = self.grid();
        absorb(grid.validate(), &mut problems);
        let plans = parse_plans(&self.rmse.scheme, &self.rmse.families, "rmse", &mut problems);
        let ebno_db = self.rmse.ebno_db.values().unwrap_or_else(|e| {
            problems.push(format!("rmse.ebno_db: {e}"));
            Vec::new()
        });
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let scheme = plans.scheme.expect("scheme parsed");
        let channel = self.sensing_channel();
        let make = |scheme: Scheme, family: Family, n_mult: usize| RmseSweepConfig {
            grid,
            scheme,
            family,
            n_mult,
            channel: channel.clone(),
            ebno_db: ebno_db.clone(),
            frames: self.rmse.frames,
            n_ml: self.rmse.n_ml,
            exclusion_radius: self.rmse.exclusion_radius,
            fixed_clutter: self.rmse.fixed_clutter,
            noiseless: self.rmse.noiseless,
            seed: self.seed,
        };
        let mut jobs = Vec::new();
        let families = if scheme == Scheme::PureOtfs {
            vec![Family::ZadoffChu]
        } else {
            plans.families.clone()
        };
        for family in families {
            let (cfg, name) = if scheme == Scheme::PureOtfs {
                (make(scheme, Family::ZadoffChu, grid.size()), "rmse_otfs".to_string())
            } else {
                (
                    make(scheme, family, self.rmse.n_mult.resolve(scheme, &grid)),
                    format!(
                        "rmse_{}_{}_{}",
                        scheme.short_name(),
                        family.short_name(),
                        self.rmse.n_mult.label()
                    ),
                )
            };
            absorb(cfg.validate(), &mut problems);
            jobs.push((name, cfg));
            if self.rmse.baseline && scheme != Scheme::PureOtfs {
                jobs.push((
                    format!("rmse_otfs_baseline_{}", family.short_name()),
                    make(Scheme::PureOtfs, Family::ZadoffChu, grid.size()),
                ));
            }
        }
        problems.dedup();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(dedup(jobs))
    }

    /// The configuration as TOML, for echoing into run metadata.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

/// Flat `key -> value` listing of a table, for diagnostics.
pub fn flatten(table: &Table) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
        match v {
            Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", &Value::Table(table.clone()), &mut out);
    out
}
