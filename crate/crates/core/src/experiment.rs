//! Command implementations behind the `mmv2i` binary: configuration loading,
//! sweep orchestration, CSV artifacts and the run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{self, GridPoint, MetricsRecord, RateSettings, RcommSource};
use crate::coverage::{
    self, ArrayConfig, CoverageRecord, CoverageSettings, CoverageTable, DEFAULT_TRIALS,
};
use crate::rng;
use crate::roadsim::{self, ClosedForms, RoadParams, ValidationRow};
use crate::units::{convert_units, kmh_to_ms, per_km_to_per_m, RawConfig, ScenarioError};

pub const COVERAGE_CSV: &str = "coverage.csv";
pub const THROUGHPUT_CSV: &str = "throughput.csv";
pub const VALIDATION_CSV: &str = "validation.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Density grid of the figure presets (nodes/km).
pub const FIGURE_DENSITIES: [f64; 12] = [
    5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0,
];
/// Density grid of a plain coverage run (nodes/km).
pub const DEFAULT_DENSITIES: [f64; 10] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];

pub const ARRAYS_4X4: ArrayConfig = ArrayConfig::new((2, 2), (2, 2));
pub const ARRAYS_4X16: ArrayConfig = ArrayConfig::new((2, 2), (4, 4));
pub const ARRAYS_64X4: ArrayConfig = ArrayConfig::new((8, 8), (2, 2));
pub const ARRAYS_64X16: ArrayConfig = ArrayConfig::new((8, 8), (4, 4));
pub const FIGURE_ARRAYS: [ArrayConfig; 4] = [ARRAYS_4X4, ARRAYS_4X16, ARRAYS_64X4, ARRAYS_64X16];

pub const FIGURE_SPEED_KMH: f64 = 90.0;
pub const FIGURE_SLOT_S: f64 = 0.2;
pub const SPEED_SWEEP_KMH: [f64; 5] = [10.0, 20.0, 30.0, 100.0, 130.0];
pub const SLOT_SWEEP_S: [f64; 5] = [0.025, 0.1, 0.2, 0.5, 1.0];
pub const BAR_DENSITY_PER_KM: f64 = 20.0;

pub const VALIDATION_DENSITIES: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];
pub const VALIDATION_SPEEDS_KMH: [f64; 3] = [30.0, 90.0, 130.0];
pub const VALIDATION_SLOTS_S: [f64; 3] = [0.1, 0.2, 0.5];
pub const VALIDATION_R_COMM_M: f64 = 150.0;
pub const VALIDATION_SLOTS: usize = 100_000;
/// Slots per independent road run in validation.
pub const VALIDATION_RUN_SLOTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Coverage,
    Connectivity,
    Throughput,
    Validate,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Coverage => "coverage",
            Command::Connectivity => "connectivity",
            Command::Throughput => "throughput",
            Command::Validate => "validate",
        })
    }
}

/// Baked-in figure reproductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig1,
    Fig3,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig1,
        Preset::Fig3,
        Preset::Fig5,
        Preset::Fig6,
        Preset::Fig7,
        Preset::Fig8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig3 => "fig3",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Fig7 => "fig7",
            Preset::Fig8 => "fig8",
        }
    }

    pub fn command(self) -> Command {
        match self {
            Preset::Fig1 => Command::Coverage,
            Preset::Fig3 | Preset::Fig5 | Preset::Fig6 => Command::Connectivity,
            Preset::Fig7 | Preset::Fig8 => Command::Throughput,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                format!("unknown preset {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ScenarioError,
    },
    #[error("{path}: invalid JSON: {source}")]
    ConfigSyntax {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("coverage table lacks radii for: {}", .missing.join(", "))]
    DensityMismatch { missing: Vec<String> },
    #[error("{0}")]
    Compute(String),
    #[error("{} of {} gating validation rows exceed |z| = 3", .failed.len(), .total)]
    Validation {
        failed: Vec<ValidationRow>,
        total: usize,
    },
}

impl CliError {
    /// 1 for usage and input problems, 2 for I/O, 3 for failed validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Csv { .. } => 2,
            CliError::Validation { .. } => 3,
            _ => 1,
        }
    }
}

/// Everything a command needs besides the global thread pool.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub preset: Option<Preset>,
    pub coverage: Option<PathBuf>,
    pub gnuplot: bool,
    /// Corrupts the closed-form `P_start` used by validation.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub preset: Option<String>,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// sha256 of every written artifact, by file name.
    pub files: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads the configuration (defaults when `path` is `None`) and applies the
/// command-line seed and trial overrides.
pub fn load_config(opts: &RunOptions) -> Result<RawConfig, CliError> {
    let mut raw = match &opts.config {
        None => RawConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|source| CliError::ConfigSyntax {
                path: path.display().to_string(),
                source,
            })?
        }
    };
    if let Some(seed) = opts.seed {
        raw.seed = seed;
    }
    if let Some(trials) = opts.trials {
        raw.trials = Some(trials);
    }
    Ok(raw)
}

struct Session {
    command: Command,
    raw: RawConfig,
    started: Instant,
    out: PathBuf,
    files: BTreeMap<String, String>,
    notes: Vec<String>,
    preset: Option<Preset>,
}

impl Session {
    fn open(opts: &RunOptions, command: Command) -> Result<Self, CliError> {
        if let Some(p) = opts.preset {
            if p.command() != command {
                return Err(CliError::Usage(format!(
                    "preset {} belongs to the {} command, not {command}",
                    p.name(),
                    p.command()
                )));
            }
        }
        let raw = load_config(opts)?;
        let path = opts
            .config
            .as_ref()
            .map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        convert_units(&raw).map_err(|source| CliError::Config { path, source })?;
        fs::create_dir_all(&opts.out).map_err(|source| CliError::Io {
            path: opts.out.clone(),
            source,
        })?;
        Ok(Self {
            command,
            raw,
            started: Instant::now(),
            out: opts.out.clone(),
            files: BTreeMap::new(),
            notes: Vec::new(),
            preset: opts.preset,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.out.join(name);
        let bytes = csv_bytes(rows).map_err(|source| CliError::Csv { path, source })?;
        self.write(name, &bytes)
    }

    fn finish(mut self) -> Result<RunManifest, CliError> {
        let config_json = serde_json::to_vec(&self.raw).expect("configuration serializes");
        let manifest = RunManifest {
            command: self.command.to_string(),
            preset: self.preset.map(|p| p.name().to_string()),
            version: format!("mmv2i-{}", env!("CARGO_PKG_VERSION")),
            config_hash: sha256_hex(&config_json),
            seed: self.raw.seed,
            files: std::mem::take(&mut self.files),
            notes: std::mem::take(&mut self.notes),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out.join(MANIFEST_JSON);
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|source| CliError::Io { path, source })?;
        Ok(manifest)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// A gnuplot script drawing `y_col` against the first column of `csv_name`,
/// one curve per series. Each series is a title plus `(column, value)`
/// filters, columns counted from 1.
pub fn gnuplot_script(csv_name: &str, y_col: usize, ylabel: &str, series: &[(String, Vec<(usize, f64)>)]) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key outside\nset xlabel 'rho (nodes/km)'\n");
    s.push_str(&format!("set ylabel '{ylabel}'\n"));
    let curves: Vec<String> = series
        .iter()
        .map(|(title, filters)| {
            let cond = if filters.is_empty() {
                "1".to_string()
            } else {
                filters
                    .iter()
                    .map(|(c, v)| format!("${c}=={v}"))
                    .collect::<Vec<_>>()
                    .join(" && ")
            };
            format!("'{csv_name}' every ::1 using 1:(({cond}) ? ${y_col} : 1/0) with linespoints title '{title}'")
        })
        .collect();
    s.push_str(&format!("plot {}\n", curves.join(", \\\n     ")));
    s
}

fn trials(raw: &RawConfig) -> usize {
    raw.trials.unwrap_or(DEFAULT_TRIALS)
}

fn config_arrays(raw: &RawConfig) -> ArrayConfig {
    ArrayConfig::new(
        (raw.bs_array[0], raw.bs_array[1]),
        (raw.veh_array[0], raw.veh_array[1]),
    )
}

/// Density grid and array pairs shared by every command. Presets use the
/// figure grid and the four figure configurations; otherwise the densities
/// come from the configuration and the arrays are the smallest pairing plus
/// the configured one.
pub fn coverage_grid(raw: &RawConfig, preset: Option<Preset>) -> (Vec<f64>, Vec<ArrayConfig>) {
    match preset {
        Some(_) => (FIGURE_DENSITIES.to_vec(), FIGURE_ARRAYS.to_vec()),
        None => {
            let densities = raw
                .densities_per_km
                .clone()
                .unwrap_or_else(|| DEFAULT_DENSITIES.to_vec());
            let mut configs = vec![ARRAYS_4X4];
            if config_arrays(raw) != ARRAYS_4X4 {
                configs.push(config_arrays(raw));
            }
            (densities, configs)
        }
    }
}

/// Estimates coverage radii over the density × arrays grid and writes
/// `coverage.csv`.
pub fn cmd_coverage(opts: &RunOptions) -> Result<RunManifest, CliError> {
    let mut session = Session::open(opts, Command::Coverage)?;
    let params = convert_units(&session.raw).expect("validated on open");
    let (densities, configs) = coverage_grid(&session.raw, opts.preset);
    let settings = CoverageSettings::with_trials(trials(&session.raw));
    if settings.n_trials < coverage::MIN_TRIALS {
        return Err(CliError::Usage(format!(
            "at least {} trials are required, got {}",
            coverage::MIN_TRIALS,
            settings.n_trials
        )));
    }
    let cells = coverage::coverage_sweep(&densities, &configs, &params, &settings, session.raw.seed);
    for c in &cells {
        match &c.outcome {
            Err(e) => session.notes.push(format!(
                "rho = {} /km, {}/{}: {e}",
                c.rho_per_km, c.arrays.bs, c.arrays.veh
            )),
            Ok(r) if r.outage_trials > 0 => session.notes.push(format!(
                "rho = {} /km, {}/{}: {} all-outage trials counted as radius 0",
                c.rho_per_km, c.arrays.bs, c.arrays.veh, r.outage_trials
            )),
            Ok(_) => {}
        }
    }
    let records: Vec<CoverageRecord> = cells.iter().map(CoverageRecord::from).collect();
    session.write_csv(COVERAGE_CSV, &records)?;
    if opts.gnuplot {
        let series: Vec<_> = configs
            .iter()
            .map(|a| {
                (
                    format!("{}x{}", a.bs.elements(), a.veh.elements()),
                    vec![
                        (2, a.bs.rows as f64),
                        (3, a.bs.cols as f64),
                        (4, a.veh.rows as f64),
                        (5, a.veh.cols as f64),
                    ],
                )
            })
            .collect();
        let gp = gnuplot_script(COVERAGE_CSV, 6, "R_comm (m)", &series);
        session.write("coverage.gp", gp.as_bytes())?;
    }
    session.finish()
}

/// A named family of operating points sharing one CSV.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub name: &'static str,
    pub points: Vec<GridPoint>,
}

fn grid(densities: &[f64], speeds: &[f64], slots: &[f64], arrays: &[ArrayConfig]) -> Vec<GridPoint> {
    let mut points = Vec::new();
    for &a in arrays {
        for &speed_kmh in speeds {
            for &slot_s in slots {
                for &rho_per_km in densities {
                    points.push(GridPoint {
                        rho_per_km,
                        speed_kmh,
                        slot_s,
                        arrays: a,
                    });
                }
            }
        }
    }
    points
}

/// The three ρ-sweeps: across arrays, across speeds and across slot
/// durations. Presets pin the fixed dimensions to the figure values;
/// otherwise they come from the configuration.
pub fn density_sweeps(raw: &RawConfig, preset: Option<Preset>) -> Vec<Sweep> {
    let (densities, configs) = coverage_grid(raw, preset);
    let (speed, slot, arrays) = match preset {
        Some(_) => (FIGURE_SPEED_KMH, FIGURE_SLOT_S, ARRAYS_64X16),
        None => (raw.speed_kmh, raw.slot_s, config_arrays(raw)),
    };
    let mut sweeps = vec![Sweep {
        name: "mimo",
        points: grid(&densities, &[speed], &[slot], &configs),
    }];
    if preset != Some(Preset::Fig3) {
        sweeps.push(Sweep {
            name: "speed",
            points: grid(&densities, &SPEED_SWEEP_KMH, &[slot], &[arrays]),
        });
        sweeps.push(Sweep {
            name: "slot",
            points: grid(&densities, &[speed], &SLOT_SWEEP_S, &[arrays]),
        });
    }
    sweeps
}

/// Array configurations × speeds at the bar-chart density and slot.
pub fn bar_sweep(raw: &RawConfig, preset: Option<Preset>) -> Sweep {
    let (_, configs) = coverage_grid(raw, preset);
    Sweep {
        name: "fig8",
        points: grid(&[BAR_DENSITY_PER_KM], &SPEED_SWEEP_KMH, &[FIGURE_SLOT_S], &configs),
    }
}

fn load_table(path: &Path) -> Result<CoverageTable, CliError> {
    let file = fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = coverage::read_coverage_csv(io::BufReader::new(file)).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(CoverageTable::new(records))
}

/// Where the radii come from, checked against every point up front so that a
/// mismatch names all missing cells at once.
enum Radii {
    Fixed(f64),
    Table(CoverageTable),
}

impl Radii {
    fn resolve(opts: &RunOptions, raw: &RawConfig, sweeps: &[Sweep]) -> Result<Self, CliError> {
        let table = match (&opts.coverage, raw.r_comm_m) {
            (Some(path), _) => load_table(path)?,
            (None, Some(r)) if r.is_finite() && r > 0.0 => return Ok(Radii::Fixed(r)),
            (None, Some(r)) => {
                return Err(CliError::Usage(format!("r_comm_m must be positive, got {r}")));
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "a coverage CSV (--coverage) or r_comm_m in the configuration is required".into(),
                ));
            }
        };
        let mut missing: Vec<String> = Vec::new();
        for p in sweeps.iter().flat_map(|s| &s.points) {
            if table.r_comm(p.rho_per_km, p.arrays).is_none() {
                let cell = format!("rho = {} /km ({}/{})", p.rho_per_km, p.arrays.bs, p.arrays.veh);
                if !missing.contains(&cell) {
                    missing.push(cell);
                }
            }
        }
        if !missing.is_empty() {
            return Err(CliError::DensityMismatch { missing });
        }
        Ok(Radii::Table(table))
    }

    fn source(&self) -> RcommSource<'_> {
        match self {
            Radii::Fixed(r) => RcommSource::Fixed(*r),
            Radii::Table(t) => RcommSource::Table(t),
        }
    }
}

fn run_sweeps(
    sweeps: &[Sweep],
    raw: &RawConfig,
    radii: &Radii,
    seed: u64,
) -> Result<Vec<(&'static str, Vec<MetricsRecord>)>, CliError> {
    let params = convert_units(raw).expect("validated on open");
    let defaults = RateSettings::default();
    let rate = RateSettings {
        samples: raw.rate_samples.unwrap_or(defaults.samples),
        cap: raw.se_cap_bps_hz.unwrap_or(defaults.cap),
        ..defaults
    };
    sweeps
        .iter()
        .map(|s| {
            let rows = analytics::metrics_sweep(&s.points, &params, radii.source(), &rate, seed)
                .map_err(|e| CliError::Compute(e.to_string()))?;
            Ok((s.name, rows.iter().map(MetricsRecord::from).collect()))
        })
        .collect()
}

/// Closed-form connectivity metrics along the density sweeps, one CSV per
/// sweep (`connectivity_<name>.csv`).
pub fn cmd_connectivity(opts: &RunOptions) -> Result<RunManifest, CliError> {
    let mut session = Session::open(opts, Command::Connectivity)?;
    let sweeps = density_sweeps(&session.raw, opts.preset);
    let radii = Radii::resolve(opts, &session.raw, &sweeps)?;
    let seed = rng::derive_seed(session.raw.seed, &[0xc0]);
    for (name, records) in run_sweeps(&sweeps, &session.raw, &radii, seed)? {
        let file = format!("connectivity_{name}.csv");
        session.write_csv(&file, &records)?;
        if opts.gnuplot {
            let column = match opts.preset {
                Some(Preset::Fig3) => (7, "P_start"),
                Some(Preset::Fig6) => (12, "E[T_comm]/T_RTO"),
                _ => (9, "P_NL"),
            };
            let gp = gnuplot_script(&file, column.0, column.1, &metric_series(name, &records));
            session.write(&format!("connectivity_{name}.gp"), gp.as_bytes())?;
        }
    }
    session.finish()
}

fn metric_series(sweep: &str, records: &[MetricsRecord]) -> Vec<(String, Vec<(usize, f64)>)> {
    let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for r in records {
        let s = match sweep {
            "speed" => (format!("V = {} km/h", r.speed_kmh), vec![(2, r.speed_kmh)]),
            "slot" => (format!("T = {} s", r.slot_s), vec![(3, r.slot_s)]),
            _ => (
                format!("{}x{}", r.bs_elems, r.veh_elems),
                vec![(4, r.bs_elems as f64), (5, r.veh_elems as f64)],
            ),
        };
        if !series.iter().any(|(t, _)| *t == s.0) {
            series.push(s);
        }
    }
    series
}

/// A row of the throughput CSV: a connectivity row tagged with its sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRecord {
    pub sweep: String,
    pub rho_per_km: f64,
    pub speed_kmh: f64,
    pub slot_s: f64,
    pub bs_elems: usize,
    pub veh_elems: usize,
    pub r_comm_m: f64,
    pub p_start: f64,
    pub p_no_leave: f64,
    pub p_nl: f64,
    pub e_tl_s: f64,
    pub e_tcomm_s: f64,
    pub duration_ratio: f64,
    pub rate_bps: f64,
    pub throughput_bps: f64,
}

impl ThroughputRecord {
    fn new(sweep: &str, m: &MetricsRecord) -> Self {
        Self {
            sweep: sweep.to_string(),
            rho_per_km: m.rho_per_km,
            speed_kmh: m.speed_kmh,
            slot_s: m.slot_s,
            bs_elems: m.bs_elems,
            veh_elems: m.veh_elems,
            r_comm_m: m.r_comm_m,
            p_start: m.p_start,
            p_no_leave: m.p_no_leave,
            p_nl: m.p_nl,
            e_tl_s: m.e_tl_s,
            e_tcomm_s: m.e_tcomm_s,
            duration_ratio: m.duration_ratio,
            rate_bps: m.rate_bps,
            throughput_bps: m.throughput_bps,
        }
    }
}

/// Throughput along the density sweeps and at the bar-chart operating
/// points, in one `throughput.csv` tagged by sweep.
pub fn cmd_throughput(opts: &RunOptions) -> Result<RunManifest, CliError> {
    let mut session = Session::open(opts, Command::Throughput)?;
    let mut sweeps = Vec::new();
    if opts.preset != Some(Preset::Fig8) {
        sweeps.extend(density_sweeps(&session.raw, opts.preset));
    }
    if opts.preset != Some(Preset::Fig7) {
        sweeps.push(bar_sweep(&session.raw, opts.preset));
    }
    let radii = Radii::resolve(opts, &session.raw, &sweeps)?;
    let seed = rng::derive_seed(session.raw.seed, &[0xc0]);
    let results = run_sweeps(&sweeps, &session.raw, &radii, seed)?;
    let rows: Vec<ThroughputRecord> = results
        .iter()
        .flat_map(|(name, records)| records.iter().map(move |r| ThroughputRecord::new(name, r)))
        .collect();
    session.write_csv(THROUGHPUT_CSV, &rows)?;
    if opts.gnuplot {
        if let Some((name, records)) = results.iter().find(|(n, _)| *n != "fig8") {
            let mut series = metric_series(name, records);
            for s in &mut series {
                for f in &mut s.1 {
                    f.0 += 1;
                }
            }
            let gp = gnuplot_script(THROUGHPUT_CSV, 15, "throughput (bit/s)", &series)
                .replace("using 1:", "using 2:");
            session.write("throughput.gp", gp.as_bytes())?;
        }
    }
    session.finish()
}

/// Oracle grid of the validation command.
pub fn validation_grid(raw: &RawConfig) -> Vec<(f64, f64, f64)> {
    let densities = raw
        .densities_per_km
        .clone()
        .unwrap_or_else(|| VALIDATION_DENSITIES.to_vec());
    let mut points = Vec::new();
    for &rho in &densities {
        for &v in &VALIDATION_SPEEDS_KMH {
            for &t in &VALIDATION_SLOTS_S {
                points.push((rho, v, t));
            }
        }
    }
    points
}

/// Compares closed forms with road simulations over the oracle grid and
/// writes `validation.csv`; fails with exit code 3 when any gating row is
/// more than three standard errors off.
pub fn cmd_validate(opts: &RunOptions) -> Result<RunManifest, CliError> {
    let mut session = Session::open(opts, Command::Validate)?;
    let raw = session.raw.clone();
    let r_comm = raw.r_comm_m.unwrap_or(VALIDATION_R_COMM_M);
    let n_slots = raw.slots.unwrap_or(VALIDATION_SLOTS);
    let n_runs = (n_slots / VALIDATION_RUN_SLOTS).max(1);
    let mut rows = Vec::new();
    for (rho_per_km, speed_kmh, slot_s) in validation_grid(&raw) {
        let params = RoadParams {
            rho: per_km_to_per_m(rho_per_km),
            speed: kmh_to_ms(speed_kmh),
            slot_duration: slot_s,
            r_comm,
        };
        let seed = rng::derive_seed(
            raw.seed,
            &[rho_per_km.to_bits(), speed_kmh.to_bits(), slot_s.to_bits()],
        );
        let emp = roadsim::simulate_pooled(&params, n_slots, n_runs, seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut forms = ClosedForms::evaluate(&params);
        if opts.inject_fault {
            forms.p_start *= 0.9;
        }
        rows.extend(roadsim::validation_rows(&params, &forms, &emp, (rho_per_km, speed_kmh)));
    }
    session.write_csv(VALIDATION_CSV, &rows)?;
    let total = rows.iter().filter(|r| r.gating).count();
    let failed: Vec<ValidationRow> = rows.iter().filter(|r| !r.passes()).cloned().collect();
    if !failed.is_empty() {
        session
            .notes
            .push(format!("{} of {total} gating rows exceed |z| = 3", failed.len()));
    }
    let manifest = session.finish()?;
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::Validation { failed, total })
    }
}

/// Prints the offending validation rows.
pub fn report_failures<W: Write>(failed: &[ValidationRow], mut out: W) -> io::Result<()> {
    let mut w = BufWriter::new(&mut out);
    for r in failed {
        writeln!(
            w,
            "rho = {} /km, V = {} km/h, T = {} s, {}: analytic {:.6}, empirical {:.6} (se {:.2e}), z = {:.2}",
            r.rho_per_km, r.speed_kmh, r.slot_s, r.metric, r.analytic, r.empirical, r.se, r.z_score
        )?;
    }
    w.flush()
}

/// Runs `command` with `opts`.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunManifest, CliError> {
    match command {
        Command::Coverage => cmd_coverage(opts),
        Command::Connectivity => cmd_connectivity(opts),
        Command::Throughput => cmd_throughput(opts),
        Command::Validate => cmd_validate(opts),
    }
}
