//! Command-line front end: simulate, identify, calibrate, validate, stats
//! and footprints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibrate::{calibrate_all, CalibrationOptions, SlotPolicy, TrackGates, DEFAULT_MIN_SAMPLES};
use crate::distributions::ModelParams;
use crate::error::{Error, Result};
use crate::identify::{identify_all, reconstruct_scatterers, ConstraintForm, SnapshotObservation, DEFAULT_DELTA_S};
use crate::io::{
    create_dir, group_by_snapshot, read_csv, write_csv, write_csv_with_header, AssignedRecord, MpcRecord,
    ScattererRecord,
};
use crate::scenario::{
    classify_visibility, effective_widths, parse_footprints, widths_from_footprints, CanyonSpec, ScenarioConfig, Side,
};
use crate::simulate::{simulate, SimulationOptions};
use crate::stats::{cdf_export, ks_statistic, snapshot_stats, SnapshotStats};
use crate::synthesis::{write_cir_binary, write_cir_csv, CIR_CSV_HEADER};

const SCHEMAS: &str = "\
FILE SCHEMAS

Scenario (JSON):
  routes[]        {centerline: [[x,y],...], half_width_m, name?}
  canyons[]       {road?: index, side: left|right, width_m, extent_m: [start, end]}
                  extents are arclengths along the road's centerline
  tx, rx          {waypoints: [[x,y],...], speed_mps}
  snapshot_rate_hz, n_snapshots? | duration_s?, seed
  rf              {fc_hz, bw_hz}            default 5.8 GHz, 30 MHz
  array           {rows, cols, spacing_wavelengths}   default 4 x 8, 0.5
  tx_power_dbm    default 45
  visibility      {margin_m, turn_rate_deg_s, turn_window_s}

Parameters (JSON): power {alpha_beta, beta0_beta, b_beta}, delay {alpha_tau,
  beta0_tau}, aoa_left / aoa_right {alpha, beta0, b}, eoa {u_phi, b_phi},
  markov {left, right: [[p00, p01], [p10, p11]]}, subpath_mean,
  largescale_los / largescale_nlos? {gamma, P_ref, d_ref, sigma_shadow},
  width_range_m [lo, hi], notes[]

MPC log CSV:        snapshot, power_db, delay_s, aoa_deg, eoa_deg, phase_rad
Assignment CSV:     MPC log columns + side, width_m, residual_s (empty when unassigned)
Scatterer CSV:      l_m, d_m, side
Lifecycle CSV:      snapshot, cluster_id, path_id, state, side, width_m
Stats CSV:          snapshot, rms_ds_s, aoa_spread, n_mpcs, region
CDF CSV:            value, cdf
Fit report CSV:     side, width_m, n, used, power_loc_db, power_scale_db,
                    power_residual_db, delay_mean_s, delay_residual_s,
                    aoa_mode_deg, aoa_scale_deg, aoa_residual_deg
Validation CSV:     metric, n_reference, n_simulated, d_ks
CIR binary stream:  per snapshot u32 snapshot, u32 n_taps, then per tap
                    f64 delay_s and n_elements pairs of f64 (re, im); little endian
CIR CSV:            snapshot, tap, delay_s, element, re, im

Angles are array-frame degrees: 90 from behind, 0 from the left, 180 from the
right. Power is dBm, path loss is added to the transmit power.

EXIT CODES: 0 success, 2 invalid config or parse error, 3 numerical failure
or insufficient data, 4 I/O error.";

#[derive(Debug, Parser)]
#[command(name = "canyonsim", version, about = "Urban canyon channel simulator and calibrator", after_long_help = SCHEMAS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate MPC logs, CIRs and statistics for a scenario.
    Simulate(SimulateArgs),
    /// Assign logged MPCs to canyon widths and reconstruct scatterers.
    Identify(IdentifyArgs),
    /// Estimate model parameters from an assignment log.
    Calibrate(CalibrateArgs),
    /// Compare spread statistics of a reference log with a simulation.
    Validate(ValidateArgs),
    /// Per-snapshot delay and angular spreads of an MPC log.
    Stats(StatsArgs),
    /// Derive canyon segments for a road from building footprints.
    Footprints(FootprintsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_shadow: bool,
    /// Overrides the scenario's visibility margin.
    #[arg(long)]
    pub margin_m: Option<f64>,
    /// Skip the CIR stream.
    #[arg(long)]
    pub no_cir: bool,
    /// Also write the CIR as CSV.
    #[arg(long)]
    pub cir_csv: bool,
    /// Write the subpath lifecycle trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Assignment threshold on the constraint residual.
    #[arg(long, default_value_t = DEFAULT_DELTA_S)]
    pub delta_s: f64,
    #[arg(long)]
    pub margin_m: Option<f64>,
    /// as-printed | single-bounce
    #[arg(long, default_value = "as-printed")]
    pub constraint: ConstraintForm,
    /// Search the fixed 5..60 m grid instead of the scenario's effective widths.
    #[arg(long)]
    pub full_grid: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Assignment CSV.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_SAMPLES)]
    pub min_samples: usize,
    /// Track gate on relative delay; defaults to two delay bins.
    #[arg(long)]
    pub gate_delay_s: Option<f64>,
    #[arg(long, default_value_t = crate::calibrate::DEFAULT_GATE_AOA_DEG)]
    pub gate_aoa_deg: f64,
    /// Open a new track for every unmatched detection instead of reusing dead ones.
    #[arg(long)]
    pub new_tracks: bool,
    #[arg(long)]
    pub margin_m: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub d_ref: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Reference MPC log.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulation seed; defaults to the scenario seed plus one.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_shadow: bool,
    #[arg(long)]
    pub margin_m: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// PDP bin width; defaults to 1 / bandwidth.
    #[arg(long)]
    pub bin_s: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FootprintsArgs {
    /// GeoJSON polygons in local meters.
    #[arg(long)]
    pub buildings: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub road: usize,
    /// Output JSON array of canyon entries.
    #[arg(long)]
    pub out: PathBuf,
}

pub const MPC_LOG: &str = "mpc_log.csv";
pub const TRUTH_LOG: &str = "assigned_truth.csv";
pub const STATS: &str = "stats.csv";
pub const CIR_BIN: &str = "cir.bin";
pub const CIR_CSV: &str = "cir.csv";
pub const LIFECYCLE: &str = "lifecycle.csv";
pub const ASSIGNMENTS: &str = "assignments.csv";
pub const SCATTERERS: &str = "scatterers.csv";
pub const PARAMS: &str = "params.json";
pub const FIT_REPORT: &str = "fit_report.csv";
pub const VALIDATION: &str = "validation.csv";

const MPC_HEADER: &[&str] = &["snapshot", "power_db", "delay_s", "aoa_deg", "eoa_deg", "phase_rad"];
const LIFECYCLE_HEADER: &[&str] = &["snapshot", "cluster_id", "path_id", "state", "side", "width_m"];
const SCATTERER_HEADER: &[&str] = &["l_m", "d_m", "side"];

/// Runs a parsed command and returns the lines to print.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|s| s.lines()),
        Command::Identify(a) => cmd_identify(&a).map(|s| s.lines()),
        Command::Calibrate(a) => cmd_calibrate(&a).map(|s| s.lines()),
        Command::Validate(a) => cmd_validate(&a).map(|r| r.lines()),
        Command::Stats(a) => cmd_stats(&a).map(|n| vec![format!("{n} snapshots")]),
        Command::Footprints(a) => cmd_footprints(&a).map(|n| vec![format!("{n} canyon segments")]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub snapshots: usize,
    pub mpcs: usize,
    pub files: Vec<PathBuf>,
}

impl SimulateSummary {
    fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("{} snapshots, {} MPCs", self.snapshots, self.mpcs)];
        out.extend(self.files.iter().map(|f| format!("wrote {}", f.display())));
        out
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<SimulateSummary> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let params = ModelParams::load(&a.params)?;
    let opts = SimulationOptions {
        seed: a.seed.unwrap_or(config.seed),
        shadowing: !a.no_shadow,
        margin_m: a.margin_m,
        cir: !a.no_cir || a.cir_csv,
        lifecycle_trace: a.trace,
        stats_bin_s: config.rf.delay_bin_s(),
    };
    let out = simulate(&config, &params, &opts)?;
    create_dir(&a.out)?;
    let mut files = Vec::new();
    let log = out.mpc_log();
    let path = a.out.join(MPC_LOG);
    write_csv_with_header(&path, MPC_HEADER, &log)?;
    files.push(path);
    let path = a.out.join(TRUTH_LOG);
    write_csv(&path, &out.truth_assignments())?;
    files.push(path);
    let path = a.out.join(STATS);
    write_csv(&path, &out.stats)?;
    files.push(path);
    if !a.no_cir {
        let path = a.out.join(CIR_BIN);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        for c in &out.cirs {
            write_cir_binary(c, &mut w).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    if a.cir_csv {
        let path = a.out.join(CIR_CSV);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(CIR_CSV_HEADER).map_err(crate::io::csv_err)?;
        for c in &out.cirs {
            write_cir_csv(c, &mut w).map_err(crate::io::csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    if a.trace {
        let path = a.out.join(LIFECYCLE);
        write_csv_with_header(&path, LIFECYCLE_HEADER, &out.lifecycle)?;
        files.push(path);
    }
    Ok(SimulateSummary {
        snapshots: out.snapshots.len(),
        mpcs: log.len(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifySummary {
    pub mpcs: usize,
    pub skipped_rows: usize,
    pub assigned: usize,
    pub scatterers: usize,
    pub failed: usize,
}

impl IdentifySummary {
    fn lines(&self) -> Vec<String> {
        vec![
            format!(
                "{} MPCs read, {} malformed rows skipped",
                self.mpcs, self.skipped_rows
            ),
            format!(
                "{} assigned, {} scatterers, {} width iterations failed",
                self.assigned, self.scatterers, self.failed
            ),
        ]
    }
}

pub fn cmd_identify(a: &IdentifyArgs) -> Result<IdentifySummary> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let loaded = read_csv::<MpcRecord>(&a.log)?;
    if loaded.rows.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no valid MPC rows", a.log.display())));
    }
    let timeline = classify_visibility(&config)?;
    let margin = a.margin_m.unwrap_or(config.visibility.margin_m);
    let profiles = config.profiles();
    let groups = group_by_snapshot(&loaded.rows, |r| r.snapshot);
    if let Some(&last) = groups.keys().next_back() {
        if !a.full_grid && last >= timeline.len() {
            return Err(Error::invalid(
                "log",
                format!("snapshot {last} beyond the scenario's {} snapshots", timeline.len()),
            ));
        }
    }
    let observations: Vec<SnapshotObservation> = groups
        .iter()
        .map(|(&s, rows)| SnapshotObservation::new(s, rows.iter().map(MpcRecord::to_mpc).collect()))
        .collect::<Result<_>>()?;
    let full = crate::identify::default_width_grid();
    let grid_for = |t: usize, side: Side| -> Vec<f64> {
        if a.full_grid {
            full.clone()
        } else {
            effective_widths(&profiles, &timeline, t, margin)
                .into_iter()
                .filter(|w| w.0 == side)
                .map(|w| w.1)
                .collect()
        }
    };
    let assignments = identify_all(&observations, grid_for, a.delta_s, a.constraint);
    let (scatterers, failed) = reconstruct_scatterers(&observations, &assignments, a.constraint);

    let mut rows = Vec::with_capacity(loaded.rows.len());
    for (o, asg) in observations.iter().zip(&assignments) {
        for (i, m) in o.mpcs.iter().enumerate() {
            let hit = asg.iter().find(|w| w.mpc_index == i);
            rows.push(AssignedRecord::new(
                &MpcRecord::from_mpc(o.snapshot, m),
                hit.map(|w| (w.side, w.width)),
                hit.map(|w| w.residual),
            ));
        }
    }
    let records: Vec<ScattererRecord> = scatterers
        .iter()
        .map(|s| ScattererRecord {
            l_m: s.l_m,
            d_m: s.d_m,
            side: s.side,
        })
        .collect();
    create_dir(&a.out)?;
    write_csv(a.out.join(ASSIGNMENTS), &rows)?;
    write_csv_with_header(a.out.join(SCATTERERS), SCATTERER_HEADER, &records)?;
    Ok(IdentifySummary {
        mpcs: loaded.rows.len(),
        skipped_rows: loaded.skipped,
        assigned: assignments.iter().map(Vec::len).sum(),
        scatterers: records.len(),
        failed,
    })
}

#[derive(Debug, Clone)]
pub struct CalibrateSummary {
    pub params: ModelParams,
    pub skipped_rows: usize,
    pub flags: Vec<String>,
}

impl CalibrateSummary {
    fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("{} malformed rows skipped", self.skipped_rows)];
        out.extend(self.flags.iter().map(|f| format!("flag: {f}")));
        out
    }
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<CalibrateSummary> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let loaded = read_csv::<AssignedRecord>(&a.log)?;
    let opts = CalibrationOptions {
        min_samples: a.min_samples,
        gates: Some(TrackGates {
            delay_s: a.gate_delay_s.unwrap_or(crate::calibrate::DEFAULT_GATE_DELAY_BINS / config.rf.bw_hz),
            aoa_deg: a.gate_aoa_deg,
        }),
        slot_policy: if a.new_tracks { SlotPolicy::NewTrack } else { SlotPolicy::ReuseDead },
        margin_m: a.margin_m,
        d_ref: a.d_ref,
    };
    let cal = calibrate_all(&loaded.rows, &config, &opts).map_err(|e| e.context(a.log.display().to_string()))?;
    create_dir(&a.out)?;
    cal.params.save(a.out.join(PARAMS))?;
    write_csv(a.out.join(FIT_REPORT), &cal.bins)?;
    Ok(CalibrateSummary {
        params: cal.params,
        skipped_rows: loaded.skipped,
        flags: cal.flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsRow {
    pub metric: &'static str,
    pub n_reference: usize,
    pub n_simulated: usize,
    pub d_ks: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rms_ds: KsRow,
    pub aoa_spread: KsRow,
}

impl ValidationReport {
    fn lines(&self) -> Vec<String> {
        [self.rms_ds, self.aoa_spread]
            .iter()
            .map(|r| format!("{}: D_ks = {:.4} ({} vs {} snapshots)", r.metric, r.d_ks, r.n_reference, r.n_simulated))
            .collect()
    }
}

/// Spread statistics of every snapshot of a log.
pub fn log_stats(rows: &[MpcRecord], config: &ScenarioConfig, bin_s: f64) -> Result<Vec<SnapshotStats>> {
    let timeline = classify_visibility(config)?;
    group_by_snapshot(rows, |r| r.snapshot)
        .into_iter()
        .map(|(s, rows)| {
            let region = *timeline.regions.get(s).ok_or_else(|| {
                Error::invalid(
                    "log",
                    format!("snapshot {s} beyond the scenario's {} snapshots", timeline.len()),
                )
            })?;
            let mpcs: Vec<_> = rows.iter().map(MpcRecord::to_mpc).collect();
            snapshot_stats(s, &mpcs, region, bin_s)
        })
        .collect()
}

/// Simulates the snapshots present in `reference` and compares the RMS
/// delay spread and angular spread distributions by the KS distance.
pub fn validate_against(
    params: &ModelParams,
    config: &ScenarioConfig,
    reference: &[MpcRecord],
    opts: &SimulationOptions,
) -> Result<(ValidationReport, Vec<SnapshotStats>, Vec<SnapshotStats>)> {
    if reference.is_empty() {
        return Err(Error::InsufficientData("empty reference log".into()));
    }
    let reference_stats = log_stats(reference, config, opts.stats_bin_s)?;
    let sim = simulate(config, params, opts)?;
    let simulated: Vec<SnapshotStats> = reference_stats
        .iter()
        .map(|r| sim.stats[r.snapshot])
        .collect();
    let col = |v: &[SnapshotStats], f: fn(&SnapshotStats) -> f64| v.iter().map(f).collect::<Vec<f64>>();
    let row = |metric, f: fn(&SnapshotStats) -> f64| -> Result<KsRow> {
        Ok(KsRow {
            metric,
            n_reference: reference_stats.len(),
            n_simulated: simulated.len(),
            d_ks: ks_statistic(&col(&reference_stats, f), &col(&simulated, f))?,
        })
    };
    let report = ValidationReport {
        rms_ds: row("rms_ds_s", |s| s.rms_ds_s)?,
        aoa_spread: row("aoa_spread", |s| s.aoa_spread)?,
    };
    Ok((report, reference_stats, simulated))
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<ValidationReport> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let params = ModelParams::load(&a.params)?;
    let reference = read_csv::<MpcRecord>(&a.reference)?;
    let opts = SimulationOptions {
        seed: a.seed.unwrap_or(config.seed.wrapping_add(1)),
        shadowing: !a.no_shadow,
        margin_m: a.margin_m,
        cir: false,
        lifecycle_trace: false,
        stats_bin_s: config.rf.delay_bin_s(),
    };
    let (report, reference_stats, simulated) = validate_against(&params, &config, &reference.rows, &opts)?;
    create_dir(&a.out)?;
    write_csv(a.out.join(VALIDATION), &[report.rms_ds, report.aoa_spread])?;
    for (name, v) in [("reference", &reference_stats), ("simulated", &simulated)] {
        export_cdfs(&a.out, name, v)?;
    }
    Ok(report)
}

fn export_cdfs(dir: &Path, prefix: &str, stats: &[SnapshotStats]) -> Result<()> {
    let cols: [(&str, fn(&SnapshotStats) -> f64); 2] = [("rms_ds", |s| s.rms_ds_s), ("aoa_spread", |s| s.aoa_spread)];
    for (name, f) in cols {
        let path = dir.join(format!("{prefix}_{name}_cdf.csv"));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let values: Vec<f64> = stats.iter().map(f).collect();
        cdf_export(&values, BufWriter::new(file))?;
    }
    Ok(())
}

pub fn cmd_stats(a: &StatsArgs) -> Result<usize> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let loaded = read_csv::<MpcRecord>(&a.log)?;
    if loaded.rows.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no valid MPC rows", a.log.display())));
    }
    let stats = log_stats(&loaded.rows, &config, a.bin_s.unwrap_or(config.rf.delay_bin_s()))?;
    create_dir(&a.out)?;
    write_csv(a.out.join(STATS), &stats)?;
    export_cdfs(&a.out, "log", &stats)?;
    Ok(stats.len())
}

pub fn cmd_footprints(a: &FootprintsArgs) -> Result<usize> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let road = config
        .roads
        .get(a.road)
        .ok_or_else(|| Error::invalid("road", format!("scenario has no road {}", a.road)))?;
    let text = std::fs::read_to_string(&a.buildings).map_err(|e| Error::io(&a.buildings, e))?;
    let buildings = parse_footprints(&text)?;
    let profile = widths_from_footprints(&buildings, road.centerline())?;
    let canyons: Vec<CanyonSpec> = profile
        .segments
        .iter()
        .map(|s| CanyonSpec {
            road: a.road,
            side: s.side,
            width_m: s.width,
            extent_m: [s.extent.0, s.extent.1],
        })
        .collect();
    let json = serde_json::to_string_pretty(&canyons).map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(&a.out, json + "\n").map_err(|e| Error::io(&a.out, e))?;
    Ok(canyons.len())
}
