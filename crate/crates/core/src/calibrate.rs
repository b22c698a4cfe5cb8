//! Parameter estimation from width-labelled MPC logs: per-width distribution
//! fits, linear width maps, path tracking for the birth-death matrices and
//! log-distance path-loss regression.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::distributions::{
    AoaParams, DelayParams, EoaParams, LargeScaleParams, MarkovParams, ModelParams, PowerParams,
};
use crate::error::{Error, Result};
use crate::evolution::MarkovMatrix;
use crate::io::AssignedRecord;
use crate::largescale::{link_distances, mean_path_loss, Stage};
use crate::scenario::{classify_visibility, effective_widths, ScenarioConfig, Side, VisibilityTimeline};

pub const DEFAULT_MIN_SAMPLES: usize = 50;
pub const DEFAULT_GATE_DELAY_BINS: f64 = 2.0;
pub const DEFAULT_GATE_AOA_DEG: f64 = 10.0;
const PHASE_BINS: usize = 16;
const PHASE_ALARM_P: f64 = 1e-3;

/// A labelled MPC expressed relative to its snapshot's direct path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub snapshot: usize,
    pub side: Side,
    pub width: f64,
    pub beta_rel_db: f64,
    pub tau_rel_s: f64,
    pub aoa_deg: f64,
    pub eoa_deg: f64,
    pub phase_rad: f64,
}

/// Direct-path reference of one snapshot: the minimum-delay MPC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub power_db: f64,
    pub delay_s: f64,
}

/// Splits a labelled log into per-snapshot references and relative
/// detections. The reference row itself is never a detection.
pub fn relative_detections(rows: &[AssignedRecord]) -> (BTreeMap<usize, Reference>, Vec<Detection>) {
    let mut refs: BTreeMap<usize, (usize, Reference)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let e = refs.entry(r.snapshot).or_insert((
            i,
            Reference {
                power_db: r.power_db,
                delay_s: r.delay_s,
            },
        ));
        if r.delay_s < e.1.delay_s {
            *e = (
                i,
                Reference {
                    power_db: r.power_db,
                    delay_s: r.delay_s,
                },
            );
        }
    }
    let dets = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let (side, width) = r.label()?;
            let (ri, rf) = refs[&r.snapshot];
            (ri != i).then_some(Detection {
                snapshot: r.snapshot,
                side,
                width,
                beta_rel_db: r.power_db - rf.power_db,
                tau_rel_s: r.delay_s - rf.delay_s,
                aoa_deg: r.aoa_deg,
                eoa_deg: r.eoa_deg,
                phase_rad: r.phase_rad,
            })
        })
        .collect();
    (refs.into_iter().map(|(k, v)| (k, v.1)).collect(), dets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackGates {
    pub delay_s: f64,
    pub aoa_deg: f64,
}

impl TrackGates {
    pub fn for_bandwidth(bw_hz: f64) -> Self {
        TrackGates {
            delay_s: DEFAULT_GATE_DELAY_BINS / bw_hz,
            aoa_deg: DEFAULT_GATE_AOA_DEG,
        }
    }
}

/// What happens to a detection that matches no existing track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotPolicy {
    /// Always open a new track.
    NewTrack,
    /// Re-occupy the track that has been dead longest, if any; otherwise
    /// open a new one. Tracks then play the role of fixed subpath slots.
    ReuseDead,
}

/// Contiguous snapshot interval `[start, end]` over which one (side, width)
/// cluster exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyWindow {
    pub side: Side,
    pub width: f64,
    pub start: usize,
    pub end: usize,
}

/// Windows spanning each key's first to last detection.
pub fn detection_windows(dets: &[Detection]) -> Vec<KeyWindow> {
    let mut spans: BTreeMap<(Side, u64), (f64, usize, usize)> = BTreeMap::new();
    for d in dets {
        let e = spans
            .entry((d.side, d.width.to_bits()))
            .or_insert((d.width, d.snapshot, d.snapshot));
        e.1 = e.1.min(d.snapshot);
        e.2 = e.2.max(d.snapshot);
    }
    spans
        .into_iter()
        .map(|((side, _), (width, start, end))| KeyWindow { side, width, start, end })
        .collect()
}

/// Windows over which each key belongs to the effective width set.
pub fn scenario_windows(config: &ScenarioConfig, timeline: &VisibilityTimeline, margin_m: f64) -> Vec<KeyWindow> {
    let profiles = config.profiles();
    let mut open: BTreeMap<(Side, u64), KeyWindow> = BTreeMap::new();
    let mut out = Vec::new();
    for t in 0..timeline.len() {
        let widths = effective_widths(&profiles, timeline, t, margin_m);
        let keys: Vec<(Side, u64)> = widths.iter().map(|w| (w.0, w.1.to_bits())).collect();
        let closed: Vec<(Side, u64)> = open.keys().filter(|k| !keys.contains(k)).copied().collect();
        for k in closed {
            out.push(open.remove(&k).expect("open window"));
        }
        for (k, (side, width)) in keys.into_iter().zip(widths) {
            open.entry(k)
                .and_modify(|w| w.end = t)
                .or_insert(KeyWindow { side, width, start: t, end: t });
        }
    }
    out.extend(open.into_values());
    out.sort_by(|a, b| a.start.cmp(&b.start).then(a.side.cmp(&b.side)).then(a.width.total_cmp(&b.width)));
    out
}

/// One tracked path: a detection or a gap for every snapshot from `start`
/// to the end of its window.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrack {
    pub side: Side,
    pub width: f64,
    pub start: usize,
    pub points: Vec<Option<Detection>>,
}

impl PathTrack {
    pub fn states(&self) -> Vec<bool> {
        self.points.iter().map(Option::is_some).collect()
    }
}

struct Slot {
    track: PathTrack,
    last: Detection,
    alive: bool,
    dead_since: usize,
}

/// Greedy nearest-neighbour association in (relative delay, AoA) within
/// the gates, independently for every window.
pub fn track_paths(dets: &[Detection], windows: &[KeyWindow], gates: TrackGates, policy: SlotPolicy) -> Vec<PathTrack> {
    let mut by_key: BTreeMap<(Side, u64), BTreeMap<usize, Vec<Detection>>> = BTreeMap::new();
    for d in dets {
        by_key
            .entry((d.side, d.width.to_bits()))
            .or_default()
            .entry(d.snapshot)
            .or_default()
            .push(*d);
    }
    let empty = BTreeMap::new();
    windows
        .par_iter()
        .flat_map_iter(|w| {
            let snaps = by_key.get(&(w.side, w.width.to_bits())).unwrap_or(&empty);
            track_window(w, snaps, gates, policy)
        })
        .collect()
}

fn track_window(
    w: &KeyWindow,
    snaps: &BTreeMap<usize, Vec<Detection>>,
    gates: TrackGates,
    policy: SlotPolicy,
) -> Vec<PathTrack> {
    let mut slots: Vec<Slot> = Vec::new();
    for t in w.start..=w.end {
        let cur = snaps.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        let mut pairs = Vec::new();
        for (i, s) in slots.iter().enumerate() {
            for (j, d) in cur.iter().enumerate() {
                let dt = (d.tau_rel_s - s.last.tau_rel_s).abs();
                let da = (d.aoa_deg - s.last.aoa_deg).abs();
                if dt <= gates.delay_s && da <= gates.aoa_deg {
                    let cost = (dt / gates.delay_s).powi(2) + (da / gates.aoa_deg).powi(2);
                    pairs.push((cost, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut slot_hit: Vec<Option<usize>> = vec![None; slots.len()];
        let mut det_used = vec![false; cur.len()];
        for (_, i, j) in pairs {
            if slot_hit[i].is_none() && !det_used[j] {
                slot_hit[i] = Some(j);
                det_used[j] = true;
            }
        }
        let n_before = slots.len();
        let unmatched: Vec<usize> = (0..cur.len()).filter(|&j| !det_used[j]).collect();
        for j in unmatched {
            let d = &cur[j];
            let reuse = match policy {
                SlotPolicy::NewTrack => None,
                SlotPolicy::ReuseDead => (0..n_before)
                    .filter(|&i| !slots[i].alive && slot_hit[i].is_none())
                    .min_by_key(|&i| (slots[i].dead_since, i)),
            };
            match reuse {
                Some(i) => slot_hit[i] = Some(j),
                None => slots.push(Slot {
                    track: PathTrack {
                        side: w.side,
                        width: w.width,
                        start: t,
                        points: Vec::new(),
                    },
                    last: *d,
                    alive: false,
                    dead_since: t,
                }),
            }
        }
        slot_hit.resize(slots.len(), None);
        for (i, s) in slots.iter_mut().enumerate() {
            let hit = if i < n_before { slot_hit[i].map(|j| cur[j]) } else { Some(s.last) };
            match hit {
                Some(d) => {
                    s.last = d;
                    s.alive = true;
                }
                None => {
                    if s.alive {
                        s.dead_since = t;
                    }
                    s.alive = false;
                }
            }
            s.track.points.push(hit);
        }
    }
    slots.into_iter().map(|s| s.track).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Laplace,
    Exponential,
    SidedLaplace(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinFit {
    /// Laplace location, exponential mean or single-sided mode.
    pub location: f64,
    pub scale: f64,
    pub n: usize,
    /// Zero scale: all samples equal.
    pub degenerate: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Maximum-likelihood location and scale of one family.
pub fn fit_bin(samples: &[f64], family: Family, min_samples: usize) -> Result<BinFit> {
    let n = samples.len();
    if n == 0 || n < min_samples {
        return Err(Error::InsufficientData(format!("{n} samples, need {}", min_samples.max(1))));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite sample".into()));
    }
    let mean_abs = |c: f64| samples.iter().map(|x| (x - c).abs()).sum::<f64>() / n as f64;
    let (location, scale) = match family {
        Family::Laplace => {
            let mut s = samples.to_vec();
            s.sort_by(f64::total_cmp);
            let m = median(&s);
            (m, mean_abs(m))
        }
        Family::Exponential => {
            let m = samples.iter().sum::<f64>() / n as f64;
            (m, m)
        }
        Family::SidedLaplace(side) => {
            let mode = match side {
                Side::Left => samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Side::Right => samples.iter().copied().fold(f64::INFINITY, f64::min),
            };
            (mode, mean_abs(mode))
        }
    };
    Ok(BinFit {
        location,
        scale,
        n,
        degenerate: scale == 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares of location on width.
pub fn fit_linear_map(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!("{} width bins, need 2", points.len())));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("all widths identical".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    Ok(LinearFit {
        slope,
        intercept,
        residual_rms: (ssr / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideMarkov {
    pub matrix: MarkovMatrix,
    /// `counts[a][b]`: transitions from state a to state b.
    pub counts: [[u64; 2]; 2],
    /// Rows without any observed transition, set to the identity row.
    pub defaulted_rows: [bool; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovFit {
    pub left: SideMarkov,
    pub right: SideMarkov,
}

impl MarkovFit {
    pub fn params(&self) -> MarkovParams {
        MarkovParams {
            left: self.left.matrix,
            right: self.right.matrix,
        }
    }

    pub fn side(&self, side: Side) -> &SideMarkov {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Maximum-likelihood transition matrix per side from consecutive track
/// states.
pub fn fit_markov(tracks: &[PathTrack]) -> Result<MarkovFit> {
    let mut counts = [[[0u64; 2]; 2]; 2];
    for tr in tracks {
        let side = tr.side as usize;
        for w in tr.states().windows(2) {
            counts[side][w[0] as usize][w[1] as usize] += 1;
        }
    }
    if counts.iter().flatten().flatten().all(|&c| c == 0) {
        return Err(Error::InsufficientData("no state transitions in any track".into()));
    }
    let side_fit = |c: [[u64; 2]; 2]| -> Result<SideMarkov> {
        let mut defaulted = [false; 2];
        let mut rows = [[0.0; 2]; 2];
        for a in 0..2 {
            let total = c[a][0] + c[a][1];
            if total == 0 {
                defaulted[a] = true;
                rows[a][a] = 1.0;
            } else {
                let p0 = c[a][0] as f64 / total as f64;
                rows[a] = [p0, 1.0 - p0];
            }
        }
        Ok(SideMarkov {
            matrix: MarkovMatrix::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])?,
            counts: c,
            defaulted_rows: defaulted,
        })
    };
    Ok(MarkovFit {
        left: side_fit(counts[Side::Left as usize])?,
        right: side_fit(counts[Side::Right as usize])?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathLossFit {
    pub gamma: f64,
    pub p_ref: f64,
    pub sigma: f64,
    pub n: usize,
    /// Fewer than three samples or less than a factor two in distance.
    pub underdetermined: bool,
}

impl PathLossFit {
    pub fn params(&self, d_ref: f64) -> LargeScaleParams {
        LargeScaleParams {
            gamma: self.gamma,
            p_ref: self.p_ref,
            d_ref,
            sigma_shadow: self.sigma,
        }
    }
}

/// Least squares of `pl` on `-10 log10(d / d_ref)`; sigma is the residual
/// standard deviation with two degrees of freedom removed.
pub fn fit_path_loss(samples: &[(f64, f64)], d_ref: f64) -> Result<PathLossFit> {
    if !(d_ref > 0.0) {
        return Err(Error::invalid("d_ref", "must be > 0"));
    }
    if samples.iter().any(|s| !(s.0 > 0.0) || !s.1.is_finite()) {
        return Err(Error::Numerical("path-loss samples need positive distances and finite values".into()));
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|&(d, pl)| (-10.0 * (d / d_ref).log10(), pl)).collect();
    let line = fit_linear_map(&points).map_err(|_| {
        Error::InsufficientData(format!("degenerate distance span over {} samples", samples.len()))
    })?;
    let n = samples.len();
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s.0), hi.max(s.0)));
    let sigma = if n > 2 {
        (line.residual_rms.powi(2) * n as f64 / (n - 2) as f64).sqrt()
    } else {
        0.0
    };
    Ok(PathLossFit {
        gamma: line.slope,
        p_ref: line.intercept,
        sigma,
        n,
        underdetermined: n < 3 || hi < 2.0 * lo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseCheck {
    pub n: usize,
    pub bins: usize,
    pub chi_square: f64,
    pub p_value: f64,
}

/// Pearson chi-square test of the phases against the uniform density on
/// [-pi, pi).
pub fn phase_uniformity(phases: &[f64], bins: usize) -> Result<PhaseCheck> {
    if phases.is_empty() || bins < 2 {
        return Err(Error::InsufficientData("phase test needs samples and at least two bins".into()));
    }
    let mut counts = vec![0usize; bins];
    for p in phases {
        let u = ((p + PI) / (2.0 * PI)).rem_euclid(1.0);
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = phases.len() as f64 / bins as f64;
    let chi_square: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((bins - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(PhaseCheck {
        n: phases.len(),
        bins,
        chi_square,
        p_value: dist.sf(chi_square),
    })
}

/// Poisson mean whose count, floored at one, has expectation `mean_count`.
pub fn subpath_mean_from_counts(mean_count: f64) -> Result<f64> {
    if !(mean_count >= 1.0 && mean_count.is_finite()) {
        return Err(Error::Numerical(format!("mean subpath count {mean_count} below one")));
    }
    let f = |l: f64| l + (-l).exp() - mean_count;
    let (mut lo, mut hi) = (0.0, mean_count);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One row of the fit report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinReport {
    pub side: Side,
    pub width_m: f64,
    pub n: usize,
    pub used: bool,
    pub power_loc_db: f64,
    pub power_scale_db: f64,
    pub power_residual_db: f64,
    pub delay_mean_s: f64,
    pub delay_residual_s: f64,
    pub aoa_mode_deg: f64,
    pub aoa_scale_deg: f64,
    pub aoa_residual_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub min_samples: usize,
    /// Defaults to two delay bins and ten degrees.
    pub gates: Option<TrackGates>,
    pub slot_policy: SlotPolicy,
    /// Overrides the scenario's visibility margin.
    pub margin_m: Option<f64>,
    pub d_ref: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            min_samples: DEFAULT_MIN_SAMPLES,
            gates: None,
            slot_policy: SlotPolicy::ReuseDead,
            margin_m: None,
            d_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: ModelParams,
    pub bins: Vec<BinReport>,
    pub markov: MarkovFit,
    pub phase: PhaseCheck,
    pub path_loss_los: PathLossFit,
    pub path_loss_nlos: Option<PathLossFit>,
    pub flags: Vec<String>,
}

struct BinFits {
    side: Side,
    width: f64,
    power: BinFit,
    delay: BinFit,
    aoa: BinFit,
}

/// Estimates a complete parameter set from a width-labelled log of the
/// given scenario.
pub fn calibrate_all(rows: &[AssignedRecord], config: &ScenarioConfig, opts: &CalibrationOptions) -> Result<Calibration> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty MPC log".into()));
    }
    let timeline = classify_visibility(config)?;
    let last = rows.iter().map(|r| r.snapshot).max().unwrap_or(0);
    if last >= timeline.len() {
        return Err(Error::invalid(
            "log",
            format!("snapshot {last} beyond the scenario's {} snapshots", timeline.len()),
        ));
    }
    let mut flags = Vec::new();
    let (refs, dets) = relative_detections(rows);
    if dets.is_empty() {
        return Err(Error::InsufficientData("no width-labelled MPCs in the log".into()));
    }

    let mut groups: BTreeMap<(Side, u64), (f64, Vec<Detection>)> = BTreeMap::new();
    for d in &dets {
        groups.entry((d.side, d.width.to_bits())).or_insert((d.width, Vec::new())).1.push(*d);
    }
    let groups: Vec<(Side, f64, Vec<Detection>)> = groups.into_iter().map(|((s, _), (w, v))| (s, w, v)).collect();
    let fits: Vec<std::result::Result<BinFits, (Side, f64, usize)>> = groups
        .par_iter()
        .map(|(side, width, v)| {
            let col = |f: fn(&Detection) -> f64| v.iter().map(f).collect::<Vec<f64>>();
            let fit = || -> Result<BinFits> {
                Ok(BinFits {
                    side: *side,
                    width: *width,
                    power: fit_bin(&col(|d| d.beta_rel_db), Family::Laplace, opts.min_samples)?,
                    delay: fit_bin(&col(|d| d.tau_rel_s), Family::Exponential, opts.min_samples)?,
                    aoa: fit_bin(&col(|d| d.aoa_deg), Family::SidedLaplace(*side), opts.min_samples)?,
                })
            };
            fit().map_err(|_| (*side, *width, v.len()))
        })
        .collect();
    let used: Vec<&BinFits> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
    for f in &fits {
        if let Err((side, width, n)) = f {
            flags.push(format!("bin {side} {width} m excluded: {n} samples < {}", opts.min_samples));
        }
    }

    let map = |name: &str, pts: Vec<(f64, f64)>| fit_linear_map(&pts).map_err(|e| e.context(format!("{name} width map")));
    let power_map = map("power", used.iter().map(|b| (b.width, b.power.location)).collect())?;
    let delay_map = map("delay", used.iter().map(|b| (b.width, b.delay.location)).collect())?;
    let weighted_scale = |bins: &[&&BinFits], pick: fn(&BinFits) -> &BinFit| {
        let n: usize = bins.iter().map(|b| pick(b).n).sum();
        bins.iter().map(|b| pick(b).scale * pick(b).n as f64).sum::<f64>() / n as f64
    };
    let all: Vec<&&BinFits> = used.iter().collect();
    let b_beta = weighted_scale(&all, |b| &b.power);
    let mut aoa = BTreeMap::new();
    for side in [Side::Left, Side::Right] {
        let bins: Vec<&&BinFits> = used.iter().filter(|b| b.side == side).collect();
        let m = map(&format!("aoa_{side}"), bins.iter().map(|b| (b.width, b.aoa.location)).collect())?;
        aoa.insert(side, (m, weighted_scale(&bins, |b| &b.aoa)));
    }

    let eoa_fit = fit_bin(&dets.iter().map(|d| d.eoa_deg).collect::<Vec<_>>(), Family::Laplace, opts.min_samples)
        .map_err(|e| e.context("eoa"))?;
    let phase = phase_uniformity(&dets.iter().map(|d| d.phase_rad).collect::<Vec<_>>(), PHASE_BINS)?;
    if phase.p_value < PHASE_ALARM_P {
        flags.push(format!("phase uniformity rejected: chi2 {:.1}, p {:.2e}", phase.chi_square, phase.p_value));
    }

    let margin = opts.margin_m.unwrap_or(config.visibility.margin_m);
    let windows = scenario_windows(config, &timeline, margin);
    let gates = opts.gates.unwrap_or_else(|| TrackGates::for_bandwidth(config.rf.bw_hz));
    let tracks = track_paths(&dets, &windows, gates, opts.slot_policy);
    let markov = fit_markov(&tracks).map_err(|e| e.context("markov"))?;
    for side in [Side::Left, Side::Right] {
        for (a, d) in markov.side(side).defaulted_rows.iter().enumerate() {
            if *d {
                flags.push(format!("markov.{side} row {a} has no transitions; set to identity"));
            }
        }
    }

    let mut birth_counts = Vec::new();
    for w in &windows {
        if refs.contains_key(&w.start) {
            let n = dets
                .iter()
                .filter(|d| d.snapshot == w.start && d.side == w.side && d.width == w.width)
                .count();
            if n > 0 {
                birth_counts.push(n as f64);
            }
        }
    }
    let subpath_mean = if birth_counts.is_empty() {
        flags.push("no cluster births observed; subpath_mean from mean detections per cluster".into());
        dets.len() as f64 / windows.len().max(1) as f64
    } else {
        let m = birth_counts.iter().sum::<f64>() / birth_counts.len() as f64;
        subpath_mean_from_counts(m).map_err(|e| e.context("subpath_mean"))?
    };

    let (los_fit, nlos_fit) = fit_large_scale(&refs, &timeline, config.tx_power_dbm, opts.d_ref, &mut flags)?;
    let los = los_fit.params(opts.d_ref);
    let nlos = nlos_fit.map(|f| f.params(opts.d_ref));

    let bins = fits
        .iter()
        .map(|f| match f {
            Ok(b) => BinReport {
                side: b.side,
                width_m: b.width,
                n: b.power.n,
                used: true,
                power_loc_db: b.power.location,
                power_scale_db: b.power.scale,
                power_residual_db: b.power.location - power_map.predict(b.width),
                delay_mean_s: b.delay.location,
                delay_residual_s: b.delay.location - delay_map.predict(b.width),
                aoa_mode_deg: b.aoa.location,
                aoa_scale_deg: b.aoa.scale,
                aoa_residual_deg: b.aoa.location - aoa[&b.side].0.predict(b.width),
            },
            Err((side, width, n)) => BinReport {
                side: *side,
                width_m: *width,
                n: *n,
                used: false,
                power_loc_db: f64::NAN,
                power_scale_db: f64::NAN,
                power_residual_db: f64::NAN,
                delay_mean_s: f64::NAN,
                delay_residual_s: f64::NAN,
                aoa_mode_deg: f64::NAN,
                aoa_scale_deg: f64::NAN,
                aoa_residual_deg: f64::NAN,
            },
        })
        .collect();

    let aoa_params = |side: Side| AoaParams {
        alpha: aoa[&side].0.slope,
        beta0: aoa[&side].0.intercept,
        b: aoa[&side].1,
    };
    let (lo, hi) = used
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b.width), hi.max(b.width)));
    let params = ModelParams {
        power: PowerParams {
            alpha_beta: power_map.slope,
            beta0_beta: power_map.intercept,
            b_beta,
        },
        delay: DelayParams {
            alpha_tau: delay_map.slope,
            beta0_tau: delay_map.intercept,
        },
        aoa_left: aoa_params(Side::Left),
        aoa_right: aoa_params(Side::Right),
        eoa: EoaParams {
            u_phi: eoa_fit.location,
            b_phi: eoa_fit.scale,
        },
        markov: markov.params(),
        subpath_mean,
        largescale_los: los,
        largescale_nlos: nlos,
        width_range_m: [lo, hi],
        notes: flags.clone(),
    };
    params.validate().map_err(|e| e.context("calibrated parameters"))?;
    Ok(Calibration {
        params,
        bins,
        markov,
        phase,
        path_loss_los: los_fit,
        path_loss_nlos: nlos_fit,
        flags,
    })
}

/// LOS fit on the direct-path distance; NLOS fit on the breakpoint-to-RX
/// distance after removing the fitted LOS stage. The NLOS shadowing excludes
/// the LOS stage's variance.
fn fit_large_scale(
    refs: &BTreeMap<usize, Reference>,
    timeline: &VisibilityTimeline,
    tx_power_dbm: f64,
    d_ref: f64,
    flags: &mut Vec<String>,
) -> Result<(PathLossFit, Option<PathLossFit>)> {
    let mut los = Vec::new();
    let mut nlos_raw = Vec::new();
    for (&t, r) in refs {
        let (stage, dist) = link_distances(timeline, t)?;
        let pl = r.power_db - tx_power_dbm;
        match (stage, dist.l_nlos) {
            (Stage::Los, _) if dist.l_los >= d_ref => los.push((dist.l_los, pl)),
            (Stage::NlosTwoStage, Some(l)) if l >= d_ref => nlos_raw.push((dist.l_los, l, pl)),
            _ => {}
        }
    }
    let los_fit = fit_path_loss(&los, d_ref).map_err(|e| e.context("largescale_los"))?;
    if los_fit.underdetermined {
        flags.push("largescale_los fit is under-determined".into());
    }
    if nlos_raw.is_empty() {
        flags.push("largescale_nlos absent: log has no NLOS snapshots".into());
        return Ok((los_fit, None));
    }
    let los_params = los_fit.params(d_ref);
    let nlos: Vec<(f64, f64)> = nlos_raw
        .iter()
        .map(|&(l_los, l, pl)| Ok((l, pl - mean_path_loss(l_los.max(d_ref), &los_params)?)))
        .collect::<Result<_>>()?;
    match fit_path_loss(&nlos, d_ref) {
        Ok(mut f) => {
            f.sigma = (f.sigma.powi(2) - los_fit.sigma.powi(2)).max(0.0).sqrt();
            if f.underdetermined {
                flags.push("largescale_nlos fit is under-determined".into());
            }
            Ok((los_fit, Some(f)))
        }
        Err(e) => {
            flags.push(format!("largescale_nlos absent: {e}"));
            Ok((los_fit, None))
        }
    }
}
