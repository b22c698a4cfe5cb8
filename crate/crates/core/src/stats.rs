//! Power-delay profiles, RMS delay spread, Fleury angular spread and
//! Kolmogorov-Smirnov distances.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Region;
use crate::synthesis::Mpc;

/// Delay resolution of a 30 MHz sounder.
pub const DEFAULT_BIN_S: f64 = 1.0 / 30e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Pdp {
    pub bin_width_s: f64,
    /// Linear power per excess-delay bin, bin `i` at `i * bin_width_s`.
    pub powers: Vec<f64>,
}

impl Pdp {
    /// Nonzero bins as (excess delay, linear power).
    pub fn taps(&self) -> Vec<(f64, f64)> {
        self.powers
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (i as f64 * self.bin_width_s, *p))
            .collect()
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

fn linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Bins MPC powers by delay relative to the earliest MPC.
pub fn pdp(mpcs: &[Mpc], bin_width_s: f64) -> Result<Pdp> {
    if !(bin_width_s > 0.0) {
        return Err(Error::invalid("bin_width_s", "must be positive"));
    }
    let t0 = mpcs
        .iter()
        .map(|m| m.delay_s)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::InsufficientData("empty snapshot".into()))?;
    let idx = |m: &Mpc| ((m.delay_s - t0) / bin_width_s).floor() as usize;
    let n = mpcs.iter().map(idx).max().unwrap_or(0) + 1;
    let mut powers = vec![0.0; n];
    for m in mpcs {
        powers[idx(m)] += linear(m.power_db);
    }
    Ok(Pdp { bin_width_s, powers })
}

/// `sqrt(sum p tau^2 / sum p - (sum p tau / sum p)^2)` over (delay, power) taps.
pub fn rms_delay_spread(taps: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = taps.iter().map(|t| t.1).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("power-delay profile has no power".into()));
    }
    let mean = taps.iter().map(|(tau, p)| p * tau).sum::<f64>() / total;
    let second = taps.iter().map(|(tau, p)| p * tau * tau).sum::<f64>() / total;
    Ok((second - mean * mean).max(0.0).sqrt())
}

pub fn pdp_delay_spread(pdp: &Pdp) -> Result<f64> {
    rms_delay_spread(&pdp.taps())
}

/// Fleury spread `sqrt(sum p |e^{j theta} - mu|^2 / sum p)` with
/// `mu = sum p e^{j theta} / sum p`, dimensionless in [0, 1] for power
/// spread over a circle.
pub fn angular_spread(angles_deg: &[f64], powers_lin: &[f64]) -> Result<f64> {
    let total: f64 = powers_lin.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("angular spread of zero power".into()));
    }
    let phasor = |a: f64| Complex64::from_polar(1.0, a.to_radians());
    let mu = angles_deg
        .iter()
        .zip(powers_lin)
        .map(|(a, p)| phasor(*a) * p)
        .sum::<Complex64>()
        / total;
    let var = angles_deg
        .iter()
        .zip(powers_lin)
        .map(|(a, p)| (phasor(*a) - mu).norm_sqr() * p)
        .sum::<f64>()
        / total;
    Ok(var.sqrt())
}

pub fn aoa_spread(mpcs: &[Mpc]) -> Result<f64> {
    let angles: Vec<f64> = mpcs.iter().map(|m| m.aoa_deg).collect();
    let powers: Vec<f64> = mpcs.iter().map(|m| linear(m.power_db)).collect();
    angular_spread(&angles, &powers)
}

/// Small-spread equivalent in degrees (the Fleury spread approaches the
/// RMS angle deviation in radians as the spread shrinks). Reporting only.
pub fn spread_degrees(fleury: f64) -> f64 {
    fleury.to_degrees()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Two-sample KS distance: sup over x of |F_a(x) - F_b(x)|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS distance needs two nonempty samples".into()));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS distance against a continuous CDF.
pub fn ks_against_cdf(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InsufficientData("KS distance of an empty sample".into()));
    }
    let s = sorted(sample);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}

/// Sorted `(value, cdf)` rows.
pub fn cdf_export<W: Write>(values: &[f64], out: W) -> Result<()> {
    let s = sorted(values);
    let n = s.len() as f64;
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io {
        path: "<cdf>".into(),
        source: std::io::Error::other(e),
    };
    w.write_record(["value", "cdf"]).map_err(err)?;
    for (i, v) in s.iter().enumerate() {
        w.write_record([v.to_string(), ((i + 1) as f64 / n).to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<cdf>", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub snapshot: usize,
    pub rms_ds_s: f64,
    pub aoa_spread: f64,
    pub n_mpcs: usize,
    pub region: Region,
}

pub fn snapshot_stats(snapshot: usize, mpcs: &[Mpc], region: Region, bin_width_s: f64) -> Result<SnapshotStats> {
    Ok(SnapshotStats {
        snapshot,
        rms_ds_s: pdp_delay_spread(&pdp(mpcs, bin_width_s)?)?,
        aoa_spread: aoa_spread(mpcs)?,
        n_mpcs: mpcs.len(),
        region,
    })
}
