//! Width identification of MPCs and reflection-point reconstruction.
//!
//! Angles enter in the array frame (degrees). The AoA is folded onto the
//! angle between the arrival direction and the facade normal, so both
//! sides share one formula; 90 degrees (arrival along the road) is singular.
//!
//! Two forms of the width constraint are available. `AsPrinted` combines the
//! RX-facade leg `A = d sec(theta)` and the facade-TX leg
//! `B = d sqrt(1 + (L/d - tan(theta))^2)` as `sqrt(A^2 + B^2)`.
//! `SingleBounce` uses the unfolded path length `A + B` of a specular
//! reflection and inverts it in closed form.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scenario::{Side, SPEED_OF_LIGHT};
use crate::synthesis::Mpc;

pub const DEFAULT_DELTA_S: f64 = 3e-8;
pub const WIDTH_TOL_M: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;

/// 5 m to 60 m in 5 m steps.
pub fn default_width_grid() -> Vec<f64> {
    (1..=12).map(|i| 5.0 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintForm {
    #[default]
    AsPrinted,
    SingleBounce,
}

impl std::str::FromStr for ConstraintForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" | "printed" => Ok(ConstraintForm::AsPrinted),
            "single-bounce" => Ok(ConstraintForm::SingleBounce),
            other => Err(Error::invalid("constraint", format!("unknown form {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotObservation {
    pub snapshot: usize,
    pub mpcs: Vec<Mpc>,
    /// Index of the minimum-delay MPC.
    pub direct: usize,
}

impl SnapshotObservation {
    pub fn new(snapshot: usize, mpcs: Vec<Mpc>) -> Result<Self> {
        let direct = (0..mpcs.len())
            .min_by(|&a, &b| mpcs[a].delay_s.total_cmp(&mpcs[b].delay_s))
            .ok_or_else(|| Error::InsufficientData(format!("snapshot {snapshot} has no MPCs")))?;
        Ok(SnapshotObservation { snapshot, mpcs, direct })
    }

    /// Observation whose direct path is known rather than inferred.
    pub fn with_direct(snapshot: usize, mpcs: Vec<Mpc>, direct: usize) -> Result<Self> {
        if direct >= mpcs.len() {
            return Err(Error::invalid("direct", format!("index {direct} out of range")));
        }
        Ok(SnapshotObservation { snapshot, mpcs, direct })
    }

    pub fn direct(&self) -> &Mpc {
        &self.mpcs[self.direct]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthAssignment {
    pub mpc_index: usize,
    pub side: Side,
    pub width: f64,
    pub residual: f64,
}

/// Arrival angle from the facade normal, radians in [0, pi/2].
fn normal_angle(aoa_deg: f64) -> f64 {
    let a = if aoa_deg <= 90.0 { aoa_deg } else { 180.0 - aoa_deg };
    a.to_radians()
}

struct Terms {
    /// Direct path length projected on the horizontal plane.
    los_length: f64,
    tan: f64,
    sec2: f64,
    /// Reflected path length projected on the horizontal plane.
    reflect_length: f64,
}

fn terms(mpc: &Mpc, direct: &Mpc) -> Result<Terms> {
    let theta = normal_angle(mpc.aoa_deg);
    let cos = theta.cos();
    if cos.abs() < 1e-12 {
        return Err(Error::Numerical(format!(
            "AoA {} deg arrives parallel to the facade; width constraint is singular",
            mpc.aoa_deg
        )));
    }
    Ok(Terms {
        los_length: direct.delay_s * SPEED_OF_LIGHT * direct.eoa_deg.to_radians().sin(),
        tan: theta.tan(),
        sec2: 1.0 / (cos * cos),
        reflect_length: mpc.delay_s * SPEED_OF_LIGHT * mpc.eoa_deg.to_radians().sin(),
    })
}

fn radical(t: &Terms, d: f64) -> f64 {
    (1.0 + (t.los_length / d - t.tan).powi(2) + t.sec2).sqrt()
}

/// Modelled horizontal path length of a reflection off a facade at `d`.
fn modelled_length(form: ConstraintForm, t: &Terms, d: f64) -> f64 {
    match form {
        ConstraintForm::AsPrinted => d * radical(t, d),
        ConstraintForm::SingleBounce => {
            d * t.sec2.sqrt() + d * (1.0 + (t.los_length / d - t.tan).powi(2)).sqrt()
        }
    }
}

/// `(d/c) sqrt(1 + (tau_dir c sin(phi_dir) / d - tan(theta))^2 + 1/cos^2(theta)) - tau_ref sin(phi_ref)`.
pub fn constraint_residual(mpc: &Mpc, direct: &Mpc, d: f64) -> Result<f64> {
    constraint_residual_with(ConstraintForm::AsPrinted, mpc, direct, d)
}

pub fn constraint_residual_with(form: ConstraintForm, mpc: &Mpc, direct: &Mpc, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid("d", "width must be positive"));
    }
    let t = terms(mpc, direct)?;
    Ok((modelled_length(form, &t, d) - t.reflect_length) / SPEED_OF_LIGHT)
}

/// Assigns each non-direct MPC to the width minimising |residual| when that
/// minimum is within `delta_s`. Each side is searched over its own grid;
/// ties go to the smaller width.
pub fn assign_clusters_sided(
    obs: &SnapshotObservation,
    left_grid: &[f64],
    right_grid: &[f64],
    delta_s: f64,
    form: ConstraintForm,
) -> Vec<WidthAssignment> {
    let direct = obs.direct();
    let mut out = Vec::new();
    for (i, m) in obs.mpcs.iter().enumerate() {
        if i == obs.direct {
            continue;
        }
        let side = Side::from_aoa_deg(m.aoa_deg);
        let grid = match side {
            Side::Left => left_grid,
            Side::Right => right_grid,
        };
        let mut best: Option<(f64, f64)> = None;
        for &d in grid {
            let Ok(r) = constraint_residual_with(form, m, direct, d) else {
                continue;
            };
            if best.is_none_or(|(_, b)| r.abs() < b.abs()) {
                best = Some((d, r));
            }
        }
        if let Some((width, residual)) = best.filter(|(_, r)| r.abs() <= delta_s) {
            out.push(WidthAssignment {
                mpc_index: i,
                side,
                width,
                residual,
            });
        }
    }
    out
}

pub fn assign_clusters(obs: &SnapshotObservation, width_grid: &[f64], delta_s: f64) -> Vec<WidthAssignment> {
    assign_clusters_sided(obs, width_grid, width_grid, delta_s, ConstraintForm::AsPrinted)
}

/// Per-snapshot assignment in parallel. `grid_for(snapshot, side)` supplies
/// the candidate widths.
pub fn identify_all<F>(
    observations: &[SnapshotObservation],
    grid_for: F,
    delta_s: f64,
    form: ConstraintForm,
) -> Vec<Vec<WidthAssignment>>
where
    F: Fn(usize, Side) -> Vec<f64> + Sync,
{
    observations
        .par_iter()
        .map(|o| {
            let left = grid_for(o.snapshot, Side::Left);
            let right = grid_for(o.snapshot, Side::Right);
            assign_clusters_sided(o, &left, &right, delta_s, form)
        })
        .collect()
}

/// Solves `d = tau_ref sin(phi_ref) c / sqrt(1 + (L/d - tan)^2 + sec^2)` for
/// `d` with Aitken-accelerated fixed-point iteration seeded at the numerator.
pub fn reconstruct_width(mpc: &Mpc, direct: &Mpc) -> Result<f64> {
    let t = terms(mpc, direct)?;
    let k = t.reflect_length;
    if !(k > 0.0) {
        return Err(Error::Numerical("reflected path has no horizontal length".into()));
    }
    let g = |d: f64| k / radical(&t, d);
    let mut d = k;
    for _ in 0..MAX_ITERATIONS {
        let d1 = g(d);
        let d2 = g(d1);
        let denom = d2 - 2.0 * d1 + d;
        let mut next = if denom.abs() > f64::EPSILON * d.abs() {
            d - (d1 - d).powi(2) / denom
        } else {
            d2
        };
        if !(next > 0.0 && next.is_finite()) {
            next = d2;
        }
        if (next - d).abs() < WIDTH_TOL_M {
            return Ok(next);
        }
        d = next;
    }
    Err(Error::Numerical(format!(
        "width iteration did not converge in {MAX_ITERATIONS} steps (last {d} m)"
    )))
}

/// Closed-form inverse of the single-bounce length
/// `K = d sec(theta) + sqrt(d^2 + (L - d tan(theta))^2)`:
/// `d = (K^2 - L^2) / (2 (K sec(theta) - L tan(theta)))`.
pub fn reconstruct_width_single_bounce(mpc: &Mpc, direct: &Mpc) -> Result<f64> {
    let t = terms(mpc, direct)?;
    let (k, l) = (t.reflect_length, t.los_length);
    let denom = 2.0 * (k * t.sec2.sqrt() - l * t.tan);
    let d = (k * k - l * l) / denom;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Numerical(format!(
            "reflected length {k} m and direct length {l} m admit no facade"
        )));
    }
    Ok(d)
}

pub fn reconstruct_width_with(form: ConstraintForm, mpc: &Mpc, direct: &Mpc) -> Result<f64> {
    match form {
        ConstraintForm::AsPrinted => reconstruct_width(mpc, direct),
        ConstraintForm::SingleBounce => reconstruct_width_single_bounce(mpc, direct),
    }
}

/// Single-bounce reflection point distance from the TX along the road,
/// `L - d tan(theta)`.
pub fn reconstruct_longitudinal_single_bounce(mpc: &Mpc, direct: &Mpc, d: f64) -> f64 {
    let theta = normal_angle(mpc.aoa_deg);
    direct.delay_s * SPEED_OF_LIGHT * direct.eoa_deg.to_radians().sin() - d * theta.tan()
}

/// `tau_dir c - |tan(theta) (d/2) sin(phi_ref) cos(theta)|`.
pub fn reconstruct_longitudinal(mpc: &Mpc, direct: &Mpc, d: f64) -> f64 {
    let theta = normal_angle(mpc.aoa_deg);
    let phi = mpc.eoa_deg.to_radians();
    direct.delay_s * SPEED_OF_LIGHT - (theta.tan() * (d / 2.0) * phi.sin() * theta.cos()).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub snapshot: usize,
    pub l_m: f64,
    pub d_m: f64,
    pub side: Side,
}

/// Reflection points of every assigned MPC; MPCs whose width iteration
/// fails are skipped and counted.
pub fn reconstruct_scatterers(
    observations: &[SnapshotObservation],
    assignments: &[Vec<WidthAssignment>],
    form: ConstraintForm,
) -> (Vec<Scatterer>, usize) {
    let mut out = Vec::new();
    let mut failed = 0;
    for (o, a) in observations.iter().zip(assignments) {
        let direct = o.direct();
        for w in a {
            let m = &o.mpcs[w.mpc_index];
            match reconstruct_width_with(form, m, direct) {
                Ok(d) => out.push(Scatterer {
                    snapshot: o.snapshot,
                    l_m: match form {
                        ConstraintForm::AsPrinted => reconstruct_longitudinal(m, direct, d),
                        ConstraintForm::SingleBounce => reconstruct_longitudinal_single_bounce(m, direct, d),
                    },
                    d_m: d,
                    side: w.side,
                }),
                Err(_) => failed += 1,
            }
        }
    }
    (out, failed)
}
