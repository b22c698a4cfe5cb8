//! Log-distance path loss with lognormal shadowing and the two-stage
//! composition through the breakpoint for NLOS receivers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::distributions::LargeScaleParams;
use crate::error::{Error, Result};
use crate::scenario::{Region, VisibilityTimeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Los,
    NlosTwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub l_los: f64,
    pub l_nlos: Option<f64>,
}

impl Distances {
    /// Total unfolded propagation distance TX -> (breakpoint ->) RX.
    pub fn total(&self) -> f64 {
        self.l_los + self.l_nlos.unwrap_or(0.0)
    }
}

/// Path-loss term in the sign convention of the log-distance model: values
/// are added to the transmit power to obtain received power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Total term including shadowing.
    pub pl_db: f64,
    pub shadow_db: f64,
    pub stage: Stage,
    pub distances: Distances,
}

impl LinkBudget {
    pub fn received_dbm(&self, tx_power_dbm: f64) -> f64 {
        tx_power_dbm + self.pl_db
    }
}

/// Deterministic part `P_ref - 10 gamma log10(d / d_ref)`.
pub fn mean_path_loss(d: f64, ls: &LargeScaleParams) -> Result<f64> {
    if !(d >= ls.d_ref) {
        return Err(Error::invalid(
            "distance",
            format!("{d} m is below the reference distance {} m", ls.d_ref),
        ));
    }
    Ok(ls.p_ref - 10.0 * ls.gamma * (d / ls.d_ref).log10())
}

/// Shadowing draw; zero when disabled or `sigma_shadow` is zero.
pub fn shadowing<R: Rng + ?Sized>(ls: &LargeScaleParams, rng: Option<&mut R>) -> f64 {
    match rng {
        Some(rng) if ls.sigma_shadow > 0.0 => Normal::new(0.0, ls.sigma_shadow)
            .expect("validated sigma")
            .sample(rng),
        _ => 0.0,
    }
}

/// `P_ref - 10 gamma log10(d / d_ref) + X`. Pass `None` to disable shadowing.
pub fn path_loss<R: Rng + ?Sized>(d: f64, ls: &LargeScaleParams, rng: Option<&mut R>) -> Result<f64> {
    Ok(mean_path_loss(d, ls)? + shadowing(ls, rng))
}

/// Link distances at snapshot `t`: TX-RX for line-of-sight regions,
/// TX-breakpoint and breakpoint-RX otherwise.
pub fn link_distances(timeline: &VisibilityTimeline, t: usize) -> Result<(Stage, Distances)> {
    let frame = &timeline.frames[t];
    let tx = frame.tx.position;
    let rx = frame.rx.position;
    if timeline.regions[t].is_los() || timeline.regions[t] == Region::Turn {
        return Ok((
            Stage::Los,
            Distances {
                l_los: tx.distance(rx),
                l_nlos: None,
            },
        ));
    }
    let bp = timeline
        .breakpoint
        .ok_or_else(|| Error::Numerical(format!("snapshot {t} is NLOS but no breakpoint is known")))?;
    Ok((
        Stage::NlosTwoStage,
        Distances {
            l_los: tx.distance(bp),
            l_nlos: Some(bp.distance(rx)),
        },
    ))
}

/// Received-power budget at snapshot `t`. Distances shorter than the
/// reference distance are clamped to it.
pub fn link_budget<R: Rng + ?Sized>(
    timeline: &VisibilityTimeline,
    t: usize,
    los: &LargeScaleParams,
    nlos: &LargeScaleParams,
    mut rng: Option<&mut R>,
) -> Result<LinkBudget> {
    let (stage, distances) = link_distances(timeline, t)?;
    let mut pl = mean_path_loss(distances.l_los.max(los.d_ref), los)?;
    let mut shadow;
    match distances.l_nlos {
        None => shadow = shadowing(los, rng.as_deref_mut()),
        Some(l_nlos) => {
            pl += mean_path_loss(l_nlos.max(nlos.d_ref), nlos)?;
            shadow = shadowing(los, rng.as_deref_mut());
            shadow += shadowing(nlos, rng.as_deref_mut());
        }
    }
    pl += shadow;
    Ok(LinkBudget {
        pl_db: pl,
        shadow_db: shadow,
        stage,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, SimRng};
    use crate::scenario::classify_visibility;
    use crate::scenario::fixtures::case3_scenario;

    fn timeline() -> VisibilityTimeline {
        classify_visibility(&case3_scenario()).unwrap()
    }

    fn ls(gamma: f64, p_ref: f64, sigma: f64) -> LargeScaleParams {
        LargeScaleParams {
            gamma,
            p_ref,
            d_ref: 1.0,
            sigma_shadow: sigma,
        }
    }

    const NONE: Option<&mut SimRng> = None;

    #[test]
    fn reference_identity_and_decade_slope() {
        let p = ls(2.0, -40.0, 3.0);
        assert_eq!(path_loss(1.0, &p, NONE).unwrap(), -40.0);
        assert!((path_loss(10.0, &p, NONE).unwrap() - (-60.0)).abs() < 1e-12);
        assert!(path_loss(0.5, &p, NONE).is_err());
    }

    #[test]
    fn shadow_standard_deviation() {
        let p = ls(2.0, -40.0, 3.0);
        let mut rng = stream(11, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| path_loss(10.0, &p, Some(&mut rng)).unwrap() + 60.0)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / 3.0 - 1.0).abs() < 0.02, "{}", var.sqrt());
    }

    #[test]
    fn deterministic_part_decreasing() {
        let p = ls(2.1, -47.7, 0.0);
        let mut last = f64::INFINITY;
        for i in 0..500 {
            let v = mean_path_loss(1.0 + i as f64 * 0.7, &p).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn los_budget_at_reference_distance() {
        let tl = timeline();
        let t = tl.regions.iter().position(|r| r.is_los()).unwrap();
        let d = tl.frames[t].tx.position.distance(tl.frames[t].rx.position);
        let p = LargeScaleParams {
            d_ref: d,
            ..ls(2.0, -30.0, 0.0)
        };
        let b = link_budget(&tl, t, &p, &p, NONE).unwrap();
        assert_eq!(b.stage, Stage::Los);
        assert!((b.pl_db - -30.0).abs() < 1e-12);
    }

    #[test]
    fn nlos_budget_is_sum_of_stages() {
        let tl = timeline();
        let t = tl.first_nlos().unwrap();
        let los = ls(2.0, -30.0, 0.0);
        let nlos = ls(3.0, -10.0, 0.0);
        let b = link_budget(&tl, t, &los, &nlos, NONE).unwrap();
        assert_eq!(b.stage, Stage::NlosTwoStage);
        let bp = tl.breakpoint.unwrap();
        let l1 = tl.frames[t].tx.position.distance(bp);
        let l2 = bp.distance(tl.frames[t].rx.position).max(1.0);
        let expected = -30.0 - 20.0 * l1.log10() + -10.0 - 30.0 * l2.log10();
        assert!((b.pl_db - expected).abs() < 1e-9);
        // Two reference stages.
        let los_r = LargeScaleParams { d_ref: l1, ..los };
        let nlos_r = LargeScaleParams {
            d_ref: bp.distance(tl.frames[t].rx.position),
            ..nlos
        };
        let b = link_budget(&tl, t, &los_r, &nlos_r, NONE).unwrap();
        assert!((b.pl_db - (-40.0)).abs() < 1e-9);
    }

    #[test]
    fn missing_breakpoint_is_an_error() {
        let mut tl = timeline();
        let t = tl.first_nlos().unwrap();
        tl.breakpoint = None;
        let p = ls(2.0, -30.0, 0.0);
        assert!(link_budget(&tl, t, &p, &p, NONE).is_err());
    }

    #[test]
    fn slope_changes_at_breakpoint() {
        let tl = timeline();
        let los = ls(2.0, -30.0, 0.0);
        let nlos = ls(3.5, -10.0, 0.0);
        let t0 = tl.first_nlos().unwrap();
        let pl: Vec<f64> = (0..tl.len())
            .map(|t| link_budget(&tl, t, &los, &nlos, NONE).unwrap().pl_db)
            .collect();
        // Slope w.r.t. log10 of total distance, before and after the breakpoint.
        let slope = |a: usize, b: usize| {
            let da = link_distances(&tl, a).unwrap().1;
            let db = link_distances(&tl, b).unwrap().1;
            (pl[b] - pl[a]) / (db.total().log10() - da.total().log10())
        };
        let before = slope(0, 5);
        assert!((before - -20.0).abs() < 1e-9, "{before}");
        let after = slope(t0 + 20, tl.len() - 1);
        assert!(after < -30.0, "{after}");
    }
}
