//! Width-conditioned distribution family for the five MPC parameters.
//!
//! Each parameter's distribution is indexed by a location (or mean) that is
//! a linear function of the one-sided canyon width `d`:
//!
//! | parameter      | family              | width dependence          |
//! |----------------|---------------------|---------------------------|
//! | relative power | Laplace             | location `a_b d + b0_b`   |
//! | relative delay | exponential         | mean `a_t d + b0_t`       |
//! | azimuth        | single-sided Laplace| mode `a_th d + b0_th`     |
//! | elevation      | Laplace             | none                      |
//! | phase          | uniform [-pi, pi)   | none                      |

mod params;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, Open01};

pub use params::{
    AoaParams, DelayParams, EoaParams, LargeScaleParams, MarkovParams, ModelParams, PowerParams,
};

use crate::error::{Error, Result};
use crate::scenario::Side;

/// Minimum probability mass of the azimuth quadrant under the untruncated
/// single-sided Laplace; below this the mode is incompatible with the side.
const MIN_QUADRANT_MASS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laplace {
    pub loc: f64,
    pub scale: f64,
}

impl Laplace {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
        self.loc - self.scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        -(2.0 * self.scale).ln() - (x - self.loc).abs() / self.scale
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    pub fn mean(&self) -> f64 {
        self.loc
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.scale * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential {
    pub mean: f64,
}

impl Exponential {
    /// Strictly positive draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let e: f64 = rng.sample(Exp1);
            if e > 0.0 {
                return self.mean * e;
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x > 0.0 {
            -self.mean.ln() - x / self.mean
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-x / self.mean).exp_m1()
        }
    }
}

/// Single-sided Laplace restricted to the side's azimuth quadrant.
///
/// Left: density `(1/b) exp((x - u)/b)` for `x <= u`; right mirrored,
/// `(1/b) exp(-(x - u)/b)` for `x >= u`. Draws outside the quadrant
/// ([0, 90] left, [90, 180] right) are rejected and redrawn, so the
/// effective density is the closed form renormalised over the quadrant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidedLaplace {
    pub mode: f64,
    pub scale: f64,
    pub side: Side,
}

impl SidedLaplace {
    pub fn new(mode: f64, scale: f64, side: Side) -> Result<Self> {
        let d = SidedLaplace { mode, scale, side };
        let mass = d.quadrant_mass();
        if !(mass >= MIN_QUADRANT_MASS) {
            return Err(Error::invalid(
                format!("aoa_{side}"),
                format!("mode {mode} deg with scale {scale} leaves {mass:.2e} mass in the {side} quadrant"),
            ));
        }
        Ok(d)
    }

    pub fn quadrant(&self) -> (f64, f64) {
        match self.side {
            Side::Left => (0.0, 90.0),
            Side::Right => (90.0, 180.0),
        }
    }

    /// CDF of the untruncated single-sided law.
    fn raw_cdf(&self, x: f64) -> f64 {
        match self.side {
            Side::Left => {
                if x >= self.mode {
                    1.0
                } else {
                    ((x - self.mode) / self.scale).exp()
                }
            }
            Side::Right => {
                if x <= self.mode {
                    0.0
                } else {
                    -(-(x - self.mode) / self.scale).exp_m1()
                }
            }
        }
    }

    pub fn quadrant_mass(&self) -> f64 {
        let (lo, hi) = self.quadrant();
        self.raw_cdf(hi) - self.raw_cdf(lo)
    }

    /// Untruncated closed-form log density.
    pub fn ln_pdf_untruncated(&self, x: f64) -> f64 {
        let z = (x - self.mode) / self.scale;
        match self.side {
            Side::Left if z <= 0.0 => z - self.scale.ln(),
            Side::Right if z >= 0.0 => -z - self.scale.ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.quadrant();
        if x < lo || x > hi {
            return f64::NEG_INFINITY;
        }
        self.ln_pdf_untruncated(x) - self.quadrant_mass().ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.quadrant();
        let x = x.clamp(lo, hi);
        ((self.raw_cdf(x) - self.raw_cdf(lo)) / self.quadrant_mass()).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.quadrant();
        loop {
            let e: f64 = rng.sample(Exp1);
            let x = match self.side {
                Side::Left => self.mode - self.scale * e,
                Side::Right => self.mode + self.scale * e,
            };
            if (lo..=hi).contains(&x) {
                return x;
            }
        }
    }
}

pub fn uniform_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let x = -PI + 2.0 * PI * rng.random::<f64>();
    if x >= PI {
        -PI
    } else {
        x
    }
}

pub fn phase_ln_pdf(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        -(2.0 * PI).ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub fn phase_cdf(x: f64) -> f64 {
    ((x + PI) / (2.0 * PI)).clamp(0.0, 1.0)
}

/// Distributions of one cluster's subpaths after conditioning on (side, d).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionedDists {
    pub power: Laplace,
    pub delay: Exponential,
    pub aoa: SidedLaplace,
    pub eoa: Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcParameter {
    Power,
    Delay,
    Aoa,
    Eoa,
    Phase,
}

/// One raw draw: offsets relative to the direct path plus angles and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawDraw {
    pub beta_rel_db: f64,
    pub tau_rel_s: f64,
    pub aoa_deg: f64,
    pub eoa_deg: f64,
    pub phase_rad: f64,
}

/// Evaluates the width maps for a cluster at width `d` on `side`.
pub fn condition(params: &ModelParams, d: f64, side: Side) -> Result<ConditionedDists> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::invalid("width", format!("must be finite and >= 0, got {d}")));
    }
    let mean_delay = params.delay.alpha_tau * d + params.delay.beta0_tau;
    if !(mean_delay > 0.0) {
        return Err(Error::Numerical(format!(
            "mean relative delay {mean_delay:e} s is not positive at width {d} m"
        )));
    }
    let aoa = params.aoa(side);
    Ok(ConditionedDists {
        power: Laplace {
            loc: params.power.alpha_beta * d + params.power.beta0_beta,
            scale: params.power.b_beta,
        },
        delay: Exponential { mean: mean_delay },
        aoa: SidedLaplace::new(aoa.alpha * d + aoa.beta0, aoa.b, side)?,
        eoa: Laplace {
            loc: params.eoa.u_phi,
            scale: params.eoa.b_phi,
        },
    })
}

/// Draws the five parameters in a fixed order (power, delay, AoA, EoA, phase).
pub fn sample_mpc<R: Rng + ?Sized>(dists: &ConditionedDists, rng: &mut R) -> RawDraw {
    RawDraw {
        beta_rel_db: dists.power.sample(rng),
        tau_rel_s: dists.delay.sample(rng),
        aoa_deg: dists.aoa.sample(rng),
        eoa_deg: dists.eoa.sample(rng),
        phase_rad: uniform_phase(rng),
    }
}

pub fn log_pdf(dists: &ConditionedDists, value: f64, which: MpcParameter) -> f64 {
    match which {
        MpcParameter::Power => dists.power.ln_pdf(value),
        MpcParameter::Delay => dists.delay.ln_pdf(value),
        MpcParameter::Aoa => dists.aoa.ln_pdf(value),
        MpcParameter::Eoa => dists.eoa.ln_pdf(value),
        MpcParameter::Phase => phase_ln_pdf(value),
    }
}

pub fn cdf(dists: &ConditionedDists, value: f64, which: MpcParameter) -> f64 {
    match which {
        MpcParameter::Power => dists.power.cdf(value),
        MpcParameter::Delay => dists.delay.cdf(value),
        MpcParameter::Aoa => dists.aoa.cdf(value),
        MpcParameter::Eoa => dists.eoa.cdf(value),
        MpcParameter::Phase => phase_cdf(value),
    }
}
