use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::MarkovMatrix;
use crate::scenario::Side;

/// Relative power: Laplace with location `alpha_beta * d + beta0_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// dB/m
    pub alpha_beta: f64,
    /// dB
    pub beta0_beta: f64,
    /// dB
    pub b_beta: f64,
}

/// Relative delay: exponential with mean `alpha_tau * d + beta0_tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// s/m
    pub alpha_tau: f64,
    /// s
    pub beta0_tau: f64,
}

/// Single-sided Laplace azimuth with mode `alpha * d + beta0` (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaParams {
    pub alpha: f64,
    pub beta0: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EoaParams {
    pub u_phi: f64,
    pub b_phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovParams {
    pub left: MarkovMatrix,
    pub right: MarkovMatrix,
}

impl MarkovParams {
    pub fn for_side(&self, side: Side) -> &MarkovMatrix {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Log-distance model `P_ref - 10 gamma log10(d / d_ref) + X`, X ~ N(0, sigma^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleParams {
    pub gamma: f64,
    #[serde(rename = "P_ref")]
    pub p_ref: f64,
    pub d_ref: f64,
    pub sigma_shadow: f64,
}

fn default_width_range() -> [f64; 2] {
    [5.0, 60.0]
}

/// Complete hyperparameter set of the width-conditioned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub power: PowerParams,
    pub delay: DelayParams,
    pub aoa_left: AoaParams,
    pub aoa_right: AoaParams,
    pub eoa: EoaParams,
    pub markov: MarkovParams,
    pub subpath_mean: f64,
    pub largescale_los: LargeScaleParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub largescale_nlos: Option<LargeScaleParams>,
    /// Width range over which the linear maps must stay valid.
    #[serde(default = "default_width_range")]
    pub width_range_m: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

impl LargeScaleParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        finite(&format!("{prefix}.gamma"), self.gamma)?;
        finite(&format!("{prefix}.P_ref"), self.p_ref)?;
        positive(&format!("{prefix}.d_ref"), self.d_ref)?;
        if !(self.sigma_shadow >= 0.0 && self.sigma_shadow.is_finite()) {
            return Err(Error::invalid(format!("{prefix}.sigma_shadow"), "must be >= 0"));
        }
        Ok(())
    }
}

impl ModelParams {
    /// Illustrative, non-normative defaults. Not measured values.
    pub fn illustrative() -> Self {
        ModelParams {
            power: PowerParams {
                alpha_beta: -0.15,
                beta0_beta: -6.0,
                b_beta: 3.0,
            },
            delay: DelayParams {
                alpha_tau: 4e-9,
                beta0_tau: 3e-8,
            },
            aoa_left: AoaParams {
                alpha: -0.6,
                beta0: 85.0,
                b: 8.0,
            },
            aoa_right: AoaParams {
                alpha: 0.6,
                beta0: 95.0,
                b: 8.0,
            },
            eoa: EoaParams {
                u_phi: 90.0,
                b_phi: 3.0,
            },
            markov: MarkovParams {
                left: MarkovMatrix::new(0.7, 0.3, 0.1, 0.9).unwrap(),
                right: MarkovMatrix::new(0.75, 0.25, 0.12, 0.88).unwrap(),
            },
            subpath_mean: 4.0,
            largescale_los: LargeScaleParams {
                gamma: 2.1,
                p_ref: -47.7,
                d_ref: 1.0,
                sigma_shadow: 3.0,
            },
            largescale_nlos: Some(LargeScaleParams {
                gamma: 3.2,
                p_ref: -18.0,
                d_ref: 1.0,
                sigma_shadow: 4.0,
            }),
            width_range_m: default_width_range(),
            notes: vec!["NON-NORMATIVE illustrative defaults; not measured values".into()],
        }
    }

    pub fn aoa(&self, side: Side) -> &AoaParams {
        match side {
            Side::Left => &self.aoa_left,
            Side::Right => &self.aoa_right,
        }
    }

    pub fn validate(&self) -> Result<()> {
        finite("power.alpha_beta", self.power.alpha_beta)?;
        finite("power.beta0_beta", self.power.beta0_beta)?;
        positive("power.b_beta", self.power.b_beta)?;
        finite("delay.alpha_tau", self.delay.alpha_tau)?;
        finite("delay.beta0_tau", self.delay.beta0_tau)?;
        for (name, a) in [("aoa_left", &self.aoa_left), ("aoa_right", &self.aoa_right)] {
            finite(&format!("{name}.alpha"), a.alpha)?;
            finite(&format!("{name}.beta0"), a.beta0)?;
            positive(&format!("{name}.b"), a.b)?;
        }
        finite("eoa.u_phi", self.eoa.u_phi)?;
        positive("eoa.b_phi", self.eoa.b_phi)?;
        self.markov.left.validate("markov.left")?;
        self.markov.right.validate("markov.right")?;
        positive("subpath_mean", self.subpath_mean)?;
        self.largescale_los.validate("largescale_los")?;
        if let Some(n) = &self.largescale_nlos {
            n.validate("largescale_nlos")?;
        }
        let [lo, hi] = self.width_range_m;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("width_range_m", "requires 0 <= lo <= hi"));
        }
        for d in [lo, hi] {
            let mean = self.delay.alpha_tau * d + self.delay.beta0_tau;
            if !(mean > 0.0) {
                return Err(Error::invalid(
                    "delay",
                    format!("mean relative delay {mean} s is not positive at width {d} m"),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: ModelParams = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<params>".into(),
            reason: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
