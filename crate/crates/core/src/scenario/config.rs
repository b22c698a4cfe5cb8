//! Scenario file loading and validation.
//!
//! The scenario file is a JSON document:
//!
//! ```json
//! {
//!   "routes": [{"name": "main", "centerline": [[0,0],[600,0]], "half_width_m": 10}],
//!   "canyons": [{"road": 0, "side": "left", "width_m": 15, "extent_m": [20, 60]}],
//!   "tx": {"waypoints": [[0,0]], "speed_mps": 0},
//!   "rx": {"waypoints": [[20,0],[600,0]], "speed_mps": 8.33},
//!   "snapshot_rate_hz": 45,
//!   "seed": 1,
//!   "rf": {"fc_hz": 5.8e9, "bw_hz": 3.0e7}
//! }
//! ```
//!
//! Optional keys: `n_snapshots`, `duration_s`, `tx_power_dbm`, `array`
//! (`rows`, `cols`, `spacing_wavelengths`) and `visibility` (`margin_m`,
//! `turn_rate_deg_s`, `turn_window_s`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CanyonProfile, CanyonSegment, RoutePoint, Side};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Polyline};
use crate::synthesis::ArrayGeometry;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub centerline: Vec<Point2>,
    pub half_width_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanyonSpec {
    #[serde(default)]
    pub road: usize,
    pub side: Side,
    pub width_m: f64,
    pub extent_m: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoverSpec {
    pub waypoints: Vec<Point2>,
    #[serde(default)]
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfSpec {
    pub fc_hz: f64,
    pub bw_hz: f64,
}

impl Default for RfSpec {
    fn default() -> Self {
        RfSpec {
            fc_hz: 5.8e9,
            bw_hz: 30e6,
        }
    }
}

impl RfSpec {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.fc_hz
    }

    /// Delay resolution, 1/B.
    pub fn delay_bin_s(&self) -> f64 {
        1.0 / self.bw_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilitySettings {
    /// Distance beyond a segment's extent over which it still contributes.
    pub margin_m: f64,
    /// Heading rate above which the RX is considered to be turning.
    pub turn_rate_deg_s: f64,
    /// Time window over which the heading rate is measured.
    pub turn_window_s: f64,
}

impl Default for VisibilitySettings {
    fn default() -> Self {
        VisibilitySettings {
            margin_m: 30.0,
            turn_rate_deg_s: 5.0,
            turn_window_s: 1.0,
        }
    }
}

/// On-disk scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub routes: Vec<RoadSpec>,
    #[serde(default)]
    pub canyons: Vec<CanyonSpec>,
    pub tx: MoverSpec,
    pub rx: MoverSpec,
    pub snapshot_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_snapshots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rf: RfSpec,
    #[serde(default)]
    pub array: ArrayGeometry,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default)]
    pub visibility: VisibilitySettings,
}

fn default_tx_power() -> f64 {
    45.0
}

/// A road: centerline plus drivable corridor and the canyon widths along it.
#[derive(Debug, Clone)]
pub struct Road {
    pub name: String,
    pub half_width_m: f64,
    pub profile: CanyonProfile,
}

impl Road {
    pub fn centerline(&self) -> &Polyline {
        &self.profile.route
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.centerline().project(p).distance <= self.half_width_m + 1e-9
    }
}

/// Piecewise-linear motion at constant speed along a waypoint polyline,
/// clamped at the final waypoint.
#[derive(Debug, Clone)]
pub struct Trajectory {
    path: Option<Polyline>,
    anchor: Point2,
    speed_mps: f64,
}

impl Trajectory {
    pub fn new(waypoints: &[Point2], speed_mps: f64) -> Option<Self> {
        let anchor = *waypoints.first()?;
        Some(Trajectory {
            path: Polyline::new(waypoints),
            anchor,
            speed_mps,
        })
    }

    pub fn length(&self) -> f64 {
        self.path.as_ref().map_or(0.0, Polyline::length)
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_mps
    }

    pub fn at(&self, time_s: f64) -> RoutePoint {
        match &self.path {
            None => RoutePoint {
                position: self.anchor,
                heading: 0.0,
                arclength: 0.0,
            },
            Some(pl) => {
                let s = (self.speed_mps * time_s).clamp(0.0, pl.length());
                RoutePoint {
                    position: pl.point_at(s),
                    heading: pl.heading_at(s),
                    arclength: s,
                }
            }
        }
    }

    pub fn transformed(&self, f: impl Fn(Point2) -> Point2) -> Trajectory {
        Trajectory {
            path: self
                .path
                .as_ref()
                .and_then(|p| Polyline::new(&p.points().iter().map(|&q| f(q)).collect::<Vec<_>>())),
            anchor: f(self.anchor),
            speed_mps: self.speed_mps,
        }
    }
}

/// TX and RX state at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub time_s: f64,
    pub tx: RoutePoint,
    pub rx: RoutePoint,
}

/// Validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub roads: Vec<Road>,
    pub tx: Trajectory,
    pub rx: Trajectory,
    pub snapshot_rate_hz: f64,
    pub n_snapshots: usize,
    pub seed: u64,
    pub rf: RfSpec,
    pub array: ArrayGeometry,
    pub tx_power_dbm: f64,
    pub visibility: VisibilitySettings,
}

fn finite_point(field: &str, p: Point2) -> Result<()> {
    if p.x.is_finite() && p.y.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "coordinates must be finite"))
    }
}

impl ScenarioConfig {
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

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<scenario>".into(),
            reason: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        if file.routes.is_empty() {
            return Err(Error::invalid("routes", "at least one road is required"));
        }
        let mut segments: Vec<Vec<CanyonSegment>> = vec![Vec::new(); file.routes.len()];
        for (i, c) in file.canyons.iter().enumerate() {
            let field = format!("canyons[{i}]");
            let list = segments
                .get_mut(c.road)
                .ok_or_else(|| Error::invalid(format!("{field}.road"), "no such road"))?;
            let seg = CanyonSegment::new(c.side, c.width_m, c.extent_m[0], c.extent_m[1])
                .map_err(|e| prefix_field(e, &field))?;
            list.push(seg);
        }
        let mut roads = Vec::with_capacity(file.routes.len());
        for (i, (r, segs)) in file.routes.iter().zip(segments).enumerate() {
            let field = format!("routes[{i}]");
            for (j, p) in r.centerline.iter().enumerate() {
                finite_point(&format!("{field}.centerline[{j}]"), *p)?;
            }
            let line = Polyline::new(&r.centerline).ok_or_else(|| {
                Error::invalid(format!("{field}.centerline"), "needs two distinct points")
            })?;
            if !(r.half_width_m > 0.0) {
                return Err(Error::invalid(format!("{field}.half_width_m"), "must be > 0"));
            }
            let profile = CanyonProfile::new(line, segs).map_err(|e| prefix_field(e, "canyons"))?;
            roads.push(Road {
                name: r.name.clone().unwrap_or_else(|| format!("road{i}")),
                half_width_m: r.half_width_m,
                profile,
            });
        }
        let mover = |name: &str, m: &MoverSpec| -> Result<Trajectory> {
            for (j, p) in m.waypoints.iter().enumerate() {
                finite_point(&format!("{name}.waypoints[{j}]"), *p)?;
            }
            if !(m.speed_mps >= 0.0 && m.speed_mps.is_finite()) {
                return Err(Error::invalid(format!("{name}.speed_mps"), "must be finite and >= 0"));
            }
            Trajectory::new(&m.waypoints, m.speed_mps)
                .ok_or_else(|| Error::invalid(format!("{name}.waypoints"), "at least one waypoint required"))
        };
        let tx = mover("tx", &file.tx)?;
        let rx = mover("rx", &file.rx)?;
        if !(file.snapshot_rate_hz > 0.0 && file.snapshot_rate_hz.is_finite()) {
            return Err(Error::invalid("snapshot_rate_hz", "must be > 0"));
        }
        if !(file.rf.fc_hz > 0.0) {
            return Err(Error::invalid("rf.fc_hz", "must be > 0"));
        }
        if !(file.rf.bw_hz > 0.0) {
            return Err(Error::invalid("rf.bw_hz", "must be > 0"));
        }
        file.array.validate().map_err(|e| prefix_field(e, "array"))?;
        let v = file.visibility;
        if !(v.margin_m >= 0.0) {
            return Err(Error::invalid("visibility.margin_m", "must be >= 0"));
        }
        if !(v.turn_rate_deg_s > 0.0) {
            return Err(Error::invalid("visibility.turn_rate_deg_s", "must be > 0"));
        }
        if !(v.turn_window_s > 0.0) {
            return Err(Error::invalid("visibility.turn_window_s", "must be > 0"));
        }
        let n_snapshots = match (file.n_snapshots, file.duration_s) {
            (Some(n), _) => n,
            (None, Some(d)) if d > 0.0 => (d * file.snapshot_rate_hz).ceil() as usize,
            (None, Some(_)) => return Err(Error::invalid("duration_s", "must be > 0")),
            (None, None) => {
                if rx.speed_mps() > 0.0 && rx.length() > 0.0 {
                    (rx.length() / rx.speed_mps() * file.snapshot_rate_hz).floor() as usize + 1
                } else {
                    return Err(Error::invalid(
                        "n_snapshots",
                        "required when the RX does not move",
                    ));
                }
            }
        };
        if n_snapshots == 0 {
            return Err(Error::invalid("n_snapshots", "must be > 0"));
        }
        Ok(ScenarioConfig {
            roads,
            tx,
            rx,
            snapshot_rate_hz: file.snapshot_rate_hz,
            n_snapshots,
            seed: file.seed,
            rf: file.rf,
            array: file.array,
            tx_power_dbm: file.tx_power_dbm,
            visibility: v,
        })
    }

    pub fn frame(&self, index: usize) -> Frame {
        let time_s = index as f64 / self.snapshot_rate_hz;
        Frame {
            index,
            time_s,
            tx: self.tx.at(time_s),
            rx: self.rx.at(time_s),
        }
    }

    pub fn frames(&self) -> Vec<Frame> {
        (0..self.n_snapshots).map(|i| self.frame(i)).collect()
    }

    pub fn profiles(&self) -> Vec<CanyonProfile> {
        self.roads.iter().map(|r| r.profile.clone()).collect()
    }

    /// Index of the road whose centerline is nearest to `p`.
    pub fn nearest_road(&self, p: Point2) -> usize {
        self.nearest_road_excluding(p, None).unwrap_or(0)
    }

    pub fn nearest_road_excluding(&self, p: Point2, skip: Option<usize>) -> Option<usize> {
        self.roads
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(i, r)| (i, r.centerline().project(p).distance))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn on_any_road(&self, p: Point2) -> bool {
        self.roads.iter().any(|r| r.contains(p))
    }

    /// Applies a rigid motion to every coordinate in the scene.
    pub fn transformed(&self, f: impl Fn(Point2) -> Point2 + Copy) -> ScenarioConfig {
        let mut out = self.clone();
        for road in &mut out.roads {
            let pts: Vec<Point2> = road.centerline().points().iter().map(|&p| f(p)).collect();
            road.profile.route = Polyline::new(&pts).expect("rigid motion preserves the polyline");
        }
        out.tx = self.tx.transformed(f);
        out.rx = self.rx.transformed(f);
        out
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Invalid { field, reason } => Error::invalid(
            if field.is_empty() {
                prefix.to_string()
            } else {
                format!("{prefix}.{field}")
            },
            reason,
        ),
        other => other,
    }
}
