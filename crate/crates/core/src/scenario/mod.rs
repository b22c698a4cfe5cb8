//! Environment geometry: roads, canyon widths, trajectories, visibility
//! regions and the effective width set at each snapshot.

mod config;
mod footprints;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{
    CanyonSpec, Frame, MoverSpec, RfSpec, Road, RoadSpec, ScenarioConfig, ScenarioFile, Trajectory,
    VisibilitySettings, SPEED_OF_LIGHT,
};
pub use footprints::{parse_footprints, widths_from_footprints};

use crate::error::{Error, Result};
use crate::geometry::{line_intersection, segment_intersection, wrap_deg, Point2, Polyline};

/// Side of the road relative to the direction of propagation along it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[serde(alias = "Left", alias = "l", alias = "L")]
    Left,
    #[serde(alias = "Right", alias = "r", alias = "R")]
    Right,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    /// Side implied by an array-frame azimuth: the left quadrant is [0, 90).
    pub fn from_aoa_deg(aoa_deg: f64) -> Side {
        if aoa_deg < 90.0 {
            Side::Left
        } else {
            Side::Right
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Side> {
        match s.trim() {
            "left" | "Left" | "l" | "L" => Ok(Side::Left),
            "right" | "Right" | "r" | "R" => Ok(Side::Right),
            other => Err(Error::invalid("side", format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub position: Point2,
    /// Direction of travel, degrees in [0, 360).
    pub heading: f64,
    /// Distance travelled from the route start.
    pub arclength: f64,
}

/// One facade run: a one-sided canyon width over a stretch of road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanyonSegment {
    pub side: Side,
    pub width: f64,
    pub extent: (f64, f64),
}

impl CanyonSegment {
    pub fn new(side: Side, width: f64, start: f64, end: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("width_m", "must be finite and > 0"));
        }
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::invalid("extent_m", "requires start < end"));
        }
        Ok(CanyonSegment {
            side,
            width,
            extent: (start, end),
        })
    }

    /// Closed-interval overlap with `[lo, hi]`.
    pub fn overlaps(&self, lo: f64, hi: f64) -> bool {
        self.extent.0 <= hi && lo <= self.extent.1
    }
}

/// Canyon segments along one road centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct CanyonProfile {
    pub route: Polyline,
    pub segments: Vec<CanyonSegment>,
}

impl CanyonProfile {
    /// Sorts segments by start per side and rejects same-side overlaps.
    pub fn new(route: Polyline, mut segments: Vec<CanyonSegment>) -> Result<Self> {
        segments.sort_by(|a, b| {
            a.side
                .cmp(&b.side)
                .then(a.extent.0.total_cmp(&b.extent.0))
        });
        for (i, w) in segments.windows(2).enumerate() {
            if w[0].side == w[1].side && w[1].extent.0 < w[0].extent.1 {
                return Err(Error::invalid(
                    format!("segments[{}]", i + 1),
                    format!(
                        "{} extent [{}, {}] overlaps [{}, {}]",
                        w[1].side, w[1].extent.0, w[1].extent.1, w[0].extent.0, w[0].extent.1
                    ),
                ));
            }
        }
        Ok(CanyonProfile { route, segments })
    }

    pub fn route_points(&self) -> Vec<RoutePoint> {
        let line = &self.route;
        let mut s = 0.0;
        let mut out = Vec::with_capacity(line.points().len());
        for (i, &p) in line.points().iter().enumerate() {
            if i > 0 {
                s += line.points()[i - 1].distance(p);
            }
            out.push(RoutePoint {
                position: p,
                heading: line.heading_at(s),
                arclength: s,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    LosSameRoad,
    Turn,
    LosAfterTurn,
    Nlos,
}

impl Region {
    pub fn is_los(self) -> bool {
        !matches!(self, Region::Nlos)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::LosSameRoad => "LosSameRoad",
            Region::Turn => "Turn",
            Region::LosAfterTurn => "LosAfterTurn",
            Region::Nlos => "Nlos",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Region> {
        match s.trim() {
            "LosSameRoad" => Ok(Region::LosSameRoad),
            "Turn" => Ok(Region::Turn),
            "LosAfterTurn" => Ok(Region::LosAfterTurn),
            "Nlos" => Ok(Region::Nlos),
            other => Err(Error::invalid("region", format!("unknown region {other:?}"))),
        }
    }
}

/// Per-snapshot visibility labels and the positions they were derived from.
#[derive(Debug, Clone)]
pub struct VisibilityTimeline {
    pub regions: Vec<Region>,
    pub frames: Vec<Frame>,
    /// Present iff any snapshot is `Nlos`.
    pub breakpoint: Option<Point2>,
    pub tx_road: usize,
    /// Road carrying the RX after the line of sight is lost.
    pub nlos_road: Option<usize>,
}

impl VisibilityTimeline {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn first_nlos(&self) -> Option<usize> {
        self.regions.iter().position(|r| *r == Region::Nlos)
    }
}

const LOS_SAMPLE_STEP_M: f64 = 0.25;

/// True when every point of the TX-RX segment lies inside some road corridor.
pub fn line_of_sight(config: &ScenarioConfig, tx: Point2, rx: Point2) -> bool {
    let len = tx.distance(rx);
    let n = (len / LOS_SAMPLE_STEP_M).ceil().max(1.0) as usize;
    (0..=n).all(|i| config.on_any_road(tx + (rx - tx) * (i as f64 / n as f64)))
}

/// Labels every snapshot as same-road LOS, turning, LOS after the turn or
/// NLOS, and locates the breakpoint (virtual TX) when the RX leaves the TX
/// road's line of sight.
pub fn classify_visibility(config: &ScenarioConfig) -> Result<VisibilityTimeline> {
    let frames = config.frames();
    if !frames.iter().any(|f| config.on_any_road(f.tx.position)) {
        return Err(Error::invalid("tx.waypoints", "trajectory never enters the scene"));
    }
    if !frames.iter().any(|f| config.on_any_road(f.rx.position)) {
        return Err(Error::invalid("rx.waypoints", "trajectory never enters the scene"));
    }
    let tx_road = config.nearest_road(frames[0].tx.position);
    let n = frames.len();

    let first_nlos = frames
        .iter()
        .position(|f| !line_of_sight(config, f.tx.position, f.rx.position));
    let los_end = first_nlos.unwrap_or(n);

    let half_window = ((config.visibility.turn_window_s * config.snapshot_rate_hz) / 2.0)
        .round()
        .max(1.0) as usize;
    let dt = 1.0 / config.snapshot_rate_hz;
    let turning = |t: usize| -> bool {
        let a = t.saturating_sub(half_window);
        let b = (t + half_window).min(n - 1);
        if b == a {
            return false;
        }
        let dh = crate::geometry::angle_diff_deg(frames[b].rx.heading, frames[a].rx.heading).abs();
        dh / ((b - a) as f64 * dt) > config.visibility.turn_rate_deg_s
    };
    let turn_snapshots: Vec<usize> = (0..los_end).filter(|&t| turning(t)).collect();

    let mut regions = vec![Region::LosSameRoad; n];
    if let (Some(&a), Some(&b)) = (turn_snapshots.first(), turn_snapshots.last()) {
        for (t, r) in regions.iter_mut().enumerate().take(los_end) {
            *r = if t < a {
                Region::LosSameRoad
            } else if t <= b {
                Region::Turn
            } else {
                Region::LosAfterTurn
            };
        }
    }
    let mut breakpoint = None;
    let mut nlos_road = None;
    if let Some(t0) = first_nlos {
        for r in &mut regions[t0..] {
            *r = Region::Nlos;
        }
        let rx = frames[t0].rx.position;
        let road = config.nearest_road(rx);
        if road == tx_road {
            return Err(Error::invalid(
                "rx.waypoints",
                format!("line of sight lost at snapshot {t0} while the RX is still on the TX road"),
            ));
        }
        breakpoint = Some(centerline_crossing(
            config.roads[tx_road].centerline(),
            config.roads[road].centerline(),
            rx,
        )?);
        nlos_road = Some(road);
    }
    Ok(VisibilityTimeline {
        regions,
        frames,
        breakpoint,
        tx_road,
        nlos_road,
    })
}

fn nearest_segment(line: &Polyline, p: Point2) -> (Point2, Point2) {
    line.points()
        .windows(2)
        .map(|w| (w[0], w[1]))
        .min_by(|a, b| {
            let da = Polyline::new(&[a.0, a.1]).unwrap().project(p).distance;
            let db = Polyline::new(&[b.0, b.1]).unwrap().project(p).distance;
            da.total_cmp(&db)
        })
        .unwrap()
}

/// Crossing of two road centerlines nearest to `near`; falls back to the
/// intersection of the extended nearest segments.
fn centerline_crossing(a: &Polyline, b: &Polyline, near: Point2) -> Result<Point2> {
    let mut best: Option<Point2> = None;
    for wa in a.points().windows(2) {
        for wb in b.points().windows(2) {
            if let Some((p, _)) = segment_intersection(wa[0], wa[1], wb[0], wb[1]) {
                if best.is_none_or(|q| p.distance(near) < q.distance(near)) {
                    best = Some(p);
                }
            }
        }
    }
    if let Some(p) = best {
        return Ok(p);
    }
    let (a0, a1) = nearest_segment(a, near);
    let (b0, b1) = nearest_segment(b, near);
    line_intersection(a0, a1, b0, b1)
        .ok_or_else(|| Error::invalid("routes", "TX and RX roads are parallel; no breakpoint"))
}

/// Effective width set D(t): the (side, width) pairs of segments lying
/// between the link endpoints along the governing road, widened by
/// `margin_m` on both ends. Empty while turning.
pub fn effective_widths(
    profiles: &[CanyonProfile],
    timeline: &VisibilityTimeline,
    t: usize,
    margin_m: f64,
) -> Vec<(Side, f64)> {
    let frame = &timeline.frames[t];
    let (road, from) = match timeline.regions[t] {
        Region::Turn => return Vec::new(),
        Region::LosSameRoad | Region::LosAfterTurn => (timeline.tx_road, frame.tx.position),
        Region::Nlos => match (timeline.nlos_road, timeline.breakpoint) {
            (Some(r), Some(bp)) => (r, bp),
            _ => return Vec::new(),
        },
    };
    let Some(profile) = profiles.get(road) else {
        return Vec::new();
    };
    let s_from = profile.route.project(from).arclength;
    let s_rx = profile.route.project(frame.rx.position).arclength;
    let flip = s_rx < s_from;
    let (lo, hi) = if flip { (s_rx, s_from) } else { (s_from, s_rx) };
    let mut out: Vec<(Side, f64)> = profile
        .segments
        .iter()
        .filter(|s| s.overlaps(lo - margin_m, hi + margin_m))
        .map(|s| (if flip { s.side.flipped() } else { s.side }, s.width))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out.dedup();
    out
}

/// Azimuth of arrival in the RX array frame, [0, 180].
///
/// The array boresight points opposite to the direction of travel, so a wave
/// arriving from directly behind maps to 90 degrees, one from the left of the
/// vehicle to 0 and one from the right to 180. Front and back are folded.
pub fn array_frame_angle(global_bearing_deg: f64, rx_heading_deg: f64) -> f64 {
    let r = wrap_deg(global_bearing_deg - rx_heading_deg - 90.0);
    if r > 180.0 {
        360.0 - r
    } else {
        r
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn straight_scenario(rx_start: f64, rx_end: f64) -> ScenarioConfig {
        ScenarioConfig::from_json(&format!(
            r#"{{
            "routes": [{{"centerline": [[-100,0],[1000,0]], "half_width_m": 10}}],
            "canyons": [
                {{"side": "left", "width_m": 15, "extent_m": [120, 160]}},
                {{"side": "right", "width_m": 25, "extent_m": [190, 220]}},
                {{"side": "left", "width_m": 40, "extent_m": [600, 700]}}
            ],
            "tx": {{"waypoints": [[0,0]]}},
            "rx": {{"waypoints": [[{rx_start},0],[{rx_end},0]], "speed_mps": 10}},
            "snapshot_rate_hz": 2,
            "seed": 1
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_road_is_all_same_road_los() {
        let cfg = straight_scenario(20.0, 500.0);
        let tl = classify_visibility(&cfg).unwrap();
        assert!(tl.regions.iter().all(|r| *r == Region::LosSameRoad));
        assert!(tl.breakpoint.is_none());
    }

    #[test]
    fn turn_onto_perpendicular_road() {
        let cfg = case3_scenario();
        let tl = classify_visibility(&cfg).unwrap();
        let mut phases: Vec<Region> = tl.regions.clone();
        phases.dedup();
        assert_eq!(
            phases,
            vec![Region::LosSameRoad, Region::Turn, Region::LosAfterTurn, Region::Nlos]
        );
        let bp = tl.breakpoint.unwrap();
        assert!((bp.x - 100.0).abs() < 1e-9 && bp.y.abs() < 1e-9);
        assert_eq!(tl.nlos_road, Some(1));
    }

    #[test]
    fn rx_beyond_intersection_is_nlos_throughout() {
        let cfg = ScenarioConfig::from_json(
            r#"{
            "routes": [
                {"centerline": [[-50,0],[200,0]], "half_width_m": 8},
                {"centerline": [[100,50],[100,-300]], "half_width_m": 8}
            ],
            "tx": {"waypoints": [[0,0]]},
            "rx": {"waypoints": [[100,-40],[100,-250]], "speed_mps": 8},
            "snapshot_rate_hz": 5,
            "seed": 1
        }"#,
        )
        .unwrap();
        let tl = classify_visibility(&cfg).unwrap();
        assert!(tl.regions.iter().all(|r| *r == Region::Nlos));
        assert!(tl.breakpoint.is_some());
    }

    #[test]
    fn off_scene_trajectory_is_rejected() {
        let cfg = ScenarioConfig::from_json(
            r#"{
            "routes": [{"centerline": [[0,0],[100,0]], "half_width_m": 5}],
            "tx": {"waypoints": [[0,0]]},
            "rx": {"waypoints": [[0,500],[100,500]], "speed_mps": 10},
            "snapshot_rate_hz": 1,
            "seed": 1
        }"#,
        )
        .unwrap();
        let err = classify_visibility(&cfg).unwrap_err();
        assert!(err.to_string().contains("rx.waypoints"));
    }

    #[test]
    fn effective_widths_interval_rule() {
        // Extents are arclengths from the route start at x = -100, so the TX
        // sits at s = 100. RX reaches x = 50 (s = 150) at t = 3 s.
        let cfg = straight_scenario(20.0, 500.0);
        let tl = classify_visibility(&cfg).unwrap();
        let profiles = cfg.profiles();
        let t = 6;
        assert!((tl.frames[t].rx.position.x - 50.0).abs() < 1e-9);
        assert_eq!(effective_widths(&profiles, &tl, t, 0.0), vec![(Side::Left, 15.0)]);
        assert_eq!(
            effective_widths(&profiles, &tl, t, 45.0),
            vec![(Side::Left, 15.0), (Side::Right, 25.0)]
        );
        assert_eq!(
            effective_widths(&profiles, &tl, t, 500.0),
            vec![(Side::Left, 15.0), (Side::Left, 40.0), (Side::Right, 25.0)]
        );
    }

    #[test]
    fn effective_widths_containment_example() {
        let route = Polyline::new(&[Point2::new(0.0, 0.0), Point2::new(200.0, 0.0)]).unwrap();
        let profile =
            CanyonProfile::new(route, vec![CanyonSegment::new(Side::Left, 15.0, 20.0, 60.0).unwrap()])
                .unwrap();
        let tl = fixed_timeline(Region::LosSameRoad, 0.0, 100.0);
        assert_eq!(effective_widths(&[profile.clone()], &tl, 0, 0.0), vec![(Side::Left, 15.0)]);
        let tl = fixed_timeline(Region::Turn, 0.0, 100.0);
        assert!(effective_widths(&[profile], &tl, 0, 30.0).is_empty());
    }

    #[test]
    fn margin_reaches_beyond_rx() {
        let route = Polyline::new(&[Point2::new(0.0, 0.0), Point2::new(200.0, 0.0)]).unwrap();
        let profile =
            CanyonProfile::new(route, vec![CanyonSegment::new(Side::Right, 8.0, 90.0, 120.0).unwrap()])
                .unwrap();
        let tl = fixed_timeline(Region::LosSameRoad, 0.0, 100.0);
        assert_eq!(effective_widths(&[profile], &tl, 0, 30.0), vec![(Side::Right, 8.0)]);
    }

    #[test]
    fn reversed_link_flips_sides() {
        let route = Polyline::new(&[Point2::new(0.0, 0.0), Point2::new(200.0, 0.0)]).unwrap();
        let profile =
            CanyonProfile::new(route, vec![CanyonSegment::new(Side::Left, 12.0, 40.0, 60.0).unwrap()])
                .unwrap();
        let tl = fixed_timeline(Region::LosSameRoad, 100.0, 0.0);
        assert_eq!(effective_widths(&[profile], &tl, 0, 0.0), vec![(Side::Right, 12.0)]);
    }

    #[test]
    fn profile_rejects_same_side_overlap() {
        let route = Polyline::new(&[Point2::new(0.0, 0.0), Point2::new(200.0, 0.0)]).unwrap();
        let segs = vec![
            CanyonSegment::new(Side::Left, 10.0, 0.0, 50.0).unwrap(),
            CanyonSegment::new(Side::Left, 20.0, 40.0, 80.0).unwrap(),
        ];
        assert!(CanyonProfile::new(route.clone(), segs).is_err());
        let segs = vec![
            CanyonSegment::new(Side::Left, 10.0, 0.0, 50.0).unwrap(),
            CanyonSegment::new(Side::Right, 20.0, 40.0, 80.0).unwrap(),
        ];
        assert!(CanyonProfile::new(route, segs).is_ok());
        assert!(CanyonSegment::new(Side::Left, 0.0, 0.0, 1.0).is_err());
        assert!(CanyonSegment::new(Side::Left, 1.0, 5.0, 5.0).is_err());
    }

    #[test]
    fn array_angle_examples() {
        assert!((array_frame_angle(180.0, 0.0) - 90.0).abs() < 1e-12);
        assert!((array_frame_angle(37.0 + 180.0, 37.0) - 90.0).abs() < 1e-12);
        // Heading rotated by 45 degrees shifts the direct path by 45.
        assert!((array_frame_angle(180.0, -45.0) - 135.0).abs() < 1e-12);
        assert!((array_frame_angle(180.0, 45.0) - 45.0).abs() < 1e-12);
        assert!((array_frame_angle(90.0, 0.0)).abs() < 1e-12);
        assert!((array_frame_angle(270.0, 0.0) - 180.0).abs() < 1e-12);
    }

    #[test]
    fn case3_direct_aoa_peaks_at_turn_completion() {
        let cfg = case3_scenario();
        let tl = classify_visibility(&cfg).unwrap();
        let aoa: Vec<f64> = tl
            .frames
            .iter()
            .map(|f| array_frame_angle((f.tx.position - f.rx.position).bearing_deg(), f.rx.heading))
            .collect();
        let los_end = tl.first_nlos().unwrap();
        let peak = (0..los_end).max_by(|&a, &b| aoa[a].total_cmp(&aoa[b])).unwrap();
        let turn_end = tl.regions.iter().rposition(|r| *r == Region::Turn).unwrap();
        let turn_start = tl.regions.iter().position(|r| *r == Region::Turn).unwrap();
        assert!(peak.abs_diff(turn_end) <= 6, "peak {peak} turn end {turn_end}");
        assert!(aoa[turn_start] < aoa[peak]);
        assert!(aoa[los_end - 1] < aoa[peak]);
    }
}
