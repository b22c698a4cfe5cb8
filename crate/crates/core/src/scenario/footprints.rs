//! Canyon profiles derived from building footprints.

use serde_json::Value;

use super::{CanyonProfile, CanyonSegment, Side};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Polyline};

/// Reads the outer rings of a GeoJSON-style `FeatureCollection` of
/// `Polygon` features given in local meters. A bare array of polygons
/// (each a list of `[x, y]`) is accepted as well.
pub fn parse_footprints(text: &str) -> Result<Vec<Vec<Point2>>> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<footprints>".into(),
        reason: e.to_string(),
    })?;
    let ring = |v: &Value, field: &str| -> Result<Vec<Point2>> {
        let pts: Vec<[f64; 2]> = serde_json::from_value(v.clone())
            .map_err(|e| Error::invalid(field, e.to_string()))?;
        Ok(pts.into_iter().map(Point2::from).collect())
    };
    if let Some(list) = value.as_array() {
        return list
            .iter()
            .enumerate()
            .map(|(i, v)| ring(v, &format!("[{i}]")))
            .collect();
    }
    let features = value
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("features", "expected a FeatureCollection"))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let field = format!("features[{i}].geometry");
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::invalid(&field, "missing"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(Error::invalid(format!("{field}.type"), "only Polygon is supported"));
        }
        let outer = geom
            .get("coordinates")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::invalid(format!("{field}.coordinates"), "missing outer ring"))?;
        out.push(ring(outer, &format!("{field}.coordinates[0]"))?);
    }
    Ok(out)
}

/// Turns building footprints beside a road into canyon segments.
///
/// Each building yields the perpendicular distance from the centerline to
/// its nearest vertex and the span of its vertices projected on the
/// centerline. Where buildings on the same side shadow each other along the
/// road, the nearer facade keeps the overlapping stretch.
pub fn widths_from_footprints(buildings: &[Vec<Point2>], route: &Polyline) -> Result<CanyonProfile> {
    let mut facades: Vec<(Side, f64, f64, f64)> = Vec::with_capacity(buildings.len());
    for (i, poly) in buildings.iter().enumerate() {
        if poly.len() < 3 {
            return Err(Error::invalid(format!("buildings[{i}]"), "polygon needs 3 vertices"));
        }
        let proj: Vec<_> = poly.iter().map(|&p| route.project(p)).collect();
        let left = proj.iter().all(|p| p.lateral > 0.0);
        let right = proj.iter().all(|p| p.lateral < 0.0);
        if !left && !right {
            return Err(Error::invalid(
                format!("buildings[{i}]"),
                "footprint straddles the road centerline",
            ));
        }
        let width = proj.iter().map(|p| p.lateral.abs()).fold(f64::INFINITY, f64::min);
        let lo = proj.iter().map(|p| p.arclength).fold(f64::INFINITY, f64::min);
        let hi = proj.iter().map(|p| p.arclength).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            facades.push((if left { Side::Left } else { Side::Right }, width, lo, hi));
        }
    }
    facades.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut segments = Vec::new();
    for side in [Side::Left, Side::Right] {
        let mut covered: Vec<(f64, f64)> = Vec::new();
        for &(_, width, lo, hi) in facades.iter().filter(|f| f.0 == side) {
            for (a, b) in subtract_intervals((lo, hi), &covered) {
                segments.push(CanyonSegment::new(side, width, a, b)?);
            }
            covered.push((lo, hi));
        }
    }
    CanyonProfile::new(route.clone(), segments)
}

/// Parts of `span` not covered by any interval in `covered`.
fn subtract_intervals(span: (f64, f64), covered: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pieces = vec![span];
    for &(c0, c1) in covered {
        pieces = pieces
            .into_iter()
            .flat_map(|(a, b)| {
                let mut v = Vec::with_capacity(2);
                if c0 > a {
                    v.push((a, b.min(c0)));
                }
                if c1 < b {
                    v.push((a.max(c1), b));
                }
                v
            })
            .filter(|(a, b)| b - a > 1e-9)
            .collect();
    }
    pieces
}
