//! CSV schemas shared by the command-line tools.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Side;
use crate::synthesis::Mpc;

/// `snapshot, power_db, delay_s, aoa_deg, eoa_deg, phase_rad`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcRecord {
    pub snapshot: usize,
    pub power_db: f64,
    pub delay_s: f64,
    pub aoa_deg: f64,
    pub eoa_deg: f64,
    pub phase_rad: f64,
}

impl MpcRecord {
    pub fn from_mpc(snapshot: usize, m: &Mpc) -> Self {
        MpcRecord {
            snapshot,
            power_db: m.power_db,
            delay_s: m.delay_s,
            aoa_deg: m.aoa_deg,
            eoa_deg: m.eoa_deg,
            phase_rad: m.phase_rad,
        }
    }

    pub fn to_mpc(&self) -> Mpc {
        Mpc {
            power_db: self.power_db,
            delay_s: self.delay_s,
            aoa_deg: self.aoa_deg,
            eoa_deg: self.eoa_deg,
            phase_rad: self.phase_rad,
            cluster_id: None,
            is_direct: false,
        }
    }
}

/// MPC log row plus its width assignment; unassigned rows leave the last
/// three columns empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignedRecord {
    pub snapshot: usize,
    pub power_db: f64,
    pub delay_s: f64,
    pub aoa_deg: f64,
    pub eoa_deg: f64,
    pub phase_rad: f64,
    pub side: Option<Side>,
    pub width_m: Option<f64>,
    pub residual_s: Option<f64>,
}

impl AssignedRecord {
    pub fn new(r: &MpcRecord, label: Option<(Side, f64)>, residual_s: Option<f64>) -> Self {
        AssignedRecord {
            snapshot: r.snapshot,
            power_db: r.power_db,
            delay_s: r.delay_s,
            aoa_deg: r.aoa_deg,
            eoa_deg: r.eoa_deg,
            phase_rad: r.phase_rad,
            side: label.map(|l| l.0),
            width_m: label.map(|l| l.1),
            residual_s,
        }
    }

    pub fn record(&self) -> MpcRecord {
        MpcRecord {
            snapshot: self.snapshot,
            power_db: self.power_db,
            delay_s: self.delay_s,
            aoa_deg: self.aoa_deg,
            eoa_deg: self.eoa_deg,
            phase_rad: self.phase_rad,
        }
    }

    pub fn label(&self) -> Option<(Side, f64)> {
        Some((self.side?, self.width_m?))
    }
}

/// `l_m, d_m, side`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererRecord {
    pub l_m: f64,
    pub d_m: f64,
    pub side: Side,
}

/// `snapshot, cluster_id, path_id, state, side, width_m`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRecord {
    pub snapshot: usize,
    pub cluster_id: usize,
    pub path_id: usize,
    pub state: u8,
    pub side: Side,
    pub width_m: f64,
}

/// Rows read from a CSV file plus the number of malformed rows skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    pub skipped: usize,
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Loaded<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file).map_err(|e| match e {
        Error::Parse { reason, .. } => Error::Parse {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn read_csv_from<T: DeserializeOwned, R: std::io::Read>(input: R) -> Result<Loaded<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    r.headers().map_err(|e| Error::Parse {
        path: "<csv>".into(),
        reason: e.to_string(),
    })?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for rec in r.deserialize() {
        match rec {
            Ok(v) => rows.push(v),
            Err(_) => skipped += 1,
        }
    }
    Ok(Loaded { rows, skipped })
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(BufWriter::new(file), rows).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Writes rows with a header line taken from `T`'s field names.
pub fn write_csv_to<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Writes a header-only file when `rows` is empty.
pub fn write_csv_with_header<T: Serialize>(path: impl AsRef<Path>, header: &[&str], rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        let path = path.as_ref();
        let mut text = header.join(",");
        text.push('\n');
        return std::fs::write(path, text).map_err(|e| Error::io(path, e));
    }
    write_csv(path, rows)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    }
}

/// Groups rows by snapshot, keeping file order within a snapshot.
pub fn group_by_snapshot<T: Copy>(rows: &[T], snapshot: impl Fn(&T) -> usize) -> BTreeMap<usize, Vec<T>> {
    let mut out: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for r in rows {
        out.entry(snapshot(r)).or_default().push(*r);
    }
    out
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
