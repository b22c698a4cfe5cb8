//! Snapshot assembly, tapped-delay-line channel impulse responses over a
//! planar array, frequency responses and export formats.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Cluster;
use crate::largescale::{LinkBudget, Stage};
use crate::scenario::{array_frame_angle, Region, VisibilityTimeline, SPEED_OF_LIGHT};

/// Uniform planar array. Columns run along the lateral axis of the array
/// face, rows along the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub spacing_wavelengths: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry {
            rows: 4,
            cols: 8,
            spacing_wavelengths: 0.5,
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("rows/cols", "array needs at least one element"));
        }
        if !(self.spacing_wavelengths > 0.0 && self.spacing_wavelengths.is_finite()) {
            return Err(Error::invalid("spacing_wavelengths", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.rows * self.cols
    }

    /// Element (lateral, vertical) positions in meters, row-major.
    pub fn positions(&self, wavelength: f64) -> Vec<(f64, f64)> {
        let step = self.spacing_wavelengths * wavelength;
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (c as f64 * step, r as f64 * step)))
            .collect()
    }
}

/// Plane-wave response `exp(j k u . r_m)`. The azimuth `aoa_deg` is measured
/// from the lateral axis within the horizontal plane and `eoa_deg` is the
/// co-elevation from zenith, so (90, 90) is broadside.
pub fn steering_vector(array: &ArrayGeometry, aoa_deg: f64, eoa_deg: f64, wavelength: f64) -> Vec<Complex64> {
    let k = 2.0 * PI / wavelength;
    let (theta, phi) = (aoa_deg.to_radians(), eoa_deg.to_radians());
    let ux = phi.sin() * theta.cos();
    let uz = phi.cos();
    array
        .positions(wavelength)
        .into_iter()
        .map(|(x, z)| Complex64::from_polar(1.0, k * (ux * x + uz * z)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mpc {
    /// Absolute received power, dBm.
    pub power_db: f64,
    /// Absolute delay, seconds.
    pub delay_s: f64,
    pub aoa_deg: f64,
    pub eoa_deg: f64,
    pub phase_rad: f64,
    pub cluster_id: Option<usize>,
    pub is_direct: bool,
}

/// Wraps to [-pi, pi).
pub fn wrap_phase(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Direct (or virtual-TX) path of snapshot `t`. In NLOS the wave arrives
/// from the breakpoint and has travelled the unfolded two-stage distance.
pub fn direct_path(
    timeline: &VisibilityTimeline,
    t: usize,
    budget: &LinkBudget,
    tx_power_dbm: f64,
    wavelength: f64,
) -> Result<Mpc> {
    let frame = &timeline.frames[t];
    let rx = frame.rx.position;
    let source = match budget.stage {
        Stage::Los => frame.tx.position,
        Stage::NlosTwoStage => timeline
            .breakpoint
            .ok_or_else(|| Error::Numerical(format!("snapshot {t}: NLOS budget without breakpoint")))?,
    };
    let length = budget.distances.total();
    Ok(Mpc {
        power_db: budget.received_dbm(tx_power_dbm),
        delay_s: length / SPEED_OF_LIGHT,
        aoa_deg: array_frame_angle((source - rx).bearing_deg(), frame.rx.heading),
        eoa_deg: 90.0,
        phase_rad: wrap_phase(-2.0 * PI * length / wavelength),
        cluster_id: None,
        is_direct: true,
    })
}

/// MPC list of snapshot `t`: the direct path followed by every alive
/// subpath, offset from the direct path by its relative power and delay.
/// Turning snapshots carry the direct path only.
pub fn assemble_snapshot(
    clusters: &[Cluster],
    budget: &LinkBudget,
    timeline: &VisibilityTimeline,
    t: usize,
    tx_power_dbm: f64,
    wavelength: f64,
) -> Result<Vec<Mpc>> {
    let direct = direct_path(timeline, t, budget, tx_power_dbm, wavelength)?;
    let mut out = vec![direct];
    if timeline.regions[t] == Region::Turn {
        return Ok(out);
    }
    for c in clusters {
        for s in c.subpaths.iter().filter(|s| s.state.alive) {
            out.push(Mpc {
                power_db: direct.power_db + s.draw.beta_rel_db,
                delay_s: direct.delay_s + s.draw.tau_rel_s,
                aoa_deg: s.draw.aoa_deg,
                eoa_deg: s.draw.eoa_deg,
                phase_rad: s.draw.phase_rad,
                cluster_id: Some(c.id),
                is_direct: false,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tap {
    pub delay_s: f64,
    /// Complex amplitude per array element.
    pub amplitudes: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub snapshot: usize,
    pub taps: Vec<Tap>,
}

impl Cir {
    pub fn n_elements(&self) -> usize {
        self.taps.first().map_or(0, |t| t.amplitudes.len())
    }

    /// Per-element sum of all tap amplitudes.
    pub fn narrowband(&self) -> Vec<Complex64> {
        let mut sum = vec![Complex64::new(0.0, 0.0); self.n_elements()];
        for tap in &self.taps {
            for (s, a) in sum.iter_mut().zip(&tap.amplitudes) {
                *s += a;
            }
        }
        sum
    }

    pub fn energy(&self) -> f64 {
        self.taps
            .iter()
            .flat_map(|t| &t.amplitudes)
            .map(|a| a.norm_sqr())
            .sum()
    }
}

/// One tap per MPC with amplitude `10^(p/20) exp(j psi) a(theta, phi)`.
pub fn cir(snapshot: usize, mpcs: &[Mpc], array: &ArrayGeometry, wavelength: f64) -> Cir {
    let taps = mpcs
        .iter()
        .map(|m| {
            let g = Complex64::from_polar(10f64.powf(m.power_db / 20.0), m.phase_rad);
            Tap {
                delay_s: m.delay_s,
                amplitudes: steering_vector(array, m.aoa_deg, m.eoa_deg, wavelength)
                    .into_iter()
                    .map(|a| a * g)
                    .collect(),
            }
        })
        .collect();
    Cir { snapshot, taps }
}

/// `H_m(f_n) = sum_taps a_m exp(-j 2 pi f_n tau)` on `f_n = n B / N`,
/// indexed `[element][subcarrier]`.
pub fn frequency_response(cir: &Cir, n_points: usize, bandwidth_hz: f64) -> Result<Vec<Vec<Complex64>>> {
    if n_points < 2 {
        return Err(Error::invalid("n_points", "need at least 2 frequency points"));
    }
    let df = bandwidth_hz / n_points as f64;
    let mut h = vec![vec![Complex64::new(0.0, 0.0); n_points]; cir.n_elements()];
    for tap in &cir.taps {
        let rot: Vec<Complex64> = (0..n_points)
            .map(|n| Complex64::from_polar(1.0, -2.0 * PI * n as f64 * df * tap.delay_s))
            .collect();
        for (row, a) in h.iter_mut().zip(&tap.amplitudes) {
            for (hn, r) in row.iter_mut().zip(&rot) {
                *hn += a * r;
            }
        }
    }
    Ok(h)
}

/// Inverse DFT of one element's response; bin `m` corresponds to delay `m / B`.
pub fn delay_profile(response: &[Complex64]) -> Vec<Complex64> {
    let mut buf = response.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    let n = buf.len() as f64;
    buf.iter_mut().for_each(|x| *x /= n);
    buf
}

/// Polar plot rows: AoA on the upper semicircle, EoA on the lower.
pub fn polar_export<W: Write>(mpcs: &[Mpc], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::Io {
        path: "<polar>".into(),
        source: std::io::Error::other(e),
    };
    w.write_record(["semicircle", "angle_deg", "delay_s", "power_db"]).map_err(map)?;
    for m in mpcs {
        for (half, angle) in [("upper", m.aoa_deg), ("lower", m.eoa_deg)] {
            w.write_record([
                half.to_string(),
                angle.to_string(),
                m.delay_s.to_string(),
                m.power_db.to_string(),
            ])
            .map_err(map)?;
        }
    }
    w.flush().map_err(|e| Error::io("<polar>", e))
}

/// Binary record: `snapshot u32, n_taps u32`, then per tap `delay f64`
/// followed by `re f64, im f64` for each element. Little-endian.
pub fn write_cir_binary<W: Write>(cir: &Cir, out: &mut W) -> std::io::Result<()> {
    out.write_all(&(cir.snapshot as u32).to_le_bytes())?;
    out.write_all(&(cir.taps.len() as u32).to_le_bytes())?;
    for tap in &cir.taps {
        out.write_all(&tap.delay_s.to_le_bytes())?;
        for a in &tap.amplitudes {
            out.write_all(&a.re.to_le_bytes())?;
            out.write_all(&a.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads one binary record; `Ok(None)` at a clean end of stream.
pub fn read_cir_binary<R: Read>(input: &mut R, n_elements: usize) -> std::io::Result<Option<Cir>> {
    let mut b4 = [0u8; 4];
    match input.read_exact(&mut b4) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let snapshot = u32::from_le_bytes(b4) as usize;
    input.read_exact(&mut b4)?;
    let n_taps = u32::from_le_bytes(b4) as usize;
    let mut f = || -> std::io::Result<f64> {
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let mut taps = Vec::with_capacity(n_taps);
    for _ in 0..n_taps {
        let delay_s = f()?;
        let amplitudes = (0..n_elements)
            .map(|_| Ok(Complex64::new(f()?, f()?)))
            .collect::<std::io::Result<_>>()?;
        taps.push(Tap { delay_s, amplitudes });
    }
    Ok(Some(Cir { snapshot, taps }))
}

pub const CIR_CSV_HEADER: [&str; 6] = ["snapshot", "tap", "delay_s", "element", "re", "im"];

/// CSV alternative to the binary stream, one row per tap and element.
pub fn write_cir_csv<W: Write>(cir: &Cir, w: &mut csv::Writer<W>) -> csv::Result<()> {
    for (i, tap) in cir.taps.iter().enumerate() {
        for (m, a) in tap.amplitudes.iter().enumerate() {
            w.write_record([
                cir.snapshot.to_string(),
                i.to_string(),
                tap.delay_s.to_string(),
                m.to_string(),
                a.re.to_string(),
                a.im.to_string(),
            ])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{MarkovParams, ModelParams};
    use crate::evolution::{init_clusters, step_states, MarkovMatrix};
    use crate::largescale::link_budget;
    use crate::rng::{stream, SimRng};
    use crate::scenario::classify_visibility;
    use crate::scenario::fixtures::case3_scenario;
    use crate::scenario::Side;

    const WL: f64 = SPEED_OF_LIGHT / 5.8e9;

    fn mpc(power_db: f64, delay_s: f64, aoa: f64, phase: f64) -> Mpc {
        Mpc {
            power_db,
            delay_s,
            aoa_deg: aoa,
            eoa_deg: 90.0,
            phase_rad: phase,
            cluster_id: None,
            is_direct: false,
        }
    }

    #[test]
    fn broadside_is_all_ones() {
        let a = steering_vector(&ArrayGeometry::default(), 90.0, 90.0, WL);
        assert_eq!(a.len(), 32);
        for x in a {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn endfire_half_wavelength_gives_pi() {
        let arr = ArrayGeometry {
            rows: 1,
            cols: 2,
            spacing_wavelengths: 0.5,
        };
        let a = steering_vector(&arr, 0.0, 90.0, WL);
        let dphi = (a[1] / a[0]).arg().abs();
        assert!((dphi - PI).abs() < 1e-9, "{dphi}");
    }

    #[test]
    fn positions_follow_grid() {
        let p = ArrayGeometry::default().positions(0.1);
        assert_eq!(p.len(), 32);
        assert_eq!(p[0], (0.0, 0.0));
        assert!((p[9].0 - 0.05).abs() < 1e-15 && (p[9].1 - 0.05).abs() < 1e-15);
    }

    #[test]
    fn cir_single_and_cancelling() {
        let arr = ArrayGeometry::default();
        let c = cir(0, &[mpc(-20.0, 1e-7, 40.0, 0.3)], &arr, WL);
        assert_eq!(c.taps.len(), 1);
        for a in &c.taps[0].amplitudes {
            assert!((a.norm() - 0.1).abs() < 1e-12);
        }
        let pair = [mpc(-20.0, 1e-7, 40.0, 0.0), mpc(-20.0, 1e-7, 40.0, PI)];
        let c = cir(0, &pair, &arr, WL);
        for s in c.narrowband() {
            assert!(s.norm() < 1e-12);
        }
    }

    #[test]
    fn cir_is_linear_and_energy_adds() {
        let arr = ArrayGeometry::default();
        let a = [mpc(-10.0, 1e-7, 30.0, 0.1), mpc(-13.0, 2e-7, 120.0, 1.0)];
        let b = [mpc(-7.0, 3e-7, 70.0, -2.0)];
        let all: Vec<Mpc> = a.iter().chain(&b).copied().collect();
        let c_all = cir(0, &all, &arr, WL);
        let (ca, cb) = (cir(0, &a, &arr, WL), cir(0, &b, &arr, WL));
        assert_eq!(c_all.taps[..2], ca.taps[..]);
        assert_eq!(c_all.taps[2..], cb.taps[..]);
        let expected: f64 = all.iter().map(|m| 32.0 * 10f64.powf(m.power_db / 10.0)).sum();
        assert!((c_all.energy() / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_spectrum_for_zero_delay() {
        let c = cir(0, &[mpc(0.0, 0.0, 90.0, 0.0)], &ArrayGeometry::default(), WL);
        let h = frequency_response(&c, 1024, 30e6).unwrap();
        assert_eq!(h.len(), 32);
        for x in &h[0] {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        assert!(frequency_response(&c, 1, 30e6).is_err());
    }

    #[test]
    fn idft_peak_at_delay_bin() {
        let c = cir(0, &[mpc(0.0, 100e-9, 90.0, 0.0)], &ArrayGeometry::default(), WL);
        let h = frequency_response(&c, 1024, 30e6).unwrap();
        let p = delay_profile(&h[0]);
        let peak = (0..p.len()).max_by(|&a, &b| p[a].norm().total_cmp(&p[b].norm())).unwrap();
        assert_eq!(peak, (100e-9 * 30e6_f64).round() as usize);
    }

    #[test]
    fn parseval_on_bin_aligned_taps() {
        let bin = 1.0 / 30e6;
        let mpcs = [mpc(-3.0, 2.0 * bin, 90.0, 0.0), mpc(-9.0, 7.0 * bin, 90.0, 1.0)];
        let c = cir(0, &mpcs, &ArrayGeometry::default(), WL);
        let h = frequency_response(&c, 1024, 30e6).unwrap();
        let mean: f64 = h[0].iter().map(|x| x.norm_sqr()).sum::<f64>() / 1024.0;
        let expected = 10f64.powf(-0.3) + 10f64.powf(-0.9);
        assert!((mean / expected - 1.0).abs() < 1e-9);
    }

    #[test]
    fn separated_taps_localize_within_one_bin() {
        let bin = 1.0 / 30e6;
        let delays = [40e-9, 40e-9 + 2.5 * bin, 40e-9 + 6.2 * bin];
        let mpcs: Vec<Mpc> = delays.iter().map(|&d| mpc(0.0, d, 90.0, 0.0)).collect();
        let c = cir(0, &mpcs, &ArrayGeometry::default(), WL);
        let p = delay_profile(&frequency_response(&c, 1024, 30e6).unwrap()[0]);
        for d in delays {
            let centre = d / bin;
            let lo = centre.floor() as usize;
            let local = p[lo].norm().max(p[lo + 1].norm());
            assert!(local > 0.3, "weak response near {centre}");
        }
    }

    #[test]
    fn binary_round_trip() {
        let c = cir(7, &[mpc(-3.0, 1e-7, 30.0, 0.2), mpc(-5.0, 2e-7, 100.0, -1.0)], &ArrayGeometry::default(), WL);
        let mut buf = Vec::new();
        write_cir_binary(&c, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 2 * (8 + 32 * 16));
        let mut r = &buf[..];
        assert_eq!(read_cir_binary(&mut r, 32).unwrap(), Some(c));
        assert_eq!(read_cir_binary(&mut r, 32).unwrap(), None);
    }

    #[test]
    fn polar_rows() {
        let mut buf = Vec::new();
        polar_export(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        let mut buf = Vec::new();
        polar_export(&[mpc(0.0, 0.0, 10.0, 0.0), mpc(0.0, 0.0, 20.0, 0.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("upper,10"));
        assert!(text.lines().nth(2).unwrap().starts_with("lower,90"));
    }

    #[test]
    fn assembled_snapshots() {
        let cfg = case3_scenario();
        let tl = classify_visibility(&cfg).unwrap();
        let mut p = ModelParams::illustrative();
        p.markov = MarkovParams {
            left: MarkovMatrix::new(0.5, 0.5, 0.3, 0.7).unwrap(),
            right: MarkovMatrix::new(0.5, 0.5, 0.3, 0.7).unwrap(),
        };
        let mut rng = stream(3, 0);
        let mut id = 0;
        let mut clusters = init_clusters(&[(Side::Left, 15.0), (Side::Right, 30.0)], &p, &mut rng, 0, &mut id).unwrap();
        for t in 0..tl.len() {
            let none: Option<&mut SimRng> = None;
            if t > 0 {
                step_states(&mut clusters, &p.markov, &mut rng, t);
            }
            let nlos = p.largescale_nlos.unwrap();
            let b = link_budget(&tl, t, &p.largescale_los, &nlos, none).unwrap();
            let m = assemble_snapshot(&clusters, &b, &tl, t, 45.0, WL).unwrap();
            assert_eq!(m.iter().filter(|m| m.is_direct).count(), 1);
            let d = m[0];
            assert!(d.is_direct);
            if tl.regions[t] == Region::Turn {
                assert_eq!(m.len(), 1);
                continue;
            }
            let alive: usize = clusters.iter().map(|c| c.alive_count()).sum();
            assert_eq!(m.len(), alive + 1);
            for x in &m[1..] {
                assert!(x.delay_s > d.delay_s);
            }
            if t == 0 {
                let tx = tl.frames[0].tx.position;
                let rx = tl.frames[0].rx.position;
                assert!((d.delay_s - tx.distance(rx) / SPEED_OF_LIGHT).abs() < 1e-15);
                assert!((d.aoa_deg - 90.0).abs() < 1e-9);
                assert!((d.power_db - (45.0 + b.pl_db)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_relative_power_matches_direct() {
        let tl = classify_visibility(&case3_scenario()).unwrap();
        let p = ModelParams::illustrative();
        let mut id = 0;
        let mut clusters = init_clusters(&[(Side::Left, 15.0)], &p, &mut stream(1, 1), 0, &mut id).unwrap();
        clusters[0].subpaths.truncate(1);
        clusters[0].subpaths[0].draw.beta_rel_db = 0.0;
        let none: Option<&mut SimRng> = None;
        let b = link_budget(&tl, 0, &p.largescale_los, &p.largescale_los, none).unwrap();
        let m = assemble_snapshot(&clusters, &b, &tl, 0, 45.0, WL).unwrap();
        assert_eq!(m[1].power_db, m[0].power_db);
    }
}
