//! Cluster and subpath lifecycle: two-state birth-death Markov chains per
//! subpath, cluster aliveness as the OR of its subpaths.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::distributions::{
    condition, sample_mpc, uniform_phase, ConditionedDists, MarkovParams, ModelParams, RawDraw,
};
use crate::error::{Error, Result};
use crate::scenario::Side;

/// Transition matrix `[[p00, p01], [p10, p11]]`; state 1 = alive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct MarkovMatrix {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl From<[[f64; 2]; 2]> for MarkovMatrix {
    fn from(m: [[f64; 2]; 2]) -> Self {
        MarkovMatrix {
            p00: m[0][0],
            p01: m[0][1],
            p10: m[1][0],
            p11: m[1][1],
        }
    }
}

impl From<MarkovMatrix> for [[f64; 2]; 2] {
    fn from(m: MarkovMatrix) -> Self {
        [[m.p00, m.p01], [m.p10, m.p11]]
    }
}

impl MarkovMatrix {
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self> {
        let m = MarkovMatrix { p00, p01, p10, p11 };
        m.validate("markov")?;
        Ok(m)
    }

    pub fn identity() -> Self {
        MarkovMatrix {
            p00: 1.0,
            p01: 0.0,
            p10: 0.0,
            p11: 1.0,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let entries = [self.p00, self.p01, self.p10, self.p11];
        if entries.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(field, "entries must lie in [0, 1]"));
        }
        for (row, sum) in [(0, self.p00 + self.p01), (1, self.p10 + self.p11)] {
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(field, format!("row {row} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Probability that a path in `alive` state is alive at the next step.
    pub fn p_alive_next(&self, alive: bool) -> f64 {
        if alive {
            self.p11
        } else {
            self.p01
        }
    }

    /// Long-run alive fraction p01 / (p01 + p10).
    pub fn stationary_alive(&self) -> f64 {
        let s = self.p01 + self.p10;
        if s == 0.0 {
            f64::NAN
        } else {
            self.p01 / s
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, alive: bool, rng: &mut R) -> bool {
        rng.random::<f64>() < self.p_alive_next(alive)
    }
}

/// One contiguous alive interval; `death` is the first dead snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lifetime {
    pub birth: usize,
    pub death: Option<usize>,
}

impl Lifetime {
    pub fn alive_at(&self, t: usize) -> bool {
        self.birth <= t && self.death.is_none_or(|d| t < d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathState {
    pub alive: bool,
    pub birth: usize,
    pub death: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subpath {
    pub draw: RawDraw,
    pub state: PathState,
    pub history: Vec<Lifetime>,
}

impl Subpath {
    fn born(draw: RawDraw, t: usize) -> Self {
        Subpath {
            draw,
            state: PathState {
                alive: true,
                birth: t,
                death: None,
            },
            history: vec![Lifetime { birth: t, death: None }],
        }
    }

    fn kill(&mut self, t: usize) {
        if self.state.alive {
            self.state.alive = false;
            self.state.death = Some(t);
            if let Some(l) = self.history.last_mut() {
                l.death = Some(t);
            }
        }
    }

    fn revive(&mut self, draw: RawDraw, t: usize) {
        self.draw = draw;
        self.state = PathState {
            alive: true,
            birth: t,
            death: None,
        };
        self.history.push(Lifetime { birth: t, death: None });
    }

    pub fn alive_at(&self, t: usize) -> bool {
        self.history.iter().any(|l| l.alive_at(t))
    }
}

/// Scatterer group at one (side, width).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    pub side: Side,
    pub width: f64,
    pub dists: ConditionedDists,
    pub subpaths: Vec<Subpath>,
    pub created_at: usize,
}

impl Cluster {
    pub fn alive_count(&self) -> usize {
        self.subpaths.iter().filter(|s| s.state.alive).count()
    }

    /// Forces every subpath dead at snapshot `t`.
    pub fn kill_all(&mut self, t: usize) {
        for s in &mut self.subpaths {
            s.kill(t);
        }
    }
}

/// Subpath count: Poisson(mean), at least one.
pub fn draw_subpath_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    let n = Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(1.0);
    (n as usize).max(1)
}

/// Creates one cluster per (side, width), all subpaths born alive at `t`.
/// Cluster ids are assigned from `next_id` upwards.
pub fn init_clusters<R: Rng + ?Sized>(
    widths: &[(Side, f64)],
    params: &ModelParams,
    rng: &mut R,
    t: usize,
    next_id: &mut usize,
) -> Result<Vec<Cluster>> {
    widths
        .iter()
        .map(|&(side, width)| {
            let dists = condition(params, width, side)
                .map_err(|e| e.context(format!("cluster {side} {width} m")))?;
            let n = draw_subpath_count(params.subpath_mean, rng);
            let subpaths = (0..n).map(|_| Subpath::born(sample_mpc(&dists, rng), t)).collect();
            let id = *next_id;
            *next_id += 1;
            Ok(Cluster {
                id,
                side,
                width,
                dists,
                subpaths,
                created_at: t,
            })
        })
        .collect()
}

/// Advances every subpath to snapshot `t` by its side's matrix. Reborn
/// subpaths redraw all parameters from the cluster's distributions.
pub fn step_states<R: Rng + ?Sized>(clusters: &mut [Cluster], markov: &MarkovParams, rng: &mut R, t: usize) {
    for c in clusters.iter_mut() {
        let m = *markov.for_side(c.side);
        for s in &mut c.subpaths {
            let was = s.state.alive;
            let now = m.step(was, rng);
            match (was, now) {
                (true, false) => s.kill(t),
                (false, true) => {
                    let draw = sample_mpc(&c.dists, rng);
                    s.revive(draw, t);
                }
                _ => {}
            }
        }
    }
}

/// Redraws the phase of every alive subpath.
pub fn redraw_phases<R: Rng + ?Sized>(clusters: &mut [Cluster], rng: &mut R) {
    for s in clusters.iter_mut().flat_map(|c| &mut c.subpaths).filter(|s| s.state.alive) {
        s.draw.phase_rad = uniform_phase(rng);
    }
}

/// Number of subpaths alive at `t`, accumulated as the paths born at `t`
/// plus the survivors of every earlier birth cohort.
pub fn count_alive(cluster: &Cluster, t: usize) -> usize {
    let mut cohorts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in cluster.subpaths.iter().flat_map(|s| &s.history) {
        if l.alive_at(t) {
            *cohorts.entry(l.birth).or_default() += 1;
        }
    }
    let newborn = cohorts.get(&t).copied().unwrap_or(0);
    let survivors: usize = cohorts.range(..t).map(|(_, n)| n).sum();
    newborn + survivors
}

/// Cluster state: alive iff any subpath is alive.
pub fn cluster_state(cluster: &Cluster) -> bool {
    cluster.subpaths.iter().any(|s| s.state.alive)
}
