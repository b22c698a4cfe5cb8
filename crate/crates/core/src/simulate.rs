//! Snapshot loop: visibility, link budget, effective widths, cluster
//! lifecycle and MPC assembly, followed by parallel CIR and statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::distributions::ModelParams;
use crate::error::{Error, Result};
use crate::evolution::{init_clusters, redraw_phases, step_states, Cluster};
use crate::io::{AssignedRecord, LifecycleRecord, MpcRecord};
use crate::largescale::{link_budget, LinkBudget};
use crate::rng::stream;
use crate::scenario::{classify_visibility, effective_widths, Region, ScenarioConfig, Side, VisibilityTimeline};
use crate::stats::{snapshot_stats, SnapshotStats, DEFAULT_BIN_S};
use crate::synthesis::{assemble_snapshot, cir, Cir, Mpc};

/// Stream indices under the run seed.
const LIFECYCLE_STREAM: u64 = 0;
const SHADOW_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub seed: u64,
    pub shadowing: bool,
    /// Overrides the scenario's visibility margin.
    pub margin_m: Option<f64>,
    pub cir: bool,
    pub lifecycle_trace: bool,
    pub stats_bin_s: f64,
}

impl SimulationOptions {
    pub fn new(seed: u64) -> Self {
        SimulationOptions {
            seed,
            shadowing: true,
            margin_m: None,
            cir: false,
            lifecycle_trace: false,
            stats_bin_s: DEFAULT_BIN_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    pub region: Region,
    pub budget: LinkBudget,
    pub widths: Vec<(Side, f64)>,
    /// Direct path first.
    pub mpcs: Vec<Mpc>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub timeline: VisibilityTimeline,
    pub snapshots: Vec<Snapshot>,
    /// (side, width) of every cluster id ever created.
    pub clusters: BTreeMap<usize, (Side, f64)>,
    pub lifecycle: Vec<LifecycleRecord>,
    pub cirs: Vec<Cir>,
    pub stats: Vec<SnapshotStats>,
}

impl SimulationOutput {
    pub fn mpc_log(&self) -> Vec<MpcRecord> {
        self.snapshots
            .iter()
            .flat_map(|s| s.mpcs.iter().map(|m| MpcRecord::from_mpc(s.index, m)))
            .collect()
    }

    /// MPC log labelled with the generating cluster's (side, width).
    pub fn truth_assignments(&self) -> Vec<AssignedRecord> {
        self.snapshots
            .iter()
            .flat_map(|s| {
                s.mpcs.iter().map(move |m| {
                    let label = m.cluster_id.and_then(|id| self.clusters.get(&id).copied());
                    AssignedRecord::new(&MpcRecord::from_mpc(s.index, m), label, None)
                })
            })
            .collect()
    }
}

/// Runs the full scenario.
pub fn simulate(config: &ScenarioConfig, params: &ModelParams, opts: &SimulationOptions) -> Result<SimulationOutput> {
    params.validate()?;
    let timeline = classify_visibility(config)?;
    let profiles = config.profiles();
    let margin = opts.margin_m.unwrap_or(config.visibility.margin_m);
    let nlos_params = match (params.largescale_nlos, timeline.first_nlos()) {
        (Some(p), _) => p,
        (None, None) => params.largescale_los,
        (None, Some(t)) => {
            return Err(Error::invalid(
                "largescale_nlos",
                format!("scenario turns NLOS at snapshot {t} but no NLOS path-loss parameters are given"),
            ))
        }
    };
    let wavelength = config.rf.wavelength_m();
    let mut life_rng = stream(opts.seed, LIFECYCLE_STREAM);
    let mut shadow_rng = stream(opts.seed, SHADOW_STREAM);

    let mut active: Vec<Cluster> = Vec::new();
    let mut next_id = 0usize;
    let mut cluster_index = BTreeMap::new();
    let mut lifecycle = Vec::new();
    let mut snapshots = Vec::with_capacity(timeline.len());

    for t in 0..timeline.len() {
        let budget = link_budget(
            &timeline,
            t,
            &params.largescale_los,
            &nlos_params,
            opts.shadowing.then_some(&mut shadow_rng),
        )
        .map_err(|e| e.context(format!("snapshot {t}")))?;
        let widths = effective_widths(&profiles, &timeline, t, margin);

        // Clusters whose width left D(t) die with all their subpaths.
        let (keep, gone): (Vec<Cluster>, Vec<Cluster>) =
            active.drain(..).partition(|c| widths.contains(&(c.side, c.width)));
        active = keep;
        if opts.lifecycle_trace {
            for mut c in gone {
                c.kill_all(t);
                trace(&mut lifecycle, &c, t);
            }
        }
        step_states(&mut active, &params.markov, &mut life_rng, t);
        let fresh: Vec<(Side, f64)> = widths
            .iter()
            .copied()
            .filter(|w| !active.iter().any(|c| (c.side, c.width) == *w))
            .collect();
        let born = init_clusters(&fresh, params, &mut life_rng, t, &mut next_id)
            .map_err(|e| e.context(format!("snapshot {t}")))?;
        for c in &born {
            cluster_index.insert(c.id, (c.side, c.width));
        }
        active.extend(born);
        active.sort_by_key(|c| c.id);
        redraw_phases(&mut active, &mut life_rng);
        if opts.lifecycle_trace {
            for c in &active {
                trace(&mut lifecycle, c, t);
            }
        }

        let mpcs = assemble_snapshot(&active, &budget, &timeline, t, config.tx_power_dbm, wavelength)?;
        snapshots.push(Snapshot {
            index: t,
            region: timeline.regions[t],
            budget,
            widths,
            mpcs,
        });
    }

    let cirs = if opts.cir {
        snapshots
            .par_iter()
            .map(|s| cir(s.index, &s.mpcs, &config.array, wavelength))
            .collect()
    } else {
        Vec::new()
    };
    let stats = snapshots
        .par_iter()
        .map(|s| snapshot_stats(s.index, &s.mpcs, s.region, opts.stats_bin_s))
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulationOutput {
        timeline,
        snapshots,
        clusters: cluster_index,
        lifecycle,
        cirs,
        stats,
    })
}

fn trace(rows: &mut Vec<LifecycleRecord>, c: &Cluster, t: usize) {
    for (i, s) in c.subpaths.iter().enumerate() {
        rows.push(LifecycleRecord {
            snapshot: t,
            cluster_id: c.id,
            path_id: i,
            state: s.state.alive as u8,
            side: c.side,
            width_m: c.width,
        });
    }
}
