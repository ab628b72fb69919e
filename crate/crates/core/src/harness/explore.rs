//! Exhaustive interleaving search over concurrent replace-master rounds.

use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::scenario::{Bootstrap, ControllerSpec, Scenario, SCHEMA_VERSION};
use super::world::{RunOptions, World};
use crate::election::ElectionConfig;
use crate::groupcomm::{FailureDetectorConfig, MasterCell, RsmState};
use crate::lincheck::{linearize, RegOp, RegRet};
use crate::netmodel::ControllerId;
use crate::remap::RebalanceConfig;
use crate::sim::{LinkLatency, Replay, SimNet, SimTime};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExploreConfig {
    pub controllers: u32,
    pub latency_ms: f64,
    /// Start offsets are drawn from `{0, L, .., (steps-1)·L}` per controller.
    pub offset_steps: u32,
    /// Cell content before the round; `None` is a fresh cell.
    pub initial: Option<ControllerId>,
    pub horizon_ms: f64,
    pub max_schedules: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            controllers: 3,
            latency_ms: 1.0,
            offset_steps: 3,
            initial: None,
            horizon_ms: 60.0,
            max_schedules: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleFailure {
    pub offsets: Vec<u32>,
    pub prefix: Vec<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreReport {
    pub offset_vectors: usize,
    pub schedules: usize,
    /// False if `max_schedules` cut the search short.
    pub exhaustive: bool,
    pub failures: Vec<ScheduleFailure>,
}

impl ExploreReport {
    pub fn passed(&self) -> bool {
        self.exhaustive && self.failures.is_empty()
    }
}

fn cluster(cfg: &ExploreConfig) -> Scenario {
    let quiet = 1.0e6;
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: "explore".into(),
        controllers: (1..=cfg.controllers)
            .map(|i| ControllerSpec {
                id: ControllerId(i),
                start_ms: 0.0,
            })
            .collect(),
        switches: 0,
        switch_rates: Default::default(),
        failure_detector: FailureDetectorConfig {
            heartbeat_period_ms: quiet,
            suspect_timeout_ms: 2.0 * quiet,
            discovery_timeout_ms: quiet,
        },
        election: ElectionConfig {
            master_check_period_ms: quiet,
            ..Default::default()
        },
        rebalance: RebalanceConfig {
            rebalance_check_period_ms: quiet,
            ..Default::default()
        },
        service: Default::default(),
        latency: LinkLatency::constant(cfg.latency_ms),
        timing: Default::default(),
        bootstrap: Bootstrap::Formed,
        initial_mapping: None,
        traffic: None,
        end_ms: cfg.horizon_ms,
        events: Vec::new(),
    }
}

fn offset_vectors(n: u32, steps: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..steps).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

/// One schedule: `Ok(choice trace)` or the reason it is wrong.
fn run_schedule(
    sc: &Scenario,
    cfg: &ExploreConfig,
    offsets: &[u32],
    prefix: Vec<usize>,
) -> (Replay, Result<(), String>) {
    let replay = Arc::new(Mutex::new(Replay {
        prefix,
        taken: Vec::new(),
    }));
    let mut w = World::with_parts(
        sc,
        0,
        Box::new(SimNet::new(sc.latency, 0)),
        Box::new(replay.clone()),
        RunOptions::default(),
    );
    w.seed_state(RsmState {
        cell: MasterCell { value: cfg.initial },
        ..Default::default()
    });
    let base = SimTime::from_ms(1.0);
    for (i, k) in offsets.iter().enumerate() {
        let at = base + SimTime::from_ms(cfg.latency_ms * *k as f64);
        w.schedule_election(at, ControllerId(i as u32 + 1));
    }
    w.run_until(SimTime::from_ms(cfg.horizon_ms));
    let verdict = judge(&w, cfg);
    drop(w);
    let replay = Arc::try_unwrap(replay)
        .expect("world dropped")
        .into_inner()
        .expect("chooser lock");
    (replay, verdict)
}

fn judge(w: &World, cfg: &ExploreConfig) -> Result<(), String> {
    if let Some(v) = w.violations().first() {
        return Err(v.clone());
    }
    let h = w.history();
    if h.iter().any(|e| e.ret.is_none()) {
        return Err("operation never returned".into());
    }
    let wins = h
        .iter()
        .filter(|e| matches!(e.op, RegOp::Cas { .. }) && e.ret == Some(RegRet::Swapped { ok: true }))
        .count();
    if wins != 1 {
        return Err(format!("{wins} successful CAS in one round"));
    }
    if linearize(h, cfg.initial).is_none() {
        return Err("history not linearizable".into());
    }
    let cells = w.cells();
    let winner = cells.values().next().copied().flatten().flatten();
    if winner.is_none() || cells.values().any(|c| *c != Some(winner)) {
        return Err(format!("round did not settle: {cells:?}"));
    }
    Ok(())
}

/// Depth-first enumeration of every scheduler choice for every offset vector.
pub fn explore(cfg: &ExploreConfig) -> ExploreReport {
    let sc = cluster(cfg);
    let vectors = offset_vectors(cfg.controllers, cfg.offset_steps);
    let mut report = ExploreReport {
        offset_vectors: vectors.len(),
        schedules: 0,
        exhaustive: true,
        failures: Vec::new(),
    };
    for offsets in &vectors {
        let mut prefix = Some(Vec::new());
        while let Some(p) = prefix {
            if report.schedules >= cfg.max_schedules {
                report.exhaustive = false;
                return report;
            }
            report.schedules += 1;
            let (replay, verdict) = run_schedule(&sc, cfg, offsets, p.clone());
            if let Err(reason) = verdict {
                report.failures.push(ScheduleFailure {
                    offsets: offsets.clone(),
                    prefix: p,
                    reason,
                });
            }
            prefix = replay.next_prefix();
        }
    }
    report
}
