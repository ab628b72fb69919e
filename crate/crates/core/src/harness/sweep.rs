//! Seeded random fault schedules and parallel sweeps over them.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::check::{check, Verdict};
use super::scenario::{Bootstrap, ControllerSpec, EventKind, Scenario, ScenarioEvent, SCHEMA_VERSION};
use super::world::run;
use crate::groupcomm::FailureDetectorConfig;
use crate::netmodel::{ControllerId, ControllerSwitchMapping, SwitchId};

/// Bounds for generated schedules.
#[derive(Debug, Clone, Copy)]
pub struct FaultSpace {
    pub max_controllers: u32,
    pub max_switches: u32,
    pub max_events: usize,
    pub window_ms: (f64, f64),
    pub settle_ms: f64,
}

impl Default for FaultSpace {
    fn default() -> Self {
        Self {
            max_controllers: 4,
            max_switches: 16,
            max_events: 6,
            window_ms: (200.0, 1500.0),
            settle_ms: 3000.0,
        }
    }
}

/// A small formed cluster with a random topology and fault schedule.
pub fn random_scenario(seed: u64, space: &FaultSpace) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=space.max_controllers.min(3));
    let m = rng.gen_range(1..=space.max_switches);
    let base = Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("random-{seed}"),
        controllers: (1..=n)
            .map(|i| ControllerSpec {
                id: ControllerId(i),
                start_ms: 0.0,
            })
            .collect(),
        switches: m,
        switch_rates: Default::default(),
        failure_detector: FailureDetectorConfig {
            discovery_timeout_ms: 300.0,
            ..Default::default()
        },
        election: Default::default(),
        rebalance: Default::default(),
        service: Default::default(),
        latency: Default::default(),
        timing: Default::default(),
        bootstrap: Bootstrap::Formed,
        initial_mapping: None,
        traffic: None,
        end_ms: 0.0,
        events: Vec::new(),
    };
    with_random_faults(&base, &mut rng, space)
}

/// `base` with its event list replaced by a random schedule.
pub fn with_random_faults(base: &Scenario, rng: &mut impl Rng, space: &FaultSpace) -> Scenario {
    let mut sc = base.clone();
    let mut live: Vec<ControllerId> = sc.controllers.iter().map(|c| c.id).collect();
    let mut next_c = live.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let mut switches: Vec<SwitchId> = sc.switch_ids().collect();
    let mut next_s = sc.switches + 1;
    let mut partitioned = false;

    let count = rng.gen_range(1..=space.max_events);
    let mut times: Vec<f64> = (0..count)
        .map(|_| rng.gen_range(space.window_ms.0..space.window_ms.1).round())
        .collect();
    times.sort_by(f64::total_cmp);

    let mut events = Vec::new();
    for t in times {
        let kind = loop {
            match rng.gen_range(0..8) {
                0 if live.len() > 1 => {
                    let c = *live.choose(rng).unwrap();
                    live.retain(|x| *x != c);
                    break EventKind::FailController { controller: c };
                }
                1 if next_c <= space.max_controllers => {
                    let c = ControllerId(next_c);
                    next_c += 1;
                    live.push(c);
                    break EventKind::AddController { controller: c };
                }
                2 if !switches.is_empty() => {
                    let s = *switches.choose(rng).unwrap();
                    switches.retain(|x| *x != s);
                    break EventKind::FailSwitch { switch: s };
                }
                3 if switches.len() < space.max_switches as usize => {
                    let s = SwitchId(next_s);
                    next_s += 1;
                    switches.push(s);
                    break EventKind::AddSwitch {
                        switch: s,
                        rate: Some(rng.gen_range(1..=3) as f64),
                    };
                }
                4 if !switches.is_empty() => {
                    break EventKind::SetSwitchRate {
                        switch: *switches.choose(rng).unwrap(),
                        rate: rng.gen_range(0..=4) as f64,
                    };
                }
                5 => {
                    let mut pins = ControllerSwitchMapping::new();
                    for s in &switches {
                        if rng.gen_bool(0.3) {
                            pins.assign(*s, *live.choose(rng).unwrap());
                        }
                    }
                    break EventKind::ForceRebalance { pins };
                }
                6 if !partitioned && live.len() > 1 => {
                    let mut shuffled = live.clone();
                    shuffled.shuffle(rng);
                    let cut = rng.gen_range(1..shuffled.len());
                    let (a, b) = shuffled.split_at(cut);
                    let mut groups = vec![a.to_vec(), b.to_vec()];
                    groups.iter_mut().for_each(|g| g.sort());
                    partitioned = true;
                    break EventKind::Partition { groups };
                }
                7 if partitioned => {
                    partitioned = false;
                    break EventKind::Heal;
                }
                _ => {}
            }
        };
        events.push(ScenarioEvent { time_ms: t, kind });
    }
    let mut last = events.last().map_or(0.0, |e| e.time_ms);
    if partitioned {
        last += rng.gen_range(100.0..800.0_f64).round();
        events.push(ScenarioEvent {
            time_ms: last,
            kind: EventKind::Heal,
        });
    }
    sc.events = events;
    sc.end_ms = sc.end_ms.max(last + space.settle_ms);
    sc
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub verdict: Verdict,
    /// Quiescent at the end with at least one live controller.
    pub settled: bool,
    pub live_controllers: usize,
    pub events: u64,
}

impl SeedResult {
    pub fn passed(&self) -> bool {
        self.verdict.passed() && (self.settled || self.live_controllers == 0)
    }
}

fn run_one(sc: &Scenario, seed: u64) -> SeedResult {
    let trace = run(sc, seed);
    let verdict = check(&trace);
    let s = trace.summary().expect("run ends with a summary");
    SeedResult {
        seed,
        settled: s.quiescent,
        live_controllers: s.live_controllers.len(),
        events: s.events_processed,
        verdict,
    }
}

/// Runs fully random scenarios for each seed in parallel.
pub fn sweep_random(seeds: impl IntoIterator<Item = u64>, space: &FaultSpace) -> Vec<SeedResult> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    seeds
        .par_iter()
        .map(|&seed| run_one(&random_scenario(seed, space), seed))
        .collect()
}

/// Runs `base` once per seed. With no scripted events each seed also gets
/// its own random fault schedule.
pub fn sweep_scenario(base: &Scenario, seeds: impl IntoIterator<Item = u64>, space: &FaultSpace) -> Vec<SeedResult> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    seeds
        .par_iter()
        .map(|&seed| {
            if base.events.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                run_one(&with_random_faults(base, &mut rng, space), seed)
            } else {
                run_one(base, seed)
            }
        })
        .collect()
}

/// Controllers a schedule leaves alive.
pub fn survivors(sc: &Scenario) -> BTreeSet<ControllerId> {
    let mut live: BTreeSet<ControllerId> = sc.controllers.iter().map(|c| c.id).collect();
    for e in &sc.events {
        match e.kind {
            EventKind::FailController { controller } => {
                live.remove(&controller);
            }
            EventKind::AddController { controller } => {
                live.insert(controller);
            }
            _ => {}
        }
    }
    live
}
