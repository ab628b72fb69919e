//! Master election over the replicated [`MasterCell`](crate::groupcomm::MasterCell).
//!
//! [`Elector`] is the per-controller replace-master loop: read the cell,
//! pick the least loaded live member, compare-and-swap. It is driven by the
//! owner, which submits the ops it asks for and feeds back their results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groupcomm::{MembershipView, ViewId};
use crate::netmodel::ControllerId;
use crate::scalar::Load;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadReport<L> {
    pub controller: ControllerId,
    pub load: L,
    pub view: ViewId,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElectionConfig {
    pub max_cas_retries: u32,
    pub master_check_period_ms: f64,
    /// A master whose load exceeds this is replaced. `None` disables the check.
    pub unsuitability_load_threshold: Option<f64>,
}

impl Default for ElectionConfig {
    fn default() -> Self {
        Self {
            max_cas_retries: 3,
            master_check_period_ms: 20.0,
            unsuitability_load_threshold: None,
        }
    }
}

impl ElectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_cas_retries == 0 {
            return Err("max_cas_retries must be >= 1".into());
        }
        if !(self.master_check_period_ms > 0.0) {
            return Err("master_check_period_ms must be > 0".into());
        }
        if matches!(self.unsuitability_load_threshold, Some(t) if !(t >= 0.0)) {
            return Err("unsuitability_load_threshold must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("no view member has a load report")]
    NoCandidate,
}

/// Least loaded view member among those with a report from this view;
/// ties go to the lowest rank.
pub fn find_master<L: Load>(
    reports: &[LoadReport<L>],
    view: &MembershipView,
) -> Result<ControllerId, ElectionError> {
    let mut best: Option<(L, ControllerId)> = None;
    for r in reports.iter().filter(|r| r.view == view.id && view.contains(r.controller)) {
        let better = match best {
            None => true,
            Some((l, c)) => r.load < l || (r.load == l && r.controller < c),
        };
        if better {
            best = Some((r.load, r.controller));
        }
    }
    best.map(|(_, c)| c)
        .ok_or(ElectionError::NoCandidate)
}

/// Reports for every view member from a load map.
pub fn reports_from_loads<L: Load>(
    loads: &BTreeMap<ControllerId, L>,
    view: &MembershipView,
    time_ms: f64,
) -> Vec<LoadReport<L>> {
    view.members
        .iter()
        .filter_map(|c| {
            loads.get(c).map(|&load| LoadReport {
                controller: *c,
                load,
                view: view.id,
                time_ms,
            })
        })
        .collect()
}

/// Whether `cell` names a usable master under `view`.
pub fn is_suitable<L: Load>(
    cfg: &ElectionConfig,
    cell: Option<ControllerId>,
    view: &MembershipView,
    loads: &BTreeMap<ControllerId, L>,
) -> bool {
    let Some(m) = cell else {
        return false;
    };
    if !view.contains(m) {
        return false;
    }
    match (cfg.unsuitability_load_threshold, loads.get(&m)) {
        (Some(t), Some(l)) => l.as_f64() <= t,
        _ => true,
    }
}

/// Monitor check run every master-check period at `me`.
pub fn should_trigger<L: Load>(
    me: ControllerId,
    cfg: &ElectionConfig,
    cell: Option<ControllerId>,
    view: &MembershipView,
    loads: &BTreeMap<ControllerId, L>,
) -> bool {
    cell != Some(me) && !is_suitable(cfg, cell, view, loads)
}

pub fn is_master(me: ControllerId, cell: Option<ControllerId>) -> bool {
    cell == Some(me)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ElectionOutcome {
    Won,
    LostTo { master: ControllerId },
    GaveUp { unavailable: bool },
}

/// What the elector needs next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElectStep {
    Get,
    Cas {
        expected: Option<ControllerId>,
        new: Option<ControllerId>,
    },
    Done(ElectionOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Reading,
    Swapping { next: ControllerId },
}

#[derive(Debug, Clone)]
pub struct Elector {
    me: ControllerId,
    cfg: ElectionConfig,
    phase: Phase,
    stale: Option<ControllerId>,
    attempts: u32,
    cas_total: u64,
}

impl Elector {
    pub fn new(me: ControllerId, cfg: ElectionConfig) -> Self {
        Self {
            me,
            cfg,
            phase: Phase::Idle,
            stale: None,
            attempts: 0,
            cas_total: 0,
        }
    }

    pub fn in_progress(&self) -> bool {
        self.phase != Phase::Idle
    }

    /// CAS attempts issued over the elector's lifetime.
    pub fn cas_attempts(&self) -> u64 {
        self.cas_total
    }

    /// Starts a round. `stale` is the cell value that looked unusable.
    pub fn start(&mut self, stale: Option<ControllerId>) -> ElectStep {
        self.stale = stale;
        self.attempts = 0;
        self.phase = Phase::Reading;
        ElectStep::Get
    }

    pub fn abort(&mut self) {
        self.phase = Phase::Idle;
    }

    /// The cell could not be reached (left the view, op lost).
    pub fn on_unavailable(&mut self) -> ElectStep {
        self.phase = Phase::Idle;
        ElectStep::Done(ElectionOutcome::GaveUp { unavailable: true })
    }

    pub fn on_get<L: Load>(
        &mut self,
        prev: Option<ControllerId>,
        view: &MembershipView,
        loads: &BTreeMap<ControllerId, L>,
    ) -> ElectStep {
        if self.phase != Phase::Reading {
            return ElectStep::Done(ElectionOutcome::GaveUp { unavailable: false });
        }
        let done = |me: &mut Self, o| {
            me.phase = Phase::Idle;
            ElectStep::Done(o)
        };
        if prev != self.stale && is_suitable(&self.cfg, prev, view, loads) {
            let master = prev.expect("suitable implies set");
            return done(self, outcome_for(self.me, master));
        }
        let reports = reports_from_loads(loads, view, 0.0);
        let next = match find_master(&reports, view) {
            Ok(n) => n,
            Err(_) => return done(self, ElectionOutcome::GaveUp { unavailable: false }),
        };
        if Some(next) == prev {
            return done(self, outcome_for(self.me, next));
        }
        self.attempts += 1;
        self.cas_total += 1;
        self.phase = Phase::Swapping { next };
        ElectStep::Cas {
            expected: prev,
            new: Some(next),
        }
    }

    pub fn on_cas(&mut self, ok: bool) -> ElectStep {
        let Phase::Swapping { next } = self.phase else {
            return ElectStep::Done(ElectionOutcome::GaveUp { unavailable: false });
        };
        if ok {
            self.phase = Phase::Idle;
            ElectStep::Done(outcome_for(self.me, next))
        } else if self.attempts >= self.cfg.max_cas_retries {
            self.phase = Phase::Idle;
            ElectStep::Done(ElectionOutcome::GaveUp { unavailable: false })
        } else {
            self.phase = Phase::Reading;
            ElectStep::Get
        }
    }
}

fn outcome_for(me: ControllerId, master: ControllerId) -> ElectionOutcome {
    if master == me {
        ElectionOutcome::Won
    } else {
        ElectionOutcome::LostTo { master }
    }
}
