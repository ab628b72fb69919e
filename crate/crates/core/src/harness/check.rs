//! Offline re-check of a recorded trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::scenario::EventKind;
use super::trace::{Node, Trace, TraceEvent};
use crate::groupcomm::ViewId;
use crate::netmodel::{ControllerId, PoolAddress, SwitchId};
use crate::remap::MoveOutcome;
use crate::sim::SimTime;

pub const DISJOINT: &str = "disjoint";
pub const EXHAUSTIVE: &str = "exhaustive";
pub const MASTER_UNIQUE: &str = "master-unique";
pub const VIEW_AGREEMENT: &str = "view-agreement";
pub const RELEASE_BEFORE_ACQUIRE: &str = "release-before-acquire";
pub const ORPHAN_WINDOW: &str = "orphan-window";
pub const RECONNECT_BOUND: &str = "reconnect-bound";
pub const ONLINE: &str = "online";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Index of the offending record.
    pub index: usize,
    pub time: SimTime,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub checked: usize,
    pub first_violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub checks: Vec<CheckResult>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "{status} {:<24} checked={}", c.name, c.checked)?;
            if let Some(v) = &c.first_violation {
                write!(f, " first at record {} (t={}): {}", v.index, v.time, v.message)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

struct Acc {
    name: &'static str,
    checked: usize,
    first: Option<Violation>,
}

impl Acc {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            first: None,
        }
    }

    fn assert(&mut self, ok: bool, index: usize, time: SimTime, msg: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok && self.first.is_none() {
            self.first = Some(Violation {
                index,
                time,
                message: msg(),
            });
        }
    }

    fn done(self) -> CheckResult {
        CheckResult {
            name: self.name,
            passed: self.first.is_none(),
            checked: self.checked,
            first_violation: self.first,
        }
    }
}

/// Re-derives every trace-level invariant from the records alone.
pub fn check(trace: &Trace) -> Verdict {
    let (max_lat, arp_delay) = trace
        .scenario()
        .map(|(s, _)| (s.latency.max_ms, s.timing.arp_delay_ms))
        .unwrap_or((f64::INFINITY, 0.0));
    let orphan_bound = SimTime::from_ms(max_lat);
    let reconnect_bound = SimTime::from_ms(arp_delay + 2.0 * max_lat);

    let mut disjoint = Acc::new(DISJOINT);
    let mut exhaustive = Acc::new(EXHAUSTIVE);
    let mut master = Acc::new(MASTER_UNIQUE);
    let mut views = Acc::new(VIEW_AGREEMENT);
    let mut rba = Acc::new(RELEASE_BEFORE_ACQUIRE);
    let mut orphan = Acc::new(ORPHAN_WINDOW);
    let mut reconnect = Acc::new(RECONNECT_BOUND);
    let mut online = Acc::new(ONLINE);

    let mut owner: BTreeMap<PoolAddress, ControllerId> = BTreeMap::new();
    // (controller, pool) -> time its ownership last ended
    let mut ended: BTreeMap<(ControllerId, PoolAddress), SimTime> = BTreeMap::new();
    let mut acquired_at: BTreeMap<(ControllerId, PoolAddress), (usize, SimTime)> = BTreeMap::new();
    let mut cell: BTreeMap<ControllerId, Option<ControllerId>> = BTreeMap::new();
    let mut view_members: BTreeMap<ViewId, Vec<ControllerId>> = BTreeMap::new();
    let mut last_view: BTreeMap<ControllerId, ViewId> = BTreeMap::new();
    let mut pending_arp: BTreeMap<SwitchId, (usize, SimTime, ControllerId)> = BTreeMap::new();
    // held messages stretch the window, so partitioned spans are exempt
    let mut split = false;
    let mut last_heal = None;

    for (i, r) in trace.records.iter().enumerate() {
        let t = r.time;
        let me = match r.node {
            Node::Controller(c) => Some(c),
            _ => None,
        };
        match &r.event {
            TraceEvent::AliasAcquired { pool } => {
                let c = me.expect("alias record at a controller");
                let prev = owner.get(pool).copied();
                disjoint.assert(prev.is_none(), i, t, || {
                    format!("{pool:?} acquired by {c} while owned by {}", prev.unwrap())
                });
                owner.insert(*pool, c);
                acquired_at.insert((c, *pool), (i, t));
            }
            TraceEvent::AliasReleased { pool } => {
                let c = me.expect("alias record at a controller");
                let prev = owner.get(pool).copied();
                disjoint.assert(prev == Some(c), i, t, || format!("{c} released {pool:?} owned by {prev:?}"));
                owner.remove(pool);
                ended.insert((c, *pool), t);
            }
            TraceEvent::AliasLost { pools } => {
                let c = me.expect("alias record at a controller");
                for p in pools {
                    let prev = owner.get(p).copied();
                    disjoint.assert(prev == Some(c), i, t, || format!("{c} lost {p:?} owned by {prev:?}"));
                    owner.remove(p);
                    ended.insert((c, *p), t);
                }
            }
            TraceEvent::MoveReport { report } => {
                let c = me.expect("move report at a controller");
                for e in &report.entries {
                    if e.outcome != MoveOutcome::Completed {
                        continue;
                    }
                    let pool = PoolAddress::for_switch(e.order.switch);
                    let Some(&(ai, at)) = acquired_at.get(&(e.order.to, pool)) else {
                        rba.assert(false, i, t, || format!("{c} reports {:?} completed without an acquire", e.order));
                        continue;
                    };
                    if let Some(from) = e.order.from {
                        let rel = ended.get(&(from, pool)).copied();
                        rba.assert(rel.is_some_and(|r| r <= at), ai, at, || {
                            format!("{pool:?} acquired by {} before {from} released it", e.order.to)
                        });
                        let disturbed = split || last_heal.is_some_and(|h| rel.is_none_or(|r| h >= r));
                        if let Some(r) = rel.filter(|_| !disturbed) {
                            orphan.assert(at - r <= orphan_bound, ai, at, || {
                                format!("{pool:?} orphaned for {} ms", (at - r).as_ms())
                            });
                        }
                    }
                }
            }
            TraceEvent::MasterChanged { master } => {
                cell.insert(me.expect("cell record at a controller"), *master);
            }
            TraceEvent::ViewInstalled { view } => {
                let c = me.expect("view record at a controller");
                match view_members.get(&view.id) {
                    Some(m) => views.assert(*m == view.members, i, t, || {
                        format!("{:?} installed with members {:?} and {:?}", view.id, m, view.members)
                    }),
                    None => {
                        view_members.insert(view.id, view.members.clone());
                    }
                }
                if let Some(p) = last_view.insert(c, view.id) {
                    views.assert(view.id > p, i, t, || format!("{c} installed {:?} after {:?}", view.id, p));
                }
            }
            TraceEvent::ArpUpdated { owner: o } => {
                if let Node::Switch(s) = r.node {
                    pending_arp.insert(s, (i, t, *o));
                }
            }
            TraceEvent::Reconnected { controller } => {
                if let Node::Switch(s) = r.node {
                    if let Some((ai, ta, o)) = pending_arp.remove(&s) {
                        let pool = PoolAddress::for_switch(s);
                        let stable = ended.get(&(o, pool)).is_none_or(|e| *e < ta);
                        if o == *controller && stable {
                            reconnect.assert(t - ta <= reconnect_bound, ai, ta, || {
                                format!("{s} reconnected {} ms after ARP", (t - ta).as_ms())
                            });
                        }
                    }
                }
            }
            TraceEvent::Fault { fault } => match fault {
                EventKind::Partition { .. } => split = true,
                EventKind::Heal => {
                    split = false;
                    last_heal = Some(t);
                }
                _ => {}
            },
            TraceEvent::Quiescent { snapshot } => {
                let live: BTreeSet<ControllerId> = snapshot.live_controllers.iter().copied().collect();
                for s in &snapshot.live_switches {
                    let o = owner.get(&PoolAddress::for_switch(*s)).copied();
                    exhaustive.assert(o.is_some_and(|o| live.contains(&o)), i, t, || {
                        format!("{s} owned by {o:?} at quiescence")
                    });
                }
                let replayed: BTreeMap<PoolAddress, Option<ControllerId>> = snapshot
                    .aliases
                    .pools()
                    .map(|p| (p, owner.get(&p).copied()))
                    .collect();
                let recorded: BTreeMap<PoolAddress, Option<ControllerId>> =
                    snapshot.aliases.pools().map(|p| (p, snapshot.aliases.owner_of(p))).collect();
                exhaustive.assert(replayed == recorded, i, t, || "alias replay diverges from snapshot".into());
                let masters: BTreeSet<Option<ControllerId>> =
                    live.iter().map(|c| cell.get(c).copied().flatten()).collect();
                let unique = masters.len() == 1
                    && masters.iter().next().unwrap().is_some_and(|m| live.contains(&m))
                    && snapshot.masters.len() == 1;
                master.assert(unique, i, t, || {
                    format!("cells {masters:?}, masters {:?} at quiescence", snapshot.masters)
                });
            }
            TraceEvent::Summary { summary } => {
                online.assert(summary.violations.is_empty(), i, t, || summary.violations.join("; "));
            }
            _ => {}
        }
    }

    Verdict {
        checks: vec![
            disjoint.done(),
            exhaustive.done(),
            master.done(),
            views.done(),
            rba.done(),
            orphan.done(),
            reconnect.done(),
            online.done(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace::TraceRecord;
    use crate::harness::{run, Scenario};

    fn sample() -> Trace {
        let sc = Scenario::from_json(
            r#"{"schema_version": 1, "controllers": [{"id": 1}, {"id": 2}], "switches": 3, "end_ms": 1500,
                "failure_detector": {"discovery_timeout_ms": 200},
                "events": [{"time_ms": 800, "kind": "fail-controller", "controller": 1}]}"#,
        )
        .unwrap();
        run(&sc, 4)
    }

    #[test]
    fn closed_loop_passes() {
        let t = sample();
        let v = check(&t);
        assert!(v.passed(), "{v}");
        assert!(v.get(DISJOINT).unwrap().checked > 0);
        assert!(v.get(MASTER_UNIQUE).unwrap().checked >= 2);
    }

    #[test]
    fn double_ownership_is_flagged_at_its_index() {
        let mut t = sample();
        let (at, pool, holder) = t
            .records
            .iter()
            .enumerate()
            .find_map(|(i, r)| match (&r.event, r.node) {
                (TraceEvent::AliasAcquired { pool }, Node::Controller(c)) => Some((i, *pool, c)),
                _ => None,
            })
            .unwrap();
        let intruder = ControllerId(holder.0 % 2 + 1);
        let rec = TraceRecord {
            time: t.records[at].time,
            node: Node::Controller(intruder),
            event: TraceEvent::AliasAcquired { pool },
        };
        t.records.insert(at + 1, rec);
        let v = check(&t);
        let d = v.get(DISJOINT).unwrap();
        assert!(!d.passed);
        assert_eq!(d.first_violation.as_ref().unwrap().index, at + 1);
    }
}
