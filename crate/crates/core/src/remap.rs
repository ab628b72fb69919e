//! Mapping lifecycle: statistics, imbalance detection, mapping generation,
//! the per-cycle migration plan (switch order plus first point of contact)
//! and the per-controller MOVE step over alias ownership.
//!
//! Message passing for MOVE lives in the simulator; everything here is pure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{
    diff_mappings, AliasConflict, AliasTable, ControllerId, ControllerSwitchMapping, DiffError,
    Networks, PoolAddress, SwitchId, Vertex,
};
use crate::scalar::{imbalance_ratio, Load};

pub use crate::netmodel::MigrationOrder;

/// System statistics fed to mapping generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats<L> {
    /// Flow-request rate per switch, requests per simulated second.
    pub switch_rate: BTreeMap<SwitchId, L>,
    /// Externally measured controller load. When absent, load is derived
    /// from `switch_rate` and the mapping.
    pub controller_load: BTreeMap<ControllerId, L>,
    pub link_traffic: BTreeMap<(Vertex, Vertex), L>,
}

impl<L: Load> Default for Stats<L> {
    fn default() -> Self {
        Self {
            switch_rate: BTreeMap::new(),
            controller_load: BTreeMap::new(),
            link_traffic: BTreeMap::new(),
        }
    }
}

impl<L: Load> Stats<L> {
    pub fn uniform<I: IntoIterator<Item = SwitchId>>(switches: I, rate: L) -> Self {
        Self {
            switch_rate: switches.into_iter().map(|s| (s, rate)).collect(),
            ..Self::default()
        }
    }

    pub fn rate(&self, s: SwitchId) -> L {
        self.switch_rate.get(&s).copied().unwrap_or_else(L::zero)
    }

    /// Assigned-switch count weighted by flow rate.
    pub fn controller_loads(
        &self,
        m: &ControllerSwitchMapping,
        controllers: &BTreeSet<ControllerId>,
    ) -> BTreeMap<ControllerId, L> {
        let mut loads: BTreeMap<ControllerId, L> =
            controllers.iter().map(|&c| (c, L::zero())).collect();
        for a in m.iter() {
            if let Some(l) = loads.get_mut(&a.controller) {
                *l = *l + self.rate(a.switch);
            }
        }
        for (c, l) in &self.controller_load {
            if let Some(slot) = loads.get_mut(c) {
                *slot = *l;
            }
        }
        loads
    }

    pub fn is_valid(&self) -> bool {
        self.switch_rate
            .values()
            .chain(self.controller_load.values())
            .chain(self.link_traffic.values())
            .all(|x| !x.is_negative_load())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RebalanceConfig {
    /// Trigger when `max load / min load` exceeds this (>= 1).
    pub imbalance_ratio_threshold: f64,
    pub rebalance_check_period_ms: f64,
    /// When false only membership changes, incomplete mappings and forced
    /// requests start a cycle.
    pub imbalance_trigger: bool,
}

impl Default for RebalanceConfig {
    fn default() -> Self {
        Self {
            imbalance_ratio_threshold: 1.5,
            rebalance_check_period_ms: 100.0,
            imbalance_trigger: true,
        }
    }
}

impl RebalanceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.imbalance_ratio_threshold >= 1.0) {
            return Err("imbalance_ratio_threshold must be >= 1".into());
        }
        if !(self.rebalance_check_period_ms > 0.0) {
            return Err("rebalance_check_period_ms must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RemapError {
    #[error("no live controllers to map switches onto")]
    NoLiveControllers,
    #[error("neither {old:?} nor {new} is in the current view")]
    NoContact {
        old: Option<ControllerId>,
        new: ControllerId,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Placement constraints: switch -> required controller. Pins naming a
/// controller outside the live set are ignored.
pub type Pins = BTreeMap<SwitchId, ControllerId>;

/// Generates a complete mapping over `live` controllers.
///
/// Greedy: live assignments are kept, pinned switches placed, orphans
/// (unassigned or on dead controllers) go heaviest-first to the least loaded
/// controller. Then batches of single-switch moves, one from every
/// max-loaded controller to the currently least loaded one, are committed
/// while they lower the maximum load. Ties go to the lowest rank and
/// switch index.
pub fn generate_mapping<L: Load>(
    nets: &Networks,
    current: &ControllerSwitchMapping,
    stats: &Stats<L>,
    live: &BTreeSet<ControllerId>,
    pins: &Pins,
) -> Result<ControllerSwitchMapping, RemapError> {
    if live.is_empty() {
        return Err(RemapError::NoLiveControllers);
    }
    let current_map = current.as_map();
    let mut placed: BTreeMap<SwitchId, ControllerId> = BTreeMap::new();
    let mut pinned = BTreeSet::new();
    let mut orphans = Vec::new();
    for s in nets.b.switches() {
        match (pins.get(&s), current_map.get(&s)) {
            (Some(p), _) if live.contains(p) => {
                placed.insert(s, *p);
                pinned.insert(s);
            }
            (_, Some(c)) if live.contains(c) => {
                placed.insert(s, *c);
            }
            _ => orphans.push(s),
        }
    }

    let mut loads: BTreeMap<ControllerId, L> = live.iter().map(|&c| (c, L::zero())).collect();
    for (&s, c) in &placed {
        let slot = loads.get_mut(c).expect("placed on live controller");
        *slot = *slot + stats.rate(s);
    }

    // Heaviest first, lowest index on ties (stable sort keeps index order).
    orphans.sort_by(|a, b| {
        stats
            .rate(*b)
            .partial_cmp(&stats.rate(*a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for s in orphans {
        let target = least_loaded(&loads, None);
        let slot = loads.get_mut(&target).unwrap();
        *slot = *slot + stats.rate(s);
        placed.insert(s, target);
    }

    loop {
        let max = loads.values().fold(L::zero(), |acc, &l| acc.max_of(l));
        let at_max: Vec<ControllerId> = loads
            .iter()
            .filter(|(_, &l)| l == max)
            .map(|(&c, _)| c)
            .collect();
        let mut trial_loads = loads.clone();
        let mut trial_placed = placed.clone();
        let mut ok = true;
        for donor in at_max {
            let dest = least_loaded(&trial_loads, Some(donor));
            if dest == donor {
                ok = false;
                break;
            }
            match best_move(
                donor,
                dest,
                &trial_placed,
                &pinned,
                &current_map,
                &trial_loads,
                stats,
                max,
            ) {
                Some(s) => {
                    let w = stats.rate(s);
                    *trial_loads.get_mut(&donor).unwrap() = trial_loads[&donor] - w;
                    *trial_loads.get_mut(&dest).unwrap() = trial_loads[&dest] + w;
                    trial_placed.insert(s, dest);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        let new_max = trial_loads
            .values()
            .fold(L::zero(), |acc, &l| acc.max_of(l));
        if ok && new_max < max {
            loads = trial_loads;
            placed = trial_placed;
        } else {
            break;
        }
    }

    Ok(placed.into_iter().map(|(s, c)| (c, s)).collect())
}

fn least_loaded<L: Load>(loads: &BTreeMap<ControllerId, L>, exclude: Option<ControllerId>) -> ControllerId {
    let mut best: Option<(ControllerId, L)> = None;
    for (&c, &l) in loads {
        if Some(c) == exclude {
            continue;
        }
        if best.is_none_or(|(_, bl)| l < bl) {
            best = Some((c, l));
        }
    }
    best.map(|(c, _)| c).or(exclude).expect("non-empty load table")
}

/// Switch on `donor` whose move to `dest` keeps both strictly under `max`,
/// minimizing the larger of the two resulting loads, then the migration
/// delta against `original`, then switch index.
#[allow(clippy::too_many_arguments)]
fn best_move<L: Load>(
    donor: ControllerId,
    dest: ControllerId,
    placed: &BTreeMap<SwitchId, ControllerId>,
    pinned: &BTreeSet<SwitchId>,
    original: &BTreeMap<SwitchId, ControllerId>,
    loads: &BTreeMap<ControllerId, L>,
    stats: &Stats<L>,
    max: L,
) -> Option<SwitchId> {
    let ld = loads[&donor];
    let lt = loads[&dest];
    let mut best: Option<(L, i32, SwitchId)> = None;
    for (&s, &c) in placed {
        if c != donor || pinned.contains(&s) {
            continue;
        }
        let w = stats.rate(s);
        if w <= L::zero() || !(lt + w < max) || !(ld - w < max) {
            continue;
        }
        let pair_max = (ld - w).max_of(lt + w);
        let delta = match original.get(&s) {
            Some(&o) if o == dest => -1,
            Some(&o) if o == donor => 1,
            _ => 0,
        };
        let better = match best {
            None => true,
            Some((bm, bd, _)) => pair_max < bm || (pair_max == bm && delta < bd),
        };
        if better {
            best = Some((pair_max, delta, s));
        }
    }
    best.map(|(_, _, s)| s)
}

/// First point of contact for a migration: the old controller if it is
/// still in the view, otherwise the new one.
pub fn coalesce(
    c_old: Option<ControllerId>,
    c_new: ControllerId,
    view: &BTreeSet<ControllerId>,
) -> Result<ControllerId, RemapError> {
    match c_old {
        Some(o) if view.contains(&o) => Ok(o),
        _ if view.contains(&c_new) => Ok(c_new),
        _ => Err(RemapError::NoContact {
            old: c_old,
            new: c_new,
        }),
    }
}

/// One dispatch of a SETMAPPING cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dispatch {
    pub order: MigrationOrder,
    pub contact: ControllerId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub dispatches: Vec<Dispatch>,
    /// Orders with no live point of contact, left for the next cycle.
    pub deferred: Vec<MigrationOrder>,
}

/// The migration plan for `m_old -> m_new`, ascending by switch index.
pub fn plan_set_mapping(
    m_old: &ControllerSwitchMapping,
    m_new: &ControllerSwitchMapping,
    switches: &BTreeSet<SwitchId>,
    view: &BTreeSet<ControllerId>,
) -> Result<MigrationPlan, RemapError> {
    let mut plan = MigrationPlan::default();
    for order in diff_mappings(m_old, m_new, switches)? {
        match coalesce(order.from, order.to, view) {
            Ok(contact) => plan.dispatches.push(Dispatch { order, contact }),
            Err(_) => plan.deferred.push(order),
        }
    }
    Ok(plan)
}

/// Arguments of a MOVE call. The full five-argument form is forwarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveArgs {
    pub switch: SwitchId,
    pub c_old: Option<ControllerId>,
    pub c_new: ControllerId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MoveStep {
    /// Released `P_l` (if held); MOVE must now run at `forward_to`.
    Released { pool: PoolAddress, held: bool, forward_to: ControllerId },
    /// Acquired `P_l`; the switch must be sent a gratuitous ARP.
    Acquired { pool: PoolAddress, arp_ping: SwitchId },
    NoOp,
    Conflict(AliasConflict),
}

/// MOVE executed at controller `at` against the alias table.
pub fn move_step(at: ControllerId, args: &MoveArgs, aliases: &mut AliasTable) -> MoveStep {
    let pool = PoolAddress::for_switch(args.switch);
    if Some(at) == args.c_old && at != args.c_new {
        let held = aliases.release(pool, at);
        MoveStep::Released {
            pool,
            held,
            forward_to: args.c_new,
        }
    } else if at == args.c_new {
        match aliases.acquire(pool, at) {
            Ok(()) => MoveStep::Acquired {
                pool,
                arp_ping: args.switch,
            },
            Err(e) => MoveStep::Conflict(e),
        }
    } else {
        MoveStep::NoOp
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MoveOutcome {
    Completed,
    Timeout,
    Conflict { owner: ControllerId },
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationEntry {
    pub order: MigrationOrder,
    pub contact: Option<ControllerId>,
    pub outcome: MoveOutcome,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MigrationReport {
    pub entries: Vec<MigrationEntry>,
}

impl MigrationReport {
    pub fn completed(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.outcome == MoveOutcome::Completed)
            .count()
    }

    pub fn all_completed(&self) -> bool {
        self.completed() == self.entries.len()
    }
}

/// Alias-level events produced by [`execute_plan_locally`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalEvent {
    Release(PoolAddress, ControllerId),
    Acquire(PoolAddress, ControllerId),
    ArpPing(SwitchId, ControllerId),
}

/// Runs a plan synchronously against an alias table, with `alive`
/// deciding which controllers answer. Used for unit tests and dry runs;
/// the simulator performs the same steps over messages.
pub fn execute_plan_locally(
    plan: &MigrationPlan,
    aliases: &mut AliasTable,
    alive: &BTreeSet<ControllerId>,
) -> (MigrationReport, Vec<LocalEvent>) {
    let mut report = MigrationReport::default();
    let mut events = Vec::new();
    for d in &plan.dispatches {
        let mut outcome = MoveOutcome::Timeout;
        let mut at = d.contact;
        for _ in 0..2 {
            if !alive.contains(&at) {
                outcome = MoveOutcome::Timeout;
                break;
            }
            let args = MoveArgs {
                switch: d.order.switch,
                c_old: d.order.from,
                c_new: d.order.to,
            };
            match move_step(at, &args, aliases) {
                MoveStep::Released {
                    pool,
                    held,
                    forward_to,
                } => {
                    if held {
                        events.push(LocalEvent::Release(pool, at));
                    }
                    at = forward_to;
                }
                MoveStep::Acquired { pool, arp_ping } => {
                    events.push(LocalEvent::Acquire(pool, at));
                    events.push(LocalEvent::ArpPing(arp_ping, at));
                    outcome = MoveOutcome::Completed;
                    break;
                }
                MoveStep::Conflict(c) => {
                    outcome = MoveOutcome::Conflict { owner: c.owner };
                    break;
                }
                MoveStep::NoOp => break,
            }
        }
        report.entries.push(MigrationEntry {
            order: d.order,
            contact: Some(d.contact),
            outcome,
            latency_ms: None,
        });
    }
    for o in &plan.deferred {
        report.entries.push(MigrationEntry {
            order: *o,
            contact: None,
            outcome: MoveOutcome::Deferred,
            latency_ms: None,
        });
    }
    (report, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RebalanceReason {
    Forced,
    MembershipChanged,
    Incomplete,
    StoreDiverged,
    Imbalance {
        #[serde(with = "unbounded_ratio")]
        ratio: f64,
    },
}

/// An idle controller makes the ratio infinite, written as `"inf"`.
mod unbounded_ratio {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Named(s) => Err(serde::de::Error::custom(format!("bad ratio {s:?}"))),
        }
    }
}

/// What the master observes at a rebalance tick.
#[derive(Debug, Clone)]
pub struct RebalanceInputs<'a, L> {
    /// Mapping implied by actual alias ownership.
    pub observed: &'a ControllerSwitchMapping,
    /// Mapping held in the replicated store.
    pub stored: &'a ControllerSwitchMapping,
    pub switches: &'a BTreeSet<SwitchId>,
    pub live: &'a BTreeSet<ControllerId>,
    pub stats: &'a Stats<L>,
    pub membership_changed: bool,
    pub forced: bool,
}

/// Whether a GENERATEMAPPING/SETMAPPING cycle is due, and why.
pub fn rebalance_decision<L: Load>(
    cfg: &RebalanceConfig,
    inp: &RebalanceInputs<'_, L>,
) -> Option<RebalanceReason> {
    if inp.forced {
        return Some(RebalanceReason::Forced);
    }
    if inp.membership_changed {
        return Some(RebalanceReason::MembershipChanged);
    }
    let observed = inp.observed.as_map();
    let complete = inp
        .switches
        .iter()
        .all(|s| observed.get(s).is_some_and(|c| inp.live.contains(c)));
    if !complete {
        return Some(RebalanceReason::Incomplete);
    }
    if inp.observed != inp.stored {
        return Some(RebalanceReason::StoreDiverged);
    }
    if cfg.imbalance_trigger && inp.live.len() >= 2 {
        let loads: Vec<L> = inp
            .stats
            .controller_loads(inp.observed, inp.live)
            .into_values()
            .collect();
        let ratio = imbalance_ratio(&loads);
        if ratio > cfg.imbalance_ratio_threshold {
            return Some(RebalanceReason::Imbalance { ratio });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{alias_set, controller_of, validate_mapping, MappingVerdict};

    fn c(i: u32) -> ControllerId {
        ControllerId(i)
    }
    fn s(i: u32) -> SwitchId {
        SwitchId(i)
    }
    fn live(ids: &[u32]) -> BTreeSet<ControllerId> {
        ids.iter().map(|&i| c(i)).collect()
    }
    fn nets(n: u32, m: u32) -> Networks {
        let cs: Vec<_> = (1..=n).map(c).collect();
        let ss: Vec<_> = (1..=m).map(s).collect();
        Networks::full(&cs, &ss)
    }
    fn fig3a() -> ControllerSwitchMapping {
        ControllerSwitchMapping::from_pairs([
            (c(1), s(1)),
            (c(1), s(2)),
            (c(2), s(3)),
            (c(2), s(4)),
            (c(2), s(5)),
        ])
    }
    fn fig3c() -> ControllerSwitchMapping {
        let mut m = fig3a();
        m.assign(s(3), c(1));
        m
    }

    #[test]
    fn generate_split_from_empty() {
        let n = nets(2, 5);
        let stats = Stats::uniform(n.switch_set(), 1u32);
        let m = generate_mapping(&n, &ControllerSwitchMapping::new(), &stats, &live(&[1, 2]), &Pins::new())
            .unwrap();
        let loads = stats.controller_loads(&m, &live(&[1, 2]));
        assert_eq!(loads[&c(1)], 3);
        assert_eq!(loads[&c(2)], 2);
    }

    #[test]
    fn generate_single_live_takes_all() {
        let n = nets(2, 5);
        let stats = Stats::uniform(n.switch_set(), 1.0f64);
        let m = generate_mapping(&n, &fig3c(), &stats, &live(&[1]), &Pins::new()).unwrap();
        assert_eq!(m.switches_of(c(1)).count(), 5);
    }

    #[test]
    fn generate_relieves_overloaded_c2_by_moving_s3() {
        let n = nets(2, 5);
        let mut stats = Stats::uniform(n.switch_set(), 1.0f64);
        stats.switch_rate.insert(s(4), 2.0);
        let m = generate_mapping(&n, &fig3a(), &stats, &live(&[1, 2]), &Pins::new()).unwrap();
        assert_eq!(m, fig3c());
    }

    #[test]
    fn generate_errors_without_live_controllers() {
        let n = nets(2, 2);
        let stats = Stats::uniform(n.switch_set(), 1u32);
        assert_eq!(
            generate_mapping(&n, &ControllerSwitchMapping::new(), &stats, &BTreeSet::new(), &Pins::new()),
            Err(RemapError::NoLiveControllers)
        );
    }

    #[test]
    fn pins_are_honored() {
        let n = nets(2, 4);
        let stats = Stats::uniform(n.switch_set(), 1u32);
        let pins = Pins::from([(s(1), c(2)), (s(2), c(2)), (s(3), c(7))]);
        let m = generate_mapping(&n, &ControllerSwitchMapping::new(), &stats, &live(&[1, 2]), &pins)
            .unwrap();
        assert_eq!(controller_of(&m, s(1)), Some(c(2)));
        assert_eq!(controller_of(&m, s(2)), Some(c(2)));
        assert_eq!(m.switches_of(c(1)).count(), 2);
    }

    #[test]
    fn coalesce_examples() {
        let v = live(&[1, 2]);
        assert_eq!(coalesce(Some(c(2)), c(1), &v), Ok(c(2)));
        assert_eq!(coalesce(Some(c(2)), c(1), &live(&[1])), Ok(c(1)));
        assert_eq!(coalesce(None, c(1), &v), Ok(c(1)));
        assert!(matches!(
            coalesce(Some(c(2)), c(1), &live(&[3])),
            Err(RemapError::NoContact { .. })
        ));
    }

    #[test]
    fn move_step_examples() {
        let ss = BTreeSet::from_iter((1..=5).map(s));
        let mut t = AliasTable::from_mapping(&fig3a(), &ss);
        let args = MoveArgs {
            switch: s(3),
            c_old: Some(c(2)),
            c_new: c(1),
        };
        assert_eq!(move_step(c(3), &args, &mut t), MoveStep::NoOp);
        assert_eq!(
            move_step(c(2), &args, &mut t),
            MoveStep::Released {
                pool: PoolAddress(3),
                held: true,
                forward_to: c(1)
            }
        );
        assert_eq!(t.owner_of(PoolAddress(3)), None);
        assert_eq!(
            move_step(c(1), &args, &mut t),
            MoveStep::Acquired {
                pool: PoolAddress(3),
                arp_ping: s(3)
            }
        );
        assert_eq!(alias_set(&t, c(1)).len(), 3);

        // acquiring an alias still owned elsewhere is a loud conflict
        let args = MoveArgs {
            switch: s(4),
            c_old: None,
            c_new: c(1),
        };
        assert!(matches!(move_step(c(1), &args, &mut t), MoveStep::Conflict(_)));
        assert_eq!(t.owner_of(PoolAddress(4)), Some(c(2)));
    }

    #[test]
    fn set_mapping_plans() {
        let ss = BTreeSet::from_iter((1..=5).map(s));
        let plan = plan_set_mapping(&fig3a(), &fig3c(), &ss, &live(&[1, 2])).unwrap();
        assert_eq!(plan.dispatches.len(), 1);
        assert_eq!(plan.dispatches[0].contact, c(2));

        let fig3d: ControllerSwitchMapping = (1..=5).map(|i| (c(1), s(i))).collect();
        let plan = plan_set_mapping(&fig3c(), &fig3d, &ss, &live(&[1])).unwrap();
        assert_eq!(plan.dispatches.len(), 2);
        assert!(plan.dispatches.iter().all(|d| d.contact == c(1)));

        let plan = plan_set_mapping(&fig3a(), &fig3a(), &ss, &live(&[1, 2])).unwrap();
        assert!(plan.dispatches.is_empty() && plan.deferred.is_empty());
    }

    #[test]
    fn local_execution_releases_before_acquire() {
        let ss = BTreeSet::from_iter((1..=5).map(s));
        let mut t = AliasTable::from_mapping(&fig3a(), &ss);
        let plan = plan_set_mapping(&fig3a(), &fig3c(), &ss, &live(&[1, 2])).unwrap();
        let (report, events) = execute_plan_locally(&plan, &mut t, &live(&[1, 2]));
        assert!(report.all_completed());
        assert_eq!(
            events,
            vec![
                LocalEvent::Release(PoolAddress(3), c(2)),
                LocalEvent::Acquire(PoolAddress(3), c(1)),
                LocalEvent::ArpPing(s(3), c(1)),
            ]
        );
        assert_eq!(t, AliasTable::from_mapping(&fig3c(), &ss));
    }

    #[test]
    fn rebalance_decision_cases() {
        let ss = BTreeSet::from_iter((1..=5).map(s));
        let stats = Stats::uniform(ss.iter().copied(), 1.0f64);
        let cfg = RebalanceConfig::default();
        let m = fig3a();
        let v = live(&[1, 2]);
        let base = RebalanceInputs {
            observed: &m,
            stored: &m,
            switches: &ss,
            live: &v,
            stats: &stats,
            membership_changed: false,
            forced: false,
        };
        // 3 vs 2 is exactly 1.5: not above the threshold
        assert_eq!(rebalance_decision(&cfg, &base), None);
        let v1 = live(&[1]);
        let dead = RebalanceInputs { live: &v1, ..base.clone() };
        assert_eq!(rebalance_decision(&cfg, &dead), Some(RebalanceReason::Incomplete));
        let mut heavy = stats.clone();
        heavy.switch_rate.insert(s(4), 2.0);
        let imb = RebalanceInputs { stats: &heavy, ..base.clone() };
        assert_eq!(
            rebalance_decision(&cfg, &imb),
            Some(RebalanceReason::Imbalance { ratio: 2.0 })
        );
    }

    #[test]
    fn infinite_ratio_roundtrips() {
        for ratio in [2.5, f64::INFINITY] {
            let r = RebalanceReason::Imbalance { ratio };
            let text = serde_json::to_string(&r).unwrap();
            assert_eq!(serde_json::from_str::<RebalanceReason>(&text).unwrap(), r);
        }
        assert!(serde_json::to_string(&RebalanceReason::Imbalance { ratio: f64::INFINITY })
            .unwrap()
            .contains("\"inf\""));
    }

    // --- brute-force oracle for unit loads -------------------------------

    fn enumerate_assignments(live: &[ControllerId], m: u32) -> Vec<Vec<ControllerId>> {
        let mut out = vec![Vec::new()];
        for _ in 0..m {
            let mut next = Vec::with_capacity(out.len() * live.len());
            for base in &out {
                for &c in live {
                    let mut x = base.clone();
                    x.push(c);
                    next.push(x);
                }
            }
            out = next;
        }
        out
    }

    /// (optimal max load, minimal migrations among optimal assignments)
    fn brute_force(
        live: &[ControllerId],
        current: &BTreeMap<SwitchId, ControllerId>,
        m: u32,
    ) -> (u32, u32) {
        let mut best = (u32::MAX, u32::MAX);
        for a in enumerate_assignments(live, m) {
            let mut loads = BTreeMap::new();
            let mut migrations = 0;
            for (i, &ctl) in a.iter().enumerate() {
                *loads.entry(ctl).or_insert(0u32) += 1;
                if current.get(&s(i as u32 + 1)) != Some(&ctl) {
                    migrations += 1;
                }
            }
            let max = loads.values().copied().max().unwrap_or(0);
            if (max, migrations) < best {
                best = (max, migrations);
            }
        }
        best
    }

    #[test]
    fn generate_matches_brute_force_unit_loads() {
        let mut instances = 0;
        for n in 1..=3u32 {
            for m in 0..=6u32 {
                let net = nets(n, m);
                let stats = Stats::uniform(net.switch_set(), 1u32);
                let all: Vec<ControllerId> = (1..=n).map(c).collect();
                // current: each switch unassigned, or on any of n controllers, or on a dead one
                let choices = n + 2;
                for code in 0..choices.pow(m) {
                    let mut cur = ControllerSwitchMapping::new();
                    let mut x = code;
                    for sw in 1..=m {
                        let k = x % choices;
                        x /= choices;
                        if k > 0 {
                            cur.insert(c(k), s(sw));
                        }
                    }
                    let live_set: BTreeSet<_> = all.iter().copied().collect();
                    let got = generate_mapping(&net, &cur, &stats, &live_set, &Pins::new()).unwrap();
                    assert_eq!(
                        validate_mapping(&got, &live_set, &net.switch_set()),
                        MappingVerdict::Complete
                    );
                    let loads = stats.controller_loads(&got, &live_set);
                    let max = loads.values().copied().max().unwrap_or(0);
                    let cur_map = cur.as_map();
                    let migrations = net
                        .switch_set()
                        .iter()
                        .filter(|&&sw| cur_map.get(&sw) != controller_of(&got, sw).as_ref())
                        .count() as u32;
                    let (opt_max, opt_mig) = brute_force(&all, &cur_map, m);
                    assert_eq!(max, opt_max, "n={n} m={m} cur={cur:?} got={got:?}");
                    assert_eq!(migrations, opt_mig, "n={n} m={m} cur={cur:?} got={got:?}");
                    instances += 1;
                }
            }
        }
        assert!(instances > 1000);
    }
}
