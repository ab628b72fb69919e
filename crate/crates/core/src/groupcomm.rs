//! Group communication for the controller cluster.
//!
//! Each controller runs a [`GroupMember`]: a sans-IO state machine that
//! consumes messages and timer firings and emits [`GcOutput`]s (sends,
//! timers, view installations, deliveries). It provides
//!
//! * membership views driven by heartbeat failure detection, with
//!   discovery on startup and merge after a partition heals,
//! * total-order broadcast through a sequencer (the lowest rank of the view),
//! * a replicated state machine on top of that stream holding the
//!   [`MasterCell`] register and the [`ReplicatedStore`] mapping.
//!
//! Sequenced messages from a view other than the installed one are dropped
//! and counted (view-synchronous discard). The protocol assumes link
//! latency well below the suspect timeout; scenario validation enforces it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{ControllerId, ControllerSwitchMapping};
use crate::sim::SimTime;

/// View identifier: `(epoch, installer)`, ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewId {
    pub epoch: u64,
    pub coordinator: ControllerId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MembershipView {
    pub id: ViewId,
    /// Ascending rank order; the first member coordinates and sequences.
    pub members: Vec<ControllerId>,
}

impl MembershipView {
    pub fn new(id: ViewId, members: impl IntoIterator<Item = ControllerId>) -> Self {
        let mut members: Vec<_> = members.into_iter().collect();
        members.sort();
        members.dedup();
        Self { id, members }
    }

    pub fn coordinator(&self) -> ControllerId {
        self.members[0]
    }

    pub fn contains(&self, c: ControllerId) -> bool {
        self.members.binary_search(&c).is_ok()
    }

    pub fn member_set(&self) -> BTreeSet<ControllerId> {
        self.members.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureDetectorConfig {
    pub heartbeat_period_ms: f64,
    pub suspect_timeout_ms: f64,
    pub discovery_timeout_ms: f64,
}

impl Default for FailureDetectorConfig {
    fn default() -> Self {
        Self {
            heartbeat_period_ms: 10.0,
            suspect_timeout_ms: 40.0,
            discovery_timeout_ms: 9000.0,
        }
    }
}

impl FailureDetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.heartbeat_period_ms > 0.0) {
            return Err("heartbeat_period_ms must be > 0".into());
        }
        if !(self.suspect_timeout_ms > self.heartbeat_period_ms) {
            return Err("suspect_timeout_ms must exceed heartbeat_period_ms".into());
        }
        if !(self.discovery_timeout_ms > 0.0) {
            return Err("discovery_timeout_ms must be > 0".into());
        }
        Ok(())
    }

    fn heartbeat(&self) -> SimTime {
        SimTime::from_ms(self.heartbeat_period_ms)
    }
    fn suspect(&self) -> SimTime {
        SimTime::from_ms(self.suspect_timeout_ms)
    }
    fn discovery(&self) -> SimTime {
        SimTime::from_ms(self.discovery_timeout_ms)
    }
}

/// The replicated master register. `None` is the "no master" sentinel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MasterCell {
    pub value: Option<ControllerId>,
}

impl MasterCell {
    pub fn get(&self) -> Option<ControllerId> {
        self.value
    }

    pub fn compare_and_swap(&mut self, expected: Option<ControllerId>, new: Option<ControllerId>) -> bool {
        if self.value == expected {
            self.value = new;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatedStore {
    pub version: u64,
    pub mapping: ControllerSwitchMapping,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId {
    pub node: ControllerId,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    Get,
    Cas {
        expected: Option<ControllerId>,
        new: Option<ControllerId>,
    },
    StoreUpdate {
        mapping: ControllerSwitchMapping,
    },
    Payload {
        data: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsmOp {
    pub id: OpId,
    pub kind: OpKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum OpResult {
    Value { value: Option<ControllerId> },
    Swapped { ok: bool },
    Version { version: u64 },
    Ack,
    Duplicate,
}

/// State replicated by applying sequenced ops in delivery order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsmState {
    pub cell: MasterCell,
    pub store: ReplicatedStore,
    /// Highest op sequence applied per submitting node (at-most-once).
    pub applied: BTreeMap<ControllerId, u64>,
}

impl RsmState {
    pub fn apply(&mut self, op: &RsmOp) -> OpResult {
        let last = self.applied.entry(op.id.node).or_insert(0);
        if op.id.seq <= *last {
            return OpResult::Duplicate;
        }
        *last = op.id.seq;
        match &op.kind {
            OpKind::Get => OpResult::Value {
                value: self.cell.get(),
            },
            OpKind::Cas { expected, new } => OpResult::Swapped {
                ok: self.cell.compare_and_swap(*expected, *new),
            },
            OpKind::StoreUpdate { mapping } => {
                self.store.version += 1;
                self.store.mapping = mapping.clone();
                OpResult::Version {
                    version: self.store.version,
                }
            }
            OpKind::Payload { .. } => OpResult::Ack,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GcMsg {
    Heartbeat { view: ViewId, members: Vec<ControllerId> },
    Probe,
    ProbeReply { member_of: Option<ViewId> },
    Join { last: Option<ViewId> },
    ViewInstall { view: MembershipView, snapshot: RsmState, seq: u64 },
    Submit { view: ViewId, op: RsmOp },
    Sequenced { view: ViewId, seq: u64, op: RsmOp },
}

impl GcMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            GcMsg::Heartbeat { .. } => "heartbeat",
            GcMsg::Probe => "probe",
            GcMsg::ProbeReply { .. } => "probe_reply",
            GcMsg::Join { .. } => "join",
            GcMsg::ViewInstall { .. } => "view_install",
            GcMsg::Submit { .. } => "submit",
            GcMsg::Sequenced { .. } => "sequenced",
        }
    }

    pub fn is_heartbeat(&self) -> bool {
        matches!(self, GcMsg::Heartbeat { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcTimer {
    Heartbeat,
    Suspect(ControllerId),
    DiscoveryDone,
    JoinTimeout(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum GcOutput {
    Send { to: ControllerId, msg: GcMsg },
    Timer { at: SimTime, timer: GcTimer },
    ViewInstalled(MembershipView),
    Suspected(ControllerId),
    Delivered { op: RsmOp, result: OpResult, local: bool },
    /// Excluded by a view with a lower coordinator: drop local state and rejoin.
    Reset { joining: ControllerId },
    Dropped { reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GcError {
    #[error("{0} is not a member of an installed view")]
    NotMember(ControllerId),
    #[error("{0} is already a member")]
    AlreadyMember(ControllerId),
    #[error("invalid mapping rejected locally")]
    InvalidMapping,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Idle,
    Discovering { heard: BTreeSet<ControllerId> },
    Joining { coordinator: ControllerId, attempt: u64 },
    Member,
}

#[derive(Clone, Debug)]
pub struct GroupMember {
    me: ControllerId,
    cfg: FailureDetectorConfig,
    peers: BTreeSet<ControllerId>,
    status: Status,
    view: Option<MembershipView>,
    /// Last view installed here, kept across resets so ids keep increasing.
    last_installed: Option<ViewId>,
    max_epoch: u64,
    last_heard: BTreeMap<ControllerId, SimTime>,
    suspected: BTreeSet<ControllerId>,
    next_seq: u64,
    expected_seq: u64,
    buffer: BTreeMap<u64, RsmOp>,
    rsm: RsmState,
    pending: Vec<RsmOp>,
    next_op: u64,
    joins: BTreeMap<ControllerId, Option<ViewId>>,
    join_attempt: u64,
    heartbeating: bool,
}

impl GroupMember {
    pub fn new(me: ControllerId, cfg: FailureDetectorConfig, peers: impl IntoIterator<Item = ControllerId>) -> Self {
        Self {
            me,
            cfg,
            peers: peers.into_iter().filter(|&p| p != me).collect(),
            status: Status::Idle,
            view: None,
            last_installed: None,
            max_epoch: 0,
            last_heard: BTreeMap::new(),
            suspected: BTreeSet::new(),
            next_seq: 0,
            expected_seq: 0,
            buffer: BTreeMap::new(),
            rsm: RsmState::default(),
            pending: Vec::new(),
            next_op: 0,
            joins: BTreeMap::new(),
            join_attempt: 0,
            heartbeating: false,
        }
    }

    pub fn me(&self) -> ControllerId {
        self.me
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_member(&self) -> bool {
        self.status == Status::Member
    }

    /// Installed view, if a member.
    pub fn view(&self) -> Option<&MembershipView> {
        self.view.as_ref().filter(|_| self.is_member())
    }

    pub fn rsm(&self) -> &RsmState {
        &self.rsm
    }

    pub fn cell(&self) -> Option<ControllerId> {
        self.rsm.cell.get()
    }

    pub fn store(&self) -> &ReplicatedStore {
        &self.rsm.store
    }

    pub fn pending_ops(&self) -> &[RsmOp] {
        &self.pending
    }

    pub fn suspected(&self) -> &BTreeSet<ControllerId> {
        &self.suspected
    }

    /// Replaces the replicated state wholesale. Only meaningful before start.
    pub fn seed_state(&mut self, state: RsmState) {
        self.rsm = state;
    }

    pub fn add_peer(&mut self, p: ControllerId) {
        if p != self.me {
            self.peers.insert(p);
        }
    }

    pub fn is_coordinator(&self) -> bool {
        self.view().is_some_and(|v| v.coordinator() == self.me)
    }

    /// Starts discovery: probe every known peer, wait for the discovery timeout.
    pub fn start(&mut self, now: SimTime) -> Vec<GcOutput> {
        self.status = Status::Discovering {
            heard: BTreeSet::new(),
        };
        self.view = None;
        let mut out: Vec<GcOutput> = self
            .peers
            .iter()
            .map(|&p| GcOutput::Send {
                to: p,
                msg: GcMsg::Probe,
            })
            .collect();
        out.push(GcOutput::Timer {
            at: now + self.cfg.discovery(),
            timer: GcTimer::DiscoveryDone,
        });
        out
    }

    /// Starts as a member of an already formed view.
    pub fn start_formed(&mut self, now: SimTime, view: MembershipView) -> Vec<GcOutput> {
        let mut out = Vec::new();
        self.install(now, view, None, 0, &mut out);
        out
    }

    pub fn on_timer(&mut self, now: SimTime, timer: GcTimer) -> Vec<GcOutput> {
        let mut out = Vec::new();
        match timer {
            GcTimer::Heartbeat => {
                if let Some(v) = self.view() {
                    for &p in &self.peers {
                        out.push(GcOutput::Send {
                            to: p,
                            msg: GcMsg::Heartbeat {
                                view: v.id,
                                members: v.members.clone(),
                            },
                        });
                    }
                }
                out.push(GcOutput::Timer {
                    at: now + self.cfg.heartbeat(),
                    timer: GcTimer::Heartbeat,
                });
            }
            GcTimer::Suspect(p) => {
                let in_view = self.view().is_some_and(|v| v.contains(p));
                let heard = self.last_heard.get(&p).copied().unwrap_or(SimTime::ZERO);
                if in_view && heard + self.cfg.suspect() <= now && self.suspected.insert(p) {
                    out.push(GcOutput::Suspected(p));
                    self.maybe_reconfigure(now, &mut out);
                }
            }
            GcTimer::DiscoveryDone => {
                if let Status::Discovering { heard } = &self.status {
                    let lowest = heard.iter().next().copied().map_or(self.me, |h| h.min(self.me));
                    if lowest == self.me {
                        let members: Vec<_> = heard.iter().copied().chain([self.me]).collect();
                        self.install_new_view(now, members, &mut out);
                    } else {
                        self.begin_join(now, lowest, false, &mut out);
                    }
                }
            }
            GcTimer::JoinTimeout(attempt) => {
                if matches!(self.status, Status::Joining { attempt: a, .. } if a == attempt) {
                    out.extend(self.start(now));
                }
            }
        }
        out
    }

    pub fn on_message(&mut self, now: SimTime, from: ControllerId, sent: SimTime, msg: GcMsg) -> Vec<GcOutput> {
        let mut out = Vec::new();
        match msg {
            GcMsg::Heartbeat { view, members } => self.on_heartbeat(now, from, sent, view, members, &mut out),
            GcMsg::Probe => {
                let member_of = self.view().map(|v| v.id);
                if let Status::Discovering { heard } = &mut self.status {
                    heard.insert(from);
                }
                out.push(GcOutput::Send {
                    to: from,
                    msg: GcMsg::ProbeReply { member_of },
                });
            }
            GcMsg::ProbeReply { member_of } => {
                if let Status::Discovering { heard } = &mut self.status {
                    match member_of {
                        Some(_) => self.begin_join(now, from, true, &mut out),
                        None => {
                            heard.insert(from);
                        }
                    }
                }
            }
            GcMsg::Join { last } => self.on_join(now, from, last, &mut out),
            GcMsg::ViewInstall { view, snapshot, seq } => {
                let fresh = self.last_installed.is_none_or(|l| view.id > l);
                if view.contains(self.me) && fresh {
                    self.install(now, view, Some(snapshot), seq, &mut out);
                } else {
                    out.push(GcOutput::Dropped {
                        reason: "stale_view",
                    });
                }
            }
            GcMsg::Submit { view, op } => {
                let ok = self.is_coordinator()
                    && self.view.as_ref().is_some_and(|v| v.id == view && v.contains(from));
                if ok {
                    self.sequence(op, &mut out);
                } else {
                    out.push(GcOutput::Dropped {
                        reason: "submit_outside_view",
                    });
                }
            }
            GcMsg::Sequenced { view, seq, op } => {
                if self.view().is_some_and(|v| v.id == view) {
                    self.buffer.insert(seq, op);
                    self.drain(&mut out);
                } else {
                    out.push(GcOutput::Dropped {
                        reason: "sequenced_outside_view",
                    });
                }
            }
        }
        out
    }

    fn on_join(&mut self, now: SimTime, from: ControllerId, last: Option<ViewId>, out: &mut Vec<GcOutput>) {
        if let Some(l) = last {
            self.max_epoch = self.max_epoch.max(l.epoch);
        }
        if !self.is_coordinator() {
            out.push(GcOutput::Dropped {
                reason: "join_at_non_coordinator",
            });
            return;
        }
        let v = self.view.clone().expect("coordinator has view");
        if v.contains(from) && last.is_none_or(|l| l < v.id) {
            // lagging member: resend the current view with state
            out.push(GcOutput::Send {
                to: from,
                msg: GcMsg::ViewInstall {
                    view: v,
                    snapshot: self.rsm.clone(),
                    seq: self.next_seq,
                },
            });
        } else if last != Some(v.id) {
            self.joins.insert(from, last);
            self.maybe_reconfigure(now, out);
        }
    }

    fn on_heartbeat(
        &mut self,
        now: SimTime,
        from: ControllerId,
        sent: SimTime,
        their_view: ViewId,
        their_members: Vec<ControllerId>,
        out: &mut Vec<GcOutput>,
    ) {
        self.max_epoch = self.max_epoch.max(their_view.epoch);
        let their_coord = their_members.first().copied().unwrap_or(from);
        match &self.status {
            Status::Member => {
                let v = self.view.as_ref().expect("member has view");
                if v.id != their_view {
                    let includes_me = their_members.contains(&self.me);
                    if includes_me && (their_view > v.id || !v.contains(from)) {
                        out.push(GcOutput::Send {
                            to: their_coord,
                            msg: GcMsg::Join { last: Some(v.id) },
                        });
                    } else if !includes_me
                        && (their_coord < v.coordinator()
                            || (their_coord == v.coordinator() && their_view > v.id))
                    {
                        self.reset(now, their_coord, out);
                        return;
                    }
                }
                if v.contains(from) {
                    let slot = self.last_heard.entry(from).or_insert(sent);
                    if sent > *slot {
                        *slot = sent;
                    }
                    out.push(GcOutput::Timer {
                        at: sent + self.cfg.suspect(),
                        timer: GcTimer::Suspect(from),
                    });
                }
            }
            Status::Discovering { .. } => self.begin_join(now, their_coord, true, out),
            _ => {}
        }
    }

    fn reset(&mut self, now: SimTime, coordinator: ControllerId, out: &mut Vec<GcOutput>) {
        self.view = None;
        self.rsm = RsmState::default();
        self.pending.clear();
        self.buffer.clear();
        self.suspected.clear();
        self.joins.clear();
        self.last_heard.clear();
        out.push(GcOutput::Reset {
            joining: coordinator,
        });
        self.begin_join(now, coordinator, true, out);
    }

    fn begin_join(&mut self, now: SimTime, coordinator: ControllerId, send: bool, out: &mut Vec<GcOutput>) {
        self.join_attempt += 1;
        self.status = Status::Joining {
            coordinator,
            attempt: self.join_attempt,
        };
        if send {
            out.push(GcOutput::Send {
                to: coordinator,
                msg: GcMsg::Join {
                    last: self.last_installed,
                },
            });
        }
        out.push(GcOutput::Timer {
            at: now + self.cfg.discovery(),
            timer: GcTimer::JoinTimeout(self.join_attempt),
        });
    }

    /// Installs a new view if this node is the lowest unsuspected member and
    /// there is something to change.
    fn maybe_reconfigure(&mut self, now: SimTime, out: &mut Vec<GcOutput>) {
        let Some(v) = self.view().cloned() else {
            return;
        };
        let alive: Vec<ControllerId> = v
            .members
            .iter()
            .copied()
            .filter(|m| !self.suspected.contains(m))
            .collect();
        if alive.first() != Some(&self.me) {
            return;
        }
        let removed = alive.len() != v.members.len();
        let joins = std::mem::take(&mut self.joins);
        let rejoin = joins.keys().any(|j| v.contains(*j));
        let added: Vec<_> = joins.keys().copied().filter(|j| !v.contains(*j)).collect();
        if !removed && added.is_empty() && !rejoin {
            return;
        }
        let members: Vec<_> = alive.into_iter().chain(added).collect();
        self.install_new_view(now, members, out);
    }

    fn install_new_view(&mut self, now: SimTime, members: Vec<ControllerId>, out: &mut Vec<GcOutput>) {
        let base = self.last_installed.map_or(0, |l| l.epoch);
        let id = ViewId {
            epoch: self.max_epoch.max(base) + 1,
            coordinator: self.me,
        };
        let view = MembershipView::new(id, members);
        for &m in &view.members {
            if m != self.me {
                out.push(GcOutput::Send {
                    to: m,
                    msg: GcMsg::ViewInstall {
                        view: view.clone(),
                        snapshot: self.rsm.clone(),
                        seq: 0,
                    },
                });
            }
        }
        self.install(now, view, None, 0, out);
    }

    fn install(
        &mut self,
        now: SimTime,
        view: MembershipView,
        snapshot: Option<RsmState>,
        seq: u64,
        out: &mut Vec<GcOutput>,
    ) {
        self.max_epoch = self.max_epoch.max(view.id.epoch);
        self.last_installed = Some(view.id);
        if let Some(s) = snapshot {
            self.rsm = s;
        }
        self.status = Status::Member;
        self.suspected.clear();
        self.buffer.clear();
        self.next_seq = seq;
        self.expected_seq = seq;
        self.last_heard = view
            .members
            .iter()
            .filter(|&&m| m != self.me)
            .map(|&m| (m, now))
            .collect();
        for &m in &view.members {
            if m != self.me {
                out.push(GcOutput::Timer {
                    at: now + self.cfg.suspect(),
                    timer: GcTimer::Suspect(m),
                });
            }
        }
        if !self.heartbeating {
            self.heartbeating = true;
            out.push(GcOutput::Timer {
                at: now + self.cfg.heartbeat(),
                timer: GcTimer::Heartbeat,
            });
        }
        self.view = Some(view.clone());
        out.push(GcOutput::ViewInstalled(view.clone()));
        // ops already applied in the adopted state complete now
        let applied = self.rsm.applied.get(&self.me).copied().unwrap_or(0);
        let (done, pending): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|op| op.id.seq <= applied);
        for op in done {
            out.push(GcOutput::Delivered {
                op,
                result: OpResult::Duplicate,
                local: true,
            });
        }
        self.pending = pending.clone();
        for op in pending {
            self.route_submit(op, out);
        }
        if view.coordinator() == self.me && !self.joins.is_empty() {
            self.maybe_reconfigure(now, out);
        }
    }

    fn route_submit(&mut self, op: RsmOp, out: &mut Vec<GcOutput>) {
        let v = self.view.as_ref().expect("member");
        if v.coordinator() == self.me {
            self.sequence(op, out);
        } else {
            out.push(GcOutput::Send {
                to: v.coordinator(),
                msg: GcMsg::Submit { view: v.id, op },
            });
        }
    }

    fn sequence(&mut self, op: RsmOp, out: &mut Vec<GcOutput>) {
        let v = self.view.clone().expect("coordinator has view");
        let seq = self.next_seq;
        self.next_seq += 1;
        for &m in &v.members {
            if m != self.me {
                out.push(GcOutput::Send {
                    to: m,
                    msg: GcMsg::Sequenced {
                        view: v.id,
                        seq,
                        op: op.clone(),
                    },
                });
            }
        }
        self.buffer.insert(seq, op);
        self.drain(out);
    }

    fn drain(&mut self, out: &mut Vec<GcOutput>) {
        while let Some(op) = self.buffer.remove(&self.expected_seq) {
            self.expected_seq += 1;
            let result = self.rsm.apply(&op);
            let local = op.id.node == self.me;
            if local {
                let before = self.pending.len();
                self.pending.retain(|p| p.id != op.id);
                if before == self.pending.len() {
                    continue;
                }
            }
            out.push(GcOutput::Delivered { op, result, local });
        }
    }

    /// Submits an op to the total-order stream.
    pub fn submit(&mut self, kind: OpKind) -> Result<(OpId, Vec<GcOutput>), GcError> {
        if !self.is_member() {
            return Err(GcError::NotMember(self.me));
        }
        self.next_op += 1;
        let op = RsmOp {
            id: OpId {
                node: self.me,
                seq: self.next_op,
            },
            kind,
        };
        self.pending.push(op.clone());
        let mut out = Vec::new();
        self.route_submit(op.clone(), &mut out);
        Ok((op.id, out))
    }

    pub fn cell_get(&mut self) -> Result<(OpId, Vec<GcOutput>), GcError> {
        self.submit(OpKind::Get)
    }

    pub fn cell_compare_and_swap(
        &mut self,
        expected: Option<ControllerId>,
        new: Option<ControllerId>,
    ) -> Result<(OpId, Vec<GcOutput>), GcError> {
        self.submit(OpKind::Cas { expected, new })
    }

    pub fn broadcast(&mut self, data: Vec<u8>) -> Result<(OpId, Vec<GcOutput>), GcError> {
        self.submit(OpKind::Payload { data })
    }

    /// Proposes a new mapping version. Invalid mappings (a switch mapped
    /// twice) are rejected here and never propagated.
    pub fn store_update(&mut self, mapping: ControllerSwitchMapping) -> Result<(OpId, Vec<GcOutput>), GcError> {
        let mut seen = BTreeSet::new();
        if !mapping.iter().all(|a| seen.insert(a.switch)) {
            return Err(GcError::InvalidMapping);
        }
        self.submit(OpKind::StoreUpdate { mapping })
    }
}

/// Outstanding RPCs of one caller, keyed by call id.
#[derive(Debug, Clone)]
pub struct RpcTable<T> {
    next: u64,
    calls: BTreeMap<u64, (ControllerId, SimTime, T)>,
}

impl<T> Default for RpcTable<T> {
    fn default() -> Self {
        Self {
            next: 0,
            calls: BTreeMap::new(),
        }
    }
}

impl<T> RpcTable<T> {
    /// Registers a call; returns its id. The caller arms a timeout at `deadline`.
    pub fn start(&mut self, to: ControllerId, deadline: SimTime, ctx: T) -> u64 {
        self.next += 1;
        self.calls.insert(self.next, (to, deadline, ctx));
        self.next
    }

    pub fn complete(&mut self, id: u64) -> Option<(ControllerId, T)> {
        self.calls.remove(&id).map(|(to, _, ctx)| (to, ctx))
    }

    /// Expires `id` if still outstanding at or after its deadline.
    pub fn expire(&mut self, id: u64, now: SimTime) -> Option<(ControllerId, T)> {
        match self.calls.get(&id) {
            Some((_, deadline, _)) if *deadline <= now => self.complete(id),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn clear(&mut self) {
        self.calls.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(i: u32) -> ControllerId {
        ControllerId(i)
    }

    /// Tiny synchronous driver: delivers sends in FIFO order with zero
    /// latency, ignores timers.
    fn pump(nodes: &mut BTreeMap<ControllerId, GroupMember>, from: ControllerId, outs: Vec<GcOutput>) -> Vec<(ControllerId, GcOutput)> {
        let mut log = Vec::new();
        let mut queue: std::collections::VecDeque<(ControllerId, ControllerId, GcMsg)> = Default::default();
        let push = |at: ControllerId, outs: Vec<GcOutput>, q: &mut std::collections::VecDeque<_>, log: &mut Vec<_>| {
            for o in outs {
                match o {
                    GcOutput::Send { to, msg } => q.push_back((at, to, msg)),
                    GcOutput::Timer { .. } => {}
                    other => log.push((at, other)),
                }
            }
        };
        push(from, outs, &mut queue, &mut log);
        while let Some((src, dst, msg)) = queue.pop_front() {
            if let Some(n) = nodes.get_mut(&dst) {
                let outs = n.on_message(SimTime(0), src, SimTime(0), msg);
                push(dst, outs, &mut queue, &mut log);
            }
        }
        log
    }

    fn formed(n: u32) -> BTreeMap<ControllerId, GroupMember> {
        let ids: Vec<_> = (1..=n).map(c).collect();
        let view = MembershipView::new(
            ViewId {
                epoch: 1,
                coordinator: c(1),
            },
            ids.clone(),
        );
        ids.iter()
            .map(|&i| {
                let mut g = GroupMember::new(i, FailureDetectorConfig::default(), ids.clone());
                g.start_formed(SimTime(0), view.clone());
                (i, g)
            })
            .collect()
    }

    #[test]
    fn cell_get_and_cas_through_sequencer() {
        let mut nodes = formed(3);
        assert_eq!(nodes[&c(2)].cell(), None);
        let (_, outs) = nodes.get_mut(&c(2)).unwrap().cell_compare_and_swap(None, Some(c(1))).unwrap();
        let log = pump(&mut nodes, c(2), outs);
        let local: Vec<_> = log
            .iter()
            .filter_map(|(at, o)| match o {
                GcOutput::Delivered { result, local: true, .. } => Some((*at, result.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(local, vec![(c(2), OpResult::Swapped { ok: true })]);
        for n in nodes.values() {
            assert_eq!(n.cell(), Some(c(1)));
        }
        let (_, outs) = nodes.get_mut(&c(3)).unwrap().cell_compare_and_swap(Some(c(2)), Some(c(3))).unwrap();
        let log = pump(&mut nodes, c(3), outs);
        assert!(log.iter().any(|(_, o)| matches!(o, GcOutput::Delivered { result: OpResult::Swapped { ok: false }, local: true, .. })));
        assert_eq!(nodes[&c(1)].cell(), Some(c(1)));
    }

    #[test]
    fn store_update_rejects_invalid_and_versions_identical() {
        let mut nodes = formed(2);
        let bad = ControllerSwitchMapping::from_pairs([
            (c(1), crate::netmodel::SwitchId(1)),
            (c(2), crate::netmodel::SwitchId(1)),
        ]);
        assert_eq!(
            nodes.get_mut(&c(1)).unwrap().store_update(bad).unwrap_err(),
            GcError::InvalidMapping
        );
        let m = ControllerSwitchMapping::from_pairs([(c(1), crate::netmodel::SwitchId(1))]);
        for expect in [1, 2] {
            let (_, outs) = nodes.get_mut(&c(2)).unwrap().store_update(m.clone()).unwrap();
            pump(&mut nodes, c(2), outs);
            for n in nodes.values() {
                assert_eq!(n.store().version, expect);
                assert_eq!(n.store().mapping, m);
            }
        }
    }

    #[test]
    fn non_member_cannot_submit() {
        let mut g = GroupMember::new(c(1), FailureDetectorConfig::default(), [c(2)]);
        assert_eq!(g.broadcast(vec![1]).unwrap_err(), GcError::NotMember(c(1)));
    }

    #[test]
    fn discovery_then_fast_join() {
        let cfg = FailureDetectorConfig::default();
        let mut a = GroupMember::new(c(1), cfg, [c(2)]);
        let outs = a.start(SimTime(0));
        assert!(outs.contains(&GcOutput::Timer {
            at: SimTime::from_ms(9000.0),
            timer: GcTimer::DiscoveryDone
        }));
        let outs = a.on_timer(SimTime::from_ms(9000.0), GcTimer::DiscoveryDone);
        let v = outs
            .iter()
            .find_map(|o| match o {
                GcOutput::ViewInstalled(v) => Some(v.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(v.members, vec![c(1)]);

        let mut b = GroupMember::new(c(2), cfg, [c(1)]);
        b.start(SimTime::from_ms(10000.0));
        let reply = a.on_message(SimTime::from_ms(10000.0), c(2), SimTime::from_ms(10000.0), GcMsg::Probe);
        let GcOutput::Send { msg, .. } = &reply[0] else { panic!() };
        let outs = b.on_message(SimTime::from_ms(10001.0), c(1), SimTime::from_ms(10000.0), msg.clone());
        assert!(outs.iter().any(|o| matches!(o, GcOutput::Send { to, msg: GcMsg::Join { .. } } if *to == c(1))));
        let outs = a.on_message(SimTime::from_ms(10002.0), c(2), SimTime::from_ms(10001.0), GcMsg::Join { last: None });
        let install = outs
            .iter()
            .find_map(|o| match o {
                GcOutput::Send { to, msg } if *to == c(2) => Some(msg.clone()),
                _ => None,
            })
            .unwrap();
        let outs = b.on_message(SimTime::from_ms(10003.0), c(1), SimTime::from_ms(10002.0), install);
        assert!(outs.iter().any(|o| matches!(o, GcOutput::ViewInstalled(v) if v.members == vec![c(1), c(2)])));
        assert_eq!(a.view().unwrap().members, b.view().unwrap().members);
        assert_eq!(
            b.on_message(SimTime::from_ms(10004.0), c(1), SimTime::from_ms(10003.0), GcMsg::Probe).len(),
            1
        );
    }

    #[test]
    fn suspicion_removes_member() {
        let mut nodes = formed(3);
        let n1 = nodes.get_mut(&c(1)).unwrap();
        // c3 silent: c1 (coordinator) suspects it at its first deadline
        let outs = n1.on_timer(SimTime::from_ms(40.0), GcTimer::Suspect(c(3)));
        assert!(outs.contains(&GcOutput::Suspected(c(3))));
        let v = n1.view().unwrap();
        assert_eq!(v.members, vec![c(1), c(2)]);
        assert_eq!(v.id.epoch, 2);
    }

    #[test]
    fn rpc_table_expiry() {
        let mut t = RpcTable::default();
        let id = t.start(c(2), SimTime(100), "move");
        assert!(t.expire(id, SimTime(50)).is_none());
        assert_eq!(t.expire(id, SimTime(100)), Some((c(2), "move")));
        assert!(t.complete(id).is_none());
    }

    #[test]
    fn rsm_dedups_by_submitter_sequence() {
        let mut s = RsmState::default();
        let op = RsmOp {
            id: OpId { node: c(1), seq: 1 },
            kind: OpKind::Cas {
                expected: None,
                new: Some(c(1)),
            },
        };
        assert_eq!(s.apply(&op), OpResult::Swapped { ok: true });
        assert_eq!(s.apply(&op), OpResult::Duplicate);
        assert_eq!(s.cell.get(), Some(c(1)));
    }
}
