//! The simulated cluster: controllers, switches, the alias layer and the
//! scheduler loop that drives them from a scenario.

use std::collections::{BTreeMap, BTreeSet};

use super::scenario::{Bootstrap, EventKind, Scenario};
use super::trace::{Node, Snapshot, Summary, Trace, TraceEvent, TraceRecord};
use crate::election::{should_trigger, ElectStep, Elector};
use crate::groupcomm::{
    GcMsg, GcOutput, GcTimer, GroupMember, MembershipView, OpId, OpKind, OpResult, RpcTable, RsmState, ViewId,
};
use crate::lincheck::{HistoryEntry, RegOp, RegRet};
use crate::netmodel::{apply_orders, AliasTable, ControllerId, ControllerSwitchMapping, Networks, PoolAddress, SwitchId, Vertex};
use crate::remap::{
    generate_mapping, move_step, plan_set_mapping, rebalance_decision, MigrationEntry, MigrationReport, MoveArgs,
    MoveOutcome, MoveStep, Pins, RebalanceInputs, Stats,
};
use crate::sim::{Chooser, Class, EventQueue, Fifo, SimNet, SimTime, Transport};
use crate::switchplane::{ConnState, EmulatedSwitch, FlowRequest, ServiceQueue, SwOutput, SwTimer};

#[derive(Debug, Clone)]
enum Msg {
    Gc(GcMsg),
    MoveReq { call: u64, args: MoveArgs },
    MoveResp { call: u64, outcome: MoveOutcome },
    Arp { owner: ControllerId },
    Connect { epoch: u64 },
    ConnectReply { epoch: u64, ok: bool },
    Flow(FlowRequest),
    FlowResp(FlowRequest),
}

impl Msg {
    fn class(&self) -> Class {
        match self {
            Msg::Gc(g) if g.is_heartbeat() => Class::Datagram,
            _ => Class::Reliable,
        }
    }

    /// Counts towards the in-flight total that gates quiescence.
    fn counted(&self) -> bool {
        match self {
            Msg::Gc(g) => !g.is_heartbeat(),
            Msg::MoveReq { .. } | Msg::MoveResp { .. } | Msg::Arp { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CtlTimer {
    MasterCheck,
    Rebalance,
    RpcTimeout(u64),
}

#[derive(Debug, Clone)]
enum Ev {
    Deliver { from: Vertex, to: Vertex, sent: SimTime, msg: Msg },
    Gc { node: ControllerId, timer: GcTimer },
    Ctl { node: ControllerId, timer: CtlTimer },
    Sw { switch: SwitchId, timer: SwTimer },
    ServiceDone { node: ControllerId },
    Start(ControllerId),
    Scenario(usize),
    Elect(ControllerId),
    MeasureStart,
    MeasureEnd,
}

impl Ev {
    /// Events that cannot turn a non-quiescent state quiescent.
    fn noisy(&self) -> bool {
        match self {
            Ev::Deliver { msg, .. } => !msg.counted(),
            Ev::Gc { timer, .. } => matches!(timer, GcTimer::Heartbeat),
            Ev::Sw { .. } | Ev::ServiceDone { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Elect,
    Store,
}

#[derive(Debug, Clone, Copy)]
enum RpcCtx {
    Dispatch { index: usize, sent: SimTime },
    Forward { caller: ControllerId, call: u64 },
}

#[derive(Debug, Clone)]
struct Cycle {
    start: ControllerSwitchMapping,
    entries: Vec<MigrationEntry>,
    outstanding: usize,
    store_op: Option<OpId>,
}

struct Ctl {
    alive: bool,
    started: bool,
    gc: GroupMember,
    elector: Elector,
    cell_seen: Option<ControllerId>,
    ops: BTreeMap<OpId, Purpose>,
    rebalanced_for: Option<BTreeSet<ControllerId>>,
    cycle: Option<Cycle>,
    rpc: RpcTable<RpcCtx>,
    service: ServiceQueue,
    last_view: Option<ViewId>,
}

/// Knobs for callers that drive the world beyond a plain run.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Stop at the first online invariant violation.
    pub stop_on_violation: bool,
    /// Upper bound on processed events (guards runaway schedules).
    pub max_events: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stop_on_violation: true,
            max_events: 50_000_000,
        }
    }
}

pub struct World {
    sc: Scenario,
    opts: RunOptions,
    now: SimTime,
    queue: EventQueue<Ev>,
    net: Box<dyn Transport>,
    chooser: Box<dyn Chooser>,
    aliases: AliasTable,
    ctls: BTreeMap<ControllerId, Ctl>,
    known: BTreeSet<ControllerId>,
    switches: BTreeMap<SwitchId, EmulatedSwitch>,
    rates: BTreeMap<SwitchId, f64>,
    live_switches: BTreeSet<SwitchId>,
    held: Vec<(Vertex, Vertex, Msg)>,
    partitioned: bool,
    forced: Option<Pins>,
    initial: Option<ControllerSwitchMapping>,
    records: Vec<TraceRecord>,
    violations: Vec<String>,
    inflight: usize,
    quiescent: bool,
    dropped: BTreeMap<String, u64>,
    history: Vec<HistoryEntry>,
    history_index: BTreeMap<OpId, usize>,
    views_seen: BTreeMap<ViewId, Vec<ControllerId>>,
    measure_base: BTreeMap<SwitchId, u64>,
    measured: BTreeMap<SwitchId, f64>,
    events: u64,
    stopped: bool,
}

impl World {
    pub fn new(sc: &Scenario, seed: u64) -> Self {
        Self::with_parts(sc, seed, Box::new(SimNet::new(sc.latency, seed)), Box::new(Fifo), RunOptions::default())
    }

    pub fn with_parts(
        sc: &Scenario,
        seed: u64,
        net: Box<dyn Transport>,
        chooser: Box<dyn Chooser>,
        opts: RunOptions,
    ) -> Self {
        let live_switches: BTreeSet<SwitchId> = sc.switch_ids().collect();
        let mut w = Self {
            sc: sc.clone(),
            opts,
            now: SimTime::ZERO,
            queue: EventQueue::default(),
            net,
            chooser,
            aliases: AliasTable::new(live_switches.iter().map(|&s| PoolAddress::for_switch(s))),
            ctls: BTreeMap::new(),
            known: sc.controllers.iter().map(|c| c.id).collect(),
            switches: BTreeMap::new(),
            rates: live_switches.iter().map(|&s| (s, sc.rate_of(s))).collect(),
            live_switches,
            held: Vec::new(),
            partitioned: false,
            forced: None,
            initial: sc.initial_mapping.clone(),
            records: Vec::new(),
            violations: Vec::new(),
            inflight: 0,
            quiescent: false,
            dropped: BTreeMap::new(),
            history: Vec::new(),
            history_index: BTreeMap::new(),
            views_seen: BTreeMap::new(),
            measure_base: BTreeMap::new(),
            measured: BTreeMap::new(),
            events: 0,
            stopped: false,
        };
        w.record(
            Node::World,
            TraceEvent::ScenarioLoaded {
                scenario: Box::new(sc.clone()),
                seed,
            },
        );
        let traffic = sc.traffic.is_some();
        let window = sc.traffic.map_or(1, |t| t.window);
        let retry = SimTime::from_ms(sc.timing.switch_retry_ms);
        for s in sc.switch_ids() {
            w.switches
                .insert(s, EmulatedSwitch::new(s, sc.rate_of(s), window, traffic, retry));
        }
        for c in &sc.controllers {
            w.ctls.insert(c.id, w.new_ctl(c.id));
            w.queue
                .push(SimTime::from_ms(c.start_ms), Some(Vertex::Controller(c.id)), Ev::Start(c.id));
        }
        for (i, e) in sc.events.iter().enumerate() {
            w.queue.push(SimTime::from_ms(e.time_ms), None, Ev::Scenario(i));
        }
        if let Some(t) = sc.traffic {
            w.queue.push(SimTime::from_ms(t.measure_from_ms), None, Ev::MeasureStart);
            w.queue
                .push(SimTime::from_ms(t.measure_from_ms + t.measure_ms), None, Ev::MeasureEnd);
        }
        w
    }

    fn new_ctl(&self, id: ControllerId) -> Ctl {
        Ctl {
            alive: true,
            started: false,
            gc: GroupMember::new(id, self.sc.failure_detector, self.known.iter().copied()),
            elector: Elector::new(id, self.sc.election),
            cell_seen: None,
            ops: BTreeMap::new(),
            rebalanced_for: None,
            cycle: None,
            rpc: RpcTable::default(),
            service: ServiceQueue::default(),
            last_view: None,
        }
    }

    /// Overwrites the replicated state at every controller before the run.
    pub fn seed_state(&mut self, state: RsmState) {
        for c in self.ctls.values_mut() {
            c.gc.seed_state(state.clone());
            c.cell_seen = state.cell.get();
        }
    }

    /// Schedules a replace-master round at `c`, bypassing the monitor.
    pub fn schedule_election(&mut self, at: SimTime, c: ControllerId) {
        self.queue.push(at, Some(Vertex::Controller(c)), Ev::Elect(c));
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn aliases(&self) -> &AliasTable {
        &self.aliases
    }

    pub fn live_controllers(&self) -> BTreeSet<ControllerId> {
        self.ctls
            .iter()
            .filter(|(_, c)| c.alive && c.started)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Cell content at each live controller, or `None` while its election runs.
    pub fn cells(&self) -> BTreeMap<ControllerId, Option<Option<ControllerId>>> {
        self.ctls
            .iter()
            .filter(|(_, c)| c.alive && c.started)
            .map(|(id, c)| (*id, (!c.elector.in_progress()).then(|| c.gc.cell())))
            .collect()
    }

    pub fn is_quiescent(&self) -> bool {
        self.quiescent
    }

    /// Runs to `end_ms` and returns the trace.
    pub fn run(mut self) -> Trace {
        let end = SimTime::from_ms(self.sc.end_ms);
        self.run_until(end);
        self.finish()
    }

    /// Processes events up to and including `end`.
    pub fn run_until(&mut self, end: SimTime) {
        while !self.stopped {
            match self.queue.peek_time() {
                Some(t) if t <= end => {}
                _ => break,
            }
            let Some((t, ev)) = self.queue.pop(self.chooser.as_mut()) else {
                break;
            };
            self.now = t;
            self.events += 1;
            if self.events > self.opts.max_events {
                self.violation("event budget exhausted".into());
                self.stopped = true;
                break;
            }
            let noisy = ev.noisy();
            if let Ev::Deliver { msg, .. } = &ev {
                if msg.counted() {
                    self.inflight -= 1;
                }
            }
            self.dispatch(ev);
            if !noisy || self.quiescent {
                self.update_quiescence();
            }
        }
        if self.now < end && !self.stopped {
            self.now = end;
        }
    }

    /// Closes the trace with a summary record.
    pub fn finish(mut self) -> Trace {
        self.quiescent = self.compute_quiescent();
        let live = self.live_controllers();
        let summary = Summary {
            final_mapping: self.observed(&live),
            aliases: self.aliases.clone(),
            live_controllers: live.iter().copied().collect(),
            masters: self.masters(),
            quiescent: self.quiescent,
            switch_counters: self.switches.iter().map(|(s, sw)| (*s, sw.counters)).collect(),
            switch_rates: self.measured.clone(),
            dropped: self.dropped.clone(),
            events_processed: self.events,
            violations: self.violations.clone(),
        };
        self.record(Node::World, TraceEvent::Summary { summary: Box::new(summary) });
        Trace { records: self.records }
    }

    fn record(&mut self, node: Node, event: TraceEvent) {
        self.records.push(TraceRecord {
            time: self.now,
            node,
            event,
        });
    }

    fn violation(&mut self, msg: String) {
        self.violations.push(format!("t={} {}", self.now, msg));
        if self.opts.stop_on_violation {
            self.stopped = true;
        }
    }

    fn bump(&mut self, what: &str) {
        *self.dropped.entry(what.to_string()).or_insert(0) += 1;
    }

    // ---- transport -------------------------------------------------------

    fn push_deliver(&mut self, at: SimTime, from: Vertex, to: Vertex, sent: SimTime, msg: Msg) {
        if msg.counted() {
            self.inflight += 1;
        }
        self.queue.push(at, Some(to), Ev::Deliver { from, to, sent, msg });
    }

    fn send(&mut self, from: Vertex, to: Vertex, msg: Msg) {
        if from == to {
            self.push_deliver(self.now, from, to, self.now, msg);
            return;
        }
        let class = msg.class();
        if self.net.separated(from, to) {
            if class == Class::Reliable {
                self.held.push((from, to, msg));
            } else {
                self.bump("partition");
            }
            return;
        }
        match self.net.deliver_at(from, to, class, self.now) {
            Some(at) => self.push_deliver(at, from, to, self.now, msg),
            None => self.bump("loss"),
        }
    }

    // ---- dispatch --------------------------------------------------------

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { from, to, sent, msg } => self.deliver(from, to, sent, msg),
            Ev::Gc { node, timer } => {
                if self.alive(node) {
                    let out = self.ctls.get_mut(&node).unwrap().gc.on_timer(self.now, timer);
                    self.gc_outputs(node, out);
                }
            }
            Ev::Ctl { node, timer } => {
                if self.alive(node) {
                    self.ctl_timer(node, timer);
                }
            }
            Ev::Sw { switch, timer } => {
                let now = self.now;
                if let Some(sw) = self.switches.get_mut(&switch) {
                    let out = match timer {
                        SwTimer::Retry(e) => sw.on_retry(now, e),
                        SwTimer::Issue(e) => sw.on_issue_timer(now, e),
                    };
                    self.sw_outputs(switch, out);
                }
            }
            Ev::ServiceDone { node } => {
                if self.alive(node) {
                    self.service_done(node);
                }
            }
            Ev::Start(c) => self.start_controller(c),
            Ev::Scenario(i) => {
                let kind = self.sc.events[i].kind.clone();
                self.apply_fault(kind);
            }
            Ev::Elect(c) => {
                if self.alive(c) {
                    self.start_election(c);
                }
            }
            Ev::MeasureStart => {
                self.measure_base = self.switches.iter().map(|(s, sw)| (*s, sw.counters.responses)).collect();
            }
            Ev::MeasureEnd => {
                let secs = self.sc.traffic.map_or(1.0, |t| t.measure_ms / 1000.0);
                self.measured = self
                    .switches
                    .iter()
                    .map(|(s, sw)| {
                        let base = self.measure_base.get(s).copied().unwrap_or(0);
                        (*s, (sw.counters.responses - base) as f64 / secs)
                    })
                    .collect();
            }
        }
    }

    fn alive(&self, c: ControllerId) -> bool {
        self.ctls.get(&c).is_some_and(|x| x.alive && x.started)
    }

    fn start_controller(&mut self, c: ControllerId) {
        let now = self.now;
        let formed: Vec<ControllerId> = if self.sc.bootstrap == Bootstrap::Formed && now == SimTime::ZERO {
            self.sc
                .controllers
                .iter()
                .filter(|x| x.start_ms == 0.0)
                .map(|x| x.id)
                .collect()
        } else {
            Vec::new()
        };
        let Some(ctl) = self.ctls.get_mut(&c) else {
            return;
        };
        if !ctl.alive || ctl.started {
            return;
        }
        ctl.started = true;
        let out = if formed.contains(&c) {
            let id = ViewId {
                epoch: 1,
                coordinator: formed[0].min(*formed.iter().min().unwrap()),
            };
            ctl.gc.start_formed(now, MembershipView::new(id, formed.iter().copied()))
        } else {
            ctl.gc.start(now)
        };
        self.record(Node::Controller(c), TraceEvent::ControllerStarted);
        let check = SimTime::from_ms(self.sc.election.master_check_period_ms);
        let reb = SimTime::from_ms(self.sc.rebalance.rebalance_check_period_ms);
        let v = Some(Vertex::Controller(c));
        self.queue.push(now + check, v, Ev::Ctl { node: c, timer: CtlTimer::MasterCheck });
        self.queue.push(now + reb, v, Ev::Ctl { node: c, timer: CtlTimer::Rebalance });
        self.gc_outputs(c, out);
    }

    fn apply_fault(&mut self, kind: EventKind) {
        self.record(Node::World, TraceEvent::Fault { fault: kind.clone() });
        self.quiescent = false;
        let now = self.now;
        match kind {
            EventKind::FailController { controller } => self.kill(controller),
            EventKind::AddController { controller } => {
                self.known.insert(controller);
                for c in self.ctls.values_mut() {
                    c.gc.add_peer(controller);
                }
                let ctl = self.new_ctl(controller);
                self.ctls.insert(controller, ctl);
                self.start_controller(controller);
            }
            EventKind::FailSwitch { switch } => {
                if let Some(sw) = self.switches.get_mut(&switch) {
                    sw.fail();
                }
                self.live_switches.remove(&switch);
            }
            EventKind::AddSwitch { switch, rate } => {
                let r = rate.unwrap_or(1.0);
                let traffic = self.sc.traffic.is_some();
                let window = self.sc.traffic.map_or(1, |t| t.window);
                let retry = SimTime::from_ms(self.sc.timing.switch_retry_ms);
                self.switches
                    .insert(switch, EmulatedSwitch::new(switch, r, window, traffic, retry));
                self.aliases.add_pool(PoolAddress::for_switch(switch));
                self.live_switches.insert(switch);
                self.rates.insert(switch, r);
            }
            EventKind::SetSwitchRate { switch, rate } => {
                self.rates.insert(switch, rate);
                if let Some(sw) = self.switches.get_mut(&switch) {
                    let out = sw.set_rate(now, rate);
                    self.sw_outputs(switch, out);
                }
            }
            EventKind::ForceRebalance { pins } => self.forced = Some(pins.as_map()),
            EventKind::Partition { groups } => {
                let groups: Vec<BTreeSet<ControllerId>> =
                    groups.into_iter().map(|g| g.into_iter().collect()).collect();
                self.net.partition(&groups);
                self.partitioned = true;
            }
            EventKind::Heal => {
                self.net.heal();
                self.partitioned = false;
                for (from, to, msg) in std::mem::take(&mut self.held) {
                    match from {
                        Vertex::Controller(c) if !self.alive(c) => self.bump("dead_sender"),
                        _ => self.send(from, to, msg),
                    }
                }
            }
        }
    }

    fn kill(&mut self, c: ControllerId) {
        let Some(ctl) = self.ctls.get_mut(&c) else {
            return;
        };
        if !ctl.alive {
            return;
        }
        ctl.alive = false;
        ctl.service.clear();
        ctl.rpc.clear();
        ctl.cycle = None;
        self.drop_aliases(c);
    }

    fn drop_aliases(&mut self, c: ControllerId) {
        let lost = self.aliases.drop_all(c);
        if lost.is_empty() {
            return;
        }
        self.record(Node::Controller(c), TraceEvent::AliasLost { pools: lost.clone() });
        for p in lost {
            self.reset_switch(p.switch(), c);
        }
    }

    fn reset_switch(&mut self, s: SwitchId, c: ControllerId) {
        let now = self.now;
        if let Some(sw) = self.switches.get_mut(&s) {
            let out = sw.on_reset(now, c);
            self.sw_outputs(s, out);
        }
    }

    // ---- messages --------------------------------------------------------

    fn deliver(&mut self, from: Vertex, to: Vertex, sent: SimTime, msg: Msg) {
        match to {
            Vertex::Switch(s) => self.deliver_to_switch(from, s, msg),
            Vertex::Controller(c) => {
                if !self.alive(c) {
                    self.bump("dead_receiver");
                    return;
                }
                let Vertex::Controller(fc) = from else {
                    return self.deliver_from_switch(from, c, msg);
                };
                match msg {
                    Msg::Gc(g) => {
                        let out = self.ctls.get_mut(&c).unwrap().gc.on_message(self.now, fc, sent, g);
                        self.gc_outputs(c, out);
                    }
                    Msg::MoveReq { call, args } => self.on_move(c, fc, call, args),
                    Msg::MoveResp { call, outcome } => self.on_move_resp(c, call, outcome),
                    _ => {}
                }
            }
        }
    }

    fn deliver_from_switch(&mut self, from: Vertex, c: ControllerId, msg: Msg) {
        let Vertex::Switch(s) = from else {
            return;
        };
        let owns = self.aliases.owner_of(PoolAddress::for_switch(s)) == Some(c);
        match msg {
            Msg::Connect { epoch } => {
                self.send(
                    Vertex::Controller(c),
                    from,
                    Msg::ConnectReply { epoch, ok: owns },
                );
            }
            Msg::Flow(req) => {
                if !owns {
                    self.bump("flow_not_owner");
                    return;
                }
                let ctl = self.ctls.get_mut(&c).unwrap();
                if ctl.service.arrive(req).is_some() {
                    self.start_service(c);
                }
            }
            _ => {}
        }
    }

    fn start_service(&mut self, c: ControllerId) {
        let q = self.aliases.count_of(c);
        let at = self.now + self.sc.service.cost(q);
        self.queue.push(at, Some(Vertex::Controller(c)), Ev::ServiceDone { node: c });
    }

    fn service_done(&mut self, c: ControllerId) {
        let (done, next) = self.ctls.get_mut(&c).unwrap().service.complete();
        if let Some(req) = done {
            self.send(Vertex::Controller(c), Vertex::Switch(req.switch), Msg::FlowResp(req));
        }
        if next.is_some() {
            self.start_service(c);
        }
    }

    fn deliver_to_switch(&mut self, from: Vertex, s: SwitchId, msg: Msg) {
        let now = self.now;
        let Vertex::Controller(c) = from else {
            return;
        };
        let Some(sw) = self.switches.get_mut(&s) else {
            return;
        };
        let out = match msg {
            Msg::Arp { owner } => {
                if sw.is_down() {
                    return;
                }
                let before = sw.conn();
                let out = sw.on_arp(now, owner);
                self.record(Node::Switch(s), TraceEvent::ArpUpdated { owner });
                if let ConnState::Connected(old) = before {
                    if out.contains(&SwOutput::Disconnected) {
                        self.record(Node::Switch(s), TraceEvent::Disconnected { from: old });
                    }
                }
                out
            }
            Msg::ConnectReply { epoch, ok } => sw.on_connect_reply(now, c, epoch, ok),
            Msg::FlowResp(req) => sw.on_response(now, req),
            _ => Vec::new(),
        };
        self.sw_outputs(s, out);
    }

    fn sw_outputs(&mut self, s: SwitchId, out: Vec<SwOutput>) {
        let me = Vertex::Switch(s);
        for o in out {
            match o {
                SwOutput::Connect { to, epoch, .. } => {
                    self.send(me, Vertex::Controller(to), Msg::Connect { epoch })
                }
                SwOutput::Request { to, req } => self.send(me, Vertex::Controller(to), Msg::Flow(req)),
                SwOutput::Timer { at, timer } => self.queue.push(at, Some(me), Ev::Sw { switch: s, timer }),
                SwOutput::Disconnected => {}
                SwOutput::Reconnected { controller } => {
                    self.record(Node::Switch(s), TraceEvent::Reconnected { controller })
                }
            }
        }
    }

    // ---- group communication --------------------------------------------

    fn gc_outputs(&mut self, c: ControllerId, out: Vec<GcOutput>) {
        let me = Vertex::Controller(c);
        for o in out {
            match o {
                GcOutput::Send { to, msg } => self.send(me, Vertex::Controller(to), Msg::Gc(msg)),
                GcOutput::Timer { at, timer } => {
                    let at = at.max(self.now);
                    self.queue.push(at, Some(me), Ev::Gc { node: c, timer });
                }
                GcOutput::ViewInstalled(v) => self.on_view(c, v),
                GcOutput::Suspected(p) => self.record(Node::Controller(c), TraceEvent::Suspect { peer: p }),
                GcOutput::Delivered { op, result, local } => {
                    if local {
                        self.on_delivered(c, op.id, &op.kind, result);
                    }
                }
                GcOutput::Reset { joining } => self.on_reset(c, joining),
                GcOutput::Dropped { reason } => self.bump(reason),
            }
        }
        self.note_cell(c);
    }

    fn note_cell(&mut self, c: ControllerId) {
        let Some(ctl) = self.ctls.get_mut(&c) else {
            return;
        };
        let cell = ctl.gc.cell();
        if cell != ctl.cell_seen {
            ctl.cell_seen = cell;
            self.record(Node::Controller(c), TraceEvent::MasterChanged { master: cell });
        }
    }

    fn on_view(&mut self, c: ControllerId, v: MembershipView) {
        self.record(Node::Controller(c), TraceEvent::ViewInstalled { view: v.clone() });
        let prev = self.ctls.get_mut(&c).unwrap().last_view.replace(v.id);
        if let Some(p) = prev {
            if v.id <= p {
                self.violation(format!("view agreement: {c} installed {:?} after {:?}", v.id, p));
            }
        }
        match self.views_seen.get(&v.id) {
            Some(m) if *m != v.members => {
                let m = m.clone();
                self.violation(format!("view agreement: {:?} has members {:?} and {:?}", v.id, m, v.members));
            }
            Some(_) => {}
            None => {
                self.views_seen.insert(v.id, v.members.clone());
            }
        }
    }

    fn on_reset(&mut self, c: ControllerId, joining: ControllerId) {
        self.record(Node::Controller(c), TraceEvent::Rejoin { coordinator: joining });
        let ctl = self.ctls.get_mut(&c).unwrap();
        ctl.elector.abort();
        let lost: Vec<OpId> = ctl.ops.keys().copied().collect();
        ctl.ops.clear();
        ctl.cycle = None;
        ctl.rpc.clear();
        ctl.rebalanced_for = None;
        for id in lost {
            self.complete_history(id, None);
        }
        self.drop_aliases(c);
    }

    fn complete_history(&mut self, id: OpId, ret: Option<RegRet>) {
        if let Some(&i) = self.history_index.get(&id) {
            if self.history[i].response.is_none() {
                self.history[i].ret = ret;
                self.history[i].response = ret.map(|_| self.now);
            }
        }
    }

    fn submit(&mut self, c: ControllerId, kind: OpKind, purpose: Purpose) -> Option<OpId> {
        let ctl = self.ctls.get_mut(&c).unwrap();
        let reg = match &kind {
            OpKind::Get => Some(RegOp::Get),
            OpKind::Cas { expected, new } => Some(RegOp::Cas {
                expected: *expected,
                new: *new,
            }),
            _ => None,
        };
        let res = match kind {
            OpKind::StoreUpdate { mapping } => ctl.gc.store_update(mapping),
            k => ctl.gc.submit(k),
        };
        let Ok((id, out)) = res else {
            return None;
        };
        ctl.ops.insert(id, purpose);
        if let Some(op) = reg {
            self.history_index.insert(id, self.history.len());
            self.history.push(HistoryEntry {
                process: c,
                op,
                ret: None,
                invoke: self.now,
                response: None,
            });
            self.record(Node::Controller(c), TraceEvent::OpInvoke { op_id: id, op });
        }
        self.gc_outputs(c, out);
        Some(id)
    }

    fn on_delivered(&mut self, c: ControllerId, id: OpId, kind: &OpKind, result: OpResult) {
        let Some(purpose) = self.ctls.get_mut(&c).unwrap().ops.remove(&id) else {
            return;
        };
        match purpose {
            Purpose::Elect => {
                let ret = match result {
                    OpResult::Value { value } => Some(RegRet::Value { value }),
                    OpResult::Swapped { ok } => Some(RegRet::Swapped { ok }),
                    _ => None,
                };
                self.complete_history(id, ret);
                self.record(Node::Controller(c), TraceEvent::OpComplete { op_id: id, ret });
                let (view, loads) = match self.view_and_loads(c) {
                    Some(x) => x,
                    None => {
                        let step = self.ctls.get_mut(&c).unwrap().elector.on_unavailable();
                        return self.elect_step(c, step);
                    }
                };
                let el = &mut self.ctls.get_mut(&c).unwrap().elector;
                let step = match (ret, kind) {
                    (Some(RegRet::Value { value }), _) => el.on_get(value, &view, &loads),
                    (Some(RegRet::Swapped { ok }), _) => el.on_cas(ok),
                    (None, OpKind::Get) => ElectStep::Get,
                    (None, _) => el.on_cas(false),
                };
                self.elect_step(c, step);
            }
            Purpose::Store => {
                if let OpResult::Version { version } = result {
                    if let OpKind::StoreUpdate { mapping } = kind {
                        self.record(
                            Node::Controller(c),
                            TraceEvent::MappingStored {
                                version,
                                mapping: mapping.clone(),
                            },
                        );
                    }
                }
                let ctl = self.ctls.get_mut(&c).unwrap();
                if ctl.cycle.as_ref().is_some_and(|cy| cy.store_op == Some(id)) {
                    ctl.cycle = None;
                }
            }
        }
    }

    // ---- election --------------------------------------------------------

    fn view_and_loads(&self, c: ControllerId) -> Option<(MembershipView, BTreeMap<ControllerId, f64>)> {
        let ctl = self.ctls.get(&c)?;
        let view = ctl.gc.view()?.clone();
        let stats = self.stats();
        let loads = stats.controller_loads(&ctl.gc.store().mapping, &view.member_set());
        Some((view, loads))
    }

    fn stats(&self) -> Stats<f64> {
        Stats {
            switch_rate: self
                .live_switches
                .iter()
                .map(|s| (*s, self.rates.get(s).copied().unwrap_or(1.0)))
                .collect(),
            ..Stats::default()
        }
    }

    fn start_election(&mut self, c: ControllerId) {
        let ctl = self.ctls.get_mut(&c).unwrap();
        if ctl.elector.in_progress() || !ctl.gc.is_member() {
            return;
        }
        let stale = ctl.gc.cell();
        let step = ctl.elector.start(stale);
        self.record(Node::Controller(c), TraceEvent::ElectionStart { stale });
        self.elect_step(c, step);
    }

    fn elect_step(&mut self, c: ControllerId, step: ElectStep) {
        let kind = match step {
            ElectStep::Get => OpKind::Get,
            ElectStep::Cas { expected, new } => OpKind::Cas { expected, new },
            ElectStep::Done(result) => {
                self.record(Node::Controller(c), TraceEvent::ElectionOutcome { result });
                return;
            }
        };
        if self.submit(c, kind, Purpose::Elect).is_none() {
            let step = self.ctls.get_mut(&c).unwrap().elector.on_unavailable();
            self.elect_step(c, step);
        }
    }

    // ---- controller timers -----------------------------------------------

    fn ctl_timer(&mut self, c: ControllerId, timer: CtlTimer) {
        let v = Some(Vertex::Controller(c));
        match timer {
            CtlTimer::MasterCheck => {
                let period = SimTime::from_ms(self.sc.election.master_check_period_ms);
                self.queue.push(self.now + period, v, Ev::Ctl { node: c, timer });
                if let Some((view, loads)) = self.view_and_loads(c) {
                    let ctl = &self.ctls[&c];
                    if !ctl.elector.in_progress()
                        && should_trigger(c, &self.sc.election, ctl.gc.cell(), &view, &loads)
                    {
                        self.start_election(c);
                    }
                }
            }
            CtlTimer::Rebalance => {
                let period = SimTime::from_ms(self.sc.rebalance.rebalance_check_period_ms);
                self.queue.push(self.now + period, v, Ev::Ctl { node: c, timer });
                self.rebalance_tick(c);
            }
            CtlTimer::RpcTimeout(id) => {
                let now = self.now;
                if let Some((_, ctx)) = self.ctls.get_mut(&c).unwrap().rpc.expire(id, now) {
                    self.rpc_done(c, ctx, MoveOutcome::Timeout);
                }
            }
        }
    }

    /// Mapping implied by alias ownership over live switches, counting only
    /// owners in `view`.
    fn observed(&self, view: &BTreeSet<ControllerId>) -> ControllerSwitchMapping {
        self.live_switches
            .iter()
            .filter_map(|&s| {
                self.aliases
                    .owner_of(PoolAddress::for_switch(s))
                    .filter(|o| view.contains(o))
                    .map(|o| (o, s))
            })
            .collect()
    }

    fn networks(&self, live: &BTreeSet<ControllerId>) -> Networks {
        let cs: Vec<_> = live.iter().copied().collect();
        let ss: Vec<_> = self.live_switches.iter().copied().collect();
        Networks::full(&cs, &ss)
    }

    /// The mapping a rebalance at master `m` would install now, if any.
    fn plan_target(&self, m: ControllerId) -> Option<(crate::remap::RebalanceReason, ControllerSwitchMapping, bool)> {
        let ctl = &self.ctls[&m];
        let view = ctl.gc.view()?;
        let live = view.member_set();
        let observed = self.observed(&live);
        let stats = self.stats();
        let inputs = RebalanceInputs {
            observed: &observed,
            stored: &ctl.gc.store().mapping,
            switches: &self.live_switches,
            live: &live,
            stats: &stats,
            membership_changed: ctl.rebalanced_for.as_ref() != Some(&live),
            forced: self.forced.is_some(),
        };
        let reason = rebalance_decision(&self.sc.rebalance, &inputs)?;
        let use_initial = self.initial.is_some() && observed.is_empty();
        let pins: Pins = if use_initial {
            self.initial
                .as_ref()
                .unwrap()
                .iter()
                .filter(|a| self.live_switches.contains(&a.switch))
                .map(|a| (a.switch, a.controller))
                .collect()
        } else {
            self.forced.clone().unwrap_or_default()
        };
        let pins: Pins = pins
            .into_iter()
            .filter(|(s, c)| live.contains(c) && self.live_switches.contains(s))
            .collect();
        let target = generate_mapping(&self.networks(&live), &observed, &stats, &live, &pins).ok()?;
        Some((reason, target, use_initial))
    }

    fn rebalance_tick(&mut self, c: ControllerId) {
        let ctl = &self.ctls[&c];
        if ctl.cycle.is_some() || !ctl.gc.is_member() || ctl.gc.cell() != Some(c) {
            return;
        }
        let Some((reason, target, used_initial)) = self.plan_target(c) else {
            return;
        };
        let live = self.ctls[&c].gc.view().unwrap().member_set();
        let observed = self.observed(&live);
        self.initial = None;
        if !used_initial {
            self.forced = None;
        }
        self.ctls.get_mut(&c).unwrap().rebalanced_for = Some(live.clone());
        let stored_same = self.ctls[&c].gc.store().mapping == target;
        if target == observed && stored_same {
            return;
        }
        self.record(
            Node::Controller(c),
            TraceEvent::RebalanceStart {
                reason,
                mapping: target.clone(),
            },
        );
        let plan = match plan_set_mapping(&observed, &target, &self.live_switches, &live) {
            Ok(p) => p,
            Err(e) => {
                self.violation(format!("plan failed at {c}: {e}"));
                return;
            }
        };
        let mut cycle = Cycle {
            start: observed.clone(),
            entries: Vec::new(),
            outstanding: 0,
            store_op: None,
        };
        let deadline = self.now + SimTime::from_ms(2.0 * self.sc.timing.rpc_timeout_ms);
        let mut sends = Vec::new();
        for d in &plan.dispatches {
            let index = cycle.entries.len();
            cycle.entries.push(MigrationEntry {
                order: d.order,
                contact: Some(d.contact),
                outcome: MoveOutcome::Timeout,
                latency_ms: None,
            });
            let call = self
                .ctls
                .get_mut(&c)
                .unwrap()
                .rpc
                .start(d.contact, deadline, RpcCtx::Dispatch { index, sent: self.now });
            cycle.outstanding += 1;
            sends.push((d.order, d.contact, call));
        }
        for o in &plan.deferred {
            cycle.entries.push(MigrationEntry {
                order: *o,
                contact: None,
                outcome: MoveOutcome::Deferred,
                latency_ms: None,
            });
        }
        let empty = cycle.outstanding == 0;
        self.ctls.get_mut(&c).unwrap().cycle = Some(cycle);
        for (order, contact, call) in sends {
            self.record(Node::Controller(c), TraceEvent::MoveDispatched { order, contact });
            let args = MoveArgs {
                switch: order.switch,
                c_old: order.from,
                c_new: order.to,
            };
            self.send(Vertex::Controller(c), Vertex::Controller(contact), Msg::MoveReq { call, args });
            self.queue.push(
                deadline,
                Some(Vertex::Controller(c)),
                Ev::Ctl {
                    node: c,
                    timer: CtlTimer::RpcTimeout(call),
                },
            );
        }
        if empty {
            self.finish_moves(c);
        }
    }

    fn finish_moves(&mut self, c: ControllerId) {
        let Some(cycle) = self.ctls.get_mut(&c).unwrap().cycle.as_mut() else {
            return;
        };
        let report = MigrationReport {
            entries: cycle.entries.clone(),
        };
        let done: Vec<_> = report
            .entries
            .iter()
            .filter(|e| e.outcome == MoveOutcome::Completed)
            .map(|e| e.order)
            .collect();
        let target = apply_orders(&cycle.start, &done);
        if !report.entries.is_empty() {
            self.record(Node::Controller(c), TraceEvent::MoveReport { report });
        }
        match self.submit(c, OpKind::StoreUpdate { mapping: target }, Purpose::Store) {
            Some(id) => {
                let ctl = self.ctls.get_mut(&c).unwrap();
                if !ctl.ops.contains_key(&id) {
                    ctl.cycle = None;
                } else if let Some(cy) = ctl.cycle.as_mut() {
                    cy.store_op = Some(id);
                }
            }
            None => self.ctls.get_mut(&c).unwrap().cycle = None,
        }
    }

    // ---- MOVE ------------------------------------------------------------

    fn on_move(&mut self, at: ControllerId, caller: ControllerId, call: u64, args: MoveArgs) {
        let me = Vertex::Controller(at);
        let reply = |w: &mut Self, outcome| {
            w.send(me, Vertex::Controller(caller), Msg::MoveResp { call, outcome });
        };
        let before = self.aliases.owner_of(PoolAddress::for_switch(args.switch));
        match move_step(at, &args, &mut self.aliases) {
            MoveStep::Released { pool, held, forward_to } => {
                if held {
                    self.record(Node::Controller(at), TraceEvent::AliasReleased { pool });
                    self.reset_switch(pool.switch(), at);
                }
                let deadline = self.now + SimTime::from_ms(self.sc.timing.rpc_timeout_ms);
                let id = self
                    .ctls
                    .get_mut(&at)
                    .unwrap()
                    .rpc
                    .start(forward_to, deadline, RpcCtx::Forward { caller, call });
                self.send(me, Vertex::Controller(forward_to), Msg::MoveReq { call: id, args });
                self.queue.push(
                    deadline,
                    Some(me),
                    Ev::Ctl {
                        node: at,
                        timer: CtlTimer::RpcTimeout(id),
                    },
                );
            }
            MoveStep::Acquired { pool, arp_ping } => {
                if before != Some(at) {
                    self.record(Node::Controller(at), TraceEvent::AliasAcquired { pool });
                }
                self.record(Node::Controller(at), TraceEvent::ArpPing { switch: arp_ping });
                let when = self.now + SimTime::from_ms(self.sc.timing.arp_delay_ms);
                self.push_deliver(when, me, Vertex::Switch(arp_ping), self.now, Msg::Arp { owner: at });
                reply(self, MoveOutcome::Completed);
            }
            MoveStep::Conflict(e) => {
                self.record(
                    Node::Controller(at),
                    TraceEvent::AliasConflict {
                        pool: e.pool,
                        owner: e.owner,
                    },
                );
                reply(self, MoveOutcome::Conflict { owner: e.owner });
            }
            MoveStep::NoOp => reply(self, MoveOutcome::Timeout),
        }
    }

    fn on_move_resp(&mut self, at: ControllerId, call: u64, outcome: MoveOutcome) {
        if let Some((_, ctx)) = self.ctls.get_mut(&at).unwrap().rpc.complete(call) {
            self.rpc_done(at, ctx, outcome);
        }
    }

    fn rpc_done(&mut self, at: ControllerId, ctx: RpcCtx, outcome: MoveOutcome) {
        match ctx {
            RpcCtx::Forward { caller, call } => {
                self.send(
                    Vertex::Controller(at),
                    Vertex::Controller(caller),
                    Msg::MoveResp { call, outcome },
                );
            }
            RpcCtx::Dispatch { index, sent } => {
                let now = self.now;
                let Some(cy) = self.ctls.get_mut(&at).unwrap().cycle.as_mut() else {
                    return;
                };
                let e = &mut cy.entries[index];
                e.outcome = outcome;
                e.latency_ms = Some((now - sent).as_ms());
                cy.outstanding -= 1;
                if cy.outstanding == 0 {
                    self.finish_moves(at);
                }
            }
        }
    }

    // ---- quiescence ------------------------------------------------------

    fn masters(&self) -> Vec<ControllerId> {
        self.ctls
            .iter()
            .filter(|(id, c)| c.alive && c.started && c.gc.is_member() && c.gc.cell() == Some(**id))
            .map(|(id, _)| *id)
            .collect()
    }

    fn compute_quiescent(&self) -> bool {
        self.quiescence_blocker().is_none()
    }

    /// First reason the system is not quiescent, if any.
    pub fn quiescence_blocker(&self) -> Option<&'static str> {
        if self.partitioned || !self.held.is_empty() {
            return Some("partitioned");
        }
        if self.inflight > 0 {
            return Some("messages in flight");
        }
        if self.forced.is_some() || self.initial.is_some() {
            return Some("rebalance requested");
        }
        let live = self.live_controllers();
        let first = *live.iter().next()?;
        let Some(view) = self.ctls[&first].gc.view() else {
            return Some("no view");
        };
        if view.member_set() != live {
            return Some("view differs from live set");
        }
        let cell = self.ctls[&first].gc.cell();
        for c in &live {
            let ctl = &self.ctls[c];
            if ctl.gc.view().map(|v| v.id) != Some(view.id) {
                return Some("views differ");
            }
            if !ctl.gc.pending_ops().is_empty() || !ctl.ops.is_empty() {
                return Some("operations pending");
            }
            if ctl.elector.in_progress() {
                return Some("election in progress");
            }
            if ctl.cycle.is_some() {
                return Some("rebalance in progress");
            }
            if !ctl.rpc.is_empty() {
                return Some("calls outstanding");
            }
            if ctl.gc.cell() != cell {
                return Some("cells differ");
            }
        }
        let Some(m) = cell.filter(|m| live.contains(m)) else {
            return Some("no live master");
        };
        let (view, loads) = self.view_and_loads(m)?;
        if live
            .iter()
            .any(|&c| should_trigger(c, &self.sc.election, cell, &view, &loads))
        {
            return Some("election due");
        }
        if self.ctls[&m].rebalanced_for.as_ref() != Some(&live) {
            return Some("membership not rebalanced");
        }
        if let Some((_, target, _)) = self.plan_target(m) {
            let observed = self.observed(&live);
            if target != observed || self.ctls[&m].gc.store().mapping != observed {
                return Some("rebalance due");
            }
        }
        None
    }

    fn update_quiescence(&mut self) {
        let q = self.compute_quiescent();
        if q && !self.quiescent {
            self.quiescent = true;
            self.on_quiescent();
        } else if !q {
            self.quiescent = false;
        }
    }

    fn on_quiescent(&mut self) {
        let live = self.live_controllers();
        let masters = self.masters();
        if masters.len() != 1 {
            self.violation(format!("master uniqueness: {masters:?} at quiescence"));
        }
        for &s in &self.live_switches {
            let owner = self.aliases.owner_of(PoolAddress::for_switch(s));
            if !owner.is_some_and(|o| live.contains(&o)) {
                let msg = format!("exhaustive: {s} owned by {owner:?} at quiescence");
                self.violations.push(format!("t={} {}", self.now, msg));
                if self.opts.stop_on_violation {
                    self.stopped = true;
                }
            }
        }
        let first = *live.iter().next().unwrap();
        let snapshot = Snapshot {
            live_controllers: live.iter().copied().collect(),
            live_switches: self.live_switches.iter().copied().collect(),
            view: self.ctls[&first].gc.view().cloned(),
            masters,
            stored: self.ctls[&first].gc.store().mapping.clone(),
            aliases: self.aliases.clone(),
        };
        self.record(Node::World, TraceEvent::Quiescent { snapshot: Box::new(snapshot) });
    }
}

/// Runs a scenario with the default transport and scheduler.
pub fn run(sc: &Scenario, seed: u64) -> Trace {
    World::new(sc, seed).run()
}
