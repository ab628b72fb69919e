//! Emulated switches and the controller-side request service.
//!
//! A switch dials one fixed pool address for its whole life. Which
//! controller answers is decided by its ARP binding, which only changes on a
//! gratuitous ARP. While connected it keeps up to `window` flow requests
//! outstanding, paced by its request rate (a closed loop in the style of
//! cbench). Controllers serve requests FIFO with a cost that grows
//! quadratically in the number of switches they own.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::netmodel::{AliasTable, ControllerId, PoolAddress, SwitchId};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceModel {
    /// Fixed cost per request, ms.
    pub base_cost_ms: f64,
    /// Coefficient of the `q^2` term, ms.
    pub quadratic_cost_ms: f64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self {
            base_cost_ms: 0.1,
            quadratic_cost_ms: 0.05,
        }
    }
}

impl ServiceModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_cost_ms >= 0.0 && self.quadratic_cost_ms >= 0.0) {
            return Err("service costs must be >= 0".into());
        }
        if self.base_cost_ms + self.quadratic_cost_ms <= 0.0 {
            return Err("service cost must be positive".into());
        }
        Ok(())
    }

    /// Cost of one request at a controller owning `q` switches.
    pub fn cost_ms(&self, q: usize) -> f64 {
        let q = q as f64;
        self.base_cost_ms + self.quadratic_cost_ms * q * q
    }

    pub fn cost(&self, q: usize) -> SimTime {
        SimTime::from_ms(self.cost_ms(q))
    }

    /// Saturated per-switch response rate (per second) at a controller
    /// serving `q` switches round robin.
    pub fn per_switch_rate(&self, q: usize) -> f64 {
        if q == 0 {
            return 0.0;
        }
        1000.0 / (q as f64 * self.cost_ms(q))
    }

    /// Mean saturated per-switch rate for a distribution of switch counts.
    pub fn mean_rate(&self, counts: &[usize]) -> f64 {
        let switches: usize = counts.iter().sum();
        if switches == 0 {
            return 0.0;
        }
        counts
            .iter()
            .map(|&q| q as f64 * self.per_switch_rate(q))
            .sum::<f64>()
            / switches as f64
    }
}

/// Switch counts per controller for `m` switches on `k` controllers, as
/// even as possible, larger shares first.
pub fn balanced_counts(m: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| m / k + usize::from(i < m % k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "controller", rename_all = "snake_case")]
pub enum ConnState {
    Connected(ControllerId),
    Connecting,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRequest {
    pub switch: SwitchId,
    pub seq: u64,
    pub issued: SimTime,
    /// Connection generation; replies to an older one are discarded.
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCounters {
    pub issued: u64,
    pub responses: u64,
    pub lost: u64,
    pub disconnects: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwTimer {
    Retry(u64),
    Issue(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwOutput {
    Connect { to: ControllerId, pool: PoolAddress, epoch: u64 },
    Request { to: ControllerId, req: FlowRequest },
    Timer { at: SimTime, timer: SwTimer },
    Disconnected,
    Reconnected { controller: ControllerId },
}

#[derive(Debug, Clone)]
pub struct EmulatedSwitch {
    pub id: SwitchId,
    target: PoolAddress,
    arp_binding: Option<ControllerId>,
    conn: ConnState,
    /// Flow requests per simulated second.
    pub rate: f64,
    window: u32,
    traffic: bool,
    retry: SimTime,
    epoch: u64,
    outstanding: u32,
    next_seq: u64,
    next_issue: SimTime,
    issue_armed: bool,
    pub counters: SwitchCounters,
}

impl EmulatedSwitch {
    pub fn new(id: SwitchId, rate: f64, window: u32, traffic: bool, retry: SimTime) -> Self {
        Self {
            id,
            target: PoolAddress::for_switch(id),
            arp_binding: None,
            conn: ConnState::Connecting,
            rate,
            window,
            traffic,
            retry,
            epoch: 0,
            outstanding: 0,
            next_seq: 0,
            next_issue: SimTime::ZERO,
            issue_armed: false,
            counters: SwitchCounters::default(),
        }
    }

    pub fn target(&self) -> PoolAddress {
        self.target
    }

    pub fn arp_binding(&self) -> Option<ControllerId> {
        self.arp_binding
    }

    pub fn conn(&self) -> ConnState {
        self.conn
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_down(&self) -> bool {
        self.conn == ConnState::Down
    }

    /// Connection attempt to whatever the ARP binding says.
    pub fn attempt(&mut self, now: SimTime) -> Vec<SwOutput> {
        if self.is_down() || matches!(self.conn, ConnState::Connected(_)) {
            return Vec::new();
        }
        self.epoch += 1;
        let Some(c) = self.arp_binding else {
            return Vec::new();
        };
        vec![
            SwOutput::Connect {
                to: c,
                pool: self.target,
                epoch: self.epoch,
            },
            SwOutput::Timer {
                at: now + self.retry,
                timer: SwTimer::Retry(self.epoch),
            },
        ]
    }

    /// Gratuitous ARP: rebinds the pool address and reconnects at once if
    /// the binding moved away from the current connection.
    pub fn on_arp(&mut self, now: SimTime, owner: ControllerId) -> Vec<SwOutput> {
        self.arp_binding = Some(owner);
        match self.conn {
            ConnState::Connected(c) if c == owner => Vec::new(),
            ConnState::Down => Vec::new(),
            ConnState::Connected(_) => {
                let mut out = self.drop_connection();
                out.extend(self.attempt(now));
                out
            }
            ConnState::Connecting => self.attempt(now),
        }
    }

    pub fn on_retry(&mut self, now: SimTime, epoch: u64) -> Vec<SwOutput> {
        if epoch == self.epoch && self.conn == ConnState::Connecting {
            self.attempt(now)
        } else {
            Vec::new()
        }
    }

    pub fn on_connect_reply(&mut self, now: SimTime, from: ControllerId, epoch: u64, ok: bool) -> Vec<SwOutput> {
        if epoch != self.epoch || self.conn != ConnState::Connecting || !ok {
            return Vec::new();
        }
        self.conn = ConnState::Connected(from);
        let mut out = vec![SwOutput::Reconnected { controller: from }];
        self.next_issue = self.next_issue.max(now);
        out.extend(self.pump(now));
        out
    }

    /// The controller serving this switch dropped the pool alias or died.
    pub fn on_reset(&mut self, now: SimTime, by: ControllerId) -> Vec<SwOutput> {
        if self.conn != ConnState::Connected(by) {
            return Vec::new();
        }
        let mut out = self.drop_connection();
        out.push(SwOutput::Timer {
            at: now + self.retry,
            timer: SwTimer::Retry(self.epoch),
        });
        out
    }

    fn drop_connection(&mut self) -> Vec<SwOutput> {
        self.conn = ConnState::Connecting;
        self.counters.lost += u64::from(self.outstanding);
        self.outstanding = 0;
        self.counters.disconnects += 1;
        self.epoch += 1;
        self.issue_armed = false;
        vec![SwOutput::Disconnected]
    }

    pub fn fail(&mut self) {
        self.counters.lost += u64::from(self.outstanding);
        self.outstanding = 0;
        self.conn = ConnState::Down;
        self.epoch += 1;
    }

    pub fn set_rate(&mut self, now: SimTime, rate: f64) -> Vec<SwOutput> {
        self.rate = rate;
        self.next_issue = self.next_issue.max(now);
        self.pump(now)
    }

    pub fn on_issue_timer(&mut self, now: SimTime, epoch: u64) -> Vec<SwOutput> {
        if epoch != self.epoch {
            return Vec::new();
        }
        self.issue_armed = false;
        self.pump(now)
    }

    pub fn on_response(&mut self, now: SimTime, req: FlowRequest) -> Vec<SwOutput> {
        if req.epoch != self.epoch || !matches!(self.conn, ConnState::Connected(_)) {
            return Vec::new();
        }
        self.outstanding -= 1;
        self.counters.responses += 1;
        self.pump(now)
    }

    fn pump(&mut self, now: SimTime) -> Vec<SwOutput> {
        let ConnState::Connected(c) = self.conn else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if !self.traffic || !(self.rate > 0.0) {
            return out;
        }
        let gap = SimTime::from_ms(1000.0 / self.rate).max(SimTime(1));
        while self.outstanding < self.window && self.next_issue <= now {
            self.next_seq += 1;
            self.outstanding += 1;
            self.counters.issued += 1;
            out.push(SwOutput::Request {
                to: c,
                req: FlowRequest {
                    switch: self.id,
                    seq: self.next_seq,
                    issued: now,
                    epoch: self.epoch,
                },
            });
            self.next_issue = self.next_issue + gap;
        }
        if self.outstanding < self.window && !self.issue_armed {
            self.issue_armed = true;
            out.push(SwOutput::Timer {
                at: self.next_issue,
                timer: SwTimer::Issue(self.epoch),
            });
        }
        out
    }
}

/// Where a switch's traffic goes right now: its ARP binding, which may be
/// stale with respect to `_table`.
pub fn resolve(s: &EmulatedSwitch, _table: &AliasTable) -> Option<ControllerId> {
    s.arp_binding
}

/// FIFO request service at one controller.
#[derive(Debug, Clone, Default)]
pub struct ServiceQueue {
    queue: VecDeque<FlowRequest>,
    in_service: Option<FlowRequest>,
}

impl ServiceQueue {
    /// Enqueues; returns the request to start now, if the server was idle.
    pub fn arrive(&mut self, req: FlowRequest) -> Option<FlowRequest> {
        if self.in_service.is_none() {
            self.in_service = Some(req);
            Some(req)
        } else {
            self.queue.push_back(req);
            None
        }
    }

    /// Finishes the request in service; returns it and the next one to start.
    pub fn complete(&mut self) -> (Option<FlowRequest>, Option<FlowRequest>) {
        let done = self.in_service.take();
        self.in_service = self.queue.pop_front();
        (done, self.in_service)
    }

    pub fn len(&self) -> usize {
        self.queue.len() + usize::from(self.in_service.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.queue.clear();
        self.in_service = None;
    }
}
