//! Deterministic discrete-event substrate: simulated time, the transport
//! seam, the seeded simulated network and the event queue.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::netmodel::{ControllerId, Vertex};

/// Simulated time with microsecond resolution. Serialized as milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: f64) -> Self {
        SimTime((ms * 1000.0).round().max(0.0) as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_ms())
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_multiple_of(1000) {
            s.serialize_u64(self.0 / 1000)
        } else {
            s.serialize_f64(self.as_ms())
        }
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ms = f64::deserialize(d)?;
        if !(ms >= 0.0) {
            return Err(serde::de::Error::custom("time must be non-negative"));
        }
        Ok(SimTime::from_ms(ms))
    }
}

/// Delivery class. Datagrams (heartbeats, flow traffic) may be dropped;
/// reliable traffic is only lost to partitions or dead receivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Class {
    Reliable,
    Datagram,
}

/// The transport seam: decides when (or whether) an envelope sent at `now`
/// is delivered. Implementations keep per-channel FIFO order.
pub trait Transport: Send {
    fn deliver_at(&mut self, from: Vertex, to: Vertex, class: Class, now: SimTime) -> Option<SimTime>;
    /// Whether a partition currently separates `a` from `b`.
    fn separated(&self, a: Vertex, b: Vertex) -> bool;
    fn partition(&mut self, groups: &[BTreeSet<ControllerId>]);
    fn heal(&mut self);
    fn max_latency(&self) -> SimTime;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkLatency {
    pub min_ms: f64,
    pub max_ms: f64,
    /// Datagram drop probability.
    pub drop_probability: f64,
}

impl Default for LinkLatency {
    fn default() -> Self {
        Self {
            min_ms: 1.0,
            max_ms: 2.0,
            drop_probability: 0.0,
        }
    }
}

impl LinkLatency {
    pub fn constant(ms: f64) -> Self {
        Self {
            min_ms: ms,
            max_ms: ms,
            drop_probability: 0.0,
        }
    }
}

/// Seeded simulated network. Randomness is only drawn when the latency
/// range is non-degenerate or drops are enabled, so zero-variance
/// configurations behave identically under every seed.
pub struct SimNet {
    lo: u64,
    hi: u64,
    drop_probability: f64,
    rng: ChaCha8Rng,
    last: BTreeMap<(Vertex, Vertex), SimTime>,
    side: BTreeMap<ControllerId, usize>,
}

impl SimNet {
    pub fn new(cfg: LinkLatency, seed: u64) -> Self {
        let lo = SimTime::from_ms(cfg.min_ms).0;
        let hi = SimTime::from_ms(cfg.max_ms).0.max(lo);
        Self {
            lo,
            hi,
            drop_probability: cfg.drop_probability,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: BTreeMap::new(),
            side: BTreeMap::new(),
        }
    }

    fn is_split(&self, a: Vertex, b: Vertex) -> bool {
        match (a, b) {
            (Vertex::Controller(x), Vertex::Controller(y)) => {
                match (self.side.get(&x), self.side.get(&y)) {
                    (Some(p), Some(q)) => p != q,
                    (None, None) => false,
                    _ => !self.side.is_empty(),
                }
            }
            _ => false,
        }
    }
}

impl Transport for SimNet {
    fn deliver_at(&mut self, from: Vertex, to: Vertex, class: Class, now: SimTime) -> Option<SimTime> {
        if self.is_split(from, to) {
            return None;
        }
        if class == Class::Datagram
            && self.drop_probability > 0.0
            && self.rng.gen_bool(self.drop_probability.min(1.0))
        {
            return None;
        }
        let lat = if self.hi > self.lo {
            self.rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        };
        let mut at = now + SimTime(lat);
        let slot = self.last.entry((from, to)).or_insert(SimTime::ZERO);
        if at < *slot {
            at = *slot;
        }
        *slot = at;
        Some(at)
    }

    fn separated(&self, a: Vertex, b: Vertex) -> bool {
        self.is_split(a, b)
    }

    /// Controllers in different groups cannot talk; controllers not named
    /// in any group form their own side. Switch links are unaffected.
    fn partition(&mut self, groups: &[BTreeSet<ControllerId>]) {
        self.side.clear();
        for (i, g) in groups.iter().enumerate() {
            for &c in g {
                self.side.insert(c, i + 1);
            }
        }
    }

    fn heal(&mut self) {
        self.side.clear();
    }

    fn max_latency(&self) -> SimTime {
        SimTime(self.hi)
    }
}

/// In-process transport: zero latency, nothing dropped, no partitions.
#[derive(Debug, Default)]
pub struct Loopback;

impl Transport for Loopback {
    fn deliver_at(&mut self, _: Vertex, _: Vertex, _: Class, now: SimTime) -> Option<SimTime> {
        Some(now)
    }
    fn separated(&self, _: Vertex, _: Vertex) -> bool {
        false
    }
    fn partition(&mut self, _: &[BTreeSet<ControllerId>]) {}
    fn heal(&mut self) {}
    fn max_latency(&self) -> SimTime {
        SimTime::ZERO
    }
}

/// Chooses among simultaneous events bound for the same node. The default
/// keeps insertion order; the interleaving explorer enumerates choices.
pub trait Chooser: Send {
    fn choose(&mut self, options: usize) -> usize;
}

#[derive(Debug, Default)]
pub struct Fifo;

impl Chooser for Fifo {
    fn choose(&mut self, _: usize) -> usize {
        0
    }
}

impl<C: Chooser> Chooser for std::sync::Arc<std::sync::Mutex<C>> {
    fn choose(&mut self, options: usize) -> usize {
        self.lock().expect("chooser lock").choose(options)
    }
}

/// Replays a fixed prefix of choices, then picks 0, recording the arity of
/// every choice point it passes.
#[derive(Debug, Default, Clone)]
pub struct Replay {
    pub prefix: Vec<usize>,
    pub taken: Vec<(usize, usize)>,
}

impl Chooser for Replay {
    fn choose(&mut self, options: usize) -> usize {
        let i = self.taken.len();
        let pick = self.prefix.get(i).copied().unwrap_or(0).min(options - 1);
        self.taken.push((pick, options));
        pick
    }
}

impl Replay {
    /// Next prefix in depth-first order, or `None` when exhausted.
    pub fn next_prefix(&self) -> Option<Vec<usize>> {
        let mut taken = self.taken.clone();
        while let Some((pick, arity)) = taken.pop() {
            if pick + 1 < arity {
                let mut p: Vec<usize> = taken.iter().map(|(c, _)| *c).collect();
                p.push(pick + 1);
                return Some(p);
            }
        }
        None
    }
}

/// Min-queue of events ordered by (time, insertion sequence).
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    items: BTreeMap<u64, (E, Option<Vertex>)>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            items: BTreeMap::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, at: SimTime, target: Option<Vertex>, ev: E) {
        let id = self.seq;
        self.seq += 1;
        self.heap.push(Reverse((at, id)));
        self.items.insert(id, (ev, target));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((t, _))| *t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.items.values().map(|(e, _)| e)
    }

    /// Pops the next event. When several events share the earliest time and
    /// target the same node as the first of them, `chooser` picks which runs.
    pub fn pop(&mut self, chooser: &mut dyn Chooser) -> Option<(SimTime, E)> {
        let Reverse((t, first)) = self.heap.pop()?;
        let target = self.items[&first].1;
        let mut same = vec![first];
        if target.is_some() {
            let mut others = Vec::new();
            while let Some(&Reverse((t2, id))) = self.heap.peek() {
                if t2 != t {
                    break;
                }
                self.heap.pop();
                if self.items[&id].1 == target {
                    same.push(id);
                } else {
                    others.push(id);
                }
            }
            for id in others {
                self.heap.push(Reverse((t, id)));
            }
        }
        let pick = if same.len() > 1 {
            chooser.choose(same.len())
        } else {
            0
        };
        let chosen = same.remove(pick);
        for id in same {
            self.heap.push(Reverse((t, id)));
        }
        let (ev, _) = self.items.remove(&chosen).expect("queued event");
        Some((t, ev))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_serde_roundtrip() {
        for t in [SimTime(0), SimTime(9_000_000), SimTime(1_500), SimTime(123_456_789)] {
            let s = serde_json::to_string(&t).unwrap();
            let back: SimTime = serde_json::from_str(&s).unwrap();
            assert_eq!(back, t, "{s}");
        }
        assert_eq!(serde_json::to_string(&SimTime(9_000_000)).unwrap(), "9000");
    }

    #[test]
    fn simnet_is_fifo_per_channel() {
        let mut net = SimNet::new(
            LinkLatency {
                min_ms: 0.1,
                max_ms: 5.0,
                drop_probability: 0.0,
            },
            7,
        );
        let a = Vertex::Controller(ControllerId(1));
        let b = Vertex::Controller(ControllerId(2));
        let mut prev = SimTime::ZERO;
        for i in 0..200 {
            let at = net.deliver_at(a, b, Class::Reliable, SimTime(i * 100)).unwrap();
            assert!(at >= prev);
            assert!(at <= SimTime(i * 100) + SimTime(5000) || at == prev);
            prev = at;
        }
    }

    #[test]
    fn partition_blocks_controller_links_only() {
        let mut net = SimNet::new(LinkLatency::constant(1.0), 0);
        let c1 = Vertex::Controller(ControllerId(1));
        let c2 = Vertex::Controller(ControllerId(2));
        let s1 = Vertex::Switch(crate::netmodel::SwitchId(1));
        net.partition(&[BTreeSet::from([ControllerId(1)])]);
        assert!(net.deliver_at(c1, c2, Class::Reliable, SimTime(0)).is_none());
        assert!(net.deliver_at(c1, s1, Class::Reliable, SimTime(0)).is_some());
        net.heal();
        assert_eq!(
            net.deliver_at(c1, c2, Class::Reliable, SimTime(0)),
            Some(SimTime(1000))
        );
    }

    #[test]
    fn queue_orders_and_chooses() {
        let mut q = EventQueue::default();
        let n1 = Some(Vertex::Controller(ControllerId(1)));
        q.push(SimTime(5), n1, "late");
        q.push(SimTime(1), n1, "a");
        q.push(SimTime(1), n1, "b");
        q.push(SimTime(1), None, "x");
        let mut r = Replay {
            prefix: vec![1],
            taken: vec![],
        };
        assert_eq!(q.pop(&mut r).unwrap().1, "b");
        assert_eq!(r.taken, vec![(1, 2)]);
        assert_eq!(q.pop(&mut r).unwrap().1, "a");
        assert_eq!(q.pop(&mut r).unwrap().1, "x");
        assert_eq!(q.pop(&mut r).unwrap().1, "late");
        assert!(q.pop(&mut r).is_none());
        assert_eq!(r.next_prefix(), None);
    }
}
