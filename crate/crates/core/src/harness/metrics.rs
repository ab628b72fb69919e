//! Latency and throughput rows derived from a trace.

use std::collections::BTreeMap;

use serde::Serialize;

use super::scenario::EventKind;
use super::trace::{Node, Trace, TraceEvent};
use crate::netmodel::{ControllerId, SwitchId};
use crate::sim::SimTime;

pub const HEADER: [&str; 5] = ["time", "node", "event", "latency_ms", "detail"];

pub const NOTIFICATION: &str = "notification";
pub const JOIN: &str = "join";
pub const ELECTION: &str = "election";
pub const MIGRATION: &str = "migration";
pub const RECONNECT: &str = "reconnect";
pub const SWITCH_RATE: &str = "switch_rate";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub time: f64,
    pub node: String,
    pub event: String,
    pub latency_ms: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub rows: Vec<MetricRow>,
}

impl Metrics {
    pub fn of(&self, event: &str) -> impl Iterator<Item = &MetricRow> + '_ {
        let event = event.to_string();
        self.rows.iter().filter(move |r| r.event == event)
    }

    pub fn latencies(&self, event: &str) -> Vec<f64> {
        self.of(event).filter_map(|r| r.latency_ms).collect()
    }

    pub fn aggregate(&self, event: &str) -> Option<Aggregate> {
        let v = self.latencies(event);
        if v.is_empty() {
            return None;
        }
        Some(Aggregate {
            count: v.len(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// CSV with the fixed header, detail rows first, then one
    /// min/mean/max row each per measured kind.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        let end = self.rows.iter().map(|r| r.time).fold(0.0, f64::max);
        let mut rows = self.rows.clone();
        for kind in [NOTIFICATION, JOIN, ELECTION, MIGRATION, RECONNECT] {
            if let Some(a) = self.aggregate(kind) {
                for (stat, v) in [("min", a.min), ("mean", a.mean), ("max", a.max)] {
                    rows.push(MetricRow {
                        time: end,
                        node: "all".into(),
                        event: format!("{kind}_{stat}"),
                        latency_ms: Some(v),
                        detail: format!("n={}", a.count),
                    });
                }
            }
        }
        for r in rows {
            let lat = r.latency_ms.map(fmt_ms).unwrap_or_default();
            w.write_record([fmt_ms(r.time), r.node, r.event, lat, r.detail])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn fmt_ms(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn row(time: SimTime, node: impl ToString, event: &str, latency: Option<SimTime>, detail: String) -> MetricRow {
    MetricRow {
        time: time.as_ms(),
        node: node.to_string(),
        event: event.to_string(),
        latency_ms: latency.map(SimTime::as_ms),
        detail,
    }
}

pub fn metrics(trace: &Trace) -> Metrics {
    let mut rows = Vec::new();
    // failed controller -> (failure time, survivors not yet notified)
    let mut failures: Vec<(ControllerId, SimTime, Vec<ControllerId>)> = Vec::new();
    let mut live: Vec<ControllerId> = Vec::new();
    let mut started: BTreeMap<ControllerId, SimTime> = BTreeMap::new();
    let mut elections: BTreeMap<ControllerId, SimTime> = BTreeMap::new();
    let mut cut: BTreeMap<SwitchId, SimTime> = BTreeMap::new();

    for r in &trace.records {
        let t = r.time;
        match (&r.event, r.node) {
            (TraceEvent::Fault { fault }, _) => match fault {
                EventKind::FailController { controller } => {
                    live.retain(|c| c != controller);
                    failures.push((*controller, t, live.clone()));
                }
                EventKind::FailSwitch { switch } => {
                    cut.remove(switch);
                }
                _ => {}
            },
            (TraceEvent::ControllerStarted, Node::Controller(c)) => {
                live.push(c);
                started.insert(c, t);
            }
            (TraceEvent::ViewInstalled { view }, Node::Controller(c)) => {
                if let Some(ts) = started.remove(&c) {
                    rows.push(row(t, c, JOIN, Some(t - ts), format!("view={}.{}", view.id.epoch, view.id.coordinator)));
                }
                for (failed, tf, waiting) in failures.iter_mut() {
                    if !view.members.contains(failed) && waiting.contains(&c) {
                        waiting.retain(|x| *x != c);
                        rows.push(row(t, c, NOTIFICATION, Some(t - *tf), format!("failed={failed}")));
                    }
                }
            }
            (TraceEvent::ElectionStart { .. }, Node::Controller(c)) => {
                elections.insert(c, t);
            }
            (TraceEvent::ElectionOutcome { result }, Node::Controller(c)) => {
                if let Some(ts) = elections.remove(&c) {
                    let detail = serde_json::to_string(result).expect("outcome serializes");
                    rows.push(row(t, c, ELECTION, Some(t - ts), detail));
                }
            }
            (TraceEvent::MoveReport { report }, Node::Controller(c)) => {
                for e in &report.entries {
                    let from = e.order.from.map_or("-".to_string(), |f| f.to_string());
                    let status = serde_json::to_value(&e.outcome).expect("outcome serializes")["status"]
                        .as_str()
                        .unwrap_or_default()
                        .to_string();
                    rows.push(MetricRow {
                        time: t.as_ms(),
                        node: c.to_string(),
                        event: MIGRATION.into(),
                        latency_ms: e.latency_ms,
                        detail: format!("{} {from}->{} {status}", e.order.switch, e.order.to),
                    });
                }
            }
            (TraceEvent::Disconnected { .. } | TraceEvent::ArpUpdated { .. }, Node::Switch(s)) => {
                cut.entry(s).or_insert(t);
            }
            (TraceEvent::Reconnected { controller }, Node::Switch(s)) => {
                if let Some(ta) = cut.remove(&s) {
                    rows.push(row(t, s, RECONNECT, Some(t - ta), format!("to={controller}")));
                }
            }
            (TraceEvent::Summary { summary }, _) => {
                for (s, rate) in &summary.switch_rates {
                    rows.push(row(t, s, SWITCH_RATE, None, format!("{rate:.3}")));
                }
            }
            _ => {}
        }
    }
    Metrics { rows }
}
