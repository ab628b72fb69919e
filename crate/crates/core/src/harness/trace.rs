//! Trace records and their JSON-lines encoding.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::scenario::{EventKind, Scenario};
use crate::election::ElectionOutcome;
use crate::groupcomm::{MembershipView, OpId};
use crate::lincheck::{RegOp, RegRet};
use crate::netmodel::{AliasTable, ControllerId, ControllerSwitchMapping, MigrationOrder, PoolAddress, SwitchId};
use crate::remap::{MigrationReport, RebalanceReason};
use crate::sim::SimTime;
use crate::switchplane::SwitchCounters;

/// Who a record is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    World,
    Controller(ControllerId),
    Switch(SwitchId),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::World => f.write_str("world"),
            Node::Controller(c) => write!(f, "{c}"),
            Node::Switch(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for Node {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let num = |t: &str| t.parse::<u32>().map_err(serde::de::Error::custom);
        if s == "world" {
            Ok(Node::World)
        } else if let Some(r) = s.strip_prefix('c') {
            Ok(Node::Controller(ControllerId(num(r)?)))
        } else if let Some(r) = s.strip_prefix('s') {
            Ok(Node::Switch(SwitchId(num(r)?)))
        } else {
            Err(serde::de::Error::custom(format!("unknown node `{s}`")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub node: Node,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// State captured at a quiescent point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub live_controllers: Vec<ControllerId>,
    pub live_switches: Vec<SwitchId>,
    pub view: Option<MembershipView>,
    pub masters: Vec<ControllerId>,
    pub stored: ControllerSwitchMapping,
    pub aliases: AliasTable,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub final_mapping: ControllerSwitchMapping,
    pub aliases: AliasTable,
    pub live_controllers: Vec<ControllerId>,
    pub masters: Vec<ControllerId>,
    pub quiescent: bool,
    pub switch_counters: BTreeMap<SwitchId, SwitchCounters>,
    /// Per-switch responses per second over the measurement window.
    pub switch_rates: BTreeMap<SwitchId, f64>,
    pub dropped: BTreeMap<String, u64>,
    pub events_processed: u64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    ScenarioLoaded { scenario: Box<Scenario>, seed: u64 },
    Fault { fault: EventKind },
    ControllerStarted,
    ViewInstalled { view: MembershipView },
    Suspect { peer: ControllerId },
    Rejoin { coordinator: ControllerId },
    ElectionStart { stale: Option<ControllerId> },
    ElectionOutcome { result: ElectionOutcome },
    MasterChanged { master: Option<ControllerId> },
    OpInvoke { op_id: OpId, op: RegOp },
    OpComplete { op_id: OpId, ret: Option<RegRet> },
    MappingStored { version: u64, mapping: ControllerSwitchMapping },
    RebalanceStart { reason: RebalanceReason, mapping: ControllerSwitchMapping },
    MoveDispatched { order: MigrationOrder, contact: ControllerId },
    AliasReleased { pool: PoolAddress },
    AliasAcquired { pool: PoolAddress },
    AliasLost { pools: Vec<PoolAddress> },
    AliasConflict { pool: PoolAddress, owner: ControllerId },
    ArpPing { switch: SwitchId },
    ArpUpdated { owner: ControllerId },
    MoveReport { report: MigrationReport },
    Disconnected { from: ControllerId },
    Reconnected { controller: ControllerId },
    Quiescent { snapshot: Box<Snapshot> },
    Summary { summary: Box<Summary> },
}

impl TraceEvent {
    pub fn name(&self) -> &'static str {
        match self {
            TraceEvent::ScenarioLoaded { .. } => "scenario_loaded",
            TraceEvent::Fault { .. } => "fault",
            TraceEvent::ControllerStarted => "controller_started",
            TraceEvent::ViewInstalled { .. } => "view_installed",
            TraceEvent::Suspect { .. } => "suspect",
            TraceEvent::Rejoin { .. } => "rejoin",
            TraceEvent::ElectionStart { .. } => "election_start",
            TraceEvent::ElectionOutcome { .. } => "election_outcome",
            TraceEvent::MasterChanged { .. } => "master_changed",
            TraceEvent::OpInvoke { .. } => "op_invoke",
            TraceEvent::OpComplete { .. } => "op_complete",
            TraceEvent::MappingStored { .. } => "mapping_stored",
            TraceEvent::RebalanceStart { .. } => "rebalance_start",
            TraceEvent::MoveDispatched { .. } => "move_dispatched",
            TraceEvent::AliasReleased { .. } => "alias_released",
            TraceEvent::AliasAcquired { .. } => "alias_acquired",
            TraceEvent::AliasLost { .. } => "alias_lost",
            TraceEvent::AliasConflict { .. } => "alias_conflict",
            TraceEvent::ArpPing { .. } => "arp_ping",
            TraceEvent::ArpUpdated { .. } => "arp_updated",
            TraceEvent::MoveReport { .. } => "move_report",
            TraceEvent::Disconnected { .. } => "disconnected",
            TraceEvent::Reconnected { .. } => "reconnected",
            TraceEvent::Quiescent { .. } => "quiescent",
            TraceEvent::Summary { .. } => "summary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {source}")]
pub struct TraceParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceParseError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|source| TraceParseError { line: i + 1, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn scenario(&self) -> Option<(&Scenario, u64)> {
        self.records.iter().find_map(|r| match &r.event {
            TraceEvent::ScenarioLoaded { scenario, seed } => Some((&**scenario, *seed)),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&Summary> {
        self.records.iter().rev().find_map(|r| match &r.event {
            TraceEvent::Summary { summary } => Some(&**summary),
            _ => None,
        })
    }

    /// Stored mappings in order, one per new version.
    pub fn mapping_sequence(&self) -> Vec<ControllerSwitchMapping> {
        let mut last = 0;
        let mut out = Vec::new();
        for r in &self.records {
            if let TraceEvent::MappingStored { version, mapping } = &r.event {
                if *version > last {
                    last = *version;
                    out.push(mapping.clone());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_names_roundtrip() {
        for n in [Node::World, Node::Controller(ControllerId(3)), Node::Switch(SwitchId(12))] {
            let s = serde_json::to_string(&n).unwrap();
            assert_eq!(serde_json::from_str::<Node>(&s).unwrap(), n);
        }
        assert!(serde_json::from_str::<Node>("\"x1\"").is_err());
    }

    #[test]
    fn record_line_shape() {
        let r = TraceRecord {
            time: SimTime::from_ms(10.5),
            node: Node::Controller(ControllerId(1)),
            event: TraceEvent::AliasAcquired { pool: PoolAddress(3) },
        };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(line, r#"{"time":10.5,"node":"c1","event":"alias_acquired","pool":3}"#);
        let t = Trace { records: vec![r] };
        assert_eq!(Trace::from_jsonl(&t.to_jsonl()).unwrap(), t);
    }
}
