//! Declarative scenario files (JSON) and their validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::election::ElectionConfig;
use crate::groupcomm::FailureDetectorConfig;
use crate::netmodel::{ControllerId, ControllerSwitchMapping, SwitchId};
use crate::remap::RebalanceConfig;
use crate::sim::LinkLatency;
use crate::switchplane::ServiceModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub controllers: Vec<ControllerSpec>,
    /// Switches `s1..=sN` present from time zero.
    pub switches: u32,
    /// Flow-request rate per switch (requests per second). Default 1.
    #[serde(default)]
    pub switch_rates: BTreeMap<SwitchId, f64>,
    #[serde(default)]
    pub failure_detector: FailureDetectorConfig,
    #[serde(default)]
    pub election: ElectionConfig,
    #[serde(default)]
    pub rebalance: RebalanceConfig,
    #[serde(default)]
    pub service: ServiceModel,
    #[serde(default)]
    pub latency: LinkLatency,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub bootstrap: Bootstrap,
    /// Mapping installed by the first SETMAPPING cycle, when nothing is owned yet.
    #[serde(default)]
    pub initial_mapping: Option<ControllerSwitchMapping>,
    #[serde(default)]
    pub traffic: Option<TrafficConfig>,
    pub end_ms: f64,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub id: ControllerId,
    #[serde(default)]
    pub start_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub rpc_timeout_ms: f64,
    /// Delay between acquiring an alias and the switch seeing the gratuitous ARP.
    pub arp_delay_ms: f64,
    pub switch_retry_ms: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            rpc_timeout_ms: 50.0,
            arp_delay_ms: 1.0,
            switch_retry_ms: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    /// Every controller runs discovery from its start time.
    #[default]
    Discover,
    /// Controllers starting at time zero share an installed view at once.
    Formed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Maximum outstanding requests per switch.
    pub window: u32,
    pub measure_from_ms: f64,
    pub measure_ms: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            window: 64,
            measure_from_ms: 1000.0,
            measure_ms: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub time_ms: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    FailController { controller: ControllerId },
    AddController { controller: ControllerId },
    FailSwitch { switch: SwitchId },
    AddSwitch {
        switch: SwitchId,
        #[serde(default)]
        rate: Option<f64>,
    },
    SetSwitchRate { switch: SwitchId, rate: f64 },
    ForceRebalance {
        #[serde(default)]
        pins: ControllerSwitchMapping,
    },
    Partition { groups: Vec<Vec<ControllerId>> },
    Heal,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn switch_ids(&self) -> impl Iterator<Item = SwitchId> {
        (1..=self.switches).map(SwitchId)
    }

    pub fn rate_of(&self, s: SwitchId) -> f64 {
        self.switch_rates.get(&s).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        let check = |field: &str, r: Result<(), String>| r.map_err(|m| invalid(field, m));
        check("failure_detector", self.failure_detector.validate())?;
        check("election", self.election.validate())?;
        check("rebalance", self.rebalance.validate())?;
        check("service", self.service.validate())?;
        let lat = &self.latency;
        if !(lat.min_ms >= 0.0 && lat.max_ms >= lat.min_ms) {
            return Err(invalid("latency", "need 0 <= min_ms <= max_ms"));
        }
        if !(0.0..=1.0).contains(&lat.drop_probability) {
            return Err(invalid("latency.drop_probability", "must be within [0, 1]"));
        }
        if !(2.0 * lat.max_ms < self.failure_detector.suspect_timeout_ms) {
            return Err(invalid(
                "latency.max_ms",
                "round trip must stay below the suspect timeout",
            ));
        }
        let t = &self.timing;
        if !(t.rpc_timeout_ms > 2.0 * lat.max_ms) {
            return Err(invalid("timing.rpc_timeout_ms", "must exceed one round trip"));
        }
        if !(t.arp_delay_ms >= 0.0 && t.switch_retry_ms > 0.0) {
            return Err(invalid("timing", "arp_delay_ms >= 0 and switch_retry_ms > 0 required"));
        }
        if !(self.end_ms > 0.0) {
            return Err(invalid("end_ms", "must be > 0"));
        }
        if self.controllers.is_empty() {
            return Err(invalid("controllers", "at least one controller required"));
        }
        let mut controllers = BTreeSet::new();
        for (i, c) in self.controllers.iter().enumerate() {
            if c.id.0 == 0 {
                return Err(invalid(format!("controllers[{i}].id"), "ranks start at 1"));
            }
            if !controllers.insert(c.id) {
                return Err(invalid(format!("controllers[{i}].id"), format!("duplicate {}", c.id)));
            }
            if !(c.start_ms >= 0.0 && c.start_ms <= self.end_ms) {
                return Err(invalid(format!("controllers[{i}].start_ms"), "outside [0, end_ms]"));
            }
        }
        let mut switches: BTreeSet<SwitchId> = self.switch_ids().collect();
        for (s, r) in &self.switch_rates {
            if !switches.contains(s) {
                return Err(invalid(format!("switch_rates.{}", s.0), format!("unknown switch {s}")));
            }
            if !(*r >= 0.0) {
                return Err(invalid(format!("switch_rates.{}", s.0), "rate must be >= 0"));
            }
        }
        if let Some(m) = &self.initial_mapping {
            let mut seen = BTreeSet::new();
            for a in m.iter() {
                if !controllers.contains(&a.controller) {
                    return Err(invalid("initial_mapping", format!("unknown controller {}", a.controller)));
                }
                if !switches.contains(&a.switch) {
                    return Err(invalid("initial_mapping", format!("unknown switch {}", a.switch)));
                }
                if !seen.insert(a.switch) {
                    return Err(invalid("initial_mapping", format!("{} mapped twice", a.switch)));
                }
            }
        }
        if let Some(tr) = &self.traffic {
            if tr.window == 0 || !(tr.measure_from_ms >= 0.0 && tr.measure_ms > 0.0) {
                return Err(invalid("traffic", "window >= 1, measure_from_ms >= 0, measure_ms > 0"));
            }
        }
        let mut ever = controllers.clone();
        let mut last = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            let field = |f: &str| format!("events[{i}].{f}");
            if !(e.time_ms >= last) {
                return Err(invalid(field("time_ms"), "event times must be non-decreasing"));
            }
            if e.time_ms > self.end_ms {
                return Err(invalid(field("time_ms"), "after end_ms"));
            }
            last = e.time_ms;
            match &e.kind {
                EventKind::FailController { controller } => {
                    if !ever.contains(controller) {
                        return Err(invalid(field("controller"), format!("unknown {controller}")));
                    }
                }
                EventKind::AddController { controller } => {
                    if controller.0 == 0 || ever.iter().any(|c| c >= controller) {
                        return Err(invalid(
                            field("controller"),
                            "added controllers need a rank above every existing one",
                        ));
                    }
                    ever.insert(*controller);
                }
                EventKind::FailSwitch { switch } => {
                    if !switches.contains(switch) {
                        return Err(invalid(field("switch"), format!("unknown {switch}")));
                    }
                }
                EventKind::AddSwitch { switch, rate } => {
                    if switch.0 == 0 || !switches.insert(*switch) {
                        return Err(invalid(field("switch"), format!("{switch} already exists")));
                    }
                    if matches!(rate, Some(r) if !(*r >= 0.0)) {
                        return Err(invalid(field("rate"), "rate must be >= 0"));
                    }
                }
                EventKind::SetSwitchRate { switch, rate } => {
                    if !switches.contains(switch) {
                        return Err(invalid(field("switch"), format!("unknown {switch}")));
                    }
                    if !(*rate >= 0.0) {
                        return Err(invalid(field("rate"), "rate must be >= 0"));
                    }
                }
                EventKind::ForceRebalance { pins } => {
                    if pins.as_map().len() != pins.len() {
                        return Err(invalid(field("pins"), "switch pinned twice"));
                    }
                    for a in pins.iter() {
                        if !switches.contains(&a.switch) || !ever.contains(&a.controller) {
                            return Err(invalid(
                                field("pins"),
                                format!("unknown pin {} -> {}", a.switch, a.controller),
                            ));
                        }
                    }
                }
                EventKind::Partition { groups } => {
                    let mut seen = BTreeSet::new();
                    for c in groups.iter().flatten() {
                        if !ever.contains(c) || !seen.insert(*c) {
                            return Err(invalid(field("groups"), format!("bad member {c}")));
                        }
                    }
                }
                EventKind::Heal => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "controllers": [{"id": 1}],
        "switches": 0,
        "end_ms": 100
    }"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.failure_detector.suspect_timeout_ms, 40.0);
        assert_eq!(s.bootstrap, Bootstrap::Discover);
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = MINIMAL.replace("\"switches\": 0", "\"switches\": 1, \"events\": [{\"time_ms\": 5, \"kind\": \"fail-switch\", \"switch\": 7}]");
        match Scenario::from_json(&bad) {
            Err(ScenarioError::Invalid { field, .. }) => assert_eq!(field, "events[0].switch"),
            other => panic!("{other:?}"),
        }
        match Scenario::from_json("{\n  \"schema_version\": 1,\n  \"oops\": 3\n}") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let late = MINIMAL.replace("\"switches\": 0", "\"switches\": 0, \"events\": [{\"time_ms\": 50, \"kind\": \"heal\"}, {\"time_ms\": 10, \"kind\": \"heal\"}]");
        assert!(matches!(Scenario::from_json(&late), Err(ScenarioError::Invalid { .. })));
    }

    #[test]
    fn added_controller_rank_must_grow() {
        let bad = MINIMAL.replace("\"switches\": 0", "\"switches\": 0, \"events\": [{\"time_ms\": 5, \"kind\": \"add-controller\", \"controller\": 1}]");
        assert!(Scenario::from_json(&bad).is_err());
        let ok = MINIMAL.replace("\"switches\": 0", "\"switches\": 0, \"events\": [{\"time_ms\": 5, \"kind\": \"add-controller\", \"controller\": 2}]");
        assert!(Scenario::from_json(&ok).is_ok());
    }
}
