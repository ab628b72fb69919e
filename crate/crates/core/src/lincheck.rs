//! Linearizability checking of master-cell histories against a sequential
//! register with compare-and-swap.
//!
//! Depth-first search in the style of Wing and Gong with memoization of
//! (linearized set, register value). Operations that never returned may be
//! placed anywhere after their invocation or left out.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::netmodel::ControllerId;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RegOp {
    Get,
    Cas {
        expected: Option<ControllerId>,
        new: Option<ControllerId>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ret", rename_all = "snake_case")]
pub enum RegRet {
    Value { value: Option<ControllerId> },
    Swapped { ok: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub process: ControllerId,
    pub op: RegOp,
    /// `None` if the operation never returned.
    pub ret: Option<RegRet>,
    pub invoke: SimTime,
    pub response: Option<SimTime>,
}

/// Applies `op` to the sequential register.
pub fn step(state: Option<ControllerId>, op: RegOp) -> (Option<ControllerId>, RegRet) {
    match op {
        RegOp::Get => (state, RegRet::Value { value: state }),
        RegOp::Cas { expected, new } => {
            if state == expected {
                (new, RegRet::Swapped { ok: true })
            } else {
                (state, RegRet::Swapped { ok: false })
            }
        }
    }
}

/// A witness order (indices into the history) if one exists.
pub fn linearize(history: &[HistoryEntry], initial: Option<ControllerId>) -> Option<Vec<usize>> {
    assert!(history.len() <= 128, "history too long for the checker");
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    let required: u128 = history
        .iter()
        .enumerate()
        .filter(|(_, e)| e.ret.is_some())
        .fold(0, |m, (i, _)| m | 1 << i);
    if search(history, initial, 0, required, &mut seen, &mut order) {
        Some(order)
    } else {
        None
    }
}

pub fn is_linearizable(history: &[HistoryEntry], initial: Option<ControllerId>) -> bool {
    linearize(history, initial).is_some()
}

fn search(
    h: &[HistoryEntry],
    state: Option<ControllerId>,
    done: u128,
    required: u128,
    seen: &mut HashSet<(u128, Option<ControllerId>)>,
    order: &mut Vec<usize>,
) -> bool {
    if done & required == required {
        return true;
    }
    if !seen.insert((done, state)) {
        return false;
    }
    // earliest response among the remaining completed ops bounds who can go next
    let horizon = h
        .iter()
        .enumerate()
        .filter(|(i, _)| done & (1 << i) == 0)
        .filter_map(|(_, e)| e.response)
        .min()
        .unwrap_or(SimTime(u64::MAX));
    for (i, e) in h.iter().enumerate() {
        if done & (1 << i) != 0 || e.invoke > horizon {
            continue;
        }
        let (next, ret) = step(state, e.op);
        if e.ret.is_none_or(|r| r == ret) {
            order.push(i);
            if search(h, next, done | 1 << i, required, seen, order) {
                return true;
            }
            order.pop();
        }
    }
    false
}
