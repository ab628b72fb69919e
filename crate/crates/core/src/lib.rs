//! Coordination of a cluster of OpenFlow controllers: group membership,
//! master election, switch remapping and address failover, all driven by a
//! deterministic discrete-event simulator.
//!
//! Load arithmetic is generic over [`scalar::Load`]; the aliases below fix
//! it to `f64` for the simulated cluster.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod netmodel;
pub mod scalar;
pub mod remap;
pub mod sim;
pub mod groupcomm;
pub mod election;
pub mod switchplane;
pub mod lincheck;
pub mod harness;

pub type Stats = remap::Stats<f64>;
pub type LoadReport = election::LoadReport<f64>;
