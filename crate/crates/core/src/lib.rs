//! A desk-scale, layered service-oriented vehicle software stack.
//!
//! Layers, bottom to top: [`hal`] (simulated devices and normalization),
//! [`middleware`] (pub/sub + client/server with QoS and discovery),
//! [`funcsw`] (data-flow orchestration), [`envmodel`] (environment record
//! store), [`modemgr`] (FSM mode management) and [`platform`], which wires
//! them together from a [`platform::SystemConfig`]. Applications such as
//! [`app_acc`] build against [`sdk`] only.

pub mod app_acc;
pub mod envmodel;
pub mod funcsw;
pub mod hal;
pub mod middleware;
pub mod modemgr;
pub mod platform;
pub mod sdk;
pub mod util;
