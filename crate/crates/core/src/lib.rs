//! Simulation, attack and assessment toolkit for simultaneous power + EM
//! side-channel traces of unmasked and first-order masked AES-128.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aes;
pub mod antenna;
pub mod attack;
pub mod dataset;
pub mod eval;
pub mod hexbytes;
pub mod leakage;
pub mod poi;
pub mod rt;
pub mod tvla;
