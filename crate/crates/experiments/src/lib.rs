//! Seeded orchestration of the toy experiments behind the `neon` tool.
//!
//! Every experiment is a pure function of its resolved config and seed, and
//! writes CSV tables with a `.meta` sibling recording the config hash.

pub mod ar;
pub mod ckpt_io;
pub mod cli;
pub mod config;
pub mod error;
pub mod exp1;
pub mod exp2;
pub mod fig2;
pub mod output;
pub mod standalone;
pub mod stats;
pub mod toy;
pub mod transfer;
