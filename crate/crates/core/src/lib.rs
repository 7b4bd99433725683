//! Neural calibration of European put surfaces with a jointly extracted
//! Dupire local volatility.
//!
//! The pipeline: raw quotes are mapped to forward coordinates
//! ([`curves`]), a two-hidden-layer network is fit to them under a penalized
//! L1 loss ([`objective`], [`trainer`]), and the trained surface is audited
//! for static arbitrage and turned into a local volatility surface
//! ([`audit`]) that can be repriced by Monte Carlo ([`backtest`]). Synthetic
//! ground truth comes from [`oracle`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod backtest;
pub mod curves;
pub mod error;
pub mod exec;
pub mod io;
pub mod network;
pub mod objective;
pub mod oracle;
pub mod trainer;

pub use curves::{ForwardQuote, MarketQuote, ScaleFactors, ScalingBox, TermStructure};
pub use error::{Error, Result};
pub use exec::Exec;
pub use network::{ArchitectureMode, EvalResult, NetParams};
