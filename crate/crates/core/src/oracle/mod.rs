//! Reference pricers used as ground truth: Black–Scholes, implied
//! volatility inversion, and a trinomial lattice under a local volatility.

mod bs;
mod chain;
mod localvol;
mod tree;

pub use bs::{bs_put, implied_vol, norm_cdf};
pub use chain::{generate_chain, write_vol_grid, NoiseSpec, SyntheticChainSpec};
pub use localvol::{LocalVolFn, SmileVol, VolSurface};
pub use tree::trinomial_put;
