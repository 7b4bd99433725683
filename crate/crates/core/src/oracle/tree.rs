//! Recombining trinomial lattice in `x = ln S` with node-dependent local
//! volatility. The last step uses the Black–Scholes price with the node's
//! local volatility in place of the raw payoff, which removes the
//! strike-placement oscillation and gives first-order convergence.

use super::bs::bs_put;
use super::localvol::LocalVolFn;
use crate::curves::TermStructure;
use crate::error::{Error, Result};

const MAX_REFINEMENTS: usize = 3;

/// European put under `dS/S = (r - q) dt + σ(t, S) dW`, priced by backward
/// induction. When a transition probability would be negative the number of
/// steps is doubled (up to three times).
pub fn trinomial_put(
    lv: &LocalVolFn,
    spot: f64,
    strike: f64,
    maturity: f64,
    rates: &TermStructure,
    divs: &TermStructure,
    n_steps: usize,
) -> Result<f64> {
    if !(spot > 0.0 && strike > 0.0 && maturity >= 0.0 && n_steps >= 1) {
        return Err(Error::InvalidInput(format!(
            "tree inputs: S {spot}, K {strike}, T {maturity}, steps {n_steps}"
        )));
    }
    if maturity == 0.0 {
        return Ok((strike - spot).max(0.0));
    }
    let mut steps = n_steps;
    let mut last = String::new();
    for _ in 0..=MAX_REFINEMENTS {
        match price_once(lv, spot, strike, maturity, rates, divs, steps) {
            Ok(p) => return Ok(p),
            Err(msg) => last = msg,
        }
        steps *= 2;
    }
    Err(Error::Lattice(format!(
        "negative transition probability after refining to {} steps: {last}",
        steps / 2
    )))
}

fn price_once(
    lv: &LocalVolFn,
    spot: f64,
    strike: f64,
    maturity: f64,
    rates: &TermStructure,
    divs: &TermStructure,
    n: usize,
) -> std::result::Result<f64, String> {
    let dt = maturity / n as f64;
    let sigma_ref = lv.sigma_max().max(1e-4);
    let dx = sigma_ref * (3.0 * dt).sqrt();
    let ln_s0 = spot.ln();
    let node_spot = |j: i64| (ln_s0 + j as f64 * dx).exp();
    let step_rates = |i: usize| {
        let (t0, t1) = (i as f64 * dt, (i + 1) as f64 * dt);
        (
            rates.integral_unchecked(t0, t1) / dt,
            divs.integral_unchecked(t0, t1) / dt,
        )
    };

    // Values at step n-1 by one-step Black–Scholes smoothing.
    let last = n - 1;
    let (r_last, q_last) = step_rates(last);
    let t_last = last as f64 * dt;
    let mut values: Vec<f64> = (-(last as i64)..=last as i64)
        .map(|j| {
            let s = node_spot(j);
            bs_put(s, strike, dt, r_last, q_last, lv.eval(t_last, s))
        })
        .collect();

    for i in (0..last).rev() {
        let (r, q) = step_rates(i);
        let disc = (-r * dt).exp();
        let t = i as f64 * dt;
        let width = i as i64;
        let mut next = Vec::with_capacity(2 * i + 1);
        for j in -width..=width {
            let sigma = lv.eval(t, node_spot(j));
            let nu = r - q - 0.5 * sigma * sigma;
            let m2 = (sigma * sigma * dt + nu * nu * dt * dt) / (dx * dx);
            let m1 = nu * dt / dx;
            let pu = 0.5 * (m2 + m1);
            let pd = 0.5 * (m2 - m1);
            let pm = 1.0 - m2;
            if pu < 0.0 || pd < 0.0 || pm < 0.0 {
                return Err(format!(
                    "node (step {i}, j {j}) σ {sigma}: pu {pu:.3e} pm {pm:.3e} pd {pd:.3e}"
                ));
            }
            // child index in `values` (which spans -(i+1)..=(i+1))
            let c = (j + width + 1) as usize;
            next.push(disc * (pu * values[c + 1] + pm * values[c] + pd * values[c - 1]));
        }
        values = next;
    }
    Ok(values[0])
}
