use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF via `erfc`, accurate to double precision in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes European put with flat continuous rate and dividend yield.
/// `T = 0` gives `(K - S)⁺`; `σ = 0` gives the discounted forward intrinsic.
pub fn bs_put(spot: f64, strike: f64, t: f64, r: f64, q: f64, sigma: f64) -> f64 {
    if t <= 0.0 {
        return (strike - spot).max(0.0);
    }
    let df = (-r * t).exp();
    let dq = (-q * t).exp();
    let sd = sigma * t.sqrt();
    if sd <= 0.0 {
        return (strike * df - spot * dq).max(0.0);
    }
    let d1 = ((spot / strike).ln() + (r - q) * t) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    strike * df * norm_cdf(-d2) - spot * dq * norm_cdf(-d1)
}

fn bs_vega(spot: f64, strike: f64, t: f64, r: f64, q: f64, sigma: f64) -> f64 {
    let sd = sigma * t.sqrt();
    let d1 = ((spot / strike).ln() + (r - q) * t) / sd + 0.5 * sd;
    spot * (-q * t).exp() * (-0.5 * d1 * d1).exp() / (2.0 * std::f64::consts::PI).sqrt() * t.sqrt()
}

const VOL_FLOOR: f64 = 1e-4;
const VOL_CAP: f64 = 5.0;

/// Black–Scholes implied volatility of a put, by safeguarded Newton on
/// `[1e-4, 5]`. Prices at or below the floor-vol price return the floor.
pub fn implied_vol(price: f64, spot: f64, strike: f64, t: f64, r: f64, q: f64) -> Result<f64> {
    if !(t > 0.0 && spot > 0.0 && strike > 0.0 && price.is_finite()) {
        return Err(Error::NoSolution(format!("invalid inputs (price {price}, T {t})")));
    }
    let lower = (strike * (-r * t).exp() - spot * (-q * t).exp()).max(0.0);
    let upper = strike * (-r * t).exp();
    let slack = 1e-12 * strike;
    if price < lower - slack || price >= upper {
        return Err(Error::NoSolution(format!(
            "put price {price} outside no-arbitrage bounds [{lower}, {upper})"
        )));
    }
    let f = |s: f64| bs_put(spot, strike, t, r, q, s) - price;
    let (mut a, mut b) = (VOL_FLOOR, VOL_CAP);
    if f(a) >= 0.0 {
        return Ok(a);
    }
    if f(b) < 0.0 {
        return Err(Error::NoSolution(format!("put price {price} needs volatility above {VOL_CAP}")));
    }
    let tol = 1e-15 * price.max(1e-300);
    let mut x = (2.0 * ((spot / strike).ln().abs() + (r - q).abs() * t) / t).sqrt().clamp(0.1, 1.0);
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let vega = bs_vega(spot, strike, t, r, q, x);
        let newton = x - fx / vega;
        x = if vega > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a <= 1e-15 * b {
            break;
        }
    }
    Ok(x)
}
