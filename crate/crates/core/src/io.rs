//! CSV formats: quotes `T,K,price`, curves `t,rate`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curves::{MarketQuote, TermStructure};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct QuoteRow {
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "K")]
    k: f64,
    price: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    t: f64,
    rate: f64,
}

pub fn read_quotes_from<R: std::io::Read>(reader: R) -> Result<Vec<MarketQuote>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<QuoteRow>() {
        let row = row?;
        out.push(MarketQuote::new(row.t, row.k, row.price)?);
    }
    Ok(out)
}

pub fn read_quotes(path: impl AsRef<Path>) -> Result<Vec<MarketQuote>> {
    read_quotes_from(std::fs::File::open(path)?)
}

pub fn write_quotes_to<W: std::io::Write>(writer: W, quotes: &[MarketQuote]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for q in quotes {
        wtr.serialize(QuoteRow {
            t: q.maturity,
            k: q.strike,
            price: q.price,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_curve_from<R: std::io::Read>(reader: R) -> Result<TermStructure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let (mut knots, mut values) = (Vec::new(), Vec::new());
    for row in rdr.deserialize::<CurveRow>() {
        let row = row?;
        knots.push(row.t);
        values.push(row.rate);
    }
    if knots.is_empty() {
        return Err(Error::InvalidInput("curve file has no rows".into()));
    }
    TermStructure::new(knots, values)
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<TermStructure> {
    read_curve_from(std::fs::File::open(path)?)
}

pub fn write_curve_to<W: std::io::Write>(writer: W, curve: &TermStructure) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (t, rate) in curve.knot_times().iter().zip(curve.values()) {
        wtr.serialize(CurveRow { t: *t, rate: *rate })?;
    }
    wtr.flush()?;
    Ok(())
}
