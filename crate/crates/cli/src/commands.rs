use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lvcal::audit::{
    count_violations, extract_local_vol, implied_vol_rmse, predict_prices, price_surface, random_unit_points, rmse,
    unit_grid, ImpliedVolRmse, SurfaceGrid, ViolationReport,
};
use lvcal::backtest::{backtest_rmse, VolSource};
use lvcal::curves::to_forward;
use lvcal::network::Checkpoint;
use lvcal::oracle::{generate_chain, implied_vol, write_vol_grid, SyntheticChainSpec};
use lvcal::trainer::{augment_with_payoffs, fit_from, Dataset, TrainReport};
use lvcal::{Exec, ForwardQuote, MarketQuote, NetParams, ScalingBox, TermStructure};
use serde::{Deserialize, Serialize};

use crate::config::{Grid, RunConfig};
use crate::output::{file_sha256, RunDir};

/// A trained network together with the chart it was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub network: Checkpoint,
    pub scaling: ScalingBox,
    pub spot: f64,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<(NetParams, ScalingBox)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        let m: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
        Ok((NetParams::from_checkpoint(&m.network)?, m.scaling))
    }
}

#[derive(Serialize)]
struct InputRecord {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Seeds {
    training: u64,
    monte_carlo: u64,
    noise: Option<u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seeds: Seeds,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.json")
}

fn finish(run: &mut RunDir, command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(InputRecord { path: p.to_path_buf(), sha256: file_sha256(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seeds: Seeds {
            training: cfg.training.seed,
            monte_carlo: cfg.monte_carlo.seed,
            noise: cfg.noise.map(|n| n.seed),
        },
        inputs,
        outputs: run.written().to_vec(),
        config: cfg,
    };
    run.write_json(&manifest_name(command), &manifest)
}

fn read_quotes(path: &Path, rates: &TermStructure) -> Result<Vec<MarketQuote>> {
    let quotes = lvcal::io::read_quotes(path).with_context(|| format!("reading quotes {}", path.display()))?;
    if quotes.is_empty() {
        bail!("{} holds no quotes", path.display());
    }
    for q in &quotes {
        q.validate(rates).with_context(|| format!("quote in {}", path.display()))?;
    }
    Ok(quotes)
}

fn forward_quotes(quotes: &[MarketQuote], rates: &TermStructure, divs: &TermStructure) -> Result<Vec<ForwardQuote>> {
    Ok(quotes.iter().map(|q| to_forward(q, rates, divs)).collect::<lvcal::Result<_>>()?)
}

fn chain_spec(cfg: &RunConfig, grid: &Grid, noisy: bool) -> Result<SyntheticChainSpec> {
    let (rates, divs) = cfg.curves()?;
    Ok(SyntheticChainSpec {
        spot: cfg.spot,
        maturities: grid.maturities.nodes(),
        strikes: grid.strikes.nodes(),
        rates,
        divs,
        vol: cfg.vol.resolve(cfg.spot)?,
        tree_steps: cfg.tree_steps,
        noise: if noisy { cfg.noise } else { None },
    })
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut run = RunDir::prepare(out, &["train.csv", "test.csv", "true_local_vol.csv", &manifest_name("generate")])?;
    let train_spec = chain_spec(cfg, &cfg.train_grid, true)?;
    let test_spec = chain_spec(cfg, &cfg.test_grid, false)?;
    train_spec.validate()?;
    test_spec.validate()?;
    let train = generate_chain(&train_spec, Exec::default())?;
    let test = generate_chain(&test_spec, Exec::default())?;
    run.write_with("train.csv", |b| Ok(lvcal::io::write_quotes_to(b, &train)?))?;
    run.write_with("test.csv", |b| Ok(lvcal::io::write_quotes_to(b, &test)?))?;
    let surface = &cfg.audit.surface;
    run.write_with("true_local_vol.csv", |b| {
        Ok(write_vol_grid(b, &train_spec.vol, &surface.maturities.nodes(), &surface.strikes.nodes())?)
    })?;
    finish(&mut run, "generate", cfg, &[])?;
    println!("wrote {} training and {} test quotes to {}", train.len(), test.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct CalibrationSummary<'a> {
    train_rmse: Option<f64>,
    test_rmse: Option<f64>,
    report: &'a TrainReport,
}

pub fn calibrate(cfg: &RunConfig, train: &Path, test: Option<&Path>, init: Option<&Path>, out: &Path) -> Result<()> {
    let mut run = RunDir::prepare(
        out,
        &["model.json", "train_report.json", "loss_history.csv", &manifest_name("calibrate")],
    )?;
    let (rates, divs) = cfg.curves()?;
    let train_quotes = read_quotes(train, &rates)?;
    let test_quotes = test.map(|p| read_quotes(p, &rates)).transpose()?;
    let init_model = init.map(ModelFile::load).transpose()?;
    let fq = augment_with_payoffs(&forward_quotes(&train_quotes, &rates, &divs)?, cfg.spot)?;
    let data = Dataset::new(&fq, init_model.as_ref().map(|m| m.1).or(cfg.scaling_box))?;
    let start = match init_model {
        Some((p, _)) => p,
        None => NetParams::init(cfg.training.mode, cfg.training.widths, cfg.training.seed)?,
    };
    let mut inputs: Vec<&Path> = vec![train];
    inputs.extend(test);
    inputs.extend(init);

    let (params, report) = match fit_from(start, &data, &cfg.training, Exec::default(), |_, _| {}) {
        Ok(r) => r,
        Err(lvcal::Error::Diverged { epoch, loss, report }) => {
            let summary = CalibrationSummary { train_rmse: None, test_rmse: None, report: &report };
            run.write_json("train_report.json", &summary)?;
            finish(&mut run, "calibrate", cfg, &inputs)?;
            return Err(lvcal::Error::Diverged { epoch, loss, report }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let quote_rmse = |quotes: &[MarketQuote]| -> Result<f64> {
        let pred = predict_prices(&params, quotes, &data.scaling, &rates, &divs, Exec::default());
        let reference: Vec<f64> = quotes.iter().map(|q| q.price).collect();
        Ok(rmse(&pred, &reference)?)
    };
    let summary = CalibrationSummary {
        train_rmse: Some(quote_rmse(&train_quotes)?),
        test_rmse: test_quotes.as_deref().map(quote_rmse).transpose()?,
        report: &report,
    };
    let model = ModelFile { network: params.to_checkpoint(), scaling: data.scaling, spot: cfg.spot };
    run.write_json("model.json", &model)?;
    run.write_json("train_report.json", &summary)?;
    run.write_with("loss_history.csv", |b| Ok(report.write_history_csv(b)?))?;
    finish(&mut run, "calibrate", cfg, &inputs)?;
    println!(
        "best loss {:.6} at epoch {} ({:?}); train RMSE {:.4}{}",
        report.best_loss,
        report.best_epoch,
        report.stop_reason,
        summary.train_rmse.unwrap_or(f64::NAN),
        summary.test_rmse.map(|r| format!(", test RMSE {r:.4}")).unwrap_or_default()
    );
    Ok(())
}

#[derive(Serialize)]
struct ViolationSummary {
    n_points: usize,
    n_violating: usize,
    n_calendar: usize,
    n_butterfly: usize,
    fraction: f64,
}

impl From<&ViolationReport> for ViolationSummary {
    fn from(r: &ViolationReport) -> Self {
        Self {
            n_points: r.n_points,
            n_violating: r.n_violating,
            n_calendar: r.n_calendar,
            n_butterfly: r.n_butterfly,
            fraction: r.fraction,
        }
    }
}

#[derive(Serialize)]
struct FitSummary {
    n_quotes: usize,
    price_rmse: f64,
    implied_vol: ImpliedVolRmse,
}

#[derive(Serialize)]
struct AuditReport {
    random_points: ViolationSummary,
    grid: ViolationSummary,
    training_points: Option<ViolationSummary>,
    train: Option<FitSummary>,
    test: Option<FitSummary>,
    local_vol_invalid_cells: usize,
}

pub fn audit(cfg: &RunConfig, model: &Path, train: Option<&Path>, test: Option<&Path>, out: &Path) -> Result<()> {
    let mut run = RunDir::prepare(
        out,
        &["audit_report.json", "violations.csv", "price_surface.csv", "local_vol.csv", &manifest_name("audit")],
    )?;
    let (rates, divs) = cfg.curves()?;
    let (params, scaling) = ModelFile::load(model)?;
    let train_quotes = train.map(|p| read_quotes(p, &rates)).transpose()?;
    let test_quotes = test.map(|p| read_quotes(p, &rates)).transpose()?;
    let exec = Exec::default();
    let tol = cfg.audit.tolerance;
    let seed = cfg.seed.unwrap_or(cfg.training.seed);
    let random = count_violations(&params, &random_unit_points(cfg.audit.random_points, seed), &scaling, tol, exec);
    let side = cfg.audit.grid_side;
    let grid = count_violations(&params, &unit_grid(side, side), &scaling, tol, exec);
    let training_points = match &train_quotes {
        Some(q) => {
            let fq = augment_with_payoffs(&forward_quotes(q, &rates, &divs)?, cfg.spot)?;
            let pts: Vec<(f64, f64)> = fq.iter().map(|f| scaling.scale(f.maturity, f.strike)).collect();
            Some(ViolationSummary::from(&count_violations(&params, &pts, &scaling, tol, exec)))
        }
        None => None,
    };
    let fit = |quotes: &[MarketQuote]| -> Result<FitSummary> {
        let pred = predict_prices(&params, quotes, &scaling, &rates, &divs, exec);
        let reference: Vec<f64> = quotes.iter().map(|q| q.price).collect();
        Ok(FitSummary {
            n_quotes: quotes.len(),
            price_rmse: rmse(&pred, &reference)?,
            implied_vol: implied_vol_rmse(&pred, quotes, cfg.spot, &rates, &divs)?,
        })
    };
    let surface = &cfg.audit.surface;
    let (ts, ks) = (surface.maturities.nodes(), surface.strikes.nodes());
    let prices = price_surface(&params, &ts, &ks, &scaling, &rates, &divs, exec)?;
    let local_vol = extract_local_vol(&params, &ts, &ks, &scaling, &rates, &divs, cfg.training.guard, exec)?;
    let report = AuditReport {
        random_points: ViolationSummary::from(&random),
        grid: ViolationSummary::from(&grid),
        training_points,
        train: train_quotes.as_deref().map(fit).transpose()?,
        test: test_quotes.as_deref().map(fit).transpose()?,
        local_vol_invalid_cells: local_vol.n_invalid(),
    };
    run.write_json("audit_report.json", &report)?;
    run.write_with("violations.csv", |b| Ok(grid.write_locations_csv(b)?))?;
    run.write_with("price_surface.csv", |b| Ok(prices.write_csv(b)?))?;
    run.write_with("local_vol.csv", |b| Ok(local_vol.write_csv(b)?))?;
    let mut inputs: Vec<&Path> = vec![model];
    inputs.extend(train);
    inputs.extend(test);
    finish(&mut run, "audit", cfg, &inputs)?;
    println!(
        "violations: {} / {} random, {} / {} grid",
        random.n_violating, random.n_points, grid.n_violating, grid.n_points
    );
    Ok(())
}

pub fn localvol(cfg: &RunConfig, model: &Path, out: &Path) -> Result<()> {
    let mut run = RunDir::prepare(out, &["local_vol.csv", &manifest_name("localvol")])?;
    let (rates, divs) = cfg.curves()?;
    let (params, scaling) = ModelFile::load(model)?;
    let s = &cfg.audit.surface;
    let grid = extract_local_vol(
        &params,
        &s.maturities.nodes(),
        &s.strikes.nodes(),
        &scaling,
        &rates,
        &divs,
        cfg.training.guard,
        Exec::default(),
    )?;
    run.write_with("local_vol.csv", |b| Ok(grid.write_csv(b)?))?;
    finish(&mut run, "localvol", cfg, &[model])?;
    println!("{} of {} cells flagged invalid", grid.n_invalid(), grid.values().len());
    Ok(())
}

/// Read a `T,K,value,flag` grid as written by the audit and localvol commands.
pub fn read_surface_grid(path: &Path) -> Result<SurfaceGrid> {
    #[derive(Deserialize)]
    struct Row {
        #[serde(rename = "T")]
        t: f64,
        #[serde(rename = "K")]
        k: f64,
        value: String,
        flag: u8,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading grid {}", path.display()))?;
    let mut rows = Vec::new();
    for row in rdr.deserialize::<Row>() {
        rows.push(row.with_context(|| format!("parsing grid {}", path.display()))?);
    }
    let mut ts: Vec<f64> = Vec::new();
    let mut ks: Vec<f64> = Vec::new();
    for r in &rows {
        if !ts.contains(&r.t) {
            ts.push(r.t);
        }
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    if ts.len() * ks.len() != rows.len() {
        bail!("{} is not a full rectangular grid", path.display());
    }
    let mut values = Vec::with_capacity(rows.len());
    let mut valid = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.t != ts[i / ks.len()] || r.k != ks[i % ks.len()] {
            bail!("{} must be maturity-major", path.display());
        }
        let v: f64 = r.value.parse().unwrap_or(f64::NAN);
        let ok = r.flag == 0 && v.is_finite();
        values.push(if ok { v } else { f64::NAN });
        valid.push(ok);
    }
    Ok(SurfaceGrid::new(ts, ks, values, valid)?)
}

/// Where the backtest's local volatility comes from.
pub enum VolInput {
    Truth,
    Model(PathBuf),
    Grid(PathBuf),
}

impl VolInput {
    pub fn parse(s: &str) -> Self {
        if s == "truth" {
            VolInput::Truth
        } else if s.ends_with(".json") {
            VolInput::Model(PathBuf::from(s))
        } else {
            VolInput::Grid(PathBuf::from(s))
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            VolInput::Truth => None,
            VolInput::Model(p) | VolInput::Grid(p) => Some(p),
        }
    }
}

#[derive(Serialize)]
struct PriceRow {
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "K")]
    k: f64,
    quote: f64,
    mc: f64,
    std_error: f64,
}

pub fn backtest(cfg: &RunConfig, source: &VolInput, quotes: &Path, out: &Path) -> Result<()> {
    let mut run = RunDir::prepare(out, &["backtest_report.json", "backtest_prices.csv", &manifest_name("backtest")])?;
    let (rates, divs) = cfg.curves()?;
    let quotes_v = read_quotes(quotes, &rates)?;
    let vol = match source {
        VolInput::Truth => VolSource::Function(cfg.vol.resolve(cfg.spot)?),
        VolInput::Model(p) => {
            let (params, scaling) = ModelFile::load(p)?;
            let e = cfg.extraction;
            VolSource::network_on_box(params, scaling, cfg.training.guard, e.n_maturities, e.n_strikes)?
        }
        VolInput::Grid(p) => VolSource::Grid(read_surface_grid(p)?),
    };
    let report = backtest_rmse(&vol, &quotes_v, cfg.spot, &rates, &divs, &cfg.monte_carlo, Exec::default())?;
    run.write_json("backtest_report.json", &report)?;
    run.write_with("backtest_prices.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        for (q, r) in quotes_v.iter().zip(&report.results) {
            w.serialize(PriceRow { t: q.maturity, k: q.strike, quote: q.price, mc: r.price, std_error: r.std_error })?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut inputs: Vec<&Path> = vec![quotes];
    inputs.extend(source.path());
    finish(&mut run, "backtest", cfg, &inputs)?;
    println!("backtest RMSE {:.6} (pooled s.e. {:.6})", report.rmse, report.pooled_std_error);
    Ok(())
}

#[derive(Serialize)]
struct IvRow {
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "K")]
    k: f64,
    price: f64,
    implied_vol: Option<f64>,
}

pub fn implied_vols(cfg: &RunConfig, quotes: &Path, out: &Path) -> Result<()> {
    let mut run = RunDir::prepare(out, &["implied_vols.csv", &manifest_name("implied-vol")])?;
    let (rates, divs) = cfg.curves()?;
    let quotes_v = read_quotes(quotes, &rates)?;
    let mut failed = 0;
    let rows: Vec<IvRow> = quotes_v
        .iter()
        .map(|q| {
            let t = q.maturity;
            let iv = if t > 0.0 {
                let r = rates.integrate(0.0, t).unwrap_or(f64::NAN) / t;
                let d = divs.integrate(0.0, t).unwrap_or(f64::NAN) / t;
                implied_vol(q.price, cfg.spot, q.strike, t, r, d).ok()
            } else {
                None
            };
            failed += iv.is_none() as usize;
            IvRow { t, k: q.strike, price: q.price, implied_vol: iv }
        })
        .collect();
    run.write_with("implied_vols.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    finish(&mut run, "implied-vol", cfg, &[quotes])?;
    println!("inverted {} of {} quotes", rows.len() - failed, rows.len());
    Ok(())
}
