//! Full-batch first-order training with plateau learning-rate decay.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curves::{ForwardQuote, ScalingBox};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::network::{ArchitectureMode, NetParams};
use crate::objective::{HalfVarianceBand, LossBreakdown, Objective, PenaltySite, PenaltyWeights, TrainingPoint, DEFAULT_GUARD};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;
pub const NESTEROV_MOMENTUM: f64 = 0.9;

/// A relative best-loss decrease at or below this counts as no improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    RmsProp,
    Nesterov,
}

/// Optimizer moments. Nesterov keeps its velocity in `first`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    steps: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Self {
            kind,
            steps: 0,
            first: vec![0.0; n_params],
            second: if kind == OptimizerKind::Nesterov { Vec::new() } else { vec![0.0; n_params] },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Nesterov evaluates the gradient at `θ + μ v`; the other kinds at `θ`.
    pub fn lookahead(&self, params: &[f64]) -> Option<Vec<f64>> {
        (self.kind == OptimizerKind::Nesterov && self.steps > 0).then(|| {
            params
                .iter()
                .zip(&self.first)
                .map(|(p, v)| p + NESTEROV_MOMENTUM * v)
                .collect()
        })
    }

    /// Apply one update in place. For Nesterov `grad` must be taken at
    /// [`OptimizerState::lookahead`].
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        let n = self.first.len();
        if params.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: params.len() });
        }
        if grad.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: grad.len() });
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps as i32);
                for i in 0..n {
                    let g = grad[i];
                    self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
                    self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptimizerKind::RmsProp => {
                for i in 0..n {
                    let g = grad[i];
                    self.second[i] = RMSPROP_DECAY * self.second[i] + (1.0 - RMSPROP_DECAY) * g * g;
                    params[i] -= lr * g / (self.second[i].sqrt() + RMSPROP_EPS);
                }
            }
            OptimizerKind::Nesterov => {
                for i in 0..n {
                    let v = NESTEROV_MOMENTUM * self.first[i] - lr * grad[i];
                    self.first[i] = v;
                    params[i] += v;
                }
            }
        }
        Ok(())
    }
}

/// Divides the learning rate after `window` consecutive epochs without
/// improvement of the best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    divisor: f64,
    window: usize,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, window: usize, divisor: f64) -> Self {
        Self {
            lr,
            divisor,
            window,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Forget the best loss and the stale count but keep the current rate.
    pub fn restart_window(&mut self) {
        self.best = f64::INFINITY;
        self.stale = 0;
    }

    /// Record one epoch's loss; returns true when the rate was just divided.
    pub fn observe(&mut self, loss: f64) -> bool {
        let improved = if self.best.is_infinite() {
            loss < self.best
        } else {
            loss < self.best - IMPROVEMENT_TOL * self.best.abs()
        };
        if loss < self.best {
            self.best = loss;
        }
        if improved {
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.window {
            self.lr /= self.divisor;
            self.stale = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub plateau_window: usize,
    pub lr_divisor: f64,
    /// Stop once the rate falls below this; defaults to `learning_rate · 1e-6`.
    pub min_lr: Option<f64>,
    pub seed: u64,
    pub mode: ArchitectureMode,
    pub widths: [usize; 2],
    pub lambda: PenaltyWeights,
    pub band: HalfVarianceBand,
    pub guard: f64,
    /// Side of a uniform auxiliary penalty grid over `[0,1]²`; 0 disables it.
    pub aux_grid: usize,
    /// Epochs fitted with all penalty weights at zero before `lambda` is
    /// switched on. The best-loss tracking restarts at the switch.
    pub penalty_warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            max_epochs: 10_000,
            plateau_window: 100,
            lr_divisor: 10.0,
            min_lr: None,
            seed: 0,
            mode: ArchitectureMode::DenseSoft,
            widths: [200, 200],
            lambda: PenaltyWeights::ZERO,
            band: HalfVarianceBand::default(),
            guard: DEFAULT_GUARD,
            aux_grid: 0,
            penalty_warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1");
        }
        if self.plateau_window < 1 {
            return bad("plateau_window must be >= 1");
        }
        if !(self.lr_divisor > 1.0) {
            return bad("lr_divisor must be > 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.penalty_warmup >= self.max_epochs {
            return bad("penalty_warmup must be < max_epochs");
        }
        if !(self.guard > 0.0) {
            return bad("guard must be > 0");
        }
        PenaltyWeights::new(self.lambda.calendar, self.lambda.butterfly, self.lambda.dupire)?;
        HalfVarianceBand::new(self.band.low, self.band.high)?;
        if self.widths.contains(&0) {
            return bad("widths must be positive");
        }
        Ok(())
    }

    pub fn min_lr(&self) -> f64 {
        self.min_lr.unwrap_or(self.learning_rate * 1e-6)
    }
}

/// Append a `T = 0` payoff row `(k - S0)⁺` for every strike that lacks one.
pub fn augment_with_payoffs(quotes: &[ForwardQuote], spot: f64) -> Result<Vec<ForwardQuote>> {
    if !(spot > 0.0) {
        return Err(Error::InvalidInput(format!("spot {spot} must be > 0")));
    }
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let mut have: Vec<f64> = quotes.iter().filter(|q| q.maturity == 0.0).map(|q| q.strike).collect();
    let mut strikes: Vec<f64> = quotes.iter().map(|q| q.strike).collect();
    strikes.sort_by(f64::total_cmp);
    let mut out = quotes.to_vec();
    for k in strikes {
        if have.iter().any(|&h| same(h, k)) {
            continue;
        }
        have.push(k);
        out.push(ForwardQuote {
            maturity: 0.0,
            strike: k,
            price: (k - spot).max(0.0),
        });
    }
    Ok(out)
}

/// Training points in the scaled chart together with the chart itself.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub points: Vec<TrainingPoint>,
    pub scaling: ScalingBox,
}

impl Dataset {
    /// Scale `quotes` with `scaling`, or with their own hull when `None`.
    pub fn new(quotes: &[ForwardQuote], scaling: Option<ScalingBox>) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scaling = match scaling {
            Some(b) => b,
            None => ScalingBox::fit(quotes)?,
        };
        let points = quotes
            .iter()
            .map(|q| {
                let (t, k) = scaling.scale(q.maturity, q.strike);
                TrainingPoint {
                    site: PenaltySite { t, k, maturity: q.maturity, strike: q.strike },
                    target: q.price,
                }
            })
            .collect();
        Ok(Self { points, scaling })
    }

    /// Uniform `n × n` penalty sites over the unit square.
    pub fn aux_grid(&self, n: usize) -> Vec<PenaltySite> {
        if n == 0 {
            return Vec::new();
        }
        let axis = |i: usize| if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (axis(i), axis(j))))
            .map(|(t, k)| {
                let (maturity, strike) = self.scaling.unscale(t, k);
                PenaltySite { t, k, maturity, strike }
            })
            .collect()
    }

    pub fn objective(&self, cfg: &TrainConfig) -> Objective {
        let mut obj = Objective::new(cfg.lambda, cfg.band, self.scaling.derivative_factors());
        obj.guard = cfg.guard;
        obj.aux_sites = self.aux_grid(cfg.aux_grid);
        obj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    MinLearningRate,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epochs at which the learning rate was divided.
    pub lr_changes: Vec<usize>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stop_reason: StopReason,
    /// Where the returned parameters were written, when they were.
    pub checkpoint: Option<String>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    /// Loss history as CSV `epoch,fit,pen1,pen2,pen3,total,lr`.
    pub fn write_history_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["epoch", "fit", "pen1", "pen2", "pen3", "total", "lr"])?;
        for r in &self.history {
            let l = &r.loss;
            wtr.write_record([
                r.epoch.to_string(),
                l.fit_l1.to_string(),
                l.pen_calendar.to_string(),
                l.pen_butterfly.to_string(),
                l.pen_dupire.to_string(),
                l.total.to_string(),
                r.lr.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn final_loss(&self) -> Option<&LossBreakdown> {
        self.history.last().map(|r| &r.loss)
    }
}

/// Train a fresh network on `data`. Returns the parameters with the lowest
/// training loss seen.
pub fn fit(data: &Dataset, cfg: &TrainConfig, exec: Exec) -> Result<(NetParams, TrainReport)> {
    fit_with_observer(data, cfg, exec, |_, _| {})
}

/// [`fit`] with a callback invoked after every update and projection.
pub fn fit_with_observer<F>(data: &Dataset, cfg: &TrainConfig, exec: Exec, observe: F) -> Result<(NetParams, TrainReport)>
where
    F: FnMut(usize, &NetParams),
{
    cfg.validate()?;
    let init = NetParams::init(cfg.mode, cfg.widths, cfg.seed)?;
    fit_from(init, data, cfg, exec, observe)
}

/// Continue training from `init` (for example a checkpoint fitted with a
/// different penalty mix). Optimizer moments start at zero.
pub fn fit_from<F>(init: NetParams, data: &Dataset, cfg: &TrainConfig, exec: Exec, mut observe: F) -> Result<(NetParams, TrainReport)>
where
    F: FnMut(usize, &NetParams),
{
    cfg.validate()?;
    if data.points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if init.mode() != cfg.mode || init.widths() != cfg.widths {
        return Err(Error::InvalidInput(format!(
            "initial network is {} {:?}, config asks for {} {:?}",
            init.mode().as_str(),
            init.widths(),
            cfg.mode.as_str(),
            cfg.widths
        )));
    }
    let started = Instant::now();
    let objective = data.objective(cfg).with_exec(exec);
    let warmup_objective = {
        let mut o = objective.clone();
        o.weights = PenaltyWeights::ZERO;
        o
    };
    let mut params = init.projected();
    let mut opt = OptimizerState::new(cfg.optimizer, params.num_params());
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, cfg.plateau_window, cfg.lr_divisor);
    let min_lr = cfg.min_lr();

    let mut history = Vec::with_capacity(cfg.max_epochs.min(100_000));
    let mut lr_changes = Vec::new();
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let warming = epoch <= cfg.penalty_warmup;
        if epoch == cfg.penalty_warmup + 1 && cfg.penalty_warmup > 0 {
            schedule.restart_window();
            best = (params.clone(), f64::INFINITY, 0);
        }
        let objective = if warming { &warmup_objective } else { &objective };
        let lookahead = opt.lookahead(params.as_slice()).map(|data| {
            let mut p = NetParams::from_flat(cfg.mode, cfg.widths, data).expect("layout unchanged");
            p.project_weights();
            p
        });
        let at = lookahead.as_ref().unwrap_or(&params);
        let (loss, grad) = objective.loss_and_gradient(at, &data.points)?;
        let lr = schedule.lr();
        history.push(EpochRecord { epoch, loss, lr });
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let report = TrainReport {
                history,
                lr_changes,
                best_epoch: best.2,
                best_loss: best.1,
                stop_reason: StopReason::Diverged,
                checkpoint: None,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
            };
            return Err(Error::Diverged {
                epoch,
                loss: loss.total,
                report: Box::new(report),
            });
        }
        if !warming && loss.total < best.1 {
            best = (at.clone(), loss.total, epoch);
        }
        opt.step(params.as_mut_slice(), &grad, lr)?;
        params.project_weights();
        observe(epoch, &params);
        if schedule.observe(loss.total) {
            lr_changes.push(epoch);
            if !warming && schedule.lr() < min_lr * (1.0 - 1e-9) {
                stop_reason = StopReason::MinLearningRate;
                break;
            }
        }
    }

    let report = TrainReport {
        history,
        lr_changes,
        best_epoch: best.2,
        best_loss: best.1,
        stop_reason,
        checkpoint: None,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best.0, report))
}
