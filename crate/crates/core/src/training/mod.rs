//! Gradient training of predictors through the soft rollout, two-task
//! gradient combination, and Pareto sweeps over accuracy and welfare.

pub mod loss;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::game::GameParams;
use crate::grad::Quantity;
use crate::graph::PopulationGraph;
use crate::numeric::Scalar;
use crate::predictor::{Architecture, PredictorModel, Shape};
use crate::rollout::{self, soft_rollout, Metrics, Mode, RolloutConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainObjective {
    /// Minimize cross-entropy against the induced soft actions.
    AccuracyCe,
    /// Maximize soft welfare.
    WelfareUpop,
    /// Maximize the soft cooperator count.
    WelfareUc,
    /// Min-norm combination of the normalized accuracy and welfare gradients.
    MultiMgda,
    /// `lambda * CE / CE_0 - (1 - lambda) * U / |U_0|`.
    MultiScalarized,
}

impl TrainObjective {
    pub fn name(self) -> &'static str {
        match self {
            TrainObjective::AccuracyCe => "accuracy-ce",
            TrainObjective::WelfareUpop => "welfare-upop",
            TrainObjective::WelfareUc => "welfare-uc",
            TrainObjective::MultiMgda => "multi-mgda",
            TrainObjective::MultiScalarized => "multi-scalarized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: TrainObjective,
    /// Weight on accuracy for `multi-scalarized`.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Sigmoid temperature of the training rollout.
    #[serde(default = "default_temp")]
    pub temp: f64,
    /// Hard evaluation cadence in epochs.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Stop gradient flow through cross-entropy targets.
    #[serde(default = "default_true")]
    pub detach_targets: bool,
    /// Model initialization seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-2
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_temp() -> f64 {
    15.0
}
fn default_eval_every() -> usize {
    25
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(objective: TrainObjective) -> Self {
        Self {
            objective,
            lambda: 0.0,
            epochs: default_epochs(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            temp: default_temp(),
            eval_every: default_eval_every(),
            detach_targets: true,
            seed: 0,
        }
    }

    pub fn scalarized(lambda: f64) -> Self {
        Self { lambda, ..Self::new(TrainObjective::MultiScalarized) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidParameter("eval_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("lr must be non-negative and betas in [0, 1)".into()));
        }
        if !(self.temp > 0.0) {
            return Err(Error::InvalidParameter(format!("temp must be positive, got {}", self.temp)));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn from_config(len: usize, cfg: &TrainConfig) -> Self {
        Self::new(len, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Min-norm weight `gamma` on `g_acc` for two tasks.
pub fn mgda_weight(g_acc: &[f64], g_wel: &[f64]) -> f64 {
    let diff: Vec<f64> = g_acc.iter().zip(g_wel).map(|(a, w)| a - w).collect();
    let denom = dot(&diff, &diff);
    if denom == 0.0 {
        return 0.5;
    }
    let num: f64 = g_wel.iter().zip(g_acc).map(|(w, a)| (w - a) * w).sum();
    (num / denom).clamp(0.0, 1.0)
}

/// `gamma g_acc + (1 - gamma) g_wel` at the min-norm `gamma`.
pub fn mgda_combine(g_acc: &[f64], g_wel: &[f64]) -> Vec<f64> {
    assert_eq!(g_acc.len(), g_wel.len(), "gradients must share a parameter space");
    let gamma = mgda_weight(g_acc, g_wel);
    g_acc.iter().zip(g_wel).map(|(a, w)| gamma * a + (1.0 - gamma) * w).collect()
}

/// One row of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Value of the minimized objective before this epoch's update.
    pub loss: f64,
    pub soft_ce: f64,
    pub soft_welfare: f64,
    /// Hard evaluation of the parameters before this epoch's update, or of
    /// the final parameters on the row with `epoch == epochs`.
    pub eval: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub history: Vec<HistoryRow>,
    /// Hard evaluation of the final parameters.
    pub final_metrics: Metrics,
}

/// Soft values used to normalize the multi-objective losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub ce: f64,
    pub welfare: f64,
}

impl Normalizer {
    fn guard(x: f64) -> f64 {
        if x.abs() < 1e-12 {
            1.0
        } else {
            x.abs()
        }
    }

    pub fn at(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig, detach_targets: bool) -> Result<Self> {
        let state = cfg.initial_state(&model.graph)?;
        let r = soft_rollout(game, model, &model.params, cfg, &state)?;
        let ce = if detach_targets { Quantity::Ce } else { Quantity::CeThroughTargets };
        Ok(Self { ce: Self::guard(ce.of(&r, game)), welfare: Self::guard(Quantity::Upop.of(&r, game)) })
    }
}

/// Scalarized objective to minimize. Exactly `CE / CE_0` at `lambda = 1`
/// and `-U / |U_0|` at `lambda = 0`.
pub fn scalarized_loss<S: Scalar>(ce: S, welfare: S, lambda: f64, norm: Normalizer) -> S {
    if lambda == 1.0 {
        ce / norm.ce
    } else if lambda == 0.0 {
        -(welfare / norm.welfare)
    } else {
        ce * (lambda / norm.ce) - welfare * ((1.0 - lambda) / norm.welfare)
    }
}

/// Hard evaluation of `model` under `cfg` (mode forced to hard).
pub fn evaluate(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig) -> Result<Metrics> {
    let hard = RolloutConfig { mode: Mode::Hard, ..*cfg };
    rollout::metrics(&rollout::run_hard(game, model, &hard)?, game)
}

/// Value of the minimized objective and its descent direction.
fn epoch_gradient(
    game: &GameParams,
    model: &PredictorModel,
    soft_cfg: &RolloutConfig,
    train: &TrainConfig,
    norm: Normalizer,
    params: &[f64],
) -> Result<(f64, f64, f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars = tape.vars(params);
    let state = soft_cfg.initial_state(&model.graph)?;
    let r = soft_rollout(game, model, &vars, soft_cfg, &state)?;
    let ce_q = if train.detach_targets { Quantity::Ce } else { Quantity::CeThroughTargets };
    let ce = ce_q.of(&r, game);
    let upop = Quantity::Upop.of(&r, game);
    let (loss, grad) = match train.objective {
        TrainObjective::AccuracyCe => (ce, None),
        TrainObjective::WelfareUpop => (-upop, None),
        TrainObjective::WelfareUc => (-Quantity::Uc.of(&r, game), None),
        TrainObjective::MultiScalarized => (scalarized_loss(ce, upop, train.lambda, norm), None),
        TrainObjective::MultiMgda => {
            let g_acc = tape.backward(&[(ce, 1.0 / norm.ce)]).wrt_all(&vars);
            let g_wel = tape.backward(&[(upop, -1.0 / norm.welfare)]).wrt_all(&vars);
            let gamma = mgda_weight(&g_acc, &g_wel);
            let combined = ce / norm.ce * gamma - upop / norm.welfare * (1.0 - gamma);
            (combined, Some(mgda_combine(&g_acc, &g_wel)))
        }
    };
    tape.check_finite()?;
    let grad = match grad {
        Some(g) => g,
        None => tape.backward(&[(loss, 1.0)]).wrt_all(&vars),
    };
    Ok((loss.value(), ce.value(), upop.value(), grad))
}

/// Trains until `epochs`, returning whatever history was produced and the
/// error that stopped training early, if any.
pub fn train_partial(
    game: &GameParams,
    model: &PredictorModel,
    rollout_cfg: &RolloutConfig,
    train: &TrainConfig,
) -> (Vec<HistoryRow>, Result<TrainOutcome>) {
    let mut history = Vec::new();
    let result = train_inner(game, model, rollout_cfg, train, &mut history);
    (history.clone(), result.map(|(model, final_metrics)| TrainOutcome { model, history, final_metrics }))
}

/// Trains a copy of `model`. Deterministic given its inputs.
pub fn train(game: &GameParams, model: &PredictorModel, rollout_cfg: &RolloutConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    train_partial(game, model, rollout_cfg, train).1
}

fn train_inner(
    game: &GameParams,
    model: &PredictorModel,
    rollout_cfg: &RolloutConfig,
    train: &TrainConfig,
    history: &mut Vec<HistoryRow>,
) -> Result<(PredictorModel, Metrics)> {
    train.validate()?;
    rollout_cfg.validate()?;
    game.validate()?;
    if !model.is_trainable() {
        return Err(Error::InvalidParameter(format!("{} predictors have no parameters", model.architecture)));
    }
    let soft_cfg = RolloutConfig { mode: Mode::Soft, temp: train.temp, ..*rollout_cfg };
    let norm = Normalizer::at(game, model, &soft_cfg, train.detach_targets)?;
    let mut params = model.params.clone();
    let mut opt = Adam::from_config(params.len(), train);
    let mut current = model.clone();
    for epoch in 0..train.epochs {
        let (loss, ce, welfare, grad) = match epoch_gradient(game, model, &soft_cfg, train, norm, &params) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let eval = if epoch % train.eval_every == 0 {
            current.params.clone_from(&params);
            Some(evaluate(game, &current, rollout_cfg)?)
        } else {
            None
        };
        history.push(HistoryRow { epoch, loss, soft_ce: ce, soft_welfare: welfare, eval });
        opt.step(&mut params, &grad);
    }
    current.params = params;
    let final_metrics = evaluate(game, &current, rollout_cfg)?;
    let (loss, ce, welfare, _) = epoch_gradient(game, model, &soft_cfg, train, norm, &current.params)
        .map_err(|_| Error::Diverged { epoch: train.epochs })?;
    history.push(HistoryRow { epoch: train.epochs, loss, soft_ce: ce, soft_welfare: welfare, eval: Some(final_metrics) });
    Ok((current, final_metrics))
}

/// Which run produced a Pareto point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunKind {
    Lambda { lambda: f64 },
    Mgda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub run: RunKind,
    /// Seed index and the derived initialization seed.
    pub seed_index: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub welfare: f64,
    pub welfare_normalized: f64,
    pub success_fraction: f64,
    pub dominated: bool,
    /// Set by callers that persist the trained model.
    pub checkpoint: Option<String>,
}

/// Marks each point dominated if another is at least as good in both
/// accuracy and normalized welfare and strictly better in one.
pub fn mark_dominated(points: &mut [ParetoPoint]) {
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.accuracy, p.welfare_normalized)).collect();
    for (k, p) in points.iter_mut().enumerate() {
        let (a, w) = coords[k];
        p.dominated = coords.iter().any(|&(qa, qw)| qa >= a && qw >= w && (qa > a || qw > w));
    }
}

/// Indices of non-dominated `(x, y)` pairs under maximization of both.
pub fn non_dominated(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&k| {
            let (a, w) = points[k];
            !points.iter().any(|&(qa, qw)| qa >= a && qw >= w && (qa > a || qw > w))
        })
        .collect()
}

/// Initialization seed for seed index `k` under `master`. Every grid
/// point shares the same seed per index so that points differ only in
/// their objective.
pub fn derive_seed(master: u64, seed_index: usize) -> u64 {
    master.wrapping_mul(1_000_003).wrapping_add(seed_index as u64)
}

/// Everything a sweep varies over.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub architecture: Architecture,
    pub shape: Shape,
    pub lambdas: Vec<f64>,
    pub seeds: usize,
    pub mgda_runs: usize,
    pub master_seed: u64,
}

impl SweepPlan {
    pub fn runs(&self) -> Vec<(RunKind, usize)> {
        let mut runs: Vec<(RunKind, usize)> = self
            .lambdas
            .iter()
            .flat_map(|&lambda| (0..self.seeds).map(move |s| (RunKind::Lambda { lambda }, s)))
            .collect();
        runs.extend((0..self.mgda_runs).map(|s| (RunKind::Mgda, s)));
        runs
    }
}

/// Trains every run in parallel and returns the points in plan order with
/// dominance marked, together with the trained models.
pub fn pareto_sweep(
    game: &GameParams,
    graph: &PopulationGraph,
    rollout_cfg: &RolloutConfig,
    template: &TrainConfig,
    plan: &SweepPlan,
) -> Result<Vec<(ParetoPoint, PredictorModel)>> {
    if plan.lambdas.is_empty() && plan.mgda_runs == 0 {
        return Err(Error::InvalidParameter("sweep needs at least one run".into()));
    }
    let results: Vec<Result<(ParetoPoint, PredictorModel)>> = plan
        .runs()
        .into_par_iter()
        .map(|(run, seed_index)| {
            let seed = derive_seed(plan.master_seed, seed_index);
            let model = PredictorModel::new(plan.architecture, plan.shape, graph.clone(), seed)?;
            let cfg = match run {
                RunKind::Lambda { lambda } => TrainConfig { objective: TrainObjective::MultiScalarized, lambda, seed, ..*template },
                RunKind::Mgda => TrainConfig { objective: TrainObjective::MultiMgda, seed, ..*template },
            };
            let out = train(game, &model, rollout_cfg, &cfg)?;
            let m = out.final_metrics;
            let point = ParetoPoint {
                run,
                seed_index,
                seed,
                accuracy: m.accuracy,
                welfare: m.welfare,
                welfare_normalized: m.welfare_normalized,
                success_fraction: m.success_fraction,
                dominated: false,
                checkpoint: None,
            };
            Ok((point, out.model))
        })
        .collect();
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut points: Vec<ParetoPoint> = results.iter().map(|(p, _)| p.clone()).collect();
    mark_dominated(&mut points);
    for ((p, _), marked) in results.iter_mut().zip(points) {
        *p = marked;
    }
    Ok(results)
}
