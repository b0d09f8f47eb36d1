//! Repeated play: predict, act, score, update trust.
//!
//! Each step the predictor sees the previous step's actions (the start
//! token on step one), every agent acts simultaneously from the same
//! prediction and its trust from the previous step, groups are scored,
//! and then every agent updates its trust from its neighbors' actions.
//!
//! Hard mode uses the exact decision rule and is what all reported metrics
//! come from. Soft mode replaces the decision rule and group success with
//! sigmoids and is generic over [`Scalar`] so that it can be recorded on a
//! tape for training.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentState, DEFAULT_ALPHA, PROB_EPS};
use crate::error::{Error, Result};
use crate::game::{self, GameParams};
use crate::graph::PopulationGraph;
use crate::numeric::Scalar;
use crate::predictor::{ActionEmbedding, PredictorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Sigmoid temperature shared by soft actions and soft success.
    #[serde(default = "default_temp")]
    pub temp: f64,
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizon() -> usize {
    20
}
fn default_mode() -> Mode {
    Mode::Hard
}
fn default_temp() -> f64 {
    1.0
}
fn default_tau0() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            mode: default_mode(),
            temp: default_temp(),
            tau0: default_tau0(),
            alpha: default_alpha(),
            seed: 0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau0) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter("tau0 and alpha must lie in [0, 1]".into()));
        }
        if !(self.temp > 0.0) {
            return Err(Error::InvalidParameter(format!("temp must be positive, got {}", self.temp)));
        }
        Ok(())
    }

    pub fn initial_state(&self, g: &PopulationGraph) -> Result<AgentState> {
        AgentState::homogeneous(g, self.tau0, self.alpha)
    }
}

/// One time step of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub prediction: Vec<f64>,
    /// 0/1 in hard mode, sigmoid actions in soft mode.
    pub actions: Vec<f64>,
    /// Trust after this step's update.
    pub trust: Vec<f64>,
    /// 0/1 in hard mode, sigmoid success in soft mode.
    pub group_success: Vec<f64>,
    pub welfare: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub mode: Mode,
    pub steps: Vec<StepRecord>,
}

impl RolloutTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Hard actions at step `t` (0-based).
    pub fn hard_actions(&self, t: usize) -> Vec<u8> {
        self.steps[t].actions.iter().map(|&a| u8::from(a >= 0.5)).collect()
    }

    /// One row per `(t, i)`: `t,i,theta_hat,action,trust,group_success`,
    /// with `t` starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,theta_hat,action,trust,group_success\n");
        for (t, s) in self.steps.iter().enumerate() {
            for i in 0..s.prediction.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    t + 1,
                    i,
                    s.prediction[i],
                    s.actions[i],
                    s.trust[i],
                    s.group_success[i]
                );
            }
        }
        out
    }
}

/// Aggregate metrics of a hard trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean over `(t, i)` of `1[round(theta) == a]`.
    pub accuracy: f64,
    /// Mean over `(t, i)` of `a log theta + (1 - a) log (1 - theta)`.
    pub mean_log_likelihood: f64,
    /// Summed over steps.
    pub welfare: f64,
    /// `welfare / (B * n * steps)`.
    pub welfare_normalized: f64,
    pub cooperators: usize,
    pub successful_groups: usize,
    pub cooperation_fraction: f64,
    pub success_fraction: f64,
    pub steps: usize,
    pub nodes: usize,
}

fn step_accuracy(prediction: &[f64], actions: &[u8]) -> f64 {
    let hits = prediction.iter().zip(actions).filter(|(&p, &a)| u8::from(p >= 0.5) == a).count();
    hits as f64 / actions.len() as f64
}

/// Hard-mode rollout.
pub fn run_hard(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig) -> Result<RolloutTrace> {
    let state = cfg.initial_state(&model.graph)?;
    run_hard_from(game, model, cfg, state)
}

/// Hard-mode rollout from an explicit initial agent state.
pub fn run_hard_from(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig, mut state: AgentState) -> Result<RolloutTrace> {
    cfg.validate()?;
    let g = &model.graph;
    let n = g.node_count();
    let mut input = ActionEmbedding::initial(n);
    let mut steps = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let pred = model.predict(&input)?;
        let actions: Vec<u8> = (0..n).map(|i| agent::best_response(i, &pred, &state, game, g)).collect();
        let success = game::group_successes(&actions, g, game.threshold)?;
        let welfare = game::social_welfare(&actions, g, game)?;
        let realized: Vec<f64> = actions.iter().map(|&a| f64::from(a)).collect();
        let trust: Vec<f64> = (0..n).map(|i| agent::trust_update(&state, &pred, &realized, i, g)).collect();
        state.trust.clone_from(&trust);
        steps.push(StepRecord {
            accuracy: step_accuracy(&pred.0, &actions),
            prediction: pred.0,
            actions: realized,
            trust,
            group_success: success.iter().map(|&s| f64::from(u8::from(s))).collect(),
            welfare,
        });
        input = ActionEmbedding::from_hard(&actions);
    }
    Ok(RolloutTrace { mode: Mode::Hard, steps })
}

/// Runs in the mode selected by `cfg`. Soft traces are evaluated in plain
/// `f64`.
pub fn run(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig) -> Result<RolloutTrace> {
    match cfg.mode {
        Mode::Hard => run_hard(game, model, cfg),
        Mode::Soft => {
            let state = cfg.initial_state(&model.graph)?;
            let soft = soft_rollout(game, model, &model.params, cfg, &state)?;
            Ok(soft.to_trace(game))
        }
    }
}

/// Metrics of a hard trace.
pub fn metrics(trace: &RolloutTrace, game: &GameParams) -> Result<Metrics> {
    if trace.mode != Mode::Hard {
        return Err(Error::SoftTrace);
    }
    let steps = trace.steps.len();
    let nodes = trace.steps.first().map_or(0, |s| s.actions.len());
    let cells = (steps * nodes).max(1) as f64;
    let mut hits = 0usize;
    let mut loglik = 0.0;
    let mut welfare = 0.0;
    let mut cooperators = 0;
    let mut successful = 0;
    for s in &trace.steps {
        for i in 0..nodes {
            let a = s.actions[i] >= 0.5;
            let p = s.prediction[i];
            hits += usize::from((p >= 0.5) == a);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loglik += if a { pc.ln() } else { (1.0 - pc).ln() };
            cooperators += usize::from(a);
            successful += usize::from(s.group_success[i] >= 0.5);
        }
        welfare += s.welfare;
    }
    Ok(Metrics {
        accuracy: hits as f64 / cells,
        mean_log_likelihood: loglik / cells,
        welfare,
        welfare_normalized: welfare / (game.endowment * cells),
        cooperators,
        successful_groups: successful,
        cooperation_fraction: cooperators as f64 / cells,
        success_fraction: successful as f64 / cells,
        steps,
        nodes,
    })
}

/// One step of a soft rollout, with the intermediate quantities the
/// gradient decomposition needs.
#[derive(Debug, Clone)]
pub struct SoftStep<S> {
    pub prediction: Vec<S>,
    /// Trust each agent acted on (the previous step's posterior).
    pub trust_prior: Vec<S>,
    pub trust_posterior: Vec<S>,
    /// Pivot probability under the prediction.
    pub g_pred: Vec<S>,
    /// Pivot probability under the internal expectations (constant).
    pub g_int: Vec<f64>,
    /// `sigmoid(temp * margin)`.
    pub actions: Vec<S>,
    /// `sigmoid(temp * (k / M - T))` with `k` the soft cooperator count.
    pub success: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct SoftRollout<S> {
    pub temp: f64,
    pub steps: Vec<SoftStep<S>>,
}

/// Fully relaxed rollout, generic over the scalar type.
pub fn soft_rollout<S: Scalar>(
    game: &GameParams,
    model: &PredictorModel,
    params: &[S],
    cfg: &RolloutConfig,
    state: &AgentState,
) -> Result<SoftRollout<S>> {
    cfg.validate()?;
    let g = &model.graph;
    let n = g.node_count();
    let t_frac = game.threshold.as_f64();
    let mut trust: Vec<S> = state.trust.iter().map(|&t| S::constant(t)).collect();
    let g_int: Vec<f64> = (0..n)
        .map(|i| agent::pivot_probability(&state.alpha[i], g.group_size(i), game.threshold))
        .collect();
    let mut input = ActionEmbedding::<S>::initial(n);
    let mut steps = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let prediction = model.forward(params, &input)?;
        let nbr = |v: &[S], i: usize| -> Vec<S> { g.neighbors(i).iter().map(|&j| v[j]).collect() };
        let g_pred: Vec<S> = (0..n)
            .map(|i| agent::pivot_probability(&nbr(&prediction, i), g.group_size(i), game.threshold))
            .collect();
        let actions: Vec<S> = (0..n)
            .map(|i| (agent::decision_margin(trust[i], g_pred[i], g_int[i], game) * cfg.temp).sigmoid())
            .collect();
        let success: Vec<S> = (0..n)
            .map(|i| {
                let members: Vec<S> = g.group(i).map(|j| actions[j]).collect();
                let frac = S::sum(&members) / g.group_size(i) as f64;
                ((frac - t_frac) * cfg.temp).sigmoid()
            })
            .collect();
        let posterior: Vec<S> = (0..n)
            .map(|i| agent::trust_posterior(trust[i], &nbr(&prediction, i), &state.alpha[i], &nbr(&actions, i)))
            .collect();
        input = ActionEmbedding::from_soft(&actions);
        let prior = std::mem::replace(&mut trust, posterior.clone());
        steps.push(SoftStep {
            prediction,
            trust_prior: prior,
            trust_posterior: posterior,
            g_pred,
            g_int: g_int.clone(),
            actions,
            success,
        });
    }
    Ok(SoftRollout { temp: cfg.temp, steps })
}

impl<S: Scalar> SoftRollout<S> {
    /// Plain-value trace of this rollout (mode `soft`).
    pub fn to_trace(&self, game: &GameParams) -> RolloutTrace {
        let val = |v: &[S]| v.iter().map(Scalar::value).collect::<Vec<f64>>();
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let actions = val(&s.actions);
                let success = val(&s.success);
                let welfare = game.endowment
                    * success.iter().zip(&actions).map(|(sv, a)| sv * game.risk - a * game.cost).sum::<f64>();
                let prediction = val(&s.prediction);
                let hard: Vec<u8> = actions.iter().map(|&a| u8::from(a >= 0.5)).collect();
                StepRecord {
                    accuracy: step_accuracy(&prediction, &hard),
                    prediction,
                    actions,
                    trust: val(&s.trust_posterior),
                    group_success: success,
                    welfare,
                }
            })
            .collect();
        RolloutTrace { mode: Mode::Soft, steps }
    }
}

/// Static predictions under full trust: convenience for analysis code.
pub fn static_rollout(game: &GameParams, g: &PopulationGraph, bits: &[u8], horizon: usize) -> Result<RolloutTrace> {
    let model = PredictorModel::static_binary(bits.to_vec(), g.clone())?;
    let cfg = RolloutConfig { horizon, tau0: 1.0, ..Default::default() };
    run_hard(game, &model, &cfg)
}
