//! Gradients of rollout objectives with respect to predictor parameters,
//! finite-difference verification, and the split of the cooperation
//! gradient into an accuracy part and a steering part.
//!
//! The soft action of agent `i` at step `t` is `sigmoid(temp * h)` with
//! `h = r B (tau g_pred + (1 - tau) g_int) - c B`. Since `g_int` does not
//! depend on the parameters,
//!
//! ```text
//! grad a = psi * [ (g_pred - g_int) * grad tau  +  tau * grad g_pred ]
//!                   \______ accuracy ______/      \__ steering __/
//! psi    = a (1 - a) r B temp
//! ```
//!
//! Both parts are obtained by reverse sweeps seeded on `tau` and `g_pred`
//! with the bracketed coefficients held fixed, so every term keeps its full
//! dependence on earlier steps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::AgentState;
use crate::autodiff::{Primitive, Tape, Var};
use crate::error::Result;
use crate::game::GameParams;
use crate::numeric::Scalar;
use crate::predictor::PredictorModel;
use crate::rollout::{soft_rollout, RolloutConfig, SoftRollout};
use crate::training::loss::{loss_ce, loss_ce_against, loss_uc, loss_upop};

/// A scalar function of the parameter vector.
pub trait Objective {
    fn eval<S: Scalar>(&self, params: &[S]) -> Result<S>;
}

/// Quantity computed from a soft rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// Cross-entropy with detached targets.
    Ce,
    /// Cross-entropy with gradient through the targets as well.
    CeThroughTargets,
    /// Cross-entropy against targets frozen at a reference rollout; see
    /// [`FrozenTargetCe`].
    CeFrozen,
    /// Soft cooperator count.
    Uc,
    /// Soft welfare.
    Upop,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Ce => "ce",
            Quantity::CeThroughTargets => "ce-through-targets",
            Quantity::CeFrozen => "ce-frozen",
            Quantity::Uc => "uc",
            Quantity::Upop => "upop",
        }
    }

    /// Value on a rollout. `CeFrozen` falls back to detached targets.
    pub fn of<S: Scalar>(self, rollout: &SoftRollout<S>, game: &GameParams) -> S {
        match self {
            Quantity::Ce | Quantity::CeFrozen => loss_ce(rollout, true),
            Quantity::CeThroughTargets => loss_ce(rollout, false),
            Quantity::Uc => loss_uc(rollout),
            Quantity::Upop => loss_upop(rollout, game),
        }
    }
}

/// A soft rollout of `model`'s architecture with the parameters replaced,
/// reduced to one quantity.
#[derive(Debug, Clone)]
pub struct RolloutObjective<'a> {
    pub game: GameParams,
    pub model: &'a PredictorModel,
    pub cfg: RolloutConfig,
    pub state: AgentState,
    pub quantity: Quantity,
}

impl<'a> RolloutObjective<'a> {
    pub fn new(game: GameParams, model: &'a PredictorModel, cfg: RolloutConfig, quantity: Quantity) -> Result<Self> {
        let state = cfg.initial_state(&model.graph)?;
        Ok(Self { game, model, cfg, state, quantity })
    }

    pub fn rollout<S: Scalar>(&self, params: &[S]) -> Result<SoftRollout<S>> {
        soft_rollout(&self.game, self.model, params, &self.cfg, &self.state)
    }
}

impl Objective for RolloutObjective<'_> {
    fn eval<S: Scalar>(&self, params: &[S]) -> Result<S> {
        Ok(self.quantity.of(&self.rollout(params)?, &self.game))
    }
}

/// Cross-entropy with the targets fixed to the soft actions of the rollout
/// at `reference`. Its gradient at `reference` is the detached-target
/// training gradient, and unlike that gradient it is the derivative of an
/// actual function, so finite differences apply.
#[derive(Debug, Clone)]
pub struct FrozenTargetCe<'a> {
    pub inner: RolloutObjective<'a>,
    pub targets: Vec<Vec<f64>>,
}

impl<'a> FrozenTargetCe<'a> {
    pub fn new(inner: RolloutObjective<'a>, reference: &[f64]) -> Result<Self> {
        let r = inner.rollout(reference)?;
        let targets = r.steps.iter().map(|s| s.actions.clone()).collect();
        Ok(Self { inner, targets })
    }
}

impl Objective for FrozenTargetCe<'_> {
    fn eval<S: Scalar>(&self, params: &[S]) -> Result<S> {
        Ok(loss_ce_against(&self.inner.rollout(params)?, &self.targets))
    }
}

/// Value and exact reverse-mode gradient.
pub fn gradient<O: Objective>(obj: &O, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    gradient_with_fault(obj, params, None)
}

/// As [`gradient`], optionally corrupting one primitive's partials.
pub fn gradient_with_fault<O: Objective>(obj: &O, params: &[f64], fault: Option<(Primitive, f64)>) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    if let Some((p, f)) = fault {
        tape.inject_fault(p, f);
    }
    let vars = tape.vars(params);
    let out = obj.eval(&vars)?;
    tape.check_finite()?;
    let adj = tape.backward(&[(out, 1.0)]);
    Ok((out.value(), adj.wrt_all(&vars)))
}

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub step: f64,
    pub tolerance: f64,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Coordinates whose relative error exceeds the tolerance.
    pub failing: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`. The floor keeps
/// coordinates whose true derivative is ~0 from reporting pure round-off
/// as relative error.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central-difference check of every coordinate. The relative-error floor
/// is `1e-3` times the largest gradient magnitude (at least `1e-8`):
/// central differences of a long rollout carry absolute round-off noise
/// around `1e-9`, which would otherwise dominate tiny coordinates.
pub fn finite_diff_check<O: Objective>(
    obj: &O,
    params: &[f64],
    step: f64,
    tolerance: f64,
    fault: Option<(Primitive, f64)>,
) -> Result<FdReport> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let (_, analytic) = gradient_with_fault(obj, params, fault)?;
    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = params.to_vec();
    for k in 0..params.len() {
        probe[k] = params[k] + step;
        let up = obj.eval(&probe)?;
        probe[k] = params[k] - step;
        let down = obj.eval(&probe)?;
        probe[k] = params[k];
        numeric.push((up - down) / (2.0 * step));
    }
    let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-8);
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut failing = Vec::new();
    for k in 0..params.len() {
        let abs = (analytic[k] - numeric[k]).abs();
        let rel = relative_error(analytic[k], numeric[k], floor);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
        if rel > tolerance || !rel.is_finite() {
            failing.push(k);
        }
    }
    Ok(FdReport { step, tolerance, max_abs_error: max_abs, max_rel_error: max_rel, failing, analytic, numeric })
}

/// Contribution of one agent at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEntry {
    pub t: usize,
    pub i: usize,
    /// `a (1 - a) r B temp`.
    pub psi: f64,
    /// Outer weight on this agent's action (1 for the cooperator count).
    pub weight: f64,
    /// `g_pred - g_int`.
    pub g_gap: f64,
    pub accuracy: Vec<f64>,
    pub steering: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDecomposition {
    pub entries: Vec<DecompositionEntry>,
    /// Full gradient of the decomposed quantity from an ordinary sweep.
    pub total: Vec<f64>,
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl GradientDecomposition {
    pub fn accuracy_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.total.len()];
        for e in &self.entries {
            add_into(&mut out, &e.accuracy);
        }
        out
    }

    pub fn steering_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.total.len()];
        for e in &self.entries {
            add_into(&mut out, &e.steering);
        }
        out
    }

    /// Largest absolute gap between `accuracy + steering` and the total.
    pub fn identity_error(&self) -> f64 {
        let acc = self.accuracy_sum();
        let steer = self.steering_sum();
        self.total
            .iter()
            .zip(acc.iter().zip(&steer))
            .map(|(t, (a, s))| (t - a - s).abs())
            .fold(0.0, f64::max)
    }

    /// `t,i,psi,acc_norm,steer_norm,gap_sign` rows, `t` starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,psi,acc_norm,steer_norm,gap_sign\n");
        for e in &self.entries {
            let sign = if e.g_gap > 0.0 {
                1
            } else if e.g_gap < 0.0 {
                -1
            } else {
                0
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.t + 1,
                e.i,
                e.psi,
                norm(&e.accuracy),
                norm(&e.steering),
                sign
            );
        }
        out
    }
}

/// Splits the gradient of the soft cooperator count.
pub fn decompose_uc_gradient(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig, params: &[f64]) -> Result<GradientDecomposition> {
    decompose(game, model, cfg, params, Quantity::Uc)
}

/// Splits the gradient of soft welfare by chaining through each soft
/// action: `grad U = B sum_j (r sum_{i: j in group(i)} S_i (1 - S_i) temp / M_i - c) grad a_j`.
pub fn decompose_upop_gradient(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig, params: &[f64]) -> Result<GradientDecomposition> {
    decompose(game, model, cfg, params, Quantity::Upop)
}

fn decompose(game: &GameParams, model: &PredictorModel, cfg: &RolloutConfig, params: &[f64], quantity: Quantity) -> Result<GradientDecomposition> {
    let obj = RolloutObjective::new(*game, model, *cfg, quantity)?;
    let tape = Tape::new();
    let vars = tape.vars(params);
    let rollout: SoftRollout<Var<'_>> = obj.rollout(&vars)?;
    let out = quantity.of(&rollout, game);
    tape.check_finite()?;
    let total = tape.backward(&[(out, 1.0)]).wrt_all(&vars);

    let g = &model.graph;
    let rb = game.risk * game.endowment;
    let mut entries = Vec::new();
    for (t, step) in rollout.steps.iter().enumerate() {
        for i in 0..g.node_count() {
            let a = step.actions[i].value();
            let psi = a * (1.0 - a) * rb * rollout.temp;
            let weight = match quantity {
                Quantity::Upop => {
                    let spread: f64 = g
                        .group(i)
                        .map(|k| {
                            let s = step.success[k].value();
                            s * (1.0 - s) * rollout.temp / g.group_size(k) as f64
                        })
                        .sum();
                    game.endowment * (game.risk * spread - game.cost)
                }
                _ => 1.0,
            };
            let tau = step.trust_prior[i];
            let g_gap = step.g_pred[i].value() - step.g_int[i];
            let accuracy = tape.backward(&[(tau, weight * psi * g_gap)]).wrt_all(&vars);
            let steering = tape.backward(&[(step.g_pred[i], weight * psi * tau.value())]).wrt_all(&vars);
            entries.push(DecompositionEntry { t, i, psi, weight, g_gap, accuracy, steering });
        }
    }
    Ok(GradientDecomposition { entries, total })
}
