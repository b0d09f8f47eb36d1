//! Training objectives over a soft rollout.

use crate::agent::PROB_EPS;
use crate::game::GameParams;
use crate::numeric::Scalar;
use crate::rollout::SoftRollout;

/// Cross-entropy of predictions against the soft actions they induced,
/// summed over steps and agents. With `detach_targets` the actions are
/// treated as constants, so the gradient flows through predictions only.
pub fn loss_ce<S: Scalar>(rollout: &SoftRollout<S>, detach_targets: bool) -> S {
    let mut terms = Vec::new();
    for step in &rollout.steps {
        for (&theta, &a) in step.prediction.iter().zip(&step.actions) {
            let target = if detach_targets { a.detach() } else { a };
            let th = theta.clamp_to(PROB_EPS, 1.0 - PROB_EPS);
            terms.push(-(target * th.ln() + target.rsub(1.0) * th.rsub(1.0).ln()));
        }
    }
    S::sum(&terms)
}

/// Cross-entropy against fixed per-step targets.
pub fn loss_ce_against<S: Scalar>(rollout: &SoftRollout<S>, targets: &[Vec<f64>]) -> S {
    let mut terms = Vec::new();
    for (step, tg) in rollout.steps.iter().zip(targets) {
        for (&theta, &a) in step.prediction.iter().zip(tg) {
            let th = theta.clamp_to(PROB_EPS, 1.0 - PROB_EPS);
            terms.push(-(th.ln() * a + th.rsub(1.0).ln() * (1.0 - a)));
        }
    }
    S::sum(&terms)
}

/// Soft cooperator count `sum_t sum_i a_ti`.
pub fn loss_uc<S: Scalar>(rollout: &SoftRollout<S>) -> S {
    let all: Vec<S> = rollout.steps.iter().flat_map(|s| s.actions.iter().copied()).collect();
    S::sum(&all)
}

/// Soft welfare `B sum_t sum_i (S_ti r - a_ti c)`, to be maximized.
pub fn loss_upop<S: Scalar>(rollout: &SoftRollout<S>, game: &GameParams) -> S {
    let mut terms = Vec::new();
    for step in &rollout.steps {
        for (&s, &a) in step.success.iter().zip(&step.actions) {
            terms.push(s * game.risk - a * game.cost);
        }
    }
    S::sum(&terms) * game.endowment
}
