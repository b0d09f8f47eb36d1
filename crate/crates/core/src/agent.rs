//! Agent behavior: Bayesian trust in the external predictor and best
//! responses against a Poisson-binomial belief over neighbors' actions.
//!
//! Agent `i` holds two explanations for each neighbor `j`: the public
//! prediction `theta_j` and a fixed internal expectation `alpha_ij`. It
//! trusts the prediction with probability `tau_i`, cooperates iff
//! `r (tau_i g(theta) + (1 - tau_i) g(alpha)) > c`, where `g` is the
//! probability that exactly `ceil(T M_i) - 1` neighbors cooperate, and
//! updates `tau_i` by Bayes' rule after observing its neighbors' actions.

use crate::error::{Error, Result};
use crate::game::{GameParams, Threshold};
use crate::graph::PopulationGraph;
use crate::numeric::{sigmoid, Scalar};

/// Clamp applied to Bernoulli parameters before taking likelihoods.
pub const PROB_EPS: f64 = 1e-6;

/// Default internal expectation.
pub const DEFAULT_ALPHA: f64 = 0.8;

/// Per-agent trust and internal expectations. `alpha[i][k]` is agent `i`'s
/// expectation for its `k`-th neighbor in sorted neighbor order.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub trust: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
}

impl AgentState {
    /// Every agent starts at trust `tau0` and expects each neighbor to
    /// cooperate with probability `alpha`.
    pub fn homogeneous(g: &PopulationGraph, tau0: f64, alpha: f64) -> Result<Self> {
        for (name, v) in [("tau0", tau0), ("alpha", alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(Self {
            trust: vec![tau0; g.node_count()],
            alpha: (0..g.node_count()).map(|i| vec![alpha; g.degree(i)]).collect(),
        })
    }
}

/// Per-node predicted cooperation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction(pub Vec<f64>);

impl Prediction {
    pub fn binary(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| f64::from(b)).collect())
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn neighbors(&self, g: &PopulationGraph, i: usize) -> Vec<f64> {
        g.neighbors(i).iter().map(|&j| self.0[j]).collect()
    }
}

/// Probability of exactly `m` successes among independent Bernoulli trials.
pub fn poisson_binomial_pmf(probs: &[f64], m: usize) -> Result<f64> {
    if m > probs.len() {
        return Err(Error::OutOfRange { value: m as i64, lo: 0, hi: probs.len() as i64 });
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    Ok(pmf_at(probs, m))
}

/// DP over trials keeping only counts `0..=m`. Each cell update is one
/// recorded primitive when `S` is a tape variable.
pub fn pmf_at<S: Scalar>(probs: &[S], m: usize) -> S {
    if m > probs.len() {
        return S::constant(0.0);
    }
    let mut dp = vec![S::constant(0.0); m + 1];
    dp[0] = S::constant(1.0);
    for (seen, &p) in probs.iter().enumerate() {
        let top = m.min(seen + 1);
        for k in (0..=top).rev() {
            let step = if k == 0 { S::constant(0.0) } else { dp[k - 1] };
            dp[k] = S::pb_cell(dp[k], step, p);
        }
    }
    dp[m]
}

/// Probability that the focal agent is pivotal: exactly `ceil(T M) - 1` of
/// its `M - 1` neighbors cooperate.
pub fn pivot_probability<S: Scalar>(neighbor_probs: &[S], group_size: usize, threshold: Threshold) -> S {
    let required = threshold.required(group_size);
    if required == 0 || required - 1 > neighbor_probs.len() {
        return S::constant(0.0);
    }
    pmf_at(neighbor_probs, required - 1)
}

/// Checked form of [`pivot_probability`].
pub fn g_threshold(neighbor_probs: &[f64], group_size: usize, threshold: Threshold) -> Result<f64> {
    if group_size == 0 || neighbor_probs.len() != group_size - 1 {
        return Err(Error::LengthMismatch { expected: group_size.saturating_sub(1), actual: neighbor_probs.len() });
    }
    Ok(pivot_probability(neighbor_probs, group_size, threshold))
}

/// Expected gain of cooperating over defecting,
/// `r B (tau g_pred + (1 - tau) g_int) - c B`.
pub fn decision_margin<S: Scalar>(trust: S, g_pred: S, g_int: f64, p: &GameParams) -> S {
    let mix = trust * (g_pred - g_int) + g_int;
    mix * (p.risk * p.endowment) - p.cost * p.endowment
}

fn pivots(i: usize, pred: &Prediction, state: &AgentState, p: &GameParams, g: &PopulationGraph) -> (f64, f64) {
    let m = g.group_size(i);
    let gp = pivot_probability(&pred.neighbors(g, i), m, p.threshold);
    let gi = pivot_probability(&state.alpha[i], m, p.threshold);
    (gp, gi)
}

/// Hard decision: cooperate (1) iff `r * mix > c`; exact ties defect.
pub fn best_response(i: usize, pred: &Prediction, state: &AgentState, p: &GameParams, g: &PopulationGraph) -> u8 {
    let (gp, gi) = pivots(i, pred, state, p, g);
    let tau = state.trust[i];
    let mix = tau * gp + (1.0 - tau) * gi;
    u8::from(p.risk * mix > p.cost)
}

/// Sigmoid relaxation of [`best_response`]: `sigmoid(temp * margin)`.
pub fn soft_action(i: usize, pred: &Prediction, state: &AgentState, p: &GameParams, g: &PopulationGraph, temp: f64) -> f64 {
    let (gp, gi) = pivots(i, pred, state, p, g);
    sigmoid(temp * decision_margin(state.trust[i], gp, gi, p))
}

/// Likelihood `prod_j theta_j^a_j (1 - theta_j)^(1 - a_j)` with `theta`
/// clamped to `[eps, 1 - eps]`. Soft actions enter as continuous exponents.
pub fn likelihood<S: Scalar>(theta: &[S], actions: &[S]) -> S {
    let mut log = S::constant(0.0);
    for (&th, &a) in theta.iter().zip(actions) {
        let th = th.clamp_to(PROB_EPS, 1.0 - PROB_EPS);
        log = log + a * th.ln() + a.rsub(1.0) * th.rsub(1.0).ln();
    }
    log.exp()
}

/// Posterior trust after observing neighbors' realized actions.
pub fn trust_posterior<S: Scalar>(prior: S, theta_nbrs: &[S], alpha_nbrs: &[f64], actions_nbrs: &[S]) -> S {
    let alpha: Vec<S> = alpha_nbrs.iter().map(|&a| S::constant(a)).collect();
    let lp = likelihood(theta_nbrs, actions_nbrs);
    let li = likelihood(&alpha, actions_nbrs);
    S::bayes(prior, lp, li)
}

/// Bayes update of agent `i`'s trust given realized actions of everyone
/// (only neighbors' entries are read).
pub fn trust_update(state: &AgentState, pred: &Prediction, realized: &[f64], i: usize, g: &PopulationGraph) -> f64 {
    let theta = pred.neighbors(g, i);
    let acts: Vec<f64> = g.neighbors(i).iter().map(|&j| realized[j]).collect();
    trust_posterior(state.trust[i], &theta, &state.alpha[i], &acts)
}
