//! Exact analysis of binary predictions under full trust.
//!
//! With trust fixed at 1 and 0/1 predictions, agent `i` cooperates exactly
//! when the prediction puts `ceil(T M_i) - 1` of its neighbors at 1 (and
//! `r > c`). Predictions are bitmasks with bit `i` for node `i`; bit
//! strings list node 0 first.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{self, GameParams, Threshold};
use crate::graph::PopulationGraph;

/// Default limit on graph size for exhaustive enumeration.
pub const DEFAULT_CAP: usize = 20;
/// Bitmask width limit regardless of cap.
pub const MAX_NODES: usize = 63;

pub fn mask_to_bits(mask: u64, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((mask >> i) & 1) as u8).collect()
}

pub fn bits_to_mask(bits: &[u8]) -> u64 {
    bits.iter().enumerate().fold(0, |m, (i, &b)| m | (u64::from(b & 1) << i))
}

pub fn mask_to_string(mask: u64, n: usize) -> String {
    (0..n).map(|i| if (mask >> i) & 1 == 1 { '1' } else { '0' }).collect()
}

/// Precomputed neighborhoods and thresholds of one graph and game.
#[derive(Debug, Clone)]
pub struct Analyzer {
    n: usize,
    nbr: Vec<u64>,
    closed: Vec<u64>,
    required: Vec<u32>,
    game: GameParams,
}

impl Analyzer {
    pub fn new(g: &PopulationGraph, game: &GameParams) -> Result<Self> {
        let n = g.node_count();
        if n > MAX_NODES {
            return Err(Error::CapExceeded { nodes: n, cap: MAX_NODES });
        }
        let nbr: Vec<u64> = (0..n).map(|i| g.neighbors(i).iter().fold(0, |m, &j| m | 1 << j)).collect();
        let closed = nbr.iter().enumerate().map(|(i, &m)| m | 1 << i).collect();
        let required = (0..n).map(|i| game.threshold.required(g.group_size(i)) as u32).collect();
        Ok(Self { n, nbr, closed, required, game: *game })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn induced(&self, prediction: u64) -> u64 {
        if !(self.game.risk > self.game.cost) {
            return 0;
        }
        (0..self.n).fold(0, |acc, i| {
            let k = (prediction & self.nbr[i]).count_ones();
            let pivotal = self.required[i] >= 1 && k == self.required[i] - 1;
            acc | (u64::from(pivotal) << i)
        })
    }

    pub fn successes(&self, actions: u64) -> u64 {
        (0..self.n).fold(0, |acc, i| acc | (u64::from((actions & self.closed[i]).count_ones() >= self.required[i]) << i))
    }

    pub fn full_mask(&self) -> u64 {
        if self.n == 64 {
            u64::MAX
        } else {
            (1u64 << self.n) - 1
        }
    }

    pub fn welfare(&self, actions: u64) -> f64 {
        let s = self.successes(actions);
        let total: f64 = (0..self.n)
            .map(|i| if (s >> i) & 1 == 1 { self.game.risk } else { 0.0 } - ((actions >> i) & 1) as f64 * self.game.cost)
            .sum();
        self.game.endowment * total
    }

    /// Strictness of `profile` as an equilibrium: `(strict, indifferent)`.
    fn equilibrium(&self, profile: u64) -> (bool, bool) {
        let mut strict = true;
        let mut indifferent = false;
        for i in 0..self.n {
            let others = (profile & self.nbr[i]).count_ones();
            let a = (profile >> i) & 1;
            // A cooperator gains by defecting iff it is not pivotal; a
            // defector gains by cooperating iff it would be.
            let pivotal = self.required[i] >= 1 && others == self.required[i] - 1;
            let gain = if pivotal { self.game.risk - self.game.cost } else { -self.game.cost };
            let gain = if a == 1 { gain } else { -gain };
            if gain == 0.0 {
                indifferent = true;
                strict = false;
            } else if gain < 0.0 {
                strict = false;
            }
        }
        (strict, indifferent)
    }

    pub fn report(&self, prediction: u64) -> ProphecyReport {
        let induced = self.induced(prediction);
        let (is_nash, indifferent) = self.equilibrium(prediction);
        let matches = self.n as u32 - ((prediction ^ induced) & self.full_mask()).count_ones();
        ProphecyReport {
            prediction,
            induced,
            self_fulfilling: induced == prediction,
            is_nash,
            indifferent,
            full_success: self.successes(induced) == self.full_mask(),
            welfare: self.welfare(induced),
            accuracy: f64::from(matches) / self.n as f64,
        }
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        if self.n > cap {
            return Err(Error::CapExceeded { nodes: self.n, cap });
        }
        Ok(())
    }

    pub fn enumerate(&self, cap: usize) -> Result<Vec<ProphecyReport>> {
        self.check_cap(cap)?;
        Ok((0..1u64 << self.n).into_par_iter().map(|p| self.report(p)).collect())
    }
}

/// Outcome of one binary prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProphecyReport {
    pub prediction: u64,
    pub induced: u64,
    pub self_fulfilling: bool,
    /// The predicted profile is a strict Nash equilibrium.
    pub is_nash: bool,
    /// Some agent is indifferent at the predicted profile.
    pub indifferent: bool,
    pub full_success: bool,
    /// One-step welfare of the induced actions.
    pub welfare: f64,
    pub accuracy: f64,
}

/// Best responses to a binary prediction under full trust.
pub fn induced_actions(prediction: &[u8], g: &PopulationGraph, game: &GameParams) -> Result<Vec<u8>> {
    if prediction.len() != g.node_count() {
        return Err(Error::LengthMismatch { expected: g.node_count(), actual: prediction.len() });
    }
    let a = Analyzer::new(g, game)?;
    Ok(mask_to_bits(a.induced(bits_to_mask(prediction)), g.node_count()))
}

/// One report per binary prediction, in mask order.
pub fn enumerate_prophecies(g: &PopulationGraph, game: &GameParams, cap: usize) -> Result<Vec<ProphecyReport>> {
    Analyzer::new(g, game)?.enumerate(cap)
}

/// Aggregate counts over an enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProphecySummary {
    pub predictions: u64,
    pub self_fulfilling: u64,
    pub strict_nash: u64,
    pub indifferent: u64,
    pub full_success: u64,
    pub self_fulfilling_full_success: u64,
    /// Predictions whose (accuracy, welfare) no other prediction dominates.
    pub pareto_undominated: u64,
}

pub fn summarize(reports: &[ProphecyReport]) -> ProphecySummary {
    let count = |f: &dyn Fn(&ProphecyReport) -> bool| reports.iter().filter(|r| f(r)).count() as u64;
    ProphecySummary {
        predictions: reports.len() as u64,
        self_fulfilling: count(&|r| r.self_fulfilling),
        strict_nash: count(&|r| r.is_nash),
        indifferent: count(&|r| r.indifferent),
        full_success: count(&|r| r.full_success),
        self_fulfilling_full_success: count(&|r| r.self_fulfilling && r.full_success),
        pareto_undominated: pareto_undominated(reports).len() as u64,
    }
}

/// Indices of reports not dominated in (accuracy, welfare).
pub fn pareto_undominated(reports: &[ProphecyReport]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    // Accuracy descending, then welfare descending: a report is dominated
    // iff some earlier report has welfare at least as high with one
    // coordinate strictly better.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&reports[a], &reports[b]);
        rb.accuracy.total_cmp(&ra.accuracy).then(rb.welfare.total_cmp(&ra.welfare))
    });
    let mut keep = Vec::new();
    let mut best_welfare = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let acc = reports[order[k]].accuracy;
        let mut end = k;
        while end < order.len() && reports[order[end]].accuracy == acc {
            end += 1;
        }
        let top = reports[order[k]].welfare;
        if top > best_welfare {
            keep.extend(order[k..end].iter().copied().filter(|&i| reports[i].welfare == top));
            best_welfare = top;
        }
        k = end;
    }
    keep.sort_unstable();
    keep
}

/// Welfare-maximizing prediction, optionally among self-fulfilling ones.
/// Ties go to higher accuracy, then the lexicographically smallest bit
/// string. `None` only when no prediction qualifies.
pub fn best_prediction_for_welfare(
    g: &PopulationGraph,
    game: &GameParams,
    require_self_fulfilling: bool,
    cap: usize,
) -> Result<Option<ProphecyReport>> {
    let a = Analyzer::new(g, game)?;
    Ok(best_of(&a.enumerate(cap)?, g.node_count(), require_self_fulfilling))
}

/// As [`best_prediction_for_welfare`] over an existing enumeration.
pub fn best_of(reports: &[ProphecyReport], n: usize, require_self_fulfilling: bool) -> Option<ProphecyReport> {
    let mut best: Option<&ProphecyReport> = None;
    for r in reports.iter().filter(|r| !require_self_fulfilling || r.self_fulfilling) {
        let better = match best {
            None => true,
            Some(b) => {
                r.welfare > b.welfare
                    || (r.welfare == b.welfare
                        && (r.accuracy > b.accuracy
                            || (r.accuracy == b.accuracy && mask_to_string(r.prediction, n) < mask_to_string(b.prediction, n))))
            }
        };
        if better {
            best = Some(r);
        }
    }
    best.copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attainability {
    pub attainable: bool,
    /// First prediction in mask order inducing full success.
    pub witness: Option<u64>,
    /// Predictions examined; `2^n` when unattainable.
    pub checked: u64,
}

/// Whether any binary prediction induces success in every group.
pub fn full_success_attainable(g: &PopulationGraph, game: &GameParams, cap: usize) -> Result<Attainability> {
    let a = Analyzer::new(g, game)?;
    a.check_cap(cap)?;
    let full = a.full_mask();
    let total = 1u64 << a.n;
    let witness = (0..total).into_par_iter().find_first(|&p| a.successes(a.induced(p)) == full);
    Ok(Attainability { attainable: witness.is_some(), witness, checked: witness.map_or(total, |w| w + 1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessCondition {
    ThresholdZero,
    ThresholdOne,
    Clique,
}

impl SuccessCondition {
    pub fn name(self) -> &'static str {
        match self {
            SuccessCondition::ThresholdZero => "T=0",
            SuccessCondition::ThresholdOne => "T=1",
            SuccessCondition::Clique => "clique",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessConditionCheck {
    pub condition: Option<SuccessCondition>,
    pub witness: Option<u64>,
    /// The witness is self-fulfilling and induces full success.
    pub verified: bool,
}

/// Detects a sufficient condition for self-fulfilling full success and
/// checks the constructive witness. Makes no claim when no condition holds.
pub fn check_success_condition(g: &PopulationGraph, game: &GameParams) -> Result<SuccessConditionCheck> {
    let n = g.node_count();
    let a = Analyzer::new(g, game)?;
    let t = game.threshold;
    let (condition, witness) = if t.is_zero() {
        (SuccessCondition::ThresholdZero, 0)
    } else if t.is_one() {
        (SuccessCondition::ThresholdOne, a.full_mask())
    } else if g.is_clique() {
        let k = t.required(n);
        (SuccessCondition::Clique, a.full_mask() & ((1u64 << k) - 1))
    } else {
        return Ok(SuccessConditionCheck { condition: None, witness: None, verified: false });
    };
    let r = a.report(witness);
    Ok(SuccessConditionCheck { condition: Some(condition), witness: Some(witness), verified: r.self_fulfilling && r.full_success })
}

/// A hub `H` whose neighbors all have smaller groups, each with a further
/// neighbor whose group is smaller than `H`'s, at threshold exactly
/// `(M_H - 1) / M_H`.
pub fn check_hub_condition(g: &PopulationGraph, threshold: Threshold) -> bool {
    g.unattainability_hubs().into_iter().any(|h| {
        let m = g.group_size(h) as u64;
        Threshold::new(m - 1, m).is_ok_and(|t| t == threshold)
    })
}

/// Random graph with `max_nodes` or fewer nodes satisfying the hub
/// condition, together with its threshold. Node labels are shuffled.
pub fn random_hub_instance(seed: u64, max_nodes: usize) -> Result<(PopulationGraph, Threshold)> {
    if max_nodes < 6 {
        return Err(Error::InvalidSize(format!("hub instances need at least 6 nodes, got {max_nodes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        // Hub 0 with d neighbors; every neighbor gets one pendant, then
        // random extra edges that keep neighbor degrees below d.
        let d = rng.random_range(2..=((max_nodes - 1) / 2).min(5));
        let mut edges: Vec<(usize, usize)> = (1..=d).map(|i| (0, i)).collect();
        let mut next = d + 1;
        let mut degree = vec![0usize; max_nodes];
        for i in 1..=d {
            edges.push((i, next));
            degree[i] = 2;
            degree[next] = 1;
            next += 1;
        }
        degree[0] = d;
        for _ in 0..rng.random_range(0..=4) {
            let a = rng.random_range(1..next);
            let b = if next < max_nodes && rng.random_bool(0.5) {
                next += 1;
                next - 1
            } else {
                rng.random_range(1..next)
            };
            if a == b || edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
                continue;
            }
            edges.push((a, b));
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut perm: Vec<usize> = (0..next).collect();
        perm.shuffle(&mut rng);
        let g = PopulationGraph::from_edges(next, edges.iter().map(|&(a, b)| (perm[a], perm[b])))?;
        let m = g.group_size(perm[0]) as u64;
        let t = Threshold::new(m - 1, m)?;
        if check_hub_condition(&g, t) {
            return Ok((g, t));
        }
    }
}

/// Independent equilibrium test on payoffs: every agent strictly prefers
/// its action to the unilateral deviation. Returns `(strict, indifferent)`.
pub fn nash_by_deviation(profile: &[u8], g: &PopulationGraph, game: &GameParams) -> Result<(bool, bool)> {
    let counts = game::group_counts(profile, g)?;
    let mut strict = true;
    let mut indifferent = false;
    for i in 0..g.node_count() {
        let m = g.group_size(i);
        let a = profile[i];
        let k = counts[i];
        let stay = game::payoff(a, k, m, game)?;
        let dev_k = if a == 1 { k - 1 } else { k + 1 };
        let deviate = game::payoff(1 - a, dev_k, m, game)?;
        if stay == deviate {
            indifferent = true;
        }
        if stay <= deviate {
            strict = false;
        }
    }
    Ok((strict, indifferent))
}
