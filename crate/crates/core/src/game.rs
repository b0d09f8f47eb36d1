//! Collective Risk Dilemma payoffs and welfare.
//!
//! A group of size `M` succeeds when it has at least `ceil(T * M)`
//! cooperators. Defectors keep their endowment `B` on success and expect
//! `B (1 - r)` otherwise; cooperators additionally pay `c B`. Risk enters
//! payoffs as an expectation and is never sampled.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PopulationGraph;
use crate::numeric::sigmoid;

/// Cooperation threshold held as an exact fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Threshold(Ratio<u64>);

impl Threshold {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 || numer > denom {
            return Err(Error::InvalidParameter(format!("threshold {numer}/{denom} is not in [0, 1]")));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }

    pub const ZERO: Threshold = Threshold(Ratio::new_raw(0, 1));
    pub const ONE: Threshold = Threshold(Ratio::new_raw(1, 1));

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn as_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.numer() == 0
    }

    pub fn is_one(&self) -> bool {
        self.numer() == self.denom()
    }

    /// Number of cooperators a group of `group_size` needs: `ceil(T * M)`.
    pub fn required(&self, group_size: usize) -> usize {
        let num = self.numer() * group_size as u64;
        num.div_ceil(self.denom()) as usize
    }
}

impl FromStr for Threshold {
    type Err = Error;

    /// Accepts `"a/b"`, decimals such as `"0.5"`, and integers `"0"`/`"1"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParameter(format!("cannot parse threshold `{s}`"));
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Threshold::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 15 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let denom = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Threshold::new(int * denom + frac, denom)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(serde_json::Number),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Number(n) => n.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Game parameters shared by every group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    /// Endowment.
    #[serde(rename = "B")]
    pub endowment: f64,
    /// Cooperation cost as a fraction of the endowment.
    #[serde(rename = "c")]
    pub cost: f64,
    /// Probability of losing the endowment when the group fails.
    #[serde(rename = "r")]
    pub risk: f64,
    #[serde(rename = "T")]
    pub threshold: Threshold,
}

impl GameParams {
    pub fn new(endowment: f64, cost: f64, risk: f64, threshold: Threshold) -> Result<Self> {
        let p = Self { endowment, cost, risk, threshold };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.endowment > 0.0 && self.endowment.is_finite()) {
            return Err(Error::InvalidParameter(format!("endowment must be positive, got {}", self.endowment)));
        }
        for (name, v) in [("c", self.cost), ("r", self.risk)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// `c < r`: cooperating at the threshold is strictly profitable.
    pub fn rational_cooperation(&self) -> bool {
        self.cost < self.risk
    }

    /// True when some agent's best response can be an exact tie: the gain
    /// of cooperating at the threshold, `(r - c) B`, or elsewhere, `-c B`,
    /// is zero.
    pub fn admits_indifference(&self) -> bool {
        self.cost == self.risk || self.cost == 0.0
    }

    pub fn with_threshold(mut self, threshold: Threshold) -> Self {
        self.threshold = threshold;
        self
    }
}

fn check_count(k: usize, group_size: usize) -> Result<()> {
    if k > group_size {
        return Err(Error::OutOfRange { value: k as i64, lo: 0, hi: group_size as i64 });
    }
    Ok(())
}

/// Whether `k` cooperators meet the threshold of a group of `group_size`.
pub fn group_success(k: usize, group_size: usize, threshold: Threshold) -> Result<bool> {
    check_count(k, group_size)?;
    Ok(k >= threshold.required(group_size))
}

/// Payoff of a defector in a group with `k` cooperators.
pub fn defector_payoff(k: usize, group_size: usize, p: &GameParams) -> Result<f64> {
    let ok = group_success(k, group_size, p.threshold)?;
    Ok(if ok { p.endowment } else { p.endowment * (1.0 - p.risk) })
}

/// Payoff of a cooperator in a group with `k` cooperators (`k` counts the
/// cooperator itself, so `k >= 1`).
pub fn cooperator_payoff(k: usize, group_size: usize, p: &GameParams) -> Result<f64> {
    if k == 0 {
        return Err(Error::OutOfRange { value: 0, lo: 1, hi: group_size as i64 });
    }
    Ok(defector_payoff(k, group_size, p)? - p.cost * p.endowment)
}

/// Payoff of an agent taking `action` (1 = cooperate) in a group where
/// `k` members cooperate in total.
pub fn payoff(action: u8, k: usize, group_size: usize, p: &GameParams) -> Result<f64> {
    if action == 1 {
        cooperator_payoff(k, group_size, p)
    } else {
        defector_payoff(k, group_size, p)
    }
}

/// Cooperator counts per group for a binary action profile.
pub fn group_counts(actions: &[u8], g: &PopulationGraph) -> Result<Vec<usize>> {
    if actions.len() != g.node_count() {
        return Err(Error::LengthMismatch { expected: g.node_count(), actual: actions.len() });
    }
    Ok((0..g.node_count())
        .map(|i| g.group(i).filter(|&j| actions[j] == 1).count())
        .collect())
}

/// Per-group success flags for a binary action profile.
pub fn group_successes(actions: &[u8], g: &PopulationGraph, threshold: Threshold) -> Result<Vec<bool>> {
    let counts = group_counts(actions, g)?;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &k)| k >= threshold.required(g.group_size(i)))
        .collect())
}

/// One step of social welfare: `B * sum_i (success_i * r - a_i * c)`.
pub fn social_welfare(actions: &[u8], g: &PopulationGraph, p: &GameParams) -> Result<f64> {
    let successes = group_successes(actions, g, p.threshold)?;
    let total: f64 = successes
        .iter()
        .zip(actions)
        .map(|(&s, &a)| if s { p.risk } else { 0.0 } - f64::from(a) * p.cost)
        .sum();
    Ok(p.endowment * total)
}

/// Sigmoid relaxation of group success: `sigmoid(temp * (k / M - T))`.
pub fn soft_success(k_soft: f64, group_size: usize, threshold: Threshold, temp: f64) -> f64 {
    sigmoid(temp * (k_soft / group_size as f64 - threshold.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3(t: &str) -> GameParams {
        GameParams::new(1.0, 0.2, 0.4, t.parse().unwrap()).unwrap()
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!("1/2".parse::<Threshold>().unwrap(), Threshold::new(1, 2).unwrap());
        assert_eq!("0.5".parse::<Threshold>().unwrap(), Threshold::new(1, 2).unwrap());
        assert_eq!("2/3".parse::<Threshold>().unwrap().required(3), 2);
        assert_eq!("1".parse::<Threshold>().unwrap(), Threshold::ONE);
        assert_eq!("0".parse::<Threshold>().unwrap(), Threshold::ZERO);
        assert!("3/2".parse::<Threshold>().is_err());
        assert!("abc".parse::<Threshold>().is_err());
        let t: Threshold = serde_json::from_str("0.75").unwrap();
        assert_eq!(t, Threshold::new(3, 4).unwrap());
        assert_eq!(serde_json::to_string(&t).unwrap(), "\"3/4\"");
    }

    #[test]
    fn exact_ceilings() {
        let two_thirds = Threshold::new(2, 3).unwrap();
        assert_eq!(two_thirds.required(3), 2);
        assert_eq!(two_thirds.required(2), 2);
        let tq = Threshold::new(3, 4).unwrap();
        assert_eq!(tq.required(4), 3);
        assert_eq!(tq.required(3), 3);
        assert_eq!(Threshold::ZERO.required(5), 0);
    }

    #[test]
    fn payoffs() {
        let p = fig3("0.5");
        assert_eq!(defector_payoff(2, 3, &p).unwrap(), 1.0);
        assert!((defector_payoff(1, 3, &p).unwrap() - 0.6).abs() < 1e-15);
        assert!((cooperator_payoff(2, 3, &p).unwrap() - 0.8).abs() < 1e-15);
        assert!((cooperator_payoff(1, 3, &p).unwrap() - 0.4).abs() < 1e-15);
        assert!(cooperator_payoff(0, 3, &p).is_err());
        assert!(defector_payoff(4, 3, &p).is_err());
        let safe = GameParams { risk: 0.0, ..p };
        for k in 0..=3 {
            assert_eq!(defector_payoff(k, 3, &safe).unwrap(), 1.0);
        }
        let free = GameParams { cost: 0.0, ..p };
        for k in 1..=3 {
            assert_eq!(cooperator_payoff(k, 3, &free).unwrap(), defector_payoff(k, 3, &free).unwrap());
        }
    }

    #[test]
    fn success_flags() {
        assert!(group_success(2, 3, Threshold::new(2, 3).unwrap()).unwrap());
        assert!(!group_success(2, 3, Threshold::new(3, 4).unwrap()).unwrap());
        for m in 1..6 {
            for k in 0..=m {
                assert!(group_success(k, m, Threshold::ZERO).unwrap());
            }
        }
        assert!(group_success(4, 3, Threshold::ZERO).is_err());
    }

    /// Switching from defect to cooperate gains `(r - c) B` exactly at the
    /// threshold and loses `c B` everywhere else.
    #[test]
    fn switching_gain_exhaustive() {
        let base = GameParams::new(1.3, 0.15, 0.55, Threshold::ZERO).unwrap();
        for m in 1..=6usize {
            for num in 0..=12u64 {
                let p = base.with_threshold(Threshold::new(num, 12).unwrap());
                let pivot = p.threshold.required(m) as i64 - 1;
                for kp in 0..m {
                    let gain = cooperator_payoff(kp + 1, m, &p).unwrap() - defector_payoff(kp, m, &p).unwrap();
                    let expected = if kp as i64 == pivot {
                        (p.risk - p.cost) * p.endowment
                    } else {
                        -p.cost * p.endowment
                    };
                    assert!((gain - expected).abs() < 1e-12, "m={m} T={} k'={kp}", p.threshold);
                }
            }
        }
    }

    #[test]
    fn welfare() {
        let g = crate::graph::make_clique(3).unwrap();
        let p = fig3("2/3");
        assert!((social_welfare(&[1, 1, 0], &g, &p).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(social_welfare(&[0, 0, 0], &g, &p).unwrap(), 0.0);
        let p0 = p.with_threshold(Threshold::ZERO);
        let w = social_welfare(&[1, 1, 1], &g, &p0).unwrap();
        assert!((w - 3.0 * (0.4 - 0.2)).abs() < 1e-12);
        assert!(matches!(social_welfare(&[1, 1], &g, &p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn soft_success_values() {
        let t = Threshold::new(1, 2).unwrap();
        assert_eq!(soft_success(1.5, 3, t, 1.0), 0.5);
        let expected = 1.0 / (1.0 + (-1.0f64 / 6.0).exp());
        assert!((soft_success(2.0, 3, t, 1.0) - expected).abs() < 1e-15);
        assert!((soft_success(2.0, 3, t, 1.0) - 0.5416).abs() < 1e-4);
        assert!(soft_success(2.0, 3, t, 500.0) > 1.0 - 1e-12);
    }

    #[test]
    fn soft_converges_to_hard() {
        let t = Threshold::new(1, 2).unwrap();
        for m in 1..=6 {
            for k in 0..=m {
                let frac = k as f64 / m as f64;
                if (frac - 0.5).abs() < 1e-9 {
                    continue;
                }
                let hard = group_success(k, m, t).unwrap();
                let soft = soft_success(k as f64, m, t, 2000.0);
                assert!((soft - f64::from(u8::from(hard))).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn indifference_detector() {
        assert!(!fig3("0.5").admits_indifference());
        assert!(GameParams { cost: 0.4, ..fig3("0.5") }.admits_indifference());
        assert!(GameParams { cost: 0.0, ..fig3("0.5") }.admits_indifference());
        assert!(fig3("0.5").rational_cooperation());
        assert!(GameParams::new(0.0, 0.2, 0.4, Threshold::ZERO).is_err());
        assert!(GameParams::new(1.0, 1.2, 0.4, Threshold::ZERO).is_err());
    }

    #[test]
    fn json_shape() {
        let p: GameParams = serde_json::from_str(r#"{"B":1.0,"c":0.2,"r":0.4,"T":"1/2"}"#).unwrap();
        assert_eq!(p, fig3("1/2"));
    }
}
