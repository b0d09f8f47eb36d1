//! Parametric predictors mapping the previous round's actions to per-node
//! cooperation probabilities.
//!
//! Inputs are one-hot per node over `{defect, cooperate, start}`; the start
//! channel is hot only before the first round. Soft actions embed as
//! `(1 - a, a, 0)`.
//!
//! Architectures:
//! - `static-binary`: a fixed 0/1 vector, ignoring the input.
//! - `mlp`: flattened input -> tanh hidden layer -> sigmoid per node.
//! - `gnn`: mean-aggregation message passing with a shared per-node head.
//!   Shared weights make it equivariant under graph automorphisms.
//! - `gnn+linear` / `gnn+mlp`: message passing followed by a global linear
//!   layer or MLP over the concatenated node embeddings.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agent::Prediction;
use crate::error::{Error, Result};
use crate::graph::PopulationGraph;
use crate::numeric::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "static-binary")]
    StaticBinary,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "gnn")]
    Gnn,
    #[serde(rename = "gnn+mlp")]
    GnnMlp,
    #[serde(rename = "gnn+linear")]
    GnnLinear,
}

impl Architecture {
    pub const TRAINABLE: [Architecture; 4] =
        [Architecture::Mlp, Architecture::Gnn, Architecture::GnnMlp, Architecture::GnnLinear];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::StaticBinary => "static-binary",
            Architecture::Mlp => "mlp",
            Architecture::Gnn => "gnn",
            Architecture::GnnMlp => "gnn+mlp",
            Architecture::GnnLinear => "gnn+linear",
        }
    }

    fn has_gnn(self) -> bool {
        matches!(self, Architecture::Gnn | Architecture::GnnMlp | Architecture::GnnLinear)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Architecture::StaticBinary, Architecture::Mlp, Architecture::Gnn, Architecture::GnnMlp, Architecture::GnnLinear]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Layer sizes. `nodes` fixes the input and output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub nodes: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "default_gnn_layers")]
    pub gnn_layers: usize,
    #[serde(default = "default_gnn_hidden")]
    pub gnn_hidden: usize,
}

fn default_mlp_hidden() -> usize {
    64
}
fn default_gnn_layers() -> usize {
    2
}
fn default_gnn_hidden() -> usize {
    16
}

/// Input channels per node.
pub const CHANNELS: usize = 3;

impl Shape {
    pub fn new(nodes: usize) -> Self {
        Self { nodes, mlp_hidden: default_mlp_hidden(), gnn_layers: default_gnn_layers(), gnn_hidden: default_gnn_hidden() }
    }

    /// Dense blocks `(rows, cols, bias_len)` in parameter order.
    fn blocks(&self, arch: Architecture) -> Vec<(usize, usize, usize)> {
        let n = self.nodes;
        let mut blocks = Vec::new();
        let mut embed = CHANNELS;
        if arch.has_gnn() {
            for _ in 0..self.gnn_layers {
                // W_self, then W_nbr followed by the layer's shared bias.
                blocks.push((self.gnn_hidden, embed, 0));
                blocks.push((self.gnn_hidden, embed, self.gnn_hidden));
                embed = self.gnn_hidden;
            }
        }
        match arch {
            Architecture::StaticBinary => {}
            Architecture::Mlp => {
                blocks.push((self.mlp_hidden, CHANNELS * n, self.mlp_hidden));
                blocks.push((n, self.mlp_hidden, n));
            }
            Architecture::Gnn => blocks.push((1, embed, 1)),
            Architecture::GnnLinear => blocks.push((n, embed * n, n)),
            Architecture::GnnMlp => {
                blocks.push((self.mlp_hidden, embed * n, self.mlp_hidden));
                blocks.push((n, self.mlp_hidden, n));
            }
        }
        blocks
    }
}

/// Number of trainable parameters for `arch` at `shape`.
pub fn count_params(arch: Architecture, shape: &Shape) -> usize {
    shape.blocks(arch).iter().map(|&(rows, cols, bias)| rows * cols + bias).sum()
}

/// Deterministic initialization: weights `N(0, 1 / fan_in)`, biases zero.
pub fn init_params(arch: Architecture, shape: &Shape, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(count_params(arch, shape));
    for (rows, cols, bias) in shape.blocks(arch) {
        let normal = Normal::new(0.0, 1.0 / (cols.max(1) as f64).sqrt()).expect("finite std");
        params.extend((0..rows * cols).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, bias));
    }
    params
}

/// Per-node input channels `[defect, cooperate, start]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEmbedding<S>(pub Vec<[S; CHANNELS]>);

impl<S: Scalar> ActionEmbedding<S> {
    /// Round-one input: every node on the start channel.
    pub fn initial(n: usize) -> Self {
        let (z, o) = (S::constant(0.0), S::constant(1.0));
        Self(vec![[z, z, o]; n])
    }

    /// `(1 - a, a, 0)` per node.
    pub fn from_soft(actions: &[S]) -> Self {
        let z = S::constant(0.0);
        Self(actions.iter().map(|&a| [a.rsub(1.0), a, z]).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl ActionEmbedding<f64> {
    pub fn from_hard(actions: &[u8]) -> Self {
        Self(actions.iter().map(|&a| if a == 1 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] }).collect())
    }
}

/// A predictor bound to a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub architecture: Architecture,
    pub shape: Shape,
    pub params: Vec<f64>,
    /// Output of a static-binary predictor; empty otherwise.
    pub bits: Vec<u8>,
    pub graph: PopulationGraph,
}

impl PredictorModel {
    /// Freshly initialized trainable model.
    pub fn new(architecture: Architecture, shape: Shape, graph: PopulationGraph, seed: u64) -> Result<Self> {
        if architecture == Architecture::StaticBinary {
            return Err(Error::InvalidParameter("use PredictorModel::static_binary for fixed predictions".into()));
        }
        if shape.nodes != graph.node_count() {
            return Err(Error::LengthMismatch { expected: graph.node_count(), actual: shape.nodes });
        }
        let params = init_params(architecture, &shape, seed);
        Ok(Self { architecture, shape, params, bits: Vec::new(), graph })
    }

    pub fn static_binary(bits: Vec<u8>, graph: PopulationGraph) -> Result<Self> {
        if bits.len() != graph.node_count() {
            return Err(Error::LengthMismatch { expected: graph.node_count(), actual: bits.len() });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter("static predictions must be 0 or 1".into()));
        }
        Ok(Self {
            architecture: Architecture::StaticBinary,
            shape: Shape::new(graph.node_count()),
            params: Vec::new(),
            bits,
            graph,
        })
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        let expected = count_params(self.architecture, &self.shape);
        if params.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: params.len() });
        }
        self.params = params;
        Ok(self)
    }

    pub fn is_trainable(&self) -> bool {
        self.architecture != Architecture::StaticBinary
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Evaluates with the stored parameters.
    pub fn predict(&self, input: &ActionEmbedding<f64>) -> Result<Prediction> {
        self.forward(&self.params, input).map(Prediction)
    }

    /// Evaluates with externally supplied parameters (tape variables during
    /// training).
    pub fn forward<S: Scalar>(&self, params: &[S], input: &ActionEmbedding<S>) -> Result<Vec<S>> {
        let n = self.node_count();
        if input.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: input.len() });
        }
        let expected = count_params(self.architecture, &self.shape);
        if params.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: params.len() });
        }
        let mut cur = Cursor { params, pos: 0 };
        let out = match self.architecture {
            Architecture::StaticBinary => self.bits.iter().map(|&b| S::constant(f64::from(b))).collect(),
            Architecture::Mlp => {
                let flat: Vec<S> = input.0.iter().flat_map(|c| c.iter().copied()).collect();
                mlp(&mut cur, &flat, self.shape.mlp_hidden, n)
            }
            Architecture::Gnn => {
                let h = self.message_passing(&mut cur, input);
                let w = cur.take(h[0].len());
                let b = cur.take(1)[0];
                h.iter().map(|hi| (S::dot(w, hi) + b).sigmoid()).collect()
            }
            Architecture::GnnLinear => {
                let h = self.message_passing(&mut cur, input);
                let flat: Vec<S> = h.into_iter().flatten().collect();
                dense(&mut cur, &flat, n).into_iter().map(Scalar::sigmoid).collect()
            }
            Architecture::GnnMlp => {
                let h = self.message_passing(&mut cur, input);
                let flat: Vec<S> = h.into_iter().flatten().collect();
                mlp(&mut cur, &flat, self.shape.mlp_hidden, n)
            }
        };
        debug_assert_eq!(cur.pos, params.len());
        Ok(out)
    }

    /// `h' = tanh(W_self h + W_nbr mean_{N(i)} h + b)` for each layer.
    fn message_passing<S: Scalar>(&self, cur: &mut Cursor<'_, S>, input: &ActionEmbedding<S>) -> Vec<Vec<S>> {
        let g = &self.graph;
        let mut h: Vec<Vec<S>> = input.0.iter().map(|c| c.to_vec()).collect();
        for _ in 0..self.shape.gnn_layers {
            let d_in = h[0].len();
            let width = self.shape.gnn_hidden;
            let w_self = cur.take(width * d_in);
            let w_nbr = cur.take(width * d_in);
            let bias = cur.take(width);
            let means: Vec<Vec<S>> = (0..g.node_count())
                .map(|i| {
                    let ns = g.neighbors(i);
                    if ns.is_empty() {
                        return vec![S::constant(0.0); d_in];
                    }
                    (0..d_in)
                        .map(|d| {
                            let col: Vec<S> = ns.iter().map(|&j| h[j][d]).collect();
                            S::sum(&col) / ns.len() as f64
                        })
                        .collect()
                })
                .collect();
            h = (0..g.node_count())
                .map(|i| {
                    (0..width)
                        .map(|u| {
                            let row = u * d_in..(u + 1) * d_in;
                            (S::dot(&w_self[row.clone()], &h[i]) + S::dot(&w_nbr[row], &means[i]) + bias[u]).tanh()
                        })
                        .collect()
                })
                .collect();
        }
        h
    }

    /// Checkpoint with bit-exact parameter encoding.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: self.architecture,
            shape: self.shape,
            params: self.params.iter().map(|v| format!("{:016x}", v.to_bits())).collect(),
            bits: if self.bits.is_empty() { None } else { Some(self.bits.iter().map(|b| b.to_string()).collect()) },
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, graph: PopulationGraph) -> Result<Self> {
        if ck.shape.nodes != graph.node_count() {
            return Err(Error::LengthMismatch { expected: graph.node_count(), actual: ck.shape.nodes });
        }
        if ck.architecture == Architecture::StaticBinary {
            let bits = parse_bits(ck.bits.as_deref().unwrap_or(""))?;
            return Self::static_binary(bits, graph);
        }
        let params = ck
            .params
            .iter()
            .map(|s| {
                u64::from_str_radix(s, 16)
                    .map(f64::from_bits)
                    .map_err(|_| Error::InvalidParameter(format!("bad parameter encoding `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self { architecture: ck.architecture, shape: ck.shape, params: Vec::new(), bits: Vec::new(), graph }
            .with_params(params)
    }
}

/// Parses a `"0110"`-style bit string.
pub fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::InvalidParameter(format!("bit string contains `{other}`"))),
        })
        .collect()
}

/// Serialized model. Parameters are the hex of each `f64`'s bit pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub shape: Shape,
    pub params: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
}

struct Cursor<'a, S> {
    params: &'a [S],
    pos: usize,
}

impl<'a, S> Cursor<'a, S> {
    fn take(&mut self, len: usize) -> &'a [S] {
        let s = &self.params[self.pos..self.pos + len];
        self.pos += len;
        s
    }
}

fn dense<S: Scalar>(cur: &mut Cursor<'_, S>, x: &[S], out: usize) -> Vec<S> {
    let w = cur.take(out * x.len());
    let b = cur.take(out);
    (0..out).map(|u| S::dot(&w[u * x.len()..(u + 1) * x.len()], x) + b[u]).collect()
}

fn mlp<S: Scalar>(cur: &mut Cursor<'_, S>, x: &[S], hidden: usize, out: usize) -> Vec<S> {
    let h: Vec<S> = dense(cur, x, hidden).into_iter().map(Scalar::tanh).collect();
    dense(cur, &h, out).into_iter().map(Scalar::sigmoid).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_clique, make_hub_counterexample, make_path, make_star, HubVariant};
    use rand::Rng;

    fn embed(bits: &[u8]) -> ActionEmbedding<f64> {
        ActionEmbedding::from_hard(bits)
    }

    #[test]
    fn counts() {
        assert_eq!(count_params(Architecture::Mlp, &Shape::new(20)), 60 * 64 + 64 + 64 * 20 + 20);
        assert_eq!(count_params(Architecture::Mlp, &Shape::new(20)), 5204);
        assert_eq!(count_params(Architecture::Gnn, &Shape::new(5)), 657);
        assert_eq!(count_params(Architecture::StaticBinary, &Shape::new(7)), 0);
        let s = Shape::new(4);
        assert_eq!(count_params(Architecture::GnnLinear, &s), 112 + 528 + 4 * 64 + 4);
        assert_eq!(count_params(Architecture::GnnMlp, &s), 112 + 528 + 64 * 64 + 64 + 64 * 4 + 4);
        for arch in Architecture::TRAINABLE {
            assert_eq!(init_params(arch, &s, 3).len(), count_params(arch, &s), "{arch}");
        }
    }

    #[test]
    fn static_binary_ignores_input() {
        let g = make_clique(3).unwrap();
        let m = PredictorModel::static_binary(vec![1, 0, 1], g).unwrap();
        for input in [ActionEmbedding::initial(3), embed(&[1, 1, 1])] {
            assert_eq!(m.predict(&input).unwrap().0, vec![1.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn zero_mlp_outputs_half() {
        let g = make_path(4).unwrap();
        let m = PredictorModel::new(Architecture::Mlp, Shape::new(4), g, 0).unwrap();
        let m = m.clone().with_params(vec![0.0; m.params.len()]).unwrap();
        assert_eq!(m.predict(&embed(&[1, 0, 1, 1])).unwrap().0, vec![0.5; 4]);
    }

    #[test]
    fn shape_errors() {
        let g = make_clique(3).unwrap();
        let m = PredictorModel::new(Architecture::Mlp, Shape::new(3), g.clone(), 0).unwrap();
        assert!(matches!(m.predict(&embed(&[1, 0])), Err(Error::LengthMismatch { .. })));
        assert!(PredictorModel::new(Architecture::Mlp, Shape::new(4), g.clone(), 0).is_err());
        assert!(m.clone().with_params(vec![0.0; 3]).is_err());
        assert!(PredictorModel::static_binary(vec![1, 2, 0], g).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let s = Shape::new(5);
        assert_eq!(init_params(Architecture::Mlp, &s, 9), init_params(Architecture::Mlp, &s, 9));
        assert_ne!(init_params(Architecture::Mlp, &s, 9), init_params(Architecture::Mlp, &s, 10));
        let p = init_params(Architecture::Mlp, &s, 9);
        let w1 = 64 * 15;
        assert!(p[w1..w1 + 64].iter().all(|&b| b == 0.0));
        assert!(p[p.len() - 5..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_scale() {
        // 64 x 180 first-layer weights with fan-in 180.
        let s = Shape::new(60);
        let p = init_params(Architecture::Mlp, &s, 1);
        let w = &p[..64 * 180];
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = 1.0 / 180f64.sqrt();
        assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let g = make_hub_counterexample(HubVariant::Star3Pendants);
        for arch in Architecture::TRAINABLE {
            let m = PredictorModel::new(arch, Shape::new(7), g.clone(), 4).unwrap();
            for v in m.predict(&embed(&[1, 0, 1, 1, 0, 0, 1])).unwrap().0 {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn gnn_identical_inputs_on_clique() {
        let g = make_clique(3).unwrap();
        let m = PredictorModel::new(Architecture::Gnn, Shape::new(3), g, 11).unwrap();
        for input in [ActionEmbedding::initial(3), embed(&[1, 1, 1])] {
            let out = m.predict(&input).unwrap().0;
            assert_eq!(out[0], out[1]);
            assert_eq!(out[1], out[2]);
        }
    }

    /// Relabeling by an automorphism permutes GNN outputs the same way.
    #[test]
    fn gnn_is_equivariant_under_automorphisms() {
        let star = make_star(4).unwrap();
        let hub = make_hub_counterexample(HubVariant::Star3Pendants);
        // Rotations of the spokes (and their pendants) are automorphisms.
        let cases = [(star, vec![0, 2, 3, 4, 1]), (hub, vec![0, 2, 3, 1, 5, 6, 4])];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (g, perm) in cases {
            assert_eq!(g.relabel(&perm).unwrap(), g);
            let n = g.node_count();
            for seed in 0..20 {
                let m = PredictorModel::new(Architecture::Gnn, Shape::new(n), g.clone(), seed).unwrap();
                let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
                let mut permuted = vec![0; n];
                for i in 0..n {
                    permuted[perm[i]] = bits[i];
                }
                let a = m.predict(&embed(&bits)).unwrap().0;
                let b = m.predict(&embed(&permuted)).unwrap().0;
                for i in 0..n {
                    assert!((a[i] - b[perm[i]]).abs() < 1e-14);
                }
            }
        }
    }

    /// Architectures with a global layer can separate automorphic nodes.
    #[test]
    fn global_heads_break_symmetry() {
        let g = make_clique(3).unwrap();
        for arch in [Architecture::Mlp, Architecture::GnnMlp, Architecture::GnnLinear] {
            let witness = (0..10).find(|&seed| {
                let m = PredictorModel::new(arch, Shape::new(3), g.clone(), seed).unwrap();
                let out = m.predict(&ActionEmbedding::initial(3)).unwrap().0;
                (out[0] - out[1]).abs() > 1e-6
            });
            assert!(witness.is_some(), "{arch}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let g = make_path(4).unwrap();
        for arch in Architecture::TRAINABLE {
            let mut m = PredictorModel::new(arch, Shape::new(4), g.clone(), 2).unwrap();
            m.params[0] = f64::MIN_POSITIVE / 3.0;
            m.params[1] = -0.1 - 0.2;
            let json = serde_json::to_string(&m.checkpoint()).unwrap();
            let ck: Checkpoint = serde_json::from_str(&json).unwrap();
            let back = PredictorModel::from_checkpoint(&ck, g.clone()).unwrap();
            assert!(back.params.iter().zip(&m.params).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let s = PredictorModel::static_binary(vec![0, 1, 1, 0], g.clone()).unwrap();
        let back = PredictorModel::from_checkpoint(&s.checkpoint(), g).unwrap();
        assert_eq!(back, s);
    }
}
