//! The four networks: propagation networks PN1/PN2 (graph attention),
//! the candidate-selection head and the stop head.
//!
//! All forward passes run on a [`tape::Tape`]; training binds parameters
//! once per episode so gradients accumulate across the unrolled sequence,
//! inference uses short-lived tapes and discards them.

pub mod tape;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::discgraph::Direction;
use crate::error::{Error, Result};
use tape::{Matrix, Tape, TensorId};

/// Negative slope inside the attention scores.
pub const ATTN_LEAKY_SLOPE: f64 = 0.2;

/// Per-node embeddings (one row per node).
pub type Embeddings = Matrix;

// ---------------------------------------------------------------------------
// Message-passing structure
// ---------------------------------------------------------------------------

/// Edges of one direction class, sorted by destination, with contiguous
/// per-destination segments for the attention softmax.
#[derive(Debug, Clone, Default)]
pub struct DirEdges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub segment: Vec<usize>,
}

/// Message-passing view of a discovery graph: forward and reverse edges.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    pub num_nodes: usize,
    pub fwd: DirEdges,
    pub rev: DirEdges,
}

impl MessageGraph {
    pub fn new(num_nodes: usize, edges: &[(usize, usize, Direction)]) -> MessageGraph {
        let build = |dir: Direction| -> DirEdges {
            let mut pairs: Vec<(usize, usize)> = edges
                .iter()
                .filter(|(_, _, d)| *d == dir)
                .map(|(s, t, _)| (*t, *s))
                .collect();
            pairs.sort_unstable();
            pairs.dedup();
            let mut out = DirEdges::default();
            let mut seg = 0usize;
            for (i, (dst, src)) in pairs.iter().enumerate() {
                if i > 0 && pairs[i - 1].0 != *dst {
                    seg += 1;
                }
                out.dst.push(*dst);
                out.src.push(*src);
                out.segment.push(seg);
            }
            out
        };
        MessageGraph {
            num_nodes,
            fwd: build(Direction::Forward),
            rev: build(Direction::Reverse),
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// One attention head: forward/reverse weights plus forward/reverse
/// attention vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub w_fwd: Matrix,
    pub w_rev: Matrix,
    pub a_fwd: Matrix,
    pub a_rev: Matrix,
}

/// An attention layer: one or more heads whose outputs are concatenated;
/// the stack's last layer has a single head and applies ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub heads: Vec<AttentionHead>,
    pub final_relu: bool,
    pub in_width: usize,
    pub out_width: usize,
}

/// Width configuration of the whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_width: usize,
    pub embed_width: usize,
    pub pn1_hidden: Vec<usize>,
    pub pn2_hidden: Vec<usize>,
    pub heads: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            input_width: 22,
            embed_width: 16,
            pn1_hidden: vec![20, 32, 64, 32],
            pn2_hidden: vec![17, 32],
            heads: 2,
        }
    }
}

/// All learnable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub pn1: Vec<AttentionLayer>,
    pub pn2: Vec<AttentionLayer>,
    pub scn: Matrix,
    pub sn_a: Matrix,
    pub sn_g: Matrix,
    pub sn_d: Matrix,
}

fn xavier(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn make_layer(rng: &mut ChaCha12Rng, in_w: usize, out_w: usize, heads: usize, last: bool) -> AttentionLayer {
    let heads = if last || out_w % heads != 0 { 1 } else { heads };
    let head_w = out_w / heads;
    let heads = (0..heads)
        .map(|_| AttentionHead {
            w_fwd: xavier(rng, in_w, head_w),
            w_rev: xavier(rng, in_w, head_w),
            a_fwd: xavier(rng, 2 * head_w, 1),
            a_rev: xavier(rng, 2 * head_w, 1),
        })
        .collect();
    AttentionLayer {
        heads,
        final_relu: last,
        in_width: in_w,
        out_width: out_w,
    }
}

fn make_stack(rng: &mut ChaCha12Rng, input: usize, hidden: &[usize], embed: usize, heads: usize) -> Vec<AttentionLayer> {
    let mut layers = Vec::new();
    let mut width = input;
    for &h in hidden {
        layers.push(make_layer(rng, width, h, heads, false));
        width = h;
    }
    layers.push(make_layer(rng, width, embed, heads, true));
    layers
}

impl ModelParams {
    pub fn init(shape: ModelShape, seed: u64) -> ModelParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pn1 = make_stack(
            &mut rng,
            shape.input_width,
            &shape.pn1_hidden,
            shape.embed_width,
            shape.heads,
        );
        let pn2 = make_stack(
            &mut rng,
            shape.embed_width + 1,
            &shape.pn2_hidden,
            shape.embed_width,
            shape.heads,
        );
        let scn = xavier(&mut rng, shape.embed_width + 1, 1);
        let sn_a = xavier(&mut rng, shape.embed_width, shape.embed_width);
        let sn_g = xavier(&mut rng, shape.embed_width, shape.embed_width);
        let sn_d = xavier(&mut rng, shape.embed_width, 1);
        ModelParams {
            shape,
            pn1,
            pn2,
            scn,
            sn_a,
            sn_g,
            sn_d,
        }
    }

    /// All tensors in canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (net, layers) in [("pn1", &self.pn1), ("pn2", &self.pn2)] {
            for (li, layer) in layers.iter().enumerate() {
                for (hi, head) in layer.heads.iter().enumerate() {
                    out.push((format!("{net}.{li}.{hi}.w_fwd"), &head.w_fwd));
                    out.push((format!("{net}.{li}.{hi}.w_rev"), &head.w_rev));
                    out.push((format!("{net}.{li}.{hi}.a_fwd"), &head.a_fwd));
                    out.push((format!("{net}.{li}.{hi}.a_rev"), &head.a_rev));
                }
            }
        }
        out.push(("scn.w".into(), &self.scn));
        out.push(("sn.w_a".into(), &self.sn_a));
        out.push(("sn.w_g".into(), &self.sn_g));
        out.push(("sn.w_d".into(), &self.sn_d));
        out
    }

    /// Mutable tensors in the same canonical order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for layers in [&mut self.pn1, &mut self.pn2] {
            for layer in layers.iter_mut() {
                for head in layer.heads.iter_mut() {
                    out.push(&mut head.w_fwd);
                    out.push(&mut head.w_rev);
                    out.push(&mut head.a_fwd);
                    out.push(&mut head.a_rev);
                }
            }
        }
        out.push(&mut self.scn);
        out.push(&mut self.sn_a);
        out.push(&mut self.sn_g);
        out.push(&mut self.sn_d);
        out
    }

    /// Binds every tensor as a tape leaf; gradients then accumulate on those
    /// leaves across the whole episode.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let bind_stack = |tape: &mut Tape, layers: &[AttentionLayer]| -> Vec<BoundLayer> {
            layers
                .iter()
                .map(|layer| BoundLayer {
                    heads: layer
                        .heads
                        .iter()
                        .map(|h| BoundHead {
                            w_fwd: tape.leaf(h.w_fwd.clone()),
                            w_rev: tape.leaf(h.w_rev.clone()),
                            a_fwd: tape.leaf(h.a_fwd.clone()),
                            a_rev: tape.leaf(h.a_rev.clone()),
                        })
                        .collect(),
                    final_relu: layer.final_relu,
                })
                .collect()
        };
        BoundParams {
            pn1: bind_stack(tape, &self.pn1),
            pn2: bind_stack(tape, &self.pn2),
            scn: tape.leaf(self.scn.clone()),
            sn_a: tape.leaf(self.sn_a.clone()),
            sn_g: tape.leaf(self.sn_g.clone()),
            sn_d: tape.leaf(self.sn_d.clone()),
        }
    }
}

/// Tape ids of bound parameters, in the same structure as [`ModelParams`].
pub struct BoundParams {
    pub pn1: Vec<BoundLayer>,
    pub pn2: Vec<BoundLayer>,
    pub scn: TensorId,
    pub sn_a: TensorId,
    pub sn_g: TensorId,
    pub sn_d: TensorId,
}

pub struct BoundLayer {
    pub heads: Vec<BoundHead>,
    pub final_relu: bool,
}

pub struct BoundHead {
    pub w_fwd: TensorId,
    pub w_rev: TensorId,
    pub a_fwd: TensorId,
    pub a_rev: TensorId,
}

impl BoundParams {
    /// Leaf ids in the canonical tensor order.
    pub fn ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        for layers in [&self.pn1, &self.pn2] {
            for layer in layers {
                for head in &layer.heads {
                    out.extend([head.w_fwd, head.w_rev, head.a_fwd, head.a_rev]);
                }
            }
        }
        out.extend([self.scn, self.sn_a, self.sn_g, self.sn_d]);
        out
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

fn head_forward(
    tape: &mut Tape,
    h: TensorId,
    head: &BoundHead,
    graph: &MessageGraph,
) -> Result<Option<TensorId>> {
    let mut total: Option<TensorId> = None;
    for (edges, w, a) in [
        (&graph.fwd, head.w_fwd, head.a_fwd),
        (&graph.rev, head.w_rev, head.a_rev),
    ] {
        if edges.src.is_empty() {
            continue;
        }
        let hw = tape.matmul(h, w)?;
        let hw_dst = tape.gather_rows(hw, &edges.dst);
        let hw_src = tape.gather_rows(hw, &edges.src);
        let cat = tape.concat_cols(&[hw_dst, hw_src])?;
        let scores = tape.matmul(cat, a)?;
        let e = tape.leaky_relu(scores, ATTN_LEAKY_SLOPE);
        let alpha = tape.segment_softmax(e, &edges.segment)?;
        let msg = tape.mul_col_broadcast(hw_src, alpha)?;
        let out = tape.scatter_add_rows(msg, &edges.dst, graph.num_nodes);
        total = Some(match total {
            None => out,
            Some(t) => tape.add(t, out)?,
        });
    }
    Ok(total)
}

fn layer_forward(
    tape: &mut Tape,
    h: TensorId,
    layer: &BoundLayer,
    graph: &MessageGraph,
) -> Result<TensorId> {
    let mut head_outs = Vec::new();
    for head in &layer.heads {
        let out = head_forward(tape, h, head, graph)?
            .ok_or_else(|| Error::Shape("graph has no edges".into()))?;
        head_outs.push(out);
    }
    let combined = if head_outs.len() == 1 {
        head_outs[0]
    } else {
        tape.concat_cols(&head_outs)?
    };
    Ok(if layer.final_relu {
        tape.relu(combined)
    } else {
        combined
    })
}

/// Runs a layer stack over the graph; errors on non-finite output.
pub fn propagate(
    tape: &mut Tape,
    features: TensorId,
    layers: &[BoundLayer],
    graph: &MessageGraph,
) -> Result<TensorId> {
    let mut h = features;
    for layer in layers {
        h = layer_forward(tape, h, layer, graph)?;
    }
    if !tape.value(h).is_finite() {
        return Err(Error::NonFinite("graph propagation"));
    }
    Ok(h)
}

/// Scores the given (unselected) candidate nodes and normalizes over them.
/// Returns the probability column in candidate order.
pub fn score_candidates(
    tape: &mut Tape,
    embeddings: TensorId,
    flags: &[f64],
    candidates: &[usize],
    scn: TensorId,
) -> Result<TensorId> {
    if candidates.is_empty() {
        return Err(Error::Shape("no unselected candidates to score".into()));
    }
    let n = tape.value(embeddings).rows;
    if flags.len() != n {
        return Err(Error::Shape("flag column must match node count".into()));
    }
    let flag_col = tape.leaf(Matrix::column(flags.to_vec()));
    let hf = tape.concat_cols(&[embeddings, flag_col])?;
    let scores = tape.matmul(hf, scn)?;
    let picked = tape.gather_rows(scores, candidates);
    tape.segment_softmax(picked, &vec![0; candidates.len()])
}

/// Aggregates all non-event node embeddings through the gated sum; returns
/// the pre-sigmoid stop score (losses are computed on it stably).
pub fn stop_logit(
    tape: &mut Tape,
    embeddings: TensorId,
    nodes: &[usize],
    sn_a: TensorId,
    sn_g: TensorId,
    sn_d: TensorId,
) -> Result<TensorId> {
    assert!(!nodes.is_empty(), "stop head needs at least one node");
    let hs = tape.gather_rows(embeddings, nodes);
    let gate_in = tape.matmul(hs, sn_a)?;
    let gate = tape.sigmoid(gate_in);
    let val = tape.matmul(hs, sn_g)?;
    let gated = tape.mul_elem(gate, val)?;
    let hg = tape.sum_rows(gated);
    tape.matmul(hg, sn_d)
}

/// Probability of adding another node: sigmoid of the stop score.
pub fn stop_probability(
    tape: &mut Tape,
    embeddings: TensorId,
    nodes: &[usize],
    sn_a: TensorId,
    sn_g: TensorId,
    sn_d: TensorId,
) -> Result<TensorId> {
    let score = stop_logit(tape, embeddings, nodes, sn_a, sn_g, sn_d)?;
    Ok(tape.sigmoid(score))
}

/// ln(sigmoid(z)), computed stably.
pub fn ln_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// ln(1 + e^z), computed stably.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Attention coefficients of one layer head over one direction: returns
/// (destination, source, alpha) triples. Exposed for verification.
pub fn attention_coefficients(
    layer: &AttentionLayer,
    head_index: usize,
    h: &Matrix,
    graph: &MessageGraph,
    direction: Direction,
) -> Result<Vec<(usize, usize, f64)>> {
    let head = &layer.heads[head_index];
    let (edges, w, a) = match direction {
        Direction::Forward => (&graph.fwd, &head.w_fwd, &head.a_fwd),
        Direction::Reverse => (&graph.rev, &head.w_rev, &head.a_rev),
    };
    if edges.src.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let h_id = tape.leaf(h.clone());
    let w_id = tape.leaf(w.clone());
    let a_id = tape.leaf(a.clone());
    let hw = tape.matmul(h_id, w_id)?;
    let hw_dst = tape.gather_rows(hw, &edges.dst);
    let hw_src = tape.gather_rows(hw, &edges.src);
    let cat = tape.concat_cols(&[hw_dst, hw_src])?;
    let scores = tape.matmul(cat, a_id)?;
    let e = tape.leaky_relu(scores, ATTN_LEAKY_SLOPE);
    let alpha = tape.segment_softmax(e, &edges.segment)?;
    let values = &tape.value(alpha).data;
    Ok(edges
        .dst
        .iter()
        .zip(&edges.src)
        .zip(values)
        .map(|((&d, &s), &v)| (d, s, v))
        .collect())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TensorSer {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsSer {
    version: u32,
    shape: ModelShape,
    tensors: BTreeMap<String, TensorSer>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl ModelParams {
    pub fn to_json_value(&self) -> serde_json::Value {
        let tensors: BTreeMap<String, TensorSer> = self
            .named_tensors()
            .into_iter()
            .map(|(name, m)| {
                (
                    name,
                    TensorSer {
                        rows: m.rows,
                        cols: m.cols,
                        data: m.data.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_value(ParamsSer {
            version: CHECKPOINT_VERSION,
            shape: self.shape.clone(),
            tensors,
        })
        .expect("params serialize")
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<ModelParams> {
        let ser: ParamsSer = serde_json::from_value(value.clone())?;
        if ser.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ser.version
            )));
        }
        let mut params = ModelParams::init(ser.shape, 0);
        let names: Vec<String> = params
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = ser
                .tensors
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint missing tensor {name}")))?;
            if t.rows != slot.rows || t.cols != slot.cols {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {name} is {}x{}, expected {}x{}",
                    t.rows, t.cols, slot.rows, slot.cols
                )));
            }
            slot.data.copy_from_slice(&t.data);
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_node_graph() -> MessageGraph {
        MessageGraph::new(1, &[(0, 0, Direction::Forward)])
    }

    #[test]
    fn single_self_loop_attention_is_identity_weighting() {
        // One node, one self-loop: softmax over a single edge is 1, so the
        // output equals the transformed input.
        let shape = ModelShape {
            input_width: 3,
            embed_width: 3,
            pn1_hidden: vec![],
            pn2_hidden: vec![],
            heads: 1,
        };
        let params = ModelParams::init(shape, 7);
        let graph = single_node_graph();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]);
        let features = tape.leaf(x.clone());
        let out = propagate(&mut tape, features, &bound.pn1, &graph).unwrap();
        // Expected: relu(x W) with W the final layer's single forward head.
        let w = &params.pn1[0].heads[0].w_fwd;
        let mut expect = vec![0.0; 3];
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += x.data[k] * w.get(k, c);
            }
            expect[c] = acc.max(0.0);
        }
        let got = &tape.value(out).data;
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let shape = ModelShape {
            input_width: 4,
            embed_width: 4,
            pn1_hidden: vec![4],
            pn2_hidden: vec![],
            heads: 2,
        };
        let mut params = ModelParams::init(shape, 1);
        for t in params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let graph = MessageGraph::new(
            2,
            &[
                (0, 0, Direction::Forward),
                (1, 1, Direction::Forward),
                (0, 1, Direction::Forward),
                (1, 0, Direction::Reverse),
            ],
        );
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let features = tape.leaf(Matrix::from_vec(2, 4, vec![1.0; 8]));
        let out = propagate(&mut tape, features, &bound.pn1, &graph).unwrap();
        assert!(tape.value(out).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_props_on_probabilities() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::from_vec(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let scn = tape.leaf(Matrix::from_vec(3, 1, vec![0.5, -0.5, 1.0]));
        let p = score_candidates(&mut tape, h, &[0.0, 0.0, 0.0], &[0, 2], scn).unwrap();
        let v = &tape.value(p).data;
        assert_eq!(v.len(), 2);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Single candidate degenerates to probability one.
        let p1 = score_candidates(&mut tape, h, &[0.0, 0.0, 0.0], &[1], scn).unwrap();
        assert!((tape.value(p1).data[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::from_vec(2, 2, vec![0.3, 0.7, 0.3, 0.7]));
        let scn = tape.leaf(Matrix::from_vec(3, 1, vec![0.5, -0.5, 1.0]));
        let p = score_candidates(&mut tape, h, &[0.0, 0.0], &[0, 1], scn).unwrap();
        let v = &tape.value(p).data;
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_candidates_error() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::from_vec(1, 2, vec![0.0, 0.0]));
        let scn = tape.leaf(Matrix::from_vec(3, 1, vec![0.5, -0.5, 1.0]));
        assert!(score_candidates(&mut tape, h, &[0.0], &[], scn).is_err());
    }

    #[test]
    fn all_zero_embeddings_stop_at_half() {
        let params = ModelParams::init(ModelShape::default(), 3);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.leaf(Matrix::zeros(4, params.shape.embed_width));
        let p = stop_probability(&mut tape, h, &[0, 1, 2, 3], bound.sn_a, bound.sn_g, bound.sn_d)
            .unwrap();
        assert!((tape.scalar(p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stop_probability_is_continuous_in_embeddings() {
        let params = ModelParams::init(ModelShape::default(), 5);
        let width = params.shape.embed_width;
        let base: Vec<f64> = (0..2 * width).map(|i| (i as f64) * 0.01 - 0.05).collect();
        let eval = |scale: f64| -> f64 {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut data = base.clone();
            for v in data.iter_mut().take(width) {
                *v *= scale;
            }
            let h = tape.leaf(Matrix::from_vec(2, width, data));
            let p =
                stop_probability(&mut tape, h, &[0, 1], bound.sn_a, bound.sn_g, bound.sn_d)
                    .unwrap();
            tape.scalar(p)
        };
        let (p1, p2) = (eval(1.0), eval(1.0 + 1e-7));
        assert!((p1 - p2).abs() < 1e-5);
    }

    #[test]
    fn attention_sums_to_one_per_destination() {
        let params = ModelParams::init(ModelShape::default(), 11);
        let graph = MessageGraph::new(
            3,
            &[
                (0, 0, Direction::Forward),
                (1, 1, Direction::Forward),
                (2, 2, Direction::Forward),
                (0, 2, Direction::Forward),
                (1, 2, Direction::Forward),
            ],
        );
        let h = Matrix::from_vec(3, 22, (0..66).map(|i| (i as f64) * 0.01).collect());
        let alpha =
            attention_coefficients(&params.pn1[0], 0, &h, &graph, Direction::Forward).unwrap();
        let mut per_dst: BTreeMap<usize, f64> = BTreeMap::new();
        for (d, _, v) in &alpha {
            *per_dst.entry(*d).or_insert(0.0) += v;
        }
        for (_, total) in per_dst {
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_neighbors_get_uniform_attention() {
        let params = ModelParams::init(ModelShape::default(), 13);
        let graph = MessageGraph::new(
            3,
            &[
                (1, 0, Direction::Forward),
                (2, 0, Direction::Forward),
            ],
        );
        let mut h = Matrix::zeros(3, 22);
        for c in 0..22 {
            h.set(1, c, 0.3);
            h.set(2, c, 0.3);
        }
        let alpha =
            attention_coefficients(&params.pn1[0], 0, &h, &graph, Direction::Forward).unwrap();
        assert_eq!(alpha.len(), 2);
        assert!((alpha[0].2 - 0.5).abs() < 1e-12);
        assert!((alpha[1].2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn propagation_is_equivariant_to_node_relabeling() {
        let shape = ModelShape {
            input_width: 5,
            embed_width: 4,
            pn1_hidden: vec![6],
            pn2_hidden: vec![],
            heads: 2,
        };
        let params = ModelParams::init(shape, 17);
        let edges = vec![
            (0, 0, Direction::Forward),
            (1, 1, Direction::Forward),
            (2, 2, Direction::Forward),
            (3, 3, Direction::Forward),
            (0, 1, Direction::Forward),
            (1, 0, Direction::Reverse),
            (1, 2, Direction::Forward),
            (2, 1, Direction::Reverse),
            (2, 3, Direction::Forward),
            (3, 2, Direction::Reverse),
        ];
        let feats: Vec<f64> = (0..20).map(|i| (i as f64) * 0.07 - 0.5).collect();
        let run = |perm: &[usize]| -> Vec<Vec<f64>> {
            let permuted_edges: Vec<(usize, usize, Direction)> = edges
                .iter()
                .map(|&(s, d, dir)| (perm[s], perm[d], dir))
                .collect();
            let graph = MessageGraph::new(4, &permuted_edges);
            let mut fdata = vec![0.0; 20];
            for n in 0..4 {
                for c in 0..5 {
                    fdata[perm[n] * 5 + c] = feats[n * 5 + c];
                }
            }
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let f = tape.leaf(Matrix::from_vec(4, 5, fdata));
            let out = propagate(&mut tape, f, &bound.pn1, &graph).unwrap();
            (0..4)
                .map(|n| tape.value(out).row(perm[n]).to_vec())
                .collect()
        };
        let identity = run(&[0, 1, 2, 3]);
        let shuffled = run(&[2, 0, 3, 1]);
        for (a, b) in identity.iter().zip(&shuffled) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = ModelParams::init(ModelShape::default(), 99);
        let value = params.to_json_value();
        let text = serde_json::to_string(&value).unwrap();
        let back = ModelParams::from_json_value(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(params, back);
        // Serialize again: byte-identical.
        assert_eq!(text, serde_json::to_string(&back.to_json_value()).unwrap());
    }
}
