//! Teacher-forced sequential training on log/net pairs.
//!
//! Each instance yields a breadth-first target order over the net's places
//! and silent transitions; the episode forces that order, accumulating
//! negative log-likelihoods of the forced selections plus binary
//! cross-entropy terms for the stop decisions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{self, ArityCaps, CandidateSet};
use crate::discgraph::{self, DiscoveryGraph, NodeKind};
use crate::error::{Error, Result};
use crate::eventlog::{self, EventLog};
use crate::inference::{self, InferConfig};
use crate::neural::tape::{Matrix, Tape};
use crate::neural::{self, MessageGraph, ModelParams, ModelShape};
use crate::petrinet::{PetriNet, PlaceId, TransRef};

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Train share of the dataset, in (0, 1).
    pub split: f64,
    pub seed: u64,
    pub k_window: usize,
    pub caps: ArityCaps,
    pub max_alphabet: usize,
    pub lambda_stop: f64,
    pub tau_arity_cap: usize,
    pub sample_min: usize,
    pub sample_max: usize,
    pub candidate_budget: usize,
    /// Train instances replayed greedily per epoch for the report.
    pub replay_sample: usize,
    /// One progress line per epoch on stdout.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            split: 0.75,
            seed: 0,
            k_window: 2,
            caps: ArityCaps::default(),
            max_alphabet: 20,
            lambda_stop: 1.0,
            tau_arity_cap: 1,
            sample_min: 8,
            sample_max: 50,
            candidate_budget: 2000,
            replay_sample: 32,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidConfig("split must be in (0, 1)".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn infer_config(&self, beam: usize) -> InferConfig {
        InferConfig {
            beam,
            decay: 1.0,
            tau_arity_cap: self.tau_arity_cap,
            sample_min: self.sample_min,
            sample_max: self.sample_max,
            candidate_budget: self.candidate_budget,
            k_window: self.k_window,
            caps: self.caps,
            max_alphabet: self.max_alphabet,
            ..InferConfig::default()
        }
    }
}

/// One element of the breadth-first target order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BfsItem {
    Place(PlaceId),
    Tau(usize),
}

/// One teacher-forcing step, resolved to candidate indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetStep {
    Place(usize),
    Tau {
        inputs: BTreeSet<usize>,
        outputs: BTreeSet<usize>,
    },
}

/// A prepared training instance.
pub struct TrainingInstance {
    pub log: EventLog,
    pub target_net: PetriNet,
    pub candidates: CandidateSet,
    pub graph: DiscoveryGraph,
    pub targets: Vec<TargetStep>,
    pub injected: usize,
}

/// Per-epoch statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub selection_loss: f64,
    pub stop_loss: f64,
    pub mean_target_prob: f64,
    pub replay_precision: f64,
    pub replay_recall: f64,
    pub replay_false_positives: f64,
    pub holdout_loss: f64,
}

/// Outcome of one teacher-forced episode.
pub struct StepStats {
    pub total_loss: f64,
    pub selection_loss: f64,
    pub stop_loss: f64,
    pub target_probs: Vec<f64>,
    pub injected_taus: usize,
}

fn place_sort_key(net: &PetriNet, p: PlaceId) -> (Vec<String>, Vec<String>) {
    let place = &net.places()[p];
    let mut ins: Vec<String> = place.inputs.iter().map(|&t| net.trans_label(t)).collect();
    let mut outs: Vec<String> = place.outputs.iter().map(|&t| net.trans_label(t)).collect();
    ins.sort_unstable();
    outs.sort_unstable();
    (ins, outs)
}

fn trans_sort_key(net: &PetriNet, t: TransRef) -> (u8, String, Vec<(Vec<String>, Vec<String>)>) {
    match t {
        TransRef::Visible(i) => (0, net.activities()[i].clone(), Vec::new()),
        TransRef::Silent(_) => {
            let mut keys: Vec<(Vec<String>, Vec<String>)> = net
                .trans_input_places(t)
                .iter()
                .chain(net.trans_output_places(t).iter())
                .map(|&p| place_sort_key(net, p))
                .collect();
            keys.sort();
            (1, String::new(), keys)
        }
    }
}

/// Breadth-first traversal from the source place over the net's arcs;
/// places and silent transitions are emitted in first-visit order, source
/// and sink excluded, ties broken by sorted input/output labels.
pub fn bfs_order(net: &PetriNet) -> Result<Vec<BfsItem>> {
    let source = net
        .source()
        .ok_or_else(|| Error::InvalidNet("no unique source".into()))?;
    let sink = net
        .sink()
        .ok_or_else(|| Error::InvalidNet("no unique sink".into()))?;
    let mut order = Vec::new();
    let mut seen_places: BTreeSet<PlaceId> = BTreeSet::from([source]);
    let mut seen_trans: BTreeSet<TransRef> = BTreeSet::new();
    let mut queue: std::collections::VecDeque<Node> = std::collections::VecDeque::new();
    enum Node {
        P(PlaceId),
        T(TransRef),
    }
    queue.push_back(Node::P(source));
    while let Some(node) = queue.pop_front() {
        match node {
            Node::P(p) => {
                let mut succs: Vec<TransRef> = net.places()[p].outputs.iter().copied().collect();
                succs.sort_by_key(|&t| trans_sort_key(net, t));
                for t in succs {
                    if seen_trans.insert(t) {
                        if matches!(t, TransRef::Silent(i) if true) {
                            if let TransRef::Silent(i) = t {
                                order.push(BfsItem::Tau(i));
                            }
                        }
                        queue.push_back(Node::T(t));
                    }
                }
            }
            Node::T(t) => {
                let mut succs: Vec<PlaceId> = net.trans_output_places(t).into_iter().collect();
                succs.sort_by_key(|&p| place_sort_key(net, p));
                for p in succs {
                    if seen_places.insert(p) {
                        if p != sink {
                            order.push(BfsItem::Place(p));
                        }
                        queue.push_back(Node::P(p));
                    }
                }
            }
        }
    }
    if seen_places.len() != net.num_places()
        || seen_trans.len() != net.num_visible() + net.num_taus()
    {
        return Err(Error::InvalidNet(
            "net is not connected from the source".into(),
        ));
    }
    Ok(order)
}

/// Prepares an instance: samples the log, enumerates candidates, maps the
/// breadth-first targets onto them (injecting missing ones), and builds the
/// discovery graph. Returns None when a target cannot be represented (an
/// activity truncated out of the sampled log, say); callers count skips.
pub fn prepare_instance(
    log: &EventLog,
    net: &PetriNet,
    cfg: &TrainConfig,
) -> Result<Option<TrainingInstance>> {
    let truncated = eventlog::truncate_alphabet(log, cfg.max_alphabet.saturating_sub(2))?;
    let sampled = eventlog::sample_variants(
        &truncated,
        cfg.sample_min,
        cfg.sample_max,
        cfg.candidate_budget,
        cfg.k_window,
        cfg.caps,
    )?;
    let alpha_index: BTreeMap<&str, usize> = sampled
        .alphabet()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let order = bfs_order(net)?;
    let rel = behavior::compute_relations(&sampled, cfg.k_window);
    let mut candidates = behavior::enumerate_candidates(&rel, cfg.caps);

    // Map each target place to a candidate, injecting when enumeration
    // missed it; identical visible projections get distinct entries.
    let project = |set: &BTreeSet<TransRef>| -> Option<BTreeSet<usize>> {
        let mut out = BTreeSet::new();
        for t in set {
            if let TransRef::Visible(i) = t {
                out.insert(*alpha_index.get(net.activities()[*i].as_str())?);
            }
        }
        Some(out)
    };
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    let mut place_to_cand: BTreeMap<PlaceId, usize> = BTreeMap::new();
    for item in &order {
        if let BfsItem::Place(p) = item {
            let place = &net.places()[*p];
            let (ins, outs) = match (project(&place.inputs), project(&place.outputs)) {
                (Some(i), Some(o)) => (i, o),
                _ => return Ok(None),
            };
            let ci = match candidates.position(&ins, &outs) {
                Some(ci) if !claimed.contains(&ci) => ci,
                _ => candidates.inject(ins, outs),
            };
            claimed.insert(ci);
            place_to_cand.insert(*p, ci);
        }
    }
    let taus = net.taus();
    let mut targets = Vec::with_capacity(order.len());
    for item in &order {
        match item {
            BfsItem::Place(p) => targets.push(TargetStep::Place(place_to_cand[p])),
            BfsItem::Tau(ti) => {
                let tau = &taus[*ti];
                let map = |set: &BTreeSet<PlaceId>| -> Option<BTreeSet<usize>> {
                    set.iter().map(|p| place_to_cand.get(p).copied()).collect()
                };
                let (Some(inputs), Some(outputs)) = (map(&tau.inputs), map(&tau.outputs)) else {
                    return Ok(None);
                };
                targets.push(TargetStep::Tau { inputs, outputs });
            }
        }
    }

    let injected = candidates.injected;
    let mut graph = discgraph::build_graph(&sampled, &candidates, cfg.max_alphabet)?;
    graph.init_features(&sampled.frequencies());
    Ok(Some(TrainingInstance {
        log: sampled,
        target_net: net.clone(),
        candidates,
        graph,
        targets,
        injected,
    }))
}

/// Runs one teacher-forced episode and returns the loss statistics plus
/// parameter gradients in canonical tensor order.
pub fn train_step(
    instance: &TrainingInstance,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(StepStats, Vec<Matrix>)> {
    let mut graph = instance.graph.clone();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let features = tape.leaf(graph.features_matrix());
    let msg = MessageGraph::new(graph.num_nodes(), graph.edges());
    let mut h = neural::propagate(&mut tape, features, &bound.pn1, &msg)?;

    let mut sel_terms = Vec::new();
    let mut stop_terms = Vec::new();
    let mut target_probs = Vec::new();
    let mut injected_taus = 0;
    let mut last_place: Option<usize> = None;

    for target in &instance.targets {
        let target_node = match target {
            TargetStep::Place(ci) => graph.place_nodes()[*ci],
            TargetStep::Tau { inputs, outputs } => {
                let x: BTreeSet<usize> =
                    inputs.iter().map(|&ci| graph.place_nodes()[ci]).collect();
                let y: BTreeSet<usize> =
                    outputs.iter().map(|&ci| graph.place_nodes()[ci]).collect();
                match graph.find_tau_node(&x, &y) {
                    Some(id) => id,
                    None => {
                        let (id, neighbors) = graph
                            .add_tau_node(&x, &y)
                            .expect("absent tau node is injectable");
                        injected_taus += 1;
                        let gathered = tape.gather_rows(h, &neighbors);
                        let row = tape.sum_rows(gathered);
                        h = tape.concat_rows(&[h, row])?;
                        id
                    }
                }
            }
        };
        let cands = graph.unselected_candidates();
        let pos = cands
            .iter()
            .position(|&c| c == target_node)
            .ok_or_else(|| Error::TargetNotSelectable(format!("node {target_node}")))?;
        let probs =
            neural::score_candidates(&mut tape, h, &graph.flag_column(), &cands, bound.scn)?;
        target_probs.push(tape.value(probs).data[pos]);
        let picked = tape.pick(probs, pos, 0);
        let lp = tape.log(picked);
        sel_terms.push(tape.neg(lp));

        graph.mark_selected(target_node)?;
        let p_add = neural::stop_probability(
            &mut tape,
            h,
            &graph.non_event_nodes(),
            bound.sn_a,
            bound.sn_g,
            bound.sn_d,
        )?;
        let lp_add = tape.log(p_add);
        stop_terms.push(tape.neg(lp_add));

        if graph.node(target_node).kind == NodeKind::Place {
            last_place = Some(target_node);
        }
        if let Some(anchor) = last_place {
            let added = graph.add_tau_candidates(cfg.tau_arity_cap, anchor);
            for (_, neighbors) in &added {
                let gathered = tape.gather_rows(h, neighbors);
                let row = tape.sum_rows(gathered);
                h = tape.concat_rows(&[h, row])?;
            }
        }
        let flags = tape.leaf(Matrix::column(graph.flag_column()));
        let flagged = tape.concat_cols(&[h, flags])?;
        let msg2 = MessageGraph::new(graph.num_nodes(), graph.edges());
        h = neural::propagate(&mut tape, flagged, &bound.pn2, &msg2)?;
    }

    let p_add = neural::stop_probability(
        &mut tape,
        h,
        &graph.non_event_nodes(),
        bound.sn_a,
        bound.sn_g,
        bound.sn_d,
    )?;
    let stay = tape.one_minus(p_add);
    let lp_stop = tape.log(stay);
    stop_terms.push(tape.neg(lp_stop));

    let selection_loss: f64 = sel_terms.iter().map(|&t| tape.scalar(t)).sum();
    let stop_loss: f64 = stop_terms.iter().map(|&t| tape.scalar(t)).sum();
    let mut total = match sel_terms.split_first() {
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
        None => tape.leaf(Matrix::from_vec(1, 1, vec![0.0])),
    };
    let mut stop_total = stop_terms[0];
    for &t in &stop_terms[1..] {
        stop_total = tape.add(stop_total, t)?;
    }
    let weighted = tape.scale(stop_total, cfg.lambda_stop);
    total = tape.add(total, weighted)?;
    let total_loss = tape.scalar(total);
    if !total_loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    tape.backward(total)?;
    let grads = bound.ids().iter().map(|&id| tape.grad(id).clone()).collect();
    Ok((
        StepStats {
            total_loss,
            selection_loss,
            stop_loss,
            target_probs,
            injected_taus,
        },
        grads,
    ))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive moment estimation with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Adam {
        let zeros: Vec<Matrix> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Matrix::zeros(t.rows, t.cols))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Matrix]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((target, grad), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..target.data.len() {
                let g = grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                target.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    pub fn to_json_value(&self, params: &ModelParams) -> serde_json::Value {
        let names: Vec<String> = params
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let pack = |mats: &[Matrix]| -> BTreeMap<String, Vec<f64>> {
            names
                .iter()
                .cloned()
                .zip(mats.iter().map(|m| m.data.clone()))
                .collect()
        };
        serde_json::json!({
            "lr": self.lr,
            "step": self.step,
            "m": pack(&self.m),
            "v": pack(&self.v),
        })
    }

    pub fn from_json_value(value: &serde_json::Value, params: &ModelParams) -> Result<Adam> {
        let mut adam = Adam::new(
            params,
            value["lr"]
                .as_f64()
                .ok_or_else(|| Error::InvalidConfig("optimizer state missing lr".into()))?,
        );
        adam.step = value["step"]
            .as_u64()
            .ok_or_else(|| Error::InvalidConfig("optimizer state missing step".into()))?;
        let names: Vec<String> = params
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (key, slot) in [("m", &mut adam.m), ("v", &mut adam.v)] {
            for (name, mat) in names.iter().zip(slot.iter_mut()) {
                let data: Vec<f64> = serde_json::from_value(value[key][name].clone())?;
                if data.len() != mat.data.len() {
                    return Err(Error::Shape(format!("optimizer tensor {name} size")));
                }
                mat.data = data;
            }
        }
        Ok(adam)
    }
}

// ---------------------------------------------------------------------------
// Fit loop
// ---------------------------------------------------------------------------

pub struct FitOutcome {
    pub params: ModelParams,
    pub best_params: ModelParams,
    pub history: Vec<LossReport>,
    pub optimizer: Adam,
    pub skipped: usize,
    pub epochs_run: usize,
}

/// Micro-averaged place-selection precision/recall of greedy decoding
/// against the target nets.
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub mean_false_positives: f64,
}

fn target_place_projections(
    net: &PetriNet,
    alpha_index: &BTreeMap<&str, usize>,
) -> BTreeSet<(BTreeSet<usize>, BTreeSet<usize>)> {
    let source = net.source();
    let sink = net.sink();
    let mut out = BTreeSet::new();
    for (pi, place) in net.places().iter().enumerate() {
        if Some(pi) == source || Some(pi) == sink {
            continue;
        }
        let project = |set: &BTreeSet<TransRef>| -> BTreeSet<usize> {
            set.iter()
                .filter_map(|t| match t {
                    TransRef::Visible(i) => {
                        alpha_index.get(net.activities()[*i].as_str()).copied()
                    }
                    TransRef::Silent(_) => None,
                })
                .collect()
        };
        out.insert((project(&place.inputs), project(&place.outputs)));
    }
    out
}

/// Greedy (beam 1) replay of prepared instances, comparing selected places
/// against the target net's places.
pub fn evaluate_selection(
    instances: &[&TrainingInstance],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<SelectionMetrics> {
    let infer_cfg = cfg.infer_config(1);
    let mut tp = 0usize;
    let mut selected_total = 0usize;
    let mut target_total = 0usize;
    let mut fp_sum = 0usize;
    for instance in instances {
        let alpha_index: BTreeMap<&str, usize> = instance
            .log
            .alphabet()
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let targets = target_place_projections(&instance.target_net, &alpha_index);
        target_total += targets.len();
        let outcome =
            inference::decode(&instance.log, &instance.candidates, params, &infer_cfg)?;
        let net = match outcome.nets.first() {
            Some(d) => &d.net,
            None => match &outcome.best_partial {
                Some(net) => net,
                None => continue,
            },
        };
        let source = net.source();
        let sink = net.sink();
        let mut seen: BTreeSet<(BTreeSet<usize>, BTreeSet<usize>)> = BTreeSet::new();
        for (pi, place) in net.places().iter().enumerate() {
            if Some(pi) == source || Some(pi) == sink {
                continue;
            }
            let project = |set: &BTreeSet<TransRef>| -> BTreeSet<usize> {
                set.iter()
                    .filter_map(|t| match t {
                        TransRef::Visible(i) => Some(*i),
                        TransRef::Silent(_) => None,
                    })
                    .collect()
            };
            let key = (project(&place.inputs), project(&place.outputs));
            selected_total += 1;
            if targets.contains(&key) {
                if seen.insert(key) {
                    tp += 1;
                }
            } else {
                fp_sum += 1;
            }
        }
    }
    Ok(SelectionMetrics {
        precision: if selected_total > 0 {
            tp as f64 / selected_total as f64
        } else {
            0.0
        },
        recall: if target_total > 0 {
            tp as f64 / target_total as f64
        } else {
            0.0
        },
        mean_false_positives: if instances.is_empty() {
            0.0
        } else {
            fp_sum as f64 / instances.len() as f64
        },
    })
}

fn teacher_forced_loss(
    instances: &[&TrainingInstance],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for instance in instances {
        let (stats, _) = train_step(instance, params, cfg)?;
        total += stats.total_loss;
    }
    Ok(total / instances.len() as f64)
}

/// Trains on the dataset: seeded shuffling, one optimizer update per
/// instance, per-epoch reports, and the best checkpoint by held-out loss.
pub fn fit(
    dataset: &[(EventLog, PetriNet)],
    cfg: &TrainConfig,
    resume: Option<(ModelParams, Adam, usize)>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    let mut instances = Vec::new();
    let mut skipped = 0usize;
    for (log, net) in dataset {
        match prepare_instance(log, net, cfg)? {
            Some(instance) => instances.push(instance),
            None => skipped += 1,
        }
    }
    if instances.is_empty() {
        return Err(Error::InvalidConfig(
            "every instance was skipped during preparation".into(),
        ));
    }
    let mut split_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..instances.len()).collect();
    indices.shuffle(&mut split_rng);
    let train_count = ((instances.len() as f64) * cfg.split).ceil() as usize;
    let train_count = train_count.clamp(1, instances.len());
    let train_idx: Vec<usize> = indices[..train_count].to_vec();
    let holdout_idx: Vec<usize> = indices[train_count..].to_vec();

    let (mut params, mut adam, start_epoch) = match resume {
        Some((p, a, e)) => (p, a, e),
        None => {
            let p = ModelParams::init(ModelShape::default(), cfg.seed);
            let a = Adam::new(&p, cfg.learning_rate);
            (p, a, 0)
        }
    };
    let mut best_params = params.clone();
    let mut best_holdout = f64::INFINITY;
    let mut history = Vec::new();

    for epoch in start_epoch..cfg.epochs {
        let mut order = train_idx.clone();
        let mut epoch_rng =
            ChaCha12Rng::seed_from_u64(crate::synthgen::instance_seed(cfg.seed, epoch + 1));
        order.shuffle(&mut epoch_rng);

        let mut sel_sum = 0.0;
        let mut stop_sum = 0.0;
        let mut prob_sum = 0.0;
        let mut prob_count = 0usize;
        for &i in &order {
            let (stats, grads) = train_step(&instances[i], &params, cfg)?;
            adam.update(&mut params, &grads);
            sel_sum += stats.selection_loss;
            stop_sum += stats.stop_loss;
            prob_sum += stats.target_probs.iter().sum::<f64>();
            prob_count += stats.target_probs.len();
        }

        let replay: Vec<&TrainingInstance> = train_idx
            .iter()
            .take(cfg.replay_sample)
            .map(|&i| &instances[i])
            .collect();
        let metrics = evaluate_selection(&replay, &params, cfg)?;
        let holdout: Vec<&TrainingInstance> =
            holdout_idx.iter().map(|&i| &instances[i]).collect();
        let holdout_loss = teacher_forced_loss(&holdout, &params, cfg)?;
        if !holdout.is_empty() && holdout_loss < best_holdout {
            best_holdout = holdout_loss;
            best_params = params.clone();
        }
        let report = LossReport {
            epoch,
            selection_loss: sel_sum / order.len().max(1) as f64,
            stop_loss: stop_sum / order.len().max(1) as f64,
            mean_target_prob: if prob_count > 0 {
                prob_sum / prob_count as f64
            } else {
                0.0
            },
            replay_precision: metrics.precision,
            replay_recall: metrics.recall,
            replay_false_positives: metrics.mean_false_positives,
            holdout_loss,
        };
        if cfg.verbose {
            println!(
                "epoch {:>3}  selection {:.4}  stop {:.4}  p(target) {:.3}  replay P/R {:.2}/{:.2}  holdout {:.4}",
                report.epoch,
                report.selection_loss,
                report.stop_loss,
                report.mean_target_prob,
                report.replay_precision,
                report.replay_recall,
                report.holdout_loss
            );
        }
        history.push(report);
    }
    if holdout_idx.is_empty() {
        best_params = params.clone();
    }
    Ok(FitOutcome {
        params,
        best_params,
        history,
        optimizer: adam,
        skipped,
        epochs_run: cfg.epochs.saturating_sub(start_epoch),
    })
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

/// Writes params + optimizer + epoch + config as one JSON checkpoint.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    adam: &Adam,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let value = serde_json::json!({
        "params": params.to_json_value(),
        "optimizer": adam.to_json_value(params),
        "epoch": epoch,
        "config": serde_json::to_value(cfg)?,
    });
    std::fs::write(path, serde_json::to_string(&value)?)?;
    Ok(())
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
    pub epoch: usize,
    pub config: Option<TrainConfig>,
}

/// Reads a checkpoint written by [`save_checkpoint`] or a bare params file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if value.get("params").is_none() {
        return Ok(Checkpoint {
            params: ModelParams::from_json_value(&value)?,
            optimizer: None,
            epoch: 0,
            config: None,
        });
    }
    let params = ModelParams::from_json_value(&value["params"])?;
    let optimizer = if value.get("optimizer").is_some_and(|v| !v.is_null()) {
        Some(Adam::from_json_value(&value["optimizer"], &params)?)
    } else {
        None
    };
    let epoch = value["epoch"].as_u64().unwrap_or(0) as usize;
    let config = value
        .get("config")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    Ok(Checkpoint {
        params,
        optimizer,
        epoch,
        config,
    })
}
