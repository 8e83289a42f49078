//! Discovery of a net from an unseen log: sequential candidate selection
//! with beam search, structural pruning and the stop override.
//!
//! Each beam state owns its graph copy, embedding matrix and partial net.
//! Candidates that would break the partial net's coverability are skipped
//! in favor of the next most probable one; a stop request is overridden
//! while some transition still lacks an input or output place.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::behavior::{self, ArityCaps, CandidateSet};
use crate::discgraph::{self, DiscoveryGraph, NodeKind};
use crate::error::{Error, Result};
use crate::eventlog::{self, EventLog};
use crate::neural::tape::{Matrix, Tape};
use crate::neural::{self, MessageGraph, ModelParams};
use crate::petrinet::{PetriNet, PlaceId, SoundnessVerdict, TransRef};

/// Inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    /// Initial beam width.
    pub beam: usize,
    /// Beam width decay per selected place.
    pub decay: f64,
    /// Stop when the add-probability falls below this threshold.
    pub stop_threshold: f64,
    pub max_steps: usize,
    pub tau_arity_cap: usize,
    pub sample_min: usize,
    pub sample_max: usize,
    pub candidate_budget: usize,
    pub k_window: usize,
    pub caps: ArityCaps,
    pub max_alphabet: usize,
    /// Marking cap for the final soundness verdicts.
    pub state_cap: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            beam: 10,
            decay: 0.9,
            stop_threshold: 0.5,
            max_steps: 64,
            tau_arity_cap: 1,
            sample_min: 8,
            sample_max: 50,
            candidate_budget: 2000,
            k_window: 2,
            caps: ArityCaps::default(),
            max_alphabet: 20,
            state_cap: crate::petrinet::DEFAULT_STATE_CAP,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam < 1 {
            return Err(Error::InvalidConfig("beam width must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig("decay must be in (0, 1]".into()));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::InvalidConfig("stop threshold must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Beam width after `step` selections.
    pub fn width_at(&self, step: usize) -> usize {
        ((self.beam as f64) * self.decay.powi(step as i32)).floor().max(1.0) as usize
    }
}

/// One state of the beam: partial net, graph with selection flags, current
/// embeddings and the accumulated joint log-probability.
#[derive(Clone)]
pub struct BeamState {
    graph: DiscoveryGraph,
    embeddings: Matrix,
    net: PetriNet,
    /// Net place id per candidate index, filled on acceptance.
    net_place_of: Vec<Option<PlaceId>>,
    /// Most recently accepted place node (tau generation anchor).
    last_place: Option<usize>,
    pub joint_logprob: f64,
    pub steps: usize,
    pub finished: bool,
    seq: u64,
}

/// A finished discovery, ranked by joint log-probability.
pub struct DiscoveredNet {
    pub net: PetriNet,
    pub log_prob: f64,
    pub verdict: SoundnessVerdict,
}

/// Outcome of a discovery run; `nets` empty means failure, with the best
/// partial net attached for diagnostics.
pub struct DiscoveryOutcome {
    pub nets: Vec<DiscoveredNet>,
    pub best_partial: Option<PetriNet>,
    /// The sampled sub-log actually used to build the graph.
    pub sampled_log: EventLog,
}

/// Extends a partial net with an accepted candidate: a place for place
/// nodes (returning its id), a silent transition for tau nodes.
fn add_to_net(
    graph: &DiscoveryGraph,
    net_place_of: &[Option<PlaceId>],
    net: &mut PetriNet,
    candidates: &CandidateSet,
    node: usize,
) -> Option<PlaceId> {
    let info = graph.node(node);
    match info.kind {
        NodeKind::Place => {
            let cand = &candidates.candidates[info.candidate.unwrap()];
            let inputs: BTreeSet<TransRef> =
                cand.inputs.iter().map(|&a| TransRef::Visible(a)).collect();
            let outputs: BTreeSet<TransRef> =
                cand.outputs.iter().map(|&a| TransRef::Visible(a)).collect();
            Some(net.add_place(inputs, outputs))
        }
        NodeKind::Tau => {
            let (x, y) = info.tau.as_ref().unwrap();
            let map = |nodes: &BTreeSet<usize>| -> BTreeSet<PlaceId> {
                nodes
                    .iter()
                    .map(|&pn| {
                        let ci = graph.node(pn).candidate.unwrap();
                        net_place_of[ci].expect("tau neighbors are selected places")
                    })
                    .collect()
            };
            net.add_tau(&map(x), &map(y));
            None
        }
        _ => unreachable!("only candidates are accepted"),
    }
}

fn empty_partial_net(log: &EventLog) -> PetriNet {
    let mut net = PetriNet::new(log.alphabet().to_vec());
    net.add_place(
        BTreeSet::new(),
        BTreeSet::from([TransRef::Visible(eventlog::START)]),
    );
    net.add_place(
        BTreeSet::from([TransRef::Visible(eventlog::END)]),
        BTreeSet::new(),
    );
    net
}

/// Every visible transition has at least one input and one output place.
fn net_connected(net: &PetriNet) -> bool {
    (0..net.num_visible()).all(|a| {
        let t = TransRef::Visible(a);
        let mut has_in = false;
        let mut has_out = false;
        for p in net.places() {
            has_in |= p.outputs.contains(&t);
            has_out |= p.inputs.contains(&t);
        }
        has_in && has_out
    })
}

impl BeamState {
    fn initial(graph: DiscoveryGraph, embeddings: Matrix, log: &EventLog) -> BeamState {
        let n_candidates = graph.place_nodes().len();
        BeamState {
            graph,
            embeddings,
            net: empty_partial_net(log),
            net_place_of: vec![None; n_candidates],
            last_place: None,
            joint_logprob: 0.0,
            steps: 0,
            finished: false,
            seq: 0,
        }
    }

    /// The net that would result from also accepting this candidate node.
    fn net_with(&self, candidates: &CandidateSet, node: usize) -> PetriNet {
        let mut net = self.net.clone();
        add_to_net(&self.graph, &self.net_place_of, &mut net, candidates, node);
        net
    }

    /// SCN distribution over unselected candidates: (node, probability),
    /// ranked by descending probability with node-id tie-break.
    fn ranked_candidates(&self, params: &ModelParams) -> Result<Vec<(usize, f64)>> {
        let cands = self.graph.unselected_candidates();
        if cands.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let h = tape.leaf(self.embeddings.clone());
        let scn = tape.leaf(params.scn.clone());
        let probs = neural::score_candidates(
            &mut tape,
            h,
            &self.graph.flag_column(),
            &cands,
            scn,
        )?;
        let values = tape.value(probs).data.clone();
        let mut ranked: Vec<(usize, f64)> = cands.into_iter().zip(values).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        Ok(ranked)
    }

    fn stop_probability(&self, params: &ModelParams) -> Result<f64> {
        let mut tape = Tape::new();
        let h = tape.leaf(self.embeddings.clone());
        let sn_a = tape.leaf(params.sn_a.clone());
        let sn_g = tape.leaf(params.sn_g.clone());
        let sn_d = tape.leaf(params.sn_d.clone());
        let p = neural::stop_probability(
            &mut tape,
            h,
            &self.graph.non_event_nodes(),
            sn_a,
            sn_g,
            sn_d,
        )?;
        Ok(tape.scalar(p))
    }

    /// Accepts a candidate: flags it, extends the net, prices the taken stop
    /// decision, and on continuation adds tau candidates and re-propagates.
    fn accept(
        &mut self,
        candidates: &CandidateSet,
        node: usize,
        log_prob: f64,
        p_add: f64,
        params: &ModelParams,
        cfg: &InferConfig,
        seq: u64,
    ) -> Result<()> {
        self.graph.mark_selected(node)?;
        if let Some(place_id) =
            add_to_net(&self.graph, &self.net_place_of, &mut self.net, candidates, node)
        {
            let ci = self.graph.node(node).candidate.unwrap();
            self.net_place_of[ci] = Some(place_id);
            self.last_place = Some(node);
        }
        self.steps += 1;
        self.seq = seq;
        let stop_now = p_add < cfg.stop_threshold && net_connected(&self.net);
        if stop_now {
            self.joint_logprob += log_prob + (1.0 - p_add).ln();
            self.finished = true;
            return Ok(());
        }
        self.joint_logprob += log_prob + p_add.ln();
        // Tau candidates anchored at the most recent place, then PN2.
        if let Some(anchor) = self.last_place {
            let added = self.graph.add_tau_candidates(cfg.tau_arity_cap, anchor);
            if !added.is_empty() {
                let cols = self.embeddings.cols;
                for (_, neighbors) in &added {
                    let mut row = vec![0.0; cols];
                    for &nb in neighbors {
                        for (acc, v) in row.iter_mut().zip(self.embeddings.row(nb)) {
                            *acc += v;
                        }
                    }
                    self.embeddings.data.extend_from_slice(&row);
                    self.embeddings.rows += 1;
                }
            }
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.leaf(self.embeddings.clone());
        let flags = tape.leaf(Matrix::column(self.graph.flag_column()));
        let flagged = tape.concat_cols(&[h, flags])?;
        let msg = MessageGraph::new(self.graph.num_nodes(), self.graph.edges());
        let out = neural::propagate(&mut tape, flagged, &bound.pn2, &msg)?;
        self.embeddings = tape.value(out).clone();
        Ok(())
    }
}

/// Runs the beam loop over a prepared graph and candidate set.
pub fn decode(
    log: &EventLog,
    candidates: &CandidateSet,
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<DiscoveryOutcome> {
    cfg.validate()?;
    let mut graph = discgraph::build_graph(log, candidates, cfg.max_alphabet)?;
    graph.init_features(&log.frequencies());
    // PN1 runs once.
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let features = tape.leaf(graph.features_matrix());
    let msg = MessageGraph::new(graph.num_nodes(), graph.edges());
    let h = neural::propagate(&mut tape, features, &bound.pn1, &msg)?;
    let embeddings = tape.value(h).clone();
    drop(tape);

    let mut frontier = vec![BeamState::initial(graph, embeddings, log)];
    let mut finished: Vec<BeamState> = Vec::new();
    let mut best_partial: Option<(f64, PetriNet)> = None;
    let mut seq: u64 = 1;

    for step in 0..cfg.max_steps {
        if frontier.is_empty() {
            break;
        }
        let width = cfg.width_at(step);
        let mut expansions: Vec<(usize, usize, f64, f64)> = Vec::new(); // (parent, node, logp, p_add)
        for (si, state) in frontier.iter().enumerate() {
            let ranked = state.ranked_candidates(params)?;
            if ranked.is_empty() {
                continue;
            }
            let p_add = state.stop_probability(params)?;
            let mut taken = 0;
            for (node, prob) in ranked {
                if taken == width {
                    break;
                }
                // Coverability filter: reject and fall through to the next
                // most probable candidate.
                if !state
                    .net_with(candidates, node)
                    .is_partial_s_coverable()
                {
                    continue;
                }
                expansions.push((si, node, prob.max(f64::MIN_POSITIVE).ln(), p_add));
                taken += 1;
            }
        }
        if expansions.is_empty() {
            break;
        }
        // Joint score after the step, including the priced stop decision.
        let scored: Vec<(f64, usize)> = expansions
            .iter()
            .enumerate()
            .map(|(i, &(si, node, logp, p_add))| {
                let state = &frontier[si];
                let child_net = state.net_with(candidates, node);
                let stops = p_add < cfg.stop_threshold && net_connected(&child_net);
                let stop_term = if stops { (1.0 - p_add).ln() } else { p_add.ln() };
                (state.joint_logprob + logp + stop_term, i)
            })
            .collect();
        let mut order = scored;
        order.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| expansions[a.1].0.cmp(&expansions[b.1].0))
                .then_with(|| expansions[a.1].1.cmp(&expansions[b.1].1))
        });
        let next_width = cfg.width_at(step + 1);
        let mut next_frontier = Vec::new();
        for &(_, ei) in order.iter() {
            if next_frontier.len() >= next_width {
                break;
            }
            let (si, node, logp, p_add) = expansions[ei];
            let mut child = frontier[si].clone();
            child.accept(candidates, node, logp, p_add, params, cfg, seq)?;
            seq += 1;
            if child.finished {
                finished.push(child);
            } else {
                next_frontier.push(child);
            }
        }
        for state in &next_frontier {
            if best_partial
                .as_ref()
                .is_none_or(|(score, _)| state.joint_logprob > *score)
            {
                best_partial = Some((state.joint_logprob, state.net.clone()));
            }
        }
        frontier = next_frontier;
    }

    finished.sort_by(|a, b| {
        b.joint_logprob
            .partial_cmp(&a.joint_logprob)
            .unwrap()
            .then_with(|| a.net.num_places().cmp(&b.net.num_places()))
            .then_with(|| crate::petrinet::to_json(&a.net).cmp(&crate::petrinet::to_json(&b.net)))
    });
    finished.truncate(cfg.beam);
    let nets = finished
        .into_iter()
        .map(|state| -> Result<DiscoveredNet> {
            let verdict = state.net.check_soundness(cfg.state_cap)?;
            Ok(DiscoveredNet {
                net: state.net,
                log_prob: state.joint_logprob,
                verdict,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_partial = if nets.is_empty() {
        best_partial.map(|(_, net)| net)
    } else {
        None
    };
    Ok(DiscoveryOutcome {
        nets,
        best_partial,
        sampled_log: log.clone(),
    })
}

/// Full discovery pipeline: alphabet truncation, variant sampling,
/// candidate enumeration, graph construction and the beam loop.
pub fn discover(
    log: &EventLog,
    params: &ModelParams,
    cfg: &InferConfig,
) -> Result<DiscoveryOutcome> {
    cfg.validate()?;
    let truncated = eventlog::truncate_alphabet(log, cfg.max_alphabet.saturating_sub(2))?;
    let sampled = eventlog::sample_variants(
        &truncated,
        cfg.sample_min,
        cfg.sample_max,
        cfg.candidate_budget,
        cfg.k_window,
        cfg.caps,
    )?;
    let rel = behavior::compute_relations(&sampled, cfg.k_window);
    let candidates = behavior::enumerate_candidates(&rel, cfg.caps);
    let mut outcome = decode(&sampled, &candidates, params, cfg)?;
    outcome.sampled_log = sampled;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{parse_log, LogFormat};
    use crate::neural::ModelShape;

    fn tiny_params() -> ModelParams {
        ModelParams::init(ModelShape::default(), 21)
    }

    fn chain_log() -> EventLog {
        parse_log("a,b\na,b\n", LogFormat::DelimitedText).unwrap()
    }

    #[test]
    fn zero_max_steps_fails_with_partial() {
        let cfg = InferConfig {
            max_steps: 0,
            ..InferConfig::default()
        };
        let out = discover(&chain_log(), &tiny_params(), &cfg).unwrap();
        assert!(out.nets.is_empty());
    }

    #[test]
    fn discovery_is_deterministic() {
        let cfg = InferConfig {
            beam: 3,
            max_steps: 12,
            ..InferConfig::default()
        };
        let params = tiny_params();
        let log = chain_log();
        let a = discover(&log, &params, &cfg).unwrap();
        let b = discover(&log, &params, &cfg).unwrap();
        assert_eq!(a.nets.len(), b.nets.len());
        for (x, y) in a.nets.iter().zip(&b.nets) {
            assert_eq!(crate::petrinet::to_json(&x.net), crate::petrinet::to_json(&y.net));
            assert_eq!(x.log_prob, y.log_prob);
        }
    }

    #[test]
    fn finished_nets_are_connected_workflow_structures() {
        let cfg = InferConfig {
            beam: 2,
            max_steps: 16,
            ..InferConfig::default()
        };
        let out = discover(&chain_log(), &tiny_params(), &cfg).unwrap();
        for d in &out.nets {
            assert!(net_connected(&d.net), "every transition must be wired");
        }
    }

    #[test]
    fn partial_states_stay_coverable() {
        // The invariant is enforced by construction; spot-check that the
        // final nets still pass the partial check.
        let cfg = InferConfig {
            beam: 2,
            max_steps: 16,
            ..InferConfig::default()
        };
        let out = discover(&chain_log(), &tiny_params(), &cfg).unwrap();
        for d in &out.nets {
            assert!(d.net.is_partial_s_coverable());
        }
    }

    #[test]
    fn beam_one_runs() {
        let cfg = InferConfig {
            beam: 1,
            max_steps: 16,
            ..InferConfig::default()
        };
        let out = discover(&chain_log(), &tiny_params(), &cfg).unwrap();
        // Greedy either finishes or fails; both are acceptable with random
        // weights, but the call must be deterministic and well-formed.
        if let Some(first) = out.nets.first() {
            assert!(first.log_prob <= 0.0);
        }
    }

    #[test]
    fn width_schedule_decays_to_one() {
        let cfg = InferConfig {
            beam: 10,
            decay: 0.9,
            ..InferConfig::default()
        };
        assert_eq!(cfg.width_at(0), 10);
        assert!(cfg.width_at(10) < 10);
        assert_eq!(cfg.width_at(60), 1);
    }
}
