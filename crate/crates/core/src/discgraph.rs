//! The discovery graph: event-trace chains, one transition node per
//! activity, one place node per candidate, and silent-transition candidate
//! nodes added during generation.
//!
//! All structural arcs except event-to-transition links are present in both
//! directions with complementary direction tags; every node carries a
//! self-loop so it retains its own state during aggregation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::behavior::CandidateSet;
use crate::error::{Error, Result};
use crate::eventlog::{ActivityFrequency, EventLog};
use crate::neural::tape::Matrix;

/// Direction tag on a message edge: `Forward` follows the structural arc,
/// `Reverse` is its mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Event,
    Transition,
    Place,
    Tau,
}

/// Node metadata; which fields apply depends on the kind.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub kind: NodeKind,
    /// Activity index for event and transition nodes.
    pub activity: Option<usize>,
    /// (variant, position) for interior event nodes.
    pub trace_pos: Option<(usize, usize)>,
    /// Candidate index for place nodes.
    pub candidate: Option<usize>,
    /// (input place nodes, output place nodes) for tau nodes.
    pub tau: Option<(BTreeSet<usize>, BTreeSet<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryGraph {
    pub max_alphabet: usize,
    pub feature_width: usize,
    nodes: Vec<NodeInfo>,
    edges: Vec<(usize, usize, Direction)>,
    features: Vec<f64>,
    selected: Vec<bool>,
    transition_nodes: Vec<usize>,
    place_nodes: Vec<usize>,
    tau_nodes: Vec<usize>,
}

impl DiscoveryGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &NodeInfo {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[(usize, usize, Direction)] {
        &self.edges
    }

    /// Transition node id for an activity index.
    pub fn transition_node(&self, activity: usize) -> usize {
        self.transition_nodes[activity]
    }

    pub fn place_nodes(&self) -> &[usize] {
        &self.place_nodes
    }

    pub fn tau_nodes(&self) -> &[usize] {
        &self.tau_nodes
    }

    pub fn is_selected(&self, id: usize) -> bool {
        self.selected[id]
    }

    /// All place and tau nodes not yet selected, ascending.
    pub fn unselected_candidates(&self) -> Vec<usize> {
        self.place_nodes
            .iter()
            .chain(self.tau_nodes.iter())
            .copied()
            .filter(|&id| !self.selected[id])
            .collect()
    }

    /// Selected place nodes in selection-independent (ascending id) order.
    pub fn selected_places(&self) -> Vec<usize> {
        self.place_nodes
            .iter()
            .copied()
            .filter(|&id| self.selected[id])
            .collect()
    }

    /// All non-event nodes (stop-head input), ascending.
    pub fn non_event_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&id| self.nodes[id].kind != NodeKind::Event)
            .collect()
    }

    /// Selection flags as a column, one entry per node.
    pub fn flag_column(&self) -> Vec<f64> {
        self.selected
            .iter()
            .map(|&s| if s { 1.0 } else { 0.0 })
            .collect()
    }

    /// Initial feature matrix (one row per node).
    pub fn features_matrix(&self) -> Matrix {
        Matrix::from_vec(self.nodes.len(), self.feature_width, self.features.clone())
    }

    fn push_node(&mut self, info: NodeInfo) -> usize {
        let id = self.nodes.len();
        self.nodes.push(info);
        self.selected.push(false);
        self.features
            .extend(std::iter::repeat(0.0).take(self.feature_width));
        self.edges.push((id, id, Direction::Forward));
        id
    }

    fn push_arc(&mut self, src: usize, dst: usize, mirrored: bool) {
        self.edges.push((src, dst, Direction::Forward));
        if mirrored {
            self.edges.push((dst, src, Direction::Reverse));
        }
    }

    /// Marks a place or tau node as selected and raises its flag feature.
    pub fn mark_selected(&mut self, id: usize) -> Result<()> {
        match self.nodes[id].kind {
            NodeKind::Place | NodeKind::Tau => {}
            _ => return Err(Error::TargetNotSelectable(format!("node {id} is not a candidate"))),
        }
        if self.selected[id] {
            return Err(Error::AlreadySelected(id));
        }
        self.selected[id] = true;
        self.features[id * self.feature_width + self.feature_width - 1] = 1.0;
        Ok(())
    }

    /// Adds tau candidate nodes between already selected places: all
    /// (X, Y) with X, Y disjoint nonempty subsets of the selected places,
    /// sizes up to `arity_cap`, at least one side containing `anchor`.
    /// Returns (node id, neighbor place nodes) per added node.
    pub fn add_tau_candidates(
        &mut self,
        arity_cap: usize,
        anchor: usize,
    ) -> Vec<(usize, Vec<usize>)> {
        let selected = self.selected_places();
        if selected.len() < 2 || !selected.contains(&anchor) {
            return Vec::new();
        }
        let subsets = subsets_up_to(&selected, arity_cap);
        let mut added = Vec::new();
        for x in &subsets {
            for y in &subsets {
                if x.iter().any(|p| y.contains(p)) {
                    continue;
                }
                if !x.contains(&anchor) && !y.contains(&anchor) {
                    continue;
                }
                let key = (
                    x.iter().copied().collect::<BTreeSet<_>>(),
                    y.iter().copied().collect::<BTreeSet<_>>(),
                );
                if let Some(entry) = self.add_tau_node(&key.0, &key.1) {
                    added.push(entry);
                }
            }
        }
        added
    }

    /// Finds the tau node with exactly these input/output place nodes.
    pub fn find_tau_node(
        &self,
        inputs: &BTreeSet<usize>,
        outputs: &BTreeSet<usize>,
    ) -> Option<usize> {
        self.tau_nodes
            .iter()
            .copied()
            .find(|&id| match &self.nodes[id].tau {
                Some((x, y)) => x == inputs && y == outputs,
                None => false,
            })
    }

    /// Adds one specific tau candidate node regardless of the anchored
    /// generation rule (teacher forcing needs targets to be selectable).
    /// Returns the node and its neighbor places, or None if already present.
    pub fn add_tau_node(
        &mut self,
        inputs: &BTreeSet<usize>,
        outputs: &BTreeSet<usize>,
    ) -> Option<(usize, Vec<usize>)> {
        if self.find_tau_node(inputs, outputs).is_some() {
            return None;
        }
        let id = self.push_node(NodeInfo {
            kind: NodeKind::Tau,
            activity: None,
            trace_pos: None,
            candidate: None,
            tau: Some((inputs.clone(), outputs.clone())),
        });
        for &p in inputs {
            self.push_arc(p, id, true);
        }
        for &q in outputs {
            self.push_arc(id, q, true);
        }
        self.tau_nodes.push(id);
        let mut neighbors: Vec<usize> = inputs.iter().chain(outputs.iter()).copied().collect();
        neighbors.sort_unstable();
        Some((id, neighbors))
    }

    /// One-hot + frequency + selection-flag features for event and
    /// transition nodes; zero vectors for places and taus.
    pub fn init_features(&mut self, freqs: &ActivityFrequency) {
        let width = self.feature_width;
        for id in 0..self.nodes.len() {
            let row = &mut self.features[id * width..(id + 1) * width];
            row.fill(0.0);
            if let Some(a) = self.nodes[id].activity {
                row[a] = 1.0;
                row[self.max_alphabet] = freqs.normalized[a];
            }
            if self.selected[id] {
                row[width - 1] = 1.0;
            }
        }
    }

    /// Debug DOT dump, node kinds color-coded.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph discovery {\n");
        for (id, node) in self.nodes.iter().enumerate() {
            let (color, label) = match node.kind {
                NodeKind::Event => ("lightblue", format!("e{id}:{:?}", node.activity.unwrap())),
                NodeKind::Transition => ("lightgreen", format!("t{:?}", node.activity.unwrap())),
                NodeKind::Place => ("orange", format!("p{id}")),
                NodeKind::Tau => ("gray", format!("tau{id}")),
            };
            let _ = writeln!(
                out,
                "  n{id} [style=filled, fillcolor={color}, label=\"{label}\"];"
            );
        }
        for (src, dst, dir) in &self.edges {
            if src == dst {
                continue;
            }
            if *dir == Direction::Forward {
                let _ = writeln!(out, "  n{src} -> n{dst};");
            }
        }
        out.push_str("}\n");
        out
    }
}

fn subsets_up_to(items: &[usize], cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    fn recurse(items: &[usize], from: usize, cap: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !stack.is_empty() {
            out.push(stack.clone());
        }
        if stack.len() == cap {
            return;
        }
        for i in from..items.len() {
            stack.push(items[i]);
            recurse(items, i + 1, cap, stack, out);
            stack.pop();
        }
    }
    recurse(items, 0, cap, &mut stack, &mut out);
    out
}

/// Builds the discovery graph from a log and its candidate set: shared
/// start/end event nodes, a chain of event nodes per variant, a transition
/// node per activity, a place node per candidate, plus links and self-loops.
pub fn build_graph(
    log: &EventLog,
    candidates: &CandidateSet,
    max_alphabet: usize,
) -> Result<DiscoveryGraph> {
    let n_activities = log.alphabet().len();
    if n_activities > max_alphabet {
        return Err(Error::AlphabetOverflow {
            found: n_activities,
            max: max_alphabet,
        });
    }
    let mut g = DiscoveryGraph {
        max_alphabet,
        feature_width: max_alphabet + 2,
        nodes: Vec::new(),
        edges: Vec::new(),
        features: Vec::new(),
        selected: Vec::new(),
        transition_nodes: Vec::new(),
        place_nodes: Vec::new(),
        tau_nodes: Vec::new(),
    };
    let event = |activity: usize, pos: Option<(usize, usize)>| NodeInfo {
        kind: NodeKind::Event,
        activity: Some(activity),
        trace_pos: pos,
        candidate: None,
        tau: None,
    };
    let start_node = g.push_node(event(crate::eventlog::START, None));
    let end_node = g.push_node(event(crate::eventlog::END, None));

    let mut event_nodes: Vec<usize> = vec![start_node, end_node];
    let mut chains: Vec<Vec<usize>> = Vec::new();
    for (vi, (trace, _)) in log.variants().iter().enumerate() {
        let mut chain = vec![start_node];
        for (pos, &a) in trace.iter().enumerate().skip(1).take(trace.len() - 2) {
            let id = g.push_node(event(a, Some((vi, pos))));
            event_nodes.push(id);
            chain.push(id);
        }
        chain.push(end_node);
        chains.push(chain);
    }

    for a in 0..n_activities {
        let id = g.push_node(NodeInfo {
            kind: NodeKind::Transition,
            activity: Some(a),
            trace_pos: None,
            candidate: None,
            tau: None,
        });
        g.transition_nodes.push(id);
    }

    for (ci, cand) in candidates.candidates.iter().enumerate() {
        let id = g.push_node(NodeInfo {
            kind: NodeKind::Place,
            activity: None,
            trace_pos: None,
            candidate: Some(ci),
            tau: None,
        });
        g.place_nodes.push(id);
        for &a in &cand.inputs {
            g.push_arc(g.transition_nodes[a], id, true);
        }
        for &b in &cand.outputs {
            g.push_arc(id, g.transition_nodes[b], true);
        }
    }

    // Trace chains, mirrored.
    for chain in &chains {
        for w in chain.windows(2) {
            g.push_arc(w[0], w[1], true);
        }
    }
    // Links: event to its transition, forward only, once per event node.
    for &e in &event_nodes {
        let a = g.nodes[e].activity.unwrap();
        g.push_arc(e, g.transition_nodes[a], false);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{compute_relations, enumerate_candidates, ArityCaps};
    use crate::eventlog::{parse_log, LogFormat};

    fn graph_for(lines: &str, k: usize) -> (EventLog, DiscoveryGraph) {
        let log = parse_log(lines, LogFormat::DelimitedText).unwrap();
        let rel = compute_relations(&log, k);
        let cands = enumerate_candidates(&rel, ArityCaps::default());
        let mut g = build_graph(&log, &cands, 20).unwrap();
        let freqs = log.frequencies();
        g.init_features(&freqs);
        (log, g)
    }

    fn count_kind(g: &DiscoveryGraph, kind: NodeKind) -> usize {
        (0..g.num_nodes()).filter(|&i| g.node(i).kind == kind).count()
    }

    #[test]
    fn minimal_log_graph_shape() {
        let (_, g) = graph_for("a\n", 1);
        assert_eq!(count_kind(&g, NodeKind::Event), 3);
        assert_eq!(count_kind(&g, NodeKind::Transition), 3);
        assert_eq!(count_kind(&g, NodeKind::Place), 2);
        let links = g
            .edges()
            .iter()
            .filter(|(s, d, dir)| {
                *dir == Direction::Forward
                    && s != d
                    && g.node(*s).kind == NodeKind::Event
                    && g.node(*d).kind == NodeKind::Transition
            })
            .count();
        assert_eq!(links, 3);
    }

    #[test]
    fn duplicate_traces_collapse() {
        let (_, g1) = graph_for("a,b\n", 1);
        let (_, g2) = graph_for("a,b\na,b\n", 1);
        assert_eq!(g1.num_nodes(), g2.num_nodes());
        assert_eq!(g1.edges().len(), g2.edges().len());
    }

    #[test]
    fn empty_candidate_set_is_valid() {
        let log = parse_log("a\n", LogFormat::DelimitedText).unwrap();
        let empty = CandidateSet {
            candidates: vec![],
            caps: ArityCaps::default(),
            injected: 0,
        };
        let g = build_graph(&log, &empty, 20).unwrap();
        assert_eq!(count_kind(&g, NodeKind::Place), 0);
        assert!(g.num_nodes() > 0);
    }

    #[test]
    fn alphabet_overflow_rejected() {
        let lines: String = (0..25).map(|i| format!("a{i}\n")).collect();
        let log = parse_log(&lines, LogFormat::DelimitedText).unwrap();
        let empty = CandidateSet {
            candidates: vec![],
            caps: ArityCaps::default(),
            injected: 0,
        };
        assert!(matches!(
            build_graph(&log, &empty, 20),
            Err(Error::AlphabetOverflow { .. })
        ));
    }

    #[test]
    fn event_and_link_counts_match_formula() {
        let (log, g) = graph_for("a,b\nb,a\nc\n", 2);
        let expected_events: usize = 2 + log
            .variants()
            .iter()
            .map(|(t, _)| t.len() - 2)
            .sum::<usize>();
        assert_eq!(count_kind(&g, NodeKind::Event), expected_events);
        let links = g
            .edges()
            .iter()
            .filter(|(s, d, dir)| {
                *dir == Direction::Forward
                    && s != d
                    && g.node(*s).kind == NodeKind::Event
                    && g.node(*d).kind == NodeKind::Transition
            })
            .count();
        assert_eq!(links, expected_events);
    }

    #[test]
    fn non_link_arcs_are_mirrored() {
        let (_, g) = graph_for("a,b\n", 1);
        for &(s, d, dir) in g.edges() {
            if s == d {
                continue;
            }
            let is_link =
                g.node(s).kind == NodeKind::Event && g.node(d).kind == NodeKind::Transition;
            if is_link {
                assert!(!g
                    .edges()
                    .iter()
                    .any(|&(s2, d2, dir2)| s2 == d && d2 == s && dir2 != dir));
            } else {
                assert!(
                    g.edges()
                        .iter()
                        .any(|&(s2, d2, dir2)| s2 == d && d2 == s && dir2 != dir),
                    "arc {s}->{d} lacks a mirror"
                );
            }
        }
    }

    #[test]
    fn every_node_has_self_loop() {
        let (_, g) = graph_for("a,b\n", 1);
        for id in 0..g.num_nodes() {
            assert!(g
                .edges()
                .iter()
                .any(|&(s, d, dir)| s == id && d == id && dir == Direction::Forward));
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let (_, g1) = graph_for("a,b\nb,a\nc\n", 2);
        let (_, g2) = graph_for("a,b\nb,a\nc\n", 2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn features_one_hot_frequency_flag() {
        let (log, g) = graph_for("a\n", 1);
        let width = g.feature_width;
        let freqs = log.frequencies();
        let m = g.features_matrix();
        for id in 0..g.num_nodes() {
            let row = m.row(id);
            match g.node(id).kind {
                NodeKind::Event | NodeKind::Transition => {
                    let a = g.node(id).activity.unwrap();
                    assert_eq!(row[a], 1.0);
                    assert_eq!(row.iter().take(20).sum::<f64>(), 1.0);
                    assert!((row[20] - freqs.normalized[a]).abs() < 1e-12);
                    assert_eq!(row[width - 1], 0.0);
                }
                _ => assert!(row.iter().all(|&v| v == 0.0)),
            }
        }
        // Start node frequency: one occurrence per trace over total events.
        let start_row = m.row(0);
        let expect = log.trace_count() as f64 / log.event_count() as f64;
        assert!((start_row[20] - expect).abs() < 1e-12);
    }

    #[test]
    fn mark_selected_flags_and_rejects_double() {
        let (_, mut g) = graph_for("a\n", 1);
        let p = g.place_nodes()[0];
        g.mark_selected(p).unwrap();
        assert!(g.is_selected(p));
        let m = g.features_matrix();
        assert_eq!(m.row(p)[g.feature_width - 1], 1.0);
        assert!(matches!(g.mark_selected(p), Err(Error::AlreadySelected(_))));
    }

    #[test]
    fn event_node_is_not_selectable() {
        let (_, mut g) = graph_for("a\n", 1);
        assert!(g.mark_selected(0).is_err());
    }

    #[test]
    fn tau_candidates_need_two_places() {
        let (_, mut g) = graph_for("a\n", 1);
        let p = g.place_nodes()[0];
        g.mark_selected(p).unwrap();
        assert!(g.add_tau_candidates(1, p).is_empty());
    }

    #[test]
    fn tau_candidates_between_two_places() {
        let (_, mut g) = graph_for("a\n", 1);
        let (p, q) = (g.place_nodes()[0], g.place_nodes()[1]);
        g.mark_selected(p).unwrap();
        g.mark_selected(q).unwrap();
        let added = g.add_tau_candidates(1, q);
        assert_eq!(added.len(), 2);
        let defs: Vec<_> = added
            .iter()
            .map(|(id, _)| g.node(*id).tau.clone().unwrap())
            .collect();
        assert!(defs.contains(&(BTreeSet::from([p]), BTreeSet::from([q]))));
        assert!(defs.contains(&(BTreeSet::from([q]), BTreeSet::from([p]))));
        // Anchored regeneration adds nothing new.
        assert!(g.add_tau_candidates(1, q).is_empty());
        // Neighbors reported for embedding initialization.
        for (id, neighbors) in &added {
            assert_eq!(neighbors.len(), 2);
            assert!(g.tau_nodes().contains(id));
        }
    }
}
