//! Petri nets: structure, firing semantics, workflow-net checks,
//! S-coverability and (easy-)soundness verification.
//!
//! Arcs are stored once, on the place side: a place records its input and
//! output transitions (visible or silent). Silent-transition views are
//! derived from that, so the two representations cannot drift apart.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token bound per place during exploration; exceeding it marks the net
/// unsound (target models are 1-safe, the margin is generous).
pub const TOKEN_BOUND: u16 = 8;
/// Default cap on explored markings for [`PetriNet::check_soundness`].
pub const DEFAULT_STATE_CAP: usize = 200_000;

/// Reference to a transition: an index into the visible activity list or
/// into the silent transition list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransRef {
    Visible(usize),
    Silent(usize),
}

pub type PlaceId = usize;

/// A place, identified by its pair of input and output transition sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Place {
    pub inputs: BTreeSet<TransRef>,
    pub outputs: BTreeSet<TransRef>,
}

/// Derived view of a silent transition: its input and output places.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TauTransition {
    pub inputs: BTreeSet<PlaceId>,
    pub outputs: BTreeSet<PlaceId>,
}

/// A marking: token count per place id.
pub type Marking = Vec<u16>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Soundness {
    Sound,
    EasySound,
    Unsound,
    /// The state cap was hit before the verdict could be established.
    Indeterminate,
}

impl std::fmt::Display for Soundness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Soundness::Sound => write!(f, "sound"),
            Soundness::EasySound => write!(f, "easy_sound"),
            Soundness::Unsound => write!(f, "unsound"),
            Soundness::Indeterminate => write!(f, "indeterminate"),
        }
    }
}

/// Outcome of [`PetriNet::check_soundness`] with witnesses.
#[derive(Debug, Clone)]
pub struct SoundnessVerdict {
    pub classification: Soundness,
    /// A reachable marking from which the final marking is unreachable
    /// (a deadlock marking when one exists).
    pub stuck: Option<Marking>,
    /// A reachable marking that strictly covers the final marking.
    pub improper: Option<Marking>,
    /// Transitions never enabled in any reachable marking.
    pub dead_transitions: Vec<String>,
    pub explored: usize,
}

/// Diagnostics from [`PetriNet::is_workflow_net`].
#[derive(Debug, Clone)]
pub struct WorkflowDiagnostics {
    pub is_workflow: bool,
    pub sources: Vec<PlaceId>,
    pub sinks: Vec<PlaceId>,
    /// Nodes not on any source-to-sink path, as display labels.
    pub off_path: Vec<String>,
}

/// A Petri net over a fixed alphabet of visible transitions plus any number
/// of silent transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PetriNet {
    activities: Vec<String>,
    num_taus: usize,
    places: Vec<Place>,
}

impl PetriNet {
    pub fn new(activities: Vec<String>) -> Self {
        PetriNet {
            activities,
            num_taus: 0,
            places: Vec::new(),
        }
    }

    pub fn activities(&self) -> &[String] {
        &self.activities
    }

    pub fn activity_index(&self, label: &str) -> Option<usize> {
        self.activities.iter().position(|a| a == label)
    }

    pub fn num_visible(&self) -> usize {
        self.activities.len()
    }

    pub fn num_taus(&self) -> usize {
        self.num_taus
    }

    pub fn num_places(&self) -> usize {
        self.places.len()
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> impl Iterator<Item = TransRef> + '_ {
        (0..self.activities.len())
            .map(TransRef::Visible)
            .chain((0..self.num_taus).map(TransRef::Silent))
    }

    /// Display label of a transition (`tau#k` for silent ones).
    pub fn trans_label(&self, t: TransRef) -> String {
        match t {
            TransRef::Visible(i) => self.activities[i].clone(),
            TransRef::Silent(i) => format!("tau#{i}"),
        }
    }

    /// Adds a place with the given transition sets. Adding a place whose
    /// (inputs, outputs) pair already exists is a no-op returning the
    /// existing id.
    pub fn add_place(
        &mut self,
        inputs: BTreeSet<TransRef>,
        outputs: BTreeSet<TransRef>,
    ) -> PlaceId {
        if let Some(id) = self
            .places
            .iter()
            .position(|p| p.inputs == inputs && p.outputs == outputs)
        {
            return id;
        }
        self.places.push(Place { inputs, outputs });
        self.places.len() - 1
    }

    /// Adds a fresh place with no arcs yet. Used by net builders that wire
    /// arcs incrementally; the identity invariant is checked on finished
    /// nets, not during construction.
    pub fn add_place_raw(&mut self) -> PlaceId {
        self.places.push(Place::default());
        self.places.len() - 1
    }

    /// Adds the arc t -> p.
    pub fn connect_tp(&mut self, t: TransRef, p: PlaceId) {
        self.places[p].inputs.insert(t);
    }

    /// Adds the arc p -> t.
    pub fn connect_pt(&mut self, p: PlaceId, t: TransRef) {
        self.places[p].outputs.insert(t);
    }

    /// Adds a silent transition consuming from `inputs` and producing into
    /// `outputs`. An identical silent transition is not duplicated.
    pub fn add_tau(&mut self, inputs: &BTreeSet<PlaceId>, outputs: &BTreeSet<PlaceId>) -> TransRef {
        assert!(
            !inputs.is_empty() && !outputs.is_empty(),
            "silent transitions need nonempty inputs and outputs"
        );
        for i in 0..self.num_taus {
            let t = TransRef::Silent(i);
            if &self.trans_input_places(t) == inputs && &self.trans_output_places(t) == outputs {
                return t;
            }
        }
        let t = TransRef::Silent(self.num_taus);
        self.num_taus += 1;
        for &p in inputs {
            self.places[p].outputs.insert(t);
        }
        for &p in outputs {
            self.places[p].inputs.insert(t);
        }
        t
    }

    /// Derived silent-transition views.
    pub fn taus(&self) -> Vec<TauTransition> {
        (0..self.num_taus)
            .map(|i| {
                let t = TransRef::Silent(i);
                TauTransition {
                    inputs: self.trans_input_places(t),
                    outputs: self.trans_output_places(t),
                }
            })
            .collect()
    }

    /// Places p with an arc p -> t.
    pub fn trans_input_places(&self, t: TransRef) -> BTreeSet<PlaceId> {
        self.places
            .iter()
            .enumerate()
            .filter(|(_, p)| p.outputs.contains(&t))
            .map(|(i, _)| i)
            .collect()
    }

    /// Places p with an arc t -> p.
    pub fn trans_output_places(&self, t: TransRef) -> BTreeSet<PlaceId> {
        self.places
            .iter()
            .enumerate()
            .filter(|(_, p)| p.inputs.contains(&t))
            .map(|(i, _)| i)
            .collect()
    }

    fn check_trans(&self, t: TransRef) -> Result<()> {
        let ok = match t {
            TransRef::Visible(i) => i < self.activities.len(),
            TransRef::Silent(i) => i < self.num_taus,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnknownTransition(format!("{t:?}")))
        }
    }

    /// True iff every input place of `t` holds at least one token in `m`.
    pub fn enabled(&self, m: &Marking, t: TransRef) -> Result<bool> {
        self.check_trans(t)?;
        Ok(self.trans_input_places(t).iter().all(|&p| m[p] >= 1))
    }

    /// Fires `t`: one token removed per input place, one added per output.
    pub fn fire(&self, m: &Marking, t: TransRef) -> Result<Marking> {
        if !self.enabled(m, t)? {
            return Err(Error::NotEnabled(self.trans_label(t)));
        }
        let mut next = m.clone();
        for p in self.trans_input_places(t) {
            next[p] -= 1;
        }
        for p in self.trans_output_places(t) {
            next[p] += 1;
        }
        Ok(next)
    }

    /// The unique place without input arcs, if exactly one exists.
    pub fn source(&self) -> Option<PlaceId> {
        let mut sources = self
            .places
            .iter()
            .enumerate()
            .filter(|(_, p)| p.inputs.is_empty());
        match (sources.next(), sources.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    /// The unique place without output arcs, if exactly one exists.
    pub fn sink(&self) -> Option<PlaceId> {
        let mut sinks = self
            .places
            .iter()
            .enumerate()
            .filter(|(_, p)| p.outputs.is_empty());
        match (sinks.next(), sinks.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    /// Marking with a single token on the source place.
    pub fn initial_marking(&self) -> Result<Marking> {
        let source = self
            .source()
            .ok_or_else(|| Error::InvalidNet("no unique source place".into()))?;
        let mut m = vec![0; self.places.len()];
        m[source] = 1;
        Ok(m)
    }

    /// Marking with a single token on the sink place.
    pub fn final_marking(&self) -> Result<Marking> {
        let sink = self
            .sink()
            .ok_or_else(|| Error::InvalidNet("no unique sink place".into()))?;
        let mut m = vec![0; self.places.len()];
        m[sink] = 1;
        Ok(m)
    }

    /// Checks the workflow-net conditions: unique source, unique sink, and
    /// every node on a directed path from source to sink.
    pub fn is_workflow_net(&self) -> WorkflowDiagnostics {
        let sources: Vec<PlaceId> = self
            .places
            .iter()
            .enumerate()
            .filter(|(_, p)| p.inputs.is_empty())
            .map(|(i, _)| i)
            .collect();
        let sinks: Vec<PlaceId> = self
            .places
            .iter()
            .enumerate()
            .filter(|(_, p)| p.outputs.is_empty())
            .map(|(i, _)| i)
            .collect();

        // Node ids: places first, then transitions.
        let trans: Vec<TransRef> = self.transitions().collect();
        let n = self.places.len() + trans.len();
        let tid = |t: TransRef| -> usize {
            self.places.len()
                + match t {
                    TransRef::Visible(i) => i,
                    TransRef::Silent(i) => self.activities.len() + i,
                }
        };
        let mut fwd = vec![Vec::new(); n];
        let mut rev = vec![Vec::new(); n];
        for (p, place) in self.places.iter().enumerate() {
            for &t in &place.inputs {
                fwd[tid(t)].push(p);
                rev[p].push(tid(t));
            }
            for &t in &place.outputs {
                fwd[p].push(tid(t));
                rev[tid(t)].push(p);
            }
        }
        let reach = |adj: &Vec<Vec<usize>>, start: usize| -> Vec<bool> {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        };
        let mut off_path = Vec::new();
        if sources.len() == 1 && sinks.len() == 1 {
            let from_source = reach(&fwd, sources[0]);
            let to_sink = reach(&rev, sinks[0]);
            for u in 0..n {
                if !(from_source[u] && to_sink[u]) {
                    let label = if u < self.places.len() {
                        format!("place#{u}")
                    } else {
                        self.trans_label(trans[u - self.places.len()])
                    };
                    off_path.push(label);
                }
            }
        }
        WorkflowDiagnostics {
            is_workflow: sources.len() == 1 && sinks.len() == 1 && off_path.is_empty(),
            sources,
            sinks,
            off_path,
        }
    }

    /// True iff every place lies in the support of at least one S-component:
    /// a place set containing source and sink in which every touching
    /// transition has exactly one input and one output place, inducing a
    /// strongly connected subnet once a virtual sink-to-source arc is added.
    pub fn is_s_coverable(&self) -> bool {
        self.s_coverable_impl(true)
    }

    /// Relaxed variant for nets under construction: a transition's
    /// one-input/one-output obligation is waived on the sides where it has
    /// no arcs yet, and strong connectivity is not required.
    pub fn is_partial_s_coverable(&self) -> bool {
        self.s_coverable_impl(false)
    }

    fn s_coverable_impl(&self, strict: bool) -> bool {
        let (source, sink) = match (self.source(), self.sink()) {
            (Some(i), Some(o)) => (i, o),
            _ => return false,
        };
        let io: Vec<(Vec<PlaceId>, Vec<PlaceId>)> = self
            .transitions()
            .map(|t| {
                (
                    self.trans_input_places(t).into_iter().collect(),
                    self.trans_output_places(t).into_iter().collect(),
                )
            })
            .collect();
        let searcher = ComponentSearch {
            net: self,
            io,
            source,
            sink,
            strict,
        };
        (0..self.places.len()).all(|p| {
            let mut state = vec![Decision::Undecided; self.places.len()];
            let mut seen = HashSet::new();
            state[source] = Decision::In;
            state[sink] = Decision::In;
            state[p] = Decision::In;
            searcher.search(state, &mut seen)
        })
    }

    /// Explores the reachability graph from `{source: 1}` up to `state_cap`
    /// markings and classifies the net as sound, easy-sound or unsound.
    pub fn check_soundness(&self, state_cap: usize) -> Result<SoundnessVerdict> {
        let diag = self.is_workflow_net();
        if !diag.is_workflow {
            return Err(Error::InvalidNet(format!(
                "not a workflow net (sources: {:?}, sinks: {:?}, off-path: {:?})",
                diag.sources, diag.sinks, diag.off_path
            )));
        }
        let initial = self.initial_marking()?;
        let final_marking = self.final_marking()?;
        let sink = self.sink().unwrap();
        let trans: Vec<TransRef> = self.transitions().collect();
        let io: Vec<(Vec<PlaceId>, Vec<PlaceId>)> = trans
            .iter()
            .map(|&t| {
                (
                    self.trans_input_places(t).into_iter().collect(),
                    self.trans_output_places(t).into_iter().collect(),
                )
            })
            .collect();

        let mut index: HashMap<Marking, usize> = HashMap::new();
        let mut markings: Vec<Marking> = Vec::new();
        let mut edges: Vec<Vec<(usize, usize)>> = Vec::new(); // (transition, successor)
        let mut fired = vec![false; trans.len()];
        let mut improper = None;

        index.insert(initial.clone(), 0);
        markings.push(initial);
        edges.push(Vec::new());
        let mut head = 0;
        while head < markings.len() {
            if markings.len() > state_cap {
                return Ok(SoundnessVerdict {
                    classification: Soundness::Indeterminate,
                    stuck: None,
                    improper: None,
                    dead_transitions: Vec::new(),
                    explored: markings.len(),
                });
            }
            let m = markings[head].clone();
            if m[sink] >= 1 && m != final_marking {
                improper.get_or_insert(m.clone());
            }
            for (ti, (ins, outs)) in io.iter().enumerate() {
                if !ins.iter().all(|&p| m[p] >= 1) {
                    continue;
                }
                fired[ti] = true;
                let mut next = m.clone();
                for &p in ins {
                    next[p] -= 1;
                }
                let mut bounded = true;
                for &p in outs {
                    next[p] += 1;
                    if next[p] > TOKEN_BOUND {
                        bounded = false;
                    }
                }
                if !bounded {
                    return Ok(SoundnessVerdict {
                        classification: Soundness::Unsound,
                        stuck: None,
                        improper: Some(next),
                        dead_transitions: Vec::new(),
                        explored: markings.len(),
                    });
                }
                let id = *index.entry(next.clone()).or_insert_with(|| {
                    markings.push(next);
                    edges.push(Vec::new());
                    markings.len() - 1
                });
                edges[head].push((ti, id));
            }
            head += 1;
        }

        // Backward reachability from the final marking over explored edges.
        let coreachable = match index.get(&final_marking) {
            None => vec![false; markings.len()],
            Some(&fid) => {
                let mut rev = vec![Vec::new(); markings.len()];
                for (u, succs) in edges.iter().enumerate() {
                    for &(_, v) in succs {
                        rev[v].push(u);
                    }
                }
                let mut seen = vec![false; markings.len()];
                let mut queue = VecDeque::from([fid]);
                seen[fid] = true;
                while let Some(u) = queue.pop_front() {
                    for &v in &rev[u] {
                        if !seen[v] {
                            seen[v] = true;
                            queue.push_back(v);
                        }
                    }
                }
                seen
            }
        };
        let stuck = (0..markings.len())
            .filter(|&i| !coreachable[i])
            .min_by_key(|&i| (usize::from(!edges[i].is_empty()), i))
            .map(|i| markings[i].clone());
        let dead_transitions: Vec<String> = trans
            .iter()
            .enumerate()
            .filter(|(i, _)| !fired[*i])
            .map(|(_, &t)| self.trans_label(t))
            .collect();

        let proper = improper.is_none() && stuck.is_none();
        let classification = if proper && dead_transitions.is_empty() {
            Soundness::Sound
        } else if proper {
            Soundness::EasySound
        } else {
            Soundness::Unsound
        };
        Ok(SoundnessVerdict {
            classification,
            stuck,
            improper,
            dead_transitions,
            explored: markings.len(),
        })
    }

    /// Canonical structural signature, used for net equality up to silent
    /// transition reordering.
    pub fn signature(&self) -> String {
        let place_key0: Vec<String> = self
            .places
            .iter()
            .map(|p| {
                let ins: Vec<String> = p
                    .inputs
                    .iter()
                    .filter_map(|t| match t {
                        TransRef::Visible(i) => Some(self.activities[*i].clone()),
                        TransRef::Silent(_) => None,
                    })
                    .collect();
                let outs: Vec<String> = p
                    .outputs
                    .iter()
                    .filter_map(|t| match t {
                        TransRef::Visible(i) => Some(self.activities[*i].clone()),
                        TransRef::Silent(_) => None,
                    })
                    .collect();
                format!("{{{}}}->{{{}}}", ins.join(","), outs.join(","))
            })
            .collect();
        let tau_keys: Vec<String> = self
            .taus()
            .iter()
            .map(|tau| {
                let mut ins: Vec<&str> =
                    tau.inputs.iter().map(|&p| place_key0[p].as_str()).collect();
                let mut outs: Vec<&str> = tau
                    .outputs
                    .iter()
                    .map(|&p| place_key0[p].as_str())
                    .collect();
                ins.sort_unstable();
                outs.sort_unstable();
                format!("[{}]=>[{}]", ins.join(";"), outs.join(";"))
            })
            .collect();
        // Refine place keys with incident tau keys so structurally distinct
        // places with equal visible pairs stay distinct.
        let mut refined: Vec<String> = self
            .places
            .iter()
            .enumerate()
            .map(|(pi, p)| {
                let mut tau_in: Vec<&str> = p
                    .inputs
                    .iter()
                    .filter_map(|t| match t {
                        TransRef::Silent(i) => Some(tau_keys[*i].as_str()),
                        _ => None,
                    })
                    .collect();
                let mut tau_out: Vec<&str> = p
                    .outputs
                    .iter()
                    .filter_map(|t| match t {
                        TransRef::Silent(i) => Some(tau_keys[*i].as_str()),
                        _ => None,
                    })
                    .collect();
                tau_in.sort_unstable();
                tau_out.sort_unstable();
                format!(
                    "{}<in:{}|out:{}>",
                    place_key0[pi],
                    tau_in.join("&"),
                    tau_out.join("&")
                )
            })
            .collect();
        refined.sort_unstable();
        let mut taus_sorted = tau_keys;
        taus_sorted.sort_unstable();
        format!("P:{} T:{}", refined.join(" "), taus_sorted.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Decision {
    In,
    Out,
    Undecided,
}

struct ComponentSearch<'a> {
    net: &'a PetriNet,
    io: Vec<(Vec<PlaceId>, Vec<PlaceId>)>,
    source: PlaceId,
    sink: PlaceId,
    strict: bool,
}

impl ComponentSearch<'_> {
    /// DFS with constraint propagation over "place in component" decisions.
    fn search(&self, mut state: Vec<Decision>, seen: &mut HashSet<Vec<u8>>) -> bool {
        // Propagate until fixpoint or contradiction; collect branch points.
        loop {
            let mut changed = false;
            let mut branch: Option<(usize, bool)> = None; // (transition, branch over outputs?)
            for (ti, (ins, outs)) in self.io.iter().enumerate() {
                let ins_in: Vec<PlaceId> = ins
                    .iter()
                    .copied()
                    .filter(|&p| state[p] == Decision::In)
                    .collect();
                let outs_in: Vec<PlaceId> = outs
                    .iter()
                    .copied()
                    .filter(|&p| state[p] == Decision::In)
                    .collect();
                if ins_in.len() > 1 || outs_in.len() > 1 {
                    return false;
                }
                if ins_in.is_empty() && outs_in.is_empty() {
                    continue;
                }
                // Touching: all siblings of a decided arc are excluded.
                if ins_in.len() == 1 {
                    for &p in ins {
                        if p != ins_in[0] && state[p] == Decision::Undecided {
                            state[p] = Decision::Out;
                            changed = true;
                        }
                    }
                }
                if outs_in.len() == 1 {
                    for &p in outs {
                        if p != outs_in[0] && state[p] == Decision::Undecided {
                            state[p] = Decision::Out;
                            changed = true;
                        }
                    }
                }
                // The missing side must gain exactly one member.
                if outs_in.is_empty() && (self.strict || !outs.is_empty()) {
                    let cand: Vec<PlaceId> = outs
                        .iter()
                        .copied()
                        .filter(|&p| state[p] == Decision::Undecided)
                        .collect();
                    match cand.len() {
                        0 => return false,
                        1 => {
                            state[cand[0]] = Decision::In;
                            changed = true;
                        }
                        _ => branch = branch.or(Some((ti, true))),
                    }
                }
                if ins_in.is_empty() && (self.strict || !ins.is_empty()) {
                    let cand: Vec<PlaceId> = ins
                        .iter()
                        .copied()
                        .filter(|&p| state[p] == Decision::Undecided)
                        .collect();
                    match cand.len() {
                        0 => return false,
                        1 => {
                            state[cand[0]] = Decision::In;
                            changed = true;
                        }
                        _ => branch = branch.or(Some((ti, false))),
                    }
                }
            }
            if changed {
                continue;
            }
            match branch {
                None => break,
                Some((ti, over_outputs)) => {
                    let key: Vec<u8> = state
                        .iter()
                        .map(|d| match d {
                            Decision::In => 1,
                            Decision::Out => 2,
                            Decision::Undecided => 0,
                        })
                        .collect();
                    if !seen.insert(key) {
                        return false;
                    }
                    let (ins, outs) = &self.io[ti];
                    let pick_from = if over_outputs { outs } else { ins };
                    let cands: Vec<PlaceId> = pick_from
                        .iter()
                        .copied()
                        .filter(|&p| state[p] == Decision::Undecided)
                        .collect();
                    for p in cands {
                        let mut next = state.clone();
                        next[p] = Decision::In;
                        if self.search(next, seen) {
                            return true;
                        }
                    }
                    return false;
                }
            }
        }
        // Fixpoint without branches: the component is the In-set.
        if !self.strict {
            return true;
        }
        self.strongly_connected(&state)
    }

    /// Strong connectivity of the subnet induced by the In-places and their
    /// touching transitions, with a virtual sink -> source arc.
    fn strongly_connected(&self, state: &[Decision]) -> bool {
        let in_set: Vec<PlaceId> = (0..state.len())
            .filter(|&p| state[p] == Decision::In)
            .collect();
        let touching: Vec<usize> = self
            .io
            .iter()
            .enumerate()
            .filter(|(_, (ins, outs))| {
                ins.iter().any(|&p| state[p] == Decision::In)
                    || outs.iter().any(|&p| state[p] == Decision::In)
            })
            .map(|(ti, _)| ti)
            .collect();
        // Node numbering: places then transitions.
        let pid: HashMap<PlaceId, usize> =
            in_set.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let tix: HashMap<usize, usize> = touching
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, in_set.len() + i))
            .collect();
        let n = in_set.len() + touching.len();
        let mut fwd = vec![Vec::new(); n];
        let mut rev = vec![Vec::new(); n];
        let mut add = |u: usize, v: usize, fwd: &mut Vec<Vec<usize>>, rev: &mut Vec<Vec<usize>>| {
            fwd[u].push(v);
            rev[v].push(u);
        };
        for &ti in &touching {
            let (ins, outs) = &self.io[ti];
            for &p in ins {
                if let Some(&pi) = pid.get(&p) {
                    add(pi, tix[&ti], &mut fwd, &mut rev);
                }
            }
            for &p in outs {
                if let Some(&pi) = pid.get(&p) {
                    add(tix[&ti], pi, &mut fwd, &mut rev);
                }
            }
        }
        add(pid[&self.sink], pid[&self.source], &mut fwd, &mut rev);
        let reach = |adj: &Vec<Vec<usize>>| -> usize {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            let mut count = 1;
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        count += 1;
                        queue.push_back(v);
                    }
                }
            }
            count
        };
        n > 0 && reach(&fwd) == n && reach(&rev) == n
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PlaceJson {
    #[serde(rename = "in")]
    inputs: Vec<String>,
    #[serde(rename = "out")]
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TauJson {
    #[serde(rename = "in")]
    inputs: Vec<usize>,
    #[serde(rename = "out")]
    outputs: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetJson {
    activities: Vec<String>,
    places: Vec<PlaceJson>,
    taus: Vec<TauJson>,
}

/// Serializes a net to its JSON form: places list visible transition labels,
/// silent transitions list place indices.
pub fn to_json(net: &PetriNet) -> String {
    let places = net
        .places()
        .iter()
        .map(|p| PlaceJson {
            inputs: p
                .inputs
                .iter()
                .filter_map(|t| match t {
                    TransRef::Visible(i) => Some(net.activities()[*i].clone()),
                    TransRef::Silent(_) => None,
                })
                .collect(),
            outputs: p
                .outputs
                .iter()
                .filter_map(|t| match t {
                    TransRef::Visible(i) => Some(net.activities()[*i].clone()),
                    TransRef::Silent(_) => None,
                })
                .collect(),
        })
        .collect();
    let taus = net
        .taus()
        .iter()
        .map(|t| TauJson {
            inputs: t.inputs.iter().copied().collect(),
            outputs: t.outputs.iter().copied().collect(),
        })
        .collect();
    serde_json::to_string_pretty(&NetJson {
        activities: net.activities().to_vec(),
        places,
        taus,
    })
    .expect("net serialization cannot fail")
}

/// Parses a net from its JSON form.
pub fn from_json(s: &str) -> Result<PetriNet> {
    let parsed: NetJson = serde_json::from_str(s)?;
    let mut net = PetriNet::new(parsed.activities);
    let label_index: BTreeMap<String, usize> = net
        .activities()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    for p in &parsed.places {
        let id = net.add_place_raw();
        for l in &p.inputs {
            let t = *label_index
                .get(l)
                .ok_or_else(|| Error::UnknownTransition(l.clone()))?;
            net.connect_tp(TransRef::Visible(t), id);
        }
        for l in &p.outputs {
            let t = *label_index
                .get(l)
                .ok_or_else(|| Error::UnknownTransition(l.clone()))?;
            net.connect_pt(id, TransRef::Visible(t));
        }
    }
    for t in &parsed.taus {
        let ins: BTreeSet<PlaceId> = t.inputs.iter().copied().collect();
        let outs: BTreeSet<PlaceId> = t.outputs.iter().copied().collect();
        if ins.iter().chain(&outs).any(|&p| p >= net.num_places()) {
            return Err(Error::InvalidNet("tau references unknown place".into()));
        }
        net.add_tau(&ins, &outs);
    }
    Ok(net)
}

/// DOT rendering: places as circles, transitions as boxes, silent
/// transitions filled black.
pub fn to_dot(net: &PetriNet) -> String {
    let mut out = String::from("digraph petrinet {\n  rankdir=LR;\n");
    for (i, _) in net.places().iter().enumerate() {
        let _ = writeln!(out, "  p{i} [shape=circle, label=\"p{i}\"];");
    }
    for t in net.transitions() {
        let (id, style) = match t {
            TransRef::Visible(i) => (
                format!("t{i}"),
                format!("shape=box, label=\"{}\"", net.trans_label(t)),
            ),
            TransRef::Silent(i) => (
                format!("tau{i}"),
                "shape=box, style=filled, fillcolor=black, label=\"\"".to_string(),
            ),
        };
        let _ = writeln!(out, "  {id} [{style}];");
    }
    let tname = |t: &TransRef| match t {
        TransRef::Visible(i) => format!("t{i}"),
        TransRef::Silent(i) => format!("tau{i}"),
    };
    for (i, p) in net.places().iter().enumerate() {
        for t in &p.inputs {
            let _ = writeln!(out, "  {} -> p{i};", tname(t));
        }
        for t in &p.outputs {
            let _ = writeln!(out, "  p{i} -> {};", tname(t));
        }
    }
    out.push_str("}\n");
    out
}

/// Minimal PNML-style XML writer.
pub fn to_pnml(net: &PetriNet) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<pnml>\n  <net id=\"net1\" type=\"http://www.pnml.org/version-2009/grammar/ptnet\">\n    <page id=\"page1\">\n",
    );
    for (i, _) in net.places().iter().enumerate() {
        let marking = if net.source() == Some(i) {
            "<initialMarking><text>1</text></initialMarking>"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "      <place id=\"p{i}\"><name><text>p{i}</text></name>{marking}</place>"
        );
    }
    for t in net.transitions() {
        let (id, label, silent) = match t {
            TransRef::Visible(i) => (format!("t{i}"), xml_escape(&net.trans_label(t)), false),
            TransRef::Silent(i) => (format!("tau{i}"), String::new(), true),
        };
        let tool = if silent {
            "<toolspecific tool=\"log2net\" version=\"1.0\"><silent>true</silent></toolspecific>"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "      <transition id=\"{id}\"><name><text>{label}</text></name>{tool}</transition>"
        );
    }
    let tname = |t: &TransRef| match t {
        TransRef::Visible(i) => format!("t{i}"),
        TransRef::Silent(i) => format!("tau{i}"),
    };
    let mut arc = 0;
    for (i, p) in net.places().iter().enumerate() {
        for t in &p.inputs {
            let _ = writeln!(
                out,
                "      <arc id=\"a{arc}\" source=\"{}\" target=\"p{i}\"/>",
                tname(t)
            );
            arc += 1;
        }
        for t in &p.outputs {
            let _ = writeln!(
                out,
                "      <arc id=\"a{arc}\" source=\"p{i}\" target=\"{}\"/>",
                tname(t)
            );
            arc += 1;
        }
    }
    out.push_str("    </page>\n  </net>\n</pnml>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

// ---------------------------------------------------------------------------
// Construction helpers for tests and tools
// ---------------------------------------------------------------------------

/// Builds a workflow net from activity labels and places given as
/// (input labels, output labels) pairs; the source is `([], [first])`-style
/// with empty input, the sink has empty output.
pub fn net_from_labeled_places(activities: &[&str], places: &[(&[&str], &[&str])]) -> PetriNet {
    let mut net = PetriNet::new(activities.iter().map(|s| s.to_string()).collect());
    for (ins, outs) in places {
        let inputs: BTreeSet<TransRef> = ins
            .iter()
            .map(|l| TransRef::Visible(net.activity_index(l).expect("unknown label")))
            .collect();
        let outputs: BTreeSet<TransRef> = outs
            .iter()
            .map(|l| TransRef::Visible(net.activity_index(l).expect("unknown label")))
            .collect();
        net.add_place(inputs, outputs);
    }
    net
}

/// The sequential workflow net `i -> > -> ... -> | -> o` over the given
/// interior activity labels.
pub fn chain_net(interior: &[&str]) -> PetriNet {
    let mut labels = vec![">"];
    labels.extend_from_slice(interior);
    labels.push("|");
    let mut places: Vec<(Vec<&str>, Vec<&str>)> = Vec::new();
    places.push((vec![], vec![labels[0]]));
    for w in labels.windows(2) {
        places.push((vec![w[0]], vec![w[1]]));
    }
    places.push((vec![labels[labels.len() - 1]], vec![]));
    let borrowed: Vec<(&[&str], &[&str])> = places
        .iter()
        .map(|(a, b)| (a.as_slice(), b.as_slice()))
        .collect();
    net_from_labeled_places(&labels, &borrowed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_chain() -> PetriNet {
        chain_net(&["a"])
    }

    #[test]
    fn enabled_and_fire_on_chain() {
        let net = simple_chain();
        let m = net.initial_marking().unwrap();
        let t_start = TransRef::Visible(0);
        assert!(net.enabled(&m, t_start).unwrap());
        let t_a = TransRef::Visible(1);
        assert!(!net.enabled(&m, t_a).unwrap());
        let m2 = net.fire(&m, t_start).unwrap();
        assert_eq!(m2.iter().sum::<u16>(), 1);
        assert!(net.enabled(&m2, t_a).unwrap());
        assert!(net.fire(&m, t_a).is_err());
    }

    #[test]
    fn fire_preserves_token_shift() {
        // t with one input and two outputs shifts total count by +1.
        let mut net = PetriNet::new(vec!["t".into()]);
        let p = net.add_place_raw();
        let q = net.add_place_raw();
        let r = net.add_place_raw();
        net.connect_pt(p, TransRef::Visible(0));
        net.connect_tp(TransRef::Visible(0), q);
        net.connect_tp(TransRef::Visible(0), r);
        let m = vec![2, 0, 0];
        let m2 = net.fire(&m, TransRef::Visible(0)).unwrap();
        assert_eq!(m2, vec![1, 1, 1]);
    }

    #[test]
    fn self_loop_fire() {
        let mut net = PetriNet::new(vec!["t".into()]);
        let p = net.add_place_raw();
        net.connect_pt(p, TransRef::Visible(0));
        net.connect_tp(TransRef::Visible(0), p);
        let m = vec![1];
        assert_eq!(net.fire(&m, TransRef::Visible(0)).unwrap(), vec![1]);
    }

    #[test]
    fn unknown_transition_errors() {
        let net = simple_chain();
        let m = net.initial_marking().unwrap();
        assert!(net.enabled(&m, TransRef::Visible(99)).is_err());
    }

    #[test]
    fn place_identity_dedup() {
        let mut net = PetriNet::new(vec!["a".into(), "b".into()]);
        let x: BTreeSet<TransRef> = [TransRef::Visible(0)].into();
        let y: BTreeSet<TransRef> = [TransRef::Visible(1)].into();
        let p1 = net.add_place(x.clone(), y.clone());
        let p2 = net.add_place(x, y);
        assert_eq!(p1, p2);
        assert_eq!(net.num_places(), 1);
    }

    #[test]
    fn chain_is_workflow_net() {
        let diag = simple_chain().is_workflow_net();
        assert!(diag.is_workflow);
    }

    #[test]
    fn isolated_transition_breaks_workflow() {
        let mut net = simple_chain();
        net.activities.push("ghost".into());
        let diag = net.is_workflow_net();
        assert!(!diag.is_workflow);
        assert!(diag.off_path.iter().any(|l| l == "ghost"));
    }

    #[test]
    fn two_sources_break_workflow() {
        let mut net = simple_chain();
        let extra = net.add_place_raw();
        net.connect_pt(extra, TransRef::Visible(1));
        let diag = net.is_workflow_net();
        assert!(!diag.is_workflow);
        assert_eq!(diag.sources.len(), 2);
    }

    #[test]
    fn chain_net_is_s_coverable_and_sound() {
        let net = chain_net(&["a", "b"]);
        assert!(net.is_s_coverable());
        let verdict = net.check_soundness(DEFAULT_STATE_CAP).unwrap();
        assert_eq!(verdict.classification, Soundness::Sound);
    }

    #[test]
    fn dangling_parallel_place_is_not_s_coverable() {
        // a: i -> {p1, p2}, b: {p1} -> o; p2 is never consumed.
        let net = net_from_labeled_places(
            &["a", "b"],
            &[
                (&[], &["a"]),
                (&["a"], &["b"]),
                (&["a"], &[]),
                (&["b"], &[]),
            ],
        );
        // Two sinks, so grab the structure check directly: p2 (index 2) has no
        // outputs, making the place uncoverable.
        assert!(!net.is_s_coverable());
    }

    #[test]
    fn parallel_split_join_is_s_coverable() {
        // AND-split t1 to p1, p2; AND-join t2 from p1, p2, wrapped in i/o.
        let net = net_from_labeled_places(
            &["t1", "t2"],
            &[
                (&[], &["t1"]),
                (&["t1"], &["t2"]),
                (&["t1"], &["t2"]),
                (&["t2"], &[]),
            ],
        );
        assert!(net.is_s_coverable());
    }

    #[test]
    fn and_split_xor_join_unsound() {
        // t1 -> {p1, p2}; p1 -> t2 -> r; p2 -> t3 -> r; r -> t4 -> o.
        // Both branches fire, r receives two tokens: improper completion.
        let net = net_from_labeled_places(
            &["t1", "t2", "t3", "t4"],
            &[
                (&[], &["t1"]),
                (&["t1"], &["t2"]),
                (&["t1"], &["t3"]),
                (&["t2", "t3"], &["t4"]),
                (&["t4"], &[]),
            ],
        );
        let verdict = net.check_soundness(DEFAULT_STATE_CAP).unwrap();
        assert_eq!(verdict.classification, Soundness::Unsound);
        assert!(!net.is_s_coverable());
    }

    #[test]
    fn dead_transition_yields_easy_sound() {
        // x needs p1 and p3 marked together, which never happens on the main
        // chain > a b |, so x is dead but the run completes properly.
        let net = net_from_labeled_places(
            &[">", "a", "b", "x", "|"],
            &[
                (&[], &[">"]),
                (&[">"], &["a", "x"]),
                (&["a", "x"], &["b"]),
                (&["b"], &["|", "x"]),
                (&["|"], &[]),
            ],
        );
        assert!(net.is_workflow_net().is_workflow);
        let verdict = net.check_soundness(DEFAULT_STATE_CAP).unwrap();
        assert_eq!(verdict.classification, Soundness::EasySound);
        assert_eq!(verdict.dead_transitions, vec!["x".to_string()]);
    }

    #[test]
    fn indeterminate_on_tiny_cap() {
        let net = chain_net(&["a", "b", "c"]);
        let verdict = net.check_soundness(2).unwrap();
        assert_eq!(verdict.classification, Soundness::Indeterminate);
    }

    #[test]
    fn soundness_is_deterministic() {
        let net = net_from_labeled_places(
            &["t1", "t2", "t3", "t4"],
            &[
                (&[], &["t1"]),
                (&["t1"], &["t2"]),
                (&["t1"], &["t3"]),
                (&["t2", "t3"], &["t4"]),
                (&["t4"], &[]),
            ],
        );
        let v1 = net.check_soundness(DEFAULT_STATE_CAP).unwrap();
        let v2 = net.check_soundness(DEFAULT_STATE_CAP).unwrap();
        assert_eq!(v1.classification, v2.classification);
        assert_eq!(v1.improper, v2.improper);
        assert_eq!(v1.stuck, v2.stuck);
    }

    #[test]
    fn json_round_trip() {
        let mut net = chain_net(&["a", "b"]);
        // add a tau skipping from place 1 to place 3
        let ins: BTreeSet<PlaceId> = [1].into();
        let outs: BTreeSet<PlaceId> = [3].into();
        net.add_tau(&ins, &outs);
        let json = to_json(&net);
        let back = from_json(&json).unwrap();
        assert_eq!(net.signature(), back.signature());
        assert_eq!(to_json(&back), json);
    }

    #[test]
    fn dot_and_pnml_render() {
        let net = chain_net(&["a"]);
        let dot = to_dot(&net);
        assert!(dot.contains("digraph"));
        assert!(dot.contains("shape=box"));
        let pnml = to_pnml(&net);
        assert!(pnml.contains("<pnml>"));
        assert!(pnml.contains("initialMarking"));
    }
}
