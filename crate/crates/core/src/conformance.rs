//! Alignment-based fitness, escaping-edges precision, F-score and
//! inverse-arc-degree simplicity.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::cmp::Reverse;

use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::petrinet::{Marking, PetriNet, PlaceId, TransRef, TOKEN_BOUND};

/// Safety cap on explored synchronous-product states per alignment.
const ALIGN_STATE_CAP: usize = 500_000;

/// One alignment move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Move {
    /// Transition and log event agree (visible transition label).
    Sync(String),
    /// Log event without a model counterpart.
    LogMove(String),
    /// Transition fired without consuming a log event.
    ModelMove(TransRef),
}

/// A least-cost alignment of one trace against the net.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub moves: Vec<Move>,
    pub cost: u64,
}

/// Conformance metrics of one net against one log.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConformanceReport {
    pub fitness: f64,
    pub precision: f64,
    pub f_score: f64,
    pub simplicity: f64,
}

struct TransIo {
    refs: Vec<TransRef>,
    labels: Vec<Option<String>>,
    ins: Vec<Vec<PlaceId>>,
    outs: Vec<Vec<PlaceId>>,
}

fn trans_io(net: &PetriNet) -> TransIo {
    let refs: Vec<TransRef> = net.transitions().collect();
    let labels = refs
        .iter()
        .map(|&t| match t {
            TransRef::Visible(i) => Some(net.activities()[i].clone()),
            TransRef::Silent(_) => None,
        })
        .collect();
    let ins = refs
        .iter()
        .map(|&t| net.trans_input_places(t).into_iter().collect())
        .collect();
    let outs = refs
        .iter()
        .map(|&t| net.trans_output_places(t).into_iter().collect())
        .collect();
    TransIo {
        refs,
        labels,
        ins,
        outs,
    }
}

fn fire_io(io: &TransIo, ti: usize, m: &Marking) -> Option<Marking> {
    if !io.ins[ti].iter().all(|&p| m[p] >= 1) {
        return None;
    }
    let mut next = m.clone();
    for &p in &io.ins[ti] {
        next[p] -= 1;
    }
    for &p in &io.outs[ti] {
        next[p] += 1;
        if next[p] > TOKEN_BOUND {
            return None;
        }
    }
    Some(next)
}

/// Finds a least-cost alignment by uniform-cost search over the synchronous
/// product. Costs: synchronous and silent model moves are free, visible
/// model moves and log moves cost one. Ties settle in expansion order
/// (sync, then model moves, then log move), which is deterministic.
pub fn align(net: &PetriNet, trace: &[&str]) -> Result<Alignment> {
    let initial = net.initial_marking()?;
    let final_marking = net.final_marking()?;
    let io = trans_io(net);

    struct Node {
        marking: Marking,
        pos: usize,
        cost: u64,
        parent: Option<(usize, Move)>,
    }
    let mut arena: Vec<Node> = vec![Node {
        marking: initial.clone(),
        pos: 0,
        cost: 0,
        parent: None,
    }];
    let mut best: HashMap<(Marking, usize), u64> = HashMap::new();
    best.insert((initial, 0), 0);
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    heap.push(Reverse((0, 0)));
    let mut settled: HashSet<(Marking, usize)> = HashSet::new();

    while let Some(Reverse((cost, idx))) = heap.pop() {
        let (marking, pos) = (arena[idx].marking.clone(), arena[idx].pos);
        if arena[idx].cost != cost || !settled.insert((marking.clone(), pos)) {
            continue;
        }
        if marking == final_marking && pos == trace.len() {
            // Reconstruct.
            let mut moves = Vec::new();
            let mut cur = idx;
            while let Some((parent, mv)) = arena[cur].parent.clone() {
                moves.push(mv);
                cur = parent;
            }
            moves.reverse();
            return Ok(Alignment { moves, cost });
        }
        if arena.len() > ALIGN_STATE_CAP {
            return Err(Error::AlignmentFailed(
                "state cap exceeded during alignment".into(),
            ));
        }
        let mut push = |arena: &mut Vec<Node>,
                        heap: &mut BinaryHeap<Reverse<(u64, usize)>>,
                        best: &mut HashMap<(Marking, usize), u64>,
                        m: Marking,
                        p: usize,
                        c: u64,
                        mv: Move| {
            let key = (m.clone(), p);
            if best.get(&key).is_none_or(|&old| c < old) {
                best.insert(key, c);
                arena.push(Node {
                    marking: m,
                    pos: p,
                    cost: c,
                    parent: Some((idx, mv)),
                });
                heap.push(Reverse((c, arena.len() - 1)));
            }
        };
        // Synchronous moves first, then model moves, then the log move.
        if pos < trace.len() {
            for ti in 0..io.refs.len() {
                if io.labels[ti].as_deref() == Some(trace[pos]) {
                    if let Some(next) = fire_io(&io, ti, &marking) {
                        push(
                            &mut arena,
                            &mut heap,
                            &mut best,
                            next,
                            pos + 1,
                            cost,
                            Move::Sync(trace[pos].to_string()),
                        );
                    }
                }
            }
        }
        for ti in 0..io.refs.len() {
            if let Some(next) = fire_io(&io, ti, &marking) {
                let move_cost = if io.labels[ti].is_some() { 1 } else { 0 };
                push(
                    &mut arena,
                    &mut heap,
                    &mut best,
                    next,
                    pos,
                    cost + move_cost,
                    Move::ModelMove(io.refs[ti]),
                );
            }
        }
        if pos < trace.len() {
            push(
                &mut arena,
                &mut heap,
                &mut best,
                marking.clone(),
                pos + 1,
                cost + 1,
                Move::LogMove(trace[pos].to_string()),
            );
        }
    }
    Err(Error::AlignmentFailed(
        "final marking unreachable in the synchronous product".into(),
    ))
}

/// Cheapest model-only completion cost (visible firings) from the initial
/// to the final marking.
pub fn model_path_cost(net: &PetriNet) -> Result<u64> {
    let initial = net.initial_marking()?;
    let final_marking = net.final_marking()?;
    let io = trans_io(net);
    let mut best: HashMap<Marking, u64> = HashMap::new();
    best.insert(initial.clone(), 0);
    let mut heap: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut arena: Vec<Marking> = vec![initial];
    heap.push(Reverse((0, 0)));
    while let Some(Reverse((cost, idx))) = heap.pop() {
        let m = arena[idx as usize].clone();
        if best.get(&m).copied() != Some(cost) {
            continue;
        }
        if m == final_marking {
            return Ok(cost);
        }
        if arena.len() > ALIGN_STATE_CAP {
            break;
        }
        for ti in 0..io.refs.len() {
            if let Some(next) = fire_io(&io, ti, &m) {
                let c = cost + u64::from(io.labels[ti].is_some());
                if best.get(&next).is_none_or(|&old| c < old) {
                    best.insert(next.clone(), c);
                    arena.push(next);
                    heap.push(Reverse((c, (arena.len() - 1) as u64)));
                }
            }
        }
    }
    Err(Error::AlignmentFailed(
        "final marking unreachable by model moves".into(),
    ))
}

/// Alignment-based fitness: one minus total alignment cost over the
/// worst-case cost (dropping the whole trace plus the cheapest completion).
pub fn fitness(net: &PetriNet, log: &EventLog) -> Result<f64> {
    let completion = model_path_cost(net)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (trace, count) in log.variants() {
        let labels: Vec<&str> = trace.iter().map(|&i| log.label(i)).collect();
        let alignment = align(net, &labels)?;
        let worst = labels.len() as u64 + completion;
        num += *count as f64 * alignment.cost as f64;
        den += *count as f64 * worst as f64;
    }
    if den == 0.0 {
        return Err(Error::AlignmentFailed("empty log".into()));
    }
    Ok(1.0 - num / den)
}

/// Visible activities enabled from `m` or any marking reachable from it by
/// silent firings only.
fn tau_closure_enabled(io: &TransIo, m: &Marking) -> BTreeSet<String> {
    let mut enabled = BTreeSet::new();
    let mut seen: HashSet<Marking> = HashSet::new();
    let mut queue = VecDeque::from([m.clone()]);
    seen.insert(m.clone());
    while let Some(cur) = queue.pop_front() {
        if seen.len() > 10_000 {
            break;
        }
        for ti in 0..io.refs.len() {
            match &io.labels[ti] {
                Some(label) => {
                    if io.ins[ti].iter().all(|&p| cur[p] >= 1) {
                        enabled.insert(label.clone());
                    }
                }
                None => {
                    if let Some(next) = fire_io(io, ti, &cur) {
                        if seen.insert(next.clone()) {
                            queue.push_back(next);
                        }
                    }
                }
            }
        }
    }
    enabled
}

/// Escaping-edges precision over alignment-repaired prefixes: at each
/// visited prefix state, compares the activities the model allows
/// (tau-closure enabled) against those the log actually continues with.
pub fn escaping_edges_precision(net: &PetriNet, log: &EventLog) -> Result<f64> {
    let io = trans_io(net);
    let initial = net.initial_marking()?;

    // reflected: label prefix -> set of next activities seen in the log.
    let mut reflected: BTreeMap<Vec<&str>, BTreeSet<&str>> = BTreeMap::new();
    for (trace, _) in log.variants() {
        let labels: Vec<&str> = trace.iter().map(|&i| log.label(i)).collect();
        for k in 0..labels.len() {
            reflected
                .entry(labels[..k].to_vec())
                .or_default()
                .insert(labels[k]);
        }
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for (trace, count) in log.variants() {
        let labels: Vec<&str> = trace.iter().map(|&i| log.label(i)).collect();
        let alignment = align(net, &labels)?;
        // Marking right before consuming each log event.
        let mut marking = initial.clone();
        let mut consumed = 0usize;
        let mut prefix_markings: Vec<Marking> = Vec::with_capacity(labels.len());
        for mv in &alignment.moves {
            match mv {
                Move::Sync(label) => {
                    prefix_markings.push(marking.clone());
                    let ti = io
                        .labels
                        .iter()
                        .position(|l| l.as_deref() == Some(label.as_str()))
                        .expect("sync move label exists");
                    marking = fire_io(&io, ti, &marking).expect("sync move fires");
                    consumed += 1;
                }
                Move::LogMove(_) => {
                    prefix_markings.push(marking.clone());
                    consumed += 1;
                }
                Move::ModelMove(t) => {
                    let ti = io.refs.iter().position(|r| r == t).unwrap();
                    marking = fire_io(&io, ti, &marking).expect("model move fires");
                }
            }
        }
        debug_assert_eq!(consumed, labels.len());
        for (k, m) in prefix_markings.iter().enumerate() {
            let allowed = tau_closure_enabled(&io, m);
            if allowed.is_empty() {
                continue;
            }
            let seen = &reflected[&labels[..k].to_vec()];
            let overlap = seen
                .iter()
                .filter(|a| allowed.contains(**a))
                .count();
            num += *count as f64 * overlap as f64;
            den += *count as f64 * allowed.len() as f64;
        }
    }
    if den == 0.0 {
        return Err(Error::AlignmentFailed(
            "no replayable prefix for precision".into(),
        ));
    }
    Ok(num / den)
}

/// Inverse arc degree: 1 / (1 + max(0, mean degree - 2)), degrees counted
/// over both arc directions; a pure chain scores exactly one.
pub fn simplicity(net: &PetriNet) -> Result<f64> {
    let num_trans = net.num_visible() + net.num_taus();
    let nodes = net.num_places() + num_trans;
    if nodes == 0 {
        return Err(Error::InvalidNet("empty net".into()));
    }
    let arcs: usize = net
        .places()
        .iter()
        .map(|p| p.inputs.len() + p.outputs.len())
        .sum();
    let mean = (2 * arcs) as f64 / nodes as f64;
    Ok(1.0 / (1.0 + (mean - 2.0).max(0.0)))
}

pub fn f_score(fitness: f64, precision: f64) -> f64 {
    if fitness > 0.0 && precision > 0.0 {
        2.0 * fitness * precision / (fitness + precision)
    } else {
        0.0
    }
}

/// All four metrics of a net against a log.
pub fn report(net: &PetriNet, log: &EventLog) -> Result<ConformanceReport> {
    let fit = fitness(net, log)?;
    let prec = escaping_edges_precision(net, log)?;
    Ok(ConformanceReport {
        fitness: fit,
        precision: prec,
        f_score: f_score(fit, prec),
        simplicity: simplicity(net)?,
    })
}
