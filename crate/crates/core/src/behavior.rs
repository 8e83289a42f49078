//! Ordering relations over a log and candidate-place enumeration.
//!
//! The relations (directly-follows, k-eventually-follows, causal, conflict,
//! parallel) over-approximate the behavior in the log; candidate places are
//! built from them in four classes so the search space stays tractable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::eventlog::EventLog;

/// Arity caps for candidate input/output transition sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ArityCaps {
    pub max_in: usize,
    pub max_out: usize,
}

impl Default for ArityCaps {
    fn default() -> Self {
        ArityCaps {
            max_in: 4,
            max_out: 4,
        }
    }
}

/// Boolean relation matrices over the alphabet (start/end included).
#[derive(Debug, Clone)]
pub struct AlphaRelations {
    pub n: usize,
    pub k_max: usize,
    /// `directly_follows[a][b]`: b occurs immediately after a in some trace.
    pub directly_follows: Vec<Vec<bool>>,
    /// `eventually_follows[k-1][a][b]`: b occurs exactly k positions after a.
    pub eventually_follows: Vec<Vec<Vec<bool>>>,
    pub causal: Vec<Vec<bool>>,
    pub conflict: Vec<Vec<bool>>,
    pub parallel: Vec<Vec<bool>>,
}

impl AlphaRelations {
    /// True iff a is followed by b at distance k for some 1 <= k <= k_max.
    pub fn eventually_within(&self, a: usize, b: usize) -> bool {
        self.eventually_follows.iter().any(|m| m[a][b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlaceClass {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl std::fmt::Display for PlaceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlaceClass::OneToOne => write!(f, "1-1"),
            PlaceClass::OneToMany => write!(f, "1-n"),
            PlaceClass::ManyToOne => write!(f, "n-1"),
            PlaceClass::ManyToMany => write!(f, "n-n"),
        }
    }
}

/// A candidate place: input and output activity index sets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Candidate {
    pub inputs: BTreeSet<usize>,
    pub outputs: BTreeSet<usize>,
}

impl Candidate {
    pub fn class(&self) -> PlaceClass {
        match (self.inputs.len() > 1, self.outputs.len() > 1) {
            (false, false) => PlaceClass::OneToOne,
            (false, true) => PlaceClass::OneToMany,
            (true, false) => PlaceClass::ManyToOne,
            (true, true) => PlaceClass::ManyToMany,
        }
    }
}

/// Ordered candidate places plus the caps they were enumerated under.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub caps: ArityCaps,
    /// Count of candidates appended after enumeration (teacher forcing).
    pub injected: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn position(&self, inputs: &BTreeSet<usize>, outputs: &BTreeSet<usize>) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| &c.inputs == inputs && &c.outputs == outputs)
    }

    /// Appends a candidate that enumeration missed; returns its index.
    pub fn inject(&mut self, inputs: BTreeSet<usize>, outputs: BTreeSet<usize>) -> usize {
        debug_assert!(self.position(&inputs, &outputs).is_none());
        self.candidates.push(Candidate { inputs, outputs });
        self.injected += 1;
        self.candidates.len() - 1
    }
}

/// Computes the relation matrices over the full alphabet, start/end included.
pub fn compute_relations(log: &EventLog, k_max: usize) -> AlphaRelations {
    assert!(k_max >= 1, "k_max must be at least 1");
    let n = log.alphabet().len();
    let mut eventually = vec![vec![vec![false; n]; n]; k_max];
    for (trace, _) in log.variants() {
        for i in 0..trace.len() {
            for k in 1..=k_max.min(trace.len().saturating_sub(i + 1)) {
                eventually[k - 1][trace[i]][trace[i + k]] = true;
            }
        }
    }
    let directly = eventually[0].clone();
    let mut causal = vec![vec![false; n]; n];
    let mut conflict = vec![vec![false; n]; n];
    let mut parallel = vec![vec![false; n]; n];
    for a in 0..n {
        for b in 0..n {
            match (directly[a][b], directly[b][a]) {
                (true, false) => causal[a][b] = true,
                (false, false) => conflict[a][b] = true,
                (true, true) => parallel[a][b] = true,
                (false, true) => {}
            }
        }
    }
    AlphaRelations {
        n,
        k_max,
        directly_follows: directly,
        eventually_follows: eventually,
        causal,
        conflict,
        parallel,
    }
}

/// Enumerates candidate places in the four classes, canonically ordered by
/// class then sorted activity indices.
pub fn enumerate_candidates(rel: &AlphaRelations, caps: ArityCaps) -> CandidateSet {
    assert!(caps.max_in >= 1 && caps.max_out >= 1);
    let n = rel.n;
    let none_parallel = |set: &[usize]| -> bool {
        set.iter()
            .enumerate()
            .all(|(i, &a)| set[i + 1..].iter().all(|&b| !rel.parallel[a][b]))
    };

    // 1-1: pairs related by eventually-follows within the window.
    let mut one_one: Vec<Candidate> = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if rel.eventually_within(a, b) {
                one_one.push(Candidate {
                    inputs: BTreeSet::from([a]),
                    outputs: BTreeSet::from([b]),
                });
            }
        }
    }

    // 1-n: output sets drawn from a shared input's 1-1 partners, pairwise
    // non-parallel. n-1 symmetric.
    let partners_out: Vec<Vec<usize>> = (0..n)
        .map(|a| (0..n).filter(|&b| rel.eventually_within(a, b)).collect())
        .collect();
    let partners_in: Vec<Vec<usize>> = (0..n)
        .map(|b| (0..n).filter(|&a| rel.eventually_within(a, b)).collect())
        .collect();

    let mut one_many: Vec<Candidate> = Vec::new();
    for a in 0..n {
        for subset in nonparallel_subsets(&partners_out[a], caps.max_out, rel) {
            if subset.len() > 1 {
                one_many.push(Candidate {
                    inputs: BTreeSet::from([a]),
                    outputs: subset.into_iter().collect(),
                });
            }
        }
    }
    let mut many_one: Vec<Candidate> = Vec::new();
    for b in 0..n {
        for subset in nonparallel_subsets(&partners_in[b], caps.max_in, rel) {
            if subset.len() > 1 {
                many_one.push(Candidate {
                    inputs: subset.into_iter().collect(),
                    outputs: BTreeSet::from([b]),
                });
            }
        }
    }

    // n-n: extend 1-n inputs or n-1 outputs, non-parallel on the grown side.
    let mut many_many: BTreeSet<Candidate> = BTreeSet::new();
    let mut by_outputs: BTreeMap<&BTreeSet<usize>, Vec<usize>> = BTreeMap::new();
    for c in &one_many {
        by_outputs
            .entry(&c.outputs)
            .or_default()
            .push(*c.inputs.first().unwrap());
    }
    for (outputs, sources) in by_outputs {
        for subset in nonparallel_subsets(&sources, caps.max_in, rel) {
            if subset.len() > 1 {
                many_many.insert(Candidate {
                    inputs: subset.into_iter().collect(),
                    outputs: outputs.clone(),
                });
            }
        }
    }
    let mut by_inputs: BTreeMap<&BTreeSet<usize>, Vec<usize>> = BTreeMap::new();
    for c in &many_one {
        by_inputs
            .entry(&c.inputs)
            .or_default()
            .push(*c.outputs.first().unwrap());
    }
    for (inputs, sinks) in by_inputs {
        for subset in nonparallel_subsets(&sinks, caps.max_out, rel) {
            if subset.len() > 1 {
                many_many.insert(Candidate {
                    inputs: inputs.clone(),
                    outputs: subset.into_iter().collect(),
                });
            }
        }
    }

    let mut candidates = Vec::new();
    for mut class in [
        one_one,
        one_many,
        many_one,
        many_many.into_iter().collect::<Vec<_>>(),
    ] {
        class.sort();
        candidates.extend(class);
    }
    CandidateSet {
        candidates,
        caps,
        injected: 0,
    }
}

/// All subsets of `pool` (sorted, deduplicated) up to `cap` elements whose
/// members are pairwise non-parallel. Includes singletons; callers filter.
fn nonparallel_subsets(pool: &[usize], cap: usize, rel: &AlphaRelations) -> Vec<Vec<usize>> {
    let mut sorted: Vec<usize> = pool.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut result = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    fn recurse(
        sorted: &[usize],
        from: usize,
        cap: usize,
        rel: &AlphaRelations,
        stack: &mut Vec<usize>,
        result: &mut Vec<Vec<usize>>,
    ) {
        if !stack.is_empty() {
            result.push(stack.clone());
        }
        if stack.len() == cap {
            return;
        }
        for i in from..sorted.len() {
            let b = sorted[i];
            if stack.iter().all(|&a| !rel.parallel[a][b]) {
                stack.push(b);
                recurse(sorted, i + 1, cap, rel, stack, result);
                stack.pop();
            }
        }
    }
    recurse(&sorted, 0, cap, rel, &mut stack, &mut result);
    result
}

/// Number of candidate places the log yields under the given window and caps.
pub fn count_candidates(log: &EventLog, k_max: usize, caps: ArityCaps) -> usize {
    let rel = compute_relations(log, k_max);
    enumerate_candidates(&rel, caps).len()
}

/// Debug JSON dump: one entry per candidate with class and label sets.
pub fn candidates_to_json(set: &CandidateSet, log: &EventLog) -> String {
    let mut out = String::from("[\n");
    for (i, c) in set.candidates.iter().enumerate() {
        let ins: Vec<&str> = c.inputs.iter().map(|&a| log.label(a)).collect();
        let outs: Vec<&str> = c.outputs.iter().map(|&a| log.label(a)).collect();
        let _ = write!(
            out,
            "  {{\"class\": \"{}\", \"in\": {:?}, \"out\": {:?}}}",
            c.class(),
            ins,
            outs
        );
        out.push_str(if i + 1 < set.candidates.len() { ",\n" } else { "\n" });
    }
    out.push(']');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{parse_log, LogFormat};

    fn log(lines: &str) -> EventLog {
        parse_log(lines, LogFormat::DelimitedText).unwrap()
    }

    fn idx(log: &EventLog, label: &str) -> usize {
        log.alphabet().iter().position(|l| l == label).unwrap()
    }

    #[test]
    fn relations_on_single_trace() {
        let l = log("a,b\n");
        let rel = compute_relations(&l, 1);
        let (a, b) = (idx(&l, "a"), idx(&l, "b"));
        assert!(rel.directly_follows[a][b]);
        assert!(!rel.directly_follows[b][a]);
        assert!(rel.causal[a][b]);
        assert!(!rel.parallel[a][b]);
    }

    #[test]
    fn both_orders_make_parallel() {
        let l = log("a,b\nb,a\n");
        let rel = compute_relations(&l, 1);
        let (a, b) = (idx(&l, "a"), idx(&l, "b"));
        assert!(rel.parallel[a][b]);
        assert!(rel.parallel[b][a]);
        assert!(!rel.causal[a][b]);
    }

    #[test]
    fn unordered_pair_is_conflict() {
        let l = log("a,b\na,c\n");
        let rel = compute_relations(&l, 1);
        let (b, c) = (idx(&l, "b"), idx(&l, "c"));
        assert!(rel.conflict[b][c]);
        assert!(rel.conflict[c][b]);
    }

    #[test]
    fn eventually_follows_window() {
        let l = log("a,b,c\n");
        let rel = compute_relations(&l, 2);
        let (a, c) = (idx(&l, "a"), idx(&l, "c"));
        assert!(!rel.eventually_follows[0][a][c]);
        assert!(rel.eventually_follows[1][a][c]);
        let set = enumerate_candidates(&rel, ArityCaps::default());
        assert!(set
            .position(&BTreeSet::from([a]), &BTreeSet::from([c]))
            .is_some());
    }

    #[test]
    fn one_to_many_from_shared_input() {
        let l = log("a,b\na,c\n");
        let rel = compute_relations(&l, 1);
        let (a, b, c) = (idx(&l, "a"), idx(&l, "b"), idx(&l, "c"));
        let set = enumerate_candidates(&rel, ArityCaps::default());
        assert!(set
            .position(&BTreeSet::from([a]), &BTreeSet::from([b, c]))
            .is_some());
    }

    #[test]
    fn parallel_pair_never_shares_output_set() {
        let l = log("a,b\nb,a\n");
        let rel = compute_relations(&l, 1);
        let (a, b) = (idx(&l, "a"), idx(&l, "b"));
        let set = enumerate_candidates(&rel, ArityCaps::default());
        for c in &set.candidates {
            assert!(
                !(c.outputs.contains(&a) && c.outputs.contains(&b)),
                "parallel pair must not appear together in an output set: {c:?}"
            );
            assert!(!(c.inputs.contains(&a) && c.inputs.contains(&b)));
        }
    }

    #[test]
    fn minimal_log_candidate_count() {
        let l = log("a\n");
        assert_eq!(count_candidates(&l, 1, ArityCaps::default()), 2);
    }

    #[test]
    fn count_is_monotone_in_k() {
        let l = log("a,b,c\nb,a,c\n");
        let caps = ArityCaps::default();
        assert!(count_candidates(&l, 2, caps) >= count_candidates(&l, 1, caps));
    }

    #[test]
    fn ordering_is_stable() {
        let l = log("a,b,c\nb,a,c\na,c\n");
        let rel = compute_relations(&l, 2);
        let s1 = enumerate_candidates(&rel, ArityCaps::default());
        let s2 = enumerate_candidates(&rel, ArityCaps::default());
        assert_eq!(s1.candidates, s2.candidates);
        // Classes appear in canonical order.
        let classes: Vec<PlaceClass> = s1.candidates.iter().map(|c| c.class()).collect();
        let mut sorted = classes.clone();
        sorted.sort();
        assert_eq!(classes, sorted);
    }

    #[test]
    fn injection_appends_and_counts() {
        let l = log("a,b\n");
        let rel = compute_relations(&l, 1);
        let mut set = enumerate_candidates(&rel, ArityCaps::default());
        let before = set.len();
        let i = set.inject(BTreeSet::from([0]), BTreeSet::from([1]));
        assert_eq!(i, before);
        assert_eq!(set.injected, 1);
    }

    #[test]
    fn json_dump_lists_labels() {
        let l = log("a,b\n");
        let rel = compute_relations(&l, 1);
        let set = enumerate_candidates(&rel, ArityCaps::default());
        let json = candidates_to_json(&set, &l);
        assert!(json.contains("\"class\""));
        serde_json::from_str::<serde_json::Value>(&json).unwrap();
    }
}
