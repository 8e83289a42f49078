//! Event logs: ingestion, normalization, truncation and variant sampling.
//!
//! A log is a multiset of traces over an activity alphabet. Traces are stored
//! as index sequences into the alphabet; the artificial start (`>`) and end
//! (`|`) activities are injected by the loader and always sit at alphabet
//! positions 0 and 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::behavior::{self, ArityCaps};
use crate::error::{Error, Result};

/// Reserved label for the artificial start activity.
pub const START_LABEL: &str = ">";
/// Reserved label for the artificial end activity.
pub const END_LABEL: &str = "|";
/// Alphabet index of the start activity.
pub const START: usize = 0;
/// Alphabet index of the end activity.
pub const END: usize = 1;

/// Input file formats understood by [`load_log`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    /// One trace per line, comma-separated activity labels.
    DelimitedText,
    /// One JSON array of activity label strings per line.
    Jsonl,
}

/// A trace as a sequence of alphabet indices, including start/end markers.
pub type Trace = Vec<usize>;

/// An event log: alphabet plus deduplicated trace variants with counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLog {
    alphabet: Vec<String>,
    variants: Vec<(Trace, u64)>,
}

/// Per-activity occurrence counts and normalized frequencies over a log.
#[derive(Debug, Clone)]
pub struct ActivityFrequency {
    pub counts: Vec<u64>,
    pub normalized: Vec<f64>,
}

impl EventLog {
    /// Builds a log from traces given as label sequences without start/end
    /// markers. Variants are deduplicated and stored in canonical order
    /// (count descending, then lexicographic).
    pub fn from_label_traces<S: AsRef<str>>(traces: &[Vec<S>]) -> Result<EventLog> {
        if traces.is_empty() {
            return Err(Error::EmptyLog);
        }
        let mut labels: Vec<&str> = traces
            .iter()
            .flat_map(|t| t.iter().map(|s| s.as_ref()))
            .collect();
        labels.sort_unstable();
        labels.dedup();
        let mut alphabet = vec![START_LABEL.to_string(), END_LABEL.to_string()];
        for l in labels {
            if l == START_LABEL || l == END_LABEL {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("reserved label `{l}` must not appear in source traces"),
                });
            }
            alphabet.push(l.to_string());
        }
        let index: BTreeMap<&str, usize> = alphabet
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut counts: BTreeMap<Trace, u64> = BTreeMap::new();
        for t in traces {
            let mut trace = Vec::with_capacity(t.len() + 2);
            trace.push(START);
            for a in t {
                trace.push(index[a.as_ref()]);
            }
            trace.push(END);
            *counts.entry(trace).or_insert(0) += 1;
        }
        let mut variants: Vec<(Trace, u64)> = counts.into_iter().collect();
        sort_variants(&mut variants);
        Ok(EventLog { alphabet, variants })
    }

    /// Rebuilds a log from index traces (with markers) resolved against an
    /// existing alphabet. Used internally by truncation and sampling.
    fn from_index_traces(alphabet: &[String], traces: Vec<(Trace, u64)>) -> Result<EventLog> {
        let as_labels: Vec<(Vec<&str>, u64)> = traces
            .iter()
            .map(|(t, c)| {
                let body = t[1..t.len() - 1]
                    .iter()
                    .map(|&i| alphabet[i].as_str())
                    .collect();
                (body, *c)
            })
            .collect();
        let mut expanded: Vec<Vec<&str>> = Vec::new();
        for (body, _) in &as_labels {
            expanded.push(body.clone());
        }
        let mut log = EventLog::from_label_traces(&expanded)?;
        // Restore the original counts (from_label_traces saw each variant once).
        let index: BTreeMap<&str, usize> = log
            .alphabet
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut counts: BTreeMap<Trace, u64> = BTreeMap::new();
        for (body, c) in &as_labels {
            let mut trace = vec![START];
            trace.extend(body.iter().map(|l| index[l]));
            trace.push(END);
            *counts.entry(trace).or_insert(0) += c;
        }
        log.variants = counts.into_iter().collect();
        sort_variants(&mut log.variants);
        Ok(log)
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.alphabet[idx]
    }

    pub fn variants(&self) -> &[(Trace, u64)] {
        &self.variants
    }

    /// Total number of traces (variant counts summed).
    pub fn trace_count(&self) -> u64 {
        self.variants.iter().map(|(_, c)| c).sum()
    }

    /// Total number of events including start/end markers.
    pub fn event_count(&self) -> u64 {
        self.variants
            .iter()
            .map(|(t, c)| t.len() as u64 * c)
            .sum()
    }

    /// Occurrence counts and normalized frequencies per alphabet index.
    pub fn frequencies(&self) -> ActivityFrequency {
        let mut counts = vec![0u64; self.alphabet.len()];
        for (t, c) in &self.variants {
            for &a in t {
                counts[a] += c;
            }
        }
        let total = counts.iter().sum::<u64>().max(1) as f64;
        let normalized = counts.iter().map(|&c| c as f64 / total).collect();
        ActivityFrequency { counts, normalized }
    }

    /// Renders a variant body (no markers) as labels, for export.
    fn body_labels(&self, trace: &[usize]) -> Vec<&str> {
        trace[1..trace.len() - 1]
            .iter()
            .map(|&i| self.alphabet[i].as_str())
            .collect()
    }
}

fn sort_variants(variants: &mut [(Trace, u64)]) {
    variants.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
}

/// Loads an event log from a file, injecting start/end markers and
/// deduplicating variants.
pub fn load_log(path: &Path, format: LogFormat) -> Result<EventLog> {
    let content = std::fs::read_to_string(path)?;
    parse_log(&content, format)
}

/// Parses log file content. See [`load_log`].
pub fn parse_log(content: &str, format: LogFormat) -> Result<EventLog> {
    let mut traces: Vec<Vec<String>> = Vec::new();
    for (lineno, raw) in content.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "empty record".into(),
            });
        }
        match format {
            LogFormat::DelimitedText => {
                let labels: Vec<String> = line.split(',').map(str::to_string).collect();
                if labels.iter().any(|l| l.is_empty()) {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "empty activity label".into(),
                    });
                }
                traces.push(labels);
            }
            LogFormat::Jsonl => {
                let labels: Vec<String> =
                    serde_json::from_str(line).map_err(|e| Error::Parse {
                        line: lineno + 1,
                        msg: format!("expected a JSON array of strings: {e}"),
                    })?;
                traces.push(labels);
            }
        }
    }
    if traces.is_empty() {
        return Err(Error::EmptyLog);
    }
    EventLog::from_label_traces(&traces)
}

/// Writes a log back out; each variant is emitted `count` times without the
/// start/end markers, so that reloading yields an equal log.
pub fn write_log(log: &EventLog, format: LogFormat) -> String {
    let mut out = String::new();
    for (trace, count) in log.variants() {
        let body = log.body_labels(trace);
        for _ in 0..*count {
            match format {
                LogFormat::DelimitedText => {
                    let _ = writeln!(out, "{}", body.join(","));
                }
                LogFormat::Jsonl => {
                    let _ = writeln!(out, "{}", serde_json::to_string(&body).unwrap());
                }
            }
        }
    }
    out
}

/// Keeps only the `max_activities` most frequent non-reserved activities,
/// deleting all other events from every trace. Ties keep the
/// lexicographically smaller label.
pub fn truncate_alphabet(log: &EventLog, max_activities: usize) -> Result<EventLog> {
    assert!(max_activities >= 1, "max_activities must be positive");
    let freq = log.frequencies();
    let mut ranked: Vec<usize> = (2..log.alphabet().len()).collect();
    ranked.sort_by(|&a, &b| {
        freq.counts[b]
            .cmp(&freq.counts[a])
            .then_with(|| log.label(a).cmp(log.label(b)))
    });
    let kept: Vec<bool> = {
        let mut kept = vec![false; log.alphabet().len()];
        kept[START] = true;
        kept[END] = true;
        for &a in ranked.iter().take(max_activities) {
            kept[a] = true;
        }
        kept
    };
    let traces: Vec<(Trace, u64)> = log
        .variants()
        .iter()
        .map(|(t, c)| (t.iter().copied().filter(|&a| kept[a]).collect(), *c))
        .collect();
    EventLog::from_index_traces(log.alphabet(), traces)
}

/// Returns the sub-log of the most frequent variants: starts with `min_n`
/// variants and grows toward `max_n` while the candidate-place count stays
/// within `budget`.
pub fn sample_variants(
    log: &EventLog,
    min_n: usize,
    max_n: usize,
    budget: usize,
    k: usize,
    caps: ArityCaps,
) -> Result<EventLog> {
    assert!(1 <= min_n && min_n <= max_n, "need 1 <= min_n <= max_n");
    if log.variants().is_empty() {
        return Err(Error::EmptyLog);
    }
    let take_prefix = |n: usize| -> Result<EventLog> {
        let traces = log.variants()[..n.min(log.variants().len())].to_vec();
        EventLog::from_index_traces(log.alphabet(), traces)
    };
    let mut n = min_n.min(log.variants().len());
    let mut current = take_prefix(n)?;
    while n < max_n && n < log.variants().len() {
        let next = take_prefix(n + 1)?;
        if behavior::count_candidates(&next, k, caps) > budget {
            break;
        }
        n += 1;
        current = next;
    }
    Ok(current)
}
