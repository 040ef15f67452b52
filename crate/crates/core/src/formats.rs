//! Validation of the line-record files exchanged between stages and with the
//! external trainer.
//!
//! | kind        | one line holds                 |
//! |-------------|--------------------------------|
//! | instances   | [`LabeledInstance`]            |
//! | rules       | [`IfThenRule`]                 |
//! | augmented   | [`AugmentedInstance`]          |
//! | predictions | [`Prediction`]                 |
//! | weights     | whole-file [`RenFixture`] text |

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::augment::{AugmentedInstance, Generator};
use crate::corpus::LabeledInstance;
use crate::metrics::Prediction;
use crate::ren::{RenFixture, NUM_CLASSES};
use crate::rules::IfThenRule;

pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Instances,
    Rules,
    Augmented,
    Predictions,
    Weights,
}

impl FromStr for FileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "instances" => Ok(FileKind::Instances),
            "rules" => Ok(FileKind::Rules),
            "augmented" => Ok(FileKind::Augmented),
            "predictions" => Ok(FileKind::Predictions),
            "weights" => Ok(FileKind::Weights),
            other => Err(format!("unknown file kind `{other}` (instances|rules|augmented|predictions|weights)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// 1-based; 0 for whole-file problems.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn v(line: usize, message: impl Into<String>) -> Violation {
    Violation { line, message: message.into() }
}

/// Parses every non-blank line as `T`, rejecting keys `T` does not define.
/// Returns the records with their line numbers.
fn parse_lines<T: DeserializeOwned + Serialize>(src: &str, out: &mut Vec<Violation>) -> Vec<(usize, T)> {
    let mut records = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Value = match serde_json::from_str(line) {
            Ok(x) => x,
            Err(e) => {
                out.push(v(ln, format!("not JSON: {e}")));
                continue;
            }
        };
        let rec: T = match serde_json::from_value(raw.clone()) {
            Ok(r) => r,
            Err(e) => {
                out.push(v(ln, e.to_string()));
                continue;
            }
        };
        let known: BTreeSet<String> = match serde_json::to_value(&rec) {
            Ok(serde_json::Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect(),
            _ => BTreeSet::new(),
        };
        if let serde_json::Value::Object(m) = &raw {
            for k in m.keys().filter(|k| !known.contains(*k)) {
                out.push(v(ln, format!("unknown field `{k}`")));
            }
        }
        records.push((ln, rec));
    }
    records
}

fn unique_ids<'a>(ids: impl Iterator<Item = (usize, &'a str)>, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for (ln, id) in ids {
        if id.is_empty() {
            out.push(v(ln, "empty id"));
        } else if !seen.insert(id) {
            out.push(v(ln, format!("duplicate id `{id}`")));
        }
    }
}

fn check_predictions(src: &str, out: &mut Vec<Violation>) {
    let recs: Vec<(usize, Prediction)> = parse_lines(src, out);
    unique_ids(recs.iter().map(|(l, p)| (*l, p.id.as_str())), out);
    for (ln, p) in &recs {
        if p.probs.is_empty() {
            continue;
        }
        if p.probs.len() != NUM_CLASSES {
            out.push(v(*ln, format!("probs has {} entries, expected {NUM_CLASSES}", p.probs.len())));
            continue;
        }
        if p.probs.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            out.push(v(*ln, "probs outside [0, 1]"));
            continue;
        }
        let sum: f64 = p.probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            out.push(v(*ln, format!("probs sum to {sum}")));
        }
    }
}

fn check_augmented(src: &str, out: &mut Vec<Violation>) {
    let recs: Vec<(usize, AugmentedInstance)> = parse_lines(src, out);
    unique_ids(recs.iter().map(|(l, a)| (*l, a.id.as_str())), out);
    for (ln, a) in &recs {
        if a.text.trim().is_empty() || a.target.trim().is_empty() {
            out.push(v(*ln, "empty text or target"));
        }
        match a.generator {
            Generator::Edda if a.rule_id.is_empty() => out.push(v(*ln, "edda instance without rule_id")),
            Generator::Tdda if !a.rule_id.is_empty() => out.push(v(*ln, "tdda instance with rule_id")),
            _ => {}
        }
    }
}

/// Validates `src` as a file of the given kind.
pub fn check_str(kind: FileKind, src: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    match kind {
        FileKind::Instances => {
            let recs: Vec<(usize, LabeledInstance)> = parse_lines(src, &mut out);
            unique_ids(recs.iter().map(|(l, r)| (*l, r.id.as_str())), &mut out);
            for (ln, r) in &recs {
                if r.text.trim().is_empty() || r.target.trim().is_empty() {
                    out.push(v(*ln, "empty text or target"));
                }
            }
        }
        FileKind::Rules => {
            let recs: Vec<(usize, IfThenRule)> = parse_lines(src, &mut out);
            unique_ids(recs.iter().map(|(l, r)| (*l, r.rule_id.as_str())), &mut out);
            for (ln, r) in &recs {
                if r.reason.trim().is_empty() {
                    out.push(v(*ln, "empty reason"));
                }
            }
        }
        FileKind::Augmented => check_augmented(src, &mut out),
        FileKind::Predictions => check_predictions(src, &mut out),
        FileKind::Weights => {
            if let Err(e) = RenFixture::parse(src) {
                out.push(v(0, e.to_string()));
            }
        }
    }
    out.sort_by_key(|x| x.line);
    out
}

pub fn check_file(kind: FileKind, path: &Path) -> Vec<Violation> {
    match std::fs::read_to_string(path) {
        Ok(src) => check_str(kind, &src),
        Err(e) => vec![v(0, format!("cannot read {}: {e}", path.display()))],
    }
}

/// Every EDDA instance must name a rule present in `rules`.
pub fn check_provenance(instances: &[AugmentedInstance], rules: &[IfThenRule]) -> Vec<Violation> {
    let ids: HashSet<&str> = rules.iter().map(|r| r.rule_id.as_str()).collect();
    instances
        .iter()
        .enumerate()
        .filter(|(_, a)| a.generator == Generator::Edda && !ids.contains(a.rule_id.as_str()))
        .map(|(i, a)| v(i + 1, format!("instance `{}` references unknown rule `{}`", a.id, a.rule_id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions() {
        let good = "{\"id\":\"a\",\"pred\":\"favor\",\"probs\":[0.5,0.25,0.25]}\n{\"id\":\"b\",\"pred\":\"neutral\"}\n";
        assert!(check_str(FileKind::Predictions, good).is_empty());
        let bad = "{\"id\":\"a\",\"pred\":\"favor\",\"probs\":[0.5,0.25]}\n\
                   {\"id\":\"a\",\"pred\":\"pro\"}\n\
                   {\"id\":\"c\",\"pred\":\"against\",\"probs\":[0.5,0.5,0.5]}\n\
                   {\"id\":\"d\",\"pred\":\"against\",\"extra\":1}\n\
                   not json\n";
        let lines: Vec<usize> = check_str(FileKind::Predictions, bad).iter().map(|x| x.line).collect();
        assert_eq!(lines, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn augmented_and_provenance() {
        let a = AugmentedInstance {
            id: "x".into(),
            text: "t".into(),
            target: "g".into(),
            pseudo_label: crate::StanceLabel::Favor,
            rule_id: "rule:1".into(),
            rrs_applied: false,
            generator: Generator::Edda,
            model: "m".into(),
            label_rule_agreement: true,
        };
        let src = crate::jsonl::to_string(std::slice::from_ref(&a));
        assert!(check_str(FileKind::Augmented, &src).is_empty());
        assert_eq!(check_provenance(std::slice::from_ref(&a), &[]).len(), 1);
        let mut t = a.clone();
        t.generator = Generator::Tdda;
        assert_eq!(check_str(FileKind::Augmented, &crate::jsonl::to_string(&[t])).len(), 1);
    }

    #[test]
    fn weights() {
        assert_eq!(check_str(FileKind::Weights, "1 2").len(), 1);
    }
}
