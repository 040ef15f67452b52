//! Decoder stage: perturb rule reasons with same-polarity emotion words, then
//! run the target → text → pseudo-label prompt chain to produce augmented
//! instances with provenance.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{stance_keywords, StanceLabel};
use crate::llm::{Gateway, GatewayError, DETERMINISTIC_TEMPERATURE, GENERATION_TEMPERATURE};
use crate::prompts::{self, TextStyle};
use crate::rules::IfThenRule;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub polarity: Polarity,
    /// Sorted and deduplicated.
    pub substitutes: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("`{word}` lists `{substitute}` which has the opposite polarity")]
    PolarityMismatch { word: String, substitute: String },
}

/// Emotion-word substitution table keyed by lowercase word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexEntry>,
}

impl Lexicon {
    /// Parses `word<TAB>polarity<TAB>sub1,sub2,...` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(src: &str) -> Result<Self, LexiconError> {
        let mut entries = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| LexiconError::Line { line: line_no, message };
            let cols: Vec<&str> = line.split('\t').collect();
            let [word, pol, subs] = cols.as_slice() else {
                return Err(bad(format!("expected 3 tab-separated columns, got {}", cols.len())));
            };
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(bad("empty word".into()));
            }
            let polarity = match pol.trim().to_lowercase().as_str() {
                "positive" | "pos" | "+" => Polarity::Positive,
                "negative" | "neg" | "-" => Polarity::Negative,
                other => return Err(bad(format!("unknown polarity `{other}`"))),
            };
            let mut substitutes: Vec<String> = subs
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            substitutes.sort();
            substitutes.dedup();
            if substitutes.is_empty() {
                return Err(bad(format!("`{word}` has no substitutes")));
            }
            if substitutes == [word.clone()] {
                return Err(bad(format!("`{word}` is its own sole substitute")));
            }
            entries.insert(word, LexEntry { polarity, substitutes });
        }
        for (word, e) in &entries {
            for s in &e.substitutes {
                if entries.get(s).is_some_and(|other| other.polarity != e.polarity) {
                    return Err(LexiconError::PolarityMismatch { word: word.clone(), substitute: s.clone() });
                }
            }
        }
        Ok(Lexicon { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, word: &str) -> Option<&LexEntry> {
        self.entries.get(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &LexEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// A piece of a tokenized reason: word runs and the separators between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Word(&'a str),
    Sep(&'a str),
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Splits on whitespace/punctuation boundaries; concatenating the segments
/// reproduces the input.
pub fn segments(s: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = None;
    for (i, c) in s.char_indices() {
        let w = is_word_char(c);
        match in_word {
            Some(prev) if prev != w => {
                out.push(if prev { Segment::Word(&s[start..i]) } else { Segment::Sep(&s[start..i]) });
                start = i;
            }
            _ => {}
        }
        in_word = Some(w);
    }
    if let Some(w) = in_word {
        out.push(if w { Segment::Word(&s[start..]) } else { Segment::Sep(&s[start..]) });
    }
    out
}

fn match_capitalization(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RrsOutcome {
    pub rule: IfThenRule,
    /// Tokens eligible for substitution.
    pub candidates: usize,
    /// Tokens actually replaced.
    pub substituted: usize,
}

/// Random replacement: each lexicon word in the reason is independently, with
/// probability `p`, swapped for a uniformly drawn same-polarity substitute.
/// Stance and all other tokens are untouched. The output carries a fresh rule
/// id derived from the parent's.
pub fn rrs(rule: &IfThenRule, lex: &Lexicon, p: f64, seed: u64) -> IfThenRule {
    rrs_with_stats(rule, lex, p, seed).rule
}

pub fn rrs_with_stats(rule: &IfThenRule, lex: &Lexicon, p: f64, seed: u64) -> RrsOutcome {
    let p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reason = String::with_capacity(rule.reason.len());
    let (mut candidates, mut substituted) = (0, 0);
    for seg in segments(&rule.reason) {
        match seg {
            Segment::Word(w) => match lex.get(w) {
                Some(entry) => {
                    candidates += 1;
                    if rng.gen_bool(p) {
                        let pick = &entry.substitutes[rng.gen_range(0..entry.substitutes.len())];
                        if pick != &w.to_lowercase() {
                            substituted += 1;
                        }
                        reason.push_str(&match_capitalization(w, pick));
                    } else {
                        reason.push_str(w);
                    }
                }
                None => reason.push_str(w),
            },
            Segment::Sep(s) => reason.push_str(s),
        }
    }
    RrsOutcome {
        rule: IfThenRule {
            rule_id: format!("{}~rrs{seed:016x}", rule.rule_id),
            source_id: rule.source_id.clone(),
            reason,
            stance: rule.stance,
            raw: rule.raw.clone(),
        },
        candidates,
        substituted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Edda,
    Tdda,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedInstance {
    pub id: String,
    pub text: String,
    pub target: String,
    pub pseudo_label: StanceLabel,
    /// Empty for generators that do not use rules.
    pub rule_id: String,
    pub rrs_applied: bool,
    pub generator: Generator,
    pub model: String,
    /// Pseudo-label equals the rule's stance. Always false without a rule.
    pub label_rule_agreement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rrs_probability: f64,
    pub tweets_per_target: usize,
    /// Upper bound on how many proposed targets are used per rule (1..=3).
    pub targets_per_rule: usize,
    pub seed: u64,
    pub filter_disagreements: bool,
    pub text_style: TextStyle,
}

impl AugmentConfig {
    pub fn with_seed(seed: u64) -> Self {
        AugmentConfig {
            rrs_probability: 0.3,
            tweets_per_target: 2,
            targets_per_rule: 3,
            seed,
            filter_disagreements: false,
            text_style: TextStyle::Tweet,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.rrs_probability) {
            return Err(AugmentError::Config(format!("rrs_probability {} not in [0,1]", self.rrs_probability)));
        }
        if self.tweets_per_target == 0 {
            return Err(AugmentError::Config("tweets_per_target must be positive".into()));
        }
        if !(1..=3).contains(&self.targets_per_rule) {
            return Err(AugmentError::Config(format!("targets_per_rule {} not in 1..=3", self.targets_per_rule)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no target phrase in reply `{0}`")]
    EmptyTargets(String),
    #[error("wanted {wanted} texts, reply had {got}")]
    InsufficientTexts { wanted: usize, got: usize },
    #[error("no stance keyword in reply `{0}`")]
    UnparseableStance(String),
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("rule list is empty")]
    NoRules,
}

/// Strips a leading list marker (`1.`, `1)`, `-`, `*`, `•`, `Tweet 1:`) and
/// returns the remainder, or `None` if the line has no marker.
fn strip_marker(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    let lower = t.to_ascii_lowercase();
    let mut s = t;
    for word in ["tweet", "paragraph", "sentence", "text"] {
        if lower.starts_with(word) {
            s = t[word.len()..].trim_start();
            break;
        }
    }
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &s[digits..];
    let rest = rest.strip_prefix(['.', ')', ':'])?;
    Some(rest)
}

/// Splits an LLM list reply into items. With list markers, each marker starts
/// an item and text before the first marker is dropped; otherwise items are
/// blank-line separated blocks, or single lines when there are no blank lines.
pub fn split_list_items(reply: &str) -> Vec<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let has_markers = lines.iter().any(|l| strip_marker(l).is_some());
    let mut items: Vec<String> = Vec::new();
    if has_markers {
        let mut current: Option<String> = None;
        for line in lines {
            if let Some(rest) = strip_marker(line) {
                items.extend(current.take());
                current = Some(rest.trim().to_string());
            } else if line.trim().is_empty() {
                items.extend(current.take());
            } else if let Some(cur) = current.as_mut() {
                cur.push(' ');
                cur.push_str(line.trim());
            }
        }
        items.extend(current);
    } else {
        let blocks: Vec<String> = reply
            .split("\n\n")
            .map(|b| b.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" "))
            .collect();
        let non_empty = blocks.iter().filter(|b| !b.is_empty()).count();
        if non_empty > 1 {
            items = blocks;
        } else {
            items = lines.iter().map(|l| l.trim().to_string()).collect();
        }
    }
    items.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn clean_phrase(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '*')
        .trim_end_matches('.')
        .trim()
        .to_string()
}

pub fn parse_targets(reply: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in reply.lines() {
        let body = strip_marker(line).unwrap_or(line);
        if body.trim_end().ends_with(':') {
            continue;
        }
        for piece in body.split(',') {
            let phrase = clean_phrase(piece);
            if !phrase.is_empty() && !out.iter().any(|p| p.eq_ignore_ascii_case(&phrase)) {
                out.push(phrase);
            }
        }
    }
    out.truncate(3);
    out
}

pub fn propose_targets(rule: &IfThenRule, gw: &Gateway) -> Result<Vec<String>, AugmentError> {
    let reply = gw.complete(&gw.request(prompts::targets(&rule.canonical()), DETERMINISTIC_TEMPERATURE))?;
    let targets = parse_targets(&reply.text);
    if targets.is_empty() {
        return Err(AugmentError::EmptyTargets(reply.text));
    }
    Ok(targets)
}

pub fn generate_texts(rule: &IfThenRule, target: &str, gw: &Gateway, n: usize, style: TextStyle) -> Result<Vec<String>, AugmentError> {
    let prompt = prompts::generate(target, &rule.canonical(), n, style);
    let reply = gw.complete(&gw.request(prompt, GENERATION_TEMPERATURE))?;
    let mut texts = split_list_items(&reply.text);
    if texts.len() < n {
        return Err(AugmentError::InsufficientTexts { wanted: n, got: texts.len() });
    }
    texts.truncate(n);
    Ok(texts)
}

/// First stance keyword in the reply wins.
pub fn parse_label_reply(reply: &str) -> Option<StanceLabel> {
    stance_keywords(reply).first().copied()
}

/// Labeling prompt; doubles as the zero-shot LLM classifier.
pub fn pseudo_label(text: &str, target: &str, gw: &Gateway) -> Result<StanceLabel, AugmentError> {
    let reply = gw.complete(&gw.request(prompts::label(text, target), DETERMINISTIC_TEMPERATURE))?;
    parse_label_reply(&reply.text).ok_or(AugmentError::UnparseableStance(reply.text))
}

/// Per-rule RNG seed: the pipeline seed mixed with the rule position.
pub fn rule_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

#[derive(Debug, Default)]
pub struct PipelineOutput {
    pub instances: Vec<AugmentedInstance>,
    /// Perturbed rules referenced by instances with `rrs_applied`.
    pub derived_rules: Vec<IfThenRule>,
    pub failures: Vec<String>,
}

struct RuleResult {
    instances: Vec<AugmentedInstance>,
    derived: Option<IfThenRule>,
    failures: Vec<String>,
}

fn augment_rule(index: usize, rule: &IfThenRule, lex: &Lexicon, cfg: &AugmentConfig, gw: &Gateway) -> RuleResult {
    let mut res = RuleResult { instances: Vec::new(), derived: None, failures: Vec::new() };
    let outcome = rrs_with_stats(rule, lex, cfg.rrs_probability, rule_seed(cfg.seed, index));
    let rrs_applied = outcome.substituted > 0;
    let used = if rrs_applied { &outcome.rule } else { rule };

    let targets = match propose_targets(used, gw) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("rule {}: target proposal failed: {e}", rule.rule_id);
            res.failures.push(format!("{}: {e}", rule.rule_id));
            return res;
        }
    };
    for (ti, target) in targets.iter().take(cfg.targets_per_rule).enumerate() {
        let texts = match generate_texts(used, target, gw, cfg.tweets_per_target, cfg.text_style) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("rule {} target `{target}`: generation failed: {e}", rule.rule_id);
                res.failures.push(format!("{}/{target}: {e}", rule.rule_id));
                continue;
            }
        };
        for (ki, text) in texts.into_iter().enumerate() {
            let label = match pseudo_label(&text, target, gw) {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("rule {} target `{target}` text {ki}: labeling failed: {e}", rule.rule_id);
                    res.failures.push(format!("{}/{target}/{ki}: {e}", rule.rule_id));
                    continue;
                }
            };
            let agree = label == used.stance;
            if cfg.filter_disagreements && !agree {
                continue;
            }
            res.instances.push(AugmentedInstance {
                id: format!("edda:{}:{ti}:{ki}", used.rule_id),
                text,
                target: target.clone(),
                pseudo_label: label,
                rule_id: used.rule_id.clone(),
                rrs_applied,
                generator: Generator::Edda,
                model: gw.model().to_string(),
                label_rule_agreement: agree,
            });
        }
    }
    if rrs_applied {
        res.derived = Some(outcome.rule);
    }
    res
}

/// Full decoder chain over `rules`. Per-rule failures are logged and skipped;
/// output order is rule, then target, then text, regardless of scheduling.
pub fn run_pipeline(rules: &[IfThenRule], lex: &Lexicon, cfg: &AugmentConfig, gw: &Gateway) -> Result<PipelineOutput, AugmentError> {
    cfg.validate()?;
    if rules.is_empty() {
        return Err(AugmentError::NoRules);
    }
    let indexed: Vec<(usize, &IfThenRule)> = rules.iter().enumerate().collect();
    let results = par::map(&indexed, |(i, rule)| augment_rule(*i, rule, lex, cfg, gw));
    let mut out = PipelineOutput::default();
    for r in results {
        out.instances.extend(r.instances);
        out.derived_rules.extend(r.derived);
        out.failures.extend(r.failures);
    }
    Ok(out)
}

/// Lowercased, whitespace-collapsed form used for duplicate detection.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

pub const DEFAULT_MIN_TOKENS: usize = 5;

/// Drops repeats of earlier augmented texts, texts that also appear in
/// training data, and texts under `min_tokens` whitespace tokens. Stable.
/// `train_texts` must already be normalized with [`normalize_text`].
pub fn dedup_filter(items: Vec<AugmentedInstance>, train_texts: &HashSet<String>, min_tokens: usize) -> Vec<AugmentedInstance> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|it| {
            let norm = normalize_text(&it.text);
            norm.split(' ').filter(|t| !t.is_empty()).count() >= min_tokens
                && !train_texts.contains(&norm)
                && seen.insert(norm)
        })
        .collect()
}
