//! Encoder stage: ask the LLM for an if-then rationale per labeled instance and
//! parse the reply into an [`IfThenRule`].

use serde::{Deserialize, Serialize};

use crate::corpus::{stance_keywords, LabeledInstance, StanceLabel};
use crate::llm::{ChatRequest, Gateway, GatewayError, DETERMINISTIC_TEMPERATURE};
use crate::{par, prompts};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfThenRule {
    pub rule_id: String,
    /// Originating instance id; empty for synthetic rules.
    pub source_id: String,
    pub reason: String,
    pub stance: StanceLabel,
    /// Verbatim LLM output.
    pub raw: String,
}

impl IfThenRule {
    /// `If (reason) then (attitude is stance)`.
    pub fn canonical(&self) -> String {
        render_canonical(&self.reason, self.stance)
    }
}

pub fn render_canonical(reason: &str, stance: StanceLabel) -> String {
    format!("If ({reason}) then (attitude is {stance})")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no `If (...) then (...)` expression found")]
    NoRuleFound,
    #[error("conclusion `{0}` has no single recognizable stance")]
    UnparseableStance(String),
    #[error("rule has an empty reason")]
    EmptyReason,
}

pub fn render_p1(inst: &LabeledInstance, model: &str) -> ChatRequest {
    ChatRequest::user(model, prompts::encode(&inst.text, &inst.target), DETERMINISTIC_TEMPERATURE)
}

/// Byte offset of the `)` closing the `(` at `open`, if any.
fn matching_paren(s: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

fn skip_ws(s: &str, from: usize) -> usize {
    from + s[from..].len() - s[from..].trim_start().len()
}

fn strip_keyword(s: &str, at: usize, kw: &str) -> Option<usize> {
    let rest = s.get(at..at + kw.len())?;
    rest.eq_ignore_ascii_case(kw).then_some(at + kw.len())
}

#[derive(Debug, Clone, Copy)]
struct RuleMatch<'a> {
    start: usize,
    end: usize,
    reason: &'a str,
    conclusion: &'a str,
}

fn match_at(s: &str, start: usize) -> Option<RuleMatch<'_>> {
    let after_if = strip_keyword(s, start, "if")?;
    let open = skip_ws(s, after_if);
    if !s[open..].starts_with('(') {
        return None;
    }
    let close = matching_paren(s, open)?;
    let then_at = skip_ws(s, close + 1);
    let after_then = strip_keyword(s, then_at, "then")?;
    let open2 = skip_ws(s, after_then);
    if !s[open2..].starts_with('(') {
        return None;
    }
    let close2 = matching_paren(s, open2)?;
    Some(RuleMatch { start, end: close2 + 1, reason: &s[open + 1..close], conclusion: &s[open2 + 1..close2] })
}

fn find_matches(s: &str) -> Vec<RuleMatch<'_>> {
    let mut out = Vec::new();
    let mut prev: Option<char> = None;
    for (i, c) in s.char_indices() {
        let boundary = prev.is_none_or(|p| !p.is_alphanumeric());
        if boundary && (c == 'i' || c == 'I') {
            if let Some(m) = match_at(s, i) {
                out.push(m);
            }
        }
        prev = Some(c);
    }
    out
}

/// Parses the last well-formed `If (<reason>) then (<conclusion>)` in `raw`.
/// Parentheses inside either capture must balance. The stance is the single
/// distinct stance keyword in the conclusion (`pro`/`con` accepted).
///
/// The returned rule has empty `rule_id` and `source_id`.
pub fn parse_if_then(raw: &str) -> Result<IfThenRule, ParseError> {
    let matches = find_matches(raw);
    // Latest end wins; among those ending together the outermost one.
    let chosen = matches
        .iter()
        .max_by(|a, b| a.end.cmp(&b.end).then(b.start.cmp(&a.start)))
        .ok_or(ParseError::NoRuleFound)?;
    if matches.len() > 1 {
        log::debug!("{} if-then expressions in reply, keeping the last", matches.len());
    }
    let mut stances = stance_keywords(chosen.conclusion);
    stances.sort();
    stances.dedup();
    let stance = match stances.as_slice() {
        [one] => *one,
        _ => return Err(ParseError::UnparseableStance(chosen.conclusion.to_string())),
    };
    let reason = chosen.reason.trim();
    if reason.is_empty() {
        return Err(ParseError::EmptyReason);
    }
    Ok(IfThenRule { rule_id: String::new(), source_id: String::new(), reason: reason.to_string(), stance, raw: raw.to_string() })
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Runs the encoder prompt for one instance. The gold label is not shown to the
/// model; a disagreeing parsed stance is kept as-is.
pub fn encode_instance(inst: &LabeledInstance, gw: &Gateway) -> Result<IfThenRule, EncodeError> {
    let reply = gw.complete(&render_p1(inst, gw.model()))?;
    let mut rule = parse_if_then(&reply.text)?;
    rule.rule_id = format!("rule:{}", inst.id);
    rule.source_id = inst.id.clone();
    Ok(rule)
}

#[derive(Debug, Default)]
pub struct EncodeOutcome {
    pub rules: Vec<IfThenRule>,
    pub failures: Vec<(String, String)>,
    /// Rules whose parsed stance differs from the instance's gold label.
    pub disagreements: usize,
}

/// Encodes every instance; failures are logged and collected, never fatal.
/// Output follows input order.
pub fn encode_all(instances: &[LabeledInstance], gw: &Gateway) -> EncodeOutcome {
    let results = par::map(instances, |inst| encode_instance(inst, gw));
    let mut out = EncodeOutcome::default();
    for (inst, res) in instances.iter().zip(results) {
        match res {
            Ok(rule) => {
                if rule.stance != inst.label {
                    out.disagreements += 1;
                    log::info!("rule for {} says {} but gold is {}", inst.id, rule.stance, inst.label);
                }
                out.rules.push(rule);
            }
            Err(e) => {
                log::warn!("no rule for {}: {e}", inst.id);
                out.failures.push((inst.id.clone(), e.to_string()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn inst(text: &str, target: &str) -> LabeledInstance {
        LabeledInstance { id: "x".into(), text: text.into(), target: target.into(), label: StanceLabel::Favor, split: Split::Train }
    }

    #[test]
    fn p1_contains_query_and_marker() {
        let req = render_p1(&inst("t", "p"), "m");
        assert_eq!(req.messages.len(), 1);
        let content = &req.messages[0].content;
        assert!(content.contains(r#"What's the attitude of the sentence "t" to the target "p"?"#));
        assert!(content.contains("[RULE: If (A) then (B)]"));
        assert!(content.contains("If (reason) then (attitude is [stance label])"));
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn p1_differs_only_at_slots() {
        let a = render_p1(&inst("first text", "alpha"), "m").messages[0].content.clone();
        let b = render_p1(&inst("second", "beta"), "m").messages[0].content.clone();
        let a2 = a.replacen("\"first text\" to the target \"alpha\"", "\"second\" to the target \"beta\"", 1);
        assert_eq!(a2, b);
    }

    #[test]
    fn canonical_line() {
        let r = parse_if_then("If (the text praises renewable energy) then (attitude is favor)").unwrap();
        assert_eq!(r.reason, "the text praises renewable energy");
        assert_eq!(r.stance, StanceLabel::Favor);
    }

    #[test]
    fn nested_parenthetical_kept() {
        let r = parse_if_then("[RULE: If (author mocks the target (sarcastically)) then (attitude is against)]").unwrap();
        assert_eq!(r.reason, "author mocks the target (sarcastically)");
        assert_eq!(r.stance, StanceLabel::Against);
    }

    #[test]
    fn errors() {
        assert_eq!(parse_if_then("the attitude is favor"), Err(ParseError::NoRuleFound));
        assert!(matches!(parse_if_then("If (x) then (attitude is unclear)"), Err(ParseError::UnparseableStance(_))));
        assert!(matches!(parse_if_then("If (x) then (favor or against)"), Err(ParseError::UnparseableStance(_))));
        assert_eq!(parse_if_then("If (x then (favor)"), Err(ParseError::NoRuleFound));
        assert_eq!(parse_if_then("If (  ) then (favor)"), Err(ParseError::EmptyReason));
    }

    #[test]
    fn vast_synonyms_and_raw_preserved() {
        let raw = "  If (they like it) then (Pro)\n";
        let r = parse_if_then(raw).unwrap();
        assert_eq!(r.stance, StanceLabel::Favor);
        assert_eq!(r.raw, raw);
    }

    #[test]
    fn last_occurrence_wins() {
        let raw = "Format: If (reason) then (attitude is favor). Answer: If (it is bad) then (attitude is against)";
        let r = parse_if_then(raw).unwrap();
        assert_eq!(r.reason, "it is bad");
        assert_eq!(r.stance, StanceLabel::Against);
    }

    #[test]
    fn word_boundary_required() {
        // "Motif (" should not start a match.
        assert_eq!(parse_if_then("Motif (a) then (favor)"), Err(ParseError::NoRuleFound));
    }

    fn reason_strategy() -> impl Strategy<Value = String> {
        // Balanced parentheses, no stance keywords (all words drawn from a fixed vocabulary).
        let word = prop::sample::select(vec!["the", "author", "likes", "policy", "(very)", "(a (b) c)", "tax", "people", "ok"]);
        prop::collection::vec(word, 1..8).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn canonical_round_trip(reason in reason_strategy(), s in 0usize..3) {
            let stance = StanceLabel::from_index(s).unwrap();
            let r = parse_if_then(&render_canonical(&reason, stance)).unwrap();
            prop_assert_eq!(r.reason, reason);
            prop_assert_eq!(r.stance, stance);
        }

        #[test]
        fn surrounding_text_does_not_matter(prefix in "[a-hj-z .,:]{0,30}", suffix in "[a-hj-z .,:]{0,30}") {
            let core = "If (costs rise (sharply)) then (attitude is against)";
            let r = parse_if_then(&format!("{prefix} {core} {suffix}")).unwrap();
            prop_assert_eq!(r.reason, "costs rise (sharply)");
            prop_assert_eq!(r.stance, StanceLabel::Against);
        }

        #[test]
        fn never_panics(s in "\\PC{0,80}") {
            let _ = parse_if_then(&s);
        }
    }
}
