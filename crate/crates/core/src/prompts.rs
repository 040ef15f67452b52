//! Prompt templates. The template text lives in `prompts/*.txt` next to the
//! crate manifest and is compiled in; tests pin the rendered output so edits to
//! those files show up as failures.

use serde::Deserialize;

use crate::corpus::{DatasetFormat, StanceLabel};

pub const P1_ENCODE: &str = include_str!("../prompts/p1_encode.txt");
pub const P2_TARGETS: &str = include_str!("../prompts/p2_targets.txt");
pub const P3_TWEETS: &str = include_str!("../prompts/p3_tweets.txt");
pub const P3_PARAGRAPHS: &str = include_str!("../prompts/p3_paragraphs.txt");
pub const P4_LABEL: &str = include_str!("../prompts/p4_label.txt");
pub const TDDA_SEM16: &str = include_str!("../prompts/tdda_sem16.txt");
pub const TDDA_VAST: &str = include_str!("../prompts/tdda_vast.txt");
const P1_EXEMPLAR_JSON: &str = include_str!("../prompts/p1_exemplar.json");

pub const SLOT_TEXT: &str = "[given text]";
pub const SLOT_TARGET: &str = "[given target]";
pub const SLOT_IF_THEN: &str = "[given if-then]";
pub const SLOT_COUNT: &str = "[count]";
pub const SLOT_EXAMPLE: &str = "{example}";

/// The one-shot demonstration shown inside the rule-extraction prompt.
#[derive(Debug, Clone, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub target: String,
    pub reason: String,
    pub stance: StanceLabel,
}

pub fn p1_exemplar() -> Exemplar {
    serde_json::from_str(P1_EXEMPLAR_JSON).expect("bundled exemplar is valid JSON")
}

fn body(template: &str) -> &str {
    template.strip_suffix('\n').unwrap_or(template)
}

/// Single-pass slot substitution: values are inserted verbatim and never
/// rescanned, so a value that happens to contain a slot marker stays intact.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    'outer: while !rest.is_empty() {
        for (slot, value) in slots {
            if let Some(after) = rest.strip_prefix(slot) {
                out.push_str(value);
                rest = after;
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// Text style for the generation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TextStyle {
    #[default]
    Tweet,
    Paragraph,
}

impl std::str::FromStr for TextStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tweet" => Ok(TextStyle::Tweet),
            "paragraph" => Ok(TextStyle::Paragraph),
            other => Err(format!("unknown text style `{other}`")),
        }
    }
}

pub fn count_word(n: usize) -> String {
    const WORDS: [&str; 10] = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    match n {
        1..=10 => WORDS[n - 1].to_string(),
        _ => n.to_string(),
    }
}

pub fn encode(text: &str, target: &str) -> String {
    let ex = p1_exemplar();
    fill(
        body(P1_ENCODE),
        &[
            ("[example text]", &ex.text),
            ("[example target]", &ex.target),
            ("[example reason]", &ex.reason),
            ("[example stance]", ex.stance.as_str()),
            (SLOT_TEXT, text),
            (SLOT_TARGET, target),
        ],
    )
}

pub fn targets(if_then: &str) -> String {
    fill(body(P2_TARGETS), &[(SLOT_IF_THEN, if_then)])
}

pub fn generate(target: &str, if_then: &str, n: usize, style: TextStyle) -> String {
    let template = match style {
        TextStyle::Tweet => P3_TWEETS,
        TextStyle::Paragraph => P3_PARAGRAPHS,
    };
    fill(body(template), &[(SLOT_COUNT, &count_word(n)), (SLOT_TARGET, target), (SLOT_IF_THEN, if_then)])
}

pub fn label(text: &str, target: &str) -> String {
    fill(body(P4_LABEL), &[(SLOT_TEXT, text), (SLOT_TARGET, target)])
}

pub fn tdda(format: DatasetFormat, examples: &[&str]) -> String {
    let template = match format {
        DatasetFormat::Sem16 => TDDA_SEM16,
        DatasetFormat::Vast => TDDA_VAST,
    };
    fill(body(template), &[(SLOT_EXAMPLE, &examples.join("\n"))])
}

/// Which template a rendered prompt came from, with its recovered slot values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptKind {
    Encode { text: String, target: String },
    Targets { if_then: String },
    Generate { count: String, target: String, if_then: String },
    Label { text: String, target: String },
    Tdda { examples: String },
}

/// Inverse of [`fill`] for one template: matches literal segments in order and
/// returns the text between them. The final slot takes everything up to the
/// template suffix.
fn unfill(template: &str, slots: &[&str], rendered: &str) -> Option<Vec<String>> {
    // Split the template into alternating literal / slot pieces.
    let mut literals = Vec::new();
    let mut order = Vec::new();
    let mut rest = template;
    let mut lit = String::new();
    'outer: while !rest.is_empty() {
        for slot in slots {
            if let Some(after) = rest.strip_prefix(slot) {
                literals.push(std::mem::take(&mut lit));
                order.push(*slot);
                rest = after;
                continue 'outer;
            }
        }
        let ch = rest.chars().next()?;
        lit.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    literals.push(lit);

    let mut pos = rendered.strip_prefix(literals[0].as_str())?;
    let mut values = Vec::with_capacity(order.len());
    for (i, next_lit) in literals.iter().enumerate().skip(1) {
        let last = i == literals.len() - 1;
        let end = if last {
            pos.strip_suffix(next_lit.as_str()).map(str::len)?
        } else if next_lit.is_empty() {
            return None;
        } else {
            pos.find(next_lit.as_str())?
        };
        values.push(pos[..end].to_string());
        pos = &pos[end + next_lit.len()..];
    }
    Some(values)
}

pub fn classify(prompt: &str) -> Option<PromptKind> {
    let ex = p1_exemplar();
    let encode_t = fill(
        body(P1_ENCODE),
        &[
            ("[example text]", &ex.text),
            ("[example target]", &ex.target),
            ("[example reason]", &ex.reason),
            ("[example stance]", ex.stance.as_str()),
        ],
    );
    if let Some(v) = unfill(&encode_t, &[SLOT_TEXT, SLOT_TARGET], prompt) {
        return Some(PromptKind::Encode { text: v[0].clone(), target: v[1].clone() });
    }
    if let Some(v) = unfill(body(P2_TARGETS), &[SLOT_IF_THEN], prompt) {
        return Some(PromptKind::Targets { if_then: v[0].clone() });
    }
    for t in [P3_TWEETS, P3_PARAGRAPHS] {
        if let Some(v) = unfill(body(t), &[SLOT_COUNT, SLOT_TARGET, SLOT_IF_THEN], prompt) {
            return Some(PromptKind::Generate { count: v[0].clone(), target: v[1].clone(), if_then: v[2].clone() });
        }
    }
    if let Some(v) = unfill(body(P4_LABEL), &[SLOT_TEXT, SLOT_TARGET], prompt) {
        return Some(PromptKind::Label { text: v[0].clone(), target: v[1].clone() });
    }
    for t in [TDDA_SEM16, TDDA_VAST] {
        if let Some(v) = unfill(body(t), &[SLOT_EXAMPLE], prompt) {
            return Some(PromptKind::Tdda { examples: v[0].clone() });
        }
    }
    None
}
