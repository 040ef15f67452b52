//! Deterministic stand-in for an LLM. It recognises each prompt template and
//! produces a reply in the shape a real model would, derived only from the
//! prompt text. Used by `--mock-gateway` runs and pipeline tests.

use crate::corpus::{stance_keywords, StanceLabel};
use crate::prompts::{classify, PromptKind};
use crate::rules::parse_if_then;

const POSITIVE: [&str; 14] = [
    "love", "great", "support", "good", "happy", "proud", "stand", "best", "hope", "win", "yes", "agree", "thank", "glad",
];
const NEGATIVE: [&str; 14] = [
    "hate", "never", "bad", "angry", "terrible", "wrong", "against", "stop", "shame", "lie", "lies", "worst", "no", "reject",
];
const STOPWORDS: [&str; 16] = [
    "the", "author", "because", "about", "their", "there", "which", "would", "target", "sentence", "attitude", "these",
    "those", "should", "could", "being",
];

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn polarity(text: &str) -> StanceLabel {
    let (mut pos, mut neg) = (0i32, 0i32);
    for w in words(text) {
        if POSITIVE.contains(&w.as_str()) {
            pos += 1;
        }
        if NEGATIVE.contains(&w.as_str()) {
            neg += 1;
        }
    }
    match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => StanceLabel::Favor,
        std::cmp::Ordering::Less => StanceLabel::Against,
        std::cmp::Ordering::Equal => StanceLabel::Neutral,
    }
}

fn snippet(text: &str, n: usize) -> String {
    text.split_whitespace()
        .take(n)
        .map(|w| w.replace(['(', ')', '"'], ""))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_count(word: &str) -> usize {
    const WORDS: [&str; 10] = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    WORDS
        .iter()
        .position(|w| *w == word)
        .map(|i| i + 1)
        .or_else(|| word.parse().ok())
        .unwrap_or(2)
}

fn encode_reply(text: &str, target: &str) -> String {
    let stance = polarity(text);
    let feeling = match stance {
        StanceLabel::Favor => "is happy about",
        StanceLabel::Against => "is angry about",
        StanceLabel::Neutral => "is calm about",
    };
    format!(
        "Let me think step by step.\n[RULE: If (the author {feeling} {target} and writes {}) then (attitude is {stance})]",
        snippet(text, 6)
    )
}

fn targets_reply(if_then: &str) -> String {
    let reason = parse_if_then(if_then).map(|r| r.reason).unwrap_or_else(|_| if_then.to_string());
    let mut topics: Vec<String> = Vec::new();
    for w in words(&reason) {
        if w.len() >= 5 && !STOPWORDS.contains(&w.as_str()) && !topics.contains(&w) {
            topics.push(w);
        }
    }
    let h = fnv1a(if_then) as usize;
    if topics.len() > 2 {
        let first = h % topics.len();
        let second = (first + 1 + h / 7 % (topics.len() - 1)) % topics.len();
        topics = vec![topics[first].clone(), topics[second].clone()];
    }
    if topics.is_empty() {
        topics.push("public policy".into());
    }
    topics.iter().enumerate().map(|(i, t)| format!("{}. {t}", i + 1)).collect::<Vec<_>>().join("\n")
}

fn generate_reply(count: &str, target: &str, if_then: &str) -> String {
    let n = parse_count(count);
    let rule = parse_if_then(if_then).ok();
    let stance = rule.as_ref().map(|r| r.stance).unwrap_or(StanceLabel::Neutral);
    let reason = rule.map(|r| r.reason).unwrap_or_default();
    let openers: &[&str] = match stance {
        StanceLabel::Favor => &["I proudly stand with", "So glad to support", "Great news for everyone who backs", "Thank you for fighting for"],
        StanceLabel::Against => &["I will never accept", "Shame on everyone defending", "Time to stop pretending about", "We must reject"],
        StanceLabel::Neutral => &["Still reading up on", "Some thoughts on", "Here is a neutral take on", "Curious what others think of"],
    };
    let h = fnv1a(&format!("{target}|{if_then}"));
    let mut lines = vec![format!("Here are {n} tweets:")];
    for i in 0..n {
        let opener = openers[(h as usize + i) % openers.len()];
        let tag = target.split_whitespace().collect::<String>();
        lines.push(format!("{}. {opener} {target}, since {}. #{tag} #{}", i + 1, snippet(&reason, 10), (h >> (i * 8)) % 997));
    }
    lines.join("\n")
}

fn label_reply(text: &str) -> String {
    // Generated texts often carry a stance word directly.
    let stance = match stance_keywords(text).first() {
        Some(s) => *s,
        None => polarity(text),
    };
    match stance {
        StanceLabel::Favor => "Favor.".into(),
        StanceLabel::Against => "Against.".into(),
        StanceLabel::Neutral => "Neutral.".into(),
    }
}

fn tdda_reply(examples: &str) -> String {
    let vocab: Vec<String> = words(examples).filter(|w| w.len() >= 5).collect();
    let h = fnv1a(examples) as usize;
    let pick = |k: usize| vocab.get((h / (k + 1)) % vocab.len().max(1)).cloned().unwrap_or_else(|| "policy".into());
    let frames = [
        "I really support {} and hope more people see why it matters.",
        "Honestly {} is the worst idea and we should stop it now.",
        "Every debate about {} ends with the same tired arguments, I agree with the critics.",
        "Proud to say that {} made my community stronger this year.",
        "We must reject {} before it does any more damage to families.",
    ];
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{}. {}", i + 1, f.replace("{}", &pick(i))))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reply for a rendered prompt, or `None` if the prompt matches no template.
pub fn synthetic_reply(prompt: &str) -> Option<String> {
    Some(match classify(prompt)? {
        PromptKind::Encode { text, target } => encode_reply(&text, &target),
        PromptKind::Targets { if_then } => targets_reply(&if_then),
        PromptKind::Generate { count, target, if_then } => generate_reply(&count, &target, &if_then),
        PromptKind::Label { text, .. } => label_reply(&text),
        PromptKind::Tdda { examples } => tdda_reply(&examples),
    })
}
