//! Classification scores and text-similarity analysis.
//!
//! `macro_avg` is the SEM16 convention (mean F1 over favor and against),
//! `macro_f1` the VAST one (mean F1 over all classes). The similarity report
//! samples augmented and test texts and averages pairwise embedding cosine,
//! ROUGE-L and character Levenshtein distance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::par;

/// Character-level edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    // Common prefix and suffix never contribute edits.
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb { diag } else { 1 + diag.min(above).min(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

pub fn rouge_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure over pre-tokenized sequences.
pub fn rouge_l_tokens<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(a, b) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / a.len() as f64;
    let r = lcs / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-L F-measure over lowercased whitespace tokens; 0 if either side is empty.
pub fn rouge(a: &str, b: &str) -> f64 {
    rouge_l_tokens(&rouge_tokens(a), &rouge_tokens(b))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("predictions ({preds}) and golds ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no instances to score")]
    Empty,
    #[error("{0} list is empty")]
    EmptyInput(&'static str),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("prediction for unknown id `{0}`")]
    UnknownId(String),
    #[error("no prediction for gold id `{0}`")]
    MissingPrediction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Report {
    pub per_class: BTreeMap<StanceLabel, f64>,
    pub macro_score: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class F1 and their unweighted mean over `classes`.
pub fn macro_f1(preds: &[StanceLabel], golds: &[StanceLabel], classes: &[StanceLabel]) -> Result<F1Report, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut per_class = BTreeMap::new();
    for &c in classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&p, &g) in preds.iter().zip(golds) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        per_class.insert(c, f1(tp, fp, fn_));
    }
    let macro_score = if classes.is_empty() { 0.0 } else { per_class.values().sum::<f64>() / classes.len() as f64 };
    Ok(F1Report { per_class, macro_score })
}

/// Mean of the favor and against F1 scores.
pub fn macro_avg(preds: &[StanceLabel], golds: &[StanceLabel]) -> Result<f64, MetricError> {
    Ok(macro_f1(preds, golds, &[StanceLabel::Favor, StanceLabel::Against])?.macro_score)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: StanceLabel,
    /// Class probabilities in favor/against/neutral order; may be empty.
    #[serde(default)]
    pub probs: Vec<f64>,
}

/// Aligns predictions with gold labels by id, in gold order.
pub fn align_by_id(preds: &[Prediction], golds: &[(String, StanceLabel)]) -> Result<(Vec<StanceLabel>, Vec<StanceLabel>), MetricError> {
    let by_id: HashMap<&str, StanceLabel> = preds.iter().map(|p| (p.id.as_str(), p.pred)).collect();
    let gold_ids: HashSet<&str> = golds.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(p) = preds.iter().find(|p| !gold_ids.contains(p.id.as_str())) {
        return Err(MetricError::UnknownId(p.id.clone()));
    }
    let mut p = Vec::with_capacity(golds.len());
    let mut g = Vec::with_capacity(golds.len());
    for (id, label) in golds {
        p.push(*by_id.get(id.as_str()).ok_or_else(|| MetricError::MissingPrediction(id.clone()))?);
        g.push(*label);
    }
    Ok((p, g))
}

/// Sentence embeddings for similarity analysis.
pub trait EmbeddingProvider: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError>;
}

/// Deterministic embedding: character n-grams hashed into a fixed number of
/// buckets, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder { dim: 256, n: 3 }
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let chars: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        let mut v = vec![0.0; self.dim];
        for w in chars.windows(self.n.min(chars.len()).max(1)) {
            let h = fnv1a(w.iter().collect::<String>().into_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// OpenAI-style `POST {base_url}/embeddings` provider with an in-memory cache.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    model: String,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        HttpEmbedder {
            client: reqwest::blocking::Client::new(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        if let Some(v) = self.cache.lock().unwrap().get(text) {
            return Ok(v.clone());
        }
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&serde_json::json!({"model": self.model, "input": text}));
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| MetricError::Embedding(e.to_string()))?;
        let status = resp.status();
        let body: serde_json::Value = resp.json().map_err(|e| MetricError::Embedding(e.to_string()))?;
        if !status.is_success() {
            return Err(MetricError::Embedding(format!("status {status}: {body}")));
        }
        let v: Vec<f64> = body
            .pointer("/data/0/embedding")
            .and_then(|e| e.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .ok_or_else(|| MetricError::Embedding("response has no data[0].embedding".into()))?;
        self.cache.lock().unwrap().insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub sim_aug: f64,
    pub sim_test: f64,
    pub rouge: f64,
    pub levenshtein: f64,
    pub iterations: usize,
    pub sample_size: usize,
}

pub const REPORT_ITERATIONS: usize = 10;
pub const REPORT_SAMPLE: usize = 300;

/// Text prepared once for the pairwise loops.
struct Prepared {
    chars: Vec<char>,
    tokens: Vec<String>,
    embedding: Vec<f64>,
}

fn prepare(texts: &[&str], ep: &dyn EmbeddingProvider) -> Result<Vec<Prepared>, MetricError> {
    par::map(texts, |t| {
        Ok(Prepared { chars: t.chars().collect(), tokens: rouge_tokens(t), embedding: ep.embed(t)? })
    })
    .into_iter()
    .collect()
}

/// Means over all unordered pairs within one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithinStats {
    pub cosine: f64,
    pub rouge: f64,
    pub levenshtein: f64,
}

fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn within_stats(items: &[Prepared], parallel: bool) -> WithinStats {
    let pairs = unordered_pairs(items.len());
    if pairs.is_empty() {
        // A lone text is identical to itself.
        return WithinStats { cosine: 1.0, rouge: 1.0, levenshtein: 0.0 };
    }
    let score = |&(i, j): &(usize, usize)| {
        let (a, b) = (&items[i], &items[j]);
        (
            cosine(&a.embedding, &b.embedding),
            rouge_l_tokens(&a.tokens, &b.tokens),
            levenshtein_chars(&a.chars, &b.chars) as u64,
        )
    };
    let scored: Vec<(f64, f64, u64)> = if parallel { par::map(&pairs, score) } else { pairs.iter().map(score).collect() };
    // Sequential sums over an ordered vector keep results identical across
    // thread counts.
    let n = scored.len() as f64;
    let (mut c, mut r, mut l) = (0.0, 0.0, 0u64);
    for (ci, ri, li) in scored {
        c += ci;
        r += ri;
        l += li;
    }
    WithinStats { cosine: c / n, rouge: r / n, levenshtein: l as f64 / n }
}

fn cross_cosine(a: &[Prepared], b: &[Prepared], parallel: bool) -> f64 {
    let row = |x: &Prepared| b.iter().map(|y| cosine(&x.embedding, &y.embedding)).sum::<f64>();
    let sums: Vec<f64> = if parallel { par::map(a, row) } else { a.iter().map(row).collect() };
    sums.iter().sum::<f64>() / (a.len() * b.len()) as f64
}

/// Pairwise statistics over every unordered pair of `texts`, computed
/// sequentially or on the rayon pool. Both paths return identical values.
pub fn pairwise_within(texts: &[&str], ep: &dyn EmbeddingProvider, parallel: bool) -> Result<WithinStats, MetricError> {
    Ok(within_stats(&prepare(texts, ep)?, parallel && par::is_parallel()))
}

pub fn similarity_report(aug: &[&str], test: &[&str], ep: &dyn EmbeddingProvider, seed: u64) -> Result<SimilarityReport, MetricError> {
    similarity_report_with(aug, test, ep, seed, REPORT_ITERATIONS, REPORT_SAMPLE)
}

pub fn similarity_report_with(
    aug: &[&str],
    test: &[&str],
    ep: &dyn EmbeddingProvider,
    seed: u64,
    iterations: usize,
    sample: usize,
) -> Result<SimilarityReport, MetricError> {
    if aug.is_empty() {
        return Err(MetricError::EmptyInput("augmented"));
    }
    if test.is_empty() {
        return Err(MetricError::EmptyInput("test"));
    }
    let iterations = iterations.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_aug = sample.min(aug.len());
    let k_test = sample.min(test.len());
    let parallel = par::is_parallel();
    let (mut sim_aug, mut sim_test, mut rouge_sum, mut lev) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..iterations {
        let mut ai = index::sample(&mut rng, aug.len(), k_aug).into_vec();
        let mut ti = index::sample(&mut rng, test.len(), k_test).into_vec();
        ai.sort_unstable();
        ti.sort_unstable();
        let a = prepare(&ai.iter().map(|&i| aug[i]).collect::<Vec<_>>(), ep)?;
        let t = prepare(&ti.iter().map(|&i| test[i]).collect::<Vec<_>>(), ep)?;
        let w = within_stats(&a, parallel);
        sim_aug += w.cosine;
        rouge_sum += w.rouge;
        lev += w.levenshtein;
        sim_test += cross_cosine(&a, &t, parallel);
    }
    let n = iterations as f64;
    Ok(SimilarityReport {
        sim_aug: sim_aug / n,
        sim_test: sim_test / n,
        rouge: rouge_sum / n,
        levenshtein: lev / n,
        iterations,
        sample_size: k_aug,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use StanceLabel::*;

    /// Full (n+1)×(m+1) table, no trimming or row reuse.
    fn lev_table(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in t.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in t[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(lev_table("kitten", "sitting"), 3);
        assert_eq!(levenshtein("héllo", "hello"), 1);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge("the cat sat", "the cat sat"), 1.0);
        assert_eq!(rouge("a b", "c d"), 0.0);
        assert!((rouge("the cat sat", "the dog sat") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge("", "x"), 0.0);
        assert_eq!(rouge("The CAT", "the cat"), 1.0);
    }

    #[test]
    fn f1_examples() {
        let golds = [Favor, Against, Neutral];
        let r = macro_f1(&golds, &golds, &StanceLabel::ALL).unwrap();
        assert_eq!(r.macro_score, 1.0);
        let r = macro_f1(&[Favor, Favor, Favor], &golds, &StanceLabel::ALL).unwrap();
        assert!((r.per_class[&Favor] - 0.5).abs() < 1e-15);
        assert_eq!(r.per_class[&Against], 0.0);
        assert!((r.macro_score - 1.0 / 6.0).abs() < 1e-15);
        assert!((macro_avg(&[Favor, Favor, Favor], &golds).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(macro_avg(&golds, &golds).unwrap(), 1.0);
        assert_eq!(macro_avg(&[Neutral, Neutral], &[Favor, Against]).unwrap(), 0.0);
        // Neutral absent from both sides.
        let r = macro_f1(&[Favor, Against], &[Favor, Against], &StanceLabel::ALL).unwrap();
        assert_eq!(r.per_class[&Neutral], 0.0);
        assert!(matches!(macro_f1(&[Favor], &[], &StanceLabel::ALL), Err(MetricError::LengthMismatch { .. })));
        assert!(matches!(macro_avg(&[], &[]), Err(MetricError::Empty)));
    }

    #[test]
    fn alignment() {
        let preds = vec![
            Prediction { id: "b".into(), pred: Against, probs: vec![] },
            Prediction { id: "a".into(), pred: Favor, probs: vec![] },
        ];
        let golds = vec![("a".to_string(), Favor), ("b".to_string(), Favor)];
        let (p, g) = align_by_id(&preds, &golds).unwrap();
        assert_eq!(p, [Favor, Against]);
        assert_eq!(g, [Favor, Favor]);
        assert!(align_by_id(&preds[..1], &golds).is_err());
    }

    #[test]
    fn report_degenerate_sample() {
        let aug = vec!["the very same generated tweet"; 300];
        let r = similarity_report(&aug, &["a test text"], &HashedNgramEmbedder::default(), 1).unwrap();
        assert!((r.sim_aug - 1.0).abs() < 1e-12);
        assert_eq!(r.rouge, 1.0);
        assert_eq!(r.levenshtein, 0.0);
        assert_eq!(r.iterations, 10);
        assert_eq!(r.sample_size, 300);
    }

    #[test]
    fn report_single_pair() {
        let ep = HashedNgramEmbedder::default();
        let r = similarity_report(&["a b", "a c"], &["x"], &ep, 3).unwrap();
        assert_eq!(r.rouge, rouge("a b", "a c"));
        assert_eq!(r.levenshtein, 1.0);
        let c = cosine(&ep.embed("a b").unwrap(), &ep.embed("a c").unwrap());
        assert!((r.sim_aug - c).abs() < 1e-12);
        assert!(similarity_report(&[], &["x"], &ep, 1).is_err());
        assert!(similarity_report(&["x"], &[], &ep, 1).is_err());
    }

    #[test]
    fn report_deterministic_and_in_range() {
        let aug: Vec<String> = (0..40).map(|i| format!("tweet number {i} about policy {}", i * 7 % 13)).collect();
        let test: Vec<String> = (0..25).map(|i| format!("test text {i}")).collect();
        let aug: Vec<&str> = aug.iter().map(String::as_str).collect();
        let test: Vec<&str> = test.iter().map(String::as_str).collect();
        let ep = HashedNgramEmbedder::default();
        let a = similarity_report_with(&aug, &test, &ep, 9, 3, 10).unwrap();
        let b = similarity_report_with(&aug, &test, &ep, 9, 3, 10).unwrap();
        assert_eq!(a, b);
        assert!((-1.0..=1.0).contains(&a.sim_aug) && (-1.0..=1.0).contains(&a.sim_test));
        assert!((0.0..=1.0).contains(&a.rouge) && a.levenshtein >= 0.0);
    }

    #[test]
    fn sequential_and_parallel_agree_exactly() {
        let texts: Vec<String> = (0..30).map(|i| format!("some text {i} with words {}", i % 4)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let ep = HashedNgramEmbedder::default();
        assert_eq!(pairwise_within(&refs, &ep, false).unwrap(), pairwise_within(&refs, &ep, true).unwrap());
    }

    proptest! {
        #[test]
        fn levenshtein_matches_table(a in "[abcé]{0,12}", b in "[abcé]{0,12}") {
            prop_assert_eq!(levenshtein(&a, &b), lev_table(&a, &b));
        }

        #[test]
        fn levenshtein_metric_axioms(a in "[ab ]{0,10}", b in "[ab ]{0,10}", c in "[ab ]{0,10}") {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn rouge_symmetric(a in "[xyz ]{0,20}", b in "[xyz ]{0,20}") {
            prop_assert_eq!(rouge(&a, &b), rouge(&b, &a));
        }

        #[test]
        fn macro_f1_permutation_invariant(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let preds: Vec<_> = pairs.iter().map(|p| StanceLabel::from_index(p.0).unwrap()).collect();
            let golds: Vec<_> = pairs.iter().map(|p| StanceLabel::from_index(p.1).unwrap()).collect();
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
            let gg: Vec<_> = idx.iter().map(|&i| golds[i]).collect();
            prop_assert_eq!(macro_f1(&preds, &golds, &StanceLabel::ALL).unwrap(), macro_f1(&pp, &gg, &StanceLabel::ALL).unwrap());
        }
    }
}
