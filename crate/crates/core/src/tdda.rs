//! Text-driven augmentation baseline: a rolling pool of seven exemplars feeds a
//! "generate five more like these" prompt; three pool members are swapped out
//! after every third iteration.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{pseudo_label, split_list_items, AugmentedInstance, Generator};
use crate::corpus::{Dataset, DatasetFormat};
use crate::llm::{Gateway, GENERATION_TEMPERATURE};
use crate::{par, prompts};

pub const POOL_SIZE: usize = 7;
pub const REPLACE_EVERY: usize = 3;
pub const REPLACE_COUNT: usize = 3;
pub const TEXTS_PER_ITERATION: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum TddaError {
    #[error("dataset has {0} instances, the exemplar pool needs {POOL_SIZE}")]
    PoolUnderflow(usize),
}

#[derive(Debug, Default)]
pub struct TddaOutput {
    pub instances: Vec<AugmentedInstance>,
    /// Pool instance ids at each iteration boundary: entry 0 is the initial
    /// pool, entry k the pool after iteration k.
    pub pool_trace: Vec<Vec<String>>,
    pub failures: Vec<String>,
}

/// Target for a generated text: the dataset target mentioned earliest in it
/// (case-insensitive), else the most frequent dataset target.
pub fn assign_target(text: &str, d: &Dataset) -> Option<String> {
    let lower = text.to_lowercase();
    d.targets()
        .iter()
        .filter_map(|t| lower.find(&t.to_lowercase()).map(|pos| (pos, t)))
        .min_by_key(|(pos, t)| (*pos, std::cmp::Reverse(t.len())))
        .map(|(_, t)| t.clone())
        .or_else(|| d.most_frequent_target().map(str::to_string))
}

pub fn tdda_generate(d: &Dataset, iterations: usize, fmt: DatasetFormat, gw: &Gateway, seed: u64) -> Result<TddaOutput, TddaError> {
    let n = d.len();
    if n < POOL_SIZE {
        return Err(TddaError::PoolUnderflow(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = index::sample(&mut rng, n, POOL_SIZE).into_vec();
    let ids = |pool: &[usize]| pool.iter().map(|&i| d.instances()[i].id.clone()).collect::<Vec<_>>();
    let mut out = TddaOutput { pool_trace: vec![ids(&pool)], ..TddaOutput::default() };

    for iter in 1..=iterations {
        let examples: Vec<&str> = pool.iter().map(|&i| d.instances()[i].text.as_str()).collect();
        let req = gw.request(prompts::tdda(fmt, &examples), GENERATION_TEMPERATURE);
        match gw.complete(&req) {
            Ok(reply) => {
                let texts: Vec<String> = split_list_items(&reply.text).into_iter().take(TEXTS_PER_ITERATION).collect();
                let labeled = par::map(&texts, |text| {
                    let target = assign_target(text, d).unwrap_or_default();
                    let label = pseudo_label(text, &target, gw);
                    (target, label)
                });
                for (j, (text, (target, label))) in texts.into_iter().zip(labeled).enumerate() {
                    match label {
                        Ok(label) => out.instances.push(AugmentedInstance {
                            id: format!("tdda:{iter}:{j}"),
                            text,
                            target,
                            pseudo_label: label,
                            rule_id: String::new(),
                            rrs_applied: false,
                            generator: Generator::Tdda,
                            model: gw.model().to_string(),
                            label_rule_agreement: false,
                        }),
                        Err(e) => {
                            log::warn!("tdda iteration {iter} text {j}: {e}");
                            out.failures.push(format!("{iter}/{j}: {e}"));
                        }
                    }
                }
            }
            Err(e) => {
                log::warn!("tdda iteration {iter} skipped: {e}");
                out.failures.push(format!("{iter}: {e}"));
            }
        }

        if iter % REPLACE_EVERY == 0 {
            // Fresh members come from the whole dataset minus the current pool,
            // so earlier evicted members may return.
            let outside: Vec<usize> = (0..n).filter(|i| !pool.contains(i)).collect();
            let k = REPLACE_COUNT.min(outside.len());
            let slots = index::sample(&mut rng, POOL_SIZE, k).into_vec();
            let fresh = index::sample(&mut rng, outside.len(), k).into_vec();
            for (slot, f) in slots.into_iter().zip(fresh) {
                pool[slot] = outside[f];
            }
        }
        out.pool_trace.push(ids(&pool));
    }
    Ok(out)
}
