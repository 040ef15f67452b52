use super::{HiddenStates, Matrix, RenError};

/// Maps a text/target pair and rationale strings to token-level hidden states.
pub trait TextEncoder {
    /// Encodes `[CLS] text [SEP] target [SEP]`.
    fn encode(&self, text: &str, target: &str) -> Result<HiddenStates, RenError>;
    /// Encodes `[CLS] rationale [SEP]`.
    fn encode_rationale(&self, rationale: &str) -> Result<HiddenStates, RenError>;
    fn dim(&self) -> usize;
}

/// Learning-free encoder: each token gets a pseudo-random vector seeded by its
/// hash, plus a small sinusoidal position offset.
#[derive(Debug, Clone)]
pub struct HashedTextEncoder {
    pub d: usize,
    pub seed: u64,
}

impl HashedTextEncoder {
    pub fn new(d: usize, seed: u64) -> Self {
        HashedTextEncoder { d, seed }
    }

    fn token_vector(&self, token: &str) -> impl Iterator<Item = f64> {
        let mut state = token
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64 ^ self.seed, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        (0..self.d).map(move |_| {
            // splitmix64
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
    }

    fn encode_tokens(&self, tokens: &[String]) -> Result<HiddenStates, RenError> {
        let d = self.d;
        let mut m = Matrix::zeros(tokens.len(), d);
        for (pos, tok) in tokens.iter().enumerate() {
            for (j, x) in self.token_vector(tok).enumerate() {
                let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
                let angle = pos as f64 * freq;
                let offset = if j % 2 == 0 { angle.sin() } else { angle.cos() };
                m[(pos, j)] = x + 0.1 * offset;
            }
        }
        HiddenStates::new(m)
    }
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace().map(str::to_lowercase)
}

impl TextEncoder for HashedTextEncoder {
    fn encode(&self, text: &str, target: &str) -> Result<HiddenStates, RenError> {
        let mut tokens = vec!["[CLS]".to_string()];
        tokens.extend(words(text));
        tokens.push("[SEP]".into());
        tokens.extend(words(target));
        tokens.push("[SEP]".into());
        self.encode_tokens(&tokens)
    }

    fn encode_rationale(&self, rationale: &str) -> Result<HiddenStates, RenError> {
        let mut tokens = vec!["[CLS]".to_string()];
        tokens.extend(words(rationale));
        tokens.push("[SEP]".into());
        self.encode_tokens(&tokens)
    }

    fn dim(&self) -> usize {
        self.d
    }
}
