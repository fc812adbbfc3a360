//! Deterministic synthetic text for self-contained experiments.
//!
//! Generates a pseudo-language with a Zipfian vocabulary, a small closed set
//! of function words, and paragraph-level topic bursts. The statistics are
//! learnable by a small model and exhibit the head-heavy token distribution
//! that makes greedy decoding of likelihood-trained models loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Number of content words (nouns + verbs + adjectives).
    pub content_words: usize,
    /// Zipf exponent for content-word frequencies.
    pub zipf_exponent: f64,
    /// Total generated size lower bound, in bytes.
    pub target_bytes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { content_words: 900, zipf_exponent: 1.05, target_bytes: 1 << 20, seed: 17 }
    }
}

const FUNCTION_WORDS: &[&str] = &["ta", "po", "nu", "se", "ki", "mo", "ra", "el"];
const CONSONANTS: &[&str] =
    &["b", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word(index: usize) -> String {
    // Base-80 digits over consonant-vowel syllables; offset past the short
    // function-word space so spellings never collide.
    let syllable = |d: usize| format!("{}{}", CONSONANTS[d / VOWELS.len()], VOWELS[d % VOWELS.len()]);
    let n_syll = CONSONANTS.len() * VOWELS.len();
    let mut i = index + n_syll; // at least two syllables
    let mut w = String::new();
    while i > 0 {
        w.push_str(&syllable(i % n_syll));
        i /= n_syll;
    }
    w
}

/// Samples an index in `[0, n)` with Zipf weight 1/(i+1)^s.
fn zipf_index(rng: &mut ChaCha8Rng, cdf: &[f64]) -> usize {
    let u: f64 = rng.random();
    match cdf.binary_search_by(|w| w.partial_cmp(&u).unwrap()) {
        Ok(i) => i,
        Err(i) => i.min(cdf.len() - 1),
    }
}

fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut weights: Vec<f64> = (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(s)).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for w in &mut weights {
        acc += *w / total;
        *w = acc;
    }
    weights
}

/// Generates the corpus text. Deterministic given the config.
pub fn generate(config: &SynthConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.content_words.max(30);
    let words: Vec<String> = (0..n).map(pseudo_word).collect();

    // Class boundaries inside the ranked vocabulary: interleave so that each
    // class gets its own Zipf head.
    let nouns: Vec<&str> = words.iter().enumerate().filter(|(i, _)| i % 5 < 3).map(|(_, w)| w.as_str()).collect();
    let verbs: Vec<&str> = words.iter().enumerate().filter(|(i, _)| i % 5 == 3).map(|(_, w)| w.as_str()).collect();
    let adjs: Vec<&str> = words.iter().enumerate().filter(|(i, _)| i % 5 == 4).map(|(_, w)| w.as_str()).collect();
    let noun_cdf = zipf_cdf(nouns.len(), config.zipf_exponent);
    let verb_cdf = zipf_cdf(verbs.len(), config.zipf_exponent);
    let adj_cdf = zipf_cdf(adjs.len(), config.zipf_exponent);

    let mut out = String::with_capacity(config.target_bytes + 1024);
    while out.len() < config.target_bytes {
        // Paragraph topic: a handful of nouns reused across its sentences.
        let n_topic = rng.random_range(3..=6);
        let topic: Vec<&str> = (0..n_topic).map(|_| nouns[zipf_index(&mut rng, &noun_cdf)]).collect();
        let n_sentences = rng.random_range(4..=9);
        for _ in 0..n_sentences {
            let pick_noun = |rng: &mut ChaCha8Rng| -> &str {
                if rng.random::<f64>() < 0.7 {
                    topic[rng.random_range(0..topic.len())]
                } else {
                    nouns[zipf_index(rng, &noun_cdf)]
                }
            };
            let template = rng.random_range(0..4u32);
            let f = |rng: &mut ChaCha8Rng| FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())];
            let sentence = match template {
                0 => format!(
                    "{} {} {} {} {} .",
                    f(&mut rng),
                    pick_noun(&mut rng),
                    verbs[zipf_index(&mut rng, &verb_cdf)],
                    f(&mut rng),
                    pick_noun(&mut rng),
                ),
                1 => format!(
                    "{} {} {} {} .",
                    f(&mut rng),
                    adjs[zipf_index(&mut rng, &adj_cdf)],
                    pick_noun(&mut rng),
                    verbs[zipf_index(&mut rng, &verb_cdf)],
                ),
                2 => format!(
                    "{} {} {} , {} {} {} .",
                    pick_noun(&mut rng),
                    verbs[zipf_index(&mut rng, &verb_cdf)],
                    pick_noun(&mut rng),
                    f(&mut rng),
                    adjs[zipf_index(&mut rng, &adj_cdf)],
                    pick_noun(&mut rng),
                ),
                _ => format!(
                    "{} {} {} {} {} {} .",
                    pick_noun(&mut rng),
                    f(&mut rng),
                    pick_noun(&mut rng),
                    verbs[zipf_index(&mut rng, &verb_cdf)],
                    f(&mut rng),
                    pick_noun(&mut rng),
                ),
            };
            out.push_str(&sentence);
            out.push(' ');
        }
        out.push('\n');
    }
    out
}
