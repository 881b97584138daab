//! Seeded generator for small labeled corpora.
//!
//! Two classes produce sentiment-style sentences, three or four produce
//! topic-style sentences. Every document carries one to three cue words
//! of its own class, sometimes one distractor cue from another class,
//! and neutral filler.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawExample;
use crate::error::{Error, Result};

const SENTIMENT: [&[&str]; 2] = [
    &[
        "terrible", "awful", "boring", "dull", "worst", "hate", "bad", "poor", "waste", "mess",
        "annoying", "weak",
    ],
    &[
        "love",
        "great",
        "excellent",
        "wonderful",
        "best",
        "enjoy",
        "good",
        "brilliant",
        "superb",
        "delightful",
        "fun",
        "beautiful",
    ],
];

const TOPICS: [&[&str]; 4] = [
    &[
        "match", "goal", "team", "coach", "league", "season", "score", "player",
    ],
    &[
        "market",
        "shares",
        "profit",
        "bank",
        "investors",
        "stocks",
        "trade",
        "revenue",
    ],
    &[
        "research",
        "space",
        "software",
        "scientists",
        "data",
        "lab",
        "planet",
        "computer",
    ],
    &[
        "election",
        "minister",
        "government",
        "treaty",
        "border",
        "president",
        "talks",
        "army",
    ],
];

const FILLER: &[&str] = &[
    "the",
    "a",
    "i",
    "it",
    "this",
    "that",
    "was",
    "is",
    "and",
    "of",
    "to",
    "in",
    "movie",
    "music",
    "classical",
    "story",
    "really",
    "very",
    "some",
    "about",
    "with",
    "for",
    "on",
    "at",
    "they",
    "we",
    "just",
    "quite",
    "today",
    "new",
    "week",
    "people",
    "time",
    "show",
    "thing",
    "over",
    "again",
    "one",
    "still",
    "so",
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of inserting one cue word from a different class.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            count: 1200,
            min_len: 6,
            max_len: 20,
            distractor_rate: 0.3,
            seed: 17,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<RawExample>> {
    let lexicon: &[&[&str]] = match spec.classes {
        2 => &SENTIMENT,
        3 | 4 => &TOPICS[..spec.classes],
        c => {
            return Err(Error::invalid(format!(
                "synthetic corpus supports 2 to 4 classes, got {c}"
            )))
        }
    };
    if spec.min_len < 4 || spec.max_len < spec.min_len {
        return Err(Error::invalid(
            "synthetic lengths must satisfy 4 <= min_len <= max_len",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let label = i % spec.classes;
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let cues = rng.random_range(1..=3usize);
        let mut words: Vec<&str> = Vec::with_capacity(len);
        for _ in 0..cues {
            words.push(lexicon[label][rng.random_range(0..lexicon[label].len())]);
        }
        if rng.random_bool(spec.distractor_rate) {
            let other = (label + rng.random_range(1..spec.classes)) % spec.classes;
            words.push(lexicon[other][rng.random_range(0..lexicon[other].len())]);
        }
        while words.len() < len {
            words.push(FILLER[rng.random_range(0..FILLER.len())]);
        }
        words.shuffle(&mut rng);
        out.push(RawExample {
            label,
            text: words.join(" "),
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}
