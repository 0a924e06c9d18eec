#![allow(dead_code)]

use bcrf::corpus::{parse_conll, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Samples a corpus from a fixed two-label Markov chain (`B-NP` / `O`).
/// Each label emits mostly from its own 12-word vocabulary and sometimes
/// from 4 shared, ambiguous words; POS tags are a fixed function of the word.
pub fn chain_corpus(sentences: usize, seed: u64) -> Dataset {
    const OWN: usize = 12;
    const SHARED: usize = 4;
    const P_SHARED: f64 = 0.15;
    const STAY: [f64; 2] = [0.6, 0.5];
    let tags = ["B-NP", "O"];
    let pos = ["NN", "VB", "JJ"];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for _ in 0..sentences {
        let len = rng.gen_range(3..=7);
        let mut y = rng.gen_range(0..2);
        for _ in 0..len {
            let (word, p) = if rng.gen_bool(P_SHARED) {
                let k = rng.gen_range(0..SHARED);
                (format!("s{k}"), pos[2])
            } else {
                let k = rng.gen_range(0..OWN);
                (format!("w{y}_{k}"), pos[y])
            };
            text.push_str(&format!("{word} {p} {}\n", tags[y]));
            if !rng.gen_bool(STAY[y]) {
                y = 1 - y;
            }
        }
        text.push('\n');
    }
    parse_conll(&text, true).unwrap()
}

/// Linearly separable toy corpus: the label is a function of the word.
pub fn separable_corpus(sentences: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nouns = ["dog", "cat", "bird", "fish"];
    let verbs = ["runs", "eats", "sleeps", "swims"];
    let mut text = String::new();
    for _ in 0..sentences {
        let n = rng.gen_range(1..=3);
        for _ in 0..n {
            text.push_str(&format!("the DT B-NP\n{} NN I-NP\n", nouns[rng.gen_range(0..4)]));
            text.push_str(&format!("{} VBZ B-VP\n", verbs[rng.gen_range(0..4)]));
        }
        text.push('\n');
    }
    parse_conll(&text, true).unwrap()
}
