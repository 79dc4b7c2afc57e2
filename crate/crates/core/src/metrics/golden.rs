//! Bundled golden mini-corpus with frozen oracle scores.
//!
//! The expected values were computed ahead of this implementation with an
//! independent evaluation of the published metric definitions; tests
//! compare against them at 1e-4.

use super::EvalPair;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn mini_corpus() -> Vec<EvalPair> {
    let raw: [(&str, &[&str]); 5] = [
        (
            "a man speaks while birds chirp in the background",
            &[
                "a man is speaking while birds chirp in the background",
                "a man talks as birds are chirping behind him",
                "someone speaks and birds sing in the distance",
            ],
        ),
        (
            "water flows over the rocks",
            &[
                "water is flowing over rocks in a stream",
                "a stream of water runs over stones",
            ],
        ),
        (
            "a dog barks twice",
            &[
                "a dog barks two times loudly",
                "the dog is barking repeatedly",
                "a large dog barks",
            ],
        ),
        (
            "rain falls on a metal roof",
            &[
                "rain is falling hard on a metal roof",
                "heavy rain hits a tin roof",
                "rain patters on a roof while wind blows",
            ],
        ),
        (
            "a car engine starts and then idles",
            &[
                "a car engine is started and then idles",
                "an engine starts then runs at idle",
                "a vehicle engine turns over and idles",
            ],
        ),
    ];
    raw.iter()
        .enumerate()
        .map(|(i, (hyp, refs))| EvalPair {
            clip_id: format!("golden{:02}", i + 1),
            hyp: toks(hyp),
            refs: refs.iter().map(|r| toks(r)).collect(),
        })
        .collect()
}

/// Frozen oracle values for [`mini_corpus`].
pub mod expected {
    pub const BLEU1: f64 = 0.816550542146;
    pub const BLEU2: f64 = 0.686365354591;
    pub const BLEU3: f64 = 0.574167105434;
    pub const BLEU4: f64 = 0.458943246299;
    pub const ROUGE_L: f64 = 0.702826220004;
    pub const CIDER_D: f64 = 2.183130374839;
}
