use super::golden;
use super::*;
use crate::numerics::Rng;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn pair(id: &str, hyp: &str, refs: &[&str]) -> EvalPair {
    EvalPair { clip_id: id.into(), hyp: toks(hyp), refs: refs.iter().map(|r| toks(r)).collect() }
}

// ---------------- BLEU ----------------

#[test]
fn bleu_identical_is_one() {
    let pairs = vec![pair("a", "a dog barks", &["a dog barks"])];
    assert_eq!(bleu_n(&pairs, 1, false).unwrap(), 1.0);
    assert_eq!(bleu_n(&pairs, 3, false).unwrap(), 1.0);
}

#[test]
fn bleu_clipped_counts_hand_value() {
    // clipped unigram 1/3, BP = 1 since hyp longer
    let pairs = vec![pair("a", "the the the", &["the cat"])];
    let b1 = bleu_n(&pairs, 1, false).unwrap();
    assert!((b1 - 1.0 / 3.0).abs() < 1e-12, "{b1}");
}

#[test]
fn bleu_zero_matches_scores_zero() {
    let pairs = vec![pair("a", "x y z", &["a b c"])];
    for n in 1..=4 {
        assert_eq!(bleu_n(&pairs, n, false).unwrap(), 0.0);
    }
    // smoothing makes it positive
    assert!(bleu_n(&pairs, 1, true).unwrap() > 0.0);
}

#[test]
fn bleu_rejects_bad_inputs() {
    assert!(bleu_n(&[], 1, false).is_err());
    let pairs = vec![pair("a", "a b", &["a b"])];
    assert!(bleu_n(&pairs, 5, false).is_err());
    assert!(bleu_n(&pairs, 0, false).is_err());
}

// ---------------- ROUGE-L ----------------

#[test]
fn rouge_identical_and_disjoint() {
    let pairs = vec![pair("a", "a dog barks", &["a dog barks"])];
    assert_eq!(rouge_l(&pairs).unwrap(), 1.0);
    let pairs = vec![pair("a", "x y z", &["a b c"])];
    assert_eq!(rouge_l(&pairs).unwrap(), 0.0);
}

#[test]
fn rouge_hand_value() {
    // LCS = 3, P = 0.75, R = 1.0, F(beta=1.2) = 0.87980769...
    let pairs = vec![pair("a", "a b c d", &["a c d"])];
    let r = rouge_l(&pairs).unwrap();
    assert!((r - 0.8798076923076923).abs() < 1e-12, "{r}");
}

#[test]
fn rouge_rejects_empty_reference() {
    let pairs = vec![EvalPair { clip_id: "a".into(), hyp: toks("a b"), refs: vec![vec![]] }];
    assert!(rouge_l(&pairs).is_err());
}

// ---------------- CIDEr-D ----------------

#[test]
fn cider_single_identical_pair_scores_ten() {
    let pairs = vec![pair("a", "a dog barks in the yard", &["a dog barks in the yard"])];
    let c = cider_d(&pairs).unwrap();
    assert_eq!(c, 10.0);
}

#[test]
fn cider_disjoint_scores_zero() {
    let pairs = vec![
        pair("a", "p q r s", &["a b c d"]),
        pair("b", "k l m n", &["e f g h"]),
    ];
    let c = cider_d(&pairs).unwrap();
    assert_eq!(c, 0.0);
}

#[test]
fn cider_empty_corpus_errors() {
    assert!(cider_d(&[]).is_err());
}

#[test]
fn golden_corpus_matches_frozen_oracle() {
    let pairs = golden::mini_corpus();
    let tol = 1e-4;
    assert!((bleu_n(&pairs, 1, false).unwrap() - golden::expected::BLEU1).abs() < tol);
    assert!((bleu_n(&pairs, 2, false).unwrap() - golden::expected::BLEU2).abs() < tol);
    assert!((bleu_n(&pairs, 3, false).unwrap() - golden::expected::BLEU3).abs() < tol);
    assert!((bleu_n(&pairs, 4, false).unwrap() - golden::expected::BLEU4).abs() < tol);
    assert!((rouge_l(&pairs).unwrap() - golden::expected::ROUGE_L).abs() < tol);
    assert!((cider_d(&pairs).unwrap() - golden::expected::CIDER_D).abs() < tol);
}

#[test]
fn identical_corpus_maxima_exact() {
    // hypothesis := first reference, single-reference clips
    let pairs: Vec<EvalPair> = golden::mini_corpus()
        .into_iter()
        .map(|p| EvalPair {
            clip_id: p.clip_id,
            hyp: p.refs[0].clone(),
            refs: vec![p.refs[0].clone()],
        })
        .collect();
    assert_eq!(bleu_n(&pairs, 1, false).unwrap(), 1.0);
    assert_eq!(bleu_n(&pairs, 4, false).unwrap(), 1.0);
    assert_eq!(rouge_l(&pairs).unwrap(), 1.0);
    assert_eq!(cider_d(&pairs).unwrap(), 10.0);
}

#[test]
fn metrics_permutation_invariant() {
    let mut pairs = golden::mini_corpus();
    let b = bleu_n(&pairs, 4, false).unwrap();
    let r = rouge_l(&pairs).unwrap();
    let c = cider_d(&pairs).unwrap();
    pairs.reverse();
    for p in pairs.iter_mut() {
        p.refs.reverse();
    }
    assert_eq!(bleu_n(&pairs, 4, false).unwrap(), b);
    assert_eq!(rouge_l(&pairs).unwrap(), r);
    assert!((cider_d(&pairs).unwrap() - c).abs() < 1e-12);
}

#[test]
fn metric_ranges_on_random_corpora() {
    let vocab = ["a", "dog", "barks", "water", "flows", "bird", "sings", "loud", "quiet", "wind"];
    let mut rng = Rng::seed_from(31);
    for _ in 0..20 {
        let pairs: Vec<EvalPair> = (0..4)
            .map(|i| {
                let sent = |rng: &mut Rng| -> Vec<String> {
                    let len = 3 + rng.uniform_usize(6);
                    (0..len).map(|_| vocab[rng.uniform_usize(vocab.len())].to_string()).collect()
                };
                EvalPair {
                    clip_id: format!("c{i}"),
                    hyp: sent(&mut rng),
                    refs: (0..1 + rng.uniform_usize(3)).map(|_| sent(&mut rng)).collect(),
                }
            })
            .collect();
        for n in 1..=4 {
            let b = bleu_n(&pairs, n, false).unwrap();
            assert!((0.0..=1.0).contains(&b));
        }
        let r = rouge_l(&pairs).unwrap();
        assert!((0.0..=1.0).contains(&r));
        let c = cider_d(&pairs).unwrap();
        assert!((0.0..=10.0 + 1e-12).contains(&c), "cider {c}");
    }
}

// ---------------- SPIDEr / report ----------------

#[test]
fn spider_matches_published_arithmetic() {
    // display-scaled: (49.1 + 13.1) / 2 = 31.1
    let cider = 4.91; // raw [0, 10]
    let spice = 0.131; // raw [0, 1]
    let s = spider(cider, spice, SpiderMode::Unit);
    assert!((s * 100.0 - 31.1).abs() < 1e-9, "{}", s * 100.0);

    assert_eq!(spider(0.4, 0.04, SpiderMode::Unit), spider(0.4, 0.04, SpiderMode::Unit));
    let raw = spider(4.0, 4.0, SpiderMode::Raw);
    assert_eq!(raw, 4.0); // mean of equals
}

#[test]
fn report_omits_spider_without_spice() {
    let pairs = golden::mini_corpus();
    let rep = MetricReport::evaluate(&pairs, None, SpiderMode::Unit).unwrap();
    assert!(rep.spider.is_none());
    let json = rep.to_json().unwrap();
    assert!(!json.contains("spider\""));

    let rep = MetricReport::evaluate(&pairs, Some(0.131), SpiderMode::Unit).unwrap();
    assert!(rep.spider.is_some());
    assert!(rep.table().contains("SPIDEr"));
}
