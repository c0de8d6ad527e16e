use norma::corpus::{ParallelCorpus, SentencePair};
use norma::metrics::{column_order, copy_baseline_cer, corpus_cer, levenshtein, levenshtein_chars, render_table, CerTable};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook recursive definition, exponential time.
fn oracle(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = oracle(ra, rb) + usize::from(x != y);
            sub.min(oracle(ra, b) + 1).min(oracle(a, rb) + 1)
        }
    }
}

fn random_string(rng: &mut ChaCha8Rng, max: usize) -> Vec<char> {
    const ALPHABET: [char; 5] = ['a', 'b', 'ô', 'n', '-'];
    let n = rng.random_range(0..=max);
    (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

#[test]
fn matches_exhaustive_recursion_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sample: Vec<(Vec<char>, Vec<char>)> = (0..1000)
        .map(|_| (random_string(&mut rng, 8), random_string(&mut rng, 8)))
        .collect();
    for (a, b) in &sample {
        assert_eq!(levenshtein_chars(a, b), oracle(a, b), "{a:?} {b:?}");
    }
    // Lengths up to 10 on a smaller share; the oracle is exponential.
    for _ in 0..40 {
        let (a, b) = (random_string(&mut rng, 10), random_string(&mut rng, 10));
        assert_eq!(levenshtein_chars(&a, &b), oracle(&a, &b));
    }
    for (a, b) in &sample {
        assert_eq!(levenshtein_chars(a, b), levenshtein_chars(b, a));
        assert_eq!(levenshtein_chars(a, a), 0);
    }
    for w in sample.windows(3) {
        let (x, y, z) = (&w[0].0, &w[1].0, &w[2].1);
        assert!(levenshtein_chars(x, z) <= levenshtein_chars(x, y) + levenshtein_chars(y, z));
    }
}

proptest! {
    #[test]
    fn metric_axioms(a in "[abcñô ]{0,12}", b in "[abcñô ]{0,12}", c in "[abcñô ]{0,12}") {
        let d = levenshtein;
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        let (la, lb) = (a.chars().count(), b.chars().count());
        prop_assert!(d(&a, &b) >= la.abs_diff(lb));
        prop_assert!(d(&a, &b) <= la.max(lb));
    }
}

#[test]
fn composed_and_decomposed_forms_agree() {
    assert_eq!(levenshtein("ciôso", "cio\u{302}so"), 0);
    assert_eq!(levenshtein("nn-", "ñ"), 3);
    assert_eq!(levenshtein("kitten", "sitting"), 3);
}

#[test]
fn corpus_cer_is_micro_averaged() {
    let cer = corpus_cer(&["abc", "x"], &["abd", "xyzw"]).unwrap();
    assert!((cer - 100.0 * 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(corpus_cer(&["a"], &["a"]).unwrap(), 0.0);
    assert!(corpus_cer(&["a"], &[""]).is_err());
    assert!(corpus_cer(&["a", "b"], &["a"]).is_err());
}

fn tagged(rng: &mut ChaCha8Rng, n: usize) -> ParallelCorpus {
    let pairs = (0..n)
        .map(|i| {
            let tag = ["P", "B", "C", "G"][i % 4];
            let t: String = random_string(rng, 9).into_iter().collect();
            let s: String = random_string(rng, 9).into_iter().collect();
            SentencePair::new(format!("y{s}"), format!("x{t}"), tag).unwrap()
        })
        .collect();
    ParallelCorpus::new("t", pairs)
}

#[test]
fn table_scores_are_invariant_under_pair_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus = tagged(&mut rng, 60);
    let hyps: Vec<String> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
    let base = CerTable::score(&hyps, &corpus).unwrap();
    assert_eq!(base, CerTable::copy_baseline(&corpus).unwrap());
    assert!((base.joint.exact_cer() - copy_baseline_cer(&corpus).unwrap()).abs() < 1e-12);

    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng);
    let shuffled = ParallelCorpus::new("s", idx.iter().map(|&i| corpus.pairs[i].clone()).collect());
    let shuffled_hyps: Vec<&str> = idx.iter().map(|&i| hyps[i].as_str()).collect();
    assert_eq!(CerTable::score(&shuffled_hyps, &shuffled).unwrap(), base);
}

#[test]
fn joint_is_union_and_mean_is_per_tag_average() {
    let corpus = ParallelCorpus::new(
        "u",
        vec![
            SentencePair::new("ab", "ab", "P").unwrap(),
            SentencePair::new("xxxxxxxxxx", "yyyyyyyyyy", "G").unwrap(),
        ],
    );
    let t = CerTable::copy_baseline(&corpus).unwrap();
    assert_eq!(t.tags["P"].cer, 0.0);
    assert_eq!(t.tags["G"].cer, 100.0);
    assert!((t.joint.exact_cer() - 100.0 * 10.0 / 12.0).abs() < 1e-12);
    assert_eq!(t.joint.cer, 83.33);
    assert_eq!(t.tag_mean, 50.0);
}

#[test]
fn columns_lead_with_known_tags() {
    assert_eq!(column_order(["G", "Z", "B", "A", "P"]), ["P", "B", "G", "A", "Z"]);
    let corpus = ParallelCorpus::new(
        "c",
        vec![
            SentencePair::new("a", "b", "G").unwrap(),
            SentencePair::new("a", "a", "P").unwrap(),
        ],
    );
    let table = CerTable::copy_baseline(&corpus).unwrap();
    let text = render_table(&[table.row("Copy")]);
    let header = text.lines().next().unwrap();
    let p = header.find(" P").unwrap();
    let g = header.find(" G").unwrap();
    assert!(p < g, "{text}");
    assert!(header.contains("Joint") && header.contains("Mean"));
    assert!(text.contains("100.00"));
}
