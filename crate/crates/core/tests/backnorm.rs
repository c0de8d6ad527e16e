use norma::backnorm::{build_augmented_set, reverse_corpus, synthesize_pseudo_parallel, BacknormPlan, Row};
use norma::corpus::{MonoCorpus, ParallelCorpus, SentencePair};
use norma::decoder::DecodeConfig;
use norma::noisegen::{bundled_profile, generate_corpus, synthetic_mono};
use norma::tokenizer::BpeModel;
use norma::transformer::{Hyperparams, Transformer};
use proptest::prelude::*;

fn pairs(texts: &[(&str, &str)], tag: &str) -> ParallelCorpus {
    ParallelCorpus::new(
        tag,
        texts.iter().map(|(s, t)| SentencePair::new(*s, *t, tag).unwrap()).collect(),
    )
}

proptest! {
    #[test]
    fn reversing_twice_is_identity(texts in prop::collection::vec(("[a-zñ]{1,8}", "[a-zô]{1,8}"), 1..20)) {
        let refs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = pairs(&refs, "C");
        let twice = reverse_corpus(&reverse_corpus(&c));
        prop_assert_eq!(&twice.pairs, &c.pairs);
        let once = reverse_corpus(&c);
        for (r, p) in once.pairs.iter().zip(&c.pairs) {
            prop_assert_eq!(&r.source, &p.target);
            prop_assert_eq!(&r.target, &p.source);
            prop_assert_eq!(&r.tag, &p.tag);
        }
    }
}

/// Token count written out independently of the library's accounting.
fn recount(corpora: &[ParallelCorpus], tok: &BpeModel) -> usize {
    let mut n = 0;
    for c in corpora {
        for p in &c.pairs {
            n += tok.encode(&p.source).ids.len();
            n += tok.encode(&p.target).ids.len();
        }
    }
    n
}

fn check_accounting(originals: &[ParallelCorpus], pseudos: &[ParallelCorpus], tok: &BpeModel) {
    let set = build_augmented_set(originals, pseudos, tok).unwrap();
    let a = set.accounting;
    let (n_orig, n_back) = (recount(originals, tok), recount(pseudos, tok));
    assert_eq!((a.n_orig, a.n_back), (n_orig, n_back));
    assert_eq!(a.factor, std::cmp::max(1, n_back / n_orig));
    assert!(a.human_tokens.abs_diff(a.synthetic_tokens) <= n_orig);
    let originals_len: usize = originals.iter().map(|c| c.len()).sum();
    let pseudo_len: usize = pseudos.iter().map(|c| c.len()).sum();
    assert_eq!(set.corpus.len(), a.factor * originals_len + pseudo_len);
    assert_eq!(recount(&[set.corpus.clone()], tok), a.factor * n_orig + n_back);
}

#[test]
fn upsampling_accounting_matches_recount() {
    let mono = synthetic_mono(400, 6, 3);
    let mut originals = Vec::new();
    for (i, tag) in ["P", "B", "C", "G"].into_iter().enumerate() {
        let small = MonoCorpus::new(tag, mono.sentences[i * 20..i * 20 + 20].to_vec());
        let profile = bundled_profile(&format!("{tag}-like")).unwrap();
        originals.push(generate_corpus(&small, &profile, 1, tag).unwrap().corpus);
    }
    let all: Vec<&str> = mono.sentences.iter().map(String::as_str).collect();
    let tok = BpeModel::train_on(all.iter().copied(), 1.5).unwrap();
    let pseudo = |from: usize, to: usize| {
        let texts: Vec<(&str, &str)> = all[from..to].iter().map(|s| (*s, *s)).collect();
        pairs(&texts, "B")
    };
    // Fewer synthetic tokens than human ones: factor clamps at 1.
    check_accounting(&originals, &[pseudo(100, 130)], &tok);
    // About twice as many.
    check_accounting(&originals, &[pseudo(100, 260)], &tok);
    // Many, split over several pseudo corpora.
    check_accounting(&originals, &[pseudo(100, 250), pseudo(250, 400), pseudo(0, 80)], &tok);
    check_accounting(&originals[..1], &[pseudo(100, 400)], &tok);
}

#[test]
fn augmented_set_keeps_tags() {
    let tok = BpeModel::train_on(["ab ba"], 1.0).unwrap();
    let human = pairs(&[("ab", "ba")], "P");
    let synth = pairs(&[("ab ab ab", "ba ba ba"), ("ab ab", "ba ba")], "G");
    let set = build_augmented_set(std::slice::from_ref(&human), std::slice::from_ref(&synth), &tok).unwrap();
    let factor = recount(std::slice::from_ref(&synth), &tok) / recount(std::slice::from_ref(&human), &tok);
    assert!(factor > 1);
    assert_eq!(set.accounting.factor, factor);
    let tags: Vec<&str> = set.corpus.pairs.iter().map(|p| p.tag.as_str()).collect();
    let mut want = vec!["P"; factor];
    want.extend(["G", "G"]);
    assert_eq!(tags, want);
    assert!(build_augmented_set(&[], std::slice::from_ref(&synth), &tok).is_err());
}

#[test]
fn subset_larger_than_corpus_is_rejected() {
    let mono = synthetic_mono(10, 5, 1);
    assert!(mono.subset(11, 0).is_err());
    let s = mono.subset(10, 0).unwrap();
    let mut a = s.sentences.clone();
    let mut b = mono.sentences.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert_eq!(mono.subset(4, 9).unwrap().sentences[..], mono.shuffled(9).sentences[..4]);
}

#[test]
fn synthesis_targets_are_the_monolingual_sentences() {
    let mono = synthetic_mono(30, 5, 2);
    let tok = BpeModel::train_on(mono.sentences.iter().map(String::as_str), 1.25).unwrap();
    let hp = Hyperparams {
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        ..Default::default()
    }
    .with_vocab(tok.vocab_size());
    let model = Transformer::new(hp, 3).unwrap();
    let cfg = DecodeConfig {
        max_output_factor: 0.5,
        ..DecodeConfig::greedy()
    };
    let (corpus, report) = synthesize_pseudo_parallel(&model, &tok, &mono, &cfg, "B").unwrap();
    assert_eq!(report.produced + report.skipped.len(), mono.len());
    assert_eq!(report.produced, corpus.len());
    let kept: Vec<usize> = (0..mono.len()).filter(|i| !report.skipped.iter().any(|(j, _)| j == i)).collect();
    for (p, &i) in corpus.pairs.iter().zip(&kept) {
        assert_eq!(p.target, mono.sentences[i]);
        assert_eq!(p.tag, "B");
    }
}

#[test]
fn plan_and_row_labels() {
    let plan = BacknormPlan {
        reverse_models: vec![],
        mono: "mono.txt".into(),
        decode: DecodeConfig::greedy(),
    };
    assert!(plan.validate().is_err());
    for row in [Row::Specific, Row::Joint, Row::SpecificBn, Row::JointBn, Row::SpecificBnPrime, Row::JointBnPrime] {
        assert_eq!(Row::from_label(row.label()), Some(row));
    }
    assert_eq!(Row::JointBnPrime.label(), "Joint+BN'");
}
