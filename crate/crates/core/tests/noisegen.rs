use norma::corpus::MonoCorpus;
use norma::metrics::{copy_baseline_cer, levenshtein};
use norma::noisegen::{
    apply_noise, apply_noise_with_stats, bundled_profile, bundled_profiles, generate_corpus, synthetic_mono,
    NoiseProfile, NoiseRule, Scope, BUNDLED_NAMES,
};
use proptest::prelude::*;

fn profile(rules: Vec<NoiseRule>) -> NoiseProfile {
    NoiseProfile {
        name: "test".into(),
        salt: 3,
        rules,
    }
}

#[test]
fn figure_example_and_identity() {
    let p = profile(vec![NoiseRule::new("ñ", "nn-", 1.0, Scope::Anywhere)]);
    assert_eq!(apply_noise("rondaniña", &p, 0), "rondaninn-a");
    let empty = profile(vec![]);
    assert_eq!(apply_noise("rondaniña", &empty, 9), "rondaniña");
    assert_eq!(apply_noise("Â ô", &NoiseProfile::identity(), 1), "Â ô");
}

#[test]
fn scopes_restrict_matches() {
    let initial = profile(vec![NoiseRule::new("u", "û", 1.0, Scope::WordInitial)]);
    assert_eq!(apply_noise("uva lune u", &initial, 0), "ûva lune û");
    let last = profile(vec![NoiseRule::new("â", "ä’", 1.0, Scope::WordFinal)]);
    assert_eq!(apply_noise("âmâ pâ", &last, 0), "âmä’ pä’");
}

#[test]
fn longest_pattern_wins_and_output_is_not_rescanned() {
    let p = profile(vec![
        NoiseRule::new("n", "m", 1.0, Scope::Anywhere),
        NoiseRule::new("nn", "n", 1.0, Scope::Anywhere),
    ]);
    assert_eq!(apply_noise("nnn", &p, 0), "nm");
    let chain = profile(vec![
        NoiseRule::new("a", "b", 1.0, Scope::Anywhere),
        NoiseRule::new("b", "c", 1.0, Scope::Anywhere),
    ]);
    assert_eq!(apply_noise("ab", &chain, 0), "bc");
}

#[test]
fn profile_json_round_trip_and_validation() {
    for p in bundled_profiles() {
        let back = NoiseProfile::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }
    let bad = r#"{"name":"x","rules":[{"pattern":"","replacement":"a","probability":0.5}]}"#;
    assert!(NoiseProfile::from_json(bad).is_err());
    let bad = r#"{"name":"x","rules":[{"pattern":"a","replacement":"b","probability":1.5}]}"#;
    assert!(NoiseProfile::from_json(bad).is_err());
    let ok = r#"{"name":"x","rules":[{"pattern":"a","replacement":"b","probability":1,"scope":"word-final"}]}"#;
    assert_eq!(NoiseProfile::from_json(ok).unwrap().rules[0].scope, Scope::WordFinal);
    for name in BUNDLED_NAMES {
        assert!(bundled_profile(name).is_some(), "{name}");
    }
}

fn any_profile() -> impl Strategy<Value = NoiseProfile> {
    let rule = ("[abñô]{1,3}", "[abnô-]{0,3}", 0.0f64..=1.0, 0..3usize).prop_map(|(p, r, prob, s)| {
        let scope = [Scope::Anywhere, Scope::WordInitial, Scope::WordFinal][s];
        NoiseRule::new(&p, &r, prob, scope)
    });
    (prop::collection::vec(rule, 0..6), any::<u64>()).prop_map(|(rules, salt)| NoiseProfile {
        name: "p".into(),
        salt,
        rules,
    })
}

proptest! {
    #[test]
    fn edit_bound_holds(text in "[abñôn ]{0,30}", p in any_profile(), seed in any::<u64>()) {
        let (out, stats) = apply_noise_with_stats(&text, &p, seed);
        prop_assert!(levenshtein(&out, &text) <= stats.edit_bound);
        prop_assert!(stats.edits <= stats.edit_bound);
        prop_assert_eq!(apply_noise(&text, &p, seed), out);
    }

    #[test]
    fn zero_probability_is_identity(text in "[abñôn ]{0,30}", p in any_profile(), seed in any::<u64>()) {
        let mut p = p;
        p.rules.iter_mut().for_each(|r| r.probability = 0.0);
        prop_assert_eq!(apply_noise(&text, &p, seed), text);
    }
}

#[test]
fn corpus_generation_is_deterministic_and_order_free() {
    let mono = synthetic_mono(200, 6, 5);
    let p = bundled_profile("G-like").unwrap();
    let a = generate_corpus(&mono, &p, 17, "G").unwrap();
    let b = generate_corpus(&mono, &p, 17, "G").unwrap();
    assert_eq!(a.corpus.to_tsv(), b.corpus.to_tsv());
    assert_eq!(a.corpus.len(), mono.len());
    assert!(a.corpus.pairs.iter().all(|p| p.tag == "G"));
    assert_ne!(a.corpus.to_tsv(), generate_corpus(&mono, &p, 18, "G").unwrap().corpus.to_tsv());

    // The same sentence at the same index gets the same noise whatever surrounds it.
    let head = MonoCorpus::new("head", mono.sentences[..50].to_vec());
    let h = generate_corpus(&head, &p, 17, "G").unwrap();
    assert_eq!(h.corpus.pairs[..], a.corpus.pairs[..50]);

    let id = generate_corpus(&mono, &NoiseProfile::identity(), 1, "I").unwrap();
    assert!(id.corpus.pairs.iter().all(|p| p.source == p.target));
}

#[test]
fn copy_cer_agrees_with_generator_accounting() {
    let mono = synthetic_mono(1000, 8, 2);
    let mut previous = 0.0;
    for name in ["C-like", "P-like", "B-like", "G-like"] {
        let g = generate_corpus(&mono, &bundled_profile(name).unwrap(), 4, name).unwrap();
        let copy = copy_baseline_cer(&g.corpus).unwrap();
        let expected = g.expected_cer();
        assert!(
            (copy - expected).abs() <= 0.2 * expected,
            "{name}: copy {copy:.2} expected {expected:.2}"
        );
        assert!(copy > previous, "{name} should diverge more than its predecessor");
        previous = copy;
    }
}

#[test]
fn synthetic_sentences_look_like_sentences() {
    let mono = synthetic_mono(100, 6, 1);
    assert_eq!(mono.len(), 100);
    for s in &mono.sentences {
        assert!(s.ends_with('.'));
        assert!(s.chars().next().unwrap().is_uppercase());
        let words = s.split(' ').count();
        assert!(words <= 6, "{s}");
    }
    assert_eq!(synthetic_mono(100, 6, 1), mono);
}
