use super::{NoiseProfile, NoiseRule, Scope};

pub const BUNDLED_NAMES: [&str; 5] = ["C-like", "P-like", "B-like", "G-like", "identity"];

fn rule(pattern: &str, replacement: &str, probability: f64) -> NoiseRule {
    NoiseRule::new(pattern, replacement, probability, Scope::Anywhere)
}

fn initial(pattern: &str, replacement: &str, probability: f64) -> NoiseRule {
    NoiseRule::new(pattern, replacement, probability, Scope::WordInitial)
}

fn last(pattern: &str, replacement: &str, probability: f64) -> NoiseRule {
    NoiseRule::new(pattern, replacement, probability, Scope::WordFinal)
}

fn profile(name: &str, salt: u64, rules: Vec<NoiseRule>) -> NoiseProfile {
    NoiseProfile {
        name: name.into(),
        salt,
        rules,
    }
}

fn shared() -> Vec<NoiseRule> {
    vec![
        rule("ñ", "nn-", 0.9),
        rule("nn", "nn-", 0.6),
        initial("U", "Û", 0.5),
        rule("ô", "ö", 0.8),
    ]
}

/// Built-in profiles ordered from mildest to strongest divergence.
pub fn bundled_profiles() -> Vec<NoiseProfile> {
    let mut c = shared();
    c.extend([rule("o", "ō", 0.05), rule("ò", "ō", 0.3)]);

    let mut p = shared();
    p.extend([rule("é", "è", 0.7), rule("ê", "è", 0.3), rule("æ", "ê", 0.2)]);

    let mut b = vec![rule("iô", "e-o", 0.8)];
    b.extend(shared());
    b.extend([
        rule("é", "è", 0.7),
        rule("mm", "m", 0.6),
        rule("ff", "f", 0.4),
        rule("ò", "o", 0.4),
        rule("x", "j", 0.3),
    ]);

    let g = vec![
        rule("iô", "e o", 0.8),
        rule("nn", "ñ", 0.9),
        last("â", "ä’", 0.6),
        rule("â", "ä", 0.9),
        rule("ei", "éy", 0.9),
        rule("ô", "ö", 0.8),
        rule("æ", "ä", 0.6),
        rule("o", "u", 0.4),
        rule("ç", "s", 0.5),
        rule("x", "j", 0.5),
        rule("z", "s", 0.3),
        rule("l", "ll", 0.1),
        rule("pp", "p", 0.3),
    ];

    vec![
        profile("C-like", 11, c),
        profile("P-like", 23, p),
        profile("B-like", 37, b),
        profile("G-like", 53, g),
        NoiseProfile::identity(),
    ]
}

pub fn bundled_profile(name: &str) -> Option<NoiseProfile> {
    bundled_profiles().into_iter().find(|p| p.name == name)
}
