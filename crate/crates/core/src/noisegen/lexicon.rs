use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::MonoCorpus;

/// Ligurian-like word list covering the multigraphs and diacritics the
/// bundled profiles rewrite.
pub const LEXICON: &[&str] = &[
    "a", "o", "i", "e", "l’", "de", "do", "da", "in", "con", "pe", "che", "no", "ma", "s’", "gh’", "ghe", "me",
    "te", "se", "ciù", "tanto", "sempre", "ancon", "ancheu", "aoa", "doman", "unna", "un", "rondaniña",
    "teito", "coppi", "sciô", "çittæ", "Zena", "mâ", "cà", "mæ", "pan", "ægua", "figgio", "figgia", "fræ",
    "lengua", "ommo", "donna", "cavallo", "bosco", "sô", "stradda", "pòrta", "gatto", "can", "ciæo", "vin",
    "öio", "sâ", "pescio", "barca", "mainâ", "campaña", "montaña", "castagna", "seña", "baña", "caña",
    "ciôso", "fiôa", "meiga", "preive", "neive", "seia", "parlâ", "cantâ", "mangiâ", "ballâ", "pösâ",
    "affammâ", "andâ", "portâ", "travagiâ", "ciammâ", "fiamma", "é", "perché", "pé", "vêgio", "pæse",
    "stæto", "dixe", "baxo", "camixa", "rexon", "zoveno", "mezo", "çê", "çimma", "mòrto", "mòllo", "còsa",
    "cöse", "möro", "tutto", "luxe", "fûmme", "bello", "bella", "grande", "piccin", "neuvo", "vegio",
    "cheu", "euggio", "man", "testa", "ommi", "dònne", "figgeu", "scheuña", "veddo", "sento", "diggo",
    "fasso", "vaddo", "vegno", "staggo", "ho", "ha", "emmo", "son", "ëse", "aveï", "giorno", "nêutte",
    "matin", "seiaña", "lunaña", "tæra", "cieu", "vento", "ciêuva", "sciumme", "porto", "nave",
    "mercante", "scignoa", "compagno", "amigo", "fradello", "sœ", "paddre", "maddre", "nonno", "casa",
    "ciassa", "gexa", "campanin", "scöa", "libbro", "pagina", "parolla", "canson", "muxica", "festa",
];

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// `n` clean sentences of 3 to `max_words` lexicon words, deterministic in `seed`.
pub fn synthetic_mono(n: usize, max_words: usize, seed: u64) -> MonoCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n)
        .map(|_| {
            let len = rng.random_range(3..=max_words.max(3));
            let mut words: Vec<String> = (0..len).map(|_| LEXICON.choose(&mut rng).unwrap().to_string()).collect();
            words[0] = capitalize(&words[0]);
            let mut s = String::new();
            for w in &words {
                s.push_str(w);
                if !w.ends_with('’') {
                    s.push(' ');
                }
            }
            let mut s = s.trim_end().to_string();
            s.push('.');
            s
        })
        .collect();
    MonoCorpus::new(format!("synthetic-{seed}"), sentences)
}
