#![allow(dead_code)]

use psadkit::dataset::Corpus;
use psadkit::featurize::{FeatureSet, FEATURE_NAMES, N_FEATURES};
use psadkit::synth::{corpus_features, gen_corpus, EffectConfig, PlantedTruth};

pub fn index(name: &str) -> usize {
    match name {
        "ctx_ne" => N_FEATURES,
        "ctx_ev" => N_FEATURES + 1,
        "grp_high" => N_FEATURES + 2,
        "grp_low" => N_FEATURES + 3,
        _ => FEATURE_NAMES.iter().position(|n| *n == name).unwrap_or_else(|| panic!("no feature {name}")),
    }
}

pub fn features<const N: usize>(entries: &[(&str, f64)]) -> [f64; N] {
    let mut v = [0.0; N];
    for (name, w) in entries {
        v[index(name)] = *w;
    }
    v
}

/// A participant pool where everyone is recorded in both contexts.
pub fn both_contexts(mut config: EffectConfig, n: usize, seed: u64) -> EffectConfig {
    config.n_participants = n;
    config.dual_context_fraction = 1.0;
    config.seed = seed;
    config
}

pub fn planted(config: &EffectConfig) -> (Corpus, Vec<FeatureSet>, PlantedTruth) {
    let (corpus, truth) = gen_corpus(config).unwrap();
    let f = corpus_features(&corpus).unwrap();
    (corpus, f, truth)
}
