use proptest::prelude::*;

use psadkit::cohort::{kmeans, select_k, silhouette};
use psadkit::dataset::{label_sample, AnxietyScore, Utterance};
use psadkit::featurize::{
    frame_signal, lexical_features, syntactic_features, FeatureSet, LexiconSet, N_FEATURES,
};
use psadkit::stats::wilcoxon_signed_rank;
use psadkit::synth::{gen_corpus, write_corpus, EffectConfig, OutputMode};

fn score(v: i64) -> AnxietyScore {
    AnxietyScore::new(v).unwrap()
}

fn utterances(texts: Vec<String>) -> Vec<Utterance> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Utterance {
            start: i as f64,
            end: i as f64 + 1.0,
            speaker: "participant".into(),
            text,
        })
        .collect()
}

fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 2), 6..25)
}

proptest! {
    #[test]
    fn label_is_monotone_in_concurrent(b in 1i64..=5, c in 1i64..=4) {
        let lo = label_sample(score(b), score(c)).positive;
        let hi = label_sample(score(b), score(c + 1)).positive;
        prop_assert!(!lo || hi);
        prop_assert_eq!(lo, label_sample(score(b), score(c)).positive);
    }

    #[test]
    fn feature_arrays_round_trip(v in prop::array::uniform17(0.0..500.0f64)) {
        let mut v = v;
        v[4] /= 500.0;
        v[9] /= 500.0;
        for x in &mut v[10..] {
            *x = x.round();
        }
        let fs = FeatureSet::from_array(v).unwrap();
        prop_assert_eq!(fs.to_array(), v);
        prop_assert_eq!(fs.to_array().len(), N_FEATURES);
    }

    #[test]
    fn wilcoxon_p_in_unit_interval(pairs in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 1..40)) {
        prop_assume!(pairs.iter().any(|(x, y)| x != y));
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        prop_assert_eq!(r.n_used, pairs.iter().filter(|(x, y)| x != y).count());
        prop_assert!(r.w <= r.w_plus.max(r.w_minus));
    }

    #[test]
    fn frame_count_formula(len in 2usize..5000, frame in 2usize..512, hop in 1usize..300) {
        let wave = vec![0.0; len];
        match frame_signal(&wave, frame, hop) {
            Ok(frames) => {
                prop_assert_eq!(frames.len(), (len - frame) / hop + 1);
                prop_assert!(frames.iter().all(|f| f.len() == frame));
            }
            Err(_) => prop_assert!(len < frame),
        }
    }

    #[test]
    fn text_views_respect_their_ranges(words in prop::collection::vec(
        prop::sample::select(vec!["i", "you", "never", "happy", "worried", "the", "talk", "."]), 1..120)) {
        let n_words = words.iter().filter(|w| **w != ".").count() as u32;
        let text = words.join(" ");
        prop_assume!(text.chars().any(|c| c.is_alphabetic()));
        let t = utterances(vec![text]);
        let s = syntactic_features(&t).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.long_sentence_rate));
        prop_assert!(s.avg_word_count >= 0.0);
        let l = lexical_features(&t, &LexiconSet::builtin()).unwrap();
        for c in [l.pos_emotion, l.neg_emotion, l.i_statements, l.you_statements, l.negations, l.stop_words] {
            prop_assert!(c <= n_words);
        }
    }

    #[test]
    fn kmeans_is_deterministic(p in points(), seed in 0u64..50) {
        let a = kmeans(&p, 2, seed).unwrap();
        let b = kmeans(&p, 2, seed).unwrap();
        prop_assert_eq!(a.assignment, b.assignment);
        prop_assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn selected_k_has_the_best_silhouette(p in points(), seed in 0u64..50) {
        if let Ok(sel) = select_k(&p, 2..=5, seed) {
            let best = sel.scores.iter().find(|s| s.k == sel.best_k).unwrap().silhouette.unwrap();
            for s in &sel.scores {
                if let Some(v) = s.silhouette {
                    prop_assert!(v <= best);
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
            prop_assert!((silhouette(&p, &sel.best_fit.assignment).unwrap() - best).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_output_is_byte_identical(seed in 0u64..1000, n in 4usize..12) {
        let config = EffectConfig { seed, n_participants: n, ..EffectConfig::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let (corpus, truth) = gen_corpus(&config).unwrap();
            write_corpus(dir, &corpus, &truth, OutputMode::Features, seed).unwrap();
        }
        for name in ["manifest.json", "features.csv", "truth.json"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            prop_assert!(x == y, "{} differs", name);
        }
    }
}
