//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails at the end if any criterion failed. Criteria run sequentially in a
//! single test so the timing budgets are not distorted by other tests.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psadkit::cohort::{adjusted_rand_index, fit_cohorts};
use psadkit::dataset::Context;
use psadkit::eval::{
    ablate_layers, ablate_views, compute_metrics, loocv_run, separate_models_experiment, Metrics, MlpConfig,
    MlpTrainer, PsadTrainer,
};
use psadkit::featurize::{acoustic_features, ViewKind};
use psadkit::psad::{gradient_check, pretrain_global, train_psad, LeafKey, PsadConfig, Prepared};
use psadkit::stats::{context_report_all_samples, wilcoxon_signed_rank};
use psadkit::synth::{gen_profiles, EffectConfig, BASE_FEATURES};

use common::{both_contexts, features, index, planted};

const SEEDS: u64 = 10;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("criterion {id:>2} {name:<28} {} {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, name, pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Planted corpora
// ---------------------------------------------------------------------------

/// Context intercepts stronger than group intercepts, lexical main effects.
fn layered_design(seed: u64) -> EffectConfig {
    both_contexts(
        EffectConfig {
            context_shift: features(&[("avg_word_count", 1.8)]),
            group_shift: [0.0; 17],
            participant_correlation: 0.8,
            label_noise: 0.03,
            label_weights: features(&[
                ("pos_emotion", -1.0),
                ("neg_emotion", 1.0),
                ("i_statements", 0.8),
                ("negations", 0.8),
                ("you_statements", -0.5),
                ("stop_words", 0.5),
                ("ctx_ne", -3.0),
                ("ctx_ev", 3.0),
                ("grp_high", 2.5),
                ("grp_low", -2.5),
            ]),
            context_interaction: features(&[("you_statements", -0.6), ("negations", 1.2)]),
            group_interaction: features(&[("stop_words", 0.9)]),
            cell_interaction: [0.0; 17],
            cell_bias: [-1.0, 1.0, 1.0, -1.0],
            ..EffectConfig::default()
        },
        40,
        seed,
    )
}

/// Label model driven by the lexical view, with weak context and group terms.
/// Feature shifts by context and group do not enter the label.
fn lexical_design(seed: u64) -> EffectConfig {
    both_contexts(
        EffectConfig {
            context_shift: features(&[
                ("pitch_delta", -2.7),
                ("zcr_mean", -0.01),
                ("avg_word_count", 2.0),
                ("sentence_count", -3.0),
                ("neg_emotion", -1.0),
            ]),
            group_shift: features(&[
                ("pitch_mean", -10.0),
                ("energy_mean", -0.01),
                ("avg_word_count", 1.0),
                ("stop_words", 15.0),
            ]),
            participant_correlation: 0.8,
            label_noise: 0.03,
            label_weights: features(&[
                ("pos_emotion", -1.5),
                ("neg_emotion", 1.5),
                ("i_statements", 1.2),
                ("negations", 1.2),
                ("you_statements", -0.8),
                ("stop_words", 0.8),
                ("ctx_ne", -1.0),
                ("ctx_ev", 1.0),
                ("grp_high", 0.5),
                ("grp_low", -0.5),
            ]),
            context_interaction: features(&[("you_statements", -0.6), ("negations", 1.2)]),
            group_interaction: features(&[("stop_words", 0.9)]),
            cell_interaction: [0.0; 17],
            cell_bias: [0.0; 4],
            ..EffectConfig::default()
        },
        40,
        seed,
    )
}

/// Lexical effects shared by every routing key, with small per-key slopes on top.
fn shared_design(seed: u64) -> EffectConfig {
    lexical_design(seed)
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let check = gradient_check(100, 0).unwrap();
    let elapsed = t.elapsed();
    report(
        1,
        "gradient oracle",
        check.instances == 100 && check.max_rel_error <= 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "max_rel_error={:.2e} parameters={} time={:.1}s",
            check.max_rel_error,
            check.parameters,
            elapsed.as_secs_f64()
        ),
    )
}

fn layer_bits(layers: &[psadkit::nn::DenseLayer]) -> Vec<u64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).map(|v| v.to_bits()))
        .collect()
}

fn fusion_bits(f: &psadkit::psad::FusionBlock) -> String {
    // Serialized floats round-trip exactly.
    serde_json::to_string(f).unwrap()
}

fn freeze_contract() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..3 {
        let (corpus, f, _) = planted(&layered_design(seed));
        let all: Vec<usize> = (0..corpus.len()).collect();
        let mut config = PsadConfig::default();
        config.train.seed = seed;
        let prep = Prepared::fit(&corpus, &f, &all, seed).unwrap();
        let (snapshot, _) = pretrain_global(&prep.x, &prep.labels, &config).unwrap();
        let model = train_psad(&prep, &config).unwrap();
        let g = config.global_widths.len();

        if fusion_bits(&model.global.fusion) != fusion_bits(&snapshot.fusion)
            || layer_bits(model.global.stack.layers()) != layer_bits(snapshot.stack.layers())
        {
            failures.push(format!("seed {seed}: global stack changed"));
        }
        let frozen_prefix = layer_bits(&snapshot.stack.layers()[..g]);
        for leaf in model.leaves.values() {
            if leaf.fusion.is_some() || layer_bits(&leaf.stack.layers()[..g]) != frozen_prefix {
                failures.push(format!("seed {seed}: leaf {} diverged from the global prefix", leaf.key));
            }
        }
        for ctx in Context::ALL {
            let leaves: Vec<_> = model
                .leaves
                .iter()
                .filter(|(k, _)| k.context == Some(ctx))
                .map(|(_, l)| layer_bits(&l.stack.layers()[g..=g]))
                .collect();
            if leaves.len() != 2 || leaves[0] != leaves[1] {
                failures.push(format!("seed {seed}: {ctx} context layer differs across groups"));
            }
        }
        if model.leaves.len() != LeafKey::all(model.stages()).len() {
            failures.push(format!("seed {seed}: {} leaves", model.leaves.len()));
        }
    }
    report(
        2,
        "freeze contract",
        failures.is_empty(),
        if failures.is_empty() { "3 seeds".into() } else { failures.join("; ") },
    )
}

/// Average ranks of |d|, computed by counting rather than sorting.
fn oracle_ranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn enumerate_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    let ranks = oracle_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            hits += 1;
        }
    }
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

fn wilcoxon_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let n = rng.random_range(1..=12);
        // Small integer grid so ties and zero differences occur.
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (f64::from(rng.random_range(0..6)), f64::from(rng.random_range(0..6))))
            .collect();
        let diffs: Vec<f64> = pairs.iter().map(|(x, y)| y - x).collect();
        if diffs.iter().all(|d| *d == 0.0) {
            continue;
        }
        let got = wilcoxon_signed_rank(&pairs).unwrap().p_value;
        worst = worst.max((got - enumerate_p(&diffs)).abs());
        cases += 1;
    }
    let five: Vec<(f64, f64)> = (1..=5).map(|i| (0.0, f64::from(i))).collect();
    let p5 = wilcoxon_signed_rank(&five).unwrap().p_value;
    report(
        3,
        "wilcoxon oracle",
        worst <= 1e-12 && p5 == 0.0625,
        format!("cases=200 max_abs_diff={worst:.1e} p[1..5]={p5}"),
    )
}

fn brute_metrics(pairs: &[(bool, bool)]) -> Metrics {
    let mut cm = [[0u32; 2]; 2];
    for &(p, a) in pairs {
        cm[usize::from(a)][usize::from(p)] += 1;
    }
    let n = pairs.len() as f64;
    let mut precision = 0.0;
    let mut f1 = 0.0;
    for c in 0..2 {
        let tp = f64::from(cm[c][c]);
        let col = f64::from(cm[0][c] + cm[1][c]);
        let row = f64::from(cm[c][0] + cm[c][1]);
        let p = if col == 0.0 { 0.0 } else { tp / col };
        let r = if row == 0.0 { 0.0 } else { tp / row };
        precision += p;
        f1 += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    Metrics {
        accuracy: 100.0 * f64::from(cm[0][0] + cm[1][1]) / n,
        precision: 100.0 * precision / 2.0,
        f1: 100.0 * f1 / 2.0,
    }
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=80);
        let pairs: Vec<(bool, bool)> = (0..n).map(|_| (rng.random_bool(0.5), rng.random_bool(0.4))).collect();
        if compute_metrics(&pairs).unwrap() != brute_metrics(&pairs) {
            mismatches += 1;
        }
    }
    report(4, "metrics oracle", mismatches == 0, format!("vectors=1000 mismatches={mismatches}"))
}

fn clustering_recovery() -> Outcome {
    let t = Instant::now();
    let mut k2 = 0;
    let mut aris = Vec::new();
    for seed in 0..100 {
        let (profiles, planted) = gen_profiles(30, seed);
        let model = fit_cohorts(&profiles, seed).unwrap();
        if model.k == 2 {
            k2 += 1;
        }
        let fitted: Vec<usize> = profiles.iter().map(|p| model.assign_group(p).unwrap().index()).collect();
        let truth: Vec<usize> = planted.iter().map(|g| g.index()).collect();
        aris.push(adjusted_rand_index(&fitted, &truth));
    }
    let elapsed = t.elapsed();
    let ari = mean(&aris);
    report(
        5,
        "clustering recovery",
        k2 >= 95 && ari >= 0.8 && elapsed < Duration::from_secs(10),
        format!("k=2 in {k2}/100 mean_ari={ari:.3} time={:.1}s", elapsed.as_secs_f64()),
    )
}

fn method_separation() -> Outcome {
    let t = Instant::now();
    let config = PsadConfig::default();
    let mlp = MlpConfig::default();
    let (mut psad, mut base) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let (corpus, f, _) = planted(&both_contexts(EffectConfig::default(), 40, seed));
        psad.push(loocv_run(&corpus, &f, &PsadTrainer::new(config.clone()), seed, 1).unwrap().overall.f1);
        base.push(
            loocv_run(&corpus, &f, &MlpTrainer { config: mlp.clone() }, seed, 1)
                .unwrap()
                .overall
                .f1,
        );
    }
    let elapsed = t.elapsed();
    let (p, m) = (mean(&psad), mean(&base));
    report(
        6,
        "method separation",
        p - m >= 5.0 && elapsed < Duration::from_secs(300),
        format!("psad_f1={p:.1} mlp_f1={m:.1} gap={:.1} time={:.0}s", p - m, elapsed.as_secs_f64()),
    )
}

fn layer_ordering() -> Outcome {
    // Wider layers give the small group leaves enough capacity to beat their context parent.
    let config = PsadConfig {
        k_hidden: 32,
        global_widths: vec![32, 32],
        context_width: 32,
        group_width: 32,
        ..PsadConfig::default()
    };
    let mut ordered = 0;
    let mut sums = [0.0; 4];
    for seed in 0..SEEDS {
        let (corpus, f, _) = planted(&layered_design(seed));
        let r = ablate_layers(&corpus, &f, &config, seed, 1).unwrap();
        let v: Vec<f64> = ["full", "no_group_layer", "no_context_layer", "global_only"]
            .iter()
            .map(|n| r.f1(n).unwrap())
            .collect();
        for (s, x) in sums.iter_mut().zip(&v) {
            *s += x;
        }
        if v[0] > v[1] && v[1] > v[2] && v[2] > v[3] {
            ordered += 1;
        }
    }
    let n = SEEDS as f64;
    report(
        7,
        "layer ablation ordering",
        ordered >= 7,
        format!(
            "ordered in {ordered}/{SEEDS} mean f1 full={:.1} no_group={:.1} no_context={:.1} global={:.1}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n
        ),
    )
}

fn view_ordering() -> Outcome {
    let config = PsadConfig::default();
    let (mut lexical_worst, mut lexical_alpha) = (0, 0);
    for seed in 0..SEEDS {
        let (corpus, f, _) = planted(&lexical_design(seed));
        let r = ablate_views(&corpus, &f, &config, seed, 1).unwrap();
        let lex = r.f1("without_lexical").unwrap();
        if lex < r.f1("without_acoustic").unwrap() && lex < r.f1("without_syntactic").unwrap() {
            lexical_worst += 1;
        }
        let a = &r.alpha;
        if a[&ViewKind::Lexical] > a[&ViewKind::Acoustic] && a[&ViewKind::Lexical] > a[&ViewKind::Syntactic] {
            lexical_alpha += 1;
        }
    }
    report(
        8,
        "view ablation ordering",
        lexical_worst >= 8 && lexical_alpha >= 7,
        format!("lexical removal worst in {lexical_worst}/{SEEDS}, lexical alpha largest in {lexical_alpha}/{SEEDS}"),
    )
}

fn separate_models() -> Outcome {
    let config = PsadConfig::default();
    let mut wins = 0;
    let (mut p, mut s) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let (corpus, f, _) = planted(&shared_design(seed));
        let r = separate_models_experiment(&corpus, &f, &config, seed, 1).unwrap();
        if r.psad.f1 > r.separate.f1 {
            wins += 1;
        }
        p.push(r.psad.f1);
        s.push(r.separate.f1);
    }
    report(
        9,
        "separate models",
        wins >= 8,
        format!(
            "psad ahead in {wins}/{SEEDS} mean f1 psad={:.1} separate={:.1}",
            mean(&p),
            mean(&s)
        ),
    )
}

fn context_power() -> Outcome {
    let mut hits = 0;
    let mut pct = Vec::new();
    for seed in 0..SEEDS {
        let mut config = EffectConfig {
            seed,
            ..EffectConfig::default()
        };
        let awc = index("avg_word_count");
        config.context_shift[awc] = 0.3 * BASE_FEATURES[awc].0;
        let (corpus, f, _) = planted(&config);
        let pairs = corpus.dual_context_participants().len();
        let r = context_report_all_samples(&corpus, &f).unwrap();
        let row = r.row("avg_word_count").unwrap();
        let change = row.pct_change.unwrap_or(f64::NAN);
        pct.push(change);
        if pairs == 20 && change > 0.0 && row.p_value.is_some_and(|p| p < 0.05) {
            hits += 1;
        }
    }
    report(
        10,
        "context report power",
        hits >= 9,
        format!("significant positive in {hits}/{SEEDS} mean_pct={:+.1}%", mean(&pct)),
    )
}

fn dsp_fixtures() -> Outcome {
    let sr = 16_000u32;
    let sine: Vec<f64> = (0..sr)
        .map(|i| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * f64::from(i) / f64::from(sr)).sin())
        .collect();
    let s = acoustic_features(&sine, sr).unwrap().view;
    let bin = f64::from(sr) / 2048.0;
    let alternating: Vec<f64> = (0..8192).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
    let zcr = acoustic_features(&alternating, sr).unwrap().view.zcr_mean;
    let energy = acoustic_features(&[0.25; 8192], sr).unwrap().view.energy_mean;
    report(
        11,
        "dsp fixtures",
        (s.centroid_mean - 440.0).abs() <= bin && (s.pitch_mean - 440.0).abs() <= 5.0 && zcr == 1.0 && energy == 0.25,
        format!(
            "centroid={:.2} pitch={:.2} zcr={zcr} energy={energy}",
            s.centroid_mean, s.pitch_mean
        ),
    )
}

fn psadkit(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_psadkit"))
        .args(args)
        .env("PSADKIT_LOG", "error")
        .output()
        .unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let effects = root.join("effects.json");
    let mut e = both_contexts(EffectConfig::default(), 8, 3);
    e.dual_context_fraction = 0.75;
    fs::write(&effects, serde_json::to_string(&e).unwrap()).unwrap();
    let run_config = root.join("run.json");
    fs::write(
        &run_config,
        r#"{"psad": {"train": {"epochs": 25}}, "mlp": {"train": {"epochs": 25}}, "knn_k": 3}"#,
    )
    .unwrap();
    let grid = root.join("grid.json");
    fs::write(&grid, r#"{"learning_rates": [0.1, 0.03], "epoch_counts": [10, 20]}"#).unwrap();

    let mut failures = Vec::new();
    let mut corpora = Vec::new();
    for rep in 0..2 {
        let out = root.join(format!("synth{rep}"));
        let o = psadkit(&["synth", "generate", "--config", effects.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if !o.status.success() {
            failures.push(format!("synth generate: {}", String::from_utf8_lossy(&o.stderr)));
        }
        corpora.push(dir_bytes(&out));
    }
    if corpora[0] != corpora[1] {
        failures.push("synth generate output differs".into());
    }
    let manifest = root.join("synth0/manifest.json");
    let manifest = manifest.to_str().unwrap();
    let config = run_config.to_str().unwrap();
    let grid = grid.to_str().unwrap();

    let commands: Vec<Vec<&str>> = vec![
        vec!["ingest"],
        vec!["featurize"],
        vec!["stats", "context-report"],
        vec!["cohort", "fit"],
        vec!["train", "psad"],
        vec!["eval", "run", "--method", "psad", "--grid", grid],
        vec!["eval", "run", "--method", "mlp"],
        vec!["eval", "run", "--method", "knn"],
        vec!["eval", "ablate", "--kind", "layers"],
        vec!["eval", "ablate", "--kind", "views"],
        vec!["eval", "separate"],
    ];
    let mut n_files = 0;
    for (ci, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for (rep, jobs) in [(0, "1"), (1, "1"), (2, "8")] {
            let out = root.join(format!("cmd{ci}_{rep}"));
            let mut args = cmd.clone();
            args.extend([
                "--corpus",
                manifest,
                "--config",
                config,
                "--seed",
                "5",
                "--jobs",
                jobs,
                "--out",
                out.to_str().unwrap(),
            ]);
            let o = psadkit(&args);
            if !o.status.success() {
                failures.push(format!("{}: {}", cmd.join(" "), String::from_utf8_lossy(&o.stderr)));
            }
            outputs.push(dir_bytes(&out));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] || outputs[0] != outputs[2] {
            failures.push(format!("{} output not reproducible", cmd.join(" ")));
        }
        n_files += outputs[0].len();
    }
    report(
        12,
        "determinism",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands, {n_files} report files identical across reruns and --jobs 1/8", commands.len() + 1)
        } else {
            failures.join("; ")
        },
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [fn() -> Outcome; 12] = [
        gradient_oracle,
        freeze_contract,
        wilcoxon_oracle,
        metrics_oracle,
        clustering_recovery,
        method_separation,
        layer_ordering,
        view_ordering,
        separate_models,
        context_power,
        dsp_fixtures,
        determinism,
    ];
    let outcomes: Vec<Outcome> = criteria.iter().map(|c| c()).collect();
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{} ({}): {}", o.id, o.name, o.detail))
        .collect();
    println!("{}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
