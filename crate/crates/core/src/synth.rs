//! Synthetic corpora with planted context, cohort and label effects.
//!
//! Features are drawn per participant (shared random effect) and per sample,
//! shifted by context and cohort, and labelled through a logistic model whose
//! weights may differ by context and cohort.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::Group;
use crate::dataset::{
    write_feature_csv, write_wav, AnxietyScore, Context, Corpus, Manifest, ManifestSample, ParticipantProfile,
    Sample, Utterance,
};
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, N_FEATURES};
use crate::jsonfile::write_pretty;
use crate::seed;

/// Mean and standard deviation of each feature before any shift, in raw units.
pub const BASE_FEATURES: [(f64, f64); N_FEATURES] = [
    (160.0, 30.0),   // pitch_mean (Hz)
    (12.0, 4.0),     // pitch_delta
    (0.08, 0.025),   // energy_mean
    (0.015, 0.005),  // energy_delta
    (0.09, 0.025),   // zcr_mean
    (0.02, 0.006),   // zcr_delta
    (1800.0, 300.0), // centroid_mean (Hz)
    (250.0, 70.0),   // centroid_delta
    (12.0, 2.5),     // avg_word_count
    (0.2, 0.08),     // long_sentence_rate
    (30.0, 8.0),     // sentence_count
    (12.0, 4.0),     // pos_emotion
    (6.0, 3.0),      // neg_emotion
    (20.0, 6.0),     // i_statements
    (8.0, 3.0),      // you_statements
    (7.0, 3.0),      // negations
    (150.0, 35.0),   // stop_words
];

const COUNT_FEATURES: std::ops::Range<usize> = 10..17;

/// Trait-scale Gaussians per cohort: (mean, sd) for DASS, SIAS, BFNE, DERS.
pub const HIGH_SX_SCALES: [(f64, f64); 4] = [(69.16, 10.31), (33.44, 4.51), (58.12, 6.27), (15.36, 5.05)];
pub const LOW_SX_SCALES: [(f64, f64); 4] = [(51.13, 7.67), (23.93, 8.00), (41.93, 5.75), (12.27, 5.02)];
/// High:low cohort ratio of the reference study.
pub const HIGH_SX_SHARE: (usize, usize) = (13, 30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectConfig {
    pub n_participants: usize,
    pub dual_context_fraction: f64,
    pub seed: u64,
    /// Share of each feature's variance that is a per-participant effect.
    pub participant_correlation: f64,
    /// Raw-unit shift added to evaluative samples.
    pub context_shift: [f64; N_FEATURES],
    /// Raw-unit shift added to HighSx participants' samples.
    pub group_shift: [f64; N_FEATURES],
    /// Logistic weights on standardized features, then one-hot context
    /// (non-evaluative, evaluative) and one-hot group (HighSx, LowSx).
    pub label_weights: [f64; N_FEATURES + 4],
    /// Standardized-feature weights added in evaluative and subtracted in
    /// non-evaluative samples.
    pub context_interaction: [f64; N_FEATURES],
    /// Standardized-feature weights added for HighSx and subtracted for LowSx.
    pub group_interaction: [f64; N_FEATURES],
    /// Standardized-feature weights scaled by the product of the context and
    /// group signs above.
    pub cell_interaction: [f64; N_FEATURES],
    /// Extra logit per (context, group) cell, indexed by
    /// `2 * context.index() + group.index()`.
    pub cell_bias: [f64; 4],
    pub label_noise: f64,
}

fn arr<const N: usize>(entries: &[(usize, f64)]) -> [f64; N] {
    let mut a = [0.0; N];
    for &(i, v) in entries {
        a[i] = v;
    }
    a
}

impl Default for EffectConfig {
    fn default() -> Self {
        Self {
            n_participants: 35,
            dual_context_fraction: 20.0 / 35.0,
            seed: 0,
            participant_correlation: 0.8,
            context_shift: arr(&[(1, -2.7), (8, 1.8)]),
            group_shift: [0.0; N_FEATURES],
            label_weights: arr(&[
                (11, -1.0),
                (12, 1.0),
                (13, 0.8),
                (14, -0.5),
                (15, 0.8),
                (16, 0.5),
                (17, -3.0),
                (18, 3.0),
                (19, 2.5),
                (20, -2.5),
            ]),
            context_interaction: arr(&[(11, -0.8), (12, 1.0)]),
            group_interaction: arr(&[(13, 0.8), (15, 0.6)]),
            cell_interaction: [0.0; N_FEATURES],
            cell_bias: [-1.0, 1.0, 1.0, -1.0],
            label_noise: 0.03,
        }
    }
}

impl EffectConfig {
    /// No shifts, no label signal, no noise.
    pub fn null() -> Self {
        Self {
            context_shift: [0.0; N_FEATURES],
            group_shift: [0.0; N_FEATURES],
            label_weights: [0.0; N_FEATURES + 4],
            context_interaction: [0.0; N_FEATURES],
            group_interaction: [0.0; N_FEATURES],
            cell_interaction: [0.0; N_FEATURES],
            cell_bias: [0.0; 4],
            label_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_participants < 4 {
            return Err(Error::ConfigInvalid("n_participants must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.dual_context_fraction) {
            return Err(Error::ConfigInvalid("dual_context_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::ConfigInvalid("label_noise must lie in [0, 0.5)".into()));
        }
        if !(0.0..=1.0).contains(&self.participant_correlation) {
            return Err(Error::ConfigInvalid("participant_correlation must lie in [0, 1]".into()));
        }
        let all = self
            .context_shift
            .iter()
            .chain(&self.group_shift)
            .chain(&self.label_weights)
            .chain(&self.context_interaction)
            .chain(&self.group_interaction)
            .chain(&self.cell_interaction)
            .chain(&self.cell_bias);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("effect weights must be finite".into()));
        }
        Ok(())
    }

    /// Number of participants observed in both contexts.
    pub fn n_dual(&self) -> usize {
        ((self.n_participants as f64) * self.dual_context_fraction).round() as usize
    }
}

/// Generator-side ground truth. Training and evaluation code never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub groups: BTreeMap<String, Group>,
    /// Label-model probability of each sample before flip noise.
    pub probabilities: BTreeMap<String, f64>,
}

pub fn participant_id(i: usize) -> String {
    format!("p{:03}", i + 1)
}

/// Number of HighSx participants among `n`: the reference ratio, at least two per group.
pub fn n_high(n: usize) -> usize {
    let raw = (n as f64 * HIGH_SX_SHARE.0 as f64 / HIGH_SX_SHARE.1 as f64).round() as usize;
    raw.clamp(2, n.saturating_sub(2).max(2))
}

/// Trait profiles drawn from the cohort Gaussians, with their planted groups.
pub fn gen_profiles(n: usize, seed: u64) -> (Vec<ParticipantProfile>, Vec<Group>) {
    let mut rng = seed::stream(seed, "profiles");
    let mut groups: Vec<Group> = (0..n)
        .map(|i| if i < n_high(n) { Group::HighSx } else { Group::LowSx })
        .collect();
    groups.shuffle(&mut rng);
    let profiles = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let params = match g {
                Group::HighSx => HIGH_SX_SCALES,
                Group::LowSx => LOW_SX_SCALES,
            };
            let v: Vec<f64> = params
                .iter()
                .map(|&(m, s)| Normal::new(m, s).expect("positive sd").sample(&mut rng).max(0.0))
                .collect();
            ParticipantProfile {
                participant_id: participant_id(i),
                dass: v[0],
                sias: v[1],
                bfne: v[2],
                ders: v[3],
            }
        })
        .collect();
    (profiles, groups)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Label-model logit of a raw feature row.
pub fn label_logit(config: &EffectConfig, raw: &[f64; N_FEATURES], context: Context, group: Group) -> f64 {
    let cs = if context == Context::Evaluative { 1.0 } else { -1.0 };
    let gs = if group == Group::HighSx { 1.0 } else { -1.0 };
    let mut z = 0.0;
    for j in 0..N_FEATURES {
        let (m, s) = BASE_FEATURES[j];
        let std = (raw[j] - m) / s;
        let w = config.label_weights[j]
            + cs * config.context_interaction[j]
            + gs * config.group_interaction[j]
            + cs * gs * config.cell_interaction[j];
        z += std * w;
    }
    z += config.label_weights[N_FEATURES + context.index()];
    z += config.label_weights[N_FEATURES + 2 + group.index()];
    z += config.cell_bias[2 * context.index() + group.index()];
    z
}

/// Anxiety ratings consistent with the drawn status.
fn scores_for(positive: bool, rng: &mut impl Rng) -> (AnxietyScore, AnxietyScore) {
    let (b, c) = if positive {
        if rng.random_bool(0.5) {
            (rng.random_range(1..=5), rng.random_range(4..=5))
        } else {
            let b = rng.random_range(1..=2);
            (b, rng.random_range(b + 1..=3))
        }
    } else {
        let b = rng.random_range(1..=5);
        (b, rng.random_range(1..=b.min(3)))
    };
    (
        AnxietyScore::new(b).expect("score in range"),
        AnxietyScore::new(c).expect("score in range"),
    )
}

fn finish_row(mut v: [f64; N_FEATURES]) -> FeatureSet {
    for j in COUNT_FEATURES {
        v[j] = v[j].round().max(0.0);
    }
    v[10] = v[10].max(1.0);
    for j in [0, 1, 2, 3, 5, 6, 7, 8] {
        v[j] = v[j].max(0.0);
    }
    v[4] = v[4].clamp(0.0, 1.0);
    v[9] = v[9].clamp(0.0, 1.0);
    FeatureSet::from_array(v).expect("generated row is valid")
}

/// Draw a corpus with precomputed features.
pub fn gen_corpus(config: &EffectConfig) -> Result<(Corpus, PlantedTruth)> {
    config.validate()?;
    let n = config.n_participants;
    let (profiles, groups) = gen_profiles(n, config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(config.seed, "dual"));
    let mut dual = vec![false; n];
    for &i in &order[..config.n_dual()] {
        dual[i] = true;
    }
    let rho = config.participant_correlation;
    let mut samples = Vec::new();
    let mut truth = PlantedTruth {
        groups: BTreeMap::new(),
        probabilities: BTreeMap::new(),
    };
    for i in 0..n {
        let pid = participant_id(i);
        let group = groups[i];
        truth.groups.insert(pid.clone(), group);
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "participant", i as u64));
        let person: Vec<f64> = (0..N_FEATURES).map(|_| rng.sample(StandardNormal)).collect();
        let contexts: Vec<Context> = if dual[i] {
            Context::ALL.to_vec()
        } else if rng.random_bool(0.5) {
            vec![Context::Evaluative]
        } else {
            vec![Context::NonEvaluative]
        };
        for context in contexts {
            let mut raw = [0.0; N_FEATURES];
            for j in 0..N_FEATURES {
                let (m, s) = BASE_FEATURES[j];
                let e: f64 = rng.sample(StandardNormal);
                raw[j] = m + s * (rho.sqrt() * person[j] + (1.0 - rho).sqrt() * e);
                if context == Context::Evaluative {
                    raw[j] += config.context_shift[j];
                }
                if group == Group::HighSx {
                    raw[j] += config.group_shift[j];
                }
            }
            let features = finish_row(raw);
            let p = sigmoid(label_logit(config, &features.to_array(), context, group));
            let mut positive = rng.random_bool(p);
            if rng.random_bool(config.label_noise) {
                positive = !positive;
            }
            let (baseline, concurrent) = scores_for(positive, &mut rng);
            let sample_id = format!("{pid}_{}", if context == Context::Evaluative { "ev" } else { "ne" });
            truth.probabilities.insert(sample_id.clone(), p);
            samples.push(Sample {
                sample_id,
                participant_id: pid.clone(),
                context,
                baseline,
                concurrent,
                audio: None,
                transcript: None,
                precomputed: Some(features),
            });
        }
    }
    Ok((Corpus::new(samples, profiles)?, truth))
}

/// Feature rows of a generated corpus, in sample order.
pub fn corpus_features(corpus: &Corpus) -> Result<Vec<FeatureSet>> {
    corpus
        .samples
        .iter()
        .map(|s| {
            s.precomputed
                .ok_or_else(|| Error::SchemaViolation(format!("sample {} has no precomputed features", s.sample_id)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Manifest plus one keyed feature CSV.
    #[default]
    Features,
    /// Manifest plus a WAV file and a transcript per sample.
    Raw,
}

pub const RAW_SAMPLE_RATE: u32 = 16_000;
const RAW_SECONDS: f64 = 1.0;

/// A tone whose pitch and loudness follow the sample's acoustic features.
fn synth_wave(fs: &FeatureSet, rng: &mut impl Rng) -> Vec<f64> {
    let n = (RAW_SECONDS * f64::from(RAW_SAMPLE_RATE)) as usize;
    let amp = (fs.acoustic.energy_mean * std::f64::consts::SQRT_2).clamp(0.01, 0.9);
    let f0 = fs.acoustic.pitch_mean.clamp(60.0, 400.0);
    let wobble = fs.acoustic.pitch_delta.clamp(0.0, 40.0);
    let rate: f64 = rng.random_range(2.0..5.0);
    let mut phase = 0.0;
    (0..n)
        .map(|t| {
            let time = t as f64 / f64::from(RAW_SAMPLE_RATE);
            let f = f0 + wobble * (std::f64::consts::TAU * rate * time).sin();
            phase += std::f64::consts::TAU * f / f64::from(RAW_SAMPLE_RATE);
            amp * phase.sin()
        })
        .collect()
}

/// Templated sentences carrying roughly the sample's lexical counts.
fn synth_transcript(fs: &FeatureSet, speaker: &str) -> Vec<Utterance> {
    let lex = &fs.lexical;
    let mut words: Vec<&str> = Vec::new();
    words.extend(std::iter::repeat_n("happy", lex.pos_emotion as usize));
    words.extend(std::iter::repeat_n("worried", lex.neg_emotion as usize));
    words.extend(std::iter::repeat_n("me", lex.i_statements as usize));
    words.extend(std::iter::repeat_n("your", lex.you_statements as usize));
    words.extend(std::iter::repeat_n("never", lex.negations as usize));
    let n_sent = fs.syntactic.sentence_count.max(1) as usize;
    let per = fs.syntactic.avg_word_count.round().max(1.0) as usize;
    let total = n_sent * per;
    while words.len() < total {
        words.push("the");
    }
    words.truncate(total.max(1));
    words
        .chunks(per)
        .enumerate()
        .map(|(i, chunk)| Utterance {
            start: i as f64,
            end: i as f64 + 0.9,
            speaker: speaker.to_string(),
            text: format!("{}.", chunk.join(" ")),
        })
        .collect()
}

/// Write a corpus as a manifest plus features (or raw audio and transcripts)
/// under `dir`, and the planted truth to `truth.json`. Returns the manifest path.
pub fn write_corpus(dir: &Path, corpus: &Corpus, truth: &PlantedTruth, mode: OutputMode, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        samples: Vec::with_capacity(corpus.len()),
        profiles: corpus.profiles.values().cloned().collect(),
    };
    let mut rows = Vec::new();
    if mode == OutputMode::Raw {
        fs::create_dir_all(dir.join("audio")).map_err(|e| Error::io(dir.join("audio"), e))?;
        fs::create_dir_all(dir.join("transcripts")).map_err(|e| Error::io(dir.join("transcripts"), e))?;
    }
    for (i, s) in corpus.samples.iter().enumerate() {
        let fs_row = s
            .precomputed
            .ok_or_else(|| Error::SchemaViolation(format!("sample {} has no features to write", s.sample_id)))?;
        let mut ms = ManifestSample {
            sample_id: s.sample_id.clone(),
            participant_id: s.participant_id.clone(),
            context: s.context.as_str().to_string(),
            baseline: i64::from(s.baseline.value()),
            concurrent: i64::from(s.concurrent.value()),
            audio_path: None,
            transcript_path: None,
            features_path: None,
        };
        match mode {
            OutputMode::Features => {
                ms.features_path = Some("features.csv".into());
                rows.push((s.sample_id.clone(), fs_row));
            }
            OutputMode::Raw => {
                let mut rng = seed::rng(seed::derive_indexed(seed, "raw", i as u64));
                let audio = format!("audio/{}.wav", s.sample_id);
                write_wav(&dir.join(&audio), &synth_wave(&fs_row, &mut rng), RAW_SAMPLE_RATE)?;
                let transcript = format!("transcripts/{}.jsonl", s.sample_id);
                let mut text = String::new();
                for u in synth_transcript(&fs_row, &s.participant_id) {
                    text.push_str(&serde_json::to_string(&u).expect("utterance serializes"));
                    text.push('\n');
                }
                let tpath = dir.join(&transcript);
                fs::write(&tpath, text).map_err(|e| Error::io(&tpath, e))?;
                ms.audio_path = Some(audio);
                ms.transcript_path = Some(transcript);
            }
        }
        manifest.samples.push(ms);
    }
    if mode == OutputMode::Features {
        write_feature_csv(&dir.join("features.csv"), &rows)?;
    }
    let manifest_path = dir.join("manifest.json");
    write_pretty(&manifest_path, &manifest)?;
    write_pretty(&dir.join("truth.json"), truth)?;
    Ok(manifest_path)
}
