//! Linguistic biomarker extraction in three views (acoustic, syntactic,
//! lexical) and corpus-level 0-1 normalization.

mod acoustic;
mod scaler;
mod text;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use acoustic::{
    acoustic_features, acoustic_features_with_reference, frame_energies, frame_signal,
    AcousticExtraction, FrameParams, PITCH_MAX_HZ, PITCH_MIN_HZ, VOICING_RATIO,
};
pub use scaler::NormalizationScaler;
pub use text::{lexical_features, syntactic_features, LexiconSet, LONG_SENTENCE_WORDS};

use crate::dataset::{read_wav, Corpus};
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 17;

/// Fixed feature order shared by CSV files, scalers and model inputs.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "pitch_mean",
    "pitch_delta",
    "energy_mean",
    "energy_delta",
    "zcr_mean",
    "zcr_delta",
    "centroid_mean",
    "centroid_delta",
    "avg_word_count",
    "long_sentence_rate",
    "sentence_count",
    "pos_emotion",
    "neg_emotion",
    "i_statements",
    "you_statements",
    "negations",
    "stop_words",
];

/// One feature family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Acoustic,
    Syntactic,
    Lexical,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::Acoustic, ViewKind::Syntactic, ViewKind::Lexical];

    /// Column range of this view inside the 17-feature vector.
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            ViewKind::Acoustic => 0..8,
            ViewKind::Syntactic => 8..11,
            ViewKind::Lexical => 11..17,
        }
    }

    pub fn dim(self) -> usize {
        self.range().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Acoustic => "acoustic",
            ViewKind::Syntactic => "syntactic",
            ViewKind::Lexical => "lexical",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AcousticView {
    pub pitch_mean: f64,
    pub pitch_delta: f64,
    pub energy_mean: f64,
    pub energy_delta: f64,
    pub zcr_mean: f64,
    pub zcr_delta: f64,
    pub centroid_mean: f64,
    pub centroid_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntacticView {
    pub avg_word_count: f64,
    pub long_sentence_rate: f64,
    pub sentence_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LexicalView {
    pub pos_emotion: u32,
    pub neg_emotion: u32,
    pub i_statements: u32,
    pub you_statements: u32,
    pub negations: u32,
    pub stop_words: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureSet {
    pub acoustic: AcousticView,
    pub syntactic: SyntacticView,
    pub lexical: LexicalView,
}

fn count(v: f64, name: &str) -> Result<u32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
        Ok(v as u32)
    } else {
        Err(Error::SchemaViolation(format!(
            "{name} = {v} must be a nonnegative integer"
        )))
    }
}

impl FeatureSet {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        let a = &self.acoustic;
        let s = &self.syntactic;
        let l = &self.lexical;
        [
            a.pitch_mean,
            a.pitch_delta,
            a.energy_mean,
            a.energy_delta,
            a.zcr_mean,
            a.zcr_delta,
            a.centroid_mean,
            a.centroid_delta,
            s.avg_word_count,
            s.long_sentence_rate,
            f64::from(s.sentence_count),
            f64::from(l.pos_emotion),
            f64::from(l.neg_emotion),
            f64::from(l.i_statements),
            f64::from(l.you_statements),
            f64::from(l.negations),
            f64::from(l.stop_words),
        ]
    }

    /// Build from the fixed column order, checking each view's invariants.
    pub fn from_array(v: [f64; N_FEATURES]) -> Result<Self> {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::SchemaViolation(format!(
                "{} is not finite",
                FEATURE_NAMES[i]
            )));
        }
        let fs = FeatureSet {
            acoustic: AcousticView {
                pitch_mean: v[0],
                pitch_delta: v[1],
                energy_mean: v[2],
                energy_delta: v[3],
                zcr_mean: v[4],
                zcr_delta: v[5],
                centroid_mean: v[6],
                centroid_delta: v[7],
            },
            syntactic: SyntacticView {
                avg_word_count: v[8],
                long_sentence_rate: v[9],
                sentence_count: count(v[10], FEATURE_NAMES[10])?,
            },
            lexical: LexicalView {
                pos_emotion: count(v[11], FEATURE_NAMES[11])?,
                neg_emotion: count(v[12], FEATURE_NAMES[12])?,
                i_statements: count(v[13], FEATURE_NAMES[13])?,
                you_statements: count(v[14], FEATURE_NAMES[14])?,
                negations: count(v[15], FEATURE_NAMES[15])?,
                stop_words: count(v[16], FEATURE_NAMES[16])?,
            },
        };
        let a = &fs.acoustic;
        if a.pitch_mean < 0.0 || a.energy_mean < 0.0 || !(0.0..=1.0).contains(&a.zcr_mean) {
            return Err(Error::SchemaViolation(
                "acoustic view requires pitch_mean >= 0, energy_mean >= 0, zcr_mean in [0,1]".into(),
            ));
        }
        let s = &fs.syntactic;
        if s.avg_word_count < 0.0 || !(0.0..=1.0).contains(&s.long_sentence_rate) {
            return Err(Error::SchemaViolation(
                "syntactic view requires avg_word_count >= 0 and long_sentence_rate in [0,1]"
                    .into(),
            ));
        }
        Ok(fs)
    }
}

/// Per-recording extraction diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionNote {
    pub sample_id: String,
    pub precomputed: bool,
    pub voiced_frames: usize,
    pub no_voiced_frames: bool,
}

/// Features for every corpus sample, in corpus order.
///
/// Precomputed features win when present. For raw samples the voicing
/// threshold is 0.3 times the median frame energy pooled over every raw
/// recording in the corpus.
pub fn featurize_corpus(
    corpus: &Corpus,
    lexicons: &LexiconSet,
    params: FrameParams,
) -> Result<(Vec<FeatureSet>, Vec<ExtractionNote>)> {
    let mut waves: Vec<Option<(Vec<f64>, u32)>> = Vec::with_capacity(corpus.len());
    let mut pooled = Vec::new();
    for s in &corpus.samples {
        if s.precomputed.is_none() {
            let path = s.audio.as_ref().ok_or_else(|| {
                Error::SchemaViolation(format!("sample {} has no audio", s.sample_id))
            })?;
            let (wave, rate) = read_wav(path)?;
            pooled.extend(frame_energies(&wave, params)?);
            waves.push(Some((wave, rate)));
        } else {
            waves.push(None);
        }
    }
    let reference = acoustic::median(&mut pooled);

    let mut features = Vec::with_capacity(corpus.len());
    let mut notes = Vec::with_capacity(corpus.len());
    for (s, wave) in corpus.samples.iter().zip(waves) {
        match (&s.precomputed, wave) {
            (Some(fs), _) => {
                features.push(*fs);
                notes.push(ExtractionNote {
                    sample_id: s.sample_id.clone(),
                    precomputed: true,
                    voiced_frames: 0,
                    no_voiced_frames: false,
                });
            }
            (None, Some((wave, rate))) => {
                let transcript = s.transcript.as_deref().ok_or_else(|| {
                    Error::SchemaViolation(format!("sample {} has no transcript", s.sample_id))
                })?;
                let ac = acoustic_features_with_reference(&wave, rate, params, reference)?;
                if ac.voiced_frames == 0 {
                    log::warn!("sample {}: no voiced frames, pitch set to 0", s.sample_id);
                }
                features.push(FeatureSet {
                    acoustic: ac.view,
                    syntactic: syntactic_features(transcript)?,
                    lexical: lexical_features(transcript, lexicons)?,
                });
                notes.push(ExtractionNote {
                    sample_id: s.sample_id.clone(),
                    precomputed: false,
                    voiced_frames: ac.voiced_frames,
                    no_voiced_frames: ac.voiced_frames == 0,
                });
            }
            (None, None) => unreachable!("raw samples always carry a decoded wave"),
        }
    }
    Ok((features, notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_partition_the_feature_vector() {
        let dims: usize = ViewKind::ALL.iter().map(|v| v.dim()).sum();
        assert_eq!(dims, N_FEATURES);
        assert_eq!(ViewKind::Acoustic.dim(), 8);
        assert_eq!(ViewKind::Syntactic.dim(), 3);
        assert_eq!(ViewKind::Lexical.dim(), 6);
    }

    #[test]
    fn array_round_trip() {
        let v: [f64; N_FEATURES] = [
            120.0, 3.0, 0.2, 0.01, 0.1, 0.02, 900.0, 40.0, 12.5, 0.25, 8.0, 3.0, 1.0, 7.0, 2.0,
            1.0, 30.0,
        ];
        assert_eq!(FeatureSet::from_array(v).unwrap().to_array(), v);
    }

    #[test]
    fn fractional_counts_rejected() {
        let mut v = [0.0; N_FEATURES];
        v[12] = 1.5;
        assert!(FeatureSet::from_array(v).is_err());
        let mut v = [0.0; N_FEATURES];
        v[4] = 1.5;
        assert!(FeatureSet::from_array(v).is_err());
    }
}
