//! Corpus data model, manifest ingestion, ground-truth labeling and LOOCV folds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, FEATURE_NAMES, N_FEATURES};

/// Five-point Likert anxiety rating, 1 = very calm, 5 = very anxious.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct AnxietyScore(u8);

impl AnxietyScore {
    pub fn new(value: i64) -> Result<Self> {
        if (1..=5).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(Error::SchemaViolation(format!(
                "anxiety score {value} outside 1..=5"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for AnxietyScore {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AnxietyScore> for i64 {
    fn from(s: AnxietyScore) -> i64 {
        i64::from(s.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    NonEvaluative,
    Evaluative,
}

impl Context {
    pub const ALL: [Context; 2] = [Context::NonEvaluative, Context::Evaluative];

    pub fn as_str(self) -> &'static str {
        match self {
            Context::NonEvaluative => "non_evaluative",
            Context::Evaluative => "evaluative",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Context::NonEvaluative => 0,
            Context::Evaluative => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "non_evaluative" => Some(Context::NonEvaluative),
            "evaluative" => Some(Context::Evaluative),
            _ => None,
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trait-scale profile of one participant, used for cohorting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    pub dass: f64,
    pub sias: f64,
    pub bfne: f64,
    pub ders: f64,
}

impl ParticipantProfile {
    pub fn scales(&self) -> [f64; 4] {
        [self.dass, self.sias, self.bfne, self.ders]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ["dass", "sias", "bfne", "ders"].iter().zip(self.scales()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::SchemaViolation(format!(
                    "profile {}: {name} = {v} must be finite and >= 0",
                    self.participant_id
                )));
            }
        }
        Ok(())
    }
}

/// One spoken utterance from a speaker-tagged transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub start: f64,
    pub end: f64,
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub participant_id: String,
    pub context: Context,
    pub baseline: AnxietyScore,
    pub concurrent: AnxietyScore,
    /// Path to a 16-bit mono PCM WAV file.
    pub audio: Option<PathBuf>,
    /// Utterances spoken by this sample's participant.
    pub transcript: Option<Vec<Utterance>>,
    pub precomputed: Option<FeatureSet>,
}

impl Sample {
    pub fn label(&self) -> AnxietyLabel {
        label_sample(self.baseline, self.concurrent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub profiles: BTreeMap<String, ParticipantProfile>,
}

/// Binary state-anxiety status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnxietyLabel {
    pub positive: bool,
}

/// Ground-truth status: positive when concurrent anxiety is high (4 or 5)
/// or elevated above the participant's baseline.
pub fn label_sample(baseline: AnxietyScore, concurrent: AnxietyScore) -> AnxietyLabel {
    let high = concurrent.value() >= 4;
    let elevated = concurrent > baseline;
    AnxietyLabel {
        positive: high || elevated,
    }
}

impl Corpus {
    /// Build a corpus, enforcing the uniqueness and profile-coverage invariants.
    pub fn new(
        samples: Vec<Sample>,
        profiles: impl IntoIterator<Item = ParticipantProfile>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in profiles {
            p.validate()?;
            if map.insert(p.participant_id.clone(), p.clone()).is_some() {
                return Err(Error::SchemaViolation(format!(
                    "duplicate profile for participant {}",
                    p.participant_id
                )));
            }
        }
        let mut ids = BTreeSet::new();
        let mut keys = BTreeSet::new();
        for s in &samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::DuplicateSample(format!(
                    "sample_id {} appears twice",
                    s.sample_id
                )));
            }
            if !keys.insert((s.participant_id.as_str(), s.context)) {
                return Err(Error::DuplicateSample(format!(
                    "participant {} has two {} samples",
                    s.participant_id, s.context
                )));
            }
            if !map.contains_key(&s.participant_id) {
                return Err(Error::SchemaViolation(format!(
                    "sample {} references participant {} without a profile",
                    s.sample_id, s.participant_id
                )));
            }
            let raw = s.audio.is_some() && s.transcript.is_some();
            if !raw && s.precomputed.is_none() {
                return Err(Error::SchemaViolation(format!(
                    "sample {} needs audio and transcript, or precomputed features",
                    s.sample_id
                )));
            }
        }
        Ok(Self {
            samples,
            profiles: map,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn profile(&self, participant_id: &str) -> Option<&ParticipantProfile> {
        self.profiles.get(participant_id)
    }

    /// Participants that contributed a sample in both contexts, sorted.
    pub fn dual_context_participants(&self) -> Vec<String> {
        let mut seen: BTreeMap<&str, [bool; 2]> = BTreeMap::new();
        for s in &self.samples {
            seen.entry(&s.participant_id).or_default()[s.context.index()] = true;
        }
        seen.into_iter()
            .filter(|(_, c)| c[0] && c[1])
            .map(|(p, _)| p.to_string())
            .collect()
    }
}

/// One leave-one-out split: indices into the corpus' sample list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test: usize,
    pub train: Vec<usize>,
}

/// Leave-one-sample-out folds ordered by the held-out sample's id.
pub fn loocv_folds(corpus: &Corpus) -> Result<Vec<Fold>> {
    let n = corpus.samples.len();
    if n < 2 {
        return Err(Error::CorpusTooSmall { needed: 2, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| corpus.samples[a].sample_id.cmp(&corpus.samples[b].sample_id));
    Ok(order
        .iter()
        .map(|&test| Fold {
            test,
            train: order.iter().copied().filter(|&i| i != test).collect(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Manifest ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub sample_id: String,
    pub participant_id: String,
    pub context: String,
    pub baseline: i64,
    pub concurrent: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<ManifestSample>,
    pub profiles: Vec<ParticipantProfile>,
}

/// Audio header facts checked at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub n_samples: usize,
}

pub const MIN_SAMPLE_RATE: u32 = 8000;

pub fn check_wav(path: &Path) -> Result<WavInfo> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::SchemaViolation(format!(
            "{}: expected 16-bit signed mono PCM, got {} channel(s) {}-bit {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate < MIN_SAMPLE_RATE {
        return Err(Error::SchemaViolation(format!(
            "{}: sample rate {} below {MIN_SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    Ok(WavInfo {
        sample_rate: spec.sample_rate,
        n_samples: reader.len() as usize,
    })
}

/// Read a WAV file as amplitudes in [-1, 1] plus its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let info = check_wav(path)?;
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let wave = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok((wave, info.sample_rate))
}

/// Write amplitudes in [-1, 1] as 16-bit mono PCM.
pub fn write_wav(path: &Path, wave: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &x in wave {
        let v = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(audio_err)?;
    }
    w.finalize().map_err(audio_err)
}

/// Parse a JSON Lines transcript, keeping only `speaker`'s utterances.
pub fn read_transcript(path: &Path, speaker: &str) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(line).map_err(|e| {
            Error::SchemaViolation(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if !(u.start.is_finite() && u.end.is_finite() && u.end >= u.start) {
            return Err(Error::SchemaViolation(format!(
                "{}:{}: utterance times must satisfy start <= end",
                path.display(),
                lineno + 1
            )));
        }
        if u.speaker == speaker {
            out.push(u);
        }
    }
    Ok(out)
}

/// Parsed feature CSV: either a single unlabeled row or rows keyed by sample_id.
enum FeatureTable {
    Single(FeatureSet),
    Keyed(HashMap<String, FeatureSet>),
}

fn read_feature_table(path: &Path) -> Result<FeatureTable> {
    let schema = |msg: String| Error::SchemaViolation(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingFile(path.to_path_buf())
        }
        _ => schema(e.to_string()),
    })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let keyed = header.first().map(String::as_str) == Some("sample_id");
    let names = if keyed { &header[1..] } else { &header[..] };
    if names.len() != N_FEATURES || names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b) {
        return Err(schema(format!(
            "feature header must be {}{}",
            if keyed { "sample_id," } else { "" },
            FEATURE_NAMES.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let offset = usize::from(keyed);
        let mut values = [0.0; N_FEATURES];
        for (j, v) in values.iter_mut().enumerate() {
            let field = rec.get(j + offset).unwrap_or("");
            *v = field
                .trim()
                .parse()
                .map_err(|_| schema(format!("bad number {field:?} in column {}", FEATURE_NAMES[j])))?;
        }
        let fs = FeatureSet::from_array(values)
            .map_err(|e| schema(format!("invalid feature row: {e}")))?;
        let id = if keyed { rec.get(0).unwrap_or("").to_string() } else { String::new() };
        rows.push((id, fs));
    }
    if keyed {
        Ok(FeatureTable::Keyed(rows.into_iter().collect()))
    } else if rows.len() == 1 {
        Ok(FeatureTable::Single(rows.pop().expect("one row").1))
    } else {
        Err(schema(format!(
            "expected exactly one data row without a sample_id column, got {}",
            rows.len()
        )))
    }
}

/// Write feature rows keyed by sample id, in the fixed column order.
pub fn write_feature_csv(path: &Path, rows: &[(String, FeatureSet)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let to_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut header = vec!["sample_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(to_err)?;
    for (id, fs) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(fs.to_array().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load and validate a corpus manifest. Relative paths resolve against the
/// manifest's directory.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::SchemaViolation(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut tables: HashMap<PathBuf, FeatureTable> = HashMap::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for ms in &manifest.samples {
        let context = Context::parse(&ms.context).ok_or_else(|| {
            Error::SchemaViolation(format!(
                "sample {}: context {:?} must be \"evaluative\" or \"non_evaluative\"",
                ms.sample_id, ms.context
            ))
        })?;
        let baseline = AnxietyScore::new(ms.baseline).map_err(|e| {
            Error::SchemaViolation(format!("sample {} baseline: {e}", ms.sample_id))
        })?;
        let concurrent = AnxietyScore::new(ms.concurrent).map_err(|e| {
            Error::SchemaViolation(format!("sample {} concurrent: {e}", ms.sample_id))
        })?;

        let audio = match &ms.audio_path {
            Some(p) => {
                let path = resolve(base, p);
                check_wav(&path)?;
                Some(path)
            }
            None => None,
        };
        let transcript = match &ms.transcript_path {
            Some(p) => {
                let path = resolve(base, p);
                let utts = read_transcript(&path, &ms.participant_id)?;
                if utts.is_empty() {
                    return Err(Error::SchemaViolation(format!(
                        "sample {}: transcript has no utterances by {}",
                        ms.sample_id, ms.participant_id
                    )));
                }
                Some(utts)
            }
            None => None,
        };
        let precomputed = match &ms.features_path {
            Some(p) => {
                let path = resolve(base, p);
                if !tables.contains_key(&path) {
                    let t = read_feature_table(&path)?;
                    tables.insert(path.clone(), t);
                }
                match &tables[&path] {
                    FeatureTable::Single(fs) => Some(*fs),
                    FeatureTable::Keyed(map) => Some(*map.get(&ms.sample_id).ok_or_else(|| {
                        Error::SchemaViolation(format!("{}: no row for sample {}", path.display(), ms.sample_id))
                    })?),
                }
            }
            None => None,
        };
        samples.push(Sample {
            sample_id: ms.sample_id.clone(),
            participant_id: ms.participant_id.clone(),
            context,
            baseline,
            concurrent,
            audio,
            transcript,
            precomputed,
        });
    }
    Corpus::new(samples, manifest.profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(v: i64) -> AnxietyScore {
        AnxietyScore::new(v).unwrap()
    }

    #[test]
    fn labeling_examples() {
        assert!(label_sample(score(2), score(4)).positive);
        assert!(!label_sample(score(3), score(3)).positive);
        assert!(label_sample(score(1), score(2)).positive);
        assert!(label_sample(score(5), score(4)).positive);
    }

    #[test]
    fn labeling_is_monotone_in_concurrent() {
        for b in 1..=5 {
            let mut was_positive = false;
            for c in 1..=5 {
                let pos = label_sample(score(b), score(c)).positive;
                assert!(!was_positive || pos, "b={b} c={c}");
                was_positive = pos;
            }
        }
    }

    #[test]
    fn score_range_enforced() {
        assert!(AnxietyScore::new(0).is_err());
        assert!(AnxietyScore::new(6).is_err());
        assert_eq!(score(5).value(), 5);
    }

    fn sample(id: &str, pid: &str, ctx: Context) -> Sample {
        Sample {
            sample_id: id.into(),
            participant_id: pid.into(),
            context: ctx,
            baseline: score(2),
            concurrent: score(3),
            audio: None,
            transcript: None,
            precomputed: Some(FeatureSet::from_array([0.0; N_FEATURES]).unwrap()),
        }
    }

    fn profile(pid: &str) -> ParticipantProfile {
        ParticipantProfile {
            participant_id: pid.into(),
            dass: 1.0,
            sias: 1.0,
            bfne: 1.0,
            ders: 1.0,
        }
    }

    #[test]
    fn folds_cover_corpus_in_id_order() {
        let corpus = Corpus::new(
            vec![
                sample("c", "p1", Context::Evaluative),
                sample("a", "p1", Context::NonEvaluative),
                sample("b", "p2", Context::Evaluative),
            ],
            vec![profile("p1"), profile("p2")],
        )
        .unwrap();
        let folds = loocv_folds(&corpus).unwrap();
        let tests: Vec<&str> = folds
            .iter()
            .map(|f| corpus.samples[f.test].sample_id.as_str())
            .collect();
        assert_eq!(tests, ["a", "b", "c"]);
        for f in &folds {
            assert_eq!(f.train.len(), 2);
            assert!(!f.train.contains(&f.test));
        }
    }

    #[test]
    fn two_sample_corpus_trains_on_one() {
        let corpus = Corpus::new(
            vec![sample("a", "p1", Context::Evaluative), sample("b", "p2", Context::Evaluative)],
            vec![profile("p1"), profile("p2")],
        )
        .unwrap();
        let folds = loocv_folds(&corpus).unwrap();
        assert_eq!(folds.len(), 2);
        assert!(folds.iter().all(|f| f.train.len() == 1));
    }

    #[test]
    fn single_sample_corpus_rejected() {
        let corpus =
            Corpus::new(vec![sample("a", "p1", Context::Evaluative)], vec![profile("p1")]).unwrap();
        assert!(matches!(
            loocv_folds(&corpus),
            Err(Error::CorpusTooSmall { got: 1, .. })
        ));
    }

    #[test]
    fn duplicate_context_rejected() {
        let err = Corpus::new(
            vec![sample("a", "p1", Context::Evaluative), sample("b", "p1", Context::Evaluative)],
            vec![profile("p1")],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateSample(_)));
    }

    #[test]
    fn missing_profile_rejected() {
        let err = Corpus::new(vec![sample("a", "p9", Context::Evaluative)], vec![profile("p1")])
            .unwrap_err();
        assert!(matches!(err, Error::SchemaViolation(_)));
    }

    #[test]
    fn dual_context_participants_listed() {
        let corpus = Corpus::new(
            vec![
                sample("a", "p1", Context::Evaluative),
                sample("b", "p1", Context::NonEvaluative),
                sample("c", "p2", Context::Evaluative),
            ],
            vec![profile("p1"), profile("p2")],
        )
        .unwrap();
        assert_eq!(corpus.dual_context_participants(), vec!["p1".to_string()]);
    }
}
