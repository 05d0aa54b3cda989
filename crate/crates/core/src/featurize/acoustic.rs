use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::AcousticView;
use crate::error::{Error, Result};

/// Lowest fundamental searched by the autocorrelation pitch tracker.
pub const PITCH_MIN_HZ: f64 = 50.0;
/// Highest fundamental searched by the autocorrelation pitch tracker.
pub const PITCH_MAX_HZ: f64 = 500.0;
/// A frame is voiced when its RMS exceeds this fraction of the reference energy.
pub const VOICING_RATIO: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            frame_len: 2048,
            hop: 512,
        }
    }
}

/// Split `wave` into overlapping frames of `frame_len` samples, `hop` apart.
/// Trailing samples that do not fill a frame are dropped.
pub fn frame_signal(wave: &[f64], frame_len: usize, hop: usize) -> Result<Vec<&[f64]>> {
    if frame_len < 2 || hop < 1 {
        return Err(Error::ConfigInvalid(format!(
            "frame_len {frame_len} must be >= 2 and hop {hop} >= 1"
        )));
    }
    if wave.len() < frame_len {
        return Err(Error::SignalTooShort {
            len: wave.len(),
            frame_len,
        });
    }
    let n = (wave.len() - frame_len) / hop + 1;
    Ok((0..n).map(|i| &wave[i * hop..i * hop + frame_len]).collect())
}

fn rms(frame: &[f64]) -> f64 {
    (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt()
}

fn zero_crossing_rate(frame: &[f64]) -> f64 {
    let crossings = frame
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / (frame.len() - 1) as f64
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean absolute first difference of a per-frame series; 0 for fewer than two frames.
fn delta(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (xs.len() - 1) as f64
}

/// Per-frame RMS energies (rectangular window).
pub fn frame_energies(wave: &[f64], params: FrameParams) -> Result<Vec<f64>> {
    Ok(frame_signal(wave, params.frame_len, params.hop)?
        .into_iter()
        .map(rms)
        .collect())
}

struct SpectralCentroid {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buf: Vec<Complex<f64>>,
}

impl SpectralCentroid {
    fn new(frame_len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(frame_len);
        // periodic Hann
        let window = (0..frame_len)
            .map(|i| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame_len as f64).cos()
            })
            .collect();
        Self {
            fft,
            window,
            buf: vec![Complex::default(); frame_len],
        }
    }

    fn centroid(&mut self, frame: &[f64], sample_rate: f64) -> f64 {
        for ((b, x), w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex::new(x * w, 0.0);
        }
        self.fft.process(&mut self.buf);
        let n = frame.len();
        let bin_hz = sample_rate / n as f64;
        let (mut weighted, mut total) = (0.0, 0.0);
        for (k, c) in self.buf[..=n / 2].iter().enumerate() {
            let mag = c.norm();
            weighted += k as f64 * bin_hz * mag;
            total += mag;
        }
        if total > 0.0 {
            weighted / total
        } else {
            0.0
        }
    }
}

/// Autocorrelation F0 estimate for one frame, or `None` when no peak lies in
/// the search band.
fn frame_pitch(frame: &[f64], sample_rate: f64) -> Option<f64> {
    let m = mean(frame);
    let x: Vec<f64> = frame.iter().map(|v| v - m).collect();
    let min_lag = ((sample_rate / PITCH_MAX_HZ).floor() as usize).max(1);
    let max_lag = ((sample_rate / PITCH_MIN_HZ).ceil() as usize).min(x.len() - 2);
    if min_lag + 1 > max_lag {
        return None;
    }
    let ac = |lag: usize| -> f64 { x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum() };
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(ac).collect();
    let mut best: Option<(usize, f64)> = None;
    for i in 1..r.len() - 1 {
        if r[i] > 0.0 && r[i] >= r[i - 1] && r[i] > r[i + 1] && best.is_none_or(|(_, v)| r[i] > v) {
            best = Some((i, r[i]));
        }
    }
    let (i, _) = best?;
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let lag = (min_lag - 1 + i) as f64 + shift;
    Some(sample_rate / lag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticExtraction {
    pub view: AcousticView,
    pub frames: usize,
    /// Zero means no frame passed the voicing test; pitch fields are then 0.
    pub voiced_frames: usize,
}

/// Acoustic view with the recording's own median frame energy as voicing reference.
pub fn acoustic_features(wave: &[f64], sample_rate: u32) -> Result<AcousticExtraction> {
    let params = FrameParams::default();
    let mut energies = frame_energies(wave, params)?;
    let reference = median(&mut energies);
    acoustic_features_with_reference(wave, sample_rate, params, reference)
}

/// Acoustic view with an explicit voicing reference energy (e.g. a corpus median).
pub fn acoustic_features_with_reference(
    wave: &[f64],
    sample_rate: u32,
    params: FrameParams,
    reference_energy: f64,
) -> Result<AcousticExtraction> {
    let frames = frame_signal(wave, params.frame_len, params.hop)?;
    let sr = f64::from(sample_rate);
    let mut spectral = SpectralCentroid::new(params.frame_len);

    let mut energy = Vec::with_capacity(frames.len());
    let mut zcr = Vec::with_capacity(frames.len());
    let mut centroid = Vec::with_capacity(frames.len());
    let mut pitch = Vec::new();
    for f in &frames {
        let e = rms(f);
        energy.push(e);
        zcr.push(zero_crossing_rate(f));
        centroid.push(spectral.centroid(f, sr));
        if e > 0.0 && e > VOICING_RATIO * reference_energy {
            if let Some(p) = frame_pitch(f, sr) {
                pitch.push(p);
            }
        }
    }
    Ok(AcousticExtraction {
        view: AcousticView {
            pitch_mean: mean(&pitch),
            pitch_delta: delta(&pitch),
            energy_mean: mean(&energy),
            energy_delta: delta(&energy),
            zcr_mean: mean(&zcr),
            zcr_delta: delta(&zcr),
            centroid_mean: mean(&centroid),
            centroid_delta: delta(&centroid),
        },
        frames: frames.len(),
        voiced_frames: pitch.len(),
    })
}
