//! Loading, validation, normalization, and synthesis of single-lead ECG records.
//!
//! Records are plain single-column CSV files (optional `sample` header) at a
//! caller-declared sampling rate. The synthetic generator produces labeled
//! desk-scale test data with known R-peak positions.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flat-signal threshold: a population std at or below this is a dead lead.
pub const FLAT_STD_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("record file not found: {0}")]
    MissingFile(String),
    #[error("non-numeric sample on line {line}")]
    Parse { line: usize },
    #[error("record contains no samples")]
    EmptyRecord,
    #[error("flat signal: population std <= {FLAT_STD_THRESHOLD:e}")]
    ZeroVariance,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The four rhythm classes, with stable integer codes 0-3 for serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhythmClass {
    Normal,
    Af,
    Other,
    Noisy,
}

pub const CLASS_COUNT: usize = 4;

impl RhythmClass {
    pub const ALL: [RhythmClass; CLASS_COUNT] = [
        RhythmClass::Normal,
        RhythmClass::Af,
        RhythmClass::Other,
        RhythmClass::Noisy,
    ];

    pub fn code(self) -> usize {
        match self {
            RhythmClass::Normal => 0,
            RhythmClass::Af => 1,
            RhythmClass::Other => 2,
            RhythmClass::Noisy => 3,
        }
    }

    pub fn from_code(code: usize) -> Option<RhythmClass> {
        RhythmClass::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RhythmClass::Normal => "normal",
            RhythmClass::Af => "af",
            RhythmClass::Other => "other",
            RhythmClass::Noisy => "noisy",
        }
    }

    pub fn parse(s: &str) -> Option<RhythmClass> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "n" | "0" => Some(RhythmClass::Normal),
            "af" | "a" | "1" => Some(RhythmClass::Af),
            "other" | "o" | "2" => Some(RhythmClass::Other),
            "noisy" | "~" | "3" => Some(RhythmClass::Noisy),
            _ => None,
        }
    }
}

impl fmt::Display for RhythmClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One single-lead recording: sample series plus sampling rate and optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    /// Sampling rate in Hz, always positive.
    pub fs: f64,
    pub samples: Vec<f64>,
    pub label: Option<RhythmClass>,
}

impl EcgRecord {
    pub fn new(
        id: impl Into<String>,
        fs: f64,
        samples: Vec<f64>,
        label: Option<RhythmClass>,
    ) -> Result<EcgRecord, SignalError> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(SignalError::InvalidConfig(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if samples.is_empty() {
            return Err(SignalError::EmptyRecord);
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::Parse { line: pos + 1 });
        }
        Ok(EcgRecord {
            id: id.into(),
            fs,
            samples,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Loads a record from a single-column CSV of decimal samples.
///
/// An optional `sample` header line is skipped. The record id is the file stem.
pub fn load_record(path: impl AsRef<Path>, fs: f64) -> Result<EcgRecord, SignalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SignalError::MissingFile(path.display().to_string())
        } else {
            SignalError::Io(e)
        }
    })?;
    let reader = BufReader::new(file);

    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        if idx == 0 && token.eq_ignore_ascii_case("sample") {
            continue;
        }
        let value: f64 = token
            .parse()
            .map_err(|_| SignalError::Parse { line: idx + 1 })?;
        if !value.is_finite() {
            return Err(SignalError::Parse { line: idx + 1 });
        }
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(SignalError::EmptyRecord);
    }

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".to_string());
    EcgRecord::new(id, fs, samples, None)
}

/// Writes a record in the same single-column CSV format `load_record` reads.
pub fn write_record_csv(record: &EcgRecord, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let mut out = String::with_capacity(record.samples.len() * 8 + 8);
    out.push_str("sample\n");
    for s in &record.samples {
        out.push_str(&format!("{s}\n"));
    }
    crate::persist::write_atomic(path.as_ref(), out.as_bytes())?;
    Ok(())
}

/// Rescales a record to zero mean and unit population standard deviation.
///
/// Fails with [`SignalError::ZeroVariance`] on flat signals (dead lead).
pub fn normalize(record: &EcgRecord) -> Result<EcgRecord, SignalError> {
    let n = record.samples.len();
    if n == 0 {
        return Err(SignalError::EmptyRecord);
    }
    let mean = record.samples.iter().sum::<f64>() / n as f64;
    let var = record
        .samples
        .iter()
        .map(|s| {
            let d = s - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if std <= FLAT_STD_THRESHOLD {
        return Err(SignalError::ZeroVariance);
    }
    let samples = record.samples.iter().map(|s| (s - mean) / std).collect();
    Ok(EcgRecord {
        id: record.id.clone(),
        fs: record.fs,
        samples,
        label: record.label,
    })
}

/// Configuration for the synthetic ECG generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub fs: f64,
    /// Mean RR interval in seconds, within [0.3, 2.0].
    pub mean_rr_s: f64,
    /// Std of the RR interval as a fraction of the mean, within [0, 1).
    pub rr_jitter: f64,
    pub rhythm: RhythmClass,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 30.0,
            fs: 300.0,
            mean_rr_s: 0.8,
            rr_jitter: 0.02,
            rhythm: RhythmClass::Normal,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        let err = |msg: String| Err(SignalError::InvalidConfig(msg));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return err(format!("fs must be positive, got {}", self.fs));
        }
        if !(0.3..=2.0).contains(&self.mean_rr_s) {
            return err(format!("mean_rr_s must lie in [0.3, 2.0], got {}", self.mean_rr_s));
        }
        if !(0.0..1.0).contains(&self.rr_jitter) {
            return err(format!("rr_jitter must lie in [0, 1), got {}", self.rr_jitter));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return err(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        Ok(())
    }
}

// PQRST component waves, relative to the R peak. Centers and widths in seconds.
struct Wave {
    amp: f64,
    center_s: f64,
    sigma_s: f64,
}

const P_WAVE: Wave = Wave { amp: 0.15, center_s: -0.18, sigma_s: 0.025 };
const Q_WAVE: Wave = Wave { amp: -0.12, center_s: -0.035, sigma_s: 0.010 };
const R_WAVE: Wave = Wave { amp: 1.0, center_s: 0.0, sigma_s: 0.012 };
const S_WAVE: Wave = Wave { amp: -0.25, center_s: 0.035, sigma_s: 0.010 };
const T_WAVE: Wave = Wave { amp: 0.30, center_s: 0.30, sigma_s: 0.060 };

/// Per-rhythm generation behavior.
struct RhythmShape {
    rr_sigma: f64,
    /// Every `pause_every`-th beat (after a seeded phase) doubles its RR gap.
    pause_every: Option<usize>,
    beat_amp: f64,
    noise_std: f64,
    p_wave: bool,
}

fn rhythm_shape(config: &SynthConfig) -> RhythmShape {
    match config.rhythm {
        // Regular rhythm: at most 3% RR jitter regardless of the requested value.
        RhythmClass::Normal => RhythmShape {
            rr_sigma: config.rr_jitter.min(0.03),
            pause_every: None,
            beat_amp: 1.0,
            noise_std: config.noise_std,
            p_wave: true,
        },
        // Irregularly irregular: at least 15% iid jitter, no P wave, no periodicity.
        RhythmClass::Af => RhythmShape {
            rr_sigma: config.rr_jitter.max(0.15),
            pause_every: None,
            beat_amp: 1.0,
            noise_std: config.noise_std,
            p_wave: false,
        },
        // Mostly regular with periodic 2xRR pauses.
        RhythmClass::Other => RhythmShape {
            rr_sigma: config.rr_jitter.min(0.03),
            pause_every: Some(PAUSE_PERIOD_BEATS),
            beat_amp: 1.0,
            noise_std: config.noise_std,
            p_wave: true,
        },
        // Beats buried below the noise floor.
        RhythmClass::Noisy => RhythmShape {
            rr_sigma: config.rr_jitter.min(0.03),
            pause_every: None,
            beat_amp: 0.15,
            noise_std: config.noise_std.max(0.4),
            p_wave: true,
        },
    }
}

/// Beat period of the injected pauses in `Other` records. The first pause lands
/// on a seeded beat in [4, 8), so records shorter than ~12 beats contain
/// exactly one pause.
pub const PAUSE_PERIOD_BEATS: usize = 8;

/// Generates a synthetic single-lead ECG and its ground-truth R-peak indices.
///
/// Deterministic for a fixed config: the same seed yields bit-identical output.
/// For zero jitter, consecutive R indices differ by `round(mean_rr_s * fs)` exactly.
pub fn synthesize_ecg(config: &SynthConfig) -> Result<(EcgRecord, Vec<usize>), SignalError> {
    config.validate()?;
    let fs = config.fs;
    let n = (config.duration_s * fs).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape = rhythm_shape(config);

    let pause_phase = PAUSE_PERIOD_BEATS / 2 + rng.gen_range(0..PAUSE_PERIOD_BEATS / 2);

    // Integer R-peak positions, advanced by the rounded per-beat RR draw.
    let mut r_indices: Vec<usize> = Vec::new();
    let mut beat_amps: Vec<f64> = Vec::new();
    let mut r = (0.5 * config.mean_rr_s * fs).round() as usize;
    let mut beat_no = 0usize;
    while r < n {
        r_indices.push(r);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let eps = eps.clamp(-3.0, 3.0);
        let mut rr_s = config.mean_rr_s * (1.0 + shape.rr_sigma * eps);
        if let Some(every) = shape.pause_every {
            if beat_no + 1 >= pause_phase && (beat_no + 1 - pause_phase) % every == 0 {
                rr_s *= 2.0;
            }
        }
        let amp_eps: f64 = StandardNormal.sample(&mut rng);
        beat_amps.push(shape.beat_amp * (1.0 + 0.03 * amp_eps.clamp(-3.0, 3.0)));
        let step = (rr_s.max(0.25) * fs).round() as usize;
        r += step.max(1);
        beat_no += 1;
    }

    let mut samples = vec![0.0f64; n];
    let waves: &[&Wave] = if shape.p_wave {
        &[&P_WAVE, &Q_WAVE, &R_WAVE, &S_WAVE, &T_WAVE]
    } else {
        &[&Q_WAVE, &R_WAVE, &S_WAVE, &T_WAVE]
    };
    for (&r, &amp) in r_indices.iter().zip(&beat_amps) {
        for wave in waves {
            render_wave(&mut samples, fs, r, amp, wave);
        }
    }

    // Gentle baseline wander plus white noise, both scaled by noise_std so a
    // zero-noise config emits the clean template exactly.
    let wander_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    if shape.noise_std > 0.0 {
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *s += shape.noise_std * (std::f64::consts::TAU * 0.25 * t + wander_phase).sin();
        }
        for s in samples.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *s += shape.noise_std * eps;
        }
    }

    let record = EcgRecord::new(
        format!("synth-{:016x}", config.seed),
        fs,
        samples,
        Some(config.rhythm),
    )?;
    Ok((record, r_indices))
}

fn render_wave(samples: &mut [f64], fs: f64, r: usize, beat_amp: f64, wave: &Wave) {
    let n = samples.len() as i64;
    let lo = r as i64 + ((wave.center_s - 4.0 * wave.sigma_s) * fs).floor() as i64;
    let hi = r as i64 + ((wave.center_s + 4.0 * wave.sigma_s) * fs).ceil() as i64;
    for i in lo.max(0)..=hi.min(n - 1) {
        let dt = (i - r as i64) as f64 / fs - wave.center_s;
        let z = dt / wave.sigma_s;
        samples[i as usize] += beat_amp * wave.amp * (-0.5 * z * z).exp();
    }
}

/// Positions (beat indices into `true_r`) whose preceding RR gap is at least
/// `factor` times the median gap. Identifies injected pauses in `Other` records.
pub fn long_gap_beats(true_r: &[usize], factor: f64) -> Vec<usize> {
    if true_r.len() < 3 {
        return Vec::new();
    }
    let mut gaps: Vec<usize> = true_r.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = gaps.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2] as f64;
    let mut out = Vec::new();
    for (k, gap) in gaps.drain(..).enumerate() {
        if gap as f64 >= factor * median {
            // beat k+1 terminates the long gap
            out.push(k + 1);
        }
    }
    out
}
