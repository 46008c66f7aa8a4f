//! R-peak detection and beat segmentation.
//!
//! The detector follows the Pan-Tompkins chain (derivative, squaring,
//! moving-window integration) with an adaptive threshold taken from a long
//! moving average of the integrated signal. Detected peaks cut the record into
//! fixed-width symmetric windows of 0.66 s around each R peak.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::EcgRecord;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("record too short for detection: {len} samples, need at least {min}")]
    RecordTooShort { len: usize, min: usize },
    #[error("no beats to segment")]
    NoBeats,
    #[error("r index {index} out of bounds for record of {len} samples")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("r indices must be strictly ascending")]
    NotAscending,
}

/// Tuning knobs of the R-peak detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// 5-point derivative taps, applied centered.
    pub deriv_kernel: [f64; 5],
    /// Moving-window integration length in seconds.
    pub integration_window_s: f64,
    /// Minimum spacing between detections, seconds.
    pub refractory_s: f64,
    /// Length of the moving average that adapts the threshold, seconds.
    pub ma_window_s: f64,
    /// Threshold = threshold_scale * moving average of the integrated signal.
    pub threshold_scale: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            deriv_kernel: [-0.125, -0.25, 0.0, 0.25, 0.125],
            integration_window_s: 0.150,
            refractory_s: 0.200,
            ma_window_s: 2.5,
            threshold_scale: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        // Windows must be positive and refractory at least 100 ms; enforced by
        // construction everywhere the config is deserialized.
        debug_assert!(self.integration_window_s > 0.0);
        debug_assert!(self.ma_window_s > 0.0);
        debug_assert!(self.refractory_s >= 0.1);
        Ok(())
    }
}

/// An ordered sequence of fixed-width beat windows cut from one record.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSequence {
    pub record_id: String,
    pub fs: f64,
    /// Strictly ascending R-peak sample indices, one per window.
    pub r_indices: Vec<usize>,
    /// One window per beat, each exactly `2*floor(0.33*fs)+1` samples.
    pub windows: Vec<Vec<f64>>,
    /// Seconds since the previous beat; the first entry is the mean of the rest.
    pub delta_rr: Vec<f64>,
}

impl BeatSequence {
    pub fn len(&self) -> usize {
        self.r_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_indices.is_empty()
    }

    pub fn window_width(&self) -> usize {
        beat_window_width(self.fs)
    }
}

/// Width of a beat window at sampling rate `fs`: odd by construction so the
/// R peak sits at the exact center sample.
pub fn beat_window_width(fs: f64) -> usize {
    2 * half_width(fs) + 1
}

fn half_width(fs: f64) -> usize {
    (0.33 * fs).floor() as usize
}

// Centered convolution. The left end extends with zeros so that prepending
// zeros to the signal shifts the output exactly; the right end replicates the
// final sample, otherwise the jump to an implicit zero baseline would fake a
// high-slope edge at the end of the record.
fn convolve_centered(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len() as i64;
    let half = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; signal.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let j = i as i64 + k as i64 - half;
            if j >= 0 {
                acc += w * signal[j.min(n - 1) as usize];
            }
        }
        *o = acc;
    }
    out
}

// Centered moving average over `width` samples. Windows clipped by a record
// boundary divide by the actual overlap, not the nominal width; a constant
// denominator would dilute the average near the ends and let noise cross the
// adaptive threshold there.
fn moving_average(signal: &[f64], width: usize) -> Vec<f64> {
    let width = width.max(1);
    let n = signal.len();
    let half = width / 2;
    // prefix[i] = sum of signal[..i]
    let mut prefix = vec![0.0; n + 1];
    for (i, s) in signal.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s;
    }
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + (width - 1 - half)).min(n - 1);
        *o = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
    }
    out
}

/// Detects R-peak sample indices in `record`.
///
/// Candidates are maxima of the integrated Pan-Tompkins signal above an
/// adaptive moving-average threshold, refined to the largest raw sample within
/// +/-100 ms and thinned by the refractory period (larger amplitude wins).
pub fn detect_r_peaks(
    record: &EcgRecord,
    config: &DetectorConfig,
) -> Result<Vec<usize>, SegmentError> {
    config.validate()?;
    let fs = record.fs;
    let n = record.samples.len();
    let integ_w = (config.integration_window_s * fs).round().max(1.0) as usize;
    if n < integ_w {
        return Err(SegmentError::RecordTooShort { len: n, min: integ_w });
    }

    let deriv = convolve_centered(&record.samples, &config.deriv_kernel);
    let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    let integrated = moving_average(&squared, integ_w);
    let ma_w = (config.ma_window_s * fs).round().max(1.0) as usize;
    let threshold = moving_average(&integrated, ma_w);

    // One candidate per contiguous super-threshold run: the run's energy max.
    let mut candidates: Vec<usize> = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=n {
        let above = i < n && integrated[i] > config.threshold_scale * threshold[i];
        match (above, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) => {
                let peak = (start..i)
                    .max_by(|&a, &b| integrated[a].total_cmp(&integrated[b]))
                    .unwrap();
                candidates.push(peak);
                run_start = None;
            }
            _ => {}
        }
    }

    // Refine each candidate to the maximum raw amplitude within +/-100 ms.
    let search = (0.100 * fs).round() as usize;
    let mut refined: Vec<usize> = candidates
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(search);
            let hi = (c + search).min(n - 1);
            (lo..=hi)
                .max_by(|&a, &b| record.samples[a].total_cmp(&record.samples[b]))
                .unwrap()
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();

    // Collapse peaks closer than the refractory period, keeping the larger one.
    let refractory = (config.refractory_s * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(refined.len());
    for idx in refined {
        match peaks.last() {
            Some(&last) if idx - last < refractory => {
                if record.samples[idx] > record.samples[last] {
                    *peaks.last_mut().unwrap() = idx;
                }
            }
            _ => peaks.push(idx),
        }
    }
    Ok(peaks)
}

/// Cuts `record` into symmetric fixed-width windows around the given R peaks.
///
/// Out-of-bounds window positions are zero-padded so every window has the same
/// width and the sequence length always equals the peak count.
pub fn segment_beats(
    record: &EcgRecord,
    r_indices: &[usize],
) -> Result<BeatSequence, SegmentError> {
    if r_indices.is_empty() {
        return Err(SegmentError::NoBeats);
    }
    let n = record.samples.len();
    for w in r_indices.windows(2) {
        if w[1] <= w[0] {
            return Err(SegmentError::NotAscending);
        }
    }
    if let Some(&bad) = r_indices.iter().find(|&&r| r >= n) {
        return Err(SegmentError::IndexOutOfBounds { index: bad, len: n });
    }

    let half = half_width(record.fs) as i64;
    let windows: Vec<Vec<f64>> = r_indices
        .iter()
        .map(|&r| {
            ((r as i64 - half)..=(r as i64 + half))
                .map(|j| {
                    if j >= 0 && (j as usize) < n {
                        record.samples[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut delta_rr = vec![0.0; r_indices.len()];
    for t in 1..r_indices.len() {
        delta_rr[t] = (r_indices[t] - r_indices[t - 1]) as f64 / record.fs;
    }
    delta_rr[0] = if r_indices.len() > 1 {
        delta_rr[1..].iter().sum::<f64>() / (r_indices.len() - 1) as f64
    } else {
        1.0
    };

    Ok(BeatSequence {
        record_id: record.id.clone(),
        fs: record.fs,
        r_indices: r_indices.to_vec(),
        windows,
        delta_rr,
    })
}

/// Sensitivity and positive predictive value of `detected` against `truth`
/// with a +/-`tolerance_samples` match window. Greedy one-to-one matching.
pub fn detection_quality(
    detected: &[usize],
    truth: &[usize],
    tolerance_samples: usize,
) -> (f64, f64) {
    let mut used = vec![false; detected.len()];
    let mut tp = 0usize;
    for &t in truth {
        let mut best: Option<(usize, usize)> = None;
        for (i, &d) in detected.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist = t.abs_diff(d);
            if dist <= tolerance_samples && best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((i, dist));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            tp += 1;
        }
    }
    let sensitivity = if truth.is_empty() {
        1.0
    } else {
        tp as f64 / truth.len() as f64
    };
    let ppv = if detected.is_empty() {
        1.0
    } else {
        tp as f64 / detected.len() as f64
    };
    (sensitivity, ppv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{normalize, synthesize_ecg, EcgRecord, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn record(samples: Vec<f64>, fs: f64) -> EcgRecord {
        EcgRecord::new("t", fs, samples, None).unwrap()
    }

    #[test]
    fn all_zero_record_has_no_peaks() {
        let rec = record(vec![0.0; 3000], 300.0);
        let peaks = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        assert!(peaks.is_empty());
    }

    #[test]
    fn too_short_record_errors() {
        let rec = record(vec![0.0; 10], 300.0);
        assert!(matches!(
            detect_r_peaks(&rec, &DetectorConfig::default()),
            Err(SegmentError::RecordTooShort { .. })
        ));
    }

    #[test]
    fn close_impulses_collapse_to_one() {
        // Two unit impulses 150 ms apart: the 200 ms refractory forces one hit.
        let mut samples = vec![0.0; 3000];
        samples[1500] = 1.0;
        samples[1500 + 45] = 1.0;
        let rec = record(samples, 300.0);
        let peaks = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        assert_eq!(peaks.len(), 1, "expected one detection, got {peaks:?}");
    }

    #[test]
    fn synthetic_normal_peaks_match_ground_truth() {
        let config = SynthConfig { seed: 7, mean_rr_s: 0.909, ..SynthConfig::default() };
        let (rec, truth) = synthesize_ecg(&config).unwrap();
        let rec = normalize(&rec).unwrap();
        let peaks = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        let (sens, ppv) = detection_quality(&peaks, &truth, 15);
        assert_eq!(sens, 1.0, "sensitivity {sens} below 1; peaks {peaks:?} truth {truth:?}");
        assert_eq!(ppv, 1.0, "ppv {ppv} below 1");
    }

    #[test]
    fn detector_is_translation_covariant() {
        let config = SynthConfig {
            seed: 11,
            duration_s: 12.0,
            ..SynthConfig::default()
        };
        let (rec, _) = synthesize_ecg(&config).unwrap();
        let rec = normalize(&rec).unwrap();
        let base = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        for k in [1usize, 17, 450] {
            let mut shifted = vec![0.0; k];
            shifted.extend_from_slice(&rec.samples);
            let shifted = record(shifted, rec.fs);
            let got = detect_r_peaks(&shifted, &DetectorConfig::default()).unwrap();
            let expect: Vec<usize> = base.iter().map(|p| p + k).collect();
            assert_eq!(got, expect, "shift by {k} broke covariance");
        }
    }

    #[test]
    fn window_geometry_is_exact() {
        let mut samples = vec![0.0; 9000];
        samples[2000] = 1.0;
        let rec = record(samples, 300.0);
        let beats = segment_beats(&rec, &[2000]).unwrap();
        assert_eq!(beats.windows[0].len(), 199);
        assert_eq!(beats.window_width(), 199);
        // R value sits at the center sample.
        assert_eq!(beats.windows[0][99], 1.0);
        // Window covers samples 1901..=2099.
        assert_eq!(beats.windows[0][0], rec.samples[1901]);
        assert_eq!(beats.windows[0][198], rec.samples[2099]);
    }

    #[test]
    fn boundary_windows_are_zero_padded() {
        let samples: Vec<f64> = (0..9000).map(|i| (i % 7) as f64).collect();
        let rec = record(samples, 300.0);
        let beats = segment_beats(&rec, &[50]).unwrap();
        let w = &beats.windows[0];
        assert_eq!(w.len(), 199);
        // 99 - 50 = 49 leading zeros before sample 0 appears.
        assert!(w[..49].iter().all(|&x| x == 0.0));
        assert_eq!(w[49], rec.samples[0]);
    }

    #[test]
    fn delta_rr_first_beat_is_mean_of_rest() {
        let rec = record(vec![0.0; 3000], 300.0);
        let beats = segment_beats(&rec, &[300, 600, 1200]).unwrap();
        assert_abs_diff_eq!(beats.delta_rr[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(beats.delta_rr[2], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(beats.delta_rr[0], 1.5, epsilon = 1e-12);
        // Exact integer gap relation for t >= 1.
        assert_eq!((beats.delta_rr[2] * 300.0).round() as usize, 600);
    }

    #[test]
    fn single_beat_delta_rr_defaults_to_one() {
        let rec = record(vec![0.0; 3000], 300.0);
        let beats = segment_beats(&rec, &[1500]).unwrap();
        assert_eq!(beats.delta_rr, vec![1.0]);
    }

    #[test]
    fn empty_indices_error() {
        let rec = record(vec![0.0; 3000], 300.0);
        assert!(matches!(
            segment_beats(&rec, &[]),
            Err(SegmentError::NoBeats)
        ));
    }

    #[test]
    fn thirty_second_record_at_66_bpm_gives_33_steps() {
        let config = SynthConfig { seed: 7, mean_rr_s: 0.909, ..SynthConfig::default() };
        let (rec, _) = synthesize_ecg(&config).unwrap();
        let rec = normalize(&rec).unwrap();
        let peaks = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        let beats = segment_beats(&rec, &peaks).unwrap();
        assert_eq!(rec.len(), 9000);
        assert!((32..=34).contains(&beats.len()), "T = {}", beats.len());
    }
}
