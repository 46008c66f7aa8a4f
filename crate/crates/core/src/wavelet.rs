//! Orthogonal discrete wavelet transform and wavelet-energy features.
//!
//! Mallat cascade with periodic boundary extension. Odd-length inputs are
//! zero-appended to even length at every level, which keeps the per-level
//! transform orthogonal and Parseval exact for arbitrary input lengths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Decomposition depth used across the pipeline.
pub const DWT_LEVELS: usize = 5;

/// ln 5, the maximum wavelet entropy over five bands.
pub const MAX_WE: f64 = 1.6094379124341003;

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("signal of {len} samples is shorter than the {min}-tap filter")]
    SignalTooShort { len: usize, min: usize },
    #[error("unknown wavelet {0:?}")]
    UnknownWavelet(String),
}

/// Supported orthonormal Daubechies wavelets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Db1,
    Db2,
    Db4,
}

const DB1_LOWPASS: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB2_LOWPASS: [f64; 4] = [
    0.48296291314469025,
    0.836516303737469,
    0.22414386804185735,
    -0.12940952255092145,
];

const DB4_LOWPASS: [f64; 8] = [
    0.23037781330885523,
    0.7148465705525415,
    0.6308807679295904,
    -0.02798376941698385,
    -0.18703481171888114,
    0.030841381835986965,
    0.032883011666982945,
    -0.010597401784997278,
];

impl Wavelet {
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Wavelet::Db1 => &DB1_LOWPASS,
            Wavelet::Db2 => &DB2_LOWPASS,
            Wavelet::Db4 => &DB4_LOWPASS,
        }
    }

    /// Quadrature-mirror high-pass: g[k] = (-1)^k h[L-1-k].
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * h[l - 1 - k]
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Db1 => "db1",
            Wavelet::Db2 => "db2",
            Wavelet::Db4 => "db4",
        }
    }

    pub fn parse(name: &str) -> Result<Self, WaveletError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "db1" | "haar" => Ok(Wavelet::Db1),
            "db2" => Ok(Wavelet::Db2),
            "db4" => Ok(Wavelet::Db4),
            other => Err(WaveletError::UnknownWavelet(other.to_string())),
        }
    }
}

impl Default for Wavelet {
    fn default() -> Self {
        Wavelet::Db4
    }
}

/// Output of the analysis cascade: detail bands fine to coarse, then the
/// final approximation band.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    pub wavelet: Wavelet,
    pub levels: usize,
    /// details[0] is d1 (finest) .. details[levels-1] is the coarsest band.
    pub details: Vec<Vec<f64>>,
    pub approx: Vec<f64>,
}

impl WaveletDecomposition {
    /// All coefficients in the fixed order d1..dL then approximation.
    pub fn concat_coefficients(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.details.iter().map(Vec::len).sum::<usize>() + self.approx.len());
        for d in &self.details {
            out.extend_from_slice(d);
        }
        out.extend_from_slice(&self.approx);
        out
    }
}

/// Energies of the five detail bands and the entropy summary built on them.
/// The approximation band is excluded from the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletEnergies {
    pub band_energy: [f64; 5],
    pub twe: f64,
    pub rwe: [f64; 5],
    pub we: f64,
}

// One analysis step on an even-length input: periodic convolution with the
// low/high-pass pair, decimated by 2.
fn dwt_step(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    debug_assert!(n % 2 == 0);
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for i in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for k in 0..h.len() {
            let v = x[(2 * i + k) % n];
            a += h[k] * v;
            d += g[k] * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
    (approx, detail)
}

/// Runs the analysis cascade for `levels` levels.
pub fn dwt(
    signal: &[f64],
    wavelet: Wavelet,
    levels: usize,
) -> Result<WaveletDecomposition, WaveletError> {
    let h = wavelet.lowpass();
    if signal.len() < h.len() {
        return Err(WaveletError::SignalTooShort { len: signal.len(), min: h.len() });
    }
    assert!(levels >= 1, "levels must be at least 1");
    let g = wavelet.highpass();
    let mut current = signal.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        if current.len() % 2 == 1 {
            current.push(0.0);
        }
        let (approx, detail) = dwt_step(&current, h, &g);
        details.push(detail);
        current = approx;
    }
    Ok(WaveletDecomposition { wavelet, levels, details, approx: current })
}

/// Total coefficient count `dwt` produces for an input of `n` samples.
pub fn coefficient_count(mut n: usize, levels: usize) -> usize {
    let mut total = 0;
    for _ in 0..levels {
        n += n % 2;
        n /= 2;
        total += n;
    }
    total + n
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Band energies, their total, the relative distribution, and its Shannon
/// entropy (natural log). A vanishing total falls back to the uniform
/// distribution with maximal entropy.
pub fn wavelet_energies(decomp: &WaveletDecomposition) -> WaveletEnergies {
    assert_eq!(decomp.details.len(), 5, "energy summary is defined over five bands");
    let mut band_energy = [0.0; 5];
    for (e, d) in band_energy.iter_mut().zip(&decomp.details) {
        *e = energy(d);
    }
    energies_from_bands(band_energy)
}

pub(crate) fn energies_from_bands(band_energy: [f64; 5]) -> WaveletEnergies {
    let twe: f64 = band_energy.iter().sum();
    if twe < 1e-12 {
        return WaveletEnergies { band_energy, twe, rwe: [0.2; 5], we: MAX_WE };
    }
    let mut rwe = [0.0; 5];
    for (r, e) in rwe.iter_mut().zip(&band_energy) {
        *r = e / twe;
    }
    let we = -rwe
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>();
    WaveletEnergies { band_energy, twe, rwe, we }
}
