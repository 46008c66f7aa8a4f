//! Per-beat features: QRS morphology, wavelet energies, denoising-autoencoder
//! embeddings, plus whole-record summary features for the blender.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Act, AdamState, Mlp, NetError};
use crate::persist::{ModelBlob, PersistError};
use crate::segment::BeatSequence;
use crate::signal::EcgRecord;
use crate::wavelet::{dwt, wavelet_energies, Wavelet, WaveletError, DWT_LEVELS};

pub const SDAE_MAGIC: [u8; 4] = *b"SDAE";

/// Embedding width produced by each autoencoder.
pub const EMBED_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("beat window of {len} samples, need at least {min}")]
    WindowTooShort { len: usize, min: usize },
    #[error("{n} training inputs, need at least {min}")]
    InsufficientData { n: usize, min: usize },
    #[error("input of {found} values where {expected} are expected")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no beats")]
    NoBeats,
    #[error("{left} beats but {right} per-beat values")]
    LengthMismatch { left: usize, right: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

/// r_amp, q_amp, and QRS duration from one beat window with R at the center.
///
/// Q is the minimum over the 80 ms before R, S the minimum over the 80 ms
/// after; argmin ties break toward the index farthest from R, so an all-zero
/// window yields the full search span.
pub fn beat_morphology(window: &[f64], fs: f64) -> Result<(f64, f64, f64), FeatureError> {
    let qs = (0.08 * fs).floor() as usize;
    let min_len = 2 * qs + 1;
    if window.len() < min_len {
        return Err(FeatureError::WindowTooShort { len: window.len(), min: min_len });
    }
    let c = window.len() / 2;
    let r_amp = window[c];
    // Leftward scan: earlier index wins ties (farthest from R).
    let mut q_index = c - qs;
    for i in c - qs..c {
        if window[i] < window[q_index] {
            q_index = i;
        }
    }
    // Rightward scan: later index wins ties.
    let mut s_index = c + qs;
    for i in (c + 1..=c + qs).rev() {
        if window[i] < window[s_index] {
            s_index = i;
        }
    }
    let q_amp = window[q_index];
    let qrs_dur = (s_index - q_index) as f64 / fs;
    Ok((r_amp, q_amp, qrs_dur))
}

/// Which input family an autoencoder was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdaeDomain {
    Beats,
    Coeffs,
}

impl SdaeDomain {
    fn code(self) -> u32 {
        match self {
            SdaeDomain::Beats => 0,
            SdaeDomain::Coeffs => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self, PersistError> {
        match code {
            0 => Ok(SdaeDomain::Beats),
            1 => Ok(SdaeDomain::Coeffs),
            other => Err(PersistError::Corrupt(format!("unknown autoencoder domain {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdaeConfig {
    pub hidden: usize,
    pub code: usize,
    /// Probability that each input element is zeroed during training.
    pub corruption_rate: f64,
    /// Epochs for each greedy pretraining stage.
    pub pretrain_epochs: usize,
    /// Epochs of whole-stack fine-tuning.
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SdaeConfig {
    fn default() -> Self {
        SdaeConfig {
            hidden: 64,
            code: EMBED_DIM,
            corruption_rate: 0.25,
            pretrain_epochs: 6,
            finetune_epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Denoising autoencoder stack: encoder input->hidden->code (tanh), decoder
/// code->hidden (tanh) -> input (linear).
#[derive(Debug, Clone, PartialEq)]
pub struct SdaeModel {
    mlp: Mlp,
    pub corruption_rate: f64,
    pub trained_on: SdaeDomain,
}

/// Training phases recorded in the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdaePhase {
    Stage1,
    Stage2,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdaeLossEntry {
    pub phase: SdaePhase,
    pub epoch: usize,
    pub mse: f64,
}

impl SdaeModel {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.mlp.dims[2]
    }

    /// Deterministic encoder forward pass; corruption is a training-only step.
    pub fn encode(&self, input: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if input.len() != self.input_dim() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(self.mlp.forward_partial(input, 2)?)
    }

    pub fn reconstruct(&self, input: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if input.len() != self.input_dim() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(self.mlp.forward(input)?)
    }

    pub fn encoder_weight(&self, layer: usize) -> &[f64] {
        self.mlp.weight(layer)
    }

    pub fn to_blob(&self) -> ModelBlob {
        let dims = vec![
            self.mlp.dims[0] as u32,
            self.mlp.dims[1] as u32,
            self.mlp.dims[2] as u32,
            self.trained_on.code(),
            // Corruption rate kept in basis points so dims stay integral.
            (self.corruption_rate * 10_000.0).round() as u32,
        ];
        ModelBlob::new(&SDAE_MAGIC, dims, self.mlp.params.clone())
    }

    pub fn from_blob(blob: &ModelBlob) -> Result<Self, PersistError> {
        if blob.dims.len() != 5 {
            return Err(PersistError::Corrupt(format!(
                "expected 5 shape dims, found {}",
                blob.dims.len()
            )));
        }
        let (input, hidden, code) =
            (blob.dims[0] as usize, blob.dims[1] as usize, blob.dims[2] as usize);
        let dims = [input, hidden, code, hidden, input];
        if blob.floats.len() != Mlp::param_count(&dims) {
            return Err(PersistError::Corrupt(format!(
                "{} floats for autoencoder dims {dims:?}",
                blob.floats.len()
            )));
        }
        let mut mlp = Mlp::new(&dims, &SDAE_ACTS, 0)
            .map_err(|e| PersistError::Corrupt(e.to_string()))?;
        mlp.params.copy_from_slice(&blob.floats);
        Ok(SdaeModel {
            mlp,
            corruption_rate: blob.dims[4] as f64 / 10_000.0,
            trained_on: SdaeDomain::from_code(blob.dims[3])?,
        })
    }
}

const SDAE_ACTS: [Act; 4] = [Act::Tanh, Act::Tanh, Act::Tanh, Act::Linear];

fn corrupt<R: Rng>(rng: &mut R, input: &[f64], rate: f64) -> Vec<f64> {
    if rate == 0.0 {
        return input.to_vec();
    }
    input
        .iter()
        .map(|&v| if rng.gen::<f64>() < rate { 0.0 } else { v })
        .collect()
}

// One denoising-autoencoder training run: per-sample Adam updates on the MSE
// against the uncorrupted target. Returns per-epoch mean MSE.
fn train_autoencoder(
    mlp: &mut Mlp,
    inputs: &[Vec<f64>],
    corruption: f64,
    epochs: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, FeatureError> {
    let dim = mlp.output_dim() as f64;
    let mut adam = AdamState::new(mlp.params.len());
    let mut grad = vec![0.0; mlp.params.len()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_mse = 0.0;
        for (step, &idx) in order.iter().enumerate() {
            let clean = &inputs[idx];
            let noisy = corrupt(rng, clean, corruption);
            let cache = mlp.forward_cache(&noisy)?;
            let recon = cache.activations.last().unwrap();
            let mse =
                recon.iter().zip(clean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / dim;
            if !mse.is_finite() {
                return Err(FeatureError::Net(NetError::NonFiniteLoss { epoch, sequence: step }));
            }
            let dout: Vec<f64> =
                recon.iter().zip(clean).map(|(a, b)| 2.0 * (a - b) / dim).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            mlp.backward(&cache, &dout, &mut grad);
            adam.step(&mut mlp.params, &grad, lr);
            epoch_mse += mse;
        }
        history.push(epoch_mse / inputs.len() as f64);
    }
    Ok(history)
}

/// Greedy layer-wise pretraining followed by joint fine-tuning with masking
/// corruption. Loss history carries the training MSE of every epoch of every
/// phase; stage 1 and joint entries are input-space reconstructions.
pub fn train_sdae(
    inputs: &[Vec<f64>],
    config: &SdaeConfig,
    domain: SdaeDomain,
) -> Result<(SdaeModel, Vec<SdaeLossEntry>), FeatureError> {
    const MIN_INPUTS: usize = 32;
    if inputs.len() < MIN_INPUTS {
        return Err(FeatureError::InsufficientData { n: inputs.len(), min: MIN_INPUTS });
    }
    let dim = inputs[0].len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(FeatureError::DimensionMismatch { expected: dim, found: bad.len() });
    }
    if !(0.0..1.0).contains(&config.corruption_rate) {
        return Err(FeatureError::Net(NetError::InvalidConfig(
            "corruption rate must lie in [0, 1)".into(),
        )));
    }

    let mut history = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Stage 1: outer autoencoder input -> hidden -> input.
    let mut ae1 = Mlp::new(
        &[dim, config.hidden, dim],
        &[Act::Tanh, Act::Linear],
        config.seed,
    )?;
    for (epoch, mse) in train_autoencoder(
        &mut ae1,
        inputs,
        config.corruption_rate,
        config.pretrain_epochs,
        config.learning_rate,
        &mut rng,
    )?
    .into_iter()
    .enumerate()
    {
        history.push(SdaeLossEntry { phase: SdaePhase::Stage1, epoch, mse });
    }

    // Stage 2: inner autoencoder on the clean stage-1 codes.
    let codes: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| ae1.forward_partial(x, 1))
        .collect::<Result<_, _>>()?;
    let mut ae2 = Mlp::new(
        &[config.hidden, config.code, config.hidden],
        &[Act::Tanh, Act::Tanh],
        config.seed.wrapping_add(1),
    )?;
    for (epoch, mse) in train_autoencoder(
        &mut ae2,
        &codes,
        config.corruption_rate,
        config.pretrain_epochs,
        config.learning_rate,
        &mut rng,
    )?
    .into_iter()
    .enumerate()
    {
        history.push(SdaeLossEntry { phase: SdaePhase::Stage2, epoch, mse });
    }

    // Assemble the full stack from the pretrained halves and fine-tune.
    let mut stack = Mlp::new(
        &[dim, config.hidden, config.code, config.hidden, dim],
        &SDAE_ACTS,
        config.seed.wrapping_add(2),
    )?;
    copy_layer(&ae1, 0, &mut stack, 0);
    copy_layer(&ae2, 0, &mut stack, 1);
    copy_layer(&ae2, 1, &mut stack, 2);
    copy_layer(&ae1, 1, &mut stack, 3);
    for (epoch, mse) in train_autoencoder(
        &mut stack,
        inputs,
        config.corruption_rate,
        config.finetune_epochs,
        config.learning_rate,
        &mut rng,
    )?
    .into_iter()
    .enumerate()
    {
        history.push(SdaeLossEntry { phase: SdaePhase::Joint, epoch, mse });
    }

    let model = SdaeModel {
        mlp: stack,
        corruption_rate: config.corruption_rate,
        trained_on: domain,
    };
    Ok((model, history))
}

// Transplants one affine layer (weights + bias) between stacks of equal
// layer shapes.
fn copy_layer(from: &Mlp, from_layer: usize, to: &mut Mlp, to_layer: usize) {
    let w_len = from.weight(from_layer).len();
    let b_len = from.bias(from_layer).len();
    debug_assert_eq!(w_len, to.weight(to_layer).len());
    debug_assert_eq!(b_len, to.bias(to_layer).len());
    let w: Vec<f64> = from.weight(from_layer).to_vec();
    let b: Vec<f64> = from.bias(from_layer).to_vec();
    // Block offsets inside the target parameter vector.
    let mut off = 0;
    for l in 0..to_layer {
        off += to.dims[l + 1] * to.dims[l] + to.dims[l + 1];
    }
    to.params[off..off + w_len].copy_from_slice(&w);
    to.params[off + w_len..off + w_len + b_len].copy_from_slice(&b);
}

/// All features of one heartbeat. The flattened form drops the fifth RWE
/// component (the simplex constraint makes it redundant), giving exactly
/// `BeatFeatureVector::DIM` values.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatFeatureVector {
    pub delta_rr: f64,
    pub rwe: [f64; 5],
    pub twe: f64,
    pub r_amp: f64,
    pub q_amp: f64,
    pub qrs_dur: f64,
    pub we: f64,
    pub beat_embed: Vec<f64>,
    pub coeff_embed: Vec<f64>,
}

impl BeatFeatureVector {
    pub const DIM: usize = 10 + 2 * EMBED_DIM;

    /// Fixed order: delta_rr, rwe[0..4], twe, r_amp, q_amp, qrs_dur, we,
    /// beat embedding, coefficient embedding.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        v.push(self.delta_rr);
        v.extend_from_slice(&self.rwe[..4]);
        v.push(self.twe);
        v.push(self.r_amp);
        v.push(self.q_amp);
        v.push(self.qrs_dur);
        v.push(self.we);
        v.extend_from_slice(&self.beat_embed);
        v.extend_from_slice(&self.coeff_embed);
        debug_assert_eq!(v.len(), Self::DIM);
        v
    }
}

/// Per-beat feature extraction over a segmented record.
pub fn extract_features(
    beats: &BeatSequence,
    sdae_beat: &SdaeModel,
    sdae_coeff: &SdaeModel,
) -> Result<Vec<BeatFeatureVector>, FeatureError> {
    if beats.is_empty() {
        return Err(FeatureError::NoBeats);
    }
    // Both encoders must emit EMBED_DIM values or the flattened vector
    // would not have BeatFeatureVector::DIM entries.
    for sdae in [sdae_beat, sdae_coeff] {
        if sdae.code_dim() != EMBED_DIM {
            return Err(FeatureError::DimensionMismatch {
                expected: EMBED_DIM,
                found: sdae.code_dim(),
            });
        }
    }
    let mut out = Vec::with_capacity(beats.len());
    for (t, window) in beats.windows.iter().enumerate() {
        let decomp = dwt(window, Wavelet::Db4, DWT_LEVELS)?;
        let energies = wavelet_energies(&decomp);
        let (r_amp, q_amp, qrs_dur) = beat_morphology(window, beats.fs)?;
        let beat_embed = sdae_beat.encode(window)?;
        let coeff_embed = sdae_coeff.encode(&decomp.concat_coefficients())?;
        out.push(BeatFeatureVector {
            delta_rr: beats.delta_rr[t],
            rwe: energies.rwe,
            twe: energies.twe,
            r_amp,
            q_amp,
            qrs_dur,
            we: energies.we,
            beat_embed,
            coeff_embed,
        });
    }
    Ok(out)
}

/// Whole-record wavelet summary plus dispersion statistics for the blender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordFeatures {
    pub rwe_whole: [f64; 5],
    pub we_whole: f64,
    pub aad_we: f64,
    pub aad_delta_rr: f64,
}

impl RecordFeatures {
    /// The 7 reals entering a prediction vector: the first four RWE
    /// components (the fifth is simplex-redundant), whole-record WE, and the
    /// two dispersion statistics.
    pub fn blender_slots(&self) -> [f64; 7] {
        [
            self.rwe_whole[0],
            self.rwe_whole[1],
            self.rwe_whole[2],
            self.rwe_whole[3],
            self.we_whole,
            self.aad_we,
            self.aad_delta_rr,
        ]
    }
}

/// Mean absolute deviation around the mean.
pub fn aad(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).abs()).sum::<f64>() / xs.len() as f64
}

pub fn record_features(
    record: &EcgRecord,
    beats: &BeatSequence,
    per_beat_we: &[f64],
) -> Result<RecordFeatures, FeatureError> {
    if beats.is_empty() {
        return Err(FeatureError::NoBeats);
    }
    if per_beat_we.len() != beats.len() {
        return Err(FeatureError::LengthMismatch {
            left: beats.len(),
            right: per_beat_we.len(),
        });
    }
    let decomp = dwt(&record.samples, Wavelet::Db4, DWT_LEVELS)?;
    let energies = wavelet_energies(&decomp);
    Ok(RecordFeatures {
        rwe_whole: energies.rwe,
        we_whole: energies.we,
        aad_we: aad(per_beat_we),
        aad_delta_rr: aad(&beats.delta_rr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{detect_r_peaks, segment_beats, DetectorConfig};
    use crate::signal::{normalize, synthesize_ecg, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn template_window(fs: f64) -> Vec<f64> {
        // Q dip -0.3 at 40 ms before R, R = 1.0 at center, S dip -0.4 at
        // 40 ms after, zero elsewhere.
        let half = (0.33 * fs).floor() as usize;
        let mut w = vec![0.0; 2 * half + 1];
        let c = half;
        let off = (0.040 * fs).round() as usize;
        w[c] = 1.0;
        w[c - off] = -0.3;
        w[c + off] = -0.4;
        w
    }

    #[test]
    fn morphology_matches_constructed_template() {
        let fs = 300.0;
        let (r, q, dur) = beat_morphology(&template_window(fs), fs).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(q, -0.3);
        // Q at c-12 and S at c+12: 24 samples at 300 Hz.
        assert_abs_diff_eq!(dur, 0.080, epsilon = 1e-12);
    }

    #[test]
    fn morphology_flat_window_spans_full_search_range() {
        let fs = 300.0;
        let w = vec![0.0; 199];
        let (r, q, dur) = beat_morphology(&w, fs).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(q, 0.0);
        // Ties break to the farthest index on both sides: 2*24/300.
        assert_abs_diff_eq!(dur, 48.0 / 300.0, epsilon = 1e-12);
    }

    #[test]
    fn morphology_rejects_short_windows() {
        assert!(matches!(
            beat_morphology(&vec![0.0; 48], 300.0),
            Err(FeatureError::WindowTooShort { len: 48, min: 49 })
        ));
    }

    fn tiny_config() -> SdaeConfig {
        SdaeConfig {
            hidden: 12,
            code: 4,
            corruption_rate: 0.25,
            pretrain_epochs: 3,
            finetune_epochs: 4,
            learning_rate: 3e-3,
            seed: 5,
        }
    }

    fn random_inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn sdae_needs_enough_inputs() {
        assert!(matches!(
            train_sdae(&random_inputs(10, 8, 0), &tiny_config(), SdaeDomain::Beats),
            Err(FeatureError::InsufficientData { n: 10, min: 32 })
        ));
    }

    #[test]
    fn sdae_rejects_ragged_inputs() {
        let mut inputs = random_inputs(40, 8, 1);
        inputs[7] = vec![0.0; 5];
        assert!(matches!(
            train_sdae(&inputs, &tiny_config(), SdaeDomain::Beats),
            Err(FeatureError::DimensionMismatch { expected: 8, found: 5 })
        ));
    }

    #[test]
    fn sdae_training_reduces_reconstruction_error() {
        // Structured inputs: two prototype shapes plus small jitter.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Vec<f64>> = (0..80)
            .map(|i| {
                (0..16)
                    .map(|j| {
                        let base = if i % 2 == 0 {
                            (j as f64 / 4.0).sin()
                        } else {
                            (j as f64 / 2.5).cos()
                        };
                        base + rng.gen_range(-0.05..0.05)
                    })
                    .collect()
            })
            .collect();
        let config = SdaeConfig { finetune_epochs: 12, ..tiny_config() };
        let (model, history) = train_sdae(&inputs, &config, SdaeDomain::Beats).unwrap();
        let first = history.first().unwrap();
        let last = history.last().unwrap();
        assert_eq!(first.phase, SdaePhase::Stage1);
        assert_eq!(last.phase, SdaePhase::Joint);
        assert!(last.mse < first.mse, "{} !< {}", last.mse, first.mse);
        assert_eq!(model.code_dim(), 4);
        // History covers every epoch of all three phases.
        assert_eq!(history.len(), 3 + 3 + 12);
    }

    #[test]
    fn sdae_memorizes_a_single_repeated_point() {
        let v: Vec<f64> = vec![0.3, -0.6, 0.9, 0.1];
        let inputs: Vec<Vec<f64>> = vec![v.clone(); 32];
        let config = SdaeConfig {
            hidden: 8,
            code: 4,
            corruption_rate: 0.0,
            pretrain_epochs: 40,
            finetune_epochs: 400,
            learning_rate: 1e-2,
            seed: 2,
        };
        let (model, _) = train_sdae(&inputs, &config, SdaeDomain::Beats).unwrap();
        let recon = model.reconstruct(&v).unwrap();
        let mse =
            recon.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64;
        assert!(mse < 1e-4, "memorization MSE {mse}");
    }

    #[test]
    fn sdae_training_is_deterministic() {
        let inputs = random_inputs(40, 8, 9);
        let (a, ha) = train_sdae(&inputs, &tiny_config(), SdaeDomain::Coeffs).unwrap();
        let (b, hb) = train_sdae(&inputs, &tiny_config(), SdaeDomain::Coeffs).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn encode_is_deterministic_and_matches_manual_forward() {
        let inputs = random_inputs(40, 8, 11);
        let (model, _) = train_sdae(&inputs, &tiny_config(), SdaeDomain::Beats).unwrap();
        let x = &inputs[0];
        let e1 = model.encode(x).unwrap();
        let e2 = model.encode(x).unwrap();
        assert_eq!(e1, e2);
        // Manual two-layer evaluation with the raw weights.
        let mut h1 = vec![0.0; 12];
        for i in 0..12 {
            let row = &model.encoder_weight(0)[i * 8..(i + 1) * 8];
            let b = model.mlp.bias(0)[i];
            h1[i] = (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh();
        }
        let mut code = vec![0.0; 4];
        for i in 0..4 {
            let row = &model.encoder_weight(1)[i * 12..(i + 1) * 12];
            let b = model.mlp.bias(1)[i];
            code[i] = (row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>() + b).tanh();
        }
        for (a, b) in e1.iter().zip(&code) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let inputs = random_inputs(40, 8, 13);
        let (model, _) = train_sdae(&inputs, &tiny_config(), SdaeDomain::Beats).unwrap();
        assert!(matches!(
            model.encode(&[1.0, 2.0]),
            Err(FeatureError::DimensionMismatch { expected: 8, found: 2 })
        ));
    }

    #[test]
    fn encode_satisfies_weight_norm_lipschitz_bound() {
        let inputs = random_inputs(64, 8, 17);
        let (model, _) = train_sdae(&inputs, &tiny_config(), SdaeDomain::Beats).unwrap();
        let max_row_l1 = |w: &[f64], rows: usize, cols: usize| -> f64 {
            (0..rows)
                .map(|i| w[i * cols..(i + 1) * cols].iter().map(|v| v.abs()).sum())
                .fold(0.0, f64::max)
        };
        let bound =
            max_row_l1(model.encoder_weight(0), 12, 8) * max_row_l1(model.encoder_weight(1), 4, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ex = model.encode(&x).unwrap();
            let ey = model.encode(&y).unwrap();
            let d_in =
                x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let d_out =
                ex.iter().zip(&ey).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d_out <= bound * d_in + 1e-12, "{d_out} > {bound} * {d_in}");
        }
    }

    #[test]
    fn sdae_blob_round_trips() {
        let inputs = random_inputs(40, 8, 19);
        let (model, _) = train_sdae(&inputs, &tiny_config(), SdaeDomain::Coeffs).unwrap();
        let back = SdaeModel::from_blob(&model.to_blob()).unwrap();
        assert_eq!(back, model);
    }

    fn trained_pair() -> (SdaeModel, SdaeModel, BeatSequence) {
        let config = SynthConfig { seed: 7, ..SynthConfig::default() };
        let (rec, _) = synthesize_ecg(&config).unwrap();
        let rec = normalize(&rec).unwrap();
        let peaks = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        let beats = segment_beats(&rec, &peaks).unwrap();
        let windows = beats.windows.clone();
        let coeffs: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| dwt(w, Wavelet::Db4, DWT_LEVELS).unwrap().concat_coefficients())
            .collect();
        let config = SdaeConfig {
            code: EMBED_DIM,
            pretrain_epochs: 1,
            finetune_epochs: 1,
            ..tiny_config()
        };
        let (sdae_beat, _) = train_sdae(&windows, &config, SdaeDomain::Beats).unwrap();
        let (sdae_coeff, _) = train_sdae(&coeffs, &config, SdaeDomain::Coeffs).unwrap();
        (sdae_beat, sdae_coeff, beats)
    }

    #[test]
    fn feature_vectors_have_fixed_dimension() {
        let (sdae_beat, sdae_coeff, beats) = trained_pair();
        let feats = extract_features(&beats, &sdae_beat, &sdae_coeff).unwrap();
        assert_eq!(feats.len(), beats.len());
        assert_eq!(BeatFeatureVector::DIM, 42);
        for f in &feats {
            let v = f.to_vec();
            assert_eq!(v.len(), 42);
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn identical_beats_give_identical_features() {
        let (sdae_beat, sdae_coeff, mut beats) = trained_pair();
        // Duplicate a window with matching delta to force two equal beats.
        beats.windows[1] = beats.windows[0].clone();
        beats.delta_rr[1] = beats.delta_rr[0];
        let feats = extract_features(&beats, &sdae_beat, &sdae_coeff).unwrap();
        assert_eq!(feats[0], feats[1]);
    }

    #[test]
    fn normal_record_delta_rr_stays_near_mean() {
        let config = SynthConfig { seed: 21, rr_jitter: 0.02, ..SynthConfig::default() };
        let (rec, _) = synthesize_ecg(&config).unwrap();
        let rec = normalize(&rec).unwrap();
        let peaks = detect_r_peaks(&rec, &DetectorConfig::default()).unwrap();
        let beats = segment_beats(&rec, &peaks).unwrap();
        for &d in &beats.delta_rr {
            assert!(
                (d - config.mean_rr_s).abs() <= 3.0 * config.rr_jitter * config.mean_rr_s + 0.02,
                "delta_rr {d} strays from {}",
                config.mean_rr_s
            );
        }
    }

    #[test]
    fn aad_matches_hand_computation_and_shift_invariance() {
        assert_abs_diff_eq!(aad(&[0.8, 1.0, 1.2]), 0.4 / 3.0, epsilon = 1e-12);
        assert_eq!(aad(&[2.5; 6]), 0.0);
        let xs = [0.3, 1.7, -0.4, 0.9];
        let shifted: Vec<f64> = xs.iter().map(|x| x + 5.5).collect();
        assert_abs_diff_eq!(aad(&xs), aad(&shifted), epsilon = 1e-12);
    }

    #[test]
    fn record_features_are_well_formed() {
        let (_, _, beats) = trained_pair();
        let config = SynthConfig { seed: 7, ..SynthConfig::default() };
        let (rec, _) = synthesize_ecg(&config).unwrap();
        let rec = normalize(&rec).unwrap();
        // 0.5 is exactly representable, so the mean is exact and aad is 0.0.
        let per_beat_we = vec![0.5; beats.len()];
        let rf = record_features(&rec, &beats, &per_beat_we).unwrap();
        let sum: f64 = rf.rwe_whole.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        assert_eq!(rf.aad_we, 0.0);
        assert!(rf.aad_delta_rr >= 0.0);
        assert_eq!(rf.blender_slots().len(), 7);
        assert_abs_diff_eq!(rf.blender_slots()[4], rf.we_whole, epsilon = 0.0);
    }

    #[test]
    fn record_features_validate_lengths() {
        let (_, _, beats) = trained_pair();
        let config = SynthConfig { seed: 7, ..SynthConfig::default() };
        let (rec, _) = synthesize_ecg(&config).unwrap();
        assert!(matches!(
            record_features(&rec, &beats, &[1.0]),
            Err(FeatureError::LengthMismatch { .. })
        ));
    }
}
