//! Two-level classification pipeline: an ensemble of binary sequence
//! classifiers over beat features, a blender that maps their stacked outputs
//! to the four rhythm classes, and challenge-style F1 evaluation.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::{
    extract_features, record_features, FeatureError, RecordFeatures, SdaeModel,
};
use crate::net::{
    softmax_in_place, train, weighted_softmax_ce, Act, AdamState, LabeledSequence, Mlp,
    ModelShape, NetError, SequenceModel, Tensor2, TrainConfig,
};
use crate::persist::{ModelBlob, PersistError};
use crate::segment::{detect_r_peaks, segment_beats, DetectorConfig, SegmentError};
use crate::signal::{normalize, EcgRecord, RhythmClass, SignalError, CLASS_COUNT};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BLENDER_MAGIC: [u8; 4] = *b"BLND";

/// Width of the reserved external-score block when present.
pub const EXTERNAL_SLOTS: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ensemble spec declares no members")]
    EmptyEnsemble,
    #[error("invalid member spec: {0}")]
    InvalidMember(String),
    #[error("class {0} missing from the training set")]
    MissingClass(RhythmClass),
    #[error("record {0} carries no label")]
    UnlabeledRecord(String),
    #[error("blender data overlaps level-1 training records: {0:?}")]
    LeakageDetected(Vec<String>),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cannot evaluate an empty prediction list")]
    EmptyEvaluation,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// One binary level-1 member: records whose class lies in `target` are the
/// positive side, everything else the negative side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub id: String,
    pub target: Vec<RhythmClass>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<MemberSpec>,
}

impl EnsembleSpec {
    /// Default roster: one-vs-rest for each class, each with an attention and
    /// a plain variant, seeded consecutively from `base`.
    pub fn one_vs_rest(base: &TrainConfig) -> EnsembleSpec {
        let mut members = Vec::with_capacity(2 * CLASS_COUNT);
        for (i, class) in RhythmClass::ALL.iter().enumerate() {
            for (j, attention) in [(0usize, true), (1usize, false)] {
                let mut config = base.clone();
                config.attention = attention;
                config.seed = base.seed.wrapping_add((2 * i + j) as u64);
                members.push(MemberSpec {
                    id: format!("{}-{}", class.name(), if attention { "attn" } else { "plain" }),
                    target: vec![*class],
                    config,
                });
            }
        }
        EnsembleSpec { members }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.members.is_empty() {
            return Err(PipelineError::EmptyEnsemble);
        }
        let mut ids = BTreeSet::new();
        for m in &self.members {
            if m.target.is_empty() || m.target.len() >= CLASS_COUNT {
                return Err(PipelineError::InvalidMember(format!(
                    "member {}: target must be a nonempty proper subset of the classes",
                    m.id
                )));
            }
            let unique: BTreeSet<_> = m.target.iter().collect();
            if unique.len() != m.target.len() {
                return Err(PipelineError::InvalidMember(format!(
                    "member {}: duplicate target class",
                    m.id
                )));
            }
            if !ids.insert(m.id.clone()) {
                return Err(PipelineError::InvalidMember(format!("duplicate member id {}", m.id)));
            }
            m.config.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A record after segmentation and feature extraction, ready for the
/// sequence classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub record_id: String,
    pub label: Option<RhythmClass>,
    /// One flattened feature vector per beat.
    pub features: Vec<Vec<f64>>,
    pub record_feats: RecordFeatures,
    pub r_indices: Vec<usize>,
}

/// Normalizes, detects beats, segments, and extracts features for one record.
pub fn prepare_record(
    record: &EcgRecord,
    detector: &DetectorConfig,
    sdae_beat: &SdaeModel,
    sdae_coeff: &SdaeModel,
) -> Result<PreparedRecord, PipelineError> {
    let normalized = normalize(record)?;
    let peaks = detect_r_peaks(&normalized, detector)?;
    let beats = segment_beats(&normalized, &peaks)?;
    let beat_feats = extract_features(&beats, sdae_beat, sdae_coeff)?;
    let per_beat_we: Vec<f64> = beat_feats.iter().map(|f| f.we).collect();
    let record_feats = record_features(&normalized, &beats, &per_beat_we)?;
    Ok(PreparedRecord {
        record_id: record.id.clone(),
        label: record.label,
        features: beat_feats.iter().map(|f| f.to_vec()).collect(),
        record_feats,
        r_indices: beats.r_indices,
    })
}

/// One trained level-1 member plus its per-epoch training loss.
#[derive(Debug, Clone)]
pub struct TrainedMember {
    pub model: SequenceModel,
    pub loss_history: Vec<f64>,
}

fn binary_label(spec: &MemberSpec, class: RhythmClass) -> usize {
    usize::from(spec.target.contains(&class))
}

/// Trains every member of `spec` on its binary relabeling of `data`.
/// Members train in parallel; each is fully determined by its own seed.
pub fn train_ensemble(
    data: &[PreparedRecord],
    spec: &EnsembleSpec,
) -> Result<Vec<TrainedMember>, PipelineError> {
    spec.validate()?;
    if data.is_empty() {
        return Err(PipelineError::Net(NetError::EmptyDataset));
    }
    let mut labels = Vec::with_capacity(data.len());
    for r in data {
        let label = r
            .label
            .ok_or_else(|| PipelineError::UnlabeledRecord(r.record_id.clone()))?;
        if r.features.is_empty() {
            return Err(PipelineError::Net(NetError::EmptySequence));
        }
        labels.push(label);
    }
    let input_dim = data[0].features[0].len();
    for r in data {
        if let Some(bad) = r.features.iter().find(|f| f.len() != input_dim) {
            return Err(PipelineError::ShapeMismatch(format!(
                "record {}: feature width {} differs from {}",
                r.record_id,
                bad.len(),
                input_dim
            )));
        }
    }
    for m in &spec.members {
        for &class in &m.target {
            if !labels.contains(&class) {
                return Err(PipelineError::MissingClass(class));
            }
        }
        if !labels.iter().any(|&l| !m.target.contains(&l)) {
            let complement = RhythmClass::ALL
                .into_iter()
                .find(|c| !m.target.contains(c))
                .expect("target is a proper subset");
            return Err(PipelineError::MissingClass(complement));
        }
    }

    spec.members
        .par_iter()
        .map(|member| {
            let binary: Vec<LabeledSequence> = data
                .iter()
                .zip(&labels)
                .map(|(r, &label)| LabeledSequence {
                    features: r.features.clone(),
                    label: binary_label(member, label),
                })
                .collect();
            let shape = ModelShape::from_config(&member.config, input_dim, 2)?;
            let mut model = SequenceModel::new(shape, member.config.seed)?;
            let loss_history = train(&mut model, &binary, &member.config)?;
            Ok(TrainedMember { model, loss_history })
        })
        .collect()
}

/// The stacked level-1 output for one record: two softmax scores per member
/// in spec order, an optional reserved external block, and the whole-record
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub level1_scores: Vec<f64>,
    pub external_scores: Option<[f64; EXTERNAL_SLOTS]>,
    pub record_feats: RecordFeatures,
}

impl PredictionVector {
    pub fn dim(&self) -> usize {
        self.level1_scores.len()
            + if self.external_scores.is_some() { EXTERNAL_SLOTS } else { 0 }
            + 7
    }

    /// Flattened blender input: member scores, external block when present,
    /// then the record-feature slots.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.level1_scores);
        if let Some(ext) = self.external_scores {
            v.extend_from_slice(&ext);
        }
        v.extend_from_slice(&self.record_feats.blender_slots());
        v
    }

    /// Serialized field list of fixed width for a given member count: member
    /// scores, a 0/1 external-presence flag, the four external slots (zeros
    /// when absent), then the record features. Floats print in shortest
    /// round-trip form, so parsing recovers the exact values.
    pub fn serialize_fields(&self) -> String {
        let mut fields: Vec<String> = Vec::with_capacity(self.level1_scores.len() + 12);
        for s in &self.level1_scores {
            fields.push(s.to_string());
        }
        fields.push(if self.external_scores.is_some() { "1" } else { "0" }.to_string());
        let ext = self.external_scores.unwrap_or([0.0; EXTERNAL_SLOTS]);
        for e in ext {
            fields.push(e.to_string());
        }
        for f in self.record_feats.blender_slots() {
            fields.push(f.to_string());
        }
        fields.join(",")
    }

    /// Parses `serialize_fields` output produced with `members` level-1 models.
    pub fn parse_fields(s: &str, members: usize) -> Result<PredictionVector, PipelineError> {
        let fields: Vec<&str> = s.split(',').collect();
        let expected = 2 * members + 1 + EXTERNAL_SLOTS + 7;
        if fields.len() != expected {
            return Err(PipelineError::LengthMismatch { left: fields.len(), right: expected });
        }
        let num = |f: &str| -> Result<f64, PipelineError> {
            f.trim()
                .parse::<f64>()
                .map_err(|_| PipelineError::ShapeMismatch(format!("bad float field {f:?}")))
        };
        let level1_scores = fields[..2 * members]
            .iter()
            .map(|f| num(f))
            .collect::<Result<Vec<f64>, _>>()?;
        let external_scores = match fields[2 * members].trim() {
            "0" => None,
            "1" => {
                let mut ext = [0.0; EXTERNAL_SLOTS];
                for (e, f) in ext.iter_mut().zip(&fields[2 * members + 1..]) {
                    *e = num(f)?;
                }
                Some(ext)
            }
            other => {
                return Err(PipelineError::ShapeMismatch(format!(
                    "external presence flag must be 0 or 1, got {other:?}"
                )))
            }
        };
        let tail = &fields[2 * members + 1 + EXTERNAL_SLOTS..];
        let slots = tail.iter().map(|f| num(f)).collect::<Result<Vec<f64>, _>>()?;
        Ok(PredictionVector {
            level1_scores,
            external_scores,
            record_feats: RecordFeatures {
                rwe_whole: [slots[0], slots[1], slots[2], slots[3], 0.0],
                we_whole: slots[4],
                aad_we: slots[5],
                aad_delta_rr: slots[6],
            },
        })
    }
}

/// Runs every member over one record's feature sequence and stacks the
/// outputs into a prediction vector.
pub fn assemble(
    features: &[Vec<f64>],
    members: &[SequenceModel],
    record_feats: &RecordFeatures,
    external_scores: Option<[f64; EXTERNAL_SLOTS]>,
) -> Result<PredictionVector, PipelineError> {
    let scores: Vec<Vec<f64>> = members
        .par_iter()
        .map(|m| {
            if m.shape.n_classes != 2 {
                return Err(PipelineError::ShapeMismatch(format!(
                    "level-1 member must be binary, has {} classes",
                    m.shape.n_classes
                )));
            }
            Ok(m.forward(features)?.probs)
        })
        .collect::<Result<_, _>>()?;
    Ok(PredictionVector {
        level1_scores: scores.into_iter().flatten().collect(),
        external_scores,
        record_feats: *record_feats,
    })
}

/// Settings of the level-2 blender MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlenderConfig {
    /// Hidden layer widths; each hidden layer uses tanh.
    pub hidden: Vec<usize>,
    /// Input dropout fraction during training.
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BlenderConfig {
    fn default() -> Self {
        BlenderConfig {
            hidden: vec![32],
            dropout: 0.0,
            epochs: 60,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Level-2 model: a dense network from stacked level-1 outputs to the four
/// class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BlenderModel {
    pub mlp: Mlp,
    pub epochs: usize,
    pub dropout: f64,
}

impl BlenderModel {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Softmax class scores for one flattened prediction vector.
    pub fn predict(&self, input: &[f64]) -> Result<[f64; CLASS_COUNT], PipelineError> {
        let mut logits = self.mlp.forward(input)?;
        softmax_in_place(&mut logits);
        let mut scores = [0.0; CLASS_COUNT];
        scores.copy_from_slice(&logits);
        Ok(scores)
    }

    pub fn to_blob(&self) -> ModelBlob {
        let mut dims: Vec<u32> = vec![self.mlp.dims.len() as u32];
        dims.extend(self.mlp.dims.iter().map(|&d| d as u32));
        dims.push(self.epochs as u32);
        dims.push((self.dropout * 10_000.0).round() as u32);
        ModelBlob::new(&BLENDER_MAGIC, dims, self.mlp.params.clone())
    }

    pub fn from_blob(blob: &ModelBlob) -> Result<BlenderModel, PersistError> {
        let n_dims = blob.dim(0)?;
        let mut layer_dims = Vec::with_capacity(n_dims);
        for i in 0..n_dims {
            layer_dims.push(blob.dim(1 + i)?);
        }
        let epochs = blob.dim(1 + n_dims)?;
        let dropout = blob.dim(2 + n_dims)? as f64 / 10_000.0;
        let acts = blender_acts(n_dims - 1);
        let mut mlp = Mlp::new(&layer_dims, &acts, 0)
            .map_err(|e| PersistError::Corrupt(format!("bad blender dims: {e}")))?;
        if mlp.params.len() != blob.floats.len() {
            return Err(PersistError::Corrupt(format!(
                "blender parameter count {} does not match dims (need {})",
                blob.floats.len(),
                mlp.params.len()
            )));
        }
        mlp.params.copy_from_slice(&blob.floats);
        Ok(BlenderModel { mlp, epochs, dropout })
    }
}

fn blender_acts(n_layers: usize) -> Vec<Act> {
    let mut acts = vec![Act::Tanh; n_layers];
    *acts.last_mut().expect("at least the output layer") = Act::Linear;
    acts
}

/// One blender training example.
#[derive(Debug, Clone, PartialEq)]
pub struct BlenderSample {
    pub record_id: String,
    pub vector: PredictionVector,
    pub label: RhythmClass,
}

/// Trains the blender on held-out prediction vectors. `level1_ids` are the
/// record ids consumed by level-1 training; any overlap aborts with
/// `LeakageDetected`.
pub fn train_blender(
    samples: &[BlenderSample],
    level1_ids: &BTreeSet<String>,
    config: &BlenderConfig,
) -> Result<(BlenderModel, Vec<f64>), PipelineError> {
    let overlap: Vec<String> = samples
        .iter()
        .filter(|s| level1_ids.contains(&s.record_id))
        .map(|s| s.record_id.clone())
        .collect();
    if !overlap.is_empty() {
        return Err(PipelineError::LeakageDetected(overlap));
    }
    if samples.is_empty() {
        return Err(PipelineError::Net(NetError::EmptyDataset));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(PipelineError::Net(NetError::InvalidConfig(
            "dropout must lie in [0, 1)".into(),
        )));
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.vector.to_vec()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label.code()).collect();
    let input_dim = inputs[0].len();
    if let Some(bad) = inputs.iter().find(|v| v.len() != input_dim) {
        return Err(PipelineError::ShapeMismatch(format!(
            "prediction vector width {} differs from {}",
            bad.len(),
            input_dim
        )));
    }

    let mut counts = [0usize; CLASS_COUNT];
    for &l in &labels {
        counts[l] += 1;
    }
    // Inverse-prevalence weights; a class absent from the validation set gets
    // weight zero, which no sample ever reads.
    let n = labels.len() as f64;
    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (CLASS_COUNT as f64 * c as f64) })
        .collect();

    let mut dims = Vec::with_capacity(config.hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(&config.hidden);
    dims.push(CLASS_COUNT);
    let acts = blender_acts(dims.len() - 1);
    let mut mlp = Mlp::new(&dims, &acts, config.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(mlp.params.len());
    let mut grad = vec![0.0; mlp.params.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let keep = 1.0 - config.dropout;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, &idx) in order.iter().enumerate() {
            let mut x = inputs[idx].clone();
            if config.dropout > 0.0 {
                for v in x.iter_mut() {
                    *v = if rng.gen::<f64>() < keep { *v / keep } else { 0.0 };
                }
            }
            let cache = mlp.forward_cache(&x)?;
            let logits =
                Tensor2::from_rows(std::slice::from_ref(cache.activations.last().unwrap()))?;
            let (loss, dlogits) = weighted_softmax_ce(&logits, &labels[idx..=idx], &weights)?;
            if !loss.is_finite() {
                return Err(PipelineError::Net(NetError::NonFiniteLoss { epoch, sequence: step }));
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            mlp.backward(&cache, dlogits.row(0), &mut grad);
            adam.step(&mut mlp.params, &grad, config.learning_rate);
            epoch_loss += loss;
        }
        history.push(epoch_loss / samples.len() as f64);
    }
    Ok((
        BlenderModel { mlp, epochs: config.epochs, dropout: config.dropout },
        history,
    ))
}

/// Everything needed to classify a raw record.
#[derive(Debug, Clone)]
pub struct PipelineModel {
    pub detector: DetectorConfig,
    pub sdae_beat: SdaeModel,
    pub sdae_coeff: SdaeModel,
    pub spec: EnsembleSpec,
    pub members: Vec<SequenceModel>,
    pub blender: BlenderModel,
    /// Ids of every record consumed by level-1 or blender training.
    pub trained_ids: BTreeSet<String>,
}

/// The attention profile one member produced for a record, aligned with the
/// detected beats.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberAttention {
    pub member_id: String,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: [f64; CLASS_COUNT],
    pub label: RhythmClass,
    /// One entry per attention-equipped member, in spec order.
    pub attention: Vec<MemberAttention>,
    /// Detected R-peak sample indices; empty when the fallback fired.
    pub r_indices: Vec<usize>,
    /// True when segmentation failed and the record was scored as noisy.
    pub fallback: bool,
}

/// True for the failure modes that mean "this record cannot be segmented"
/// (flat line, too short, no detectable beats) rather than a caller bug;
/// `predict` maps exactly these to the noisy fallback.
pub fn is_segmentation_failure(e: &PipelineError) -> bool {
    matches!(
        e,
        PipelineError::Signal(SignalError::ZeroVariance)
            | PipelineError::Segment(SegmentError::RecordTooShort { .. })
            | PipelineError::Segment(SegmentError::NoBeats)
            | PipelineError::Feature(FeatureError::NoBeats)
    )
}

fn noisy_fallback() -> Prediction {
    let mut scores = [0.0; CLASS_COUNT];
    scores[RhythmClass::Noisy.code()] = 1.0;
    Prediction {
        scores,
        label: RhythmClass::Noisy,
        attention: Vec::new(),
        r_indices: Vec::new(),
        fallback: true,
    }
}

fn argmax_class(scores: &[f64; CLASS_COUNT]) -> RhythmClass {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    RhythmClass::from_code(best).expect("index below CLASS_COUNT")
}

/// Classifies one raw record with the full pipeline. Records that cannot be
/// segmented (flat signal, too short, no beats) come back as noisy with
/// score 1.0 instead of an error.
pub fn predict(pipeline: &PipelineModel, record: &EcgRecord) -> Result<Prediction, PipelineError> {
    if pipeline.members.len() != pipeline.spec.members.len() {
        return Err(PipelineError::ShapeMismatch(format!(
            "{} trained members for {} spec entries",
            pipeline.members.len(),
            pipeline.spec.members.len()
        )));
    }
    let prepared = match prepare_record(
        record,
        &pipeline.detector,
        &pipeline.sdae_beat,
        &pipeline.sdae_coeff,
    ) {
        Ok(p) => p,
        Err(e) if is_segmentation_failure(&e) => return Ok(noisy_fallback()),
        Err(e) => return Err(e),
    };

    let outputs: Vec<crate::net::ForwardOutput> = pipeline
        .members
        .par_iter()
        .map(|m| m.forward(&prepared.features))
        .collect::<Result<_, _>>()?;

    let mut level1_scores = Vec::with_capacity(2 * outputs.len());
    let mut attention = Vec::new();
    for (spec, out) in pipeline.spec.members.iter().zip(&outputs) {
        level1_scores.extend_from_slice(&out.probs);
        if let Some(a) = &out.attention {
            attention.push(MemberAttention { member_id: spec.id.clone(), a: a.clone() });
        }
    }
    let vector = PredictionVector {
        level1_scores,
        external_scores: None,
        record_feats: prepared.record_feats,
    };
    let scores = pipeline.blender.predict(&vector.to_vec())?;
    Ok(Prediction {
        scores,
        label: argmax_class(&scores),
        attention,
        r_indices: prepared.r_indices,
        fallback: false,
    })
}

/// Per-class F1 plus the challenge average over the three rhythm classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: [f64; CLASS_COUNT],
    pub challenge_average: f64,
}

/// F1 per class (2·TP / (2·TP + FP + FN), zero on an empty denominator) and
/// the mean over normal, AF, and other; the noisy class never enters the
/// average.
pub fn evaluate_f1(
    predictions: &[RhythmClass],
    truth: &[RhythmClass],
) -> Result<F1Report, PipelineError> {
    if predictions.len() != truth.len() {
        return Err(PipelineError::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let mut tp = [0usize; CLASS_COUNT];
    let mut fp = [0usize; CLASS_COUNT];
    let mut fn_ = [0usize; CLASS_COUNT];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p == t {
            tp[p.code()] += 1;
        } else {
            fp[p.code()] += 1;
            fn_[t.code()] += 1;
        }
    }
    let mut per_class = [0.0; CLASS_COUNT];
    for c in 0..CLASS_COUNT {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        per_class[c] = if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 };
    }
    let challenge_average = (per_class[RhythmClass::Normal.code()]
        + per_class[RhythmClass::Af.code()]
        + per_class[RhythmClass::Other.code()])
        / 3.0;
    Ok(F1Report { per_class, challenge_average })
}
