//! Subcommand implementations. Each stage reads corpus/model artifacts,
//! writes its outputs atomically, and records a run manifest next to them.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use beatnet::feature::{train_sdae, SdaeDomain, SdaeLossEntry, SdaeModel, SdaePhase, SDAE_MAGIC};
use beatnet::net::{SequenceModel, SEQUENCE_MODEL_MAGIC};
use beatnet::persist::{write_atomic, ModelBlob};
use beatnet::pipeline::{
    assemble, evaluate_f1, is_segmentation_failure, predict, prepare_record, train_blender,
    train_ensemble, BlenderModel, BlenderSample, EnsembleSpec, PipelineModel, PreparedRecord,
    BLENDER_MAGIC,
};
use beatnet::segment::{detect_r_peaks, segment_beats, DetectorConfig};
use beatnet::signal::{normalize, EcgRecord, RhythmClass};
use beatnet::wavelet::{dwt, Wavelet, DWT_LEVELS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    stage_seed, ManifestBuilder, PipelineConfig, SEED_BLENDER, SEED_SDAE_BEAT, SEED_SDAE_COEFF,
    SEED_SYNTH,
};
use crate::corpus::{load_records, read_labels, synth_corpus, CorpusEntry, Split};
use crate::svg::attention_strip;
use crate::Failure;

/// Roster, record bookkeeping, and detector settings shared by every stage
/// after level-1 training; stored as `ensemble.json` in the models directory.
#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    detector: DetectorConfig,
    spec: EnsembleSpec,
    trained_ids: BTreeSet<String>,
    input_dim: usize,
}

pub fn run_synth(
    out: &Path,
    n: usize,
    seed: u64,
    fs: f64,
    duration_s: f64,
) -> Result<(), Failure> {
    let mut manifest = ManifestBuilder::new(None, Some(seed));
    manifest.stage("synth");
    let artifacts = synth_corpus(out, n, stage_seed(seed, SEED_SYNTH), fs, duration_s)?;
    manifest.artifacts(&artifacts);
    manifest.write(out)
}

pub fn run_segment(
    corpus: &Path,
    out: &Path,
    record_filter: Option<&str>,
    config_path: Option<&Path>,
    fs: f64,
) -> Result<(), Failure> {
    let config = PipelineConfig::load(config_path)?;
    let entries = filter_entries(read_labels(corpus)?, record_filter)?;
    fs::create_dir_all(out).map_err(Failure::io(out))?;
    let mut manifest = ManifestBuilder::new(config_path, None);
    manifest.stage("segment");
    for record in load_records(corpus, &entries, None, fs)? {
        let segmented = (|| -> Result<_, beatnet::pipeline::PipelineError> {
            let normalized = normalize(&record)?;
            let peaks = detect_r_peaks(&normalized, &config.detector)?;
            let beats = segment_beats(&normalized, &peaks)?;
            Ok((peaks, beats))
        })();
        let (peaks, beats) = match segmented {
            Ok(v) => v,
            Err(e) if is_segmentation_failure(&e) => {
                eprintln!("note: {}: {e}; skipped", record.id);
                continue;
            }
            Err(e) => return Err(e.into()),
        };

        let r_path = out.join(format!("{}_r.csv", record.id));
        let mut body = String::from("r_sample_index\n");
        for p in &peaks {
            body.push_str(&format!("{p}\n"));
        }
        write_atomic(&r_path, body.as_bytes()).map_err(Failure::io(&r_path))?;
        manifest.artifact(&r_path);

        let beats_path = out.join(format!("{}_beats.csv", record.id));
        let mut body = String::new();
        for w in &beats.windows {
            body.push_str(&join_floats(w));
            body.push('\n');
        }
        write_atomic(&beats_path, body.as_bytes()).map_err(Failure::io(&beats_path))?;
        manifest.artifact(&beats_path);
    }
    manifest.write(out)
}

pub fn run_features(
    corpus: &Path,
    models: &Path,
    out: &Path,
    split: Option<Split>,
    config_path: Option<&Path>,
    fs: f64,
) -> Result<(), Failure> {
    let config = PipelineConfig::load(config_path)?;
    let (sdae_beat, sdae_coeff) = load_sdaes(models)?;
    let entries = read_labels(corpus)?;
    let records = load_records(corpus, &entries, split, fs)?;
    fs::create_dir_all(out).map_err(Failure::io(out))?;
    let mut manifest = ManifestBuilder::new(config_path, None);
    manifest.stage("features");

    let mut summary = String::from(
        "record_id,rwe1,rwe2,rwe3,rwe4,rwe5,we,aad_we,aad_delta_rr\n",
    );
    for record in &records {
        match prepare_record(record, &config.detector, &sdae_beat, &sdae_coeff) {
            Ok(prepared) => {
                let path = out.join(format!("{}_features.csv", record.id));
                let mut body = String::new();
                for f in &prepared.features {
                    body.push_str(&join_floats(f));
                    body.push('\n');
                }
                write_atomic(&path, body.as_bytes()).map_err(Failure::io(&path))?;
                manifest.artifact(&path);
                let rf = prepared.record_feats;
                summary.push_str(&format!(
                    "{},{}\n",
                    record.id,
                    join_floats(&[
                        rf.rwe_whole[0],
                        rf.rwe_whole[1],
                        rf.rwe_whole[2],
                        rf.rwe_whole[3],
                        rf.rwe_whole[4],
                        rf.we_whole,
                        rf.aad_we,
                        rf.aad_delta_rr,
                    ])
                ));
            }
            Err(e) if is_segmentation_failure(&e) => {
                eprintln!("note: {}: {e}; skipped", record.id)
            }
            Err(e) => return Err(e.into()),
        }
    }
    let summary_path = out.join("record_features.csv");
    write_atomic(&summary_path, summary.as_bytes()).map_err(Failure::io(&summary_path))?;
    manifest.artifact(&summary_path);
    manifest.write(out)
}

pub fn run_train_sdae(
    corpus: &Path,
    models: &Path,
    seed: u64,
    config_path: Option<&Path>,
    fs: f64,
) -> Result<(), Failure> {
    let config = PipelineConfig::load(config_path)?;
    let entries = read_labels(corpus)?;
    let records = load_records(corpus, &entries, Some(Split::Train), fs)?;
    fs::create_dir_all(models).map_err(Failure::io(models))?;
    let mut manifest = ManifestBuilder::new(config_path, Some(seed));

    manifest.stage("collect-windows");
    let window_sets: Vec<Vec<Vec<f64>>> = records
        .par_iter()
        .map(|record| {
            let normalized = normalize(record)?;
            let peaks = detect_r_peaks(&normalized, &config.detector)?;
            Ok(segment_beats(&normalized, &peaks)?.windows)
        })
        .filter_map(|r: Result<_, beatnet::pipeline::PipelineError>| match r {
            Ok(w) => Some(Ok(w)),
            Err(e) if is_segmentation_failure(&e) => None,
            Err(e) => Some(Err(Failure::from(e))),
        })
        .collect::<Result<_, _>>()?;
    let windows: Vec<Vec<f64>> = window_sets.into_iter().flatten().collect();
    let coeffs: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|w| Ok(dwt(w, Wavelet::Db4, DWT_LEVELS)?.concat_coefficients()))
        .collect::<Result<_, Failure>>()?;

    manifest.stage("train-sdae");
    let beat_config = beatnet::feature::SdaeConfig {
        seed: stage_seed(seed, SEED_SDAE_BEAT),
        ..config.sdae.clone()
    };
    let coeff_config = beatnet::feature::SdaeConfig {
        seed: stage_seed(seed, SEED_SDAE_COEFF),
        ..config.sdae.clone()
    };
    let (beat_result, coeff_result) = rayon::join(
        || train_sdae(&windows, &beat_config, SdaeDomain::Beats),
        || train_sdae(&coeffs, &coeff_config, SdaeDomain::Coeffs),
    );
    let (sdae_beat, beat_history) = beat_result?;
    let (sdae_coeff, coeff_history) = coeff_result?;

    manifest.stage("write-models");
    let beat_path = models.join("sdae_beat.bin");
    sdae_beat.to_blob().write(&beat_path)?;
    manifest.artifact(&beat_path);
    let coeff_path = models.join("sdae_coeff.bin");
    sdae_coeff.to_blob().write(&coeff_path)?;
    manifest.artifact(&coeff_path);

    let mut history = String::from("domain,phase,epoch,mse\n");
    push_sdae_history(&mut history, "beats", &beat_history);
    push_sdae_history(&mut history, "coeffs", &coeff_history);
    let history_path = models.join("sdae_history.csv");
    write_atomic(&history_path, history.as_bytes()).map_err(Failure::io(&history_path))?;
    manifest.artifact(&history_path);
    manifest.write(models)
}

fn push_sdae_history(out: &mut String, domain: &str, history: &[SdaeLossEntry]) {
    for entry in history {
        let phase = match entry.phase {
            SdaePhase::Stage1 => "stage1",
            SdaePhase::Stage2 => "stage2",
            SdaePhase::Joint => "joint",
        };
        out.push_str(&format!("{domain},{phase},{},{}\n", entry.epoch, entry.mse));
    }
}

pub fn run_train(
    corpus: &Path,
    models: &Path,
    seed: u64,
    config_path: Option<&Path>,
    fs: f64,
) -> Result<(), Failure> {
    let config = PipelineConfig::load(config_path)?;
    let (sdae_beat, sdae_coeff) = load_sdaes(models)?;
    let entries = read_labels(corpus)?;
    let records = load_records(corpus, &entries, Some(Split::Train), fs)?;
    let mut manifest = ManifestBuilder::new(config_path, Some(seed));

    manifest.stage("prepare");
    let prepared = prepare_usable(&records, &config.detector, &sdae_beat, &sdae_coeff)?;
    if prepared.is_empty() {
        return Err(Failure::Data("no trainable records in the train split".into()));
    }

    manifest.stage("train-ensemble");
    let spec = config.ensemble_spec(seed);
    let trained = train_ensemble(&prepared, &spec)?;

    manifest.stage("write-models");
    let members_dir = models.join("members");
    fs::create_dir_all(&members_dir).map_err(Failure::io(&members_dir))?;
    let mut history = String::from("member_id,epoch,loss\n");
    for (i, (member, spec_entry)) in trained.iter().zip(&spec.members).enumerate() {
        let path = members_dir.join(member_file_name(i, &spec_entry.id));
        member.model.to_blob().write(&path)?;
        manifest.artifact(&path);
        for (epoch, loss) in member.loss_history.iter().enumerate() {
            history.push_str(&format!("{},{epoch},{loss}\n", spec_entry.id));
        }
    }
    let history_path = models.join("train_history.csv");
    write_atomic(&history_path, history.as_bytes()).map_err(Failure::io(&history_path))?;
    manifest.artifact(&history_path);

    let ensemble = EnsembleManifest {
        detector: config.detector,
        spec,
        trained_ids: prepared.iter().map(|p| p.record_id.clone()).collect(),
        input_dim: prepared[0].features[0].len(),
    };
    let ensemble_path = models.join("ensemble.json");
    let body = serde_json::to_string_pretty(&ensemble).expect("ensemble manifest serializes");
    write_atomic(&ensemble_path, body.as_bytes()).map_err(Failure::io(&ensemble_path))?;
    manifest.artifact(&ensemble_path);
    manifest.write(models)
}

pub fn run_blend(
    corpus: &Path,
    models: &Path,
    seed: u64,
    config_path: Option<&Path>,
    fs: f64,
) -> Result<(), Failure> {
    let config = PipelineConfig::load(config_path)?;
    let (sdae_beat, sdae_coeff) = load_sdaes(models)?;
    let ensemble = load_ensemble(models)?;
    let members = load_members(models, &ensemble.spec)?;
    let entries = read_labels(corpus)?;
    let records = load_records(corpus, &entries, Some(Split::Val), fs)?;
    let mut manifest = ManifestBuilder::new(config_path, Some(seed));

    manifest.stage("prepare");
    let prepared = prepare_usable(&records, &ensemble.detector, &sdae_beat, &sdae_coeff)?;

    manifest.stage("assemble");
    let samples: Vec<BlenderSample> = prepared
        .par_iter()
        .map(|p| {
            Ok(BlenderSample {
                record_id: p.record_id.clone(),
                vector: assemble(&p.features, &members, &p.record_feats, None)?,
                label: p.label.expect("corpus records carry labels"),
            })
        })
        .collect::<Result<_, beatnet::pipeline::PipelineError>>()?;

    manifest.stage("train-blender");
    let blender_config = beatnet::pipeline::BlenderConfig {
        seed: stage_seed(seed, SEED_BLENDER),
        ..config.blender.clone()
    };
    let (blender, history) = train_blender(&samples, &ensemble.trained_ids, &blender_config)?;

    manifest.stage("write-models");
    let blender_path = models.join("blender.bin");
    blender.to_blob().write(&blender_path)?;
    manifest.artifact(&blender_path);

    let mut vectors = String::from("record_id,label,fields\n");
    for s in &samples {
        vectors.push_str(&format!(
            "{},{},{}\n",
            s.record_id,
            s.label.name(),
            s.vector.serialize_fields()
        ));
    }
    let vectors_path = models.join("vectors_val.csv");
    write_atomic(&vectors_path, vectors.as_bytes()).map_err(Failure::io(&vectors_path))?;
    manifest.artifact(&vectors_path);

    let mut blend_history = String::from("epoch,loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        blend_history.push_str(&format!("{epoch},{loss}\n"));
    }
    let history_path = models.join("blend_history.csv");
    write_atomic(&history_path, blend_history.as_bytes()).map_err(Failure::io(&history_path))?;
    manifest.artifact(&history_path);
    manifest.write(models)
}

pub fn run_predict(
    corpus: &Path,
    models: &Path,
    out: &Path,
    split: Option<Split>,
    fs: f64,
) -> Result<(), Failure> {
    let pipeline = load_pipeline(models)?;
    let entries = read_labels(corpus)?;
    let records = load_records(corpus, &entries, split.or(Some(Split::Test)), fs)?;
    let mut manifest = ManifestBuilder::new(None, None);

    manifest.stage("predict");
    let predictions = predict_all(&pipeline, &records)?;
    let mut body = String::from("record_id,normal,af,other,noisy,label\n");
    for (record, p) in records.iter().zip(&predictions) {
        body.push_str(&format!(
            "{},{},{}\n",
            record.id,
            join_floats(&p.scores),
            p.label.name()
        ));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Failure::io(dir))?;
    }
    write_atomic(out, body.as_bytes()).map_err(Failure::io(out))?;
    manifest.artifact(out);
    let manifest_dir = out.parent().filter(|d| !d.as_os_str().is_empty());
    manifest.write(manifest_dir.unwrap_or(Path::new(".")))
}

pub fn run_eval(
    corpus: &Path,
    predictions_path: &Path,
    split: Option<Split>,
) -> Result<(), Failure> {
    let entries = read_labels(corpus)?;
    let body = fs::read_to_string(predictions_path).map_err(Failure::io(predictions_path))?;
    let mut predicted: Vec<(String, RhythmClass)> = Vec::new();
    for (no, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (no == 0 && line.starts_with("record_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let (Some(id), Some(label)) = (fields.first(), fields.last()) else {
            continue;
        };
        let label = RhythmClass::parse(label).ok_or_else(|| {
            Failure::Data(format!(
                "{}:{}: unknown predicted label {label:?}",
                predictions_path.display(),
                no + 1
            ))
        })?;
        predicted.push((id.to_string(), label));
    }

    let mut truth = Vec::with_capacity(predicted.len());
    let mut labels = Vec::with_capacity(predicted.len());
    for (id, label) in &predicted {
        let entry = entries.iter().find(|e| &e.id == id).ok_or_else(|| {
            Failure::Data(format!("record {id} from predictions is not in the corpus"))
        })?;
        if split.is_some_and(|s| entry.split != s) {
            continue;
        }
        truth.push(entry.label);
        labels.push(*label);
    }
    let report = evaluate_f1(&labels, &truth).map_err(Failure::from)?;
    for class in RhythmClass::ALL {
        println!("f1 {} {}", class.name(), report.per_class[class.code()]);
    }
    println!("challenge_average {}", report.challenge_average);
    Ok(())
}

pub fn run_attention(
    corpus: &Path,
    models: &Path,
    out: &Path,
    split: Option<Split>,
    fs: f64,
) -> Result<(), Failure> {
    let pipeline = load_pipeline(models)?;
    let entries = read_labels(corpus)?;
    let records = load_records(corpus, &entries, split.or(Some(Split::Test)), fs)?;
    let svg_dir = out.join("svg");
    fs::create_dir_all(&svg_dir).map_err(Failure::io(&svg_dir))?;
    let mut manifest = ManifestBuilder::new(None, None);

    manifest.stage("attention");
    let predictions = predict_all(&pipeline, &records)?;
    let mut csv = String::from("record_id,member_id,beat_index,r_sample_index,a_t\n");
    for (record, p) in records.iter().zip(&predictions) {
        if p.fallback {
            eprintln!("note: {}: segmentation fallback; no attention emitted", record.id);
            continue;
        }
        for member in &p.attention {
            for (beat, (&r, &a)) in p.r_indices.iter().zip(&member.a).enumerate() {
                csv.push_str(&format!(
                    "{},{},{beat},{r},{a}\n",
                    record.id, member.member_id
                ));
            }
            let svg = attention_strip(record, &p.r_indices, &member.a);
            let path = svg_dir.join(format!("{}_{}.svg", record.id, member.member_id));
            write_atomic(&path, svg.as_bytes()).map_err(Failure::io(&path))?;
            manifest.artifact(&path);
        }
    }
    let csv_path = out.join("attention.csv");
    write_atomic(&csv_path, csv.as_bytes()).map_err(Failure::io(&csv_path))?;
    manifest.artifact(&csv_path);
    manifest.write(out)
}

fn predict_all(
    pipeline: &PipelineModel,
    records: &[EcgRecord],
) -> Result<Vec<beatnet::pipeline::Prediction>, Failure> {
    records
        .par_iter()
        .map(|r| predict(pipeline, r))
        .collect::<Result<_, _>>()
        .map_err(Failure::from)
}

/// Prepares records for training stages, skipping the ones whose
/// segmentation fails; those go to stderr, not into the dataset.
fn prepare_usable(
    records: &[EcgRecord],
    detector: &DetectorConfig,
    sdae_beat: &SdaeModel,
    sdae_coeff: &SdaeModel,
) -> Result<Vec<PreparedRecord>, Failure> {
    let results: Vec<_> = records
        .par_iter()
        .map(|r| (r.id.clone(), prepare_record(r, detector, sdae_beat, sdae_coeff)))
        .collect();
    let mut prepared = Vec::with_capacity(results.len());
    for (id, result) in results {
        match result {
            Ok(p) => prepared.push(p),
            Err(e) if is_segmentation_failure(&e) => {
                eprintln!("note: {id}: {e}; excluded from training")
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(prepared)
}

fn member_file_name(index: usize, id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    format!("m{index:02}-{safe}.bin")
}

fn load_sdaes(models: &Path) -> Result<(SdaeModel, SdaeModel), Failure> {
    let beat_path = models.join("sdae_beat.bin");
    let coeff_path = models.join("sdae_coeff.bin");
    let beat = SdaeModel::from_blob(&ModelBlob::read(&SDAE_MAGIC, &beat_path)?)?;
    let coeff = SdaeModel::from_blob(&ModelBlob::read(&SDAE_MAGIC, &coeff_path)?)?;
    Ok((beat, coeff))
}

fn load_ensemble(models: &Path) -> Result<EnsembleManifest, Failure> {
    let path = models.join("ensemble.json");
    let body = fs::read_to_string(&path).map_err(Failure::io(&path))?;
    serde_json::from_str(&body).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_members(models: &Path, spec: &EnsembleSpec) -> Result<Vec<SequenceModel>, Failure> {
    let members_dir = models.join("members");
    spec.members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let path = members_dir.join(member_file_name(i, &m.id));
            let blob = ModelBlob::read(&SEQUENCE_MODEL_MAGIC, &path)?;
            Ok(SequenceModel::from_blob(&blob)?)
        })
        .collect()
}

fn load_pipeline(models: &Path) -> Result<PipelineModel, Failure> {
    let (sdae_beat, sdae_coeff) = load_sdaes(models)?;
    let ensemble = load_ensemble(models)?;
    let members = load_members(models, &ensemble.spec)?;
    let blender_path = models.join("blender.bin");
    let blender = BlenderModel::from_blob(&ModelBlob::read(&BLENDER_MAGIC, &blender_path)?)?;
    if blender.input_dim() != 2 * ensemble.spec.len() + 7 {
        return Err(Failure::Data(format!(
            "blender expects input width {}, ensemble produces {}",
            blender.input_dim(),
            2 * ensemble.spec.len() + 7
        )));
    }
    Ok(PipelineModel {
        detector: ensemble.detector,
        sdae_beat,
        sdae_coeff,
        spec: ensemble.spec,
        members,
        blender,
        trained_ids: ensemble.trained_ids,
    })
}

fn filter_entries(
    entries: Vec<CorpusEntry>,
    record_filter: Option<&str>,
) -> Result<Vec<CorpusEntry>, Failure> {
    match record_filter {
        None => Ok(entries),
        Some(id) => {
            let filtered: Vec<CorpusEntry> =
                entries.into_iter().filter(|e| e.id == id).collect();
            if filtered.is_empty() {
                Err(Failure::Data(format!("record {id} not found in labels.csv")))
            } else {
                Ok(filtered)
            }
        }
    }
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
