//! Run configuration, seed substreams, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use beatnet::feature::SdaeConfig;
use beatnet::net::TrainConfig;
use beatnet::persist::write_atomic;
use beatnet::pipeline::{BlenderConfig, EnsembleSpec};
use beatnet::segment::DetectorConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

// Fixed tags of the per-stage seed substreams; see `stage_seed`.
pub const SEED_SYNTH: u64 = 1;
pub const SEED_SDAE_BEAT: u64 = 2;
pub const SEED_SDAE_COEFF: u64 = 3;
pub const SEED_ENSEMBLE: u64 = 4;
pub const SEED_BLENDER: u64 = 5;

/// Derives the 64-bit substream for one stage: splitmix64 of the base seed
/// offset by the stage tag times the golden-ratio increment. Stages never
/// share a stream, and each stream is a pure function of (base, tag).
pub fn stage_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn operating_detector() -> DetectorConfig {
    // The detector's own default threshold scale of 1.0 admits T-wave and
    // boundary noise at high noise levels; the pipeline runs it at 2.0.
    DetectorConfig { threshold_scale: 2.0, ..DetectorConfig::default() }
}

/// Everything the training stages read from `--config`; every field has a
/// default, so a partial (or absent) file works.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub sdae: SdaeConfig,
    /// Base settings expanded into the default one-vs-rest roster when
    /// `members` is absent.
    pub member_base: TrainConfig,
    /// Explicit ensemble roster; wins over `member_base` when present.
    pub members: Option<EnsembleSpec>,
    pub blender: BlenderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: operating_detector(),
            sdae: SdaeConfig::default(),
            member_base: TrainConfig::default(),
            members: None,
            blender: BlenderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let body = fs::read_to_string(p).map_err(Failure::io(p))?;
                serde_json::from_str(&body)
                    .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
            }
        }
    }

    /// The ensemble roster: the explicit one, or one-vs-rest seeded from the
    /// ensemble substream of `seed`.
    pub fn ensemble_spec(&self, seed: u64) -> EnsembleSpec {
        match &self.members {
            Some(spec) => spec.clone(),
            None => {
                let base = TrainConfig {
                    seed: stage_seed(seed, SEED_ENSEMBLE),
                    ..self.member_base.clone()
                };
                EnsembleSpec::one_vs_rest(&base)
            }
        }
    }
}

/// What one CLI invocation did: configuration provenance, seed, wall time per
/// stage, and every artifact path written. Timings vary between runs, so the
/// manifest itself is excluded from byte-identity guarantees.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub stage_timings_ms: BTreeMap<String, u128>,
    pub artifacts: Vec<String>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    stage: Option<(String, Instant)>,
}

impl ManifestBuilder {
    pub fn new(config_path: Option<&Path>, seed: Option<u64>) -> ManifestBuilder {
        ManifestBuilder {
            manifest: RunManifest {
                config_path: config_path.map(|p| p.display().to_string()),
                seed,
                stage_timings_ms: BTreeMap::new(),
                artifacts: Vec::new(),
            },
            stage: None,
        }
    }

    /// Closes the previous stage's timer and opens `name`.
    pub fn stage(&mut self, name: &str) {
        self.close_stage();
        self.stage = Some((name.to_string(), Instant::now()));
    }

    fn close_stage(&mut self) {
        if let Some((name, start)) = self.stage.take() {
            self.manifest.stage_timings_ms.insert(name, start.elapsed().as_millis());
        }
    }

    pub fn artifact(&mut self, path: &Path) {
        self.manifest.artifacts.push(path.display().to_string());
    }

    pub fn artifacts<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) {
        for p in paths {
            self.artifact(p);
        }
    }

    /// Writes `run_manifest.json` under `dir`.
    pub fn write(mut self, dir: &Path) -> Result<(), Failure> {
        self.close_stage();
        let body = serde_json::to_string_pretty(&self.manifest)
            .expect("manifest serialization cannot fail");
        let path = dir.join("run_manifest.json");
        write_atomic(&path, body.as_bytes()).map_err(Failure::io(&path))?;
        Ok(())
    }
}
