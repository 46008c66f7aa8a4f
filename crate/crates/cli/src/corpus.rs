//! Corpus directory layout.
//!
//! ```text
//! corpus/
//!   labels.csv          record_id,label,split
//!   records/<id>.csv    single-column sample values
//!   truth/<id>_r.csv    ground-truth R sample indices, one per line
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use beatnet::persist::write_atomic;
use beatnet::signal::{
    load_record, synthesize_ecg, write_record_csv, EcgRecord, RhythmClass, SynthConfig,
};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub label: RhythmClass,
    pub split: Split,
}

// Record i gets class i mod 4, split by i mod 10 (6/2/2), and a noise level
// decoupled from the class so noise never identifies the rhythm.
const NOISE_LEVELS: [f64; 4] = [0.02, 0.05, 0.08, 0.10];

fn split_for(i: usize) -> Split {
    match i % 10 {
        0..=5 => Split::Train,
        6 | 7 => Split::Val,
        _ => Split::Test,
    }
}

/// Writes an `n`-record labeled synthetic corpus under `dir`. Returns the
/// paths written. Record seeds are `seed + i`, so the corpus is a pure
/// function of (n, seed, fs, duration).
pub fn synth_corpus(
    dir: &Path,
    n: usize,
    seed: u64,
    fs: f64,
    duration_s: f64,
) -> Result<Vec<PathBuf>, Failure> {
    let records_dir = dir.join("records");
    let truth_dir = dir.join("truth");
    fs::create_dir_all(&records_dir).map_err(Failure::io(&records_dir))?;
    fs::create_dir_all(&truth_dir).map_err(Failure::io(&truth_dir))?;

    let mut labels = String::from("record_id,label,split\n");
    let mut artifacts = Vec::with_capacity(2 * n + 1);
    for i in 0..n {
        let rhythm = RhythmClass::ALL[i % RhythmClass::ALL.len()];
        let config = SynthConfig {
            duration_s,
            fs,
            rhythm,
            noise_std: NOISE_LEVELS[(i / 4) % NOISE_LEVELS.len()],
            seed: seed.wrapping_add(i as u64),
            ..SynthConfig::default()
        };
        let (mut record, truth) =
            synthesize_ecg(&config).map_err(|e| Failure::Data(format!("synth record {i}: {e}")))?;
        record.id = format!("rec{i:05}");

        let record_path = records_dir.join(format!("{}.csv", record.id));
        write_record_csv(&record, &record_path)
            .map_err(|e| Failure::Data(format!("write {}: {e}", record_path.display())))?;

        let truth_path = truth_dir.join(format!("{}_r.csv", record.id));
        let mut body = String::with_capacity(truth.len() * 6);
        for r in &truth {
            body.push_str(&format!("{r}\n"));
        }
        write_atomic(&truth_path, body.as_bytes()).map_err(Failure::io(&truth_path))?;

        labels.push_str(&format!(
            "{},{},{}\n",
            record.id,
            record.label.expect("synthesized records carry labels").name(),
            split_for(i).name()
        ));
        artifacts.push(record_path);
        artifacts.push(truth_path);
    }
    let labels_path = dir.join("labels.csv");
    write_atomic(&labels_path, labels.as_bytes()).map_err(Failure::io(&labels_path))?;
    artifacts.push(labels_path);
    Ok(artifacts)
}

pub fn read_labels(dir: &Path) -> Result<Vec<CorpusEntry>, Failure> {
    let path = dir.join("labels.csv");
    let body = fs::read_to_string(&path).map_err(Failure::io(&path))?;
    let mut entries = Vec::new();
    for (no, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (no == 0 && line.starts_with("record_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Failure::Data(format!(
                "{}:{}: expected record_id,label,split",
                path.display(),
                no + 1
            )));
        }
        let label = RhythmClass::parse(fields[1]).ok_or_else(|| {
            Failure::Data(format!("{}:{}: unknown label {:?}", path.display(), no + 1, fields[1]))
        })?;
        let split = Split::parse(fields[2]).ok_or_else(|| {
            Failure::Data(format!("{}:{}: unknown split {:?}", path.display(), no + 1, fields[2]))
        })?;
        entries.push(CorpusEntry { id: fields[0].to_string(), label, split });
    }
    if entries.is_empty() {
        return Err(Failure::Data(format!("{}: no entries", path.display())));
    }
    Ok(entries)
}

/// Loads the records of one split (or all of them), labels attached.
pub fn load_records(
    dir: &Path,
    entries: &[CorpusEntry],
    split: Option<Split>,
    fs_hz: f64,
) -> Result<Vec<EcgRecord>, Failure> {
    entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| {
            let path = dir.join("records").join(format!("{}.csv", e.id));
            let mut record = load_record(&path, fs_hz)
                .map_err(|err| Failure::Data(format!("{}: {err}", path.display())))?;
            record.label = Some(e.label);
            Ok(record)
        })
        .collect()
}
