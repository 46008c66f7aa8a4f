// Scratch harness for tuning the pause-attention setup. Not part of the
// shipped suite; run with:
//   cargo test -p beatnet --test scratch_attn -- --nocapture --ignored

use beatnet::feature::{train_sdae, SdaeConfig, SdaeDomain};
use beatnet::net::TrainConfig;
use beatnet::pipeline::{prepare_record, train_ensemble, EnsembleSpec, MemberSpec};
use beatnet::segment::DetectorConfig;
use beatnet::signal::{synthesize_ecg, RhythmClass, SynthConfig};
use beatnet::wavelet::{dwt, Wavelet, DWT_LEVELS};

fn envf(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

#[test]
#[ignore]
fn pause_attention_probe() {
    let detector = DetectorConfig { threshold_scale: 2.0, ..DetectorConfig::default() };

    // Mixed-duration, mixed-rate training corpus: Other vs {Normal, Af}.
    // Beat count and beat rate are decoupled from the class so the only
    // reliable class signal is the pause itself.
    // Durations scale with the RR draw so the beat count T is rate-free;
    // the factor range keeps T around 7-11 with the pause close to the end.
    let dur_factors = [7.4, 8.3, 9.1, 9.9, 10.7];
    let rates = [0.65, 0.75, 0.85, 0.95];
    let noises = [0.02, 0.05, 0.08, 0.10];
    let classes = [RhythmClass::Other, RhythmClass::Normal, RhythmClass::Af];
    let n_train = envf("N_TRAIN", 240.0) as usize;

    let mut records = Vec::new();
    for i in 0..n_train {
        let rr = rates[(i / 3) % rates.len()];
        let config = SynthConfig {
            duration_s: rr * dur_factors[i % dur_factors.len()],
            mean_rr_s: rr,
            noise_std: noises[(i / 7) % noises.len()],
            rhythm: classes[i % classes.len()],
            seed: 5000 + i as u64,
            ..SynthConfig::default()
        };
        let (mut record, _) = synthesize_ecg(&config).unwrap();
        record.label = Some(config.rhythm);
        records.push(record);
    }

    // Small SDAEs, trained on a window subsample.
    let windows: Vec<Vec<f64>> = records
        .iter()
        .step_by(4)
        .flat_map(|r| {
            let n = beatnet::signal::normalize(r).unwrap();
            let peaks = beatnet::segment::detect_r_peaks(&n, &detector).unwrap();
            beatnet::segment::segment_beats(&n, &peaks).unwrap().windows
        })
        .collect();
    let coeffs: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| dwt(w, Wavelet::Db4, DWT_LEVELS).unwrap().concat_coefficients())
        .collect();
    let sdae_config = SdaeConfig { pretrain_epochs: 2, finetune_epochs: 3, seed: 41, ..SdaeConfig::default() };
    let (sdae_beat, _) = train_sdae(&windows, &sdae_config, SdaeDomain::Beats).unwrap();
    let (sdae_coeff, _) = train_sdae(&coeffs, &SdaeConfig { seed: 42, ..sdae_config }, SdaeDomain::Coeffs).unwrap();

    let prepared: Vec<_> = records
        .iter()
        .map(|r| prepare_record(r, &detector, &sdae_beat, &sdae_coeff).unwrap())
        .collect();

    let member = TrainConfig {
        hidden: envf("HIDDEN", 40.0) as usize,
        recurrent_layers: envf("LAYERS", 2.0) as usize,
        dropout: envf("DROPOUT", 0.35),
        recurrent_dropout: envf("RDROP", 0.65),
        epochs: envf("EPOCHS", 150.0) as usize,
        learning_rate: 1e-3,
        attention: true,
        forward_layers: 1,
        seed: envf("SEED", 97.0) as u64,
    };
    let spec = EnsembleSpec {
        members: vec![MemberSpec {
            id: "other-attn".into(),
            target: vec![RhythmClass::Other],
            config: member,
        }],
    };
    let t0 = std::time::Instant::now();
    let trained = train_ensemble(&prepared, &spec).unwrap();
    let hist = &trained[0].loss_history;
    println!(
        "train {:.1}s  loss: {}",
        t0.elapsed().as_secs_f64(),
        hist.iter().step_by(hist.len().div_ceil(12)).map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
    );

    // Held-out single-pause Other records: 8 s at the default 0.8 s RR gives
    // 10-11 beats, so exactly one pause (phase 4..8, period 8).
    let model = &trained[0].model;
    let mut hits = 0;
    let mut total = 0;
    let mut deltas = Vec::new();
    for i in 0..60 {
        let test_noise = envf("TEST_NOISE", -1.0);
        let config = SynthConfig {
            duration_s: envf("TEST_DUR", 8.0),
            noise_std: if test_noise >= 0.0 { test_noise } else { noises[i % noises.len()] },
            rhythm: RhythmClass::Other,
            seed: envf("TEST_SEED", 90_000.0) as u64 + i as u64,
            ..SynthConfig::default()
        };
        let (record, _) = synthesize_ecg(&config).unwrap();
        let p = prepare_record(&record, &detector, &sdae_beat, &sdae_coeff).unwrap();
        let out = model.forward(&p.features).unwrap();
        let a = out.attention.unwrap();
        let gaps: Vec<usize> = p.r_indices.windows(2).map(|w| w[1] - w[0]).collect();
        let pause = (0..gaps.len()).max_by_key(|&i| gaps[i]).unwrap() + 1;
        let amax = (0..a.len()).max_by(|&x, &y| a[x].total_cmp(&a[y])).unwrap();
        total += 1;
        if (amax as i64 - pause as i64).abs() <= 1 {
            hits += 1;
        }
        deltas.push(amax as i64 - pause as i64);
        if i < envf("PRINT_PROFILE", 0.0) as usize {
            println!("record {i}: pause at t={pause}");
            for (t, w) in a.iter().enumerate() {
                println!("  t={t:2} a={w:.4} {}", "#".repeat((w * 200.0) as usize));
            }
        }
    }
    let mut hist = std::collections::BTreeMap::new();
    for &d in &deltas {
        *hist.entry(d).or_insert(0) += 1;
    }
    println!("hit rate {hits}/{total}   delta histogram {:?}", hist);
}
