//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use spikereplay_core::data::{load_mnist, LabeledDataset};
use spikereplay_core::engine::{ExperimentData, ReplayConfig, Session, StrategyKind};
use spikereplay_core::lif::neuron_step;
use spikereplay_core::metrics::{memory_report, MetricsReport};
use spikereplay_core::network::{
    ConvPadding, Inputs, LossKind, Model, NetworkSpec, NotationOptions, RunOptions,
    DESK_MNIST_NOTATION,
};
use spikereplay_core::replay::{pack_bits, unpack_bits, CompressionReport, Reservoir};
use spikereplay_core::rng::{seeded, stream, SeededRng, Stream};
use spikereplay_core::{LifConfig, SpikeTensor, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lif_tuples() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(100);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let cfg = LifConfig {
            tau: rng.gen_range(1.0..10.0),
            v_th: rng.gen_range(0.1..3.0),
            ..Default::default()
        };
        let u: f64 = rng.gen_range(-5.0..5.0);
        let fired: bool = rng.gen();
        let input: f64 = rng.gen_range(-5.0..5.0);
        let k = cfg.dt / cfg.tau;
        let expect_u = if fired {
            k * input
        } else {
            (1.0 - k) * u + k * input
        };
        let got = neuron_step(u, fired, input, &cfg);
        if got != (expect_u, expect_u >= cfg.v_th) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && secs < 1.0,
        format!("{mismatches} mismatches in {secs:.3}s"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let spec = NetworkSpec::from_notation(
        "||FC24-Voting-AP",
        &[12],
        3,
        LifConfig::default(),
        NotationOptions {
            vote_group: 4,
            dropout: 0.0,
            conv_padding: ConvPadding::Same,
        },
    )
    .map_err(|e| e.to_string())?;
    let model = Model::new(spec, &mut seeded(21)).map_err(|e| e.to_string())?;
    let params = model.params.total_count();
    let mut rng = seeded(22);
    let x = Tensor::new(
        vec![4, 6, 12],
        (0..4 * 6 * 12).map(|_| rng.gen_range(0.0..3.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let opts = RunOptions {
        train: true,
        relaxed: true,
    };
    let r = common::finite_difference_check(
        &model,
        Inputs::Raw(&x),
        &[0, 1, 2, 0, 1, 2],
        opts,
        1e-5,
        1e-4,
    );
    let secs = start.elapsed().as_secs_f64();
    check(
        params <= 10_000 && r.fraction() >= 0.95 && secs < 60.0,
        format!(
            "{}/{} coordinates within 1e-4 ({:.1}%), {params} parameters, {secs:.1}s",
            r.within_tolerance,
            r.coordinates,
            100.0 * r.fraction()
        ),
    )
}

fn bitpack_roundtrip() -> Outcome {
    let mut rng = seeded(30);
    let mut failures = Vec::new();
    let mut check_one = |bits: Vec<bool>, shape: Vec<usize>| {
        let z = SpikeTensor::from_bools(&shape, &bits).unwrap();
        let packed = pack_bits(&z, 7);
        let back = unpack_bits(&packed).unwrap();
        let n = bits.len() as u64;
        let report = CompressionReport::new(n, packed.payload_bytes() as u64, 32);
        let exact = n == 0 || report.ratio == 32.0;
        let bytes_ok = packed.payload_bytes() == bits.len().div_ceil(8)
            && (n % 8 != 0 || report.reference_bytes == 32 * report.payload_bytes);
        if back != z || packed.label != 7 || !exact || !bytes_ok {
            failures.push(shape);
        }
    };
    for len in 0..=1024 {
        let bits = (0..len).map(|_| rng.gen()).collect();
        check_one(bits, vec![len]);
    }
    for _ in 0..1000 {
        let shape: Vec<usize> = (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(1..=9))
            .collect();
        let p: f64 = rng.gen();
        let bits = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_bool(p))
            .collect();
        check_one(bits, shape);
    }
    check(
        failures.is_empty(),
        format!("2025 tensors, {} failures, ratio 32:1", failures.len()),
    )
}

fn reservoir_inclusion() -> Outcome {
    const K: usize = 100;
    const N: usize = 1000;
    const TRIALS: u64 = 10_000;
    let mut counts = vec![0u32; N];
    for trial in 0..TRIALS {
        let mut r = Reservoir::new(K, SeededRng::seed_from_u64(trial));
        for i in 0..N {
            r.offer(i);
        }
        for &i in r.entries() {
            counts[i] += 1;
        }
    }
    let p = |i: usize| f64::from(counts[i]) / TRIALS as f64;
    let probes = [0, K - 1, K, N / 2, N - 1];
    let worst = probes
        .iter()
        .map(|&i| (p(i) - 0.1).abs())
        .fold(0.0, f64::max);
    let deciles: Vec<f64> = (0..10)
        .map(|d| (d * 100..(d + 1) * 100).map(p).sum::<f64>() / 100.0)
        .collect();
    let worst_decile = deciles.iter().map(|q| (q - 0.1).abs()).fold(0.0, f64::max);
    check(
        worst <= 0.010 && worst_decile <= 0.010,
        format!(
            "items {:?}: {:?}, worst decile deviation {worst_decile:.4}",
            probes,
            probes.iter().map(|&i| p(i)).collect::<Vec<_>>()
        ),
    )
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
            PathBuf::from("/root/data/mnist"),
        ]);
    for dir in candidates {
        if dir.join("train-images-idx3-ubyte").exists() {
            return Some(dir);
        }
    }
    None
}

fn desk_spec() -> NetworkSpec {
    let mut spec = NetworkSpec::from_notation(
        DESK_MNIST_NOTATION,
        &[1, 28, 28],
        10,
        LifConfig::default(),
        NotationOptions {
            vote_group: 10,
            dropout: 0.5,
            conv_padding: ConvPadding::Valid,
        },
    )
    .unwrap();
    spec.loss = LossKind::RateMse;
    spec
}

fn desk_config(seed: u64) -> ReplayConfig {
    ReplayConfig {
        seed,
        pretrain_epochs: 4,
        capacity: 50,
        steps: 4,
        ..Default::default()
    }
}

fn subset(
    train: &LabeledDataset,
    test: &LabeledDataset,
    per_train: usize,
    per_test: usize,
    seed: u64,
) -> ExperimentData {
    let mut rng = stream(seed, Stream::Subset);
    ExperimentData {
        train: train.select(&train.per_class_limit(per_train, &mut rng)),
        test: test.select(&test.per_class_limit(per_test, &mut rng)),
        classes_per_task: 2,
    }
}

struct SeedResult {
    faa: [f64; 5],
    finetune_last: f64,
    sweep: [f64; 3],
    bias_latent: f64,
    bias_seslr: f64,
}

const NAMES: [&str; 5] = ["joint", "seslr", "latent_replay", "er_raw", "finetune"];

fn desk_seed(
    train: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
) -> spikereplay_core::Result<SeedResult> {
    let data = subset(train, test, 1000, 200, seed);
    let session = Session::prepare(desk_config(seed), desk_spec(), &data)?;
    let finetune = session.run(StrategyKind::Finetune)?.report;
    let joint = session.run(StrategyKind::Joint)?.report;
    let er = session.run(StrategyKind::ErRaw)?.report;
    let latent = session.run(StrategyKind::LatentReplay)?.report;
    let rows = session.noise_sweep(&[0.0, 0.2, 0.4])?;
    let seslr = &rows[2];
    Ok(SeedResult {
        faa: [joint.faa, seslr.faa, latent.faa, er.faa, finetune.faa],
        finetune_last: finetune.last_task_accuracy,
        sweep: [rows[0].faa, rows[1].faa, rows[2].faa],
        bias_latent: latent.recency_bias,
        bias_seslr: seslr.recency_bias,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn memory_table() -> Outcome {
    const MB: u64 = 1 << 20;
    let rows = memory_report(1024, 16 * 2 * 128 * 128, 16 * 128 * 8 * 8, 8);
    let mb: Vec<u64> = rows.iter().map(|r| r.bytes / MB).collect();
    let exact_mb = rows.iter().all(|r| r.bytes % MB == 0);
    let ratios: Vec<f64> = rows.iter().map(|r| r.compression.unwrap_or(0.0)).collect();
    check(
        exact_mb && mb == [512, 128, 16] && ratios == [1.0, 4.0, 32.0],
        format!(
            "{mb:?} MB, ratios 1:{} 1:{} 1:{}",
            ratios[0], ratios[1], ratios[2]
        ),
    )
}

fn without_wallclock(r: &MetricsReport) -> String {
    let mut r = r.clone();
    r.wallclock_seconds = 0.0;
    r.to_key_value() + &r.confusion_csv()
}

fn determinism(train: &LabeledDataset, test: &LabeledDataset) -> Outcome {
    let data = subset(train, test, 60, 20, 5);
    let cfg = ReplayConfig {
        pretrain_epochs: 1,
        capacity: 20,
        sleep_epochs: 2,
        ..desk_config(5)
    };
    let once = || -> spikereplay_core::Result<Vec<String>> {
        let session = Session::prepare(cfg.clone(), desk_spec(), &data)?;
        StrategyKind::ALL
            .iter()
            .map(|&k| session.run(k).map(|o| without_wallclock(&o.report)))
            .collect()
    };
    let a = once().map_err(|e| e.to_string())?;
    let b = once().map_err(|e| e.to_string())?;
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    check(
        same == a.len(),
        format!("{same}/{} strategies byte-identical", a.len()),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("lif_update_matches_direct_evaluation", lif_tuples()),
        ("surrogate_gradient_check", gradient_check()),
        ("bitpack_roundtrip_and_ratio", bitpack_roundtrip()),
        ("reservoir_inclusion_probability", reservoir_inclusion()),
    ];

    let mnist = mnist_dir()
        .ok_or_else(|| {
            "MNIST not found: set MNIST_DIR to a directory with the four IDX files".to_string()
        })
        .and_then(|dir| load_mnist(&dir).map_err(|e| format!("{}: {e}", dir.display())));
    match &mnist {
        Ok((train, test)) => {
            let start = Instant::now();
            let seeds: Result<Vec<SeedResult>, String> = (0..3)
                .map(|s| desk_seed(train, test, s).map_err(|e| e.to_string()))
                .collect();
            let secs = start.elapsed().as_secs_f64();
            match seeds {
                Ok(seeds) => {
                    let m: Vec<f64> = (0..5)
                        .map(|i| mean(seeds.iter().map(|s| s.faa[i])))
                        .collect();
                    let listing = NAMES
                        .iter()
                        .zip(&m)
                        .map(|(n, v)| format!("{n} {v:.2}"))
                        .collect::<Vec<_>>()
                        .join(", ");
                    // The wake-only replay baseline is latent_replay itself; er_raw is listed for reference.
                    let ordered = m[0] > m[1] && m[1] > m[2] && m[2] > m[4];
                    let last = mean(seeds.iter().map(|s| s.finetune_last));
                    let margin = m[1] - m[2];
                    results.push((
                        "split_mnist_strategy_ordering",
                        check(
                            ordered && m[4] < 30.0 && last > 80.0 && margin >= 3.0 && secs < 1800.0,
                            format!(
                                "{listing}; finetune last task {last:.2}; seslr - latent_replay {margin:.2}; {secs:.0}s"
                            ),
                        ),
                    ));
                    let sweep: Vec<f64> = (0..3)
                        .map(|i| mean(seeds.iter().map(|s| s.sweep[i])))
                        .collect();
                    results.push((
                        "noise_improves_consolidation",
                        check(
                            sweep[2] >= sweep[0],
                            format!(
                                "mean FAA sigma 0 / 0.2 / 0.4: {:.2} / {:.2} / {:.2}",
                                sweep[0], sweep[1], sweep[2]
                            ),
                        ),
                    ));
                    let lower = seeds.iter().all(|s| s.bias_seslr < s.bias_latent);
                    let pairs = seeds
                        .iter()
                        .map(|s| format!("{:.3}<{:.3}", s.bias_seslr, s.bias_latent))
                        .collect::<Vec<_>>()
                        .join(" ");
                    results.push(("sleep_reduces_recency_bias", check(lower, pairs)));
                }
                Err(e) => {
                    for name in [
                        "split_mnist_strategy_ordering",
                        "noise_improves_consolidation",
                        "sleep_reduces_recency_bias",
                    ] {
                        results.push((name, Err(e.clone())));
                    }
                }
            }
        }
        Err(e) => {
            for name in [
                "split_mnist_strategy_ordering",
                "noise_improves_consolidation",
                "sleep_reduces_recency_bias",
            ] {
                results.push((name, Err(e.clone())));
            }
        }
    }

    results.push(("memory_report_table", memory_table()));
    results.push((
        "same_seed_reports_identical",
        match &mnist {
            Ok((train, test)) => determinism(train, test),
            Err(e) => Err(e.clone()),
        },
    ));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
