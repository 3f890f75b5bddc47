use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use log::info;
use spikereplay_core::data::{load_mnist, LabeledDataset};
use spikereplay_core::rng::{stream, Stream};
use spikereplay_core::{ExperimentData, MetricsReport, Model, RunOutcome, Session, StrategyKind};

use crate::config::{self, ConfigError, DataSource, Format, Resolved};

/// Keys a sweep may vary; all of them leave pretraining untouched so the
/// pretrained extractor is shared across values.
pub const SWEEPABLE: &[&str] = &[
    "strategy.kind",
    "strategy.capacity",
    "strategy.lambda",
    "strategy.noise_sigma",
    "strategy.sleep_epochs",
    "strategy.batch_replay",
    "strategy.lr_continual",
    "strategy.lr_sleep",
];

pub fn load_data(r: &Resolved) -> Result<ExperimentData> {
    let d = &r.file.dataset;
    let (train, test) = match d.source {
        DataSource::Mnist => {
            let dir = r.mnist_dir();
            load_mnist(&dir).with_context(|| {
                format!(
                    "loading MNIST from {} (set dataset.dir or ${})",
                    dir.display(),
                    config::MNIST_ENV
                )
            })?
        }
        DataSource::Synthetic => d.synthetic.generate_split(
            d.test_per_class
                .unwrap_or((d.synthetic.per_class / 5).max(1)),
        )?,
    };
    let mut rng = stream(r.file.seed, Stream::Subset);
    let mut limit = |ds: LabeledDataset, n: Option<usize>| match n {
        Some(n) => ds.select(&ds.per_class_limit(n, &mut rng)),
        None => ds,
    };
    let train = limit(train, d.train_per_class);
    let test = limit(test, d.test_per_class);
    Ok(ExperimentData {
        train,
        test,
        classes_per_task: d.classes_per_task,
    })
}

fn session<'a>(
    r: &Resolved,
    data: &'a ExperimentData,
    pretrained: Option<&Path>,
) -> Result<Session<'a>> {
    match pretrained {
        Some(path) => {
            let model = read_model(path)?;
            if model.spec != r.spec {
                return Err(ConfigError(format!(
                    "pretrained network in {} does not match the configured model",
                    path.display()
                ))
                .into());
            }
            Ok(Session::from_pretrained(r.replay.clone(), model, data)?)
        }
        None => {
            info!("pretraining for {} epochs", r.replay.pretrain_epochs);
            Ok(Session::prepare(r.replay.clone(), r.spec.clone(), data)?)
        }
    }
}

fn read_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn run_dir(root: &Path, strategy: StrategyKind, seed: u64) -> PathBuf {
    root.join(format!("{strategy}-seed{seed}"))
}

/// Writes the report files (and the buffer) of one run into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome, r: &Resolved) -> Result<MetricsReport> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut report = outcome.report.clone();
    report.config = r.echo.clone();
    for f in &r.file.output.formats {
        match f {
            Format::Text => fs::write(dir.join("report.txt"), report.to_key_value())?,
            Format::Json => fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?,
            Format::Csv => fs::write(dir.join("confusion.csv"), report.confusion_csv())?,
        }
    }
    if let (true, Some(buf)) = (r.file.output.save_buffer, &outcome.buffer) {
        let file = fs::File::create(dir.join("buffer.slrb"))?;
        buf.write_to(std::io::BufWriter::new(file))?;
    }
    Ok(report)
}

pub fn cmd_run(r: &Resolved, pretrained: Option<&Path>) -> Result<PathBuf> {
    let data = load_data(r)?;
    let s = session(r, &data, pretrained)?;
    let kind = r.file.strategy.kind;
    info!("running {kind} on {} stream batches", s.stream.len());
    let outcome = s.run(kind)?;
    let dir = run_dir(&r.output_root(), kind, r.file.seed);
    let report = write_run(&dir, &outcome, r)?;
    println!(
        "{kind} seed {}: FAA {:.2}%, last task {:.2}%, recency bias {:.3} -> {}",
        report.seed,
        report.faa,
        report.last_task_accuracy,
        report.recency_bias,
        dir.display()
    );
    Ok(dir)
}

pub fn cmd_pretrain(r: &Resolved, out: Option<&Path>) -> Result<PathBuf> {
    let data = load_data(r)?;
    let s = session(r, &data, None)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| {
        r.output_root()
            .join(format!("pretrained-seed{}.json", r.file.seed))
    });
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, serde_json::to_string(&s.pretrained)?)?;
    let losses: Vec<String> = s
        .pretrain_losses
        .iter()
        .map(|l| format!("{l:.4}"))
        .collect();
    println!("pretrained ({}) -> {}", losses.join(" "), path.display());
    Ok(path)
}

#[derive(Clone, Debug)]
struct SweepRun {
    value: String,
    seed: u64,
    report: MetricsReport,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One run per (value, seed). Pretraining happens once per seed.
pub fn cmd_sweep(
    base: &Resolved,
    param: &str,
    values: &[String],
    seeds: &[u64],
    jobs: usize,
) -> Result<PathBuf> {
    if !SWEEPABLE.contains(&param) {
        bail!(ConfigError(format!(
            "cannot sweep `{param}`; sweepable keys: {}",
            SWEEPABLE.join(", ")
        )));
    }
    if values.is_empty() || seeds.is_empty() {
        bail!(ConfigError(
            "sweep needs at least one value and one seed".into()
        ));
    }
    // Validate every point before any training.
    let text = toml::to_string(&base.file)?;
    let mut points = Vec::new();
    for v in values {
        points.push((
            v.clone(),
            config::parse(&text, "sweep", &[format!("{param}={v}")])?,
        ));
    }
    let root = base
        .output_root()
        .join(format!("sweep-{}", param.replace('.', "_")));
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    let failure = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                match sweep_seed(seed, &points, &root) {
                    Ok(mut runs) => results
                        .lock()
                        .expect("no panics while locked")
                        .append(&mut runs),
                    Err(e) => {
                        *failure.lock().expect("no panics while locked") = Some(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("threads joined") {
        return Err(e);
    }
    let mut runs = results.into_inner().expect("threads joined");
    let order = |v: &str| values.iter().position(|x| x == v).unwrap_or(usize::MAX);
    runs.sort_by_key(|r| (order(&r.value), r.seed));

    let mut per_run =
        String::from("value,seed,faa,last_task_accuracy,recency_bias,buffer_payload_bytes\n");
    for r in &runs {
        per_run.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value,
            r.seed,
            r.report.faa,
            r.report.last_task_accuracy,
            r.report.recency_bias,
            r.report.buffer_payload_bytes
        ));
    }
    let mut summary =
        String::from("value,runs,faa_mean,faa_std,recency_bias_mean,recency_bias_std,buffer_payload_bytes_mean\n");
    for v in values {
        let rows: Vec<&SweepRun> = runs.iter().filter(|r| &r.value == v).collect();
        let faa: Vec<f64> = rows.iter().map(|r| r.report.faa).collect();
        let bias: Vec<f64> = rows.iter().map(|r| r.report.recency_bias).collect();
        let mem: Vec<f64> = rows
            .iter()
            .map(|r| r.report.buffer_payload_bytes as f64)
            .collect();
        let (fm, fs) = mean_std(&faa);
        let (bm, bs) = mean_std(&bias);
        let (mm, _) = mean_std(&mem);
        summary.push_str(&format!("{v},{},{fm},{fs},{bm},{bs},{mm}\n", rows.len()));
        println!("{param} = {v}: FAA {fm:.2} ± {fs:.2}, recency bias {bm:.3}, buffer {mm} bytes");
    }
    fs::create_dir_all(&root)?;
    fs::write(root.join("runs.csv"), per_run)?;
    fs::write(root.join("summary.csv"), summary)?;
    Ok(root)
}

fn sweep_seed(seed: u64, points: &[(String, Resolved)], root: &Path) -> Result<Vec<SweepRun>> {
    let first = points[0].1.with_seed(seed)?;
    let data = load_data(&first)?;
    let shared = session(&first, &data, None)?;
    let mut out = Vec::new();
    for (value, r) in points {
        let r = r.with_seed(seed)?;
        let s = Session::from_pretrained(r.replay.clone(), shared.pretrained.clone(), &data)?;
        let kind = r.file.strategy.kind;
        let outcome = s.run(kind)?;
        let dir = run_dir(&root.join(value), kind, seed);
        let report = write_run(&dir, &outcome, &r)?;
        info!("{value} seed {seed}: FAA {:.2}", report.faa);
        out.push(SweepRun {
            value: value.clone(),
            seed,
            report,
        });
    }
    Ok(out)
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_reports(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Aggregates every stored `report.json` under `dir` into comparison tables.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    find_reports(dir, &mut files)?;
    if files.is_empty() {
        bail!("no report.json found under {}", dir.display());
    }
    // Runs are grouped by the directory holding their run folder plus strategy.
    let mut groups: Vec<(String, StrategyKind, Vec<MetricsReport>)> = Vec::new();
    for f in files {
        let report: MetricsReport = serde_json::from_str(&fs::read_to_string(&f)?)
            .with_context(|| format!("parsing {}", f.display()))?;
        let kind: StrategyKind = report.strategy.parse()?;
        let group = f
            .parent()
            .and_then(Path::parent)
            .and_then(|p| p.strip_prefix(dir).ok())
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        match groups
            .iter_mut()
            .find(|(g, k, _)| *g == group && *k == kind)
        {
            Some((_, _, v)) => v.push(report),
            None => groups.push((group, kind, vec![report])),
        }
    }
    groups.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));

    let header = [
        "group",
        "strategy",
        "runs",
        "faa_mean",
        "faa_std",
        "last_task_accuracy",
        "recency_bias",
        "buffer_entries",
        "buffer_payload_bytes",
        "buffer_header_bytes",
    ];
    let mut csv = header.join(",") + "\n";
    let mut table = format!(
        "{:<24} {:<14} {:>4} {:>16} {:>10} {:>8} {:>8} {:>12}\n",
        "group", "strategy", "runs", "FAA", "last task", "bias", "entries", "payload B"
    );
    for (group, kind, reports) in &groups {
        let col =
            |f: fn(&MetricsReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
        let (faa, faa_std) = col(|r| r.faa);
        let (last, _) = col(|r| r.last_task_accuracy);
        let (bias, _) = col(|r| r.recency_bias);
        let (entries, _) = col(|r| r.buffer_entries as f64);
        let (payload, _) = col(|r| r.buffer_payload_bytes as f64);
        let (hdr, _) = col(|r| r.buffer_header_bytes as f64);
        csv.push_str(&format!(
            "{group},{kind},{},{faa},{faa_std},{last},{bias},{entries},{payload},{hdr}\n",
            reports.len()
        ));
        table.push_str(&format!(
            "{:<24} {:<14} {:>4} {:>9.2} ± {:<4.2} {:>10.2} {:>8.3} {:>8} {:>12}\n",
            group,
            kind.name(),
            reports.len(),
            faa,
            faa_std,
            last,
            bias,
            entries,
            payload
        ));
    }
    fs::write(dir.join("comparison.csv"), &csv)?;
    fs::write(dir.join("comparison.txt"), &table)?;
    Ok(table)
}
