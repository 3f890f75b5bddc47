use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn preset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

fn spikereplay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikereplay"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SPIKEREPLAY_OUTPUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = spikereplay(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn out_dir(dir: &TempDir) -> String {
    format!("output.dir=\"{}\"", dir.path().display())
}

fn run(dir: &TempDir, extra: &[&str]) {
    let preset = preset();
    let out = out_dir(dir);
    let mut args = vec!["run", "-c", preset.to_str().unwrap(), "--set", &out];
    for e in extra {
        args.extend(["--set", e]);
    }
    ok(&args);
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn without_wallclock(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("wallclock_seconds"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_writes_report_files() {
    let dir = TempDir::new().unwrap();
    run(&dir, &["strategy.kind=\"finetune\""]);
    let run_dir = dir.path().join("finetune-seed0");
    for f in ["report.txt", "report.json", "confusion.csv"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let r = report(&run_dir);
    assert_eq!(r["strategy"], "finetune");
    assert!(r["faa"].as_f64().unwrap() >= 0.0);
}

#[test]
fn latent_runs_save_the_buffer() {
    let dir = TempDir::new().unwrap();
    run(&dir, &[]);
    let run_dir = dir.path().join("seslr-seed0");
    let bytes = fs::read(run_dir.join("buffer.slrb")).unwrap();
    assert_eq!(&bytes[..4], b"SLRB");
    assert_eq!(report(&run_dir)["buffer_entries"], 20);
}

#[test]
fn same_seed_reports_are_identical_except_wallclock() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run(&a, &[]);
    run(&b, &[]);
    let read =
        |d: &TempDir, f: &str| fs::read_to_string(d.path().join("seslr-seed0").join(f)).unwrap();
    let (ra, rb) = (read(&a, "report.txt"), read(&b, "report.txt"));
    assert!(ra.contains("wallclock_seconds"));
    let config_line = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("config.output.dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        config_line(&without_wallclock(&ra)),
        config_line(&without_wallclock(&rb))
    );
    assert_eq!(read(&a, "confusion.csv"), read(&b, "confusion.csv"));
    assert_eq!(
        fs::read(a.path().join("seslr-seed0/buffer.slrb")).unwrap(),
        fs::read(b.path().join("seslr-seed0/buffer.slrb")).unwrap()
    );
}

#[test]
fn overrides_are_echoed() {
    let dir = TempDir::new().unwrap();
    run(&dir, &["strategy.noise_sigma=0.25"]);
    let text = fs::read_to_string(dir.path().join("seslr-seed0/report.txt")).unwrap();
    assert!(
        text.contains("config.strategy.noise_sigma = 0.25"),
        "{text}"
    );
}

#[test]
fn unknown_key_is_a_config_error_with_location() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "seed = 1\n[strategy]\nkind = \"seslr\"\nnoise_sigmaa = 0.4\n",
    )
    .unwrap();
    let out = spikereplay(&["run", "-c", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("noise_sigmaa") && err.contains("line 4"),
        "{err}"
    );
}

#[test]
fn invalid_values_are_config_errors() {
    let preset = preset();
    for bad in [
        "strategy.noise_sigma=-1.0",
        "strategy.kind=\"nope\"",
        "strategy.capacity=\"many\"",
    ] {
        let out = spikereplay(&["run", "-c", preset.to_str().unwrap(), "--set", bad]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{bad}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let preset = preset();
    let out = out_dir(&dir);
    ok(&[
        "sweep",
        "-c",
        preset.to_str().unwrap(),
        "--set",
        &out,
        "--param",
        "strategy.noise_sigma",
        "--values",
        "0,0.2,0.4",
    ]);
    let root = dir.path().join("sweep-strategy_noise_sigma");
    let rows = csv_rows(&root.join("summary.csv"));
    assert_eq!(
        rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(),
        ["0", "0.2", "0.4"]
    );
    assert!(root.join("0.2/seslr-seed0/report.json").exists());
}

#[test]
fn capacity_sweep_doubles_buffer_payload() {
    let dir = TempDir::new().unwrap();
    let preset = preset();
    let out = out_dir(&dir);
    ok(&[
        "sweep",
        "-c",
        preset.to_str().unwrap(),
        "--set",
        &out,
        "--param",
        "strategy.capacity",
        "--values",
        "50,100",
    ]);
    let rows = csv_rows(&dir.path().join("sweep-strategy_capacity/summary.csv"));
    let payload: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(payload[0] > 0.0);
    assert_eq!(payload[1], 2.0 * payload[0]);
}

#[test]
fn seed_sweep_summary_matches_runs() {
    let dir = TempDir::new().unwrap();
    let preset = preset();
    let out = out_dir(&dir);
    ok(&[
        "sweep",
        "-c",
        preset.to_str().unwrap(),
        "--set",
        &out,
        "--set",
        "strategy.kind=\"finetune\"",
        "--param",
        "strategy.lambda",
        "--values",
        "1",
        "--seeds",
        "0,1,2",
        "--jobs",
        "2",
    ]);
    let root = dir.path().join("sweep-strategy_lambda");
    let runs = csv_rows(&root.join("runs.csv"));
    assert_eq!(runs.len(), 3);
    let faa: Vec<f64> = runs.iter().map(|r| r[2].parse().unwrap()).collect();
    let mean = faa.iter().sum::<f64>() / 3.0;
    let std = (faa.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let summary = &csv_rows(&root.join("summary.csv"))[0];
    assert_eq!(summary[1], "3");
    assert!((summary[2].parse::<f64>().unwrap() - mean).abs() < 1e-9);
    assert!((summary[3].parse::<f64>().unwrap() - std).abs() < 1e-9);
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = TempDir::new().unwrap();
    let out = spikereplay(&["report", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn report_aggregates_and_sorts_strategies() {
    let dir = TempDir::new().unwrap();
    run(&dir, &["strategy.kind=\"latent_replay\""]);
    let stdout = ok(&["report", dir.path().to_str().unwrap()]);
    assert!(stdout.contains("latent_replay"));
    assert_eq!(csv_rows(&dir.path().join("comparison.csv")).len(), 1);

    run(&dir, &["strategy.kind=\"finetune\""]);
    ok(&["report", dir.path().to_str().unwrap()]);
    let rows = csv_rows(&dir.path().join("comparison.csv"));
    let kinds: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(kinds, ["finetune", "latent_replay"]);
    assert!(dir.path().join("comparison.txt").exists());
}

#[test]
fn pretrained_network_can_be_reused() {
    let dir = TempDir::new().unwrap();
    let preset = preset();
    let out = out_dir(&dir);
    let model = dir.path().join("net.json");
    ok(&[
        "pretrain",
        "-c",
        preset.to_str().unwrap(),
        "--set",
        &out,
        "-o",
        model.to_str().unwrap(),
    ]);
    assert!(model.exists());
    ok(&[
        "run",
        "-c",
        preset.to_str().unwrap(),
        "--set",
        &out,
        "--pretrained",
        model.to_str().unwrap(),
    ]);
    let reused = report(&dir.path().join("seslr-seed0"));

    let fresh = TempDir::new().unwrap();
    run(&fresh, &[]);
    assert_eq!(
        reused["faa"],
        report(&fresh.path().join("seslr-seed0"))["faa"]
    );
}
