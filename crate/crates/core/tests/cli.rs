mod common;

use std::path::Path;

use common::*;
use ringplan::cli::run_cli_with;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["ringplan"];
    argv.extend_from_slice(args);
    let code = run_cli_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rows of a whitespace-separated table whose first cell is a key.
fn row<'a>(text: &'a str, key: &str) -> Vec<&'a str> {
    text.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .find(|cells| cells.first() == Some(&key))
        .unwrap_or_else(|| panic!("no row `{key}` in\n{text}"))
}

#[test]
fn strong_device_takes_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let mut weak = linux_cpu("weak", 2 * GIB);
    for v in weak.cpu_flops.values_mut() {
        *v /= 20.0;
    }
    let s = spec(vec![linux_cuda("big", 64 * GIB, 48 * GIB), weak], 32);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, s.to_toml_string()).unwrap();

    let (code, out, err) = run(&["plan", "--config", path_str(&cfg)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("removed devices: weak"), "{out}");
    let big = row(&out, "big");
    assert_eq!(big[2], "32", "{out}");
    assert_eq!(big[3], "32", "{out}");
}

#[test]
fn sweep_k_halves_constrained_tpot() {
    let cfg = config_path("homogeneous_70b.toml");
    let (code, out, err) = run(&["sweep-k", "--config", path_str(&cfg), "--tokens", "6"]);
    assert_eq!(code, 0, "{err}");
    let tpot = |k: &str| row(&out, k)[3].parse::<f64>().unwrap();
    assert!(tpot("2") < 0.6 * tpot("1"), "{out}");
}

#[test]
fn malformed_config_lists_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(vec![linux_cpu("a", GIB), linux_cpu("a", GIB)], 8);
    s.devices[1].disk_seq_read = -1.0;
    s.devices[0].comm_latency = -0.5;
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, s.to_toml_string()).unwrap();
    let (code, out, err) = run(&["validate", "--config", path_str(&cfg)]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("validate failed"), "{err}");
    assert!(err.contains("device `a`: id: duplicate id"), "{err}");
    assert!(err.contains("disk_seq_read"), "{err}");
    assert!(err.contains("comm_latency"), "{err}");
}

#[test]
fn golden_configs_validate() {
    for name in GOLDEN_CONFIGS {
        let (code, out, err) = run(&["validate", "--config", path_str(&config_path(name))]);
        assert_eq!(code, 0, "{name}: {err}");
        assert!(out.starts_with("ok: "), "{out}");
    }
}

#[test]
fn failures_name_their_stage() {
    let (code, _, err) = run(&["plan", "--config", "/definitely/missing.toml"]);
    assert_eq!(code, 1);
    assert!(err.contains("config failed"), "{err}");

    let (code, _, err) = run(&["plan", "--config", "x.toml", "--scheduler", "random"]);
    assert_eq!(code, 1);
    assert!(err.contains("random"), "{err}");

    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 1);

    let cfg = config_path("small_model.toml");
    let (code, _, err) = run(&["simulate", "--config", path_str(&cfg), "--tokens", "0"]);
    assert_eq!(code, 1);
    assert!(err.contains("simulate failed"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("p.toml");
    std::fs::write(&plan, "k = 1\nobjective = 0.0\n[[devices]]\nid = \"ghost\"\nw = 32\nn = 0\nclass = \"m4\"\n").unwrap();
    let (code, _, err) = run(&["simulate", "--config", path_str(&cfg), "--plan", path_str(&plan), "--tokens", "2"]);
    assert_eq!(code, 1);
    assert!(err.contains("plan failed") && err.contains("ghost"), "{err}");
}

#[test]
fn trace_requires_output_path() {
    let cfg = config_path("small_model.toml");
    let (code, _, _) = run(&["simulate", "--config", path_str(&cfg), "--tokens", "2", "--trace-format", "csv"]);
    assert_eq!(code, 1);
}

#[test]
fn plan_file_round_trip_through_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("home_cluster.toml");
    let plan = dir.path().join("plan.toml");
    let (code, _, err) = run(&["plan", "--config", path_str(&cfg), "--out", path_str(&plan)]);
    assert_eq!(code, 0, "{err}");

    let from_file = run(&["simulate", "--config", path_str(&cfg), "--plan", path_str(&plan), "--tokens", "3"]);
    let inline = run(&["simulate", "--config", path_str(&cfg), "--tokens", "3"]);
    assert_eq!(from_file.0, 0, "{}", from_file.2);
    assert_eq!(from_file.1, inline.1);
    assert!(from_file.1.contains("mean TPOT: "));
}

#[test]
fn csv_trace_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("small_model.toml");
    let trace = dir.path().join("t.csv");
    let (code, _, err) = run(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--tokens",
        "2",
        "--mode",
        "pp",
        "--no-prefetch",
        "--trace",
        path_str(&trace),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("device,kind,token,round,start_s,duration_s"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.contains(",compute_cpu,")));
    assert!(!rows.iter().any(|r| r.contains(",prefetch,")));
}

#[test]
fn compare_puts_halda_first_and_best() {
    for name in GOLDEN_CONFIGS {
        let cfg = config_path(name);
        let (code, out, err) = run(&["compare", "--config", path_str(&cfg), "--tokens", "3"]);
        assert_eq!(code, 0, "{name}: {err}");
        let halda: f64 = row(&out, "halda")[3].parse().unwrap();
        for other in ["mem", "perf"] {
            let r = row(&out, other);
            if r.get(2) == Some(&"yes") {
                let theirs: f64 = r[3].parse().unwrap();
                assert!(halda <= theirs, "{name}: {out}");
            }
        }
    }
}

#[test]
fn baselines_plan_with_one_round() {
    let cfg = config_path("home_cluster.toml");
    for s in ["mem", "perf"] {
        let (code, out, err) = run(&["plan", "--config", path_str(&cfg), "--scheduler", s]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains(&format!("scheduler: {s}\nk: 1\n")), "{out}");
    }
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("sweep-k"));
}
