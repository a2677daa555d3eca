use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trigeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trigeval"))
        .args(args)
        .env_remove("TRIGEVAL_THREADS")
        .output()
        .expect("spawn trigeval")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bounds_prints_both_values() {
    let o = trigeval(&["bounds", "--beta1", "1", "--beta2", "2", "--m", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key},")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(value("variance_gap_bound"), 1.25);
    assert!((value("ate_bias_bound") - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(trigeval(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(trigeval(&["bounds", "--beta1", "1", "--beta2", "2", "--m", "4", "--bogus"]).status.code(), Some(2));
    // Seeds are mandatory for stochastic commands.
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(trigeval(&["simulate", "--out", p(dir.path())]).status.code(), Some(2));
    assert_eq!(trigeval(&["--help"]).status.code(), Some(0));
}

#[test]
fn estimate_full_without_intensities_fails() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    fs::write(
        &input,
        "unit_id,assignment,n_obs,mean_response\na,0,10,1.0\nb,1,10,2.0\nc,0,10,1.5\nd,1,10,2.5\n",
    )
    .unwrap();
    let o = trigeval(&["estimate", "--input", p(&input), "--method", "full"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MissingTriggerData"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());

    let o = trigeval(&["estimate", "--input", p(&input), "--method", "baseline", "--format", "jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["method"], "baseline");
    assert_eq!(v["ate"], 1.0);
    assert_eq!(v["treatment_id"], "units");
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = trigeval(&["simulate", "--seed", "7", "--n-units", "50", "--n-obs", "40", "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["units.csv", "observations.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
    }
    let units = fs::read_to_string(a.join("units.csv")).unwrap();
    assert_eq!(units.lines().count(), 51);
    assert_eq!(fs::read_to_string(a.join("observations.csv")).unwrap().lines().count(), 50 * 40 + 1);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = trigeval(&["simulate", "--seed", "3", "--n-units", "400", "--n-obs", "60", "--out", p(d)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let sampled = d.join("sampled.csv");
    let o = trigeval(&[
        "sample-triggers",
        "--units",
        p(&d.join("units.csv")),
        "--observations",
        p(&d.join("observations.csv")),
        "--m",
        "10",
        "--mode",
        "without",
        "--seed",
        "5",
        "--out",
        p(&sampled),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ds = trigeval::io::parse_unit_csv(&sampled).unwrap();
    for u in ds.units() {
        let r = u.estimated_trigger_intensity.unwrap();
        assert!((r * 10.0 - (r * 10.0).round()).abs() < 1e-12);
    }

    let fits_a = d.join("a.csv");
    let fits_b = d.join("b.jsonl");
    for (method, out, fmt) in [("baseline", &fits_a, "csv"), ("partial", &fits_b, "jsonl")] {
        let o = trigeval(&[
            "estimate", "--input", p(&sampled), "--method", method, "--treatment-id", "exp1",
            "--out", p(out), "--format", fmt,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let o = trigeval(&["compare", "--a", p(&fits_a), "--b", p(&fits_b)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("key,value\n"));
    assert!(text.contains("n_treatments,1\n"));
    assert!(text.contains("ci_overlap_count_95,"));

    // Sampling more than a unit holds without replacement is a domain error.
    let o = trigeval(&[
        "sample-triggers", "--units", p(&d.join("units.csv")), "--observations",
        p(&d.join("observations.csv")), "--m", "61", "--mode", "without", "--seed", "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("InsufficientObservations"));
}

#[test]
fn sweep_to_stdout_prints_only_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        r#"
axis = "sample_budget_m"
grid = [2, 10]
replications = 20
estimators = ["full_knowledge", "partial_knowledge"]

[gen]
n_units = 200
params = { beta0 = 1.0, beta1 = 0.5, beta2 = 1.0 }
trigger_law = { kind = "two_point", low = 0.2, high = 0.8, p_high = 0.5 }
noise = { kind = "homogeneous", sigma = 1.0 }

[plan]
m = 2
"#,
    )
    .unwrap();
    let o = trigeval(&["sweep", "--config", p(&cfg), "--seed", "1", "--out", "-"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("axis_value,estimator,"));
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(fs::read_dir(dir.path()).unwrap().count() == 1, "nothing written besides the config");

    let out = dir.path().join("out");
    let o = trigeval(&["sweep", "--config", p(&cfg), "--seed", "1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let fig = fs::read_to_string(out.join("bias_vs_m.csv")).unwrap();
    assert!(fig.starts_with("axis,estimator,metric,value\n"));
    assert_eq!(fig.lines().count(), 5);
    assert!(out.join("se_vs_m.csv").exists());
    assert!(!out.join("ate_vs_intensity.csv").exists());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg: trigeval::sim::SweepConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 3);
}
