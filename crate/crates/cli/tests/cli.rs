mod common;

use common::*;

#[test]
fn analyze_grid_reports_both_estimands_per_model_and_adjustment_narrows_intervals() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "trial.csv", &continuous_trial(106, 1, None));
    let width = |adjusted: bool| {
        let cfg = write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W1", "W2", "W3", "W4"], adjusted));
        let o = run(&["analyze", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = csv_rows(&stdout(&o));
        assert_eq!(rows.len(), 8);
        assert_eq!(rows.iter().filter(|r| r["weights"] == "individual").count(), 4);
        rows.iter()
            .map(|r| r["ci_upper"].parse::<f64>().unwrap() - r["ci_lower"].parse::<f64>().unwrap())
            .sum::<f64>()
    };
    assert!(width(true) < width(false));
}

#[test]
fn null_model_reproduces_inverse_probability_weighting() {
    let dir = tempfile::tempdir().unwrap();
    let data = continuous_trial(20, 3, None);
    write(dir.path(), "trial.csv", &data);
    let cfg = "input = \"trial.csv\"\n[columns]\ncluster_id = \"clinic\"\ntreatment = \"arm\"\noutcome = \"pain\"\n\
               [[models]]\nspec = { family = \"null\" }\n";
    let cfg = write(dir.path(), "a.toml", cfg);
    let o = run(&["analyze", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    // independent recomputation from the raw rows
    let mut clusters: std::collections::BTreeMap<String, (bool, f64, usize)> = Default::default();
    for line in data.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = clusters.entry(f[0].to_owned()).or_insert((f[1] == "1", 0.0, 0));
        e.1 += f[2].parse::<f64>().unwrap();
        e.2 += 1;
    }
    let (mut c1, mut c0, mut i1, mut i0) = (0.0, 0.0, 0.0, 0.0);
    let total: f64 = clusters.values().map(|c| c.2 as f64).sum();
    for (treated, sum, n) in clusters.values() {
        let ybar = sum / *n as f64;
        if *treated {
            c1 += ybar / 0.5;
            i1 += *n as f64 * ybar / 0.5;
        } else {
            c0 += ybar / 0.5;
            i0 += *n as f64 * ybar / 0.5;
        }
    }
    let m = clusters.len() as f64;
    let want = [(c1 - c0) / m, (i1 - i0) / total];
    for (row, w) in rows.iter().zip(want) {
        let got: f64 = row["estimate"].parse().unwrap();
        assert!((got - w).abs() < 1e-12 * w.abs().max(1.0), "{got} vs {w}");
    }
}

#[test]
fn single_treated_cluster_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::from("clinic,arm,pain,age,female,urban\n");
    data.push_str("a,1,1,0,0,0\n");
    for i in 0..5 {
        data.push_str(&format!("c{i},0,{i},0,1,1\n"));
    }
    write(dir.path(), "trial.csv", &data);
    let cfg = write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W1"], false));
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn validation_failures_exit_2_with_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = "clinic,arm,pain,age,female,urban\na,1,1,0,0,0\na,1,x,0,0,0\nb,0,1,0,0,1\nb,3,2,0,0,1\n";
    write(dir.path(), "trial.csv", data);
    let cfg = write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W1"], false));
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3: cluster 'a'"), "{err}");
    assert!(err.contains("line 5: cluster 'b': treatment must be 0 or 1"), "{err}");
}

#[test]
fn validate_summarizes_clean_input() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "trial.csv", &continuous_trial(10, 2, Some(4)));
    let cfg = write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W1"], false));
    let o = run(&["validate", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0]["clusters"], "10");
    assert_eq!(rows[0]["individuals"], "40");
}

#[test]
fn malformed_config_exits_2_and_dry_run_checks_it() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "input = 3\n");
    for cmd in ["analyze", "ics-test", "simulate"] {
        let o = run(&[cmd, "--config", bad.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
    let good = write(dir.path(), "a.toml", &analysis_config("missing.csv", &["W2"], true));
    let o = run(&["analyze", "--config", good.to_str().unwrap(), "--validate-config"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "configuration OK\n");
    // without the dry run the missing input is reported
    let o = run(&["analyze", "--config", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn equal_cluster_sizes_give_p_value_one() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "trial.csv", &continuous_trial(30, 4, Some(8)));
    let cfg = write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W1", "W2"], false));
    let o = run(&["ics-test", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for row in csv_rows(&stdout(&o)) {
        assert_eq!(row["statistic"], "0");
        assert_eq!(row["p_value"].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn simulate_smoke_run_emits_metrics_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "scenario = \"cont_noninf\"\nm = 30\nn_sim = 50\nseed = 3\n[truth]\nsize = 20000\n");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    // 8 models × 2 estimators × 2 targets
    assert_eq!(rows.len(), 32);
    assert!(rows.iter().all(|r| r["n_sim"] == "50" && r["n_ok"] == "50" && r["seed"] == "3"));
}

#[test]
fn failing_replicates_abort_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // a logistic model cannot be fitted to continuous outcomes
    let cfg = "scenario = \"cont_noninf\"\nm = 30\nn_sim = 5\nmodels = [\"W1\"]\nadjustment = [\"unadjusted\"]\n\
               [truth]\ndelta_c = -3.0\ndelta_i = -3.0\n\
               [[custom_models]]\nname = \"bad\"\nspec = { family = \"cluster_glm_logit\" }\n";
    let cfg = write(dir.path(), "s.toml", cfg);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn truth_from_flags() {
    let o = run(&["truth", "--scenario", "cont_noninf", "--m", "30", "--size", "5000", "--format", "record"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert!((v["delta_c"].as_f64().unwrap() + 3.0).abs() < 1e-10);
    let o = run(&["truth", "--scenario", "nope", "--m", "30"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_file_and_thread_count_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "trial.csv", &continuous_trial(40, 5, None));
    let cfg = write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W2", "W3"], true));
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let path = dir.path().join(format!("out{threads}.csv"));
        let o = run(&[
            "analyze", "--config", cfg.to_str().unwrap(), "--format", "csv", "--threads", threads, "--output",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(std::fs::read(path).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}
