use std::process::Command;

use pspl_core::offline_data::BehavioralPolicySpec;
use pspl_core::offline_estimator::{delta2_bound, gamma_bound, BoundInputs};
use pspl_core::rater::RaterCompetence;
use pspl_harness::experiment::{bound_rows, read_results, summary_rows};
use pspl_harness::grid::{build_grid, logged_episodes};
use pspl_harness::{run_experiment, Algo, ExperimentConfig, HarnessError};

fn small(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        n: 40,
        k: 6,
        seeds: vec![3, 4],
        output: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn minimal_config_applies_defaults() {
    let cfg = ExperimentConfig::from_toml("algo = \"dps\"\n[env]\nkind = \"riverswim\"\n").unwrap();
    let d = ExperimentConfig::default();
    assert_eq!(cfg.algo, Algo::Dps);
    assert_eq!(cfg.env, d.env);
    assert_eq!((cfg.n, cfg.k, cfg.delta1), (d.n, d.k, 0.1));
    assert_eq!(cfg.seeds, d.seeds);
}

#[test]
fn sweep_config_grid_size() {
    let cfg = ExperimentConfig::from_toml(
        "algo = \"pspl\"\nseeds = [0, 1, 2, 3, 4]\n[env]\nkind = \"riverswim\"\n[sweep]\nlambda = [1.0, 10.0, 1000.0]\n",
    )
    .unwrap();
    assert_eq!(build_grid(&cfg).len(), 15);
}

#[test]
fn unknown_key_is_named() {
    let err = ExperimentConfig::from_toml("algo = \"pspl\"\nlamda = 3.0\n").unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    assert!(err.to_string().contains("lamda"), "{err}");
    let err = ExperimentConfig::from_toml("[sweep]\nbeta = [1.0]\nfoo = 1\n").unwrap_err();
    assert!(err.to_string().contains("foo"), "{err}");
}

#[test]
fn type_mismatch_is_named() {
    let err = ExperimentConfig::from_toml("k = \"many\"\n").unwrap_err();
    assert!(err.to_string().contains('k'), "{err}");
    let err = ExperimentConfig::from_toml("workers = 0\n").unwrap_err();
    assert!(err.to_string().contains("workers"), "{err}");
}

#[test]
fn config_roundtrips_through_toml() {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.beta = vec![0.1, 1.0];
    cfg.assumed_competence = Some(RaterCompetence {
        beta: 2.0,
        lambda: 5.0,
    });
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn misspecified_competence_recorded_in_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.true_competence.lambda = 1000.0;
    cfg.assumed_competence = Some(RaterCompetence {
        beta: 10.0,
        lambda: 10.0,
    });
    let out = run_experiment(&cfg).unwrap();
    let rows = read_results(&out.results).unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        assert_eq!((r.lambda_true, r.lambda_assumed), (1000.0, 10.0));
    }
}

#[test]
fn rerun_is_byte_identical_and_worker_count_free() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small(a.path());
    cfg.sweep.beta = vec![1.0, 10.0];
    run_experiment(&cfg).unwrap();
    cfg.output = b.path().to_path_buf();
    cfg.workers = 3;
    run_experiment(&cfg).unwrap();
    for f in ["results.csv", "summary.csv", "finals.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn cumulative_regret_recomputable_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = run_experiment(&cfg).unwrap();
    let rows = read_results(&out.results).unwrap();
    for seed in &cfg.seeds {
        let mut sum = 0.0;
        let run: Vec<_> = rows.iter().filter(|r| r.seed == *seed).collect();
        assert_eq!(run.len(), cfg.k + 1);
        for (i, r) in run.iter().filter(|r| !r.final_flag).enumerate() {
            assert_eq!(r.episode, i + 1);
            sum += r.simple_regret.unwrap();
            assert!((r.cumulative_regret.unwrap() - sum).abs() <= 1e-12 * (1.0 + sum));
        }
        let last = run.last().unwrap();
        assert!(last.final_flag);
        assert_eq!(last.cumulative_regret.unwrap(), sum);
    }
}

#[test]
fn summary_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.sweep.n = vec![20, 40, 60];
    let out = run_experiment(&cfg).unwrap();
    let rows = summary_rows(&cfg, &out.outcomes);
    assert_eq!(rows.len(), 3 * (logged_episodes(cfg.k).len() + 1));
    assert!(rows.iter().all(|r| r.runs == cfg.seeds.len()));
    let text = std::fs::read_to_string(&out.summary).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn failing_cells_are_marked_and_do_not_abort() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.behavior = BehavioralPolicySpec::FixedPolicy { table: vec![0; 3] };
    let out = run_experiment(&cfg).unwrap();
    assert!(out.outcomes.iter().all(|o| o.error.is_some()));
    let rows = read_results(&out.results).unwrap();
    assert_eq!(rows.len(), cfg.seeds.len());
    assert!(rows
        .iter()
        .all(|r| r.simple_regret.is_none() && !r.final_flag));
    let errors = std::fs::read_to_string(&out.errors).unwrap();
    assert_eq!(errors.lines().count(), cfg.seeds.len() + 1);
}

#[test]
fn offline_baselines_emit_one_final_row() {
    for algo in [Algo::Dpo, Algo::Ipo] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.algo = algo;
        let out = run_experiment(&cfg).unwrap();
        let rows = read_results(&out.results).unwrap();
        assert_eq!(rows.len(), cfg.seeds.len());
        assert!(rows.iter().all(|r| r.final_flag && r.k == 0));
    }
}

#[test]
fn bound_report_matches_library_and_decreases_in_k() {
    let dir = tempfile::tempdir().unwrap();
    let mut prev: Option<f64> = None;
    for k in [2, 4, 8] {
        let mut cfg = small(dir.path());
        cfg.k = k;
        cfg.n = 30;
        cfg.seeds = vec![0];
        cfg.true_competence = RaterCompetence {
            beta: 5.0,
            lambda: 1.0,
        };
        cfg.epsilon = Some(0.05);
        let out = run_experiment(&cfg).unwrap();
        let row = &bound_rows(&cfg, &out.outcomes)[0];
        let ctx = out.outcomes[0].bounds.clone().unwrap();
        let inputs = BoundInputs {
            beta: 5.0,
            lambda: 1.0,
            n: 30,
            b: ctx.b,
            d: ctx.d,
            delta_min: ctx.delta_min.unwrap(),
            delta1: 0.1,
            k,
            num_states: ctx.num_states,
            num_actions: ctx.num_actions,
            horizon: ctx.horizon,
            epsilon: 0.05,
        };
        let g = gamma_bound(&inputs).unwrap();
        assert_eq!(row.gamma, Some(g.value));
        assert_eq!(row.delta2, Some(delta2_bound(g.value, 30).unwrap()));
        let b = row.regret_bound.unwrap();
        assert!(row.prior_dependent_bound.is_some());
        assert_eq!(row.vacuous, Some(b >= ctx.horizon as f64));
        if let Some(p) = prev {
            assert!(b <= p);
        }
        prev = Some(b);
    }
}

#[test]
fn cli_run_is_deterministic() {
    let exe = env!("CARGO_BIN_EXE_pspl");
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(exe)
            .args(["run", "--k", "5", "--n", "30", "--seed", "9", "--output"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn cli_gen_offline_then_run_on_file() {
    let exe = env!("CARGO_BIN_EXE_pspl");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d0.txt");
    let ok = Command::new(exe)
        .args(["gen-offline", "--n", "25", "--seed", "2", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(ok.success());
    let run = |extra: Option<&std::path::Path>, name: &str| {
        let out = dir.path().join(name);
        let mut c = Command::new(exe);
        c.args(["run", "--k", "3", "--n", "25", "--seed", "2", "--output"])
            .arg(&out);
        if let Some(p) = extra {
            c.arg("--dataset").arg(p);
        }
        assert!(c.status().unwrap().success());
        std::fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(run(Some(&data), "file"), run(None, "gen"));
}

#[test]
fn cli_rejects_bad_config() {
    let exe = env!("CARGO_BIN_EXE_pspl");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let out = Command::new(exe)
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}
