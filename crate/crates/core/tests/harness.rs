use std::path::Path;
use std::process::Command;

use sc_scdma::harness::{
    self, q_function, run_ber, run_table, validate_llr, with_threads, ExperimentSpec,
};

fn spec(text: &str) -> ExperimentSpec {
    ExperimentSpec::parse(text).unwrap()
}

fn run_in(dir: &Path, s: &ExperimentSpec, threads: usize) {
    let out = with_threads(Some(threads), || harness::run_experiment(s, dir)).unwrap().unwrap();
    assert!(out.failure.is_none());
}

#[test]
fn csv_bodies_do_not_depend_on_thread_count() {
    let cases = [
        ("ber.csv", "kind = ber\nk = 200\nn = 150\nn_init = 200\nr = 4\nl = 4\nw = 1\ntrials = 12\niterations = 10\nsnr_db = 6, 10"),
        ("llr.csv", "kind = validate-llr\nk = 300\nn = 300\nr = 8\ntrials = 6\niterations = 4"),
    ];
    for (file, text) in cases {
        let s = spec(text);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_in(a.path(), &s, 1);
        run_in(b.path(), &s, 3);
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn different_seeds_give_different_realizations() {
    let a = run_ber(&spec("kind = ber\nk = 200\nn = 200\nr = 4\ntrials = 4\nsnr_db = 4\nseed = 1")).unwrap();
    let b = run_ber(&spec("kind = ber\nk = 200\nn = 200\nr = 4\ntrials = 4\nsnr_db = 4\nseed = 2")).unwrap();
    assert_ne!(a.points[0].counts, b.points[0].counts);
}

#[test]
fn noiseless_single_user_has_no_errors() {
    let r = run_ber(&spec("kind = ber\nk = 1\nn = 1\nr = 1\nsnr_db = inf\ntrials = 10\niterations = 3")).unwrap();
    let p = &r.points[0];
    assert_eq!(p.sigma_n_sq, 0.0);
    for c in &p.counts[1..] {
        assert_eq!((c.bit_errors, c.bits), (0, 10));
    }
}

#[test]
fn low_load_ber_matches_density_evolution() {
    let r = run_ber(&spec("kind = ber\nk = 500\nn = 1000\nr = 8\nsnr_db = 10\niterations = 40\ntrials = 200\nseed = 11"))
        .unwrap();
    let p = &r.points[0];
    let last = p.counts.last().unwrap();
    let predicted = *p.de_prediction.last().unwrap();
    let (lo, hi) = last.interval();
    assert!(last.bits >= 100_000);
    assert!(lo <= predicted && predicted <= hi, "DE {predicted:.3e} outside [{lo:.3e}, {hi:.3e}] (BER {:.3e})", last.ber());
}

#[test]
fn unit_load_snr_sweep_tracks_density_evolution_within_factor_two() {
    let r = run_ber(&spec(
        "kind = ber\nk = 1000\nn = 1000\nr = 8\nsnr_db = 2, 4, 6, 8, 10, 12\niterations = 40\ntrials = 200\nseed = 5",
    ))
    .unwrap();
    for p in &r.points {
        let ber = p.counts.last().unwrap().ber();
        let de = *p.de_prediction.last().unwrap();
        assert!(ber > 0.0, "no errors at {} dB", p.snr_db);
        assert!((0.5..=2.0).contains(&(ber / de)), "{} dB: BER {ber:.3e}, DE {de:.3e}", p.snr_db);
    }
}

#[test]
fn de_prediction_at_iteration_zero_is_a_coin_flip() {
    let r = run_ber(&spec("kind = ber\nk = 100\nn = 100\nr = 4\ntrials = 2\niterations = 2")).unwrap();
    assert_eq!(r.points[0].de_prediction[0], q_function(0.0));
}

#[test]
fn empty_grid_gives_empty_table() {
    let t = run_table(&spec("kind = threshold\nmode = table\nl_values =\nw_values = 1,2")).unwrap();
    assert_eq!(t.len(), 1);
    assert!(t[0].cells.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let s = spec("kind = threshold\nmode = table\nl_values = 16\nw_values =");
    run_in(dir.path(), &s, 1);
    let body = std::fs::read_to_string(dir.path().join("table_10dB.csv")).unwrap();
    assert_eq!(body.trim(), "L\n16");
}

#[test]
fn zero_width_column_is_the_uncoupled_threshold() {
    let t = run_table(&spec("kind = threshold\nmode = table\nl_values = 16, 32\nw_values = 0")).unwrap();
    for row in &t[0].cells {
        let b = row[0].beta_star.unwrap();
        assert!((b - 1.73078).abs() < 1e-4, "{b}");
    }
}

#[test]
fn failing_cell_is_recorded_and_table_still_emitted() {
    // W = L is not a valid coupled system.
    let t = run_table(&spec("kind = threshold\nmode = table\nl_values = 2\nw_values = 2")).unwrap();
    assert_eq!(t[0].failed_cells(), 1);
    assert!(t[0].cells[0][0].error.is_some());
}

#[test]
fn llr_report_starts_at_zero() {
    let rows = validate_llr(&spec("kind = validate-llr\nk = 300\nn = 300\nr = 8\ntrials = 2\niterations = 3")).unwrap();
    for r in rows.iter().filter(|r| r.iteration == 0) {
        assert_eq!((r.empirical_mean, r.empirical_var, r.predicted_mean, r.predicted_var), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.mean_rel_error, 0.0);
    }
    assert!(rows.iter().any(|r| r.iteration == 3));
}

#[test]
fn information_enters_at_the_boundary_of_a_coupled_chain() {
    let s = spec("kind = validate-llr\nk = 500\nn = 300\nn_init = inf\nr = 16\nl = 8\nw = 1\ntrials = 4\niterations = 3");
    let rows = validate_llr(&s).unwrap();
    let at = |p: usize, field: fn(&harness::LlrRow) -> f64| {
        rows.iter().find(|r| r.iteration == 3 && r.position == Some(p)).map(field).unwrap()
    };
    // Position 0 is the known-symbol seed; 1 and 7 are its neighbours.
    assert!(rows.iter().all(|r| r.position != Some(0)));
    for boundary in [1, 7] {
        assert!(at(boundary, |r| r.empirical_mean) > at(4, |r| r.empirical_mean));
        assert!(at(boundary, |r| r.predicted_mean) > at(4, |r| r.predicted_mean));
    }
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sc-scdma")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let (code, err) = cli(&["ber", "--out", out, "--set", "bogus=1"]);
    assert_eq!(code, 2, "{err}");

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "kind = ber\ntrials = 0\n").unwrap();
    assert_eq!(cli(&["ber", "--out", out, "--config", cfg.to_str().unwrap()]).0, 2);

    // A config for another experiment is rejected.
    std::fs::write(&cfg, "kind = de\n").unwrap();
    assert_eq!(cli(&["ber", "--out", out, "--config", cfg.to_str().unwrap()]).0, 2);

    // Five iterations cannot converge to 1e-10.
    let (code, _) = cli(&["de", "--out", out, "--set", "de_max_iters=5", "--set", "beta=1.5"]);
    assert_eq!(code, 3);
    assert!(dir.path().join("de.csv").exists());

    let (code, err) = cli(&["threshold", "--out", out, "--set", "mode=table", "--set", "l_values=", "--threads", "2"]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn cli_config_file_seed_override_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nkind = ber\nk = 100\nn = 100\nr = 4\ntrials = 3\niterations = 5\nseed = 3\n").unwrap();
    let out = dir.path().join("o");
    let (code, err) = cli(&[
        "ber",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert_eq!(code, 0, "{err}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ber_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["config"]["k"], "100");
    assert!(summary["rng"].as_str().unwrap().contains("ChaCha20"));
    assert!(summary["git_revision"].is_string());
    let csv = std::fs::read_to_string(out.join("ber.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn cli_continuum_emits_sweep_and_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, err) = cli(&[
        "continuum", "--out", out, "--set", "beta_points=3", "--set", "gamma=0.5", "--set", "profile_samples=5",
    ]);
    assert_eq!(code, 0, "{err}");
    let sweep = std::fs::read_to_string(dir.path().join("continuum_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    let prof = std::fs::read_to_string(dir.path().join("continuum_profiles.csv")).unwrap();
    // gamma = 0.5 leaves only the uniform profile.
    assert!(prof.lines().skip(1).all(|l| l.contains(",uniform,")));
}
