use std::fs;
use std::path::Path;

use curioflight::checkpoint;
use curioflight::config::RunConfig;
use curioflight::harness::{
    self, cmd_dtw_oracle, cmd_eval, cmd_replay, read_series, strip_wall_clock, CHECKPOINT,
    CONFIG_COPY, CURVE_CSV, TRAIN_LOG, TRAJECTORY_COLUMNS,
};
use curioflight::scenes::{SceneKind, SceneSpec};
use curioflight::Error;

fn small_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.output_dir = dir.to_path_buf();
    c.seed = 5;
    c.training.episodes = 12;
    c.training.checkpoint_every = 5;
    c.learner.warmup = 64;
    c.learner.batch_size = 32;
    c.network.actor_hidden = vec![16, 16];
    c.network.critic_hidden = vec![16, 16];
    c.scene.max_episode_steps = 60;
    c
}

#[test]
fn training_is_reproducible_apart_from_wall_clock() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let cfg = small_config(&tmp.path().join(name));
        harness::cmd_train(&cfg).unwrap();
        let log = fs::read_to_string(cfg.output_dir.join(TRAIN_LOG)).unwrap();
        let ckpt = fs::read(cfg.output_dir.join(CHECKPOINT)).unwrap();
        (strip_wall_clock(&log).unwrap(), ckpt)
    };
    let (log_a, ck_a) = run("a");
    let (log_b, ck_b) = run("b");
    assert_eq!(log_a.lines().count(), 12);
    assert_eq!(log_a, log_b);
    assert_eq!(ck_a, ck_b);
    assert!(!log_a.contains("wall_seconds"));
}

#[test]
fn training_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let result = harness::cmd_train(&cfg).unwrap();
    let copy = RunConfig::load(&tmp.path().join(CONFIG_COPY)).unwrap();
    assert_eq!(copy, cfg);
    let curve = fs::read_to_string(tmp.path().join(CURVE_CSV)).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("wall_minutes,episode,smoothed_reward"));
    assert_eq!(lines.count(), 12);
    let bundle = harness::load_policy(&tmp.path().join(CHECKPOINT), &cfg).unwrap();
    assert_eq!(checkpoint::encode(&bundle), checkpoint::encode(&result.bundle));
    assert!(result.records.iter().any(|r| r.stats.critic_updates > 0));
}

#[test]
fn zero_budget_emits_initialized_checkpoint_and_empty_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.training.episodes = 0;
    let result = harness::cmd_train(&cfg).unwrap();
    assert!(result.records.is_empty());
    let curve = fs::read_to_string(tmp.path().join(CURVE_CSV)).unwrap();
    assert_eq!(curve.lines().count(), 1);
    assert_eq!(fs::read_to_string(tmp.path().join(TRAIN_LOG)).unwrap(), "");
    let b = harness::load_policy(&tmp.path().join(CHECKPOINT), &cfg).unwrap();
    assert_eq!(b.step, 0);
    assert_eq!(b.actor, b.actor_target);
}

#[test]
fn wall_clock_budget_stops_training() {
    let mut cfg = small_config(Path::new("unused"));
    cfg.training.max_wall_minutes = Some(0.0);
    assert!(harness::train(&cfg, None).unwrap().records.is_empty());
}

#[test]
fn eval_and_replay_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("run"));
    cfg.training.episodes = 3;
    harness::cmd_train(&cfg).unwrap();
    let ckpt = cfg.output_dir.join(CHECKPOINT);

    let out = tmp.path().join("eval");
    let report = cmd_eval(&cfg, &ckpt, None, &[0.0, 3.0], 4, 1, &out).unwrap();
    assert_eq!(report.rows.len(), 2);
    for r in &report.rows {
        assert_eq!(r.episodes, 4);
        assert!((0.0..=1.0).contains(&r.success_rate));
        assert_eq!(r.position_error.is_none(), r.success_rate == 0.0);
    }
    let csv = fs::read_to_string(out.join("eval_report.csv")).unwrap();
    assert!(csv.starts_with("noise_deg,position_error_m,average_reward,success_rate,episodes"));
    assert_eq!(fs::read_to_string(out.join("eval_episodes.jsonl")).unwrap().lines().count(), 8);
    let again = cmd_eval(&cfg, &ckpt, None, &[0.0, 3.0], 4, 1, &out).unwrap();
    assert_eq!(again, report);

    let traj = tmp.path().join("traj.csv");
    cmd_replay(&cfg, &ckpt, None, 0.0, 0, &traj).unwrap();
    let text = fs::read_to_string(&traj).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header, TRAJECTORY_COLUMNS);
    let last = text.lines().last().unwrap();
    assert!(!last.ends_with(",none,") && text.lines().count() >= 2);
}

#[test]
fn eval_rejects_mismatched_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("run"));
    cfg.training.episodes = 0;
    harness::cmd_train(&cfg).unwrap();
    let scene = SceneSpec {
        kind: SceneKind::Unstructured,
        ..SceneSpec::default()
    };
    let scene_path = tmp.path().join("scene.toml");
    fs::write(&scene_path, harness::scene_file_text(&scene)).unwrap();
    let err = cmd_eval(&cfg, &cfg.output_dir.join(CHECKPOINT), Some(&scene_path), &[0.0], 2, 0, tmp.path())
        .unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");
}

#[test]
fn dtw_oracle_reads_csv_series() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "# positions\n0\n1\n2\n").unwrap();
    fs::write(&b, "0, 0\n2, 0\n").unwrap();
    // Widths 1 and 2 are both padded to 3-D positions.
    let r = cmd_dtw_oracle(&a, &b).unwrap();
    assert_eq!(r.dp, 1.0);
    assert_eq!(r.brute_force, Some(1.0));
    assert_eq!(r.abs_difference, Some(0.0));

    let long = tmp.path().join("long.csv");
    fs::write(&long, (0..12).map(|i| format!("{i}\n")).collect::<String>()).unwrap();
    let r = cmd_dtw_oracle(&a, &long).unwrap();
    assert_eq!(r.brute_force, None);

    let att = tmp.path().join("att.csv");
    fs::write(&att, "1,0,0,0,1,0,0,0,1\n").unwrap();
    assert_eq!(read_series(&att).unwrap().len(), 1);
    assert!(matches!(cmd_dtw_oracle(&a, &att), Err(Error::Domain(_))));
}

#[test]
fn dtw_oracle_reports_parse_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "0\n# note\n1\nx\n").unwrap();
    match read_series(&bad) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
    let ragged = tmp.path().join("ragged.csv");
    fs::write(&ragged, "0,1\n1\n").unwrap();
    assert!(matches!(read_series(&ragged), Err(Error::Parse { line: 2, .. })));
    let wide = tmp.path().join("wide.csv");
    fs::write(&wide, "1,2,3,4\n").unwrap();
    assert!(matches!(read_series(&wide), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(read_series(&tmp.path().join("missing.csv")), Err(Error::Io { .. })));
}

#[test]
fn config_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(&p, "seed = 3\n\nlearner.gamma = \"high\"\n").unwrap();
    match RunConfig::load(&p) {
        Err(Error::Parse { line, path, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(path, p);
        }
        other => panic!("unexpected {other:?}"),
    }
}
