use curioflight::env::{ActionBounds, Environment, QuadEnv};
use curioflight::exploration::{
    attitude_noise, rollout, BranchPoint, ExplorationConfig, Strategy,
};
use curioflight::geometry::EllipsoidModel;
use curioflight::reward::RewardConfig;
use curioflight::scenes::{make_window_scene, SceneSpec};
use curioflight::sim::QuadParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn env() -> QuadEnv<f64> {
    let spec = SceneSpec {
        max_episode_steps: 60,
        ..SceneSpec::default()
    };
    let scene = make_window_scene(0.3, 0.0, &spec).unwrap();
    QuadEnv::new(
        scene,
        QuadParams::default(),
        ActionBounds::default(),
        EllipsoidModel::default(),
        &RewardConfig::default(),
    )
}

fn hover(_: &[f64]) -> [f64; 4] {
    [0.0; 4]
}

fn config(strategy: Strategy) -> ExplorationConfig {
    ExplorationConfig {
        strategy,
        exploration_noise_std: vec![0.05; 4],
        branch_noise_std: vec![0.15; 4],
        ..ExplorationConfig::default()
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn spe_noise_matches_configured_std() {
    let mut e = env();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = config(Strategy::Spe);
    let mut per_dim: [Vec<f64>; 4] = Default::default();
    for _ in 0..100 {
        e.reset();
        let ep = rollout(&hover, &mut e, &cfg, &mut rng).unwrap();
        assert_eq!(ep.paths.len(), 1);
        for s in ep.executed_steps() {
            for k in 0..4 {
                per_dim[k].push(s.action[k]);
            }
        }
    }
    for (k, xs) in per_dim.iter().enumerate() {
        let sd = std_dev(xs);
        assert!((sd - 0.05).abs() < 0.05 * 0.05, "dim {k}: {sd}");
    }
}

#[test]
fn bse_structure() {
    let mut e = env();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = ExplorationConfig {
        branch_count: 3,
        ..config(Strategy::Bse)
    };
    for _ in 0..30 {
        e.reset();
        let ep = rollout(&hover, &mut e, &cfg, &mut rng).unwrap();
        let init = ep.paths.last().unwrap();
        assert!(init.steps.len() <= cfg.init_steps);
        assert_eq!(ep.branch_indices.len(), 3);
        for (b, &i) in ep.paths.iter().zip(&ep.branch_indices) {
            assert!(i <= init.steps.len());
            assert_eq!(b.shared_prefix, i);
            assert_eq!(&b.steps[..i], &init.steps[..i]);
            assert_eq!(&b.states[..=i], &init.states[..=i]);
            assert!(b.termination().is_some());
        }
        let executed = ep.executed_steps().count();
        let expected: usize = ep.paths.iter().map(|p| p.steps.len() - p.shared_prefix).sum();
        assert_eq!(executed, expected);
    }
}

#[test]
fn branch_segment_uses_branch_noise() {
    let mut e = env();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = config(Strategy::Bse);
    let mut branch_roll = Vec::new();
    for _ in 0..150 {
        e.reset();
        let ep = rollout(&hover, &mut e, &cfg, &mut rng).unwrap();
        let b = &ep.paths[0];
        let start = b.shared_prefix;
        let end = (start + cfg.branch_length).min(b.steps.len());
        branch_roll.extend(b.steps[start..end].iter().map(|s| s.action[0]));
    }
    let sd = std_dev(&branch_roll);
    assert!((sd - 0.15).abs() < 0.15 * 0.05, "{sd}");
}

#[test]
fn degenerate_bse_matches_spe_in_distribution() {
    // Branching at the end of the initial segment with the baseline noise level
    // is a single noisy path, i.e. SPE.
    let mut e = env();
    let spe = config(Strategy::Spe);
    let bse = ExplorationConfig {
        branch_point: BranchPoint::Last,
        branch_noise_std: spe.exploration_noise_std.clone(),
        ..config(Strategy::Bse)
    };
    let finals = |cfg: &ExplorationConfig, seed: u64, e: &mut QuadEnv<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..300)
            .map(|_| {
                e.reset();
                let ep = rollout(&hover, e, cfg, &mut rng).unwrap();
                assert_eq!(ep.paths.len(), 1);
                let s = ep.main().states.last().unwrap();
                s.position.y + 0.5 * s.position.z
            })
            .collect::<Vec<f64>>()
    };
    let a = finals(&spe, 10, &mut e);
    let b = finals(&bse, 20, &mut e);
    let d = ks_statistic(&a, &b);
    let critical = 1.628 * (2.0 / 300.0f64).sqrt();
    assert!(d < critical, "KS {d} >= {critical}");
}

#[test]
fn bse_samples_a_broader_area() {
    let mut e = env();
    let spread = |cfg: &ExplorationConfig, e: &mut QuadEnv<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ys = Vec::new();
        let mut zs = Vec::new();
        for _ in 0..100 {
            e.reset();
            let ep = rollout(&hover, e, cfg, &mut rng).unwrap();
            for p in &ep.paths {
                for s in &p.states {
                    ys.push(s.position.y);
                    zs.push(s.position.z);
                }
            }
        }
        std_dev(&ys).powi(2) + std_dev(&zs).powi(2)
    };
    let s = spread(&config(Strategy::Spe), &mut e);
    let b = spread(&config(Strategy::Bse), &mut e);
    assert!(b > s, "bse {b} vs spe {s}");
}

#[test]
fn snapshot_restore_replays_exactly() {
    let mut e = env();
    e.reset();
    for _ in 0..5 {
        e.step(&[0.1, -0.2, 0.0, 0.3]).unwrap();
    }
    let snap = e.snapshot().unwrap();
    let a = e.step(&[0.3, 0.1, 0.0, -0.2]).unwrap();
    e.restore(&snap).unwrap();
    let b = e.step(&[0.3, 0.1, 0.0, -0.2]).unwrap();
    assert_eq!(a.observation, b.observation);
    assert_eq!(a.reward, b.reward);
}

#[test]
fn attitude_noise_has_requested_std() {
    let bounds = ActionBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rolls = Vec::new();
    let mut pitches = Vec::new();
    for _ in 0..20_000 {
        let a = attitude_noise(&[0.0, 0.0, 0.0, 0.4], 3.0, &bounds, &mut rng);
        assert_eq!(a[3], 0.4);
        rolls.push(a[0] * bounds.max_roll_deg);
        pitches.push(a[1] * bounds.max_pitch_deg);
    }
    for xs in [&rolls, &pitches] {
        let sd = std_dev(xs);
        assert!((sd - 3.0).abs() < 0.1, "{sd}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(attitude_noise(&[0.2, -0.1, 0.0, 0.0], 0.0, &bounds, &mut rng), [0.2, -0.1, 0.0, 0.0]);
}
