use curioflight::nn::{backward, forward, optimize_step, AdamConfig, AdamState, MlpSpec, OutputActivation, ParameterSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn specs() -> Vec<MlpSpec> {
    let b = |k: usize, s: f64| OutputActivation::Bounded { scale: vec![s; k] };
    vec![
        MlpSpec::new(1, vec![1], 1, OutputActivation::Identity),
        MlpSpec::new(3, vec![5], 2, OutputActivation::Identity),
        MlpSpec::new(4, vec![8, 6], 4, b(4, 1.0)),
        MlpSpec::new(6, vec![4, 4, 4], 1, OutputActivation::Identity),
        MlpSpec::new(2, vec![16], 3, b(3, 2.5)),
        MlpSpec::new(10, vec![7, 3], 4, b(4, 0.5)),
        MlpSpec::new(5, vec![12, 12], 1, OutputActivation::Identity),
        MlpSpec::new(8, vec![3], 6, b(6, 1.0)),
        MlpSpec::new(19, vec![10, 10], 4, OutputActivation::Bounded { scale: vec![1.0, 2.0, 0.5, 1.5] }),
        MlpSpec::new(23, vec![9, 5], 1, OutputActivation::Identity),
    ]
    .into_iter()
    .map(|s| s.unwrap())
    .collect()
}

fn objective(spec: &MlpSpec, p: &ParameterSet<f64>, x: &[f64], g: &[f64]) -> f64 {
    forward(spec, p, x).unwrap().iter().zip(g).map(|(y, w)| y * w).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let eps = 1e-6;
    for (k, spec) in specs().iter().enumerate() {
        let p = ParameterSet::<f64>::init(spec, 1.0, &mut rng);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (pg, ig) = backward(spec, &p, &x, &g).unwrap();

        let fd_p: Vec<f64> = (0..p.len())
            .map(|i| {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi.values[i] += eps;
                lo.values[i] -= eps;
                (objective(spec, &hi, &x, &g) - objective(spec, &lo, &x, &g)) / (2.0 * eps)
            })
            .collect();
        let fd_x: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[i] += eps;
                lo[i] -= eps;
                (objective(spec, &p, &hi, &g) - objective(spec, &p, &lo, &g)) / (2.0 * eps)
            })
            .collect();
        let ep = rel_err(&pg.values, &fd_p);
        let ex = rel_err(&ig, &fd_x);
        assert!(ep < 1e-3, "spec {k}: parameter gradient relative error {ep}");
        assert!(ex < 1e-3, "spec {k}: input gradient relative error {ex}");
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let spec = MlpSpec::new(2, vec![4], 1, OutputActivation::Identity).unwrap();
    let mut p = ParameterSet::<f64>::zeros(&spec);
    let target: Vec<f64> = (0..p.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut st = AdamState::new(p.len());
    for _ in 0..3000 {
        let g: Vec<f64> = p.values.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        optimize_step(&mut p, &g, &mut st, 0.01, &AdamConfig::default()).unwrap();
    }
    let err: f64 = p.values.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");
}

#[test]
fn bounded_outputs_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = MlpSpec::new(4, vec![8], 4, OutputActivation::Bounded { scale: vec![1.0; 4] }).unwrap();
    let p = ParameterSet::<f64>::init(&spec, 50.0, &mut rng);
    for _ in 0..200 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
        assert!(forward(&spec, &p, &x).unwrap().iter().all(|y| y.abs() <= 1.0));
    }
}
