use curioflight::curiosity::{
    curiosity_reward, dtw_distance, Channel, EpisodeMemory, EpisodeSeries, StateChannelSeries,
};
use proptest::prelude::*;

fn episode(p: Vec<f64>, a: Vec<f64>, v: Vec<f64>) -> EpisodeSeries<f64> {
    EpisodeSeries::new(
        StateChannelSeries::new(Channel::Position, p).unwrap(),
        StateChannelSeries::new(Channel::Attitude, a).unwrap(),
        StateChannelSeries::new(Channel::Velocity, v).unwrap(),
    )
    .unwrap()
}

fn arb_episode(max_len: usize, scale: f64) -> impl Strategy<Value = EpisodeSeries<f64>> {
    (1..=max_len, 1..=max_len, 1..=max_len).prop_flat_map(move |(n, m, k)| {
        (
            prop::collection::vec(-scale..scale, 3 * n),
            prop::collection::vec(-scale..scale, 9 * m),
            prop::collection::vec(-scale..scale, 3 * k),
        )
            .prop_map(|(p, a, v)| episode(p, a, v))
    })
}

fn summed_oracle(a: &EpisodeSeries<f64>, b: &EpisodeSeries<f64>) -> f64 {
    a.channels
        .iter()
        .zip(&b.channels)
        .map(|(x, y)| dtw_distance(x, y).unwrap())
        .sum()
}

#[test]
fn replayed_episode_is_not_novel() {
    let e = episode(vec![0.1, 0.2, 0.3, 0.5, 0.5, 0.5], vec![1.0; 9], vec![0.0, 1.0, 0.0]);
    let mut mem = EpisodeMemory::new(8);
    mem.record_episode(e.clone());
    assert_eq!(curiosity_reward(&e, &mem, 5.0), 0.0);
}

#[test]
fn ln2_gives_one_half() {
    let ln2 = std::f64::consts::LN_2;
    let base = episode(vec![0.0; 3], vec![0.0; 9], vec![0.0; 3]);
    let shifted = episode(vec![ln2, 0.0, 0.0], vec![0.0; 9], vec![0.0; 3]);
    let mut mem = EpisodeMemory::new(4);
    mem.record_episode(base);
    let r = curiosity_reward(&shifted, &mem, 5.0);
    assert!((r - 0.5).abs() <= 1e-12, "{r}");
}

#[test]
fn empty_memory_uses_cap() {
    let e = episode(vec![0.0; 3], vec![0.0; 9], vec![0.0; 3]);
    let mem = EpisodeMemory::new(4);
    let r = curiosity_reward(&e, &mem, 5.0);
    assert!((r - (1.0 - (-5.0f64).exp())).abs() < 1e-15);
    assert!((r - 0.993).abs() < 1e-3);
}

#[test]
fn two_episode_memory_matches_oracle_composition() {
    let m1 = episode(vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0], vec![0.0; 9], vec![0.2, 0.0, 0.0]);
    let m2 = episode(vec![0.3, 0.1, 0.0], vec![0.05; 9], vec![0.0, 0.1, 0.0, 0.0, 0.2, 0.0]);
    let cur = episode(vec![0.2, 0.1, 0.0, 0.25, 0.1, 0.0], vec![0.02; 9], vec![0.0, 0.15, 0.0]);
    let mut mem = EpisodeMemory::new(4);
    mem.record_episode(m1.clone());
    mem.record_episode(m2.clone());
    let d = summed_oracle(&cur, &m1).min(summed_oracle(&cur, &m2));
    let expected = 1.0 - (-d).exp();
    assert!((curiosity_reward(&cur, &mem, 5.0) - expected).abs() <= 1e-12);
}

#[test]
fn fifo_eviction() {
    let mk = |x: f64| episode(vec![x, 0.0, 0.0], vec![0.0; 9], vec![0.0; 3]);
    let mut mem = EpisodeMemory::new(3);
    for i in 0..4 {
        mem.record_episode(mk(i as f64));
    }
    assert_eq!(mem.len(), 3);
    assert!(mem.iter().all(|e| e != &mk(0.0)));
    assert!(curiosity_reward(&mk(0.0), &mem, 5.0) > 0.0);
    assert_eq!(curiosity_reward(&mk(3.0), &mem, 5.0), 0.0);
}

#[test]
fn bounded_over_ten_thousand_cases() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let gen = |rng: &mut rand_chacha::ChaCha8Rng| {
        let n = rng.random_range(1..5);
        let scale = 10f64.powf(rng.random_range(-3.0..1.5));
        let mut v = |k: usize| (0..k * n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<_>>();
        episode(v(3), v(9), v(3))
    };
    for case in 0..10_000 {
        let mut mem = EpisodeMemory::new(4);
        for _ in 0..rng.random_range(0..3) {
            mem.record_episode(gen(&mut rng));
        }
        let r = curiosity_reward(&gen(&mut rng), &mem, 5.0);
        assert!((0.0..1.0).contains(&r), "case {case}: {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn superset_memory_never_increases_reward(
        cur in arb_episode(5, 1.0),
        base in prop::collection::vec(arb_episode(5, 1.0), 1..4),
        extra in prop::collection::vec(arb_episode(5, 1.0), 1..3),
    ) {
        let mut small = EpisodeMemory::new(16);
        let mut big = EpisodeMemory::new(16);
        for e in &base {
            small.record_episode(e.clone());
            big.record_episode(e.clone());
        }
        for e in extra {
            big.record_episode(e);
        }
        prop_assert!(curiosity_reward(&cur, &big, 5.0) <= curiosity_reward(&cur, &small, 5.0));
    }

    #[test]
    fn pruned_minimum_equals_full_minimum(
        cur in arb_episode(6, 2.0),
        mem_eps in prop::collection::vec(arb_episode(6, 2.0), 1..6),
    ) {
        let mut mem = EpisodeMemory::new(16);
        for e in &mem_eps {
            mem.record_episode(e.clone());
        }
        let full = mem_eps.iter().map(|e| summed_oracle(&cur, e)).fold(f64::INFINITY, f64::min);
        let got = mem.min_distance(&cur).unwrap();
        prop_assert!((got - full).abs() <= 1e-12 * (1.0 + full));
    }

    #[test]
    fn strictly_increasing_in_distance(d1 in 0.0f64..30.0, gap in 1e-3f64..5.0) {
        let mk = |d: f64| episode(vec![d, 0.0, 0.0], vec![0.0; 9], vec![0.0; 3]);
        let mut mem = EpisodeMemory::new(2);
        mem.record_episode(mk(0.0));
        let r1 = curiosity_reward(&mk(d1), &mem, 5.0);
        let r2 = curiosity_reward(&mk(d1 + gap), &mem, 5.0);
        prop_assert!(r2 > r1 || (r1 == r2 && r1 > 1.0 - 1e-12));
    }
}
