use num_bigint::BigUint;
use num_traits::{One, Zero};
use proptest::prelude::*;
use topocdc::bounds::{d_star, l_star, uncoded_load, ConvexEnvelope};
use topocdc::exact::{from_biguint, int, ratio, Rational};
use topocdc::experiment::{run_single, run_sweep, theory_curve, ExperimentConfig, Sizing, TopologyKind};
use topocdc::job::{assign_reducers, map_phase, needed_values, place_files, JobSpec};
use topocdc::routing::{shuffle_fat_tree, shuffle_star};
use topocdc::shuffle::{build_messages, decode, useful_set};
use topocdc::subset::{binomial_u64, ServerSet};
use topocdc::topology::{build_fat_tree, build_star, choose_arity, place_servers};
use topocdc::Error;

fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * i)
}

/// n! / (k! (n-k)!), zero outside 0 <= k <= n.
fn choose(n: i64, k: i64) -> BigUint {
    if n < 0 || k < 0 || k > n {
        return BigUint::zero();
    }
    factorial(n as u64) / (factorial(k as u64) * factorial((n - k) as u64))
}

/// The communication load summed term by term from factorials.
fn l_star_oracle(k: i64, r: i64, s: i64) -> Rational {
    let mut num = BigUint::zero();
    for t in (r + 1).max(s)..=(r + s).min(k) {
        num += BigUint::from(t as u64) * choose(k, t) * choose(t - 2, r - 1) * choose(r, t - s);
    }
    let den = BigUint::from(r as u64) * choose(k, r) * choose(k, s);
    from_biguint(num) / from_biguint(den)
}

fn config(servers: usize, topology: TopologyKind, value_bits: usize) -> ExperimentConfig {
    ExperimentConfig {
        servers,
        loads: Vec::new(),
        reducers: 1,
        files: Sizing::default(),
        functions: Sizing::default(),
        value_bits,
        topology,
        seed: 11,
    }
}

#[test]
fn l_star_matches_factorial_oracle() {
    for k in 1..=20usize {
        for s in 1..=k {
            for r in 1..=k {
                assert_eq!(l_star(k, r, s).unwrap(), l_star_oracle(k as i64, r as i64, s as i64), "K={k} r={r} s={s}");
            }
        }
    }
}

#[test]
fn known_cascaded_points() {
    // K=3, s=2, r=1: every value is needed at two servers, none shared.
    assert_eq!(l_star(3, 1, 2).unwrap(), int(1));
    assert_eq!(uncoded_load(3, 1, 2).unwrap(), ratio(4, 3));
    assert_eq!(d_star(3, 1, 2).unwrap(), ratio(1, 3) + ratio(2, 3) * ratio(2, 3));
}

#[test]
fn star_and_fat_tree_agree_on_full_occupancy() {
    for r in [1, 2, 3, 4] {
        let star = run_single(&config(16, TopologyKind::Star, 64), r, 0).unwrap();
        let tree = run_single(&config(16, TopologyKind::FatTree, 64), r, 0).unwrap();
        assert_eq!(star.d_excluding_padding, tree.d_excluding_padding, "r={r}");
        assert_eq!(star.loads.server_uplink, tree.loads.server_uplink);
        assert!(star.pass && tree.pass);
    }
}

#[test]
fn odd_load_on_fat_tree_pads_to_the_split_grid() {
    let row = run_single(&config(16, TopologyKind::FatTree, 64), 3, 0).unwrap();
    // 64 bits in 3 segments of 22, rounded to 24 for four-way splitting.
    assert!(!row.loads.padding_bits.is_zero());
    assert_eq!(row.d_excluding_padding, d_star(16, 3, 1).unwrap());
    assert_eq!(row.d_measured, d_star(16, 3, 1).unwrap() * ratio(72, 64));
    assert!(row.pass, "{:?}", row.checks);
}

#[test]
fn partial_occupancy_fat_tree() {
    // t = 4 holds 16 servers; K = 10 leaves slots empty.
    let row = run_single(&config(10, TopologyKind::FatTree, 32), 2, 0).unwrap();
    assert_eq!(row.t, Some(4));
    assert!(!row.full_occupancy);
    assert!(row.check("optimality").is_none());
    assert!(row.check("layer ordering").is_none());
    assert!(row.pass, "{:?}", row.checks);
}

#[test]
fn larger_fat_tree() {
    // K = 17 needs t = 6.
    assert_eq!(choose_arity(17), 6);
    let row = run_single(&config(17, TopologyKind::FatTree, 36), 1, 0).unwrap();
    assert_eq!(row.t, Some(6));
    assert!(row.pass, "{:?}", row.checks);
}

#[test]
fn multiplied_sizes() {
    let mut cfg = config(6, TopologyKind::Star, 16);
    cfg.files = Sizing::Auto { multiplier: 2 };
    cfg.functions = Sizing::Fixed(12);
    let row = run_single(&cfg, 2, 0).unwrap();
    assert_eq!((row.files, row.functions), (30, 12));
    assert_eq!(row.d_measured, d_star(6, 2, 1).unwrap());
    assert!(row.pass);
}

#[test]
fn invalid_jobs_are_rejected() {
    let mut cfg = config(4, TopologyKind::Star, 8);
    cfg.files = Sizing::Fixed(5);
    let err = run_single(&cfg, 2, 0).unwrap_err();
    let Error::Run { source, .. } = err else { panic!("expected run context") };
    assert!(matches!(*source, Error::Divisibility(_)), "{source}");
    assert!(run_single(&config(4, TopologyKind::Star, 8), 5, 0).is_err());
    assert!(run_single(&config(4, TopologyKind::Star, 8), 0, 0).is_err());
}

#[test]
fn sweep_keeps_order_and_adds_theory() {
    let mut cfg = config(8, TopologyKind::Star, 16);
    cfg.loads = vec![4, 1, 8, 2];
    let report = run_sweep(&cfg).unwrap();
    let loads: Vec<usize> = report.rows.iter().map(|r| r.r).collect();
    assert_eq!(loads, [4, 1, 8, 2]);
    let ids: Vec<usize> = report.rows.iter().map(|r| r.run_id).collect();
    assert_eq!(ids, [0, 1, 2, 3]);
    let theory = report.theory.unwrap();
    assert_eq!(theory.points.len(), 8);
    assert!(theory.envelope_tight);
    assert!(report.rows.iter().all(|r| r.pass));
}

#[test]
fn envelope_between_integer_points() {
    let theory = theory_curve(16, 1).unwrap();
    let sample = |label: &str| theory.envelope.iter().find(|s| s.r == label).unwrap().max_link.clone();
    let chord = (d_star(16, 1, 1).unwrap() + d_star(16, 2, 1).unwrap()) / int(2);
    assert!(sample("1.5") <= chord);
    assert_eq!(sample("2.0"), d_star(16, 2, 1).unwrap());
    let env = ConvexEnvelope::new(vec![(int(1), int(4)), (int(2), int(3)), (int(3), int(0))]);
    assert!(!env.is_tight());
    assert_eq!(env.eval(&int(2)), Some(ratio(2, 1)));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn placement_stores_r_copies((k, r) in (2usize..=10).prop_flat_map(|k| (Just(k), 1..=k)), m in 1usize..=2) {
        let n = binomial_u64(k as u64, r as u64).unwrap() as usize * m;
        let job = JobSpec::new(k, r, 1, n, k, 4).unwrap();
        let placement = place_files(&job);
        prop_assert_eq!(placement.total_stored(), r * n);
        for file in 0..n {
            prop_assert_eq!(placement.owners(file).len(), r);
        }
        let per_server: Vec<usize> = (0..k).map(|s| placement.files_of(s).len()).collect();
        prop_assert!(per_server.iter().all(|&c| c * k == r * n));
    }

    #[test]
    fn coding_gain_is_r(k in 2usize..=32, r_seed in 0usize..1000) {
        let r = 1 + r_seed % (k - 1);
        let gain = uncoded_load(k, r, 1).unwrap() / l_star(k, r, 1).unwrap();
        prop_assert_eq!(gain, int(r as u64));
    }

    #[test]
    fn d_star_is_non_increasing(k in 2usize..=24, s_seed in 0usize..100) {
        let s = 1 + s_seed % k;
        for r in 1..k {
            prop_assert!(d_star(k, r + 1, s).unwrap() <= d_star(k, r, s).unwrap());
        }
        prop_assert!(l_star(k, k, s).unwrap().is_zero());
    }

    #[test]
    fn star_runs_are_optimal_and_decodable(
        (k, r) in (2usize..=7).prop_flat_map(|k| (Just(k), 1..=k)),
        t in 1usize..=24,
        seed in any::<u64>(),
    ) {
        let mut cfg = config(k, TopologyKind::Star, t);
        cfg.seed = seed;
        let row = run_single(&cfg, r, 0).unwrap();
        prop_assert_eq!(&row.d_excluding_padding, &row.d_star);
        prop_assert!(row.pass, "{:?}", row.checks);
        prop_assert_eq!(row.decoded_servers, k);
    }

    #[test]
    fn fat_tree_runs_respect_every_bound(
        (k, r) in (2usize..=16).prop_flat_map(|k| (Just(k), 1..=k.min(3))),
        t in 1usize..=16,
    ) {
        let row = run_single(&config(k, TopologyKind::FatTree, t), r, 0).unwrap();
        prop_assert!(row.link_bounds.iter().all(|b| b.pass), "{:?}", row.link_bounds);
        prop_assert!(row.pass, "{:?}", row.checks);
        prop_assert_eq!(row.loads.server_uplink, l_star(k, r, 1).unwrap());
    }

    #[test]
    fn corrupted_payload_is_rejected(bit_seed in any::<usize>(), msg_seed in any::<usize>(), server_seed in 0usize..6) {
        let job = JobSpec::new(6, 2, 1, 15, 6, 10).unwrap();
        let placement = place_files(&job);
        let assignment = assign_reducers(&job);
        let store = map_phase(&job, &placement, 3);
        let set = build_messages(&job, &placement, &assignment, &store, 1).unwrap();
        let mut useful = useful_set(&set.messages, server_seed);
        let count = useful.messages.len();
        let msg = &mut useful.messages[msg_seed % count];
        let bit = bit_seed % msg.payload.len();
        let flipped = !msg.payload[bit];
        msg.payload.set(bit, flipped);
        let result = decode(&job, &placement, &assignment, &store, &set.layout, server_seed, &useful);
        let rejected = matches!(result, Err(Error::DecodeFailure { .. }));
        prop_assert!(rejected, "flip of bit {} went unnoticed", bit);
    }
}

#[test]
fn delivered_sets_match_needed_values() {
    let job = JobSpec::new(8, 3, 1, 56, 8, 12).unwrap();
    let placement = place_files(&job);
    let assignment = assign_reducers(&job);
    let store = map_phase(&job, &placement, 9);
    for (granularity, fat) in [(1, false), (4, true)] {
        let set = build_messages(&job, &placement, &assignment, &store, granularity).unwrap();
        let out = if fat {
            let tree = build_fat_tree(4).unwrap();
            let map = place_servers(&tree, 8).unwrap();
            shuffle_fat_tree(&set.messages, &tree, &map).unwrap()
        } else {
            shuffle_star(&set.messages, &build_star(8)).unwrap()
        };
        for useful in &out.delivered {
            let recovered = decode(&job, &placement, &assignment, &store, &set.layout, useful.server, useful).unwrap();
            let needed = needed_values(&job, &placement, &assignment, useful.server);
            assert_eq!(recovered.keys().copied().collect::<Vec<_>>(), needed);
            for id in &needed {
                assert!(!placement.owners(id.file).contains(useful.server));
                assert!(assignment.reducers(id.function) == ServerSet::singleton(useful.server));
            }
        }
    }
}
