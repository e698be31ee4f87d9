//! Randomized invariants across modules.

use std::collections::BTreeMap;

use plasticity::clustering::{
    quantize_all, registry_from_grid, Assignment, BatteryParams, ClusterKind, ClusterRegistry,
    ClusterSpec, NidParams, QuantizationGrid,
};
use plasticity::dynamics::{
    feasible_move_targets, forced_moves, load_from_moves, load_via_lemma, step_state, steps_to_target, BatteryMove, ClusterMoves,
    ClusterState, LemmaTrace, MovePlan,
};
use plasticity::population::{
    build_arrival_series, generate_population, ArrivalStatistics, Categorical, Category, CellKey,
};
use plasticity::privacy::{mi_upper_bound, poisson_entropy, ArrivalProbabilityModel};
use plasticity::protocol::{collector_step, read_uplink, write_uplink, UplinkBatch};
use plasticity::scheduler::{settlement_cost, Market, MarketPrices};
use proptest::prelude::*;

fn cat(values: &[f64], weights: &[f64]) -> Categorical {
    Categorical {
        values: values.to_vec(),
        weights: weights.to_vec(),
    }
}

fn battery_stats(category: Category, lambda: f64) -> ArrivalStatistics {
    ArrivalStatistics {
        category,
        intensity: vec![lambda; 24],
        energy: cat(&[0.7, 1.5, 2.2, 3.9], &[0.25, 0.25, 0.25, 0.25]),
        laxity: cat(&[0.5, 2.0, 3.5, 6.0], &[0.2, 0.3, 0.3, 0.2]),
        initial_charge: cat(&[0.0, 0.3], &[0.5, 0.5]),
        target_fraction: cat(&[0.5, 1.0], &[0.5, 0.5]),
        max_rate: cat(&[1.0, 2.0], &[0.5, 0.5]),
        profiles: Vec::new(),
        pulse_rate: None,
    }
}

fn mixed_grid() -> QuantizationGrid {
    QuantizationGrid {
        energy_step: 1.0,
        energy_levels: 4,
        laxity_step: 2,
        laxity_levels: 3,
        rate_levels: vec![1, 2],
        rho_levels: vec![0.5, 1.0],
        nid_profiles: Vec::new(),
        nid_pulse_rate: Some(1.0),
    }
}

fn mixed_stats(lambda: f64) -> Vec<ArrivalStatistics> {
    let mut nid = battery_stats(Category::Nid, lambda);
    nid.energy = cat(&[1.0, 2.0, 3.0], &[0.3, 0.4, 0.3]);
    nid.laxity = cat(&[0.0, 2.0, 4.0], &[0.3, 0.4, 0.3]);
    nid.pulse_rate = Some(1.0);
    vec![
        battery_stats(Category::Canonical, lambda),
        battery_stats(Category::Ric, lambda),
        battery_stats(Category::Is, lambda),
        nid,
    ]
}

fn battery(category: Category, e: usize, g: usize, laxity: usize, rho: f64) -> ClusterSpec {
    ClusterSpec {
        category,
        index: 0,
        energy_step: 1.0,
        kind: ClusterKind::Battery(BatteryParams {
            capacity: e,
            laxity,
            target_fraction: rho,
            rate: g,
            rate_table: None,
        }),
    }
}

/// A battery cluster driven by forced moves plus seeded random extra moves.
struct Trace {
    states: Vec<ClusterState>,
    loads: Vec<i64>,
}

fn battery_trace(category: Category, e: usize, g: usize, laxity: usize, horizon: usize, seed: u64) -> Trace {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let spec = battery(category, e, g, laxity, 1.0);
    let reg = ClusterRegistry::from_specs(vec![spec.clone()]).unwrap();
    let arrivals: Vec<Vec<u64>> = (0..=horizon)
        .map(|t| {
            let mut a = vec![0; e + 1];
            let room = laxity.min(horizon.saturating_sub(t));
            if t < horizon {
                for x in 0..=e {
                    if rng.random_bool(0.3) && steps_to_target(&spec, x).unwrap() <= room && (room > 0 || x == e) {
                        a[x] += rng.random_range(1..=3);
                    }
                }
            }
            a
        })
        .collect();
    let mut state = ClusterState::new(&spec, 0, &arrivals[0]).unwrap();
    let mut out = Trace { states: vec![state.clone()], loads: Vec::new() };
    for t in 0..horizon {
        let ClusterMoves::Battery(mut moves) = forced_moves(&state, &spec, Some(horizon)).unwrap() else {
            unreachable!()
        };
        for (&c, members) in &state.as_battery().unwrap().cohorts {
            let after = (c + laxity).min(horizon).saturating_sub(t + 1);
            for (x, &k) in members.iter().enumerate() {
                let used: u64 = moves.iter().filter(|m| m.cohort == c && m.from == x).map(|m| m.count).sum();
                let targets: Vec<usize> = feasible_move_targets(&spec, x)
                    .unwrap()
                    .into_iter()
                    .filter(|&y| steps_to_target(&spec, y).unwrap() <= after)
                    .collect();
                if k > used && !targets.is_empty() && rng.random_bool(0.5) {
                    let to = targets[rng.random_range(0..targets.len())];
                    moves.push(BatteryMove { cohort: c, from: x, to, count: rng.random_range(1..=k - used) });
                }
            }
        }
        let plan: MovePlan = BTreeMap::from([((category, 0), ClusterMoves::Battery(moves.clone()))]);
        out.loads.push(load_from_moves(&plan, &reg) as i64);
        state = step_state(&state, &spec, &ClusterMoves::Battery(moves), &arrivals[t + 1]).unwrap();
        out.states.push(state.clone());
    }
    out
}

fn battery_category() -> impl Strategy<Value = Category> {
    prop_oneof![Just(Category::Canonical), Just(Category::Ric), Just(Category::Is)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_is_conserved(
        category in battery_category(), e in 1usize..=5, g in 1usize..=3, laxity in 0usize..=8,
        horizon in 1usize..=30, seed in any::<u64>(),
    ) {
        let tr = battery_trace(category, e, g.min(e), laxity, horizon, seed);
        for s in &tr.states {
            let b = s.as_battery().unwrap();
            let held: u64 = b.occupancy().iter().sum::<u64>() + b.retired.iter().sum::<u64>();
            prop_assert_eq!(held, b.arrived.iter().sum::<u64>());
        }
    }

    #[test]
    fn lemma_matches_moves(
        category in battery_category(), e in 1usize..=5, g in 1usize..=3, laxity in 0usize..=8,
        horizon in 1usize..=30, seed in any::<u64>(),
    ) {
        let tr = battery_trace(category, e, g.min(e), laxity, horizon, seed);
        let mut lemma = LemmaTrace::default();
        tr.states.iter().for_each(|s| lemma.record(s));
        for t in 0..horizon {
            prop_assert_eq!(load_via_lemma(&lemma.n, &lemma.a, t).unwrap(), tr.loads[t]);
        }
    }

    #[test]
    fn cumulative_processes_never_decrease(
        category in battery_category(), e in 1usize..=5, g in 1usize..=3, laxity in 0usize..=8,
        horizon in 1usize..=30, seed in any::<u64>(),
    ) {
        let tr = battery_trace(category, e, g.min(e), laxity, horizon, seed);
        for w in tr.states.windows(2) {
            let (a, b) = (w[0].as_battery().unwrap(), w[1].as_battery().unwrap());
            prop_assert!(a.arrived.iter().zip(&b.arrived).all(|(x, y)| x <= y));
            for (k, v) in &a.switches {
                prop_assert!(b.switches.get(k).copied().unwrap_or(0) >= *v);
            }
        }
    }

    #[test]
    fn nid_staircase(
        arrivals in proptest::collection::vec(0u64..4, 1..25), chi in 0usize..5,
        picks in proptest::collection::vec(0.0f64..=1.0, 25),
    ) {
        let horizon = arrivals.len();
        let spec = ClusterSpec {
            category: Category::Nid,
            index: 0,
            energy_step: 1.0,
            kind: ClusterKind::Nid(NidParams { profile: vec![1.0, 1.0], max_delay: chi }),
        };
        let mut s = ClusterState::new(&spec, 0, &arrivals[..1]).unwrap();
        let mut prev = 0;
        for t in 0..horizon {
            let ClusterMoves::Nid(forced) = forced_moves(&s, &spec, Some(horizon)).unwrap() else { unreachable!() };
            let pending = s.as_nid().unwrap().pending();
            let k = forced + ((pending - forced) as f64 * picks[t]).floor() as u64;
            let next: Vec<u64> = arrivals.get(t + 1).map_or(vec![0], |&a| vec![a]);
            s = step_state(&s, &spec, &ClusterMoves::Nid(k), &next).unwrap();
            let n = s.as_nid().unwrap();
            let a_t: u64 = arrivals[..=t].iter().sum();
            prop_assert!(prev <= n.activated && n.activated <= a_t);
            prev = n.activated;
        }
        prop_assert_eq!(s.as_nid().unwrap().pending(), 0);
    }

    #[test]
    fn arrival_series_counts_requests(seed in any::<u64>(), lambda in 0.1f64..2.0) {
        let grid = mixed_grid();
        let stats = mixed_stats(lambda);
        let reg = registry_from_grid(&grid, &Category::ALL).unwrap();
        let reqs = generate_population(&stats, 24, seed).unwrap();
        prop_assert_eq!(&reqs, &generate_population(&stats, 24, seed).unwrap());
        let assigned = quantize_all(&reqs, &reg, &grid).unwrap();
        prop_assert_eq!(assigned.len(), reqs.len());
        let series = build_arrival_series(&assigned, &reg, 24).unwrap();
        for t in 0..24 {
            let by_time = reqs.iter().filter(|r| r.arrival <= t).count() as u64;
            prop_assert_eq!(series.total_through(t), by_time);
            if t > 0 {
                prop_assert!(series.total_through(t) >= series.total_through(t - 1));
            }
        }
    }

    #[test]
    fn quantization_is_conservative(seed in any::<u64>()) {
        let grid = mixed_grid();
        let reg = registry_from_grid(&grid, &Category::ALL).unwrap();
        let reqs = generate_population(&mixed_stats(0.8), 24, seed).unwrap();
        let assigned = quantize_all(&reqs, &reg, &grid).unwrap();
        prop_assert_eq!(&assigned, &quantize_all(&reqs, &reg, &grid).unwrap());
        for (r, a) in reqs.iter().zip(&assigned) {
            let spec = reg.get(a.category, a.cluster).unwrap();
            let Some(b) = spec.battery() else { continue };
            prop_assert!(b.capacity as f64 * grid.energy_step >= r.energy - 1e-9);
            // Laxity only grows past the request's own when the rounded-up
            // energy could not be delivered one level lower.
            if b.laxity as f64 > r.laxity() + 1e-9 {
                let need = steps_to_target(spec, a.state).unwrap();
                prop_assert!(b.laxity < grid.laxity_step || b.laxity - grid.laxity_step < need);
            }
        }
    }

    #[test]
    fn collector_merge_is_order_free(
        cells in proptest::collection::vec((0usize..3, 0usize..4), 0..40),
        split in proptest::collection::vec(0usize..3, 40),
    ) {
        let assigned: Vec<Assignment> = cells
            .iter()
            .enumerate()
            .map(|(i, &(q, x))| Assignment { request: i as u64, category: Category::Ric, cluster: q, state: x, arrival: 5 })
            .collect();
        let parts: Vec<UplinkBatch> = (0..3)
            .map(|p| {
                let mine: Vec<Assignment> =
                    assigned.iter().enumerate().filter(|(i, _)| split[*i] == p).map(|(_, a)| *a).collect();
                collector_step(5, &mine)
            })
            .collect();
        let whole = collector_step(5, &assigned);
        let ab_c = parts[0].merge(&parts[1]).merge(&parts[2]);
        let c_ba = parts[2].merge(&parts[1].merge(&parts[0]));
        prop_assert_eq!(&ab_c, &whole);
        prop_assert_eq!(&c_ba, &whole);
        let mut buf = Vec::new();
        write_uplink(&whole, &mut buf).unwrap();
        prop_assert_eq!(read_uplink(buf.as_slice()).unwrap(), whole.records);
    }

    #[test]
    fn adding_an_appliance_never_lowers_the_bound(
        eps in proptest::collection::vec(0.0f64..=1.0, 1..10), extra in 1e-6f64..=1.0, cell in 0usize..3,
    ) {
        let key = |c: usize| CellKey { category: Category::Is, cluster: c, state: 0 };
        let mut m = ArrivalProbabilityModel::default();
        for (i, e) in eps.iter().enumerate() {
            m.cells.entry(key(i % 3)).or_default().push(*e);
        }
        let before = mi_upper_bound(&m).unwrap();
        prop_assert!(before >= 0.0);
        m.cells.entry(key(cell)).or_default().push(extra);
        prop_assert!(mi_upper_bound(&m).unwrap() >= before - 1e-12);
    }

    #[test]
    fn settlement_adds_up(
        rows in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0, 0.0f64..5.0), 1..30),
    ) {
        let h = rows.len();
        let load: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let bid: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let forward: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let prices = MarketPrices {
            up: forward.iter().map(|p| 2.0 * p).collect(),
            down: forward.iter().map(|p| 0.5 * p).collect(),
            forward,
        };
        let s = settlement_cost(&load, &bid, &prices, Market::new(h, 1).unwrap()).unwrap();
        prop_assert!((s.total - (s.forward + s.deviation)).abs() <= 1e-9);
        let sum: f64 = s.rows.iter().map(|r| r.cost).sum();
        prop_assert!((sum - s.total).abs() <= 1e-9 * (1.0 + s.total.abs()));
        for r in &s.rows {
            prop_assert!(r.dev_plus >= 0.0 && r.dev_minus >= 0.0);
            prop_assert!((r.load - r.bid - (r.dev_plus - r.dev_minus)).abs() <= 1e-12 * (1.0 + r.load));
        }
    }
}

#[test]
fn entropy_is_increasing_on_a_grid() {
    let mut prev = 0.0;
    for i in 1..=100 {
        let h = poisson_entropy(i as f64 * 0.1).unwrap();
        assert!(h > prev);
        prev = h;
    }
}
