use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rewardgrid::online_opt::{
    observe_adversaries, online_loop, propagate_risk, solve_plan, OnlineParams, RiskMap, TransitionModel,
};
use rewardgrid::oracles::{enumerate_best_route, matrix_power_distribution, random_plan_instance};
use rewardgrid::{GameConfig, Movement};

fn movement() -> impl Strategy<Value = Movement> {
    prop_oneof![
        Just(Movement::Clockwise),
        Just(Movement::Counterclockwise),
        Just(Movement::Random)
    ]
}

fn model_from_walk(steps: &[(usize, usize)], cfg: &GameConfig) -> TransitionModel {
    let adv = &cfg.adversaries[0];
    let mut m = TransitionModel::for_adversary(adv);
    for &(from, choice) in steps {
        let from = from % 8;
        let [next, prev] = adv.ring_neighbors(from);
        let to = [from, next, prev][choice % 3];
        m.update_index(from, to).unwrap();
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solver_matches_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_plan_instance(&mut rng);
        let solved = solve_plan(&inst.config, &inst.state, &inst.risk, inst.phi, inst.horizon).ok();
        let brute = enumerate_best_route(&inst.config, &inst.state, &inst.risk, inst.phi, inst.horizon);
        match (solved, brute) {
            (Some((plan, _)), Some((best, _))) => {
                prop_assert_eq!(plan.objective, best);
                prop_assert_eq!(plan.check(&inst.config, &inst.state, inst.horizon), Ok(()));
                let again = plan.evaluate(&inst.config, &inst.state, &inst.risk, inst.phi);
                prop_assert!((again - plan.objective).abs() <= 1e-9 * plan.objective.abs().max(1.0));
            }
            (None, None) => {}
            (s, b) => prop_assert!(false, "solver {:?} vs enumeration {:?}", s.map(|p| p.0.objective), b.map(|b| b.0)),
        }
    }

    #[test]
    fn route_risk_does_not_grow_with_phi(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_plan_instance(&mut rng);
        let mut last: Option<f64> = None;
        for phi in [0.0, 0.5, 2.0, 10.0, 100.0, 1000.0] {
            let Ok((plan, _)) = solve_plan(&inst.config, &inst.state, &inst.risk, phi, inst.horizon) else {
                return Ok(());
            };
            let r = plan.total_risk(&inst.config, &inst.risk);
            if let Some(prev) = last {
                prop_assert!(r <= prev + 1e-9, "phi {}: {} > {}", phi, r, prev);
            }
            last = Some(r);
        }
    }

    #[test]
    fn estimated_rows_are_stochastic_with_local_support(
        steps in prop::collection::vec((0usize..8, 0usize..3), 0..200),
    ) {
        let cfg = GameConfig::five_by_five(Movement::Random);
        let m = model_from_walk(&steps, &cfg);
        let adv = &cfg.adversaries[0];
        for (i, row) in m.matrix().iter().enumerate() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let [next, prev] = adv.ring_neighbors(i);
            for (j, &p) in row.iter().enumerate() {
                prop_assert!(p >= 0.0);
                if j != i && j != next && j != prev {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn risk_is_normalised_and_confined_to_rings(
        mv in movement(),
        big in any::<bool>(),
        seed in any::<u64>(),
        n_obs in 0usize..40,
        horizon in 0usize..30,
    ) {
        let cfg = if big { GameConfig::nine_by_nine(mv) } else { GameConfig::five_by_five(mv) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start: Vec<usize> = cfg.adversaries.iter().map(|a| a.start_index).collect();
        let (models, pos) = observe_adversaries(&cfg, &start, n_obs, &mut rng).unwrap();
        let risk = propagate_risk(&cfg, &models, &pos, 3, 3 + horizon).unwrap();
        let on_ring: Vec<bool> = (0..cfg.n_cells())
            .map(|i| cfg.adversaries.iter().any(|a| a.index_of(cfg.cell_at(i)).is_some()))
            .collect();
        for t in 3..=3 + horizon {
            for a in 0..risk.n_adversaries() {
                let d = risk.adversary_distribution(a, t).unwrap();
                prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            for (i, &ring) in on_ring.iter().enumerate() {
                let p = risk.get(i, t);
                prop_assert!((0.0..=1.0).contains(&p));
                if !ring {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn risk_matches_matrix_powers(
        steps in prop::collection::vec((0usize..8, 0usize..3), 0..100),
        start in 0usize..8,
    ) {
        let cfg = GameConfig::five_by_five(Movement::Random);
        let m = model_from_walk(&steps, &cfg);
        let risk = propagate_risk(&cfg, std::slice::from_ref(&m), &[start], 0, 10).unwrap();
        for k in 0..=10 {
            let expected = matrix_power_distribution(m.matrix(), start, k);
            let got = risk.adversary_distribution(0, k).unwrap();
            for (a, b) in expected.iter().zip(got) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn every_online_plan_is_feasible() {
    for mv in [Movement::Clockwise, Movement::Random] {
        let cfg = GameConfig::five_by_five(mv);
        let params = OnlineParams::default();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start: Vec<usize> = cfg.adversaries.iter().map(|a| a.start_index).collect();
            let (models, pos) = observe_adversaries(&cfg, &start, params.n_obs, &mut rng).unwrap();
            let mut state = cfg.new_game().unwrap();
            state.adversaries = pos.clone();
            let horizon = params.lookahead_for(&cfg);
            let risk = propagate_risk(&cfg, &models, &pos, 0, horizon).unwrap();
            let (plan, _) = solve_plan(&cfg, &state, &risk, params.phi, horizon).unwrap();
            assert_eq!(plan.check(&cfg, &state, horizon), Ok(()));
            let ep = online_loop(&cfg, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(ep.path.len() == ep.steps + 1);
        }
    }
}

#[test]
fn zero_horizon_risk_is_current_position() {
    let cfg = GameConfig::nine_by_nine(Movement::Counterclockwise);
    let models: Vec<_> = cfg.adversaries.iter().map(TransitionModel::for_adversary).collect();
    let risk = propagate_risk(&cfg, &models, &[2, 5], 7, 7).unwrap();
    assert_eq!(risk.get(cfg.cell_index(cfg.adversaries[0].cell(2)), 7), 1.0);
    assert_eq!(risk.get(cfg.cell_index(cfg.adversaries[1].cell(5)), 7), 1.0);
    let total: f64 = (0..cfg.n_cells()).map(|i| risk.get(i, 7)).sum();
    assert_eq!(total, 2.0);
    assert_eq!(RiskMap::zero(&cfg, 0, 4).get(0, 2), 0.0);
}
