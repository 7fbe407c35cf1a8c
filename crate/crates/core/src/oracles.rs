//! Slow, independent reference computations used to check the fast code
//! paths: finite-difference gradients, exhaustive route enumeration and
//! matrix-power risk propagation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::grid_env::{Cell, GameConfig, GameState};
use crate::neural::{backprop, Mlp};
use crate::online_opt::{solve_plan, RiskMap};

/// Comparison of analytic and central-difference gradients for one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub n_params: usize,
    pub max_rel_err: f64,
    pub worst_param: usize,
}

fn loss(net: &Mlp, input: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let out = net.forward(input)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..out.len() {
        if mask[i] {
            let d = out[i] - target[i];
            sum += d * d;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Central differences with step `h`. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(net: &Mlp, input: &[f64], target: &[f64], mask: &[bool], h: f64) -> Result<GradCheck> {
    let (_, grads) = backprop(net, input, target, mask)?;
    let mut probe = net.clone();
    let mut max_rel_err = 0.0;
    let mut worst_param = 0;
    for k in 0..net.n_params() {
        let orig = *probe.params().nth(k).expect("param index");
        let set = |m: &mut Mlp, v: f64| *m.params_mut().nth(k).expect("param index") = v;
        set(&mut probe, orig + h);
        let up = loss(&probe, input, target, mask)?;
        set(&mut probe, orig - h);
        let down = loss(&probe, input, target, mask)?;
        set(&mut probe, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.0[k];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if err > max_rel_err {
            max_rel_err = err;
            worst_param = k;
        }
    }
    Ok(GradCheck {
        n_params: net.n_params(),
        max_rel_err,
        worst_param,
    })
}

/// Gradient checks on `count` random small networks with random inputs,
/// targets and masks.
pub fn random_gradient_checks<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<Vec<GradCheck>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(1..=6));
        }
        let slope = rng.gen_range(0.05..0.5);
        let net = Mlp::new(&sizes, slope, rng);
        let n_in = sizes[0];
        let n_out = *sizes.last().unwrap();
        let input: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut mask: Vec<bool> = (0..n_out).map(|_| rng.gen_bool(0.6)).collect();
        let i = rng.gen_range(0..n_out);
        mask[i] = true;
        out.push(gradient_check(&net, &input, &target, &mask, 1e-5)?);
    }
    Ok(out)
}

/// Distribution after `k` steps of the chain `matrix` started at `start`,
/// computed by forming the `k`-th matrix power.
pub fn matrix_power_distribution(matrix: &[Vec<f64>], start: usize, k: usize) -> Vec<f64> {
    let n = matrix.len();
    let mut power: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..k {
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for l in 0..n {
                for j in 0..n {
                    next[i][j] += power[i][l] * matrix[l][j];
                }
            }
        }
        power = next;
    }
    power.swap_remove(start)
}

/// Best route found by trying every simple path. Returns the objective and
/// the cells visited after the start, or `None` if no route is feasible.
pub fn enumerate_best_route(
    config: &GameConfig,
    state: &GameState,
    risk: &RiskMap,
    phi: f64,
    horizon: usize,
) -> Option<(f64, Vec<Cell>)> {
    struct Walk<'a> {
        config: &'a GameConfig,
        risk: &'a RiskMap,
        phi: f64,
        horizon: usize,
        path: Vec<Cell>,
        best: Option<(f64, Vec<Cell>)>,
    }

    impl Walk<'_> {
        fn cost_of_path(&self, start_mask: u32, t0: usize) -> f64 {
            let mut mask = start_mask;
            let mut total = 0.0;
            for (k, &c) in self.path.iter().enumerate() {
                let t = t0 + k + 1;
                let mut r = 0.0;
                if let Some(i) = self.config.rewards.iter().position(|&x| x == c) {
                    if mask & (1 << i) == 0 {
                        mask |= 1 << i;
                        r = self.config.reward_value as f64;
                    }
                }
                let p = self.risk.get(c.row * self.config.width + c.col, t);
                total += t as f64 - r + self.phi * p;
            }
            total
        }

        fn go(&mut self, from: Cell, start: Cell, start_mask: u32, t0: usize) {
            let t = t0 + self.path.len();
            if t >= self.horizon {
                return;
            }
            let moves = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
            for (dr, dc) in moves {
                let (r, c) = (from.row as i64 + dr, from.col as i64 + dc);
                if r < 0 || c < 0 || r >= self.config.height as i64 || c >= self.config.width as i64 {
                    continue;
                }
                let next = Cell::new(r as usize, c as usize);
                let exit = self.config.exit;
                if next != exit && (next == start || self.path.contains(&next)) {
                    continue;
                }
                self.path.push(next);
                if next == exit {
                    let all = self.config.rewards.iter().enumerate().all(|(i, rc)| {
                        start_mask & (1 << i) != 0 || self.path.contains(rc)
                    });
                    if all {
                        let cost = self.cost_of_path(start_mask, t0);
                        if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                            self.best = Some((cost, self.path.clone()));
                        }
                    }
                } else {
                    self.go(next, start, start_mask, t0);
                }
                self.path.pop();
            }
        }
    }

    let mut walk = Walk {
        config,
        risk,
        phi,
        horizon,
        path: Vec::new(),
        best: None,
    };
    let start = if state.agent == config.exit {
        // the exit may be re-entered at the end
        Cell::new(usize::MAX, usize::MAX)
    } else {
        state.agent
    };
    walk.go(state.agent, start, state.collected, state.steps);
    walk.best
}

/// A random small routing instance: 3x3 or 4x4 grid, at most one reward,
/// horizon at most 10 and a random risk map.
#[derive(Debug, Clone)]
pub struct PlanInstance {
    pub config: GameConfig,
    pub state: GameState,
    pub risk: RiskMap,
    pub phi: f64,
    pub horizon: usize,
}

pub fn random_plan_instance<R: Rng + ?Sized>(rng: &mut R) -> PlanInstance {
    let side = rng.gen_range(3..=4);
    let mut cells: Vec<Cell> = (0..side * side).map(|i| Cell::new(i / side, i % side)).collect();
    cells.shuffle(rng);
    let mut config = GameConfig::empty(side, side, cells[0], cells[1]);
    if rng.gen_bool(0.7) {
        config.add_reward(cells[2]);
    }
    let horizon = rng.gen_range(3..=10);
    let density = rng.gen_range(0.0..0.6);
    let rows = (0..=horizon)
        .map(|_| {
            (0..side * side)
                .map(|_| if rng.gen_bool(density) { rng.gen_range(0.0..1.0) } else { 0.0 })
                .collect()
        })
        .collect();
    let risk = RiskMap::from_rows(0, rows).expect("non-empty rows");
    let phi = [0.0, 1.0, 10.0, 1000.0][rng.gen_range(0..4)];
    let state = config.new_game().expect("valid random config");
    PlanInstance {
        config,
        state,
        risk,
        phi,
        horizon,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExactnessReport {
    pub instances: usize,
    pub feasible: usize,
    pub mismatches: usize,
}

impl ExactnessReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Solves `count` random instances with the branch-and-bound solver and by
/// enumeration. Any difference in objective (or in feasibility) is a mismatch.
pub fn solver_exactness<R: Rng + ?Sized>(count: usize, rng: &mut R) -> ExactnessReport {
    let mut report = ExactnessReport::default();
    for _ in 0..count {
        let inst = random_plan_instance(rng);
        report.instances += 1;
        let solved = solve_plan(&inst.config, &inst.state, &inst.risk, inst.phi, inst.horizon).ok();
        let brute = enumerate_best_route(&inst.config, &inst.state, &inst.risk, inst.phi, inst.horizon);
        match (solved, brute) {
            (Some((plan, _)), Some((best, _))) => {
                report.feasible += 1;
                if plan.objective != best {
                    report.mismatches += 1;
                }
            }
            (None, None) => {}
            _ => report.mismatches += 1,
        }
    }
    report
}
