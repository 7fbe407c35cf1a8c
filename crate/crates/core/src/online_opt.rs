//! Online planning against patrolling adversaries.
//!
//! The agent first watches the adversaries for a number of steps and
//! estimates a transition matrix per adversary. On every turn it propagates
//! the adversaries' positions forward, solves a time-expanded routing problem
//! exactly, executes the first move of the plan and re-plans.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_env::{Action, AdversarySpec, Cell, GameConfig, GameState, Status};

/// Empirical Markov chain over an adversary's patrol ring.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    cells: Vec<Cell>,
    counts: Vec<Vec<u64>>,
    matrix: Vec<Vec<f64>>,
}

impl TransitionModel {
    /// A model with no observations; every row is uniform over staying and
    /// the two ring neighbours.
    pub fn new(cells: Vec<Cell>) -> Self {
        let n = cells.len();
        let mut m = TransitionModel {
            cells,
            counts: vec![vec![0; n]; n],
            matrix: vec![vec![0.0; n]; n],
        };
        for i in 0..n {
            m.refresh_row(i);
        }
        m
    }

    pub fn for_adversary(adv: &AdversarySpec) -> Self {
        Self::new(adv.patrol_region.clone())
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Ring indices reachable from `i` in one move, including staying.
    fn reachable(&self, i: usize) -> [usize; 3] {
        let n = self.len();
        [(i + 1) % n, i, (i + n - 1) % n]
    }

    fn refresh_row(&mut self, i: usize) {
        let total = self.row_total(i);
        let row = &mut self.matrix[i];
        row.iter_mut().for_each(|p| *p = 0.0);
        if total == 0 {
            let n = self.cells.len();
            let targets = [(i + 1) % n, i, (i + n - 1) % n];
            for j in targets {
                row[j] = 1.0 / 3.0;
            }
        } else {
            for (p, &c) in row.iter_mut().zip(&self.counts[i]) {
                *p = c as f64 / total as f64;
            }
        }
    }

    /// Records one observed move between ring indices.
    pub fn update_index(&mut self, from: usize, to: usize) -> Result<()> {
        let n = self.len();
        if from >= n || to >= n || !self.reachable(from).contains(&to) {
            return Err(Error::Model(format!(
                "ring positions {from} -> {to} are not adjacent on a ring of {n}"
            )));
        }
        self.counts[from][to] += 1;
        self.refresh_row(from);
        Ok(())
    }

    /// Records one observed move between cells.
    pub fn update(&mut self, from: Cell, to: Cell) -> Result<()> {
        let idx = |c: Cell| {
            self.cells
                .iter()
                .position(|&x| x == c)
                .ok_or_else(|| Error::Model(format!("{c} is outside the patrol region")))
        };
        let (i, j) = (idx(from)?, idx(to)?);
        self.update_index(i, j)
    }

    /// One step of the chain applied to a distribution over ring indices.
    pub fn push_forward(&self, dist: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (j, &q) in self.matrix[i].iter().enumerate() {
                out[j] += p * q;
            }
        }
        out
    }
}

/// Watches every adversary for `n_obs` moves starting from ring indices
/// `start`, using the game's own movement rules. Returns one model per
/// adversary and the positions reached.
pub fn observe_adversaries<R: Rng + ?Sized>(
    config: &GameConfig,
    start: &[usize],
    n_obs: usize,
    rng: &mut R,
) -> Result<(Vec<TransitionModel>, Vec<usize>)> {
    if start.len() != config.adversaries.len() {
        return Err(Error::Shape {
            expected: config.adversaries.len(),
            got: start.len(),
        });
    }
    let mut models: Vec<_> = config
        .adversaries
        .iter()
        .map(TransitionModel::for_adversary)
        .collect();
    let mut pos = start.to_vec();
    for _ in 0..n_obs {
        for ((idx, adv), model) in pos.iter_mut().zip(&config.adversaries).zip(&mut models) {
            let next = adv.advance(*idx, rng);
            model.update_index(*idx, next)?;
            *idx = next;
        }
    }
    Ok((models, pos))
}

/// Probability of adversary presence per cell and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMap {
    t0: usize,
    horizon: usize,
    n_cells: usize,
    /// `p[(t - t0) * n_cells + cell_index]`
    p: Vec<f64>,
    /// Per adversary, per time step, distribution over ring indices.
    per_adversary: Vec<Vec<Vec<f64>>>,
}

impl RiskMap {
    /// A map with zero risk everywhere.
    pub fn zero(config: &GameConfig, t0: usize, horizon: usize) -> Self {
        let n = config.n_cells();
        let steps = horizon.saturating_sub(t0) + 1;
        RiskMap {
            t0,
            horizon,
            n_cells: n,
            p: vec![0.0; steps * n],
            per_adversary: Vec::new(),
        }
    }

    /// Builds a map from explicit per-time rows (`rows[k][cell_index]` is the
    /// risk at time `t0 + k`).
    pub fn from_rows(t0: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_cells = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || rows.iter().any(|r| r.len() != n_cells) {
            return Err(Error::InvalidParams("risk rows must be non-empty and equal length".into()));
        }
        Ok(RiskMap {
            t0,
            horizon: t0 + rows.len() - 1,
            n_cells,
            p: rows.concat(),
            per_adversary: Vec::new(),
        })
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Risk at `cell_index` at absolute time `t`; zero outside the window.
    pub fn get(&self, cell_index: usize, t: usize) -> f64 {
        if t < self.t0 || t > self.horizon {
            return 0.0;
        }
        self.p[(t - self.t0) * self.n_cells + cell_index]
    }

    /// Distribution of adversary `a` over its ring at absolute time `t`.
    pub fn adversary_distribution(&self, a: usize, t: usize) -> Option<&[f64]> {
        let k = t.checked_sub(self.t0)?;
        self.per_adversary.get(a)?.get(k).map(Vec::as_slice)
    }

    pub fn n_adversaries(&self) -> usize {
        self.per_adversary.len()
    }
}

/// Propagates each adversary's current ring position through its model from
/// `t0` up to `horizon`. Cell risks are summed over adversaries and capped at 1.
pub fn propagate_risk(
    config: &GameConfig,
    models: &[TransitionModel],
    positions: &[usize],
    t0: usize,
    horizon: usize,
) -> Result<RiskMap> {
    if horizon < t0 {
        return Err(Error::InvalidParams(format!("horizon {horizon} precedes t0 {t0}")));
    }
    if models.len() != config.adversaries.len() || positions.len() != models.len() {
        return Err(Error::Shape {
            expected: config.adversaries.len(),
            got: models.len().min(positions.len()),
        });
    }
    let mut map = RiskMap::zero(config, t0, horizon);
    let steps = horizon - t0 + 1;
    for (model, &pos) in models.iter().zip(positions) {
        if pos >= model.len() {
            return Err(Error::Model(format!("ring position {pos} out of range")));
        }
        let mut dist = vec![0.0; model.len()];
        dist[pos] = 1.0;
        let mut series = Vec::with_capacity(steps);
        for k in 0..steps {
            if k > 0 {
                dist = model.push_forward(&dist);
            }
            for (i, &q) in dist.iter().enumerate() {
                let c = config.cell_index(model.cells()[i]);
                map.p[k * map.n_cells + c] += q;
            }
            series.push(dist.clone());
        }
        map.per_adversary.push(series);
    }
    map.p.iter_mut().for_each(|p| *p = p.min(1.0));
    Ok(map)
}

/// Cost of arriving at a cell at time `t`.
#[inline]
pub fn arrival_cost(t: usize, reward: f64, phi: f64, risk: f64) -> f64 {
    t as f64 - reward + phi * risk
}

/// A route from the agent's current cell to the exit.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// `(cell, time)` pairs; the first entry is the agent's current position.
    pub route: Vec<(Cell, usize)>,
    pub objective: f64,
}

impl Plan {
    pub fn first_move(&self) -> Option<Action> {
        let (a, _) = *self.route.first()?;
        let (b, _) = *self.route.get(1)?;
        Action::between(a, b)
    }

    pub fn len(&self) -> usize {
        self.route.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of risk over the cells the route arrives at.
    pub fn total_risk(&self, config: &GameConfig, risk: &RiskMap) -> f64 {
        self.route
            .iter()
            .skip(1)
            .map(|&(c, t)| risk.get(config.cell_index(c), t))
            .sum()
    }

    /// Objective of the route, recomputed from scratch.
    pub fn evaluate(&self, config: &GameConfig, state: &GameState, risk: &RiskMap, phi: f64) -> f64 {
        let mut mask = state.collected;
        let mut total = 0.0;
        for &(c, t) in self.route.iter().skip(1) {
            let mut r = 0.0;
            if let Some(k) = config.reward_index(c) {
                if mask & (1 << k) == 0 {
                    r = config.reward_value as f64;
                    mask |= 1 << k;
                }
            }
            total += arrival_cost(t, r, phi, risk.get(config.cell_index(c), t));
        }
        total
    }

    /// Checks the structural constraints of a plan. Returns a description of
    /// the first violation.
    pub fn check(&self, config: &GameConfig, state: &GameState, horizon: usize) -> std::result::Result<(), String> {
        let Some(&(first, t0)) = self.route.first() else {
            return Err("empty route".into());
        };
        if first != state.agent || t0 != state.steps {
            return Err(format!("route starts at {first}@{t0}, agent is at {}@{}", state.agent, state.steps));
        }
        if self.route.len() < 2 {
            return Err("route never moves".into());
        }
        let mut seen = vec![false; config.n_cells()];
        if first != config.exit {
            seen[config.cell_index(first)] = true;
        }
        let mut mask = state.collected;
        for (k, w) in self.route.windows(2).enumerate() {
            let ((a, ta), (b, tb)) = (w[0], w[1]);
            if tb != ta + 1 {
                return Err(format!("time jumps from {ta} to {tb}"));
            }
            if tb > horizon {
                return Err(format!("time {tb} exceeds horizon {horizon}"));
            }
            if !config.contains(b) || !a.is_adjacent(b) {
                return Err(format!("{a} -> {b} is not a grid move"));
            }
            let last = k + 2 == self.route.len();
            if b == config.exit {
                if !last {
                    return Err(format!("exit reached early at time {tb}"));
                }
            } else {
                let i = config.cell_index(b);
                if seen[i] {
                    return Err(format!("{b} visited twice"));
                }
                seen[i] = true;
            }
            if let Some(r) = config.reward_index(b) {
                mask |= 1 << r;
            }
        }
        if self.route.last().map(|&(c, _)| c) != Some(config.exit) {
            return Err("route does not end at the exit".into());
        }
        if mask != config.full_mask() {
            return Err("route leaves rewards uncollected".into());
        }
        Ok(())
    }

    /// One `t,row,col` line per route entry.
    pub fn trace(&self) -> String {
        let mut s = String::from("t,row,col\n");
        for &(c, t) in &self.route {
            let _ = writeln!(s, "{t},{},{}", c.row, c.col);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub nodes: u64,
    /// Lower bound on the objective at the root.
    pub root_bound: f64,
}

/// Above this many bound-table entries the reward mask is dropped from the
/// bound and a weaker, mask-free relaxation is used.
const MAX_BOUND_ENTRIES: usize = 1 << 24;

struct Bound {
    steps: usize,
    n_cells: usize,
    /// Index of each remaining reward bit in the compressed mask.
    bits: Vec<u32>,
    masked: bool,
    table: Vec<f64>,
    /// Used only by the mask-free relaxation.
    reward_credit: f64,
}

impl Bound {
    fn compress(&self, mask: u32) -> usize {
        if !self.masked {
            return 0;
        }
        self.bits
            .iter()
            .enumerate()
            .filter(|&(_, &b)| mask & (1 << b) != 0)
            .fold(0, |acc, (i, _)| acc | (1 << i))
    }

    fn get(&self, k: usize, mask: u32, cell: usize) -> f64 {
        let m = self.compress(mask);
        let n_masks = if self.masked { 1usize << self.bits.len() } else { 1 };
        self.table[(k * n_masks + m) * self.n_cells + cell] - self.reward_credit_for(mask)
    }

    fn reward_credit_for(&self, mask: u32) -> f64 {
        if self.masked {
            0.0
        } else {
            let left = self.bits.iter().filter(|&&b| mask & (1 << b) == 0).count();
            self.reward_credit * left as f64
        }
    }
}

struct Search<'a> {
    config: &'a GameConfig,
    risk: &'a RiskMap,
    phi: f64,
    t0: usize,
    horizon: usize,
    full: u32,
    exit: usize,
    neighbors: Vec<Vec<usize>>,
    bound: Bound,
    visited: Vec<bool>,
    path: Vec<usize>,
    best: f64,
    best_path: Option<Vec<usize>>,
    nodes: u64,
}

impl Search<'_> {
    fn reward_at(&self, cell: usize, mask: u32) -> (f64, u32) {
        match self.config.reward_index(self.config.cell_at(cell)) {
            Some(k) if mask & (1 << k) == 0 => (self.config.reward_value as f64, mask | (1 << k)),
            _ => (0.0, mask),
        }
    }

    fn cost(&self, cell: usize, t: usize, reward: f64) -> f64 {
        arrival_cost(t, reward, self.phi, self.risk.get(cell, t))
    }

    fn build_bound(&mut self, start_mask: u32) {
        let steps = self.horizon - self.t0 + 1;
        let n = self.config.n_cells();
        let bits: Vec<u32> = (0..self.config.rewards.len() as u32)
            .filter(|b| start_mask & (1 << b) == 0)
            .collect();
        let masked = (steps * n) << bits.len() <= MAX_BOUND_ENTRIES;
        let n_masks = if masked { 1usize << bits.len() } else { 1 };
        let full_c = n_masks - 1;
        let mut table = vec![f64::INFINITY; steps * n_masks * n];
        let reward_value = self.config.reward_value as f64;
        let expand = |m: usize| -> u32 {
            let mut mask = start_mask;
            for (i, &b) in bits.iter().enumerate() {
                if m & (1 << i) != 0 {
                    mask |= 1 << b;
                }
            }
            mask
        };
        for k in (0..steps.saturating_sub(1)).rev() {
            let t = self.t0 + k + 1;
            for m in 0..n_masks {
                let mask = expand(m);
                for cell in 0..n {
                    let mut best = f64::INFINITY;
                    for &nb in &self.neighbors[cell] {
                        let (r, m2) = if masked {
                            let (r, mask2) = self.reward_at(nb, mask);
                            let mut m2 = m;
                            for (i, &b) in bits.iter().enumerate() {
                                if mask2 & (1 << b) != 0 {
                                    m2 |= 1 << i;
                                }
                            }
                            (r, m2)
                        } else {
                            (0.0, 0)
                        };
                        let c = self.cost(nb, t, r);
                        let v = if nb == self.exit {
                            if !masked || m2 == full_c {
                                c
                            } else {
                                continue;
                            }
                        } else {
                            c + table[((k + 1) * n_masks + m2) * n + nb]
                        };
                        if v < best {
                            best = v;
                        }
                    }
                    table[(k * n_masks + m) * n + cell] = best;
                }
            }
        }
        self.bound = Bound {
            steps,
            n_cells: n,
            bits,
            masked,
            table,
            reward_credit: if masked { 0.0 } else { reward_value },
        };
    }

    fn tolerance(&self) -> f64 {
        1e-9 * self.best.abs().max(1.0)
    }

    fn dfs(&mut self, cell: usize, k: usize, mask: u32, g: f64) {
        self.nodes += 1;
        if k + 1 >= self.bound.steps {
            return;
        }
        let t = self.t0 + k + 1;
        let mut children: Vec<(f64, f64, usize, u32, bool)> = Vec::with_capacity(4);
        for &nb in &self.neighbors[cell] {
            let is_exit = nb == self.exit;
            if !is_exit && self.visited[nb] {
                continue;
            }
            let (r, m2) = self.reward_at(nb, mask);
            if is_exit && m2 != self.full {
                continue;
            }
            let c = g + self.cost(nb, t, r);
            let lb = if is_exit { c } else { c + self.bound.get(k + 1, m2, nb) };
            if !lb.is_finite() {
                continue;
            }
            children.push((lb, c, nb, m2, is_exit));
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (lb, c, nb, m2, is_exit) in children {
            if lb > self.best + self.tolerance() {
                continue;
            }
            self.path.push(nb);
            if is_exit {
                if c < self.best {
                    self.best = c;
                    self.best_path = Some(self.path.clone());
                }
            } else {
                self.visited[nb] = true;
                self.dfs(nb, k + 1, m2, c);
                self.visited[nb] = false;
            }
            self.path.pop();
        }
    }
}

/// Finds a minimum-objective route from the agent's position at time
/// `state.steps` to the exit, arriving no later than `horizon`.
///
/// Every arrival at cell `i` at time `t` costs `t - r + phi * p`, where `r` is
/// the reward value if `i` holds an uncollected reward and `p` is the risk at
/// `(i, t)`. Routes never revisit a cell, must collect every remaining reward
/// and touch the exit only as their final step.
pub fn solve_plan(
    config: &GameConfig,
    state: &GameState,
    risk: &RiskMap,
    phi: f64,
    horizon: usize,
) -> Result<(Plan, SolveStats)> {
    let t0 = state.steps;
    if horizon <= t0 {
        return Err(Error::Infeasible { t0, horizon });
    }
    if risk.n_cells() != config.n_cells() {
        return Err(Error::Shape {
            expected: config.n_cells(),
            got: risk.n_cells(),
        });
    }
    if !config.contains(state.agent) {
        return Err(Error::InvalidParams(format!("agent {} is off the grid", state.agent)));
    }
    let n = config.n_cells();
    let neighbors = (0..n)
        .map(|i| {
            config
                .neighbors(config.cell_at(i))
                .map(|(_, c)| config.cell_index(c))
                .collect()
        })
        .collect();
    let mut search = Search {
        config,
        risk,
        phi,
        t0,
        horizon,
        full: config.full_mask(),
        exit: config.cell_index(config.exit),
        neighbors,
        bound: Bound {
            steps: 0,
            n_cells: n,
            bits: Vec::new(),
            masked: true,
            table: Vec::new(),
            reward_credit: 0.0,
        },
        visited: vec![false; n],
        path: Vec::new(),
        best: f64::INFINITY,
        best_path: None,
        nodes: 0,
    };
    search.build_bound(state.collected);
    let start = config.cell_index(state.agent);
    let root_bound = search.bound.get(0, state.collected, start);
    if start != search.exit {
        search.visited[start] = true;
    }
    if root_bound.is_finite() {
        search.dfs(start, 0, state.collected, 0.0);
    }
    let Some(path) = search.best_path else {
        return Err(Error::Infeasible { t0, horizon });
    };
    let mut route = vec![(state.agent, t0)];
    route.extend(path.iter().enumerate().map(|(k, &c)| (config.cell_at(c), t0 + k + 1)));
    Ok((
        Plan {
            route,
            objective: search.best,
        },
        SolveStats {
            nodes: search.nodes,
            root_bound,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineParams {
    /// Adversary moves watched before the agent starts.
    pub n_obs: usize,
    /// Weight of capture risk in the objective.
    pub phi: f64,
    /// Planning window in steps beyond the current time; `None` uses
    /// `4 * (width + height)`.
    pub lookahead: Option<usize>,
}

impl Default for OnlineParams {
    fn default() -> Self {
        OnlineParams {
            n_obs: 8,
            phi: 1000.0,
            lookahead: None,
        }
    }
}

impl OnlineParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 {
            return Err(Error::InvalidParams("n_obs must be at least 1".into()));
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParams("phi must be finite and non-negative".into()));
        }
        if self.lookahead == Some(0) {
            return Err(Error::InvalidParams("lookahead must be positive".into()));
        }
        Ok(())
    }

    pub fn lookahead_for(&self, config: &GameConfig) -> usize {
        self.lookahead.unwrap_or(4 * (config.width + config.height))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnlineEpisode {
    pub status: Status,
    pub score: i64,
    pub steps: usize,
    /// Set when a re-solve found no feasible route; the episode stops there.
    pub infeasible: bool,
    /// Cells occupied by the agent, starting with the start cell.
    pub path: Vec<Cell>,
    pub solves: usize,
    pub nodes: u64,
    #[serde(skip)]
    pub observe_time: Duration,
    #[serde(skip)]
    pub solve_time: Duration,
}

impl OnlineEpisode {
    pub fn won(&self) -> bool {
        self.status == Status::Won
    }
}

/// Observes the adversaries, then plays one game by re-solving every turn.
pub fn online_loop<R: Rng + ?Sized>(
    config: &GameConfig,
    params: &OnlineParams,
    adversary_rng: &mut R,
) -> Result<OnlineEpisode> {
    params.validate()?;
    let mut state = config.new_game()?;
    let clock = Instant::now();
    let (mut models, pos) = observe_adversaries(config, &state.adversaries, params.n_obs, adversary_rng)?;
    state.adversaries = pos;
    let observe_time = clock.elapsed();

    let lookahead = params.lookahead_for(config);
    let mut ep = OnlineEpisode {
        status: Status::Running,
        score: 0,
        steps: 0,
        infeasible: false,
        path: vec![state.agent],
        solves: 0,
        nodes: 0,
        observe_time,
        solve_time: Duration::ZERO,
    };
    while state.status == Status::Running {
        let t0 = state.steps;
        let clock = Instant::now();
        let solved = propagate_risk(config, &models, &state.adversaries, t0, t0 + lookahead)
            .and_then(|risk| solve_plan(config, &state, &risk, params.phi, t0 + lookahead));
        ep.solve_time += clock.elapsed();
        ep.solves += 1;
        let (plan, stats) = match solved {
            Ok(x) => x,
            Err(Error::Infeasible { .. }) => {
                ep.infeasible = true;
                break;
            }
            Err(e) => return Err(e),
        };
        ep.nodes += stats.nodes;
        let action = plan
            .first_move()
            .ok_or_else(|| Error::InvalidParams("plan has no first move".into()))?;
        state = config.agent_step(&state, action)?.state;
        ep.path.push(state.agent);
        if state.status.is_terminal() {
            break;
        }
        let before = state.adversaries.clone();
        state = config.adversary_step(&state, adversary_rng)?.state;
        for ((model, &a), &b) in models.iter_mut().zip(&before).zip(&state.adversaries) {
            model.update_index(a, b)?;
        }
    }
    ep.status = state.status;
    ep.score = state.score;
    ep.steps = state.steps;
    Ok(ep)
}
