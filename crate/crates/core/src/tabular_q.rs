//! Epsilon-greedy tabular Q-learning.
//!
//! The table is keyed by (agent cell, collected-reward mask); adversary
//! positions are not part of the state, which keeps the 5x5 one-reward game
//! at 200 values.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_env::{Action, Cell, GameConfig, GameState, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub cell: Cell,
    pub mask: u32,
}

impl StateKey {
    pub fn of(state: &GameState) -> Self {
        StateKey {
            cell: state.agent,
            mask: state.collected,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    width: usize,
    n_cells: usize,
    n_masks: usize,
    rows: Vec<[f64; 4]>,
}

impl QTable {
    pub fn new(config: &GameConfig) -> Self {
        let n_cells = config.n_cells();
        let n_masks = 1usize << config.rewards.len();
        QTable {
            width: config.width,
            n_cells,
            n_masks,
            rows: vec![[0.0; 4]; n_cells * n_masks],
        }
    }

    fn slot(&self, key: StateKey) -> usize {
        key.mask as usize * self.n_cells + key.cell.row * self.width + key.cell.col
    }

    pub fn row(&self, key: StateKey) -> &[f64; 4] {
        &self.rows[self.slot(key)]
    }

    pub fn row_mut(&mut self, key: StateKey) -> &mut [f64; 4] {
        let i = self.slot(key);
        &mut self.rows[i]
    }

    pub fn get(&self, key: StateKey, action: Action) -> f64 {
        self.row(key)[action.index()]
    }

    pub fn max(&self, key: StateKey) -> f64 {
        self.row(key).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, key: StateKey) -> Action {
        argmax(self.row(key))
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_values(&self) -> usize {
        self.rows.len() * 4
    }

    pub fn keys(&self) -> impl Iterator<Item = StateKey> + '_ {
        (0..self.n_masks).flat_map(move |m| {
            (0..self.n_cells).map(move |c| StateKey {
                cell: Cell::new(c / self.width, c % self.width),
                mask: m as u32,
            })
        })
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    /// CSV dump: `row,col,mask,up,down,left,right`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,mask,up,down,left,right")?;
        for key in self.keys() {
            let q = self.row(key);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                key.cell.row, key.cell.col, key.mask, q[0], q[1], q[2], q[3]
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(config: &GameConfig, text: &str) -> Result<Self> {
        let mut table = QTable::new(config);
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: "<q-table>".into(),
            msg: format!("line {line}: {msg}"),
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(parse_err(i + 1, "expected 7 fields"));
            }
            let int = |s: &str| s.trim().parse::<usize>().map_err(|_| parse_err(i + 1, "bad integer"));
            let cell = Cell::new(int(fields[0])?, int(fields[1])?);
            let mask = int(fields[2])? as u32;
            if !config.contains(cell) || mask as usize >= table.n_masks {
                return Err(parse_err(i + 1, "state out of range"));
            }
            let row = table.row_mut(StateKey { cell, mask });
            for (slot, f) in row.iter_mut().zip(&fields[3..]) {
                *slot = f.trim().parse().map_err(|_| parse_err(i + 1, "bad value"))?;
            }
        }
        Ok(table)
    }
}

/// Index of the largest value; ties go to the earliest action (Up, Down, Left, Right).
pub fn argmax(row: &[f64; 4]) -> Action {
    let mut best = 0;
    for i in 1..4 {
        if row[i] > row[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub beta: f64,
    pub epochs: usize,
    /// Greedy rollouts used to judge the trained policy.
    pub eval_episodes: usize,
}

impl Default for TabularParams {
    fn default() -> Self {
        TabularParams {
            alpha: 0.1,
            gamma: 0.97,
            epsilon0: 1.0,
            beta: 2500.0,
            epochs: 1000,
            eval_episodes: 100,
        }
    }
}

impl TabularParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 <= 1.0) {
            return bad("epsilon0 must lie in (0, 1]");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.epochs == 0 || self.eval_episodes == 0 {
            return bad("epochs and eval_episodes must be at least 1");
        }
        Ok(())
    }
}

/// One Q-learning backup. `next` is `None` for a terminal transition.
pub fn q_update(
    table: &mut QTable,
    state: StateKey,
    action: Action,
    reward: f64,
    next: Option<StateKey>,
    alpha: f64,
    gamma: f64,
) {
    let future = next.map_or(0.0, |k| table.max(k));
    let q = &mut table.row_mut(state)[action.index()];
    *q += alpha * (reward + gamma * future - *q);
}

/// Harmonic exploration decay for epoch `n` (1-based).
pub fn epsilon_decay(eps_prev: f64, n: usize, beta: f64) -> f64 {
    let n = n as f64;
    eps_prev / (1.0 + n * n / (beta + n))
}

pub fn select_action<R: Rng + ?Sized>(table: &QTable, state: StateKey, eps: f64, rng: &mut R) -> Action {
    if rng.gen::<f64>() < eps {
        Action::ALL[rng.gen_range(0..4)]
    } else {
        table.greedy(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpochRecord {
    pub status: Status,
    pub steps: usize,
    pub score: i64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub epochs: Vec<EpochRecord>,
    pub optimal_score: i64,
    pub wall_time: Duration,
}

impl TrainStats {
    fn count(&self, status: Status) -> usize {
        self.epochs.iter().filter(|e| e.status == status).count()
    }

    pub fn wins(&self) -> usize {
        self.count(Status::Won)
    }

    pub fn captures(&self) -> usize {
        self.count(Status::Captured)
    }

    pub fn limits(&self) -> usize {
        self.count(Status::EpochLimit)
    }

    /// Wins that reached the adversary-free optimum score.
    pub fn optimal_wins(&self) -> usize {
        self.epochs
            .iter()
            .filter(|e| e.status == Status::Won && e.score == self.optimal_score)
            .count()
    }
}

pub fn train_tabular<R: Rng, A: Rng>(
    config: &GameConfig,
    params: &TabularParams,
    agent_rng: &mut R,
    adversary_rng: &mut A,
) -> Result<(QTable, TrainStats)> {
    config.validate()?;
    params.validate()?;
    let started = Instant::now();
    let mut table = QTable::new(config);
    let mut stats = TrainStats {
        epochs: Vec::with_capacity(params.epochs),
        optimal_score: config.optimal_score()?,
        wall_time: Duration::ZERO,
    };
    let mut eps = params.epsilon0;
    for n in 1..=params.epochs {
        let mut state = config.new_game()?;
        loop {
            let key = StateKey::of(&state);
            let action = select_action(&table, key, eps, agent_rng);
            let out = config.play_turn(&state, action, adversary_rng)?;
            // Hitting the step limit truncates the episode; it still bootstraps.
            let next = match out.state.status {
                Status::Won | Status::Captured => None,
                _ => Some(StateKey::of(&out.state)),
            };
            q_update(&mut table, key, action, out.reward as f64, next, params.alpha, params.gamma);
            state = out.state;
            if out.terminal {
                break;
            }
        }
        stats.epochs.push(EpochRecord {
            status: state.status,
            steps: state.steps,
            score: state.score,
        });
        eps = epsilon_decay(eps, n, params.beta);
    }
    stats.wall_time = started.elapsed();
    Ok((table, stats))
}

/// Greedy action per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    width: usize,
    n_cells: usize,
    actions: Vec<Action>,
}

impl Policy {
    pub fn action(&self, key: StateKey) -> Action {
        self.actions[key.mask as usize * self.n_cells + key.cell.row * self.width + key.cell.col]
    }
}

pub fn extract_policy(table: &QTable) -> Policy {
    Policy {
        width: table.width,
        n_cells: table.n_cells,
        actions: table.rows.iter().map(argmax).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub episodes: usize,
    pub wins: usize,
    /// Final score of each rollout.
    pub scores: Vec<i64>,
    pub steps: Vec<usize>,
}

impl Evaluation {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.episodes as f64
    }
}

/// Greedy rollouts of `policy`; off-grid actions keep the agent in place.
pub fn evaluate_policy<R: Rng + ?Sized>(
    policy: &Policy,
    config: &GameConfig,
    rng: &mut R,
    episodes: usize,
) -> Result<Evaluation> {
    let mut eval = Evaluation {
        episodes,
        wins: 0,
        scores: Vec::with_capacity(episodes),
        steps: Vec::with_capacity(episodes),
    };
    for _ in 0..episodes {
        let mut state = config.new_game()?;
        while !state.status.is_terminal() {
            let action = policy.action(StateKey::of(&state));
            state = config.play_turn(&state, action, rng)?.state;
        }
        if state.status == Status::Won {
            eval.wins += 1;
        }
        eval.scores.push(state.score);
        eval.steps.push(state.steps);
    }
    Ok(eval)
}

/// Fewest states at which `policy` departs from some adversary-free shortest
/// collect-then-exit route. Zero means the policy follows an optimal route.
pub fn policy_deviations(policy: &Policy, config: &GameConfig) -> Option<usize> {
    let dist = config.tour_distances();
    let full = config.full_mask();
    let mut memo: Vec<Option<usize>> = vec![None; dist.len()];

    fn go(
        key: StateKey,
        policy: &Policy,
        config: &GameConfig,
        dist: &[Option<usize>],
        full: u32,
        memo: &mut Vec<Option<usize>>,
    ) -> usize {
        let slot = config.state_key(key.cell, key.mask);
        if let Some(v) = memo[slot] {
            return v;
        }
        let d = dist[slot].expect("on a shortest route");
        let mut best = usize::MAX;
        for (action, next) in config.neighbors(key.cell) {
            let mask = match config.reward_index(next) {
                Some(k) => key.mask | (1 << k),
                None => key.mask,
            };
            let miss = usize::from(policy.action(key) != action);
            if next == config.exit && mask == full {
                if d == 1 {
                    best = best.min(miss);
                }
                continue;
            }
            if dist[config.state_key(next, mask)] == Some(d - 1) {
                let rest = go(StateKey { cell: next, mask }, policy, config, dist, full, memo);
                best = best.min(miss + rest);
            }
        }
        memo[slot] = Some(best);
        best
    }

    dist[config.state_key(config.start, 0)]?;
    Some(go(
        StateKey {
            cell: config.start,
            mask: 0,
        },
        policy,
        config,
        &dist,
        full,
        &mut memo,
    ))
}

/// Outcome of one train-then-evaluate trial.
#[derive(Debug, Clone)]
pub struct TabularTrial {
    pub stats: TrainStats,
    pub evaluation: Evaluation,
    pub deviations: Option<usize>,
    pub table: QTable,
}

impl TabularTrial {
    /// The greedy policy won every evaluation rollout.
    pub fn winning(&self) -> bool {
        self.evaluation.wins == self.evaluation.episodes
    }

    /// Winning, and every rollout scored the adversary-free optimum.
    pub fn optimal(&self) -> bool {
        self.winning() && self.evaluation.scores.iter().all(|&s| s == self.stats.optimal_score)
    }

    pub fn mean_score(&self) -> f64 {
        let s = &self.evaluation.scores;
        s.iter().sum::<i64>() as f64 / s.len() as f64
    }
}

pub fn run_tabular_trial<R: Rng, A: Rng>(
    config: &GameConfig,
    params: &TabularParams,
    agent_rng: &mut R,
    adversary_rng: &mut A,
) -> Result<TabularTrial> {
    let (table, stats) = train_tabular(config, params, agent_rng, adversary_rng)?;
    let policy = extract_policy(&table);
    let evaluation = evaluate_policy(&policy, config, adversary_rng, params.eval_episodes)?;
    let deviations = policy_deviations(&policy, config);
    Ok(TabularTrial {
        stats,
        evaluation,
        deviations,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::Movement;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(r: usize, c: usize, mask: u32) -> StateKey {
        StateKey {
            cell: Cell::new(r, c),
            mask,
        }
    }

    #[test]
    fn five_by_five_table_has_200_values() {
        let t = QTable::new(&GameConfig::five_by_five(Movement::Clockwise));
        assert_eq!(t.n_states(), 50);
        assert_eq!(t.n_values(), 200);
    }

    #[test]
    fn update_from_zero() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        q_update(&mut t, key(0, 0, 0), Action::Right, -1.0, Some(key(0, 1, 0)), 0.1, 0.97);
        assert!((t.get(key(0, 0, 0), Action::Right) - -0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_keeps_value() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        t.row_mut(key(1, 1, 0))[2] = 3.5;
        t.row_mut(key(1, 0, 0))[0] = 9.0;
        q_update(&mut t, key(1, 1, 0), Action::Left, 42.0, Some(key(1, 0, 0)), 0.0, 0.9);
        assert_eq!(t.get(key(1, 1, 0), Action::Left), 3.5);
    }

    #[test]
    fn bellman_fixed_point_is_stable() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        // Q(s,a) = 10 = r + 0.5 * 8 with r = 6
        t.row_mut(key(0, 0, 0))[3] = 10.0;
        t.row_mut(key(0, 1, 0))[1] = 8.0;
        q_update(&mut t, key(0, 0, 0), Action::Right, 6.0, Some(key(0, 1, 0)), 0.7, 0.5);
        assert_eq!(t.get(key(0, 0, 0), Action::Right), 10.0);
    }

    #[test]
    fn terminal_ignores_next_row() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        t.row_mut(key(0, 1, 0))[0] = 1e6;
        q_update(&mut t, key(0, 0, 0), Action::Right, 100.0, None, 1.0, 0.97);
        assert_eq!(t.get(key(0, 0, 0), Action::Right), 100.0);
    }

    #[test]
    fn epsilon_decay_values() {
        assert!((epsilon_decay(1.0, 1, 9.0) - 1.0 / 1.1).abs() < 1e-15);
        assert!((epsilon_decay(0.5, 1, 1.0) - 0.5 / 1.5).abs() < 1e-15);
        let mut eps = 1.0;
        for n in 1..=1000 {
            let next = epsilon_decay(eps, n, 100.0);
            assert!(next < eps || (next == 0.0 && eps == 0.0));
            assert!(next >= 0.0);
            eps = next;
        }
        assert!(eps < 1e-100);
    }

    #[test]
    fn greedy_selection_and_ties() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(select_action(&t, key(2, 2, 0), 0.0, &mut rng), Action::Up);
        *t.row_mut(key(2, 2, 0)) = [1.0, 5.0, 2.0, 2.0];
        assert_eq!(select_action(&t, key(2, 2, 0), 0.0, &mut rng), Action::Down);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        *t.row_mut(key(0, 0, 0)) = [0.0, 0.0, 0.0, 100.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&t, key(0, 0, 0), 1.0, &mut rng).index()] += 1;
        }
        let p = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn policy_follows_dominant_action() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        for k in t.keys().collect::<Vec<_>>() {
            t.row_mut(k)[2] = 1.0;
        }
        let p = extract_policy(&t);
        assert!(t.keys().all(|k| p.action(k) == Action::Left));
    }

    #[test]
    fn adversary_free_training_finds_shortest_path() {
        let cfg = GameConfig::empty(2, 2, Cell::new(0, 0), Cell::new(1, 1));
        let params = TabularParams {
            alpha: 1.0,
            epochs: 500,
            ..TabularParams::default()
        };
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let trial = run_tabular_trial(&cfg, &params, &mut a, &mut b).unwrap();
        assert!(trial.optimal());
        assert_eq!(trial.evaluation.steps[0], 2);
        assert_eq!(trial.deviations, Some(0));
        assert_eq!(trial.stats.epochs.len(), 500);
    }

    #[test]
    fn deterministic_rollouts_repeat() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let params = TabularParams::default();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(6);
        let (table, _) = train_tabular(&cfg, &params, &mut a, &mut b).unwrap();
        let policy = extract_policy(&table);
        let eval = evaluate_policy(&policy, &cfg, &mut b, 5).unwrap();
        assert!(eval.scores.windows(2).all(|w| w[0] == w[1]));
        assert!(table.is_finite());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        t.row_mut(key(3, 4, 1))[1] = -12.625;
        t.row_mut(key(0, 0, 0))[3] = 0.1 + 0.2;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 51);
        assert_eq!(QTable::read_csv(&cfg, &text).unwrap(), t);
    }

    #[test]
    fn deviation_count_on_handmade_policy() {
        let cfg = GameConfig::five_by_five(Movement::Clockwise);
        let mut t = QTable::new(&cfg);
        // Right along row 0 to col 2, Down to the reward, then Down/Right to exit.
        for k in t.keys().collect::<Vec<_>>() {
            let (r, c) = (k.cell.row, k.cell.col);
            let a = if k.mask == 0 {
                if c < 2 { Action::Right } else { Action::Down }
            } else if r < 4 {
                Action::Down
            } else {
                Action::Right
            };
            t.row_mut(k)[a.index()] = 1.0;
        }
        assert_eq!(policy_deviations(&extract_policy(&t), &cfg), Some(0));
        // Break the move out of (0,1).
        *t.row_mut(key(0, 1, 0)) = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(policy_deviations(&extract_policy(&t), &cfg), Some(1));
    }
}
