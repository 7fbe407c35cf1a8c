//! The adversarial reward-collecting grid game.
//!
//! An agent starts in one cell, must step onto every reward cell and then
//! reach the exit. Each reward is watched by at most one adversary that
//! patrols the ring of eight cells surrounding it. Every time step the agent
//! moves first, then every adversary moves; the agent is captured when it
//! shares a cell with an adversary at the end of the time step.
//!
//! Scoring: entering an uncollected reward earns `reward_value`, finishing
//! (entering the exit with every reward collected) earns `exit_bonus`, and
//! every other move costs `step_penalty`. Capture adds `capture_penalty`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of rewards a game may hold (collected set is a `u32` mask
/// and the tabular state space grows with `2^rewards`).
pub const MAX_REWARDS: usize = 16;

/// Default episode length bound.
pub const DEFAULT_STEP_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// True when the two cells share an edge.
    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }

    /// The neighbour in direction `action`, if it lies inside a `width` x `height` grid.
    pub fn step(self, action: Action, width: usize, height: usize) -> Option<Cell> {
        let (row, col) = (self.row, self.col);
        match action {
            Action::Up if row > 0 => Some(Cell::new(row - 1, col)),
            Action::Down if row + 1 < height => Some(Cell::new(row + 1, col)),
            Action::Left if col > 0 => Some(Cell::new(row, col - 1)),
            Action::Right if col + 1 < width => Some(Cell::new(row, col + 1)),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Agent moves. The discriminant order is also the argmax tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Action> {
        Action::ALL.get(idx).copied()
    }

    /// The action that moves `from` onto the edge-adjacent cell `to`.
    pub fn between(from: Cell, to: Cell) -> Option<Action> {
        if !from.is_adjacent(to) {
            return None;
        }
        Some(if to.row < from.row {
            Action::Up
        } else if to.row > from.row {
            Action::Down
        } else if to.col < from.col {
            Action::Left
        } else {
            Action::Right
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    #[serde(alias = "cw")]
    Clockwise,
    #[serde(alias = "ccw", alias = "counter-clockwise")]
    Counterclockwise,
    Random,
}

impl Movement {
    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Clockwise => "clockwise",
            Movement::Counterclockwise => "counterclockwise",
            Movement::Random => "random",
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Movement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clockwise" | "cw" => Ok(Movement::Clockwise),
            "counterclockwise" | "counter-clockwise" | "ccw" => Ok(Movement::Counterclockwise),
            "random" => Ok(Movement::Random),
            other => Err(Error::InvalidConfig(format!("unknown movement '{other}'"))),
        }
    }
}

/// The closed ring of eight cells around `center`, clockwise in screen
/// coordinates starting at the north-west corner:
/// NW, N, NE, E, SE, S, SW, W. `None` when the ring would leave the grid.
pub fn ring_around(center: Cell, width: usize, height: usize) -> Option<Vec<Cell>> {
    if center.row == 0 || center.col == 0 || center.row + 1 >= height || center.col + 1 >= width {
        return None;
    }
    let (r, c) = (center.row, center.col);
    Some(vec![
        Cell::new(r - 1, c - 1),
        Cell::new(r - 1, c),
        Cell::new(r - 1, c + 1),
        Cell::new(r, c + 1),
        Cell::new(r + 1, c + 1),
        Cell::new(r + 1, c),
        Cell::new(r + 1, c - 1),
        Cell::new(r, c - 1),
    ])
}

/// One patrolling adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub movement: Movement,
    /// Index into `GameConfig::rewards` of the reward this adversary circles.
    pub reward: usize,
    pub patrol_region: Vec<Cell>,
    pub start_index: usize,
}

impl AdversarySpec {
    /// Adversary circling `rewards[reward]`, starting at ring index `start_index`
    /// (0 is the cell to the upper left of the reward).
    pub fn around(
        rewards: &[Cell],
        reward: usize,
        movement: Movement,
        start_index: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let center = *rewards.get(reward).ok_or_else(|| {
            Error::InvalidConfig(format!("adversary refers to missing reward #{reward}"))
        })?;
        let patrol_region = ring_around(center, width, height).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "reward {center} guarded by an adversary must not touch the grid border"
            ))
        })?;
        Ok(AdversarySpec {
            movement,
            reward,
            patrol_region,
            start_index,
        })
    }

    pub fn ring_len(&self) -> usize {
        self.patrol_region.len()
    }

    pub fn cell(&self, idx: usize) -> Cell {
        self.patrol_region[idx]
    }

    pub fn index_of(&self, cell: Cell) -> Option<usize> {
        self.patrol_region.iter().position(|&c| c == cell)
    }

    /// The two ring indices reachable in one move from `idx`.
    pub fn ring_neighbors(&self, idx: usize) -> [usize; 2] {
        let n = self.ring_len();
        [(idx + 1) % n, (idx + n - 1) % n]
    }

    /// Next ring index after one move. A random adversary draws one of the
    /// four compass moves and stays put when the move leaves its ring.
    pub fn advance<R: Rng + ?Sized>(&self, idx: usize, rng: &mut R) -> usize {
        let n = self.ring_len();
        match self.movement {
            Movement::Clockwise => (idx + 1) % n,
            Movement::Counterclockwise => (idx + n - 1) % n,
            Movement::Random => {
                let action = Action::ALL[rng.gen_range(0..4)];
                self.cell(idx)
                    .step(action, usize::MAX, usize::MAX)
                    .and_then(|c| self.index_of(c))
                    .unwrap_or(idx)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub exit: Cell,
    pub rewards: Vec<Cell>,
    pub adversaries: Vec<AdversarySpec>,
    pub step_penalty: i64,
    pub reward_value: i64,
    pub capture_penalty: i64,
    pub exit_bonus: i64,
    pub rng_seed: u64,
    pub step_limit: usize,
}

impl GameConfig {
    /// A game with the default scores, no rewards and no adversaries.
    pub fn empty(width: usize, height: usize, start: Cell, exit: Cell) -> Self {
        GameConfig {
            width,
            height,
            start,
            exit,
            rewards: Vec::new(),
            adversaries: Vec::new(),
            step_penalty: -1,
            reward_value: 200,
            capture_penalty: -1000,
            exit_bonus: 100,
            rng_seed: 0,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    /// Adds a reward at `cell`; returns its index.
    pub fn add_reward(&mut self, cell: Cell) -> usize {
        self.rewards.push(cell);
        self.rewards.len() - 1
    }

    pub fn add_adversary(&mut self, reward: usize, movement: Movement, start_index: usize) -> Result<()> {
        let spec = AdversarySpec::around(
            &self.rewards,
            reward,
            movement,
            start_index,
            self.width,
            self.height,
        )?;
        self.adversaries.push(spec);
        Ok(())
    }

    /// 5x5 board: agent top-left, one reward in the centre, exit bottom-right,
    /// one adversary starting just north-west of the reward.
    pub fn five_by_five(movement: Movement) -> Self {
        let mut cfg = GameConfig::empty(5, 5, Cell::new(0, 0), Cell::new(4, 4));
        let r = cfg.add_reward(Cell::new(2, 2));
        cfg.add_adversary(r, movement, 0).expect("static layout");
        cfg
    }

    /// 9x9 board with two rewards in the top-right and bottom-left, each
    /// circled by its own adversary starting north-west of it.
    pub fn nine_by_nine(movement: Movement) -> Self {
        let mut cfg = GameConfig::empty(9, 9, Cell::new(0, 0), Cell::new(8, 8));
        let a = cfg.add_reward(Cell::new(1, 7));
        let b = cfg.add_reward(Cell::new(7, 1));
        cfg.add_adversary(a, movement, 0).expect("static layout");
        cfg.add_adversary(b, movement, 0).expect("static layout");
        cfg
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(idx / self.width, idx % self.width)
    }

    pub fn full_mask(&self) -> u32 {
        if self.rewards.is_empty() {
            0
        } else {
            (1u32 << self.rewards.len()) - 1
        }
    }

    pub fn reward_index(&self, cell: Cell) -> Option<usize> {
        self.rewards.iter().position(|&r| r == cell)
    }

    /// Edge-adjacent neighbours of `cell` in action order.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = (Action, Cell)> + '_ {
        Action::ALL
            .into_iter()
            .filter_map(move |a| cell.step(a, self.width, self.height).map(|c| (a, c)))
    }

    /// Common movement of every adversary, if they all share one.
    pub fn movement(&self) -> Option<Movement> {
        let first = self.adversaries.first()?.movement;
        self.adversaries
            .iter()
            .all(|a| a.movement == first)
            .then_some(first)
    }

    /// Replaces the movement type of every adversary.
    pub fn with_movement(mut self, movement: Movement) -> Self {
        for adv in &mut self.adversaries {
            adv.movement = movement;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.width == 0 || self.height == 0 || self.n_cells() < 2 {
            return bad("grid must have at least two cells".into());
        }
        for (name, cell) in [("start", self.start), ("exit", self.exit)] {
            if !self.contains(cell) {
                return bad(format!("{name} {cell} lies outside the grid"));
            }
        }
        if self.start == self.exit {
            return bad("start and exit must be distinct".into());
        }
        if self.rewards.len() > MAX_REWARDS {
            return bad(format!("at most {MAX_REWARDS} rewards are supported"));
        }
        for (k, &r) in self.rewards.iter().enumerate() {
            if !self.contains(r) {
                return bad(format!("reward #{k} {r} lies outside the grid"));
            }
            if r == self.start || r == self.exit {
                return bad(format!("reward #{k} {r} coincides with the start or exit"));
            }
            for (j, &other) in self.rewards.iter().enumerate().skip(k + 1) {
                if r == other {
                    return bad(format!("rewards #{k} and #{j} share cell {r}"));
                }
                if r.row.abs_diff(other.row) <= 1 && r.col.abs_diff(other.col) <= 1 {
                    return bad(format!(
                        "reward #{j} {other} lies inside the patrol region of reward #{k} {r}"
                    ));
                }
            }
        }
        for (i, adv) in self.adversaries.iter().enumerate() {
            let Some(&center) = self.rewards.get(adv.reward) else {
                return bad(format!("adversary #{i} refers to missing reward #{}", adv.reward));
            };
            match ring_around(center, self.width, self.height) {
                Some(ring) if ring == adv.patrol_region => {}
                Some(_) => return bad(format!("adversary #{i} patrol region is not the ring around {center}")),
                None => {
                    return bad(format!(
                        "reward {center} guarded by adversary #{i} must not touch the grid border"
                    ))
                }
            }
            if adv.start_index >= adv.ring_len() {
                return bad(format!("adversary #{i} start index {} out of range", adv.start_index));
            }
            if adv.patrol_region.contains(&self.exit) {
                return bad(format!("adversary #{i} patrol region covers the exit"));
            }
        }
        if self.step_limit == 0 {
            return bad("step limit must be positive".into());
        }
        Ok(())
    }

    pub fn new_game(&self) -> Result<GameState> {
        self.validate()?;
        Ok(GameState {
            agent: self.start,
            adversaries: self.adversaries.iter().map(|a| a.start_index).collect(),
            collected: 0,
            score: 0,
            steps: 0,
            status: Status::Running,
        })
    }

    /// Legal-action mask for the agent at `cell`, in action order.
    pub fn legal_actions(&self, cell: Cell) -> [bool; 4] {
        Action::ALL.map(|a| cell.step(a, self.width, self.height).is_some())
    }

    /// Moves the agent. Capture is never decided here; adversaries move second.
    pub fn agent_step(&self, state: &GameState, action: Action) -> Result<StepOutcome> {
        if state.status != Status::Running {
            return Err(Error::GameOver);
        }
        let next = state
            .agent
            .step(action, self.width, self.height)
            .ok_or(Error::InvalidAction {
                from: state.agent,
                action,
            })?;
        let mut s = state.clone();
        s.agent = next;
        s.steps += 1;
        let mut reward = self.step_penalty;
        if let Some(k) = self.reward_index(next) {
            if s.collected & (1 << k) == 0 {
                s.collected |= 1 << k;
                reward = self.reward_value;
            }
        } else if next == self.exit && s.collected == self.full_mask() {
            reward = self.exit_bonus;
            s.status = Status::Won;
        }
        s.score += reward;
        let terminal = s.status.is_terminal();
        Ok(StepOutcome {
            state: s,
            reward,
            terminal,
        })
    }

    /// Agent "move" that stays in place and pays the step penalty. Learners
    /// use this for actions that would leave the grid.
    pub fn agent_stay(&self, state: &GameState) -> Result<StepOutcome> {
        if state.status != Status::Running {
            return Err(Error::GameOver);
        }
        let mut s = state.clone();
        s.steps += 1;
        s.score += self.step_penalty;
        Ok(StepOutcome {
            state: s,
            reward: self.step_penalty,
            terminal: false,
        })
    }

    /// Moves every adversary once, then applies the capture rule and the step limit.
    pub fn adversary_step<R: Rng + ?Sized>(&self, state: &GameState, rng: &mut R) -> Result<StepOutcome> {
        if state.status != Status::Running {
            return Err(Error::GameOver);
        }
        let mut s = state.clone();
        for (idx, adv) in s.adversaries.iter_mut().zip(&self.adversaries) {
            *idx = adv.advance(*idx, rng);
        }
        let mut reward = 0;
        let captured = s
            .adversaries
            .iter()
            .zip(&self.adversaries)
            .any(|(&idx, adv)| adv.cell(idx) == s.agent);
        if captured {
            reward = self.capture_penalty;
            s.score += reward;
            s.status = Status::Captured;
        } else if s.steps >= self.step_limit {
            s.status = Status::EpochLimit;
        }
        let terminal = s.status.is_terminal();
        Ok(StepOutcome {
            state: s,
            reward,
            terminal,
        })
    }

    /// One full time step as seen by a learner: the agent acts (an off-grid
    /// action keeps it in place with the step penalty), then the adversaries
    /// move unless the game already ended. The reward is the sum of both halves.
    pub fn play_turn<R: Rng + ?Sized>(
        &self,
        state: &GameState,
        action: Action,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let first = match self.agent_step(state, action) {
            Ok(o) => o,
            Err(Error::InvalidAction { .. }) => self.agent_stay(state)?,
            Err(e) => return Err(e),
        };
        if first.terminal {
            return Ok(first);
        }
        let second = self.adversary_step(&first.state, rng)?;
        Ok(StepOutcome {
            reward: first.reward + second.reward,
            terminal: second.terminal,
            state: second.state,
        })
    }

    /// Best possible final score ignoring adversaries: breadth-first search
    /// over (cell, collected set) for the fewest moves that collect every
    /// reward and then reach the exit.
    pub fn optimal_score(&self) -> Result<i64> {
        let moves = self.shortest_tour_len().ok_or(Error::Unreachable)?;
        let k = self.rewards.len();
        let plain = (moves - k - 1) as i64;
        Ok(k as i64 * self.reward_value + self.exit_bonus + plain * self.step_penalty)
    }

    /// Fewest moves from the start that collect every reward and finish at the exit.
    pub fn shortest_tour_len(&self) -> Option<usize> {
        let dist = self.tour_distances();
        dist[self.state_key(self.start, 0)]
    }

    pub(crate) fn state_key(&self, cell: Cell, mask: u32) -> usize {
        (mask as usize) * self.n_cells() + self.cell_index(cell)
    }

    /// Moves-to-go until finishing from every (cell, collected) state,
    /// indexed by `mask * n_cells + cell`. Computed by breadth-first search
    /// backwards from the finishing move.
    pub(crate) fn tour_distances(&self) -> Vec<Option<usize>> {
        let n = self.n_cells();
        let masks = 1usize << self.rewards.len();
        let full = self.full_mask();
        let key = |c: Cell, m: u32| (m as usize) * n + self.cell_index(c);
        // A state is reachable in play unless the agent stands on an
        // uncollected reward or has already finished.
        let standable = |c: Cell, m: u32| {
            let on_uncollected = self.reward_index(c).is_some_and(|k| m & (1 << k) == 0);
            let finished = c == self.exit && m == full;
            !on_uncollected && !finished
        };
        let mut dist = vec![None; n * masks];
        let mut queue = std::collections::VecDeque::new();
        for (_, p) in self.neighbors(self.exit) {
            if standable(p, full) {
                dist[key(p, full)] = Some(1);
                queue.push_back((p, full));
            }
        }
        while let Some((cell, mask)) = queue.pop_front() {
            let d = dist[key(cell, mask)].expect("queued states have a distance");
            let pred_masks: &[u32] = match self.reward_index(cell) {
                Some(k) => &[mask, mask & !(1 << k)],
                None => &[mask],
            };
            for (_, p) in self.neighbors(cell) {
                for &pm in pred_masks {
                    if !standable(p, pm) || dist[key(p, pm)].is_some() {
                        continue;
                    }
                    dist[key(p, pm)] = Some(d + 1);
                    queue.push_back((p, pm));
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Running,
    Won,
    Captured,
    EpochLimit,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Won => "won",
            Status::Captured => "captured",
            Status::EpochLimit => "limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub agent: Cell,
    /// Ring index of each adversary.
    pub adversaries: Vec<usize>,
    pub collected: u32,
    pub score: i64,
    pub steps: usize,
    pub status: Status,
}

impl GameState {
    pub fn adversary_cells(&self, config: &GameConfig) -> Vec<Cell> {
        self.adversaries
            .iter()
            .zip(&config.adversaries)
            .map(|(&idx, adv)| adv.cell(idx))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: GameState,
    pub reward: i64,
    pub terminal: bool,
}

/// Cell markers used by [`encode_observation`].
pub mod marker {
    pub const EMPTY: f64 = 0.0;
    pub const AGENT: f64 = 1.0;
    pub const REWARD: f64 = 0.5;
    pub const ADVERSARY: f64 = -1.0;
    pub const AGENT_AND_ADVERSARY: f64 = -0.5;
}

/// Flat row-major observation, one value per cell.
pub fn encode_observation(config: &GameConfig, state: &GameState) -> Vec<f64> {
    let mut obs = vec![marker::EMPTY; config.n_cells()];
    for (k, &r) in config.rewards.iter().enumerate() {
        if state.collected & (1 << k) == 0 {
            obs[config.cell_index(r)] = marker::REWARD;
        }
    }
    for cell in state.adversary_cells(config) {
        obs[config.cell_index(cell)] = marker::ADVERSARY;
    }
    let a = config.cell_index(state.agent);
    obs[a] = if obs[a] == marker::ADVERSARY {
        marker::AGENT_AND_ADVERSARY
    } else {
        marker::AGENT
    };
    obs
}

/// Recovers the agent cell from an encoded observation.
pub fn decode_agent(config: &GameConfig, obs: &[f64]) -> Option<Cell> {
    obs.iter()
        .position(|&v| v == marker::AGENT || v == marker::AGENT_AND_ADVERSARY)
        .map(|i| config.cell_at(i))
}
