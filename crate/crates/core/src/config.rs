//! Experiment specification files.
//!
//! A spec is a TOML document with an `[experiment]` table, a `[game]` table
//! and optional per-method parameter tables:
//!
//! ```toml
//! [experiment]
//! name = "online-5x5-random"
//! method = "online"        # tabular | dqn | online
//! replications = 50
//! base_seed = 0
//!
//! [game]
//! preset = "5x5"           # or "9x9", or an explicit layout / ASCII map
//! movement = "random"
//!
//! [online]
//! n_obs = 10
//! ```
//!
//! Games can instead be drawn as an ASCII map, one row per line: `A` start,
//! `X` exit, `R` reward, `a` an adversary's starting cell (on the ring of the
//! reward it guards), `.` empty.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::deep_q::DqnParams;
use crate::error::{Error, Result};
use crate::grid_env::{Cell, GameConfig, Movement};
use crate::online_opt::OnlineParams;
use crate::tabular_q::TabularParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tabular,
    Dqn,
    Online,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tabular => "tabular",
            Method::Dqn => "dqn",
            Method::Online => "online",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tabular" => Ok(Method::Tabular),
            "dqn" => Ok(Method::Dqn),
            "online" => Ok(Method::Online),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdversaryEntry {
    reward: usize,
    #[serde(default)]
    start_index: usize,
    movement: Option<Movement>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameSection {
    preset: Option<String>,
    map: Option<String>,
    movement: Option<Movement>,
    width: Option<usize>,
    height: Option<usize>,
    start: Option<[usize; 2]>,
    exit: Option<[usize; 2]>,
    #[serde(default)]
    rewards: Vec<[usize; 2]>,
    #[serde(default)]
    adversaries: Vec<AdversaryEntry>,
    step_penalty: Option<i64>,
    reward_value: Option<i64>,
    capture_penalty: Option<i64>,
    exit_bonus: Option<i64>,
    step_limit: Option<usize>,
}

fn cell(rc: [usize; 2]) -> Cell {
    Cell::new(rc[0], rc[1])
}

impl GameSection {
    fn build(&self) -> Result<GameConfig> {
        let movement = self.movement.unwrap_or(Movement::Clockwise);
        let layouts = [self.preset.is_some(), self.map.is_some(), self.width.is_some()];
        if layouts.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::InvalidConfig(
                "[game] needs exactly one of preset, map or width/height/start/exit".into(),
            ));
        }
        let mut cfg = if let Some(p) = &self.preset {
            match p.as_str() {
                "5x5" => GameConfig::five_by_five(movement),
                "9x9" => GameConfig::nine_by_nine(movement),
                other => return Err(Error::InvalidConfig(format!("unknown preset '{other}'"))),
            }
        } else if let Some(m) = &self.map {
            parse_map(m, movement)?
        } else {
            let missing = |f: &str| Error::InvalidConfig(format!("[game] is missing '{f}'"));
            let width = self.width.ok_or_else(|| missing("width"))?;
            let height = self.height.ok_or_else(|| missing("height"))?;
            let start = self.start.ok_or_else(|| missing("start"))?;
            let exit = self.exit.ok_or_else(|| missing("exit"))?;
            let mut cfg = GameConfig::empty(width, height, cell(start), cell(exit));
            for &r in &self.rewards {
                cfg.add_reward(cell(r));
            }
            for a in &self.adversaries {
                cfg.add_adversary(a.reward, a.movement.unwrap_or(movement), a.start_index)?;
            }
            cfg
        };
        if let Some(v) = self.step_penalty {
            cfg.step_penalty = v;
        }
        if let Some(v) = self.reward_value {
            cfg.reward_value = v;
        }
        if let Some(v) = self.capture_penalty {
            cfg.capture_penalty = v;
        }
        if let Some(v) = self.exit_bonus {
            cfg.exit_bonus = v;
        }
        if let Some(v) = self.step_limit {
            cfg.step_limit = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses an ASCII map. Every adversary uses `movement`.
pub fn parse_map(text: &str, movement: Movement) -> Result<GameConfig> {
    let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.chars().count());
    if height == 0 || rows.iter().any(|r| r.chars().count() != width) {
        return Err(Error::InvalidConfig("map rows must be non-empty and equally long".into()));
    }
    let (mut start, mut exit) = (None, None);
    let mut rewards = Vec::new();
    let mut guards = Vec::new();
    for (r, line) in rows.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            let here = Cell::new(r, c);
            let slot = match ch {
                'A' => &mut start,
                'X' => &mut exit,
                'R' => {
                    rewards.push(here);
                    continue;
                }
                'a' => {
                    guards.push(here);
                    continue;
                }
                '.' => continue,
                other => {
                    return Err(Error::InvalidConfig(format!("unexpected map symbol '{other}' at {here}")))
                }
            };
            if slot.replace(here).is_some() {
                return Err(Error::InvalidConfig(format!("map has more than one '{ch}'")));
            }
        }
    }
    let start = start.ok_or_else(|| Error::InvalidConfig("map has no start 'A'".into()))?;
    let exit = exit.ok_or_else(|| Error::InvalidConfig("map has no exit 'X'".into()))?;
    let mut cfg = GameConfig::empty(width, height, start, exit);
    for &r in &rewards {
        cfg.add_reward(r);
    }
    for g in guards {
        let owners: Vec<usize> = (0..rewards.len())
            .filter(|&k| {
                let rc = rewards[k];
                g != rc && rc.row.abs_diff(g.row) <= 1 && rc.col.abs_diff(g.col) <= 1
            })
            .collect();
        let [k] = owners[..] else {
            return Err(Error::InvalidConfig(format!(
                "adversary at {g} must touch exactly one reward"
            )));
        };
        cfg.add_adversary(k, movement, 0)?;
        let adv = cfg.adversaries.last_mut().expect("just added");
        adv.start_index = adv.index_of(g).expect("touching cell lies on the ring");
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    #[serde(default = "default_name")]
    name: String,
    method: Method,
    #[serde(default = "default_reps")]
    replications: usize,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "default_true")]
    timing: bool,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_reps() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    experiment: ExperimentSection,
    game: GameSection,
    #[serde(default)]
    tabular: TabularParams,
    #[serde(default)]
    dqn: DqnParams,
    #[serde(default)]
    online: OnlineParams,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub method: Method,
    pub replications: usize,
    /// Replication `i` is seeded with `base_seed + i`.
    pub base_seed: u64,
    /// When false, all wall-time columns are written as 0 so reruns produce
    /// identical files.
    pub timing: bool,
    pub game: GameConfig,
    pub tabular: TabularParams,
    pub dqn: DqnParams,
    pub online: OnlineParams,
}

impl ExperimentSpec {
    pub fn new(name: impl Into<String>, method: Method, game: GameConfig, replications: usize) -> Self {
        ExperimentSpec {
            name: name.into(),
            method,
            replications,
            base_seed: 0,
            timing: true,
            game,
            tabular: TabularParams::default(),
            dqn: DqnParams::default(),
            online: OnlineParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParams("replications must be positive".into()));
        }
        self.game.validate()?;
        match self.method {
            Method::Tabular => self.tabular.validate(),
            Method::Dqn => self.dqn.validate(),
            Method::Online => self.online.validate(),
        }
    }

    /// Parses a spec document; `origin` names it in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            msg: e.to_string(),
        })?;
        let spec = ExperimentSpec {
            name: raw.experiment.name,
            method: raw.experiment.method,
            replications: raw.experiment.replications,
            base_seed: raw.experiment.base_seed,
            timing: raw.experiment.timing,
            game: raw.game.build()?,
            tabular: raw.tabular,
            dqn: raw.dqn,
            online: raw.online,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
