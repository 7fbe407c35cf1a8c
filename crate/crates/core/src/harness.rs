//! Replication batches, metrics and CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentSpec, Method};
use crate::deep_q::run_dqn_replication;
use crate::error::{Error, Result};
use crate::grid_env::{GameConfig, Movement, Status};
use crate::online_opt::online_loop;
use crate::seeding::Streams;
use crate::tabular_q::run_tabular_trial;

/// Environment variable naming the directory results are written to.
pub const OUT_DIR_VAR: &str = "REWARDGRID_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "results";

pub const SUMMARY_HEADER: &str = "method,movement,n_obs,successes,replications,avg_reward,avg_regret,wall_time_s";
pub const CURVE_HEADER: &str = "n_obs,success_prob";

/// Output directory: `explicit` if given, else `$REWARDGRID_OUT_DIR`, else
/// `results`.
pub fn out_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Label for the adversaries' movement in reports.
pub fn movement_label(config: &GameConfig) -> String {
    match config.movement() {
        Some(m) => m.to_string(),
        None if config.adversaries.is_empty() => "none".into(),
        None => "mixed".into(),
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: Method,
    pub movement: String,
    pub n_obs: Option<usize>,
    pub replication: usize,
    pub seed: u64,
    pub success: bool,
    /// Winning score (tabular: mean greedy rollout score of a winning policy).
    pub score: Option<f64>,
    pub regret: Option<f64>,
    pub steps: Option<usize>,
    pub epochs_used: Option<usize>,
    pub train_wins: Option<usize>,
    pub train_optimal_wins: Option<usize>,
    /// Tabular only: greedy policy is winning and optimal.
    pub optimal_policy: Option<bool>,
    /// The final episode ended in capture; not tracked for tabular trials.
    pub captured: Option<bool>,
    pub nodes: Option<u64>,
    pub wall_time_s: f64,
    pub observe_time_s: Option<f64>,
    pub solve_time_s: Option<f64>,
}

/// Aggregate over one batch of replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub movement: String,
    pub n_obs: Option<usize>,
    pub successes: usize,
    pub replications: usize,
    /// Mean score over successful runs; `None` when nothing succeeded.
    pub avg_reward: Option<f64>,
    pub avg_regret: Option<f64>,
    pub wall_time_s: f64,
}

impl SummaryRow {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidParams("no records to summarise".into()))?;
        let wins: Vec<&RunRecord> = records.iter().filter(|r| r.success).collect();
        let mean = |f: fn(&RunRecord) -> Option<f64>| {
            (!wins.is_empty()).then(|| wins.iter().filter_map(|r| f(r)).sum::<f64>() / wins.len() as f64)
        };
        Ok(SummaryRow {
            method: first.method,
            movement: first.movement.clone(),
            n_obs: first.n_obs,
            successes: wins.len(),
            replications: records.len(),
            avg_reward: mean(|r| r.score),
            avg_regret: mean(|r| r.regret),
            wall_time_s: records.iter().map(|r| r.wall_time_s).sum(),
        })
    }

    pub fn success_prob(&self) -> f64 {
        self.successes as f64 / self.replications as f64
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.movement,
            self.n_obs.map_or_else(|| "NA".to_string(), |n| n.to_string()),
            self.successes,
            self.replications,
            opt(self.avg_reward),
            opt(self.avg_regret),
            self.wall_time_s
        )
    }
}

/// Result of one experiment spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub summary: SummaryRow,
    pub records: Vec<RunRecord>,
}

fn secs(d: Duration, timing: bool) -> f64 {
    if timing {
        d.as_secs_f64()
    } else {
        0.0
    }
}

/// Runs replication `i` of `spec`.
pub fn run_replication(spec: &ExperimentSpec, i: usize, optimal: i64) -> Result<RunRecord> {
    let seed = spec.base_seed.wrapping_add(i as u64);
    let mut streams = Streams::new(seed);
    let mut rec = RunRecord {
        method: spec.method,
        movement: movement_label(&spec.game),
        n_obs: None,
        replication: i,
        seed,
        success: false,
        score: None,
        regret: None,
        steps: None,
        epochs_used: None,
        train_wins: None,
        train_optimal_wins: None,
        optimal_policy: None,
        captured: None,
        nodes: None,
        wall_time_s: 0.0,
        observe_time_s: None,
        solve_time_s: None,
    };
    let clock = Instant::now();
    match spec.method {
        Method::Tabular => {
            let trial = run_tabular_trial(&spec.game, &spec.tabular, &mut streams.agent, &mut streams.adversary)?;
            rec.success = trial.winning();
            rec.optimal_policy = Some(trial.optimal());
            rec.epochs_used = Some(trial.stats.epochs.len());
            rec.train_wins = Some(trial.stats.wins());
            rec.train_optimal_wins = Some(trial.stats.optimal_wins());
            if rec.success {
                let score = trial.mean_score();
                rec.score = Some(score);
                rec.regret = Some(optimal as f64 - score);
                rec.steps = trial.evaluation.steps.first().copied();
            }
        }
        Method::Dqn => {
            let r = run_dqn_replication(&spec.game, &spec.dqn, &mut streams.agent, &mut streams.adversary, None)?;
            rec.success = r.success;
            rec.score = r.winning_score.map(|s| s as f64);
            rec.regret = r.regret.map(|s| s as f64);
            rec.steps = r.winning_steps;
            rec.epochs_used = Some(r.epochs_used);
            rec.captured = Some(r.last_status == Status::Captured);
        }
        Method::Online => {
            let ep = online_loop(&spec.game, &spec.online, &mut streams.adversary)?;
            rec.n_obs = Some(spec.online.n_obs);
            rec.success = ep.won();
            rec.captured = Some(ep.status == Status::Captured);
            rec.steps = Some(ep.steps);
            rec.nodes = Some(ep.nodes);
            rec.observe_time_s = Some(secs(ep.observe_time, spec.timing));
            rec.solve_time_s = Some(secs(ep.solve_time, spec.timing));
            if rec.success {
                rec.score = Some(ep.score as f64);
                rec.regret = Some((optimal - ep.score) as f64);
            }
        }
    }
    rec.wall_time_s = secs(clock.elapsed(), spec.timing);
    Ok(rec)
}

/// Runs every replication of `spec` in parallel; records come back in
/// replication order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let optimal = spec.game.optimal_score()?;
    let records = (0..spec.replications)
        .into_par_iter()
        .map(|i| run_replication(spec, i, optimal))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        name: spec.name.clone(),
        summary: SummaryRow::from_records(&records)?,
        records,
    })
}

/// Runs an online spec once per observation count.
pub fn run_sweep(spec: &ExperimentSpec, n_obs: &[usize]) -> Result<Vec<ExperimentResult>> {
    if spec.method != Method::Online {
        return Err(Error::InvalidParams("sweeps vary n_obs and need method = \"online\"".into()));
    }
    n_obs
        .iter()
        .map(|&n| {
            let mut s = spec.clone();
            s.online.n_obs = n;
            s.name = format!("{}-obs{n}", spec.name);
            run_experiment(&s)
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn records_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::InvalidParams(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidParams(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `n_obs,success_prob` lines sorted by observation count. Rows without an
/// observation count are skipped.
pub fn curve_csv(rows: &[SummaryRow]) -> String {
    let mut pts: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|r| r.n_obs.map(|n| (n, r.success_prob())))
        .collect();
    pts.sort_by_key(|p| p.0);
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for (n, p) in pts {
        let _ = writeln!(s, "{n},{p}");
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<name>_summary.csv` and `<name>_runs.csv` (and `<name>_curve.csv`
/// when rows span several observation counts) under `dir`. Returns the paths.
pub fn write_results(dir: &Path, name: &str, results: &[ExperimentResult]) -> Result<Vec<PathBuf>> {
    let rows: Vec<SummaryRow> = results.iter().map(|r| r.summary.clone()).collect();
    let records: Vec<RunRecord> = results.iter().flat_map(|r| r.records.clone()).collect();
    let mut written = Vec::new();
    let summary = dir.join(format!("{name}_summary.csv"));
    write_file(&summary, &summary_csv(&rows))?;
    written.push(summary);
    let runs = dir.join(format!("{name}_runs.csv"));
    write_file(&runs, &records_csv(&records)?)?;
    written.push(runs);
    let mut obs: Vec<usize> = rows.iter().filter_map(|r| r.n_obs).collect();
    obs.sort_unstable();
    obs.dedup();
    if obs.len() > 1 {
        let curve = dir.join(format!("{name}_curve.csv"));
        write_file(&curve, &curve_csv(&rows))?;
        written.push(curve);
    }
    Ok(written)
}

const MOVEMENTS: [Movement; 3] = [Movement::Clockwise, Movement::Counterclockwise, Movement::Random];
const SWEEP: [usize; 4] = [10, 25, 50, 75];

/// Built-in experiment batches, numbered 1-8. `reps` overrides the
/// replication count (defaults: 10 tabular trials, 50 DQN / online runs, 5
/// for the 9x9 DQN).
pub fn table_specs(id: u32, reps: Option<usize>) -> Result<Vec<ExperimentSpec>> {
    let five = GameConfig::five_by_five;
    let nine = GameConfig::nine_by_nine;
    let make = |method: Method, game: GameConfig, default_reps: usize, tag: String| {
        let mut s = ExperimentSpec::new(format!("table{id}-{tag}"), method, game, reps.unwrap_or(default_reps));
        s.base_seed = 0;
        s
    };
    let specs = match id {
        1 => MOVEMENTS
            .iter()
            .map(|&m| make(Method::Tabular, five(m), 10, m.to_string()))
            .collect(),
        2 => MOVEMENTS.iter().map(|&m| make(Method::Dqn, five(m), 50, m.to_string())).collect(),
        3 => MOVEMENTS[..2]
            .iter()
            .map(|&m| make(Method::Online, five(m), 50, m.to_string()))
            .collect(),
        4 | 8 => {
            let game = if id == 4 { five(Movement::Random) } else { nine(Movement::Random) };
            SWEEP
                .iter()
                .map(|&n| {
                    let mut s = make(Method::Online, game.clone(), 50, format!("random-obs{n}"));
                    s.online.n_obs = n;
                    s
                })
                .collect()
        }
        5 => {
            let mut v = Vec::new();
            for epochs in [2500, 5000] {
                for &m in &MOVEMENTS {
                    let mut s = make(Method::Tabular, nine(m), 10, format!("{m}-{epochs}"));
                    s.tabular.epochs = epochs;
                    v.push(s);
                }
            }
            v
        }
        6 => MOVEMENTS.iter().map(|&m| make(Method::Dqn, nine(m), 5, m.to_string())).collect(),
        7 => MOVEMENTS[..2]
            .iter()
            .map(|&m| make(Method::Online, nine(m), 50, m.to_string()))
            .collect(),
        _ => return Err(Error::InvalidParams(format!("no table {id}; batches are 1-8"))),
    };
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::Cell;

    #[test]
    fn trivial_game_summary() {
        let game = GameConfig::empty(2, 1, Cell::new(0, 0), Cell::new(0, 1));
        let mut spec = ExperimentSpec::new("tiny", Method::Online, game, 1);
        spec.timing = false;
        let res = run_experiment(&spec).unwrap();
        assert_eq!(res.summary.successes, 1);
        assert_eq!(res.summary.avg_reward, Some(100.0));
        assert_eq!(res.summary.avg_regret, Some(0.0));
        assert_eq!(res.summary.csv_line(), "online,none,8,1,1,100,0,0");
    }

    #[test]
    fn no_success_renders_na() {
        let row = SummaryRow {
            method: Method::Dqn,
            movement: "random".into(),
            n_obs: None,
            successes: 0,
            replications: 2,
            avg_reward: None,
            avg_regret: None,
            wall_time_s: 1.5,
        };
        assert_eq!(row.csv_line(), "dqn,random,NA,0,2,NA,NA,1.5");
    }

    #[test]
    fn curve_is_sorted() {
        let row = |n, s| SummaryRow {
            method: Method::Online,
            movement: "random".into(),
            n_obs: Some(n),
            successes: s,
            replications: 4,
            avg_reward: None,
            avg_regret: None,
            wall_time_s: 0.0,
        };
        let c = curve_csv(&[row(50, 3), row(10, 1), row(25, 2)]);
        assert_eq!(c, "n_obs,success_prob\n10,0.25\n25,0.5\n50,0.75\n");
    }

    #[test]
    fn tables_exist() {
        for id in 1..=8 {
            let specs = table_specs(id, Some(1)).unwrap();
            assert!(!specs.is_empty());
            for s in &specs {
                s.validate().unwrap();
            }
        }
        assert!(table_specs(9, None).is_err());
        assert_eq!(table_specs(6, None).unwrap()[0].replications, 5);
    }
}
