use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rewardgrid::config::ExperimentSpec;
use rewardgrid::harness::{self, ExperimentResult};
use rewardgrid::online_opt::{observe_adversaries, propagate_risk, solve_plan};
use rewardgrid::seeding::{stream, Streams};
use rewardgrid::{oracles, Error};

#[derive(Parser)]
#[command(name = "rewardgrid", version, about = "Run grid-game agents and write result tables")]
struct Cli {
    /// Output directory (default: $REWARDGRID_OUT_DIR, else ./results)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write 0 for every timing column so reruns give identical files
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment spec
    Run { spec: PathBuf },
    /// Run an online spec once per observation count and write a success curve
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        n_obs: Vec<usize>,
        spec: PathBuf,
    },
    /// Run one of the built-in experiment batches (1-8)
    Table {
        id: u32,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Check backprop, the route solver and risk propagation against slow references
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
    /// Print the first plan of an online spec as a t,row,col trace
    Plan {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path, no_timing: bool) -> rewardgrid::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if no_timing {
        spec.timing = false;
    }
    Ok(spec)
}

fn report(out: &Path, name: &str, results: &[ExperimentResult]) -> rewardgrid::Result<()> {
    let rows: Vec<_> = results.iter().map(|r| r.summary.clone()).collect();
    print!("{}", harness::summary_csv(&rows));
    for p in harness::write_results(out, name, results)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn oracle_check(seed: u64, instances: usize) -> rewardgrid::Result<bool> {
    let mut rng = stream(seed, 0);
    let grads = oracles::random_gradient_checks(20, &mut rng)?;
    let worst = grads.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    let grad_ok = worst <= 1e-4;
    println!("gradient: 20 networks, worst relative error {worst:.3e} {}", verdict(grad_ok));

    let exact = oracles::solver_exactness(instances, &mut rng);
    println!(
        "solver: {} instances ({} feasible), {} mismatches {}",
        exact.instances,
        exact.feasible,
        exact.mismatches,
        verdict(exact.passed())
    );

    let game = rewardgrid::GameConfig::five_by_five(rewardgrid::Movement::Random);
    let (models, pos) = observe_adversaries(&game, &[0], 25, &mut rng)?;
    let risk = propagate_risk(&game, &models, &pos, 0, 10)?;
    let mut risk_err: f64 = 0.0;
    for k in 0..=10 {
        let reference = oracles::matrix_power_distribution(models[0].matrix(), pos[0], k);
        let got = risk.adversary_distribution(0, k).expect("within horizon");
        for (a, b) in reference.iter().zip(got) {
            risk_err = risk_err.max((a - b).abs());
        }
    }
    let risk_ok = risk_err <= 1e-12;
    println!("risk: max deviation from matrix powers {risk_err:.3e} {}", verdict(risk_ok));
    Ok(grad_ok && exact.passed() && risk_ok)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn run(cli: Cli) -> rewardgrid::Result<bool> {
    let out = harness::out_dir(cli.out.as_deref());
    match cli.command {
        Command::Run { spec } => {
            let spec = load(&spec, cli.no_timing)?;
            let res = harness::run_experiment(&spec)?;
            report(&out, &spec.name, &[res])?;
        }
        Command::Sweep { n_obs, spec } => {
            let spec = load(&spec, cli.no_timing)?;
            let res = harness::run_sweep(&spec, &n_obs)?;
            report(&out, &spec.name, &res)?;
        }
        Command::Table { id, reps } => {
            let mut results = Vec::new();
            for mut spec in harness::table_specs(id, reps)? {
                spec.timing = !cli.no_timing;
                eprintln!("running {} ({} replications)", spec.name, spec.replications);
                results.push(harness::run_experiment(&spec)?);
            }
            report(&out, &format!("table{id}"), &results)?;
        }
        Command::OracleCheck { seed, instances } => return oracle_check(seed, instances),
        Command::Plan { spec, seed } => {
            let spec = load(&spec, cli.no_timing)?;
            let game = &spec.game;
            let mut state = game.new_game()?;
            let mut streams = Streams::new(seed);
            let (models, pos) = observe_adversaries(game, &state.adversaries, spec.online.n_obs, &mut streams.adversary)?;
            state.adversaries = pos;
            let horizon = spec.online.lookahead_for(game);
            let risk = propagate_risk(game, &models, &state.adversaries, 0, horizon)?;
            let (plan, stats) = solve_plan(game, &state, &risk, spec.online.phi, horizon)?;
            print!("{}", plan.trace());
            eprintln!("objective {} nodes {} root bound {}", plan.objective, stats.nodes, stats.root_bound);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::Parse { .. } | Error::InvalidConfig(_) | Error::InvalidParams(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
