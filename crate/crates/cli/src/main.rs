use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use poisondef::analysis::{influence_bounds, InfluenceReport};
use poisondef::attack::{attack_with_phi, build_phi_with, verify_kkt, AttackResult, KktReport};
use poisondef::defense::{defend_known, defend_unknown, DefenseResult, DEFAULT_TOL};
use poisondef::envs::Environment;
use poisondef::experiments::{
    self, Metadata, NoiseMode, RobustnessConfig, DEFAULT_BENCH_SIZES, DEFAULT_EPS_ATTACK, DEFAULT_EPS_DEFENSE,
    DEFAULT_HEATMAP_GRID, DEFAULT_SIGMA_GRID,
};
use poisondef::{DeterministicPolicy, Exec, Mdp, RewardVector};

#[derive(Parser)]
#[command(name = "poisondef", version, about = "Reward-poisoning attacks and defenses on tabular MDPs")]
struct Cli {
    /// Run sweeps on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poison the reward so the target policy wins by a margin.
    Attack {
        #[command(flatten)]
        input: MdpInput,
        #[arg(long, default_value_t = DEFAULT_EPS_ATTACK)]
        eps_attack: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the defense policy from a poisoned reward.
    Defend {
        #[command(flatten)]
        input: MdpInput,
        /// Poisoned reward: a row table or the JSON written by `attack`.
        /// Without it the attack is run on the MDP's reward first.
        #[arg(long)]
        rhat_file: Option<PathBuf>,
        /// Known attack margin (used alone: known-parameter mode).
        #[arg(long)]
        eps_attack: Option<f64>,
        /// Upper bound on the attack margin; `inf` defends with the observed margin.
        #[arg(long)]
        eps_defense: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Influence of the attack on the target and defense policies, with bounds.
    Analyze {
        #[command(flatten)]
        input: MdpInput,
        #[arg(long, default_value_t = DEFAULT_EPS_ATTACK)]
        eps_attack: f64,
        #[arg(long)]
        eps_defense: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scores of the optimal, target and defense policies under both rewards.
    Table1 {
        #[arg(long, default_value = "chain")]
        env: Environment,
        #[arg(long, default_value_t = DEFAULT_EPS_ATTACK)]
        eps_attack: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_DEFENSE)]
        eps_defense: f64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Defense score over a grid of attack and defense margins.
    Heatmap {
        #[arg(long)]
        env: Environment,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HEATMAP_GRID)]
        eps_attack_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HEATMAP_GRID)]
        eps_defense_grid: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Defense under Gaussian reward noise before or after the attack.
    Robustness {
        #[arg(long)]
        env: Environment,
        #[arg(long, default_value = "pre")]
        mode: NoiseMode,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIGMA_GRID)]
        sigma_grid: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_ATTACK)]
        eps_attack: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack and defense solve times on chains of several sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BENCH_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_EPS_ATTACK)]
        eps_attack: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_DEFENSE)]
        eps_defense: f64,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a built-in environment in the MDP JSON format.
    ExportEnv {
        #[arg(long)]
        env: Environment,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MdpInput {
    /// Built-in environment: chain, chain-N, navigation, gridworld.
    #[arg(long, conflicts_with = "mdp_file", required_unless_present = "mdp_file")]
    env: Option<Environment>,
    #[arg(long)]
    mdp_file: Option<PathBuf>,
    /// JSON array of actions, one per state (defaults to the environment's target).
    #[arg(long)]
    target_policy_file: Option<PathBuf>,
}

/// Bad invocation that clap cannot detect (exit code 1).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Result that failed its own verification (exit code 2).
#[derive(Debug)]
struct Uncertified(String);

impl std::fmt::Display for Uncertified {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Uncertified {}

#[derive(Deserialize)]
#[serde(untagged)]
enum PolicyFile {
    Actions(Vec<usize>),
    Wrapped(DeterministicPolicy),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RewardFile {
    Rows(RewardVector),
    Attack { poisoned: RewardVector },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

impl MdpInput {
    fn mdp(&self) -> Result<Mdp> {
        match (&self.env, &self.mdp_file) {
            (Some(env), _) => Ok(env.mdp()?),
            (None, Some(path)) => {
                Mdp::from_json(&read(path)?).with_context(|| format!("invalid MDP file {}", path.display()))
            }
            (None, None) => Err(Usage("one of --env or --mdp-file is required".into()).into()),
        }
    }

    /// The policy file if given, else the environment's target, else `fallback`.
    fn target(&self, mdp: &Mdp, fallback: Option<&RewardVector>) -> Result<DeterministicPolicy> {
        let target = if let Some(path) = &self.target_policy_file {
            match serde_json::from_str(&read(path)?).with_context(|| format!("invalid policy file {}", path.display()))? {
                PolicyFile::Actions(a) => DeterministicPolicy::new(a),
                PolicyFile::Wrapped(p) => p,
            }
        } else if let Some(env) = &self.env {
            env.target()
        } else if let Some(r) = fallback {
            log::info!("no target policy given; using the optimal policy of the poisoned reward");
            mdp.optimal_policy(r)?.0
        } else {
            return Err(Usage("--target-policy-file is required with --mdp-file".into()).into());
        };
        target.validate(mdp.n_states(), mdp.n_actions())?;
        Ok(target)
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            Box::new(fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_csv<T: Serialize>(out: &Option<PathBuf>, rows: &[T], meta: Metadata) -> Result<()> {
    experiments::write_csv(sink(out)?, rows, &meta)?;
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    epsilon_hat: Option<f64>,
    tight_pairs: &'a [(usize, usize)],
    worst_case_score: f64,
    influence: InfluenceReport,
}

fn defend_with(
    mdp: &Mdp,
    phi: &poisondef::attack::OccupancyDiffMatrix,
    r_hat: &RewardVector,
    eps_attack: Option<f64>,
    eps_defense: Option<f64>,
    tol: f64,
) -> Result<DefenseResult> {
    Ok(match (eps_attack, eps_defense) {
        (Some(ea), None) => defend_known(mdp, phi, r_hat, ea, tol)?,
        (_, ed) => defend_unknown(mdp, phi, r_hat, ed.unwrap_or(f64::INFINITY), tol)?,
    })
}

fn certify(phi: &poisondef::attack::OccupancyDiffMatrix, r_prime: &RewardVector, res: &AttackResult) -> Result<KktReport> {
    Ok(verify_kkt(phi, &res.poisoned, r_prime, res.epsilon_used, &res.certificate.multipliers)?)
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Attack { input, eps_attack, out } => {
            let mdp = input.mdp()?;
            let target = input.target(&mdp, None)?;
            let phi = build_phi_with(&mdp, &target, exec)?;
            let res = attack_with_phi(&phi, mdp.reward(), eps_attack)?;
            let kkt = certify(&phi, mdp.reward(), &res)?;
            write_json(&out, &res)?;
            if !kkt.passed {
                return Err(Uncertified(format!("attack failed KKT verification: {kkt:?}")).into());
            }
            log::info!("attack certified, cost {:.6}", res.cost);
        }
        Command::Defend { input, rhat_file, eps_attack, eps_defense, tol, out } => {
            let mdp = input.mdp()?;
            let (r_hat, target) = match &rhat_file {
                Some(path) => {
                    let r = match serde_json::from_str(&read(path)?)
                        .with_context(|| format!("invalid reward file {}", path.display()))?
                    {
                        RewardFile::Rows(r) | RewardFile::Attack { poisoned: r } => r,
                    };
                    let target = input.target(&mdp, Some(&r))?;
                    (r, target)
                }
                None => {
                    let target = input.target(&mdp, None)?;
                    let phi = build_phi_with(&mdp, &target, exec)?;
                    let ea = eps_attack.unwrap_or(DEFAULT_EPS_ATTACK);
                    (attack_with_phi(&phi, mdp.reward(), ea)?.poisoned, target)
                }
            };
            let phi = build_phi_with(&mdp, &target, exec)?;
            let d = defend_with(&mdp, &phi, &r_hat, eps_attack, eps_defense, tol)?;
            write_json(&out, &d)?;
        }
        Command::Analyze { input, eps_attack, eps_defense, tol, out } => {
            let mdp = input.mdp()?;
            let target = input.target(&mdp, None)?;
            let phi = build_phi_with(&mdp, &target, exec)?;
            let attacked = attack_with_phi(&phi, mdp.reward(), eps_attack)?;
            let kkt = certify(&phi, mdp.reward(), &attacked)?;
            if !kkt.passed {
                return Err(Uncertified(format!("attack failed KKT verification: {kkt:?}")).into());
            }
            let known = if eps_defense.is_none() { Some(eps_attack) } else { None };
            let d = defend_with(&mdp, &phi, &attacked.poisoned, known, eps_defense, tol)?;
            let influence = influence_bounds(&mdp, &phi, mdp.reward(), &d)?;
            write_json(
                &out,
                &AnalyzeOutput {
                    epsilon_hat: d.epsilon_hat,
                    tight_pairs: &d.tight_set.pairs,
                    worst_case_score: d.worst_case_score,
                    influence,
                },
            )?;
        }
        Command::Table1 { env, eps_attack, eps_defense, tol, out } => {
            let rows = experiments::table1(env, eps_attack, eps_defense, tol, exec)?;
            write_csv(&out, &rows, Metadata { seed: None, tol: Some(tol) })?;
        }
        Command::Heatmap { env, eps_attack_grid, eps_defense_grid, tol, out } => {
            let cells = experiments::heatmap(env, &eps_attack_grid, &eps_defense_grid, tol, exec)?;
            write_csv(&out, &cells, Metadata { seed: None, tol: Some(tol) })?;
        }
        Command::Robustness { env, mode, sigma_grid, runs, seed, tol, eps_attack, out } => {
            if sigma_grid.iter().any(|s| s.is_nan() || *s < 0.0) {
                return Err(Usage("noise levels must be nonnegative".into()).into());
            }
            let cfg = RobustnessConfig { mode, sigmas: sigma_grid, runs, seed, eps_attack, tol, ..RobustnessConfig::default() };
            let points = experiments::robustness(env, &cfg, exec)?;
            write_csv(&out, &experiments::robustness_rows(mode, &points), Metadata { seed: Some(seed), tol: Some(tol) })?;
        }
        Command::Bench { sizes, eps_attack, eps_defense, runs, out } => {
            let rows = experiments::bench(&sizes, eps_attack, eps_defense, runs, exec)?;
            write_csv(&out, &rows, Metadata::default())?;
        }
        Command::ExportEnv { env, out } => {
            let mut w = sink(&out)?;
            writeln!(w, "{}", env.mdp()?.to_json()?)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<Usage>() {
        return 1;
    }
    if err.is::<Uncertified>() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<poisondef::Error>() {
            return match e {
                poisondef::Error::Io(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<io::Error>() {
            return 1;
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
