//! Reproducible experiment sweeps and their CSV output.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::{attack_with_phi, build_phi_with};
use crate::defense::{defend_unknown, DEFAULT_TOL, LOOSE_TOL};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::{Mdp, RewardVector};
use crate::par::{self, Exec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_EPS_ATTACK: f64 = 0.1;
pub const DEFAULT_EPS_DEFENSE: f64 = 0.2;
pub const DEFAULT_SIGMA_GRID: [f64; 6] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2];
pub const DEFAULT_HEATMAP_GRID: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
pub const DEFAULT_BENCH_SIZES: [usize; 7] = [4, 10, 20, 30, 50, 70, 100];

/// Values for the trailing comment line of every CSV file.
#[derive(Clone, Debug, Default)]
pub struct Metadata {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

/// Writes `records` as CSV with a header row, then `# seed=.. tol=.. version=..`.
pub fn write_csv<W: Write, T: Serialize>(mut out: W, records: &[T], meta: &Metadata) -> Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let seed = meta.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    let tol = meta.tol.map_or_else(|| "none".to_string(), |t| t.to_string());
    writeln!(out, "# seed={seed} tol={tol} version={VERSION}")?;
    Ok(())
}

fn score_det(mdp: &Mdp, pi: &crate::DeterministicPolicy, r: &RewardVector) -> Result<f64> {
    mdp.deterministic_score(pi, r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub reward: String,
    pub optimal: f64,
    pub target: f64,
    pub defense: f64,
}

/// Scores of the true-optimal, target and defense policies under the true
/// and the poisoned reward.
pub fn table1(env: Environment, eps_attack: f64, eps_defense: f64, tol: f64, exec: Exec) -> Result<Vec<Table1Row>> {
    let mdp = env.mdp()?;
    let target = env.target();
    let truth = mdp.reward().clone();
    let phi = build_phi_with(&mdp, &target, exec)?;
    let poisoned = attack_with_phi(&phi, &truth, eps_attack)?.poisoned;
    let defense = defend_unknown(&mdp, &phi, &poisoned, eps_defense, tol)?;
    let (best, _) = mdp.optimal_policy(&truth)?;
    [("true", &truth), ("poisoned", &poisoned)]
        .into_iter()
        .map(|(name, r)| {
            Ok(Table1Row {
                reward: name.to_string(),
                optimal: score_det(&mdp, &best, r)?,
                target: score_det(&mdp, &target, r)?,
                defense: mdp.score(&defense.policy, r)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub eps_attack: f64,
    pub eps_defense: f64,
    pub score_true: f64,
    pub score_poisoned: f64,
    pub delta_hat: f64,
    pub defense_is_target: bool,
}

/// Attack with each `eps_attack`, defend with each `eps_defense` bound, and
/// score the defense policy. Cells come out sorted by `(eps_attack,
/// eps_defense)` in grid order.
pub fn heatmap(env: Environment, attack_grid: &[f64], defense_grid: &[f64], tol: f64, exec: Exec) -> Result<Vec<HeatmapCell>> {
    let mdp = env.mdp()?;
    let target = env.target();
    let phi = build_phi_with(&mdp, &target, exec)?;
    let poisoned = par::try_map(exec, attack_grid, |&ea| Ok::<_, Error>(attack_with_phi(&phi, mdp.reward(), ea)?.poisoned))?;
    let cells: Vec<(usize, f64)> =
        (0..attack_grid.len()).flat_map(|i| defense_grid.iter().map(move |&ed| (i, ed))).collect();
    par::try_map(exec, &cells, |&(i, ed)| {
        let d = defend_unknown(&mdp, &phi, &poisoned[i], ed, tol)?;
        Ok(HeatmapCell {
            eps_attack: attack_grid[i],
            eps_defense: ed,
            score_true: mdp.score(&d.policy, mdp.reward())?,
            score_poisoned: d.worst_case_score,
            delta_hat: d.delta_hat,
            defense_is_target: d.policy.as_deterministic().as_ref() == Some(&target),
        })
    })
}

/// Where the Gaussian noise enters the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Noise on the true reward before the attack.
    Pre,
    /// Noise on the poisoned reward after the attack.
    Post,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(NoiseMode::Pre),
            "post" => Ok(NoiseMode::Post),
            _ => Err(Error::InvalidArgument(format!("mode must be 'pre' or 'post', got '{s}'"))),
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::Pre => "pre",
            NoiseMode::Post => "post",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RobustnessConfig {
    pub mode: NoiseMode,
    pub sigmas: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub eps_attack: f64,
    pub tol: f64,
    pub loose_tol: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            mode: NoiseMode::Pre,
            sigmas: DEFAULT_SIGMA_GRID.to_vec(),
            runs: 100,
            seed: 0,
            eps_attack: DEFAULT_EPS_ATTACK,
            tol: DEFAULT_TOL,
            loose_tol: LOOSE_TOL,
        }
    }
}

/// True scores of one run: the undefended agent (optimal under its input),
/// the defense, and the loose-tolerance defense.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub target: f64,
    pub defense: f64,
    pub defense_plus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub sigma: f64,
    pub runs: Vec<RunScores>,
}

/// One CSV row; summary rows carry `mean` or `stderr` in the run column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub mode: String,
    pub sigma: f64,
    pub run: String,
    pub policy_variant: String,
    pub score_true: f64,
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn add_noise(r: &RewardVector, sigma: f64, rng: &mut ChaCha8Rng) -> Result<RewardVector> {
    if sigma == 0.0 {
        return Ok(r.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise: Vec<f64> = (0..r.as_slice().len()).map(|_| normal.sample(rng)).collect();
    Ok(r.add_scaled(&noise, 1.0))
}

/// Robustness of the defense to reward noise. Run `i` draws its noise from a
/// generator seeded with `seed + i`, so every sigma sees the same stream.
pub fn robustness(env: Environment, cfg: &RobustnessConfig, exec: Exec) -> Result<Vec<RobustnessPoint>> {
    if cfg.runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let mdp = env.mdp()?;
    let truth = mdp.reward().clone();
    let target = env.target();
    let phi = build_phi_with(&mdp, &target, Exec::Sequential)?;
    let clean_attack = attack_with_phi(&phi, &truth, cfg.eps_attack)?.poisoned;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.sigmas.len()).flat_map(|k| (0..cfg.runs).map(move |i| (k, i))).collect();
    let scores = par::try_map(exec, &jobs, |&(k, i)| {
        let sigma = cfg.sigmas[k];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let observed = match cfg.mode {
            NoiseMode::Pre => attack_with_phi(&phi, &add_noise(&truth, sigma, &mut rng)?, cfg.eps_attack)?.poisoned,
            NoiseMode::Post => add_noise(&clean_attack, sigma, &mut rng)?,
        };
        // The defender treats whatever is optimal under its input as the
        // attacker's target.
        let (apparent, _) = mdp.optimal_policy(&observed)?;
        let phi_obs = if apparent == target { phi.clone() } else { build_phi_with(&mdp, &apparent, Exec::Sequential)? };
        let tight = defend_unknown(&mdp, &phi_obs, &observed, f64::INFINITY, cfg.tol)?;
        let loose = defend_unknown(&mdp, &phi_obs, &observed, f64::INFINITY, cfg.loose_tol)?;
        Ok::<_, Error>(RunScores {
            target: mdp.deterministic_score(&apparent, &truth)?,
            defense: mdp.score(&tight.policy, &truth)?,
            defense_plus: mdp.score(&loose.policy, &truth)?,
        })
    })?;
    Ok(cfg
        .sigmas
        .iter()
        .enumerate()
        .map(|(k, &sigma)| RobustnessPoint { sigma, runs: scores[k * cfg.runs..(k + 1) * cfg.runs].to_vec() })
        .collect())
}

/// Flattens robustness results into CSV rows, per-run rows first, then
/// mean and standard-error rows for each sigma and variant.
pub fn robustness_rows(mode: NoiseMode, points: &[RobustnessPoint]) -> Vec<RobustnessRow> {
    type Getter = fn(&RunScores) -> f64;
    let variants: [(&str, Getter); 3] =
        [("target", |r| r.target), ("defense", |r| r.defense), ("defense_plus", |r| r.defense_plus)];
    let mut rows = Vec::new();
    let row = |sigma: f64, run: String, variant: &str, score: f64| RobustnessRow {
        mode: mode.to_string(),
        sigma,
        run,
        policy_variant: variant.to_string(),
        score_true: score,
    };
    for p in points {
        for (i, r) in p.runs.iter().enumerate() {
            for (name, get) in &variants {
                rows.push(row(p.sigma, i.to_string(), name, get(r)));
            }
        }
    }
    for p in points {
        for (name, get) in &variants {
            let xs: Vec<f64> = p.runs.iter().map(get).collect();
            let (mean, se) = mean_stderr(&xs);
            rows.push(row(p.sigma, "mean".into(), name, mean));
            rows.push(row(p.sigma, "stderr".into(), name, se));
        }
    }
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Attack,
    Defense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_states: usize,
    pub phase: Phase,
    pub mean_seconds: f64,
    pub stderr: f64,
}

/// Minimum wall-clock length of one timing sample; fast solves are repeated
/// until a sample lasts at least this long.
pub const MIN_SAMPLE_SECONDS: f64 = 0.05;

/// A timed closure, repeated enough times per sample to last
/// `MIN_SAMPLE_SECONDS`.
struct Timed<F> {
    f: F,
    reps: usize,
    times: Vec<f64>,
}

impl<T, F: FnMut() -> Result<T>> Timed<F> {
    /// One untimed warm-up call, which also fixes the repetition count.
    fn calibrate(mut f: F) -> Result<Self> {
        let start = Instant::now();
        f()?;
        let once = start.elapsed().as_secs_f64().max(1e-9);
        let reps = (MIN_SAMPLE_SECONDS / once).ceil().clamp(1.0, 1e6) as usize;
        Ok(Timed { f, reps, times: Vec::new() })
    }

    fn sample(&mut self) -> Result<()> {
        let start = Instant::now();
        for _ in 0..self.reps {
            std::hint::black_box((self.f)()?);
        }
        self.times.push(start.elapsed().as_secs_f64() / self.reps as f64);
        Ok(())
    }
}

/// Wall-clock time of the attack and of the defense on chains of the given
/// sizes. The attack solves from the true reward, the defense from the
/// poisoned one; the occupancy differences are built once per size, untimed.
/// Each of the `runs` samples averages over enough repeated solves to last
/// `MIN_SAMPLE_SECONDS`.
pub fn bench(sizes: &[usize], eps_attack: f64, eps_defense: f64, runs: usize, exec: Exec) -> Result<Vec<BenchRow>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let mut rows = Vec::new();
    for &n in sizes {
        let env = Environment::Chain(n);
        let mdp = env.mdp()?;
        let phi = build_phi_with(&mdp, &env.target(), exec)?;
        let poisoned = attack_with_phi(&phi, mdp.reward(), eps_attack)?.poisoned;
        let mut attack = Timed::calibrate(|| attack_with_phi(&phi, mdp.reward(), eps_attack))?;
        let mut defense = Timed::calibrate(|| defend_unknown(&mdp, &phi, &poisoned, eps_defense, DEFAULT_TOL))?;
        // Alternate the phases so slow periods hit both alike.
        for _ in 0..runs {
            attack.sample()?;
            defense.sample()?;
        }
        for (phase, times) in [(Phase::Attack, attack.times), (Phase::Defense, defense.times)] {
            log::debug!("chain({n}) {phase:?}: {times:?}");
            let (mean, stderr) = mean_stderr(&times);
            rows.push(BenchRow { n_states: n, phase, mean_seconds: mean, stderr });
        }
    }
    Ok(rows)
}
