//! Command implementations behind the `csa` binary: scenario generation,
//! the two-stage solve, no-regret evaluation, and the sensitivity sweeps.
//! Every command is deterministic given its flags and seeds and emits
//! machine-readable JSON (plus CSV summaries for sweeps).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use csa_core::domain::{Scenario, ThetaBelief};
use csa_core::game::{
    self, solve_two_stage, write_trajectory_csv, EvolutionResult, SolverConfig, TwoStageSolution,
};
use csa_core::payoff::{discretize_theta, Evaluator, ThetaDiscretization};
use csa_core::scenario::{generate, load_scenario, save_scenario, scale_demand, GeneratorConfig};
use csa_core::travel::TravelProvider;

/// Convergence summary of one evolutionary-game layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceMeta {
    pub generations: usize,
    pub converged: bool,
    /// Maximal final population share per alliance.
    pub max_share: BTreeMap<String, f64>,
}

impl ConvergenceMeta {
    fn from_result(result: &EvolutionResult, alliance_ids: &[String]) -> Self {
        let max_share = alliance_ids
            .iter()
            .zip(&result.final_shares)
            .map(|(id, shares)| {
                let max = shares.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (id.clone(), max)
            })
            .collect();
        Self {
            generations: result.generations,
            converged: result.converged,
            max_share,
        }
    }
}

/// Per-alliance outcome at the solved prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllianceOutcome {
    /// Profit expectation, ¥. For theta sweeps this is the realized value
    /// under the true distribution.
    pub profit: f64,
    /// Mean price over the alliance's stations, ¥/kWh.
    pub mean_price: f64,
    /// Maximal expected demand of the alliance, kW.
    pub peak_demand_kw: f64,
}

/// Machine-readable result of one solve (or one sweep point).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    /// Sweep coordinate, absent for plain solves.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    /// Solved price per station id, ¥/kWh.
    pub prices: BTreeMap<String, f64>,
    pub alliances: BTreeMap<String, AllianceOutcome>,
    /// Sum of the per-alliance peak demands, kW.
    pub peak_load_kw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nis: Option<f64>,
    pub convergence: ConvergenceLayers,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceLayers {
    pub lower: ConvergenceMeta,
    pub upper: ConvergenceMeta,
}

/// Sweep families mirroring the case-study sensitivity analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Scale the number of charging requests.
    Demand,
    /// Replace one alliance's perceived theta mean with the factor value.
    Theta,
    /// Enable DR and scale every firm service level (and its prepaid
    /// incentive) by the factor.
    DrFil,
    /// Enable DR and scale every penalty price by the factor.
    DrPp,
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SweepKind::Demand => "demand",
            SweepKind::Theta => "theta",
            SweepKind::DrFil => "dr-fil",
            SweepKind::DrPp => "dr-pp",
        };
        f.write_str(name)
    }
}

impl FromStr for SweepKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "demand" => Ok(SweepKind::Demand),
            "theta" => Ok(SweepKind::Theta),
            "dr-fil" => Ok(SweepKind::DrFil),
            "dr-pp" => Ok(SweepKind::DrPp),
            other => bail!("unknown sweep kind '{other}'"),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} at {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {what} at {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Loads a solver config, falling back to defaults when no path is given.
pub fn load_solver_config(path: Option<&Path>) -> Result<SolverConfig> {
    match path {
        Some(p) => read_json(p, "solver config"),
        None => Ok(SolverConfig::default()),
    }
}

/// `generate`: synthesize a scenario from a generator config.
pub fn cmd_generate(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: GeneratorConfig = read_json(config, "generator config")?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let scenario = generate(&cfg)?;
    save_scenario(&scenario, out)?;
    log::info!(
        "generated {} EVs / {} stations -> {}",
        scenario.evs.len(),
        scenario.stations.len(),
        out.display()
    );
    Ok(())
}

fn belief_truth_discs(scenario: &Scenario) -> Vec<ThetaDiscretization> {
    scenario
        .alliances
        .iter()
        .map(|_| discretize_theta(&scenario.theta_truth))
        .collect()
}

/// Assembles a run result for solved prices: profits (optionally under the
/// true theta distribution), mean prices, and peak demands.
fn run_result(
    scenario: &Scenario,
    provider: &TravelProvider,
    solution: &TwoStageSolution,
    factor: Option<f64>,
    profits_under_truth: bool,
) -> Result<RunResult> {
    let evaluator = Evaluator::new(scenario, provider)?;
    let prices = &solution.upper.full_prices;
    let truth_discs = belief_truth_discs(scenario);

    let profits: Vec<f64> = if profits_under_truth {
        (0..scenario.alliances.len())
            .map(|k| evaluator.alliance_payoff_at(k, prices, &truth_discs[k]))
            .collect::<std::result::Result<_, _>>()?
    } else {
        solution.upper.payoffs.clone()
    };

    let alliance_ids: Vec<String> = scenario.alliances.iter().map(|a| a.id.clone()).collect();
    let mut alliances = BTreeMap::new();
    let mut peak_total = 0.0;
    for (k, alliance) in scenario.alliances.iter().enumerate() {
        let members = evaluator.members(k);
        let mean_price =
            members.iter().map(|&j| prices[j]).sum::<f64>() / members.len() as f64;
        let peak = evaluator.alliance_peak_demand(k, prices, &truth_discs[k]);
        peak_total += peak;
        alliances.insert(
            alliance.id.clone(),
            AllianceOutcome {
                profit: profits[k],
                mean_price,
                peak_demand_kw: peak,
            },
        );
    }

    let price_map = scenario
        .stations
        .iter()
        .zip(prices)
        .map(|(st, p)| (st.id.clone(), *p))
        .collect();

    Ok(RunResult {
        factor,
        prices: price_map,
        alliances,
        peak_load_kw: peak_total,
        nis: None,
        convergence: ConvergenceLayers {
            lower: ConvergenceMeta::from_result(&solution.lower.result, &alliance_ids),
            upper: ConvergenceMeta::from_result(&solution.upper.result, &alliance_ids),
        },
    })
}

/// Solves a scenario in memory, returning both the raw solution and its
/// reportable summary.
pub fn solve_scenario(
    scenario: &Scenario,
    provider: &TravelProvider,
    config: &SolverConfig,
) -> Result<(TwoStageSolution, RunResult)> {
    let solution = solve_two_stage(scenario, provider, config)?;
    let result = run_result(scenario, provider, &solution, None, false)?;
    Ok((solution, result))
}

/// `solve`: run the two-stage game on a scenario and write the result.
pub fn cmd_solve(
    scenario_path: &Path,
    solver_config: Option<&Path>,
    out: &Path,
    trajectory: Option<&Path>,
) -> Result<()> {
    let scenario = load_scenario(scenario_path)?;
    let config = load_solver_config(solver_config)?;
    let provider = TravelProvider::synthetic_default();

    let started = Instant::now();
    let (solution, result) = solve_scenario(&scenario, &provider, &config)?;
    log::info!(
        "two-stage solve finished in {:.2}s (lower {} gens, upper {} gens)",
        started.elapsed().as_secs_f64(),
        solution.lower.result.generations,
        solution.upper.result.generations,
    );

    write_json(out, &result)?;

    if let Some(trajectory_path) = trajectory {
        let alliance_ids: Vec<String> =
            scenario.alliances.iter().map(|a| a.id.clone()).collect();
        let file = fs::File::create(trajectory_path)
            .with_context(|| format!("cannot write {}", trajectory_path.display()))?;
        let mut writer = std::io::BufWriter::new(file);
        write_trajectory_csv(&solution.upper.result, &alliance_ids, &mut writer)?;
        writer.flush()?;
    }
    Ok(())
}

/// `nis`: score solved prices against sampled single-alliance deviations.
pub fn cmd_nis(
    scenario_path: &Path,
    result_path: &Path,
    samples: usize,
    seed: u64,
) -> Result<game::NisReport> {
    let scenario = load_scenario(scenario_path)?;
    let result: RunResult = read_json(result_path, "solve result")?;
    let provider = TravelProvider::synthetic_default();

    let prices: Vec<f64> = scenario
        .stations
        .iter()
        .map(|st| {
            result
                .prices
                .get(&st.id)
                .copied()
                .with_context(|| format!("result has no price for station '{}'", st.id))
        })
        .collect::<Result<_>>()?;

    let report = game::nis(&scenario, &provider, &prices, samples, seed)?;
    Ok(report)
}

/// One sweep point: the scenario variant to solve plus how to report it.
struct SweepPoint {
    factor: f64,
    scenario: Scenario,
    profits_under_truth: bool,
}

fn sweep_points(
    kind: SweepKind,
    factors: &[f64],
    base: &Scenario,
    misperceiver: Option<&str>,
) -> Result<Vec<SweepPoint>> {
    if factors.is_empty() {
        bail!("at least one factor is required");
    }
    if factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        bail!("factors must be positive");
    }
    match kind {
        SweepKind::Theta => {
            let Some(target) = misperceiver else {
                bail!("theta sweeps require --misperceiver <alliance-id>");
            };
            if base.alliance_index(target).is_none() {
                bail!("misperceiver '{target}' is not an alliance of the scenario");
            }
        }
        _ => {
            if misperceiver.is_some() {
                bail!("--misperceiver only applies to theta sweeps");
            }
        }
    }

    let points = factors
        .iter()
        .map(|&factor| {
            let mut scenario = base.clone();
            let mut profits_under_truth = false;
            match kind {
                SweepKind::Demand => {
                    scenario = scale_demand(base, factor);
                }
                SweepKind::Theta => {
                    let target = misperceiver.expect("validated above");
                    for (id, belief) in scenario.theta_beliefs.iter_mut() {
                        *belief = if id == target {
                            ThetaBelief {
                                mu: factor,
                                ..scenario.theta_truth
                            }
                        } else {
                            scenario.theta_truth
                        };
                    }
                    profits_under_truth = true;
                }
                SweepKind::DrFil => {
                    for alliance in &mut scenario.alliances {
                        alliance.dr.enabled = true;
                        alliance.dr.fil_kw *= factor;
                        alliance.dr.prepaid_incentive *= factor;
                    }
                }
                SweepKind::DrPp => {
                    for alliance in &mut scenario.alliances {
                        alliance.dr.enabled = true;
                        alliance.dr.penalty_price *= factor;
                    }
                }
            }
            SweepPoint {
                factor,
                scenario,
                profits_under_truth,
            }
        })
        .collect();
    Ok(points)
}

/// `sweep`: solve one scenario variant per factor and write a JSON array
/// plus a CSV summary next to it (same path with a `.csv` extension).
pub fn cmd_sweep(
    kind: SweepKind,
    factors: &[f64],
    scenario_path: &Path,
    solver_config: Option<&Path>,
    out: &Path,
    misperceiver: Option<&str>,
) -> Result<()> {
    let base = load_scenario(scenario_path)?;
    let config = load_solver_config(solver_config)?;
    let provider = TravelProvider::synthetic_default();
    let points = sweep_points(kind, factors, &base, misperceiver)?;

    use rayon::prelude::*;
    let started = Instant::now();
    let results: Vec<RunResult> = points
        .par_iter()
        .map(|point| {
            let solution = solve_two_stage(&point.scenario, &provider, &config)?;
            run_result(
                &point.scenario,
                &provider,
                &solution,
                Some(point.factor),
                point.profits_under_truth,
            )
        })
        .collect::<Result<_>>()?;
    log::info!(
        "{kind} sweep over {} factors finished in {:.2}s",
        factors.len(),
        started.elapsed().as_secs_f64()
    );

    write_json(out, &results)?;
    let csv_path = out.with_extension("csv");
    let mut csv = String::from("factor,alliance_id,avg_price,profit,peak_load_kw\n");
    for result in &results {
        let factor = result.factor.expect("sweep results carry factors");
        for (id, outcome) in &result.alliances {
            csv.push_str(&format!(
                "{factor},{id},{},{},{}\n",
                outcome.mean_price, outcome.profit, outcome.peak_demand_kw
            ));
        }
    }
    fs::write(&csv_path, csv).with_context(|| format!("cannot write {}", csv_path.display()))?;
    Ok(())
}

/// Resolves the sweep CSV path for an output path.
pub fn sweep_csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}
