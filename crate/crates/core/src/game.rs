//! Two-stage evolutionary game among alliances: strategy-set construction,
//! fitness against the opponents' mixed populations, replicator dynamics up
//! to evolutionary equilibrium, and a sampled no-regret index for the
//! resulting prices.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Alliance, MarketConfig, Scenario, ThetaBelief};
use crate::payoff::{discretize_theta, Evaluator, PayoffError, ThetaDiscretization};
use crate::travel::TravelProvider;

/// Substream ids deriving independent generators from one master seed, so
/// adding consumers never shifts the draws of existing ones.
const LOWER_SET_STREAM: u64 = 1;
const UPPER_SET_STREAM: u64 = 2;
const NIS_STREAM_BASE: u64 = 1000;

fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("{price_count} optional prices cannot be split into {group_count} equal groups")]
    IndivisibleGrouping {
        price_count: usize,
        group_count: usize,
    },
    #[error("a strategy set needs at least 2 strategies per alliance, got {count}")]
    TooFewStrategies { count: usize },
    #[error("expected {expected} per-alliance entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Payoff(#[from] PayoffError),
}

/// Per-alliance strategy lists; a strategy prices that alliance's member
/// stations in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySet {
    pub per_alliance: Vec<Vec<Vec<f64>>>,
}

impl StrategySet {
    pub fn strategy_counts(&self) -> Vec<usize> {
        self.per_alliance.iter().map(|s| s.len()).collect()
    }
}

/// Population shares per alliance; each inner vector is a probability
/// distribution over that alliance's strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub shares: Vec<Vec<f64>>,
}

impl PopulationState {
    pub fn uniform(counts: &[usize]) -> Self {
        Self {
            shares: counts
                .iter()
                .map(|&h| vec![1.0 / h as f64; h])
                .collect(),
        }
    }
}

/// Alliance payoffs for every strategy combination, flattened row-major
/// over the per-alliance strategy indices (the last alliance varies
/// fastest).
#[derive(Debug, Clone)]
pub struct PayoffTensor {
    pub strategy_counts: Vec<usize>,
    /// payoffs[alliance][flat combination index]
    pub payoffs: Vec<Vec<f64>>,
}

impl PayoffTensor {
    pub fn combination_count(&self) -> usize {
        self.strategy_counts.iter().product()
    }

    /// Decodes a flat index into per-alliance strategy indices.
    pub fn decode(&self, mut flat: usize) -> Vec<usize> {
        let mut combo = vec![0; self.strategy_counts.len()];
        for k in (0..self.strategy_counts.len()).rev() {
            combo[k] = flat % self.strategy_counts[k];
            flat /= self.strategy_counts[k];
        }
        combo
    }

    pub fn encode(&self, combo: &[usize]) -> usize {
        combo
            .iter()
            .zip(&self.strategy_counts)
            .fold(0, |acc, (h, count)| acc * count + h)
    }
}

/// Snapshot of one generation: the shares entering the generation and the
/// fitness each strategy scored against them.
#[derive(Debug, Clone)]
pub struct GenerationRecord {
    pub shares: Vec<Vec<f64>>,
    pub fitness: Vec<Vec<f64>>,
}

/// Surviving strategies of one alliance at equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssInfo {
    /// Strategy with the maximal final share (lowest index on ties).
    pub chosen: usize,
    /// All strategies whose final share exceeds the support threshold.
    pub support: Vec<usize>,
}

/// Outcome of one replicator run.
#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub ess: Vec<EssInfo>,
    pub final_shares: Vec<Vec<f64>>,
    pub trajectory: Vec<GenerationRecord>,
    pub generations: usize,
    pub converged: bool,
}

/// Builds the lower-layer strategy sets: the optional price grid is split
/// into equal contiguous groups and each group contributes one strategy
/// whose member prices are drawn uniformly from that group's points.
pub fn build_lower_strategy_sets(
    market: &MarketConfig,
    alliances: &[Alliance],
    group_counts: &[usize],
    seed: u64,
) -> Result<StrategySet, GameError> {
    if group_counts.len() != alliances.len() {
        return Err(GameError::ShapeMismatch {
            expected: alliances.len(),
            actual: group_counts.len(),
        });
    }
    let grid = market.price_grid();
    let mut rng = seeded_rng(seed, LOWER_SET_STREAM);
    let mut per_alliance = Vec::with_capacity(alliances.len());
    for (alliance, &groups) in alliances.iter().zip(group_counts) {
        if groups < 2 {
            return Err(GameError::TooFewStrategies { count: groups });
        }
        if grid.len() % groups != 0 {
            return Err(GameError::IndivisibleGrouping {
                price_count: grid.len(),
                group_count: groups,
            });
        }
        let group_size = grid.len() / groups;
        let mut strategies = Vec::with_capacity(groups);
        for g in 0..groups {
            let points = &grid[g * group_size..(g + 1) * group_size];
            let strategy: Vec<f64> = (0..alliance.station_ids.len())
                .map(|_| points[rng.random_range(0..points.len())])
                .collect();
            strategies.push(strategy);
        }
        per_alliance.push(strategies);
    }
    Ok(StrategySet { per_alliance })
}

/// Builds the upper-layer strategy sets: the unperturbed lower-layer ESS of
/// each alliance plus random deviations within `deviation_range` of it,
/// clamped into the legal price band.
pub fn build_upper_strategy_sets(
    lower_ess: &[Vec<f64>],
    deviation_range: f64,
    counts: &[usize],
    market: &MarketConfig,
    seed: u64,
) -> Result<StrategySet, GameError> {
    if counts.len() != lower_ess.len() {
        return Err(GameError::ShapeMismatch {
            expected: lower_ess.len(),
            actual: counts.len(),
        });
    }
    let mut rng = seeded_rng(seed, UPPER_SET_STREAM);
    let mut per_alliance = Vec::with_capacity(lower_ess.len());
    for (ess, &count) in lower_ess.iter().zip(counts) {
        if count < 2 {
            return Err(GameError::TooFewStrategies { count });
        }
        let mut strategies = Vec::with_capacity(count);
        strategies.push(ess.clone());
        for _ in 1..count {
            let strategy: Vec<f64> = ess
                .iter()
                .map(|p| {
                    let jitter = if deviation_range > 0.0 {
                        rng.random_range(-deviation_range..deviation_range)
                    } else {
                        0.0
                    };
                    (p + jitter).clamp(market.grid_price, market.price_max)
                })
                .collect();
            strategies.push(strategy);
        }
        per_alliance.push(strategies);
    }
    Ok(StrategySet { per_alliance })
}

/// Assembles the full station price vector for one strategy combination.
fn assemble_prices(
    evaluator: &Evaluator,
    sets: &StrategySet,
    combo: &[usize],
) -> Vec<f64> {
    let mut prices = vec![0.0; evaluator.station_count()];
    for (k, &h) in combo.iter().enumerate() {
        let strategy = &sets.per_alliance[k][h];
        for (pos, &station) in evaluator.members(k).iter().enumerate() {
            prices[station] = strategy[pos];
        }
    }
    prices
}

/// Materializes the payoff tensor: every alliance's profit for every
/// strategy combination. Combinations are evaluated concurrently and
/// written by index, so results do not depend on scheduling.
pub fn compute_payoff_tensor_with(
    evaluator: &Evaluator,
    sets: &StrategySet,
    discs: &[ThetaDiscretization],
) -> Result<PayoffTensor, GameError> {
    let counts = sets.strategy_counts();
    let total: usize = counts.iter().product();
    let shell = PayoffTensor {
        strategy_counts: counts.clone(),
        payoffs: vec![],
    };
    let per_combo: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let combo = shell.decode(flat);
            let prices = assemble_prices(evaluator, sets, &combo);
            evaluator.alliance_payoffs(&prices, discs)
        })
        .collect::<Result<_, PayoffError>>()?;
    let alliance_count = sets.per_alliance.len();
    let mut payoffs = vec![vec![0.0; total]; alliance_count];
    for (flat, row) in per_combo.iter().enumerate() {
        for k in 0..alliance_count {
            payoffs[k][flat] = row[k];
        }
    }
    Ok(PayoffTensor {
        strategy_counts: counts,
        payoffs,
    })
}

/// Convenience wrapper constructing the scenario evaluator first.
pub fn compute_payoff_tensor(
    sets: &StrategySet,
    scenario: &Scenario,
    discs: &[ThetaDiscretization],
    provider: &TravelProvider,
) -> Result<PayoffTensor, GameError> {
    let evaluator = Evaluator::new(scenario, provider)?;
    compute_payoff_tensor_with(&evaluator, sets, discs)
}

/// Probability that the opponents of alliance `k` jointly play the given
/// combination: the product of their shares. The entry at `k` is ignored.
pub fn combination_probability(pop: &PopulationState, k: usize, combo: &[usize]) -> f64 {
    combo
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != k)
        .map(|(l, &h)| pop.shares[l][h])
        .product()
}

/// Fitness of every strategy of alliance `k`: its payoff against each
/// opponent combination, weighted by the combination's probability.
pub fn fitness(tensor: &PayoffTensor, pop: &PopulationState, k: usize) -> Vec<f64> {
    let counts = &tensor.strategy_counts;
    let mut fit = vec![0.0; counts[k]];
    let total = tensor.combination_count();
    let mut combo = vec![0usize; counts.len()];
    for flat in 0..total {
        let mut weight = 1.0;
        for (l, &h) in combo.iter().enumerate() {
            if l != k {
                weight *= pop.shares[l][h];
            }
        }
        fit[combo[k]] += tensor.payoffs[k][flat] * weight;
        // Row-major increment: the last alliance's index varies fastest.
        for l in (0..counts.len()).rev() {
            combo[l] += 1;
            if combo[l] < counts[l] {
                break;
            }
            combo[l] = 0;
        }
    }
    fit
}

/// Share-weighted mean fitness of one alliance's fleet.
pub fn average_fitness(fitness: &[f64], shares: &[f64]) -> f64 {
    fitness.iter().zip(shares).map(|(f, x)| f * x).sum()
}

/// One application of the discrete replicator map with already-shifted
/// (strictly positive) fitness: shares grow in proportion to fitness.
pub fn replicator_map(shares: &[f64], shifted_fitness: &[f64]) -> Vec<f64> {
    let weighted: Vec<f64> = shares
        .iter()
        .zip(shifted_fitness)
        .map(|(x, f)| x * f)
        .collect();
    let total: f64 = weighted.iter().sum();
    weighted.into_iter().map(|w| w / total).collect()
}

/// Advances every alliance's population by one generation. Raw fitness is
/// shifted by its minimum plus a small epsilon before the replicator map,
/// keeping the map valid for zero or negative payoffs while preserving the
/// fitness ordering; the result is renormalized onto the simplex.
pub fn replicator_step(pop: &PopulationState, fitness_all: &[Vec<f64>]) -> PopulationState {
    let shares = pop
        .shares
        .iter()
        .zip(fitness_all)
        .map(|(shares, fit)| {
            let min = fit.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = fit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let epsilon = 1e-6 * max.abs().max(1.0);
            let shifted: Vec<f64> = fit.iter().map(|f| f - min + epsilon).collect();
            let mut next = replicator_map(shares, &shifted);
            let total: f64 = next.iter().sum();
            for x in &mut next {
                *x /= total;
            }
            next
        })
        .collect();
    PopulationState { shares }
}

/// Iterates replicator dynamics from the initial population (uniform when
/// absent) until the largest share change falls below `tol` or the
/// generation cap is hit.
pub fn evolve(
    tensor: &PayoffTensor,
    initial: Option<PopulationState>,
    max_generations: usize,
    tol: f64,
    support_threshold: f64,
) -> EvolutionResult {
    let counts = &tensor.strategy_counts;
    let mut pop = initial.unwrap_or_else(|| PopulationState::uniform(counts));
    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut generations = 0;

    for _ in 0..max_generations {
        let fits: Vec<Vec<f64>> = (0..counts.len())
            .map(|k| fitness(tensor, &pop, k))
            .collect();
        let next = replicator_step(&pop, &fits);
        let delta = next
            .shares
            .iter()
            .flatten()
            .zip(pop.shares.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trajectory.push(GenerationRecord {
            shares: pop.shares.clone(),
            fitness: fits,
        });
        generations += 1;
        pop = next;
        if delta < tol {
            converged = true;
            break;
        }
    }

    let ess = pop
        .shares
        .iter()
        .map(|shares| {
            let mut chosen = 0;
            for (i, x) in shares.iter().enumerate() {
                if *x > shares[chosen] {
                    chosen = i;
                }
            }
            let support = shares
                .iter()
                .enumerate()
                .filter(|(_, x)| **x > support_threshold)
                .map(|(i, _)| i)
                .collect();
            EssInfo { chosen, support }
        })
        .collect();

    EvolutionResult {
        ess,
        final_shares: pop.shares,
        trajectory,
        generations,
        converged,
    }
}

/// Solver parameters; all fields have defaults matching the base setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of equal price groups (and thus strategies) per alliance in
    /// the lower layer.
    pub lower_group_count: usize,
    /// Strategies per alliance in the upper layer, including the
    /// unperturbed lower-layer ESS.
    pub upper_strategy_count: usize,
    /// Half-width of the upper-layer price perturbation, ¥/kWh.
    pub deviation_range: f64,
    pub max_generations: usize,
    /// Convergence threshold on the per-generation share change.
    pub tolerance: f64,
    /// Minimal final share for ESS support membership.
    pub support_threshold: f64,
    /// Override for the number of theta typical values; the per-belief
    /// count applies when absent.
    pub theta_values: Option<usize>,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lower_group_count: 13,
            upper_strategy_count: 16,
            deviation_range: 0.2,
            max_generations: 500,
            tolerance: 1e-6,
            support_threshold: 0.01,
            theta_values: None,
            seed: 42,
        }
    }
}

/// Per-alliance discretizations of the perceived theta distributions, in
/// alliance order, each belief keeping its own typical-value count.
pub fn belief_discretizations(scenario: &Scenario) -> Vec<ThetaDiscretization> {
    scenario
        .alliances
        .iter()
        .map(|a| discretize_theta(&scenario.theta_beliefs[&a.id]))
        .collect()
}

/// Per-alliance discretizations honoring the solver's typical-value
/// override.
pub fn perceived_discretizations(
    scenario: &Scenario,
    config: &SolverConfig,
) -> Vec<ThetaDiscretization> {
    scenario
        .alliances
        .iter()
        .map(|a| {
            let mut belief: ThetaBelief = scenario.theta_beliefs[&a.id];
            if let Some(z) = config.theta_values {
                belief.z = z;
            }
            discretize_theta(&belief)
        })
        .collect()
}

/// Result of one evolutionary-game layer: the strategy sets, the replicator
/// outcome, and the chosen prices with their joint payoffs.
#[derive(Debug, Clone)]
pub struct LayerSolution {
    pub sets: StrategySet,
    pub result: EvolutionResult,
    /// Chosen ESS prices per alliance, member-station order.
    pub ess_prices: Vec<Vec<f64>>,
    /// Full station price vector assembled from the per-alliance ESSs.
    pub full_prices: Vec<f64>,
    /// Each alliance's payoff at the joint ESS, under its own belief.
    pub payoffs: Vec<f64>,
}

/// Outcome of the full two-stage solve.
#[derive(Debug, Clone)]
pub struct TwoStageSolution {
    pub lower: LayerSolution,
    pub upper: LayerSolution,
}

fn solve_layer(
    evaluator: &Evaluator,
    sets: StrategySet,
    discs: &[ThetaDiscretization],
    config: &SolverConfig,
) -> Result<LayerSolution, GameError> {
    let tensor = compute_payoff_tensor_with(evaluator, &sets, discs)?;
    let result = evolve(
        &tensor,
        None,
        config.max_generations,
        config.tolerance,
        config.support_threshold,
    );
    let ess_prices: Vec<Vec<f64>> = result
        .ess
        .iter()
        .enumerate()
        .map(|(k, info)| sets.per_alliance[k][info.chosen].clone())
        .collect();
    let combo: Vec<usize> = result.ess.iter().map(|info| info.chosen).collect();
    let full_prices = assemble_prices(evaluator, &sets, &combo);
    let payoffs = evaluator.alliance_payoffs(&full_prices, discs)?;
    Ok(LayerSolution {
        sets,
        result,
        ess_prices,
        full_prices,
        payoffs,
    })
}

/// Runs both evolutionary-game layers: coarse price groups locate the
/// competitive range, then random deviations around the lower-layer ESS
/// refine it. Fully deterministic for a given config.
pub fn solve_two_stage(
    scenario: &Scenario,
    provider: &TravelProvider,
    config: &SolverConfig,
) -> Result<TwoStageSolution, GameError> {
    let evaluator = Evaluator::new(scenario, provider)?;
    let discs = perceived_discretizations(scenario, config);

    let group_counts = vec![config.lower_group_count; scenario.alliances.len()];
    let lower_sets = build_lower_strategy_sets(
        &scenario.market,
        &scenario.alliances,
        &group_counts,
        config.seed,
    )?;
    let lower = solve_layer(&evaluator, lower_sets, &discs, config)?;

    let counts = vec![config.upper_strategy_count; scenario.alliances.len()];
    let upper_sets = build_upper_strategy_sets(
        &lower.ess_prices,
        config.deviation_range,
        &counts,
        &scenario.market,
        config.seed,
    )?;
    let upper = solve_layer(&evaluator, upper_sets, &discs, config)?;

    Ok(TwoStageSolution { lower, upper })
}

/// Per-alliance outcome of the no-regret evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NisAlliance {
    pub alliance_id: String,
    /// Payoff of the equilibrium strategy.
    pub ess_payoff: f64,
    /// Best payoff over the sampled action space (the ESS included).
    pub best_payoff: f64,
    /// best_payoff - ess_payoff.
    pub gap: f64,
    /// Sampled deviations that improve on the ESS payoff beyond a 1e-6
    /// slack.
    pub improving: usize,
    /// Number of sampled strategies, the ESS included.
    pub samples: usize,
}

/// No-regret index over sampled action spaces, with per-alliance detail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NisReport {
    pub nis: f64,
    pub per_alliance: Vec<NisAlliance>,
}

/// Evaluates the no-regret index of the given equilibrium prices: for each
/// alliance, `samples` strategies (the equilibrium itself plus uniform
/// draws from the price grid over its stations) are scored while the
/// opponents hold their equilibrium prices. The index is the ratio of
/// summed equilibrium payoffs to summed sampled bests.
pub fn nis(
    scenario: &Scenario,
    provider: &TravelProvider,
    ess_prices: &[f64],
    samples: usize,
    seed: u64,
) -> Result<NisReport, GameError> {
    assert!(samples >= 1, "at least the equilibrium itself is evaluated");
    let evaluator = Evaluator::new(scenario, provider)?;
    let discs = belief_discretizations(scenario);
    let grid = scenario.market.price_grid();

    let mut per_alliance = Vec::with_capacity(scenario.alliances.len());
    for (k, alliance) in scenario.alliances.iter().enumerate() {
        let members = evaluator.members(k).to_vec();
        let mut rng = seeded_rng(seed, NIS_STREAM_BASE + k as u64);
        let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(samples);
        candidates.push(members.iter().map(|&j| ess_prices[j]).collect());
        for _ in 1..samples {
            candidates.push(
                (0..members.len())
                    .map(|_| grid[rng.random_range(0..grid.len())])
                    .collect(),
            );
        }
        let payoffs: Vec<f64> = candidates
            .par_iter()
            .map(|candidate| {
                let mut prices = ess_prices.to_vec();
                for (pos, &j) in members.iter().enumerate() {
                    prices[j] = candidate[pos];
                }
                evaluator.alliance_payoff_at(k, &prices, &discs[k])
            })
            .collect::<Result<_, PayoffError>>()?;
        let ess_payoff = payoffs[0];
        let best_payoff = payoffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let improving = payoffs[1..]
            .iter()
            .filter(|p| **p > ess_payoff + 1e-6)
            .count();
        per_alliance.push(NisAlliance {
            alliance_id: alliance.id.clone(),
            ess_payoff,
            best_payoff,
            gap: best_payoff - ess_payoff,
            improving,
            samples,
        });
    }

    let ess_sum: f64 = per_alliance.iter().map(|a| a.ess_payoff).sum();
    let best_sum: f64 = per_alliance.iter().map(|a| a.best_payoff).sum();
    Ok(NisReport {
        nis: ess_sum / best_sum,
        per_alliance,
    })
}

/// Writes the share/fitness trajectory as CSV with one row per
/// (generation, alliance, strategy).
pub fn write_trajectory_csv<W: Write>(
    result: &EvolutionResult,
    alliance_ids: &[String],
    mut writer: W,
) -> std::io::Result<()> {
    writeln!(writer, "generation,alliance_id,strategy_index,share,fitness")?;
    for (generation, record) in result.trajectory.iter().enumerate() {
        for (k, id) in alliance_ids.iter().enumerate() {
            for (h, (share, fit)) in record.shares[k]
                .iter()
                .zip(&record.fitness[k])
                .enumerate()
            {
                writeln!(writer, "{generation},{id},{h},{share},{fit}")?;
            }
        }
    }
    Ok(())
}
