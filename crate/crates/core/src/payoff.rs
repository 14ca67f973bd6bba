//! Alliance profit expectation: charging income, grid cost, and
//! demand-response income under a perceived time-sensitivity distribution.
//!
//! Two routes are provided. The free functions compose the model step by
//! step and mirror the documented operations one to one. [`Evaluator`]
//! precomputes every price-independent quantity of a scenario once and is
//! the hot path used by the game solver; its results agree with the free
//! functions and the agreement is covered by tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{
    choice_probabilities, energy_demand, pair_max_power_kw, softmax_into, value,
    virtual_candidate, ValueParams,
};
use crate::domain::{Alliance, DrContract, EvRequest, MarketConfig, Scenario, Station};
use crate::stats::TruncatedNormal;
use crate::travel::{wait_time, TravelError, TravelProvider};

#[derive(Debug, Error)]
pub enum PayoffError {
    #[error("price {price} at station '{station_id}' outside [{min}, {max}]")]
    PriceOutOfBounds {
        station_id: String,
        price: f64,
        min: f64,
        max: f64,
    },
    #[error("price vector has no entry for station '{station_id}'")]
    MissingPrice { station_id: String },
    #[error("unknown alliance '{alliance_id}'")]
    UnknownAlliance { alliance_id: String },
    #[error(transparent)]
    Travel(#[from] TravelError),
}

/// Discrete typical values approximating a theta distribution, with the
/// probability mass of the bin ending at each value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDiscretization {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Per-station prices covering a whole scenario, keyed by station id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVector(pub BTreeMap<String, f64>);

impl PriceVector {
    /// Builds a price vector from a slice aligned with `scenario.stations`.
    pub fn from_aligned(scenario: &Scenario, prices: &[f64]) -> Self {
        assert_eq!(prices.len(), scenario.stations.len());
        Self(
            scenario
                .stations
                .iter()
                .zip(prices)
                .map(|(s, p)| (s.id.clone(), *p))
                .collect(),
        )
    }

    /// Returns prices aligned with `scenario.stations`, requiring coverage
    /// of every station.
    pub fn aligned(&self, scenario: &Scenario) -> Result<Vec<f64>, PayoffError> {
        scenario
            .stations
            .iter()
            .map(|s| {
                self.0
                    .get(&s.id)
                    .copied()
                    .ok_or_else(|| PayoffError::MissingPrice {
                        station_id: s.id.clone(),
                    })
            })
            .collect()
    }
}

/// Checks the price band bound for every station, naming the first violator.
pub fn validate_price_bounds(
    station_ids: &[String],
    prices: &[f64],
    market: &MarketConfig,
) -> Result<(), PayoffError> {
    for (id, p) in station_ids.iter().zip(prices) {
        if !(market.grid_price..=market.price_max).contains(p) {
            return Err(PayoffError::PriceOutOfBounds {
                station_id: id.clone(),
                price: *p,
                min: market.grid_price,
                max: market.price_max,
            });
        }
    }
    Ok(())
}

/// Discretizes a theta belief, truncated to positive values: typical values
/// are quantile midpoints at levels (2z - 1) / 2Z, probabilities are the
/// distribution masses of the bins `[0, v1], (v1, v2], ..., (v_{Z-1}, inf)`.
pub fn discretize_theta(belief: &crate::domain::ThetaBelief) -> ThetaDiscretization {
    let tn = TruncatedNormal::new(belief.mu, belief.sigma, 0.0);
    let z = belief.z;
    let values: Vec<f64> = (1..=z)
        .map(|i| tn.quantile((2 * i - 1) as f64 / (2 * z) as f64))
        .collect();
    let mut probs = Vec::with_capacity(z);
    if z == 1 {
        probs.push(1.0);
    } else {
        probs.push(tn.cdf(values[0]));
        for i in 1..z - 1 {
            probs.push(tn.cdf(values[i]) - tn.cdf(values[i - 1]));
        }
        probs.push(1.0 - tn.cdf(values[z - 2]));
    }
    ThetaDiscretization { values, probs }
}

/// Expected choice probabilities of one EV over all stations plus the delay
/// option: the Logit row mixed over the discretized theta distribution.
pub fn choice_expectation(
    ev: &EvRequest,
    prices: &[f64],
    stations: &[Station],
    provider: &TravelProvider,
    market: &MarketConfig,
    disc: &ThetaDiscretization,
) -> Result<Vec<f64>, TravelError> {
    let mut sigma = vec![0.0; stations.len() + 1];
    for (theta, prob) in disc.values.iter().zip(&disc.probs) {
        let rho = choice_probabilities(ev, prices, stations, provider, *theta, market)?;
        for (s, r) in sigma.iter_mut().zip(&rho.probabilities) {
            *s += prob * r;
        }
    }
    Ok(sigma)
}

/// Expected charging income of an alliance: energy times price times choice
/// probability, summed over EVs and member stations.
///
/// `sigma` holds one row per EV over all stations (the delay column may be
/// present or absent); `energies` is indexed the same way; `members` are the
/// alliance's station indices.
pub fn charging_income(
    members: &[usize],
    prices: &[f64],
    sigma: &[Vec<f64>],
    energies: &[Vec<f64>],
) -> f64 {
    let mut total = 0.0;
    for (row, energy) in sigma.iter().zip(energies) {
        for &j in members {
            total += energy[j] * prices[j] * row[j];
        }
    }
    total
}

/// Expected grid electricity cost of an alliance at the grid price.
pub fn grid_cost(
    members: &[usize],
    grid_price: f64,
    sigma: &[Vec<f64>],
    energies: &[Vec<f64>],
) -> f64 {
    let mut total = 0.0;
    for (row, energy) in sigma.iter().zip(energies) {
        for &j in members {
            total += energy[j] * grid_price * row[j];
        }
    }
    total
}

/// Piecewise-constant charging power over time, from t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub segments: Vec<PowerSegment>,
}

/// Constant power on `[start_h, end_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSegment {
    pub start_h: f64,
    pub end_h: f64,
    pub kw: f64,
}

impl PowerProfile {
    pub fn empty() -> Self {
        Self { segments: vec![] }
    }
}

/// Charging power over time of a prospective EV hypothetically assigned to
/// a station: zero until arrival, the pair's max power until the energy
/// demand is met, zero afterwards.
pub fn ev_power_profile(
    ev: &EvRequest,
    station: &Station,
    provider: &TravelProvider,
) -> Result<PowerProfile, TravelError> {
    let drive = provider.drive_time(ev.position, station.position, &ev.id, &station.id)?;
    let arrival = drive + wait_time(station);
    let power = pair_max_power_kw(ev, station);
    let energy = energy_demand(ev, station);
    if energy <= 0.0 {
        return Ok(PowerProfile::empty());
    }
    Ok(PowerProfile {
        segments: vec![PowerSegment {
            start_h: arrival,
            end_h: arrival + energy / power,
            kw: power,
        }],
    })
}

/// Charging power over time of an EV already plugged in: full power from
/// now until its remaining charge duration elapses.
pub fn charging_ev_profile(remaining_h: f64, power_kw: f64) -> PowerProfile {
    if remaining_h <= 0.0 {
        return PowerProfile::empty();
    }
    PowerProfile {
        segments: vec![PowerSegment {
            start_h: 0.0,
            end_h: remaining_h,
            kw: power_kw,
        }],
    }
}

/// Maximal expected total power over time: prospective profiles weighted by
/// their choice probability plus unweighted profiles of EVs already
/// charging. The maximum of a piecewise-constant sum is attained at a
/// segment breakpoint, so a sweep over the sorted breakpoints is exact.
pub fn max_dr_demand(prospective: &[(f64, PowerProfile)], current: &[PowerProfile]) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::new();
    for (weight, profile) in prospective {
        for seg in &profile.segments {
            if seg.end_h > seg.start_h {
                events.push((seg.start_h, weight * seg.kw));
                events.push((seg.end_h, -(weight * seg.kw)));
            }
        }
    }
    for profile in current {
        for seg in &profile.segments {
            if seg.end_h > seg.start_h {
                events.push((seg.start_h, seg.kw));
                events.push((seg.end_h, -seg.kw));
            }
        }
    }
    // Sorting by (time, delta) drains ending segments before starting ones
    // at the same instant, matching the half-open segment convention.
    events.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoint times"));
    let mut level = 0.0;
    let mut max = 0.0f64;
    let mut idx = 0;
    while idx < events.len() {
        let t = events[idx].0;
        while idx < events.len() && events[idx].0 == t {
            level += events[idx].1;
            idx += 1;
        }
        max = max.max(level);
    }
    max
}

/// Demand-response income of one contract given the maximal expected demand
/// during the event: the prepaid incentive minus the exceedance penalty.
/// Zero when the contract is disabled.
pub fn dr_income(contract: &DrContract, q_max_dr_kw: f64) -> f64 {
    if !contract.enabled {
        return 0.0;
    }
    contract.prepaid_incentive
        - contract.penalty_price * (q_max_dr_kw - contract.fil_kw).max(0.0)
}

/// Expected total profit of one alliance at the given prices: charging
/// income plus DR income minus grid cost, all under the alliance's
/// perceived theta discretization. Prices outside the legal band are
/// rejected.
///
/// This is the step-by-step route; [`Evaluator::alliance_payoffs`] computes
/// the same quantity on the precomputed path.
pub fn alliance_payoff(
    alliance: &Alliance,
    prices: &PriceVector,
    scenario: &Scenario,
    disc: &ThetaDiscretization,
    provider: &TravelProvider,
) -> Result<f64, PayoffError> {
    let aligned = prices.aligned(scenario)?;
    let station_ids: Vec<String> = scenario.stations.iter().map(|s| s.id.clone()).collect();
    validate_price_bounds(&station_ids, &aligned, &scenario.market)?;

    let members: Vec<usize> = alliance
        .station_ids
        .iter()
        .map(|sid| {
            scenario
                .station_index(sid)
                .ok_or_else(|| PayoffError::UnknownAlliance {
                    alliance_id: alliance.id.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut sigma = Vec::with_capacity(scenario.evs.len());
    let mut energies = Vec::with_capacity(scenario.evs.len());
    for ev in &scenario.evs {
        sigma.push(choice_expectation(
            ev,
            &aligned,
            &scenario.stations,
            provider,
            &scenario.market,
            disc,
        )?);
        energies.push(
            scenario
                .stations
                .iter()
                .map(|st| energy_demand(ev, st))
                .collect::<Vec<f64>>(),
        );
    }

    let income = charging_income(&members, &aligned, &sigma, &energies);
    let cost = grid_cost(&members, scenario.market.grid_price, &sigma, &energies);

    let dr = if alliance.dr.enabled {
        let mut prospective = Vec::new();
        let mut current = Vec::new();
        for (i, ev) in scenario.evs.iter().enumerate() {
            for &j in &members {
                let profile = ev_power_profile(ev, &scenario.stations[j], provider)?;
                prospective.push((sigma[i][j], profile));
            }
        }
        for &j in &members {
            let st = &scenario.stations[j];
            for &remaining in &st.charging_remaining_h {
                current.push(charging_ev_profile(remaining, st.pile_power_kw));
            }
        }
        dr_income(&alliance.dr, max_dr_demand(&prospective, &current))
    } else {
        0.0
    };

    Ok(income + dr - cost)
}

// ---------------------------------------------------------------------------
// Precomputed evaluator
// ---------------------------------------------------------------------------

/// Price-independent segment of a prospective (ev, member station) pair.
#[derive(Debug, Clone, Copy)]
struct ProspectiveSeg {
    ev: usize,
    station: usize,
    start_idx: usize,
    end_idx: usize,
    kw: f64,
}

/// Per-alliance demand precomputation: constant occupant-load deltas over
/// the sorted breakpoint grid, and the prospective segments whose weights
/// change with prices.
#[derive(Debug, Clone)]
struct AllianceDemand {
    base_delta: Vec<f64>,
    segments: Vec<ProspectiveSeg>,
}

impl AllianceDemand {
    fn max_demand(&self, sigma: &[Vec<f64>]) -> f64 {
        let mut delta = self.base_delta.clone();
        for seg in &self.segments {
            let w = sigma[seg.ev][seg.station] * seg.kw;
            delta[seg.start_idx] += w;
            delta[seg.end_idx] -= w;
        }
        let mut level = 0.0;
        let mut max = 0.0f64;
        for d in delta {
            level += d;
            max = max.max(level);
        }
        max
    }
}

/// Precomputed per-scenario state for fast payoff evaluation across many
/// price vectors. Construction resolves travel times once; evaluations are
/// pure and safe to run concurrently.
pub struct Evaluator {
    market: MarketConfig,
    params: ValueParams,
    station_ids: Vec<String>,
    /// Energy demand per pair, indexed [ev][station].
    energy: Vec<Vec<f64>>,
    /// Perceived time value per candidate, indexed [ev][station + delay].
    v_time: Vec<Vec<f64>>,
    /// Reference (least-time) station index per EV.
    reference: Vec<usize>,
    /// Delay-option expense per EV.
    virtual_expense: Vec<f64>,
    /// Member station indices per alliance.
    members: Vec<Vec<usize>>,
    contracts: Vec<DrContract>,
    demand: Vec<AllianceDemand>,
}

impl Evaluator {
    pub fn new(scenario: &Scenario, provider: &TravelProvider) -> Result<Self, PayoffError> {
        let n = scenario.stations.len();
        let market = scenario.market.clone();
        let params = ValueParams::from(&market);

        let mut energy = Vec::with_capacity(scenario.evs.len());
        let mut arrival = Vec::with_capacity(scenario.evs.len());
        let mut power = Vec::with_capacity(scenario.evs.len());
        let mut v_time = Vec::with_capacity(scenario.evs.len());
        let mut reference = Vec::with_capacity(scenario.evs.len());
        let mut virtual_expense = Vec::with_capacity(scenario.evs.len());

        for ev in &scenario.evs {
            let mut e_row = Vec::with_capacity(n);
            let mut t_row = Vec::with_capacity(n);
            let mut q_row = Vec::with_capacity(n);
            for st in &scenario.stations {
                let drive = provider.drive_time(ev.position, st.position, &ev.id, &st.id)?;
                t_row.push(drive + wait_time(st));
                e_row.push(energy_demand(ev, st));
                q_row.push(pair_max_power_kw(ev, st));
            }
            let mut ref_idx = 0;
            for (j, t) in t_row.iter().enumerate() {
                if *t < t_row[ref_idx] {
                    ref_idx = j;
                }
            }
            let t_ref = t_row.get(ref_idx).copied().unwrap_or(0.0);
            let delay = virtual_candidate(ev, t_ref, &market);
            let mut vt_row: Vec<f64> = t_row
                .iter()
                .map(|t| value(-t, -t_ref, params))
                .collect();
            vt_row.push(value(-delay.time_cost_h, -t_ref, params));
            virtual_expense.push(delay.expense_cost);
            v_time.push(vt_row);
            reference.push(ref_idx);
            energy.push(e_row);
            arrival.push(t_row);
            power.push(q_row);
        }

        let members = scenario.alliance_station_indices();
        let contracts: Vec<DrContract> = scenario.alliances.iter().map(|a| a.dr.clone()).collect();

        let mut demand = Vec::with_capacity(scenario.alliances.len());
        for member_list in &members {
            let mut times: Vec<f64> = Vec::new();
            let mut raw_segments = Vec::new();
            for i in 0..scenario.evs.len() {
                for &j in member_list {
                    let e = energy[i][j];
                    if e <= 0.0 {
                        continue;
                    }
                    let start = arrival[i][j];
                    let end = start + e / power[i][j];
                    times.push(start);
                    times.push(end);
                    raw_segments.push((i, j, start, end, power[i][j]));
                }
            }
            let mut occupant_segments = Vec::new();
            for &j in member_list {
                let st = &scenario.stations[j];
                for &remaining in &st.charging_remaining_h {
                    if remaining > 0.0 {
                        times.push(0.0);
                        times.push(remaining);
                        occupant_segments.push((remaining, st.pile_power_kw));
                    }
                }
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
            times.dedup();
            let locate = |t: f64| -> usize {
                times
                    .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite times"))
                    .expect("breakpoint present by construction")
            };
            let mut base_delta = vec![0.0; times.len()];
            for (remaining, kw) in occupant_segments {
                base_delta[locate(0.0)] += kw;
                base_delta[locate(remaining)] -= kw;
            }
            let segments = raw_segments
                .into_iter()
                .map(|(ev, station, start, end, kw)| ProspectiveSeg {
                    ev,
                    station,
                    start_idx: locate(start),
                    end_idx: locate(end),
                    kw,
                })
                .collect();
            demand.push(AllianceDemand {
                base_delta,
                segments,
            });
        }

        Ok(Self {
            market,
            params,
            station_ids: scenario.stations.iter().map(|s| s.id.clone()).collect(),
            energy,
            v_time,
            reference,
            virtual_expense,
            members,
            contracts,
            demand,
        })
    }

    pub fn station_count(&self) -> usize {
        self.station_ids.len()
    }

    pub fn alliance_count(&self) -> usize {
        self.members.len()
    }

    pub fn ev_count(&self) -> usize {
        self.energy.len()
    }

    pub fn market(&self) -> &MarketConfig {
        &self.market
    }

    pub fn members(&self, alliance: usize) -> &[usize] {
        &self.members[alliance]
    }

    /// Expected choice rows for every EV at the given aligned prices under
    /// one theta discretization. Each row spans all stations plus the delay
    /// option and sums to one.
    pub fn sigma_rows(&self, prices: &[f64], disc: &ThetaDiscretization) -> Vec<Vec<f64>> {
        assert_eq!(prices.len(), self.station_count());
        let n = prices.len();
        let mut rows = Vec::with_capacity(self.ev_count());
        let mut vm = vec![0.0; n + 1];
        let mut buf = vec![0.0; n + 1];
        for i in 0..self.ev_count() {
            let m_ref = prices[self.reference[i]] * self.energy[i][self.reference[i]];
            for j in 0..n {
                vm[j] = value(-(prices[j] * self.energy[i][j]), -m_ref, self.params);
            }
            vm[n] = value(-self.virtual_expense[i], -m_ref, self.params);
            let mut row = vec![0.0; n + 1];
            for (theta, prob) in disc.values.iter().zip(&disc.probs) {
                let vt = &self.v_time[i];
                for j in 0..=n {
                    buf[j] = vm[j] + theta * vt[j];
                }
                softmax_into(&mut buf);
                for j in 0..=n {
                    row[j] += prob * buf[j];
                }
            }
            rows.push(row);
        }
        rows
    }

    /// Profit of one alliance given precomputed sigma rows.
    pub fn alliance_payoff_with_sigma(
        &self,
        alliance: usize,
        prices: &[f64],
        sigma: &[Vec<f64>],
    ) -> f64 {
        let members = &self.members[alliance];
        let mut income = 0.0;
        let mut cost = 0.0;
        for (row, energy) in sigma.iter().zip(&self.energy) {
            for &j in members {
                income += energy[j] * prices[j] * row[j];
                cost += energy[j] * self.market.grid_price * row[j];
            }
        }
        let contract = &self.contracts[alliance];
        let dr = if contract.enabled {
            dr_income(contract, self.demand[alliance].max_demand(sigma))
        } else {
            0.0
        };
        income + dr - cost
    }

    /// Profits of every alliance at the given aligned prices, each under its
    /// own theta discretization. Sigma rows are shared between alliances
    /// whose discretizations are identical.
    pub fn alliance_payoffs(
        &self,
        prices: &[f64],
        discs: &[ThetaDiscretization],
    ) -> Result<Vec<f64>, PayoffError> {
        assert_eq!(discs.len(), self.alliance_count());
        validate_price_bounds(&self.station_ids, prices, &self.market)?;
        let mut payoffs = vec![0.0; self.alliance_count()];
        let mut done = vec![false; self.alliance_count()];
        for k in 0..self.alliance_count() {
            if done[k] {
                continue;
            }
            let group: Vec<usize> = (k..self.alliance_count())
                .filter(|&l| !done[l] && discs[l] == discs[k])
                .collect();
            let sigma = self.sigma_rows(prices, &discs[k]);
            for &l in &group {
                payoffs[l] = self.alliance_payoff_with_sigma(l, prices, &sigma);
                done[l] = true;
            }
        }
        Ok(payoffs)
    }

    /// Profit of one alliance at the given aligned prices under one
    /// discretization, without evaluating the other alliances.
    pub fn alliance_payoff_at(
        &self,
        alliance: usize,
        prices: &[f64],
        disc: &ThetaDiscretization,
    ) -> Result<f64, PayoffError> {
        validate_price_bounds(&self.station_ids, prices, &self.market)?;
        let sigma = self.sigma_rows(prices, disc);
        Ok(self.alliance_payoff_with_sigma(alliance, prices, &sigma))
    }

    /// Maximal expected total demand of one alliance at the given prices,
    /// under its own discretization, in kW.
    pub fn alliance_peak_demand(
        &self,
        alliance: usize,
        prices: &[f64],
        disc: &ThetaDiscretization,
    ) -> f64 {
        let sigma = self.sigma_rows(prices, disc);
        self.demand[alliance].max_demand(&sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ThetaBelief;
    use crate::scenario::test_fixtures::{small_scenario, uniform_prices};

    #[test]
    fn discretize_single_value_is_median_with_full_mass() {
        let d = discretize_theta(&ThetaBelief {
            mu: 0.1,
            sigma: 0.025,
            z: 1,
        });
        assert_eq!(d.values.len(), 1);
        assert_eq!(d.probs, vec![1.0]);
        assert!((d.values[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn discretize_probs_sum_to_one_and_values_ascend() {
        for z in [2, 3, 7, 11, 101] {
            let d = discretize_theta(&ThetaBelief {
                mu: 0.1,
                sigma: 0.025,
                z,
            });
            assert_eq!(d.values.len(), z);
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9, "z={z}");
            assert!(d.values.windows(2).all(|w| w[0] < w[1]));
            assert!(d.values.iter().all(|v| *v > 0.0));
            assert!(d.probs.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn discretize_bin_masses_follow_value_edges() {
        // Bin edges sit at the first Z-1 values, so the masses are the
        // quantile-level gaps: 1/2Z, 1/Z, ..., 1/Z, 3/2Z.
        let z = 5;
        let d = discretize_theta(&ThetaBelief {
            mu: 0.1,
            sigma: 0.025,
            z,
        });
        let zf = z as f64;
        assert!((d.probs[0] - 1.0 / (2.0 * zf)).abs() < 1e-9);
        for k in 1..z - 1 {
            assert!((d.probs[k] - 1.0 / zf).abs() < 1e-9);
        }
        assert!((d.probs[z - 1] - 3.0 / (2.0 * zf)).abs() < 1e-9);
    }

    #[test]
    fn choice_expectation_degenerate_equals_single_rho() {
        let s = small_scenario();
        let provider = TravelProvider::synthetic_default();
        let prices = uniform_prices(&s, 1.0);
        let d = discretize_theta(&ThetaBelief {
            mu: 0.1,
            sigma: 0.025,
            z: 1,
        });
        let sigma = choice_expectation(
            &s.evs[0],
            &prices,
            &s.stations,
            &provider,
            &s.market,
            &d,
        )
        .unwrap();
        let rho = choice_probabilities(
            &s.evs[0],
            &prices,
            &s.stations,
            &provider,
            d.values[0],
            &s.market,
        )
        .unwrap();
        for (a, b) in sigma.iter().zip(&rho.probabilities) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((sigma.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn charging_income_and_grid_cost_basics() {
        let sigma = vec![vec![1.0, 0.0]];
        let energies = vec![vec![30.0, 10.0]];
        let prices = [1.0, 2.0];
        assert!((charging_income(&[0], &prices, &sigma, &energies) - 30.0).abs() < 1e-12);
        assert_eq!(
            charging_income(&[1], &prices, &sigma, &energies),
            0.0,
            "zero probability earns nothing"
        );
        assert!((grid_cost(&[0], 0.5, &sigma, &energies) - 15.0).abs() < 1e-12);
        assert_eq!(grid_cost(&[0], 0.0, &sigma, &energies), 0.0);
    }

    #[test]
    fn margin_vanishes_at_cost_price() {
        let sigma = vec![vec![0.4, 0.3], vec![0.2, 0.7]];
        let energies = vec![vec![30.0, 20.0], vec![10.0, 25.0]];
        let prices = [0.5, 0.5];
        let income = charging_income(&[0, 1], &prices, &sigma, &energies);
        let cost = grid_cost(&[0, 1], 0.5, &sigma, &energies);
        assert!((income - cost).abs() < 1e-12);
    }

    #[test]
    fn power_profile_shapes() {
        let s = small_scenario();
        let provider = TravelProvider::Synthetic {
            speed_kmh: 30.0,
            detour_factor: 1.0,
        };
        let mut ev = s.evs[0].clone();
        ev.position = s.stations[0].position;
        ev.soc = 0.3;
        ev.soc_target = 0.8;
        ev.capacity_kwh = 60.0;
        ev.max_onboard_power_kw = 60.0;
        ev.time_limit_h = Some(2.0);
        let p = ev_power_profile(&ev, &s.stations[0], &provider).unwrap();
        assert_eq!(p.segments.len(), 1);
        let seg = p.segments[0];
        assert_eq!(seg.start_h, 0.0);
        assert!((seg.end_h - 0.5).abs() < 1e-12);
        assert_eq!(seg.kw, 60.0);

        let cur = charging_ev_profile(0.4, 60.0);
        assert_eq!(
            cur.segments,
            vec![PowerSegment {
                start_h: 0.0,
                end_h: 0.4,
                kw: 60.0
            }]
        );
        assert_eq!(charging_ev_profile(0.0, 60.0).segments.len(), 0);
    }

    #[test]
    fn max_dr_demand_overlap_cases() {
        let current = vec![charging_ev_profile(0.5, 60.0)];
        let prospective_profile = PowerProfile {
            segments: vec![PowerSegment {
                start_h: 0.25,
                end_h: 0.75,
                kw: 60.0,
            }],
        };
        assert_eq!(max_dr_demand(&[], &[]), 0.0);
        let m = max_dr_demand(&[(1.0, prospective_profile.clone())], &current);
        assert!((m - 120.0).abs() < 1e-12);
        let m = max_dr_demand(&[(0.5, prospective_profile)], &current);
        assert!((m - 90.0).abs() < 1e-12);
    }

    #[test]
    fn dr_income_clamps_and_disables() {
        let contract = DrContract {
            fil_kw: 100.0,
            penalty_price: 6.0,
            prepaid_incentive: 500.0,
            enabled: true,
        };
        assert_eq!(dr_income(&contract, 80.0), 500.0);
        assert!((dr_income(&contract, 110.0) - 440.0).abs() < 1e-12);
        let disabled = DrContract {
            enabled: false,
            ..contract
        };
        assert_eq!(dr_income(&disabled, 1e9), 0.0);
    }

    #[test]
    fn payoff_zero_at_cost_price_without_dr() {
        let s = small_scenario();
        let provider = TravelProvider::synthetic_default();
        let prices = PriceVector::from_aligned(&s, &uniform_prices(&s, s.market.grid_price));
        let d = discretize_theta(&s.theta_truth);
        for al in &s.alliances {
            let p = alliance_payoff(al, &prices, &s, &d, &provider).unwrap();
            assert!(p.abs() < 1e-9, "alliance {}: {p}", al.id);
        }
    }

    #[test]
    fn payoff_rejects_out_of_band_prices() {
        let s = small_scenario();
        let provider = TravelProvider::synthetic_default();
        let mut aligned = uniform_prices(&s, 1.0);
        aligned[1] = 99.0;
        let prices = PriceVector::from_aligned(&s, &aligned);
        let d = discretize_theta(&s.theta_truth);
        let err = alliance_payoff(&s.alliances[0], &prices, &s, &d, &provider).unwrap_err();
        match err {
            PayoffError::PriceOutOfBounds { station_id, .. } => {
                assert_eq!(station_id, s.stations[1].id);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn payoff_disabled_dr_ignores_contract_terms() {
        let mut s = small_scenario();
        let provider = TravelProvider::synthetic_default();
        let prices = PriceVector::from_aligned(&s, &uniform_prices(&s, 1.2));
        let d = discretize_theta(&s.theta_truth);
        let base = alliance_payoff(&s.alliances[0], &prices, &s, &d, &provider).unwrap();
        s.alliances[0].dr.fil_kw = 1.0;
        s.alliances[0].dr.penalty_price = 1e6;
        let same = alliance_payoff(&s.alliances[0], &prices, &s, &d, &provider).unwrap();
        assert_eq!(base, same);
    }

    #[test]
    fn evaluator_matches_step_by_step_route() {
        let mut s = small_scenario();
        // Exercise the DR branch too.
        s.alliances[0].dr = DrContract {
            fil_kw: 20.0,
            penalty_price: 6.0,
            prepaid_incentive: 100.0,
            enabled: true,
        };
        s.stations[0].charging_remaining_h = vec![0.2, 0.5];
        let provider = TravelProvider::synthetic_default();
        let aligned = vec![0.9, 1.4, 1.1];
        let prices = PriceVector::from_aligned(&s, &aligned);
        let evaluator = Evaluator::new(&s, &provider).unwrap();
        let discs: Vec<ThetaDiscretization> = s
            .alliances
            .iter()
            .map(|a| discretize_theta(&s.theta_beliefs[&a.id]))
            .collect();
        let fast = evaluator.alliance_payoffs(&aligned, &discs).unwrap();
        for (k, al) in s.alliances.iter().enumerate() {
            let slow = alliance_payoff(al, &prices, &s, &discs[k], &provider).unwrap();
            assert!(
                (fast[k] - slow).abs() < 1e-9,
                "alliance {}: fast={} slow={}",
                al.id,
                fast[k],
                slow
            );
        }
    }

    #[test]
    fn sigma_rows_sum_to_one() {
        let s = small_scenario();
        let provider = TravelProvider::synthetic_default();
        let evaluator = Evaluator::new(&s, &provider).unwrap();
        let d = discretize_theta(&s.theta_truth);
        let rows = evaluator.sigma_rows(&uniform_prices(&s, 1.3), &d);
        for row in rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn price_vector_round_trip_and_missing_entry() {
        let s = small_scenario();
        let aligned = vec![0.7, 0.9, 1.1];
        let pv = PriceVector::from_aligned(&s, &aligned);
        assert_eq!(pv.aligned(&s).unwrap(), aligned);
        let mut broken = pv.clone();
        broken.0.remove(&s.stations[2].id);
        assert!(matches!(
            broken.aligned(&s),
            Err(PayoffError::MissingPrice { .. })
        ));
    }
}
