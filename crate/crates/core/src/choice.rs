//! Bounded-rational EV charging choice: expense and time costs, the
//! prospect-theory value function, the delay option, and Logit choice
//! probabilities.
//!
//! All functions are pure; evaluations for different EVs or price vectors
//! can run concurrently.

use serde::{Deserialize, Serialize};

use crate::domain::{EvRequest, MarketConfig, Station};
use crate::travel::{wait_time, TravelError, TravelProvider};

/// Comprehensive values are clamped to this magnitude before
/// exponentiation so fuzzed extremes stay finite.
pub const VALUE_CLAMP: f64 = 500.0;

/// Curvature and loss-aversion parameters of the value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl From<&MarketConfig> for ValueParams {
    fn from(m: &MarketConfig) -> Self {
        Self {
            alpha: m.value_alpha,
            beta: m.value_beta,
            lambda: m.value_lambda,
        }
    }
}

/// One charging alternative: a concrete station, or delaying the charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// Index into the station slice the candidate set was built from.
    Station(usize),
    /// The "charge later" option.
    Delay,
}

/// A priced alternative as perceived by one EV.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub alternative: Alternative,
    /// Total expense at this alternative, ¥.
    pub expense_cost: f64,
    /// Driving plus waiting time, hours.
    pub time_cost_h: f64,
    /// Energy the EV would draw, kWh.
    pub energy_kwh: f64,
}

/// Choice probabilities over all stations plus the delay option.
///
/// Entry `i < len - 1` is the probability of station `i` in the candidate
/// ordering; the last entry is the delay option.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDistribution {
    pub probabilities: Vec<f64>,
}

impl ChoiceDistribution {
    pub fn station(&self, idx: usize) -> f64 {
        self.probabilities[idx]
    }

    pub fn delay(&self) -> f64 {
        *self.probabilities.last().expect("non-empty distribution")
    }
}

/// Maximal charging power of an EV at a station: the smaller of the
/// vehicle's onboard limit and the pile rating, kW.
pub fn pair_max_power_kw(ev: &EvRequest, station: &Station) -> f64 {
    ev.max_onboard_power_kw.min(station.pile_power_kw)
}

/// Energy the EV would draw at the station: the target-SOC demand capped by
/// what the pair can deliver within the time limit, kWh.
pub fn energy_demand(ev: &EvRequest, station: &Station) -> f64 {
    let target = ev.target_energy_kwh();
    let max_possible = pair_max_power_kw(ev, station) * ev.effective_time_limit_h();
    target.min(max_possible)
}

/// Expense of charging `energy_kwh` at `price` ¥/kWh.
pub fn expense_cost(price: f64, energy_kwh: f64) -> f64 {
    price * energy_kwh
}

/// Total time cost: driving plus waiting, hours.
pub fn time_cost(drive_h: f64, wait_h: f64) -> f64 {
    drive_h + wait_h
}

/// Perceived value of utility `x` against reference utility `x0`: a concave
/// gain above the reference, a convex loss scaled by loss aversion below it.
pub fn value(x: f64, x0: f64, params: ValueParams) -> f64 {
    if x > x0 {
        (x - x0).powf(params.alpha)
    } else {
        -params.lambda * (x0 - x).powf(params.beta)
    }
}

/// Comprehensive value of a candidate against the reference candidate:
/// the perceived expense value plus `theta` times the perceived time value.
/// Both terms vanish when the candidate is the reference.
pub fn comprehensive_value(
    candidate: &Candidate,
    reference: &Candidate,
    theta: f64,
    params: ValueParams,
) -> f64 {
    // Utilities are negated costs, so the reference (least time cost) makes
    // every time term a loss and expense terms gains or losses by sign.
    let v_time = value(-candidate.time_cost_h, -reference.time_cost_h, params);
    let v_money = value(-candidate.expense_cost, -reference.expense_cost, params);
    v_money + theta * v_time
}

/// The delay option: time cost grows from the reference time as the battery
/// approaches the safety threshold, expense is the target-SOC energy at the
/// market's normal price.
pub fn virtual_candidate(
    ev: &EvRequest,
    reference_time_cost_h: f64,
    market: &MarketConfig,
) -> Candidate {
    let soc_safe = market.soc_safe;
    let delay_penalty = ev.effective_time_limit_h() * (soc_safe / (1.0 - soc_safe))
        * (1.0 / ev.soc - 1.0);
    let energy = ev
        .target_energy_kwh()
        .min(ev.max_onboard_power_kw * ev.effective_time_limit_h());
    Candidate {
        alternative: Alternative::Delay,
        expense_cost: expense_cost(market.normal_price, energy),
        time_cost_h: reference_time_cost_h + delay_penalty,
        energy_kwh: energy,
    }
}

/// Index of the reference candidate: least time cost, ties broken by the
/// lowest station index. The delay option never wins the tie.
pub fn reference_index(candidates: &[Candidate]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        let better = match c.alternative {
            Alternative::Station(_) => c.time_cost_h < candidates[best].time_cost_h,
            Alternative::Delay => false,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Builds the full candidate set for one EV: every station (in slice order)
/// followed by the delay option, with the reference index.
pub fn build_candidates(
    ev: &EvRequest,
    prices: &[f64],
    stations: &[Station],
    provider: &TravelProvider,
    market: &MarketConfig,
) -> Result<(Vec<Candidate>, usize), TravelError> {
    assert_eq!(
        prices.len(),
        stations.len(),
        "one price per station required"
    );
    let mut candidates = Vec::with_capacity(stations.len() + 1);
    for (idx, (station, price)) in stations.iter().zip(prices).enumerate() {
        let drive = provider.drive_time(ev.position, station.position, &ev.id, &station.id)?;
        let energy = energy_demand(ev, station);
        candidates.push(Candidate {
            alternative: Alternative::Station(idx),
            expense_cost: expense_cost(*price, energy),
            time_cost_h: time_cost(drive, wait_time(station)),
            energy_kwh: energy,
        });
    }
    let reference = reference_index(&candidates);
    let reference_time = candidates
        .get(reference)
        .map(|c| c.time_cost_h)
        .unwrap_or(0.0);
    candidates.push(virtual_candidate(ev, reference_time, market));
    Ok((candidates, reference))
}

/// Exp-normalizes clamped values into probabilities summing to one.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_into(&mut out);
    out
}

/// In-place variant of [`softmax`] for buffer reuse in hot loops.
pub(crate) fn softmax_into(values: &mut [f64]) {
    assert!(!values.is_empty());
    let mut max = f64::NEG_INFINITY;
    for v in values.iter_mut() {
        *v = v.clamp(-VALUE_CLAMP, VALUE_CLAMP);
        if *v > max {
            max = *v;
        }
    }
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Logit choice probabilities of one EV over all stations plus the delay
/// option, for a fixed time-sensitivity coefficient.
pub fn choice_probabilities(
    ev: &EvRequest,
    prices: &[f64],
    stations: &[Station],
    provider: &TravelProvider,
    theta: f64,
    market: &MarketConfig,
) -> Result<ChoiceDistribution, TravelError> {
    let (candidates, reference) = build_candidates(ev, prices, stations, provider, market)?;
    let params = ValueParams::from(market);
    let reference = candidates[reference].clone();
    let values: Vec<f64> = candidates
        .iter()
        .map(|c| comprehensive_value(c, &reference, theta, params))
        .collect();
    Ok(ChoiceDistribution {
        probabilities: softmax(&values),
    })
}
