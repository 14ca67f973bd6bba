//! Shared test oracles, implemented independently of the library's
//! computation paths: quadrature-based normal CDF/quantiles, a straight-line
//! re-derivation of the choice model, dense-grid demand maxima, a
//! discrete-event queue, and brute-force game fitness.

#![allow(dead_code)]

use std::collections::BTreeMap;

use csa_core::choice::ValueParams;
use csa_core::domain::{
    Alliance, DrContract, EvRequest, GeoPoint, MarketConfig, Scenario, Station, ThetaBelief,
};
use csa_core::payoff::{PowerProfile, PriceVector};
use csa_core::travel::EARTH_RADIUS_KM;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Scalar adaptive Simpson quadrature
// ---------------------------------------------------------------------------

fn simpson_slice<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson_slice(f, a, fa, m, fm);
    let (right, rm, frm) = simpson_slice(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, fa, m, fm, left, lm, flm, eps / 2.0, depth - 1)
            + adaptive_step(f, m, fm, b, fb, right, rm, frm, eps / 2.0, depth - 1)
    }
}

/// Adaptive Simpson integral of `f` over [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson_slice(&f, a, fa, b, fb);
    adaptive_step(&f, a, fa, b, fb, whole, m, fm, eps, 40)
}

// ---------------------------------------------------------------------------
// Truncated-normal oracle (CDF by quadrature, quantile by bisection)
// ---------------------------------------------------------------------------

pub struct TruncNormOracle {
    mu: f64,
    sigma: f64,
    below0: f64,
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

impl TruncNormOracle {
    pub fn new(mu: f64, sigma: f64) -> Self {
        let lo = mu - 12.0 * sigma;
        let below0 = if lo >= 0.0 {
            0.0
        } else {
            integrate(|x| normal_pdf(x, mu, sigma), lo, 0.0, 1e-14)
        };
        Self { mu, sigma, below0 }
    }

    /// CDF of the parent normal by quadrature.
    fn parent_cdf(&self, x: f64) -> f64 {
        let lo = self.mu - 12.0 * self.sigma;
        if x <= lo {
            return 0.0;
        }
        integrate(|t| normal_pdf(t, self.mu, self.sigma), lo, x, 1e-14)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        ((self.parent_cdf(x) - self.below0) / (1.0 - self.below0)).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        normal_pdf(x, self.mu, self.sigma) / (1.0 - self.below0)
    }

    /// Quantile by bisection on the quadrature CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut lo = 0.0f64.max(self.mu - 12.0 * self.sigma);
        let mut hi = self.mu + 12.0 * self.sigma;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

// ---------------------------------------------------------------------------
// Straight-line choice-model oracle (independent of the library path)
// ---------------------------------------------------------------------------

fn oracle_haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().atan2((1.0 - h).sqrt())
}

fn oracle_wait_h(st: &Station) -> f64 {
    if st.charging_remaining_h.len() < st.pile_count {
        0.0
    } else if st.queue_count < st.charging_remaining_h.len() {
        st.charging_remaining_h[st.queue_count]
    } else {
        let max = st.charging_remaining_h.last().copied().unwrap_or(0.0);
        let mean = st.charging_remaining_h.iter().sum::<f64>()
            / st.charging_remaining_h.len() as f64;
        let rounds = ((st.queue_count - st.charging_remaining_h.len() + 1) as f64
            / st.pile_count as f64)
            .ceil();
        max + rounds * mean
    }
}

fn oracle_value(x: f64, x0: f64, p: ValueParams) -> f64 {
    if x > x0 {
        (x - x0).powf(p.alpha)
    } else {
        -p.lambda * (x0 - x).powf(p.beta)
    }
}

/// Recomputes one EV's choice probabilities from first principles:
/// costs, reference selection, value integration, delay option, and a
/// directly exponentiated Logit, with no shared code beyond the inputs.
pub fn oracle_choice_row(
    ev: &EvRequest,
    prices: &[f64],
    stations: &[Station],
    speed_kmh: f64,
    detour: f64,
    theta: f64,
    market: &MarketConfig,
) -> Vec<f64> {
    let params = ValueParams {
        alpha: market.value_alpha,
        beta: market.value_beta,
        lambda: market.value_lambda,
    };
    let time_limit = ev
        .time_limit_h
        .unwrap_or((ev.soc_target - ev.soc) * ev.capacity_kwh / ev.max_onboard_power_kw);
    let mut expense = Vec::new();
    let mut time = Vec::new();
    for (st, price) in stations.iter().zip(prices) {
        let q = ev.max_onboard_power_kw.min(st.pile_power_kw);
        let energy = ((ev.soc_target - ev.soc) * ev.capacity_kwh).min(q * time_limit);
        let drive = oracle_haversine_km(ev.position, st.position) * detour / speed_kmh;
        expense.push(price * energy);
        time.push(drive + oracle_wait_h(st));
    }
    let mut j0 = 0;
    for (j, t) in time.iter().enumerate() {
        if *t < time[j0] {
            j0 = j;
        }
    }
    let t_ref = if time.is_empty() { 0.0 } else { time[j0] };
    let m_ref = if expense.is_empty() { 0.0 } else { expense[j0] };

    // Delay option per the three-property construction.
    let delay_time = t_ref
        + time_limit * (market.soc_safe / (1.0 - market.soc_safe)) * (1.0 / ev.soc - 1.0);
    let delay_energy =
        ((ev.soc_target - ev.soc) * ev.capacity_kwh).min(ev.max_onboard_power_kw * time_limit);
    expense.push(market.normal_price * delay_energy);
    time.push(delay_time);

    let values: Vec<f64> = expense
        .iter()
        .zip(&time)
        .map(|(m, t)| {
            let vm = oracle_value(-m, -m_ref, params);
            let vt = -params.lambda * (t - t_ref).max(0.0).powf(params.beta);
            vm + theta * vt
        })
        .collect();
    let exps: Vec<f64> = values.iter().map(|v| v.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sigma row by adaptive quadrature of the choice row against the truncated
/// normal density, entrywise.
pub fn oracle_sigma_row(
    ev: &EvRequest,
    prices: &[f64],
    stations: &[Station],
    speed_kmh: f64,
    detour: f64,
    belief: &ThetaBelief,
    market: &MarketConfig,
    eps: f64,
) -> Vec<f64> {
    let tn = TruncNormOracle::new(belief.mu, belief.sigma);
    let lo = 0.0f64.max(belief.mu - 10.0 * belief.sigma);
    let hi = belief.mu + 10.0 * belief.sigma;
    let n = stations.len() + 1;
    (0..n)
        .map(|j| {
            integrate(
                |theta| {
                    oracle_choice_row(ev, prices, stations, speed_kmh, detour, theta, market)[j]
                        * tn.pdf(theta)
                },
                lo,
                hi,
                eps,
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dense-grid power maximum oracle
// ---------------------------------------------------------------------------

/// Max of the weighted total power by sampling interval midpoints on a
/// fixed grid.
pub fn dense_grid_max_kw(
    prospective: &[(f64, PowerProfile)],
    current: &[PowerProfile],
    step_h: f64,
) -> f64 {
    let mut horizon = 0.0f64;
    for (_, p) in prospective {
        for s in &p.segments {
            horizon = horizon.max(s.end_h);
        }
    }
    for p in current {
        for s in &p.segments {
            horizon = horizon.max(s.end_h);
        }
    }
    let mut max = 0.0f64;
    let steps = (horizon / step_h).ceil() as usize + 1;
    for k in 0..steps {
        let t = k as f64 * step_h + step_h / 2.0;
        let mut level = 0.0;
        for (w, p) in prospective {
            for s in &p.segments {
                if s.start_h <= t && t < s.end_h {
                    level += w * s.kw;
                }
            }
        }
        for p in current {
            for s in &p.segments {
                if s.start_h <= t && t < s.end_h {
                    level += s.kw;
                }
            }
        }
        max = max.max(level);
    }
    max
}

// ---------------------------------------------------------------------------
// Discrete-event queue oracle
// ---------------------------------------------------------------------------

/// Simulates the station queue explicitly: each queued EV takes a pile as
/// one frees up and holds it for `service_h`; returns when the next arrival
/// would get a pile.
pub fn discrete_event_wait_h(
    pile_count: usize,
    remaining_h: &[f64],
    queue: usize,
    service_h: f64,
) -> f64 {
    let mut free_at = vec![0.0f64; pile_count];
    for (pile, r) in remaining_h.iter().enumerate() {
        free_at[pile] = *r;
    }
    for _ in 0..queue {
        let idx = (0..pile_count)
            .min_by(|a, b| free_at[*a].partial_cmp(&free_at[*b]).unwrap())
            .unwrap();
        free_at[idx] += service_h;
    }
    free_at
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

// ---------------------------------------------------------------------------
// Tiny-instance builders and brute-force game oracles
// ---------------------------------------------------------------------------

pub fn base_market() -> MarketConfig {
    MarketConfig {
        grid_price: 0.5,
        price_max: 3.0,
        price_step: 0.1,
        normal_price: 1.75,
        soc_safe: 0.1,
        value_alpha: 0.88,
        value_beta: 0.88,
        value_lambda: 2.25,
    }
}

/// Random tiny scenario: two alliances over at most four stations and at
/// most three EVs, all within a small urban box.
pub fn tiny_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_stations = rng.random_range(2..=4usize);
    let split = rng.random_range(1..n_stations);
    let n_evs = rng.random_range(1..=3usize);

    let mut stations = Vec::new();
    let mut ids_a = Vec::new();
    let mut ids_b = Vec::new();
    for j in 0..n_stations {
        let id = format!("cs_{j}");
        let alliance = if j < split { "a" } else { "b" };
        if j < split {
            ids_a.push(id.clone());
        } else {
            ids_b.push(id.clone());
        }
        stations.push(Station {
            id,
            position: GeoPoint::new(rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
            alliance_id: alliance.to_string(),
            pile_count: 2,
            pile_power_kw: 60.0,
            charging_remaining_h: vec![],
            queue_count: 0,
        });
    }
    let evs = (0..n_evs)
        .map(|i| EvRequest {
            id: format!("ev_{i}"),
            position: GeoPoint::new(rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
            soc: rng.random_range(0.2..0.6),
            soc_target: 0.8,
            capacity_kwh: 60.0,
            time_limit_h: Some(rng.random_range(0.5..2.0)),
            theta_true: rng.random_range(0.05..0.2),
            max_onboard_power_kw: 60.0,
        })
        .collect();
    let belief = ThetaBelief {
        mu: 0.1,
        sigma: 0.025,
        z: 3,
    };
    let alliances = vec![
        Alliance {
            id: "a".into(),
            station_ids: ids_a,
            dr: DrContract::disabled(),
        },
        Alliance {
            id: "b".into(),
            station_ids: ids_b,
            dr: DrContract::disabled(),
        },
    ];
    let theta_beliefs: BTreeMap<String, ThetaBelief> =
        alliances.iter().map(|a| (a.id.clone(), belief)).collect();
    Scenario {
        evs,
        stations,
        alliances,
        market: base_market(),
        theta_truth: belief,
        theta_beliefs,
    }
}

/// Random strategy sets on the price grid for a tiny scenario.
pub fn tiny_strategy_sets(scenario: &Scenario, seed: u64) -> csa_core::game::StrategySet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let grid = scenario.market.price_grid();
    let per_alliance = scenario
        .alliances
        .iter()
        .map(|a| {
            let count = rng.random_range(2..=3usize);
            (0..count)
                .map(|_| {
                    (0..a.station_ids.len())
                        .map(|_| grid[rng.random_range(0..grid.len())])
                        .collect()
                })
                .collect()
        })
        .collect();
    csa_core::game::StrategySet { per_alliance }
}

/// Fitness of every strategy of alliance `k` by looping over opponent
/// combinations and recomputing each payoff through the step-by-step route.
pub fn brute_force_fitness(
    scenario: &Scenario,
    provider: &csa_core::travel::TravelProvider,
    sets: &csa_core::game::StrategySet,
    discs: &[csa_core::payoff::ThetaDiscretization],
    pop: &csa_core::game::PopulationState,
    k: usize,
) -> Vec<f64> {
    let counts: Vec<usize> = sets.per_alliance.iter().map(|s| s.len()).collect();
    let alliance_count = counts.len();
    let mut fit = vec![0.0; counts[k]];
    let mut combo = vec![0usize; alliance_count];
    loop {
        let mut weight = 1.0;
        for (l, &h) in combo.iter().enumerate() {
            if l != k {
                weight *= pop.shares[l][h];
            }
        }
        if weight > 0.0 {
            let mut by_id = BTreeMap::new();
            for (l, alliance) in scenario.alliances.iter().enumerate() {
                for (pos, sid) in alliance.station_ids.iter().enumerate() {
                    by_id.insert(sid.clone(), sets.per_alliance[l][combo[l]][pos]);
                }
            }
            let payoff = csa_core::payoff::alliance_payoff(
                &scenario.alliances[k],
                &PriceVector(by_id),
                scenario,
                &discs[k],
                provider,
            )
            .expect("valid tiny instance");
            fit[combo[k]] += payoff * weight;
        }
        let mut l = alliance_count;
        loop {
            if l == 0 {
                return fit;
            }
            l -= 1;
            combo[l] += 1;
            if combo[l] < counts[l] {
                break;
            }
            combo[l] = 0;
        }
    }
}

/// All pure Nash equilibria of a materialized two-alliance tensor.
pub fn pure_nash_equilibria(tensor: &csa_core::game::PayoffTensor) -> Vec<Vec<usize>> {
    let counts = &tensor.strategy_counts;
    let mut out = Vec::new();
    for flat in 0..tensor.combination_count() {
        let combo = tensor.decode(flat);
        let mut is_ne = true;
        'outer: for k in 0..counts.len() {
            for h in 0..counts[k] {
                let mut deviated = combo.clone();
                deviated[k] = h;
                let own = tensor.payoffs[k][flat];
                let alt = tensor.payoffs[k][tensor.encode(&deviated)];
                if alt > own + 1e-12 {
                    is_ne = false;
                    break 'outer;
                }
            }
        }
        if is_ne {
            out.push(combo);
        }
    }
    out
}
