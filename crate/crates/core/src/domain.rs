//! Core data types shared by every module: EVs, stations, alliances, market
//! parameters, and the scenario container, plus invariant validation.
//!
//! All values are immutable after construction. Units are fixed repo-wide:
//! money in ¥, energy in kWh, power in kW, durations in hours.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// A WGS84 coordinate pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

fn default_soc_target() -> f64 {
    0.8
}

fn default_capacity_kwh() -> f64 {
    60.0
}

/// One charging request. `theta_true` is the user's private time-sensitivity
/// coefficient, carried as simulation ground truth; stations never read it
/// when pricing (they work from a perceived distribution instead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRequest {
    pub id: String,
    pub position: GeoPoint,
    /// Current state of charge, fraction of capacity in (0, 1).
    pub soc: f64,
    /// State of charge wanted when leaving, in (0, 1].
    #[serde(default = "default_soc_target")]
    pub soc_target: f64,
    #[serde(default = "default_capacity_kwh")]
    pub capacity_kwh: f64,
    /// Available charging time before leaving. Absent in JSON means "the
    /// minimal time to reach the target at the vehicle's own max power".
    #[serde(default)]
    pub time_limit_h: Option<f64>,
    pub theta_true: f64,
    pub max_onboard_power_kw: f64,
}

impl EvRequest {
    /// Energy needed to reach the target state of charge, in kWh.
    pub fn target_energy_kwh(&self) -> f64 {
        (self.soc_target - self.soc) * self.capacity_kwh
    }

    /// Effective time limit: the explicit field when present, otherwise the
    /// minimal time to reach the target at the vehicle's own max power.
    pub fn effective_time_limit_h(&self) -> f64 {
        self.time_limit_h
            .unwrap_or_else(|| self.target_energy_kwh() / self.max_onboard_power_kw)
    }
}

/// One charging station. `charging_remaining_h` lists the remaining charge
/// durations of currently plugged-in EVs, ascending; `queue_count` is the
/// number of EVs waiting on site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub position: GeoPoint,
    pub alliance_id: String,
    pub pile_count: usize,
    pub pile_power_kw: f64,
    #[serde(default)]
    pub charging_remaining_h: Vec<f64>,
    #[serde(default)]
    pub queue_count: usize,
}

/// Demand-response contract terms of one alliance: firm service level,
/// penalty price per kW of exceedance, and the pre-paid incentive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrContract {
    pub fil_kw: f64,
    pub penalty_price: f64,
    pub prepaid_incentive: f64,
    pub enabled: bool,
}

impl DrContract {
    /// A disabled contract with zeroed terms.
    pub fn disabled() -> Self {
        Self {
            fil_kw: 0.0,
            penalty_price: 0.0,
            prepaid_incentive: 0.0,
            enabled: false,
        }
    }
}

/// A charging-station alliance: the member stations priced jointly, and the
/// alliance's DR contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alliance {
    pub id: String,
    pub station_ids: Vec<String>,
    pub dr: DrContract,
}

/// Market-wide pricing and preference parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Grid electricity price, the lower price bound (¥/kWh).
    pub grid_price: f64,
    /// Upper price bound (¥/kWh).
    pub price_max: f64,
    /// Increment of the optional price grid (¥/kWh).
    pub price_step: f64,
    /// Reference price used for the delay (virtual station) option (¥/kWh).
    pub normal_price: f64,
    /// SOC safety threshold used by the delay option.
    pub soc_safe: f64,
    /// Value-function gain exponent, in (0, 1).
    pub value_alpha: f64,
    /// Value-function loss exponent, in (0, 1).
    pub value_beta: f64,
    /// Loss-aversion multiplier, >= 1.
    pub value_lambda: f64,
}

impl MarketConfig {
    /// Number of optional price points between `grid_price` and `price_max`.
    pub fn price_count(&self) -> usize {
        ((self.price_max - self.grid_price) / self.price_step).round() as usize + 1
    }

    /// The optional price grid, ascending, clamped into the legal band.
    pub fn price_grid(&self) -> Vec<f64> {
        (0..self.price_count())
            .map(|i| (self.grid_price + i as f64 * self.price_step).min(self.price_max))
            .collect()
    }
}

/// Parameters of a (truncated) normal belief over the time-sensitivity
/// coefficient, with the number of typical values used to discretize it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBelief {
    pub mu: f64,
    pub sigma: f64,
    pub z: usize,
}

/// A complete single-round snapshot: all charging requests, all stations,
/// alliance structure, market parameters, and the true and perceived
/// time-sensitivity distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub evs: Vec<EvRequest>,
    pub stations: Vec<Station>,
    pub alliances: Vec<Alliance>,
    pub market: MarketConfig,
    pub theta_truth: ThetaBelief,
    /// Each alliance's perceived theta distribution, keyed by alliance id.
    pub theta_beliefs: BTreeMap<String, ThetaBelief>,
}

impl Scenario {
    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    pub fn alliance_index(&self, id: &str) -> Option<usize> {
        self.alliances.iter().position(|a| a.id == id)
    }

    /// Member station indices per alliance, in alliance declaration order.
    pub fn alliance_station_indices(&self) -> Vec<Vec<usize>> {
        self.alliances
            .iter()
            .map(|a| {
                a.station_ids
                    .iter()
                    .filter_map(|sid| self.station_index(sid))
                    .collect()
            })
            .collect()
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Checks every documented invariant and returns one description per
/// violation, each naming the offending entity. An empty list means the
/// scenario is safe for the downstream modules.
pub fn validate_scenario(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();

    let mut ev_ids = BTreeSet::new();
    for ev in &s.evs {
        let tag = format!("ev '{}'", ev.id);
        if !ev_ids.insert(ev.id.as_str()) {
            out.push(format!("{tag}: duplicate id"));
        }
        if !ev.position.is_valid() {
            out.push(format!("{tag}: position out of lon/lat range"));
        }
        if !(ev.soc.is_finite() && ev.soc > 0.0 && ev.soc < ev.soc_target) {
            out.push(format!(
                "{tag}: requires 0 < soc < soc_target, got soc={} soc_target={}",
                ev.soc, ev.soc_target
            ));
        }
        if !(ev.soc_target.is_finite() && ev.soc_target <= 1.0) {
            out.push(format!("{tag}: soc_target must be <= 1"));
        }
        if !positive(ev.capacity_kwh) {
            out.push(format!("{tag}: capacity_kwh must be positive"));
        }
        if let Some(t) = ev.time_limit_h {
            if !positive(t) {
                out.push(format!("{tag}: time_limit_h must be positive"));
            }
        }
        if !positive(ev.theta_true) {
            out.push(format!("{tag}: theta_true must be positive"));
        }
        if !positive(ev.max_onboard_power_kw) {
            out.push(format!("{tag}: max_onboard_power_kw must be positive"));
        }
    }

    let alliance_ids: BTreeSet<&str> = s.alliances.iter().map(|a| a.id.as_str()).collect();
    if alliance_ids.len() != s.alliances.len() {
        out.push("alliances: duplicate alliance id".to_string());
    }

    let mut station_ids = BTreeSet::new();
    for st in &s.stations {
        let tag = format!("station '{}'", st.id);
        if !station_ids.insert(st.id.as_str()) {
            out.push(format!("{tag}: duplicate id"));
        }
        if !st.position.is_valid() {
            out.push(format!("{tag}: position out of lon/lat range"));
        }
        if st.pile_count < 1 {
            out.push(format!("{tag}: pile_count must be >= 1"));
        }
        if !positive(st.pile_power_kw) {
            out.push(format!("{tag}: pile_power_kw must be positive"));
        }
        if st.charging_remaining_h.len() > st.pile_count {
            out.push(format!("{tag}: more charging EVs than piles"));
        }
        if st.charging_remaining_h.iter().any(|t| !non_negative(*t)) {
            out.push(format!("{tag}: charging_remaining_h entries must be >= 0"));
        }
        if st.charging_remaining_h.windows(2).any(|w| w[0] > w[1]) {
            out.push(format!("{tag}: charging_remaining_h must be ascending"));
        }
        if st.queue_count > 0 && st.charging_remaining_h.len() != st.pile_count {
            out.push(format!("{tag}: queue present while piles are not all busy"));
        }
        if !alliance_ids.contains(st.alliance_id.as_str()) {
            out.push(format!(
                "{tag}: alliance_id '{}' does not resolve",
                st.alliance_id
            ));
        }
    }

    for al in &s.alliances {
        let tag = format!("alliance '{}'", al.id);
        if al.station_ids.is_empty() {
            out.push(format!("{tag}: station_ids must be non-empty"));
        }
        let distinct: BTreeSet<&str> = al.station_ids.iter().map(|x| x.as_str()).collect();
        if distinct.len() != al.station_ids.len() {
            out.push(format!("{tag}: station_ids must be distinct"));
        }
        for sid in &al.station_ids {
            match s.stations.iter().find(|st| st.id == *sid) {
                None => out.push(format!("{tag}: station id '{sid}' does not resolve")),
                Some(st) if st.alliance_id != al.id => out.push(format!(
                    "{tag}: station '{sid}' declares alliance_id '{}'",
                    st.alliance_id
                )),
                Some(_) => {}
            }
        }
        if !non_negative(al.dr.fil_kw) {
            out.push(format!("{tag}: dr.fil_kw must be >= 0"));
        }
        if !non_negative(al.dr.penalty_price) {
            out.push(format!("{tag}: dr.penalty_price must be >= 0"));
        }
        if !non_negative(al.dr.prepaid_incentive) {
            out.push(format!("{tag}: dr.prepaid_incentive must be >= 0"));
        }
        if !s.theta_beliefs.contains_key(&al.id) {
            out.push(format!("{tag}: missing theta belief"));
        }
    }

    for id in s.theta_beliefs.keys() {
        if !alliance_ids.contains(id.as_str()) {
            out.push(format!(
                "theta_beliefs: alliance id '{id}' does not resolve"
            ));
        }
    }

    let m = &s.market;
    if !(m.grid_price.is_finite() && m.price_max.is_finite() && m.grid_price <= m.price_max) {
        out.push("market: requires grid_price <= price_max".to_string());
    }
    if !positive(m.price_step) {
        out.push("market: price_step must be positive".to_string());
    } else {
        let steps = (m.price_max - m.grid_price) / m.price_step;
        if (steps - steps.round()).abs() > 1e-9 {
            out.push("market: price band is not a whole number of steps".to_string());
        }
    }
    if !(m.soc_safe > 0.0 && m.soc_safe < 1.0) {
        out.push("market: soc_safe must lie in (0, 1)".to_string());
    }
    if !(m.value_alpha > 0.0 && m.value_alpha < 1.0) {
        out.push("market: value_alpha must lie in (0, 1)".to_string());
    }
    if !(m.value_beta > 0.0 && m.value_beta < 1.0) {
        out.push("market: value_beta must lie in (0, 1)".to_string());
    }
    if !(m.value_lambda.is_finite() && m.value_lambda >= 1.0) {
        out.push("market: value_lambda must be >= 1".to_string());
    }
    if !non_negative(m.normal_price) {
        out.push("market: normal_price must be >= 0".to_string());
    }

    for (name, belief) in std::iter::once(("theta_truth", &s.theta_truth))
        .chain(s.theta_beliefs.iter().map(|(k, v)| (k.as_str(), v)))
    {
        if !positive(belief.mu) {
            out.push(format!("{name}: theta mu must be positive"));
        }
        if !positive(belief.sigma) {
            out.push(format!("{name}: theta sigma must be positive"));
        }
        if belief.z < 1 {
            out.push(format!("{name}: theta z must be >= 1"));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::test_fixtures::small_scenario;

    #[test]
    fn well_formed_scenario_has_no_violations() {
        let s = small_scenario();
        assert_eq!(validate_scenario(&s), Vec::<String>::new());
    }

    #[test]
    fn unresolved_alliance_reference_is_reported() {
        let mut s = small_scenario();
        s.stations[0].alliance_id = "X".to_string();
        let violations = validate_scenario(&s);
        assert!(violations.iter().any(|v| v.contains(&s.stations[0].id) && v.contains("'X'")));
    }

    #[test]
    fn inverted_soc_is_reported() {
        let mut s = small_scenario();
        s.evs[0].soc = 0.9;
        s.evs[0].soc_target = 0.8;
        let violations = validate_scenario(&s);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains(&s.evs[0].id));
        assert!(violations[0].contains("soc"));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut s = small_scenario();
        s.evs[0].theta_true = -1.0;
        let first = validate_scenario(&s);
        let second = validate_scenario(&s);
        assert_eq!(first, second);
        assert!(!first.is_empty());
    }

    #[test]
    fn queue_without_full_piles_is_reported() {
        let mut s = small_scenario();
        s.stations[0].queue_count = 2;
        s.stations[0].charging_remaining_h = vec![0.5];
        assert!(s.stations[0].pile_count > 1);
        let violations = validate_scenario(&s);
        assert!(violations.iter().any(|v| v.contains("queue")));
    }

    #[test]
    fn price_grid_covers_band_inclusively() {
        let s = small_scenario();
        let grid = s.market.price_grid();
        assert_eq!(grid.len(), 26);
        assert_eq!(grid[0], s.market.grid_price);
        assert_eq!(*grid.last().unwrap(), s.market.price_max);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn effective_time_limit_defaults_to_minimal_charge_time() {
        let s = small_scenario();
        let mut ev = s.evs[0].clone();
        ev.soc = 0.3;
        ev.soc_target = 0.8;
        ev.capacity_kwh = 60.0;
        ev.max_onboard_power_kw = 60.0;
        ev.time_limit_h = None;
        assert!((ev.effective_time_limit_h() - 0.5).abs() < 1e-12);
        ev.time_limit_h = Some(2.0);
        assert_eq!(ev.effective_time_limit_h(), 2.0);
    }
}
