//! Scenario generation, JSON (de)serialization, and the canonical base
//! configuration used by the sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_scenario, Alliance, DrContract, EvRequest, GeoPoint, MarketConfig, Scenario,
    Station, ThetaBelief,
};
use crate::stats::TruncatedNormal;

const STATION_STREAM: u64 = 10;
const EV_STREAM: u64 = 11;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read or write scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario JSON is malformed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario violates invariants:\n  {}", violations.join("\n  "))]
    Invalid { violations: Vec<String> },
    #[error("generator config invalid: {0}")]
    InvalidConfig(String),
}

/// Axis-aligned lon/lat rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl BoundingBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Self {
        Self { min, max }
    }

    pub fn is_well_formed(&self) -> bool {
        self.min.is_valid() && self.max.is_valid() && self.min.lon < self.max.lon
            && self.min.lat < self.max.lat
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min.lon..=self.max.lon).contains(&p.lon)
            && (self.min.lat..=self.max.lat).contains(&p.lat)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            (self.min.lon + self.max.lon) / 2.0,
            (self.min.lat + self.max.lat) / 2.0,
        )
    }
}

/// Stations of one alliance placed uniformly in the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllianceSpec {
    pub id: String,
    pub station_count: usize,
    pub dr: DrContract,
}

/// Station layout: either an explicit station list (alliances derived from
/// their `alliance_id` fields plus the specs' DR contracts) or per-alliance
/// counts with uniform placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StationLayout {
    Explicit {
        stations: Vec<Station>,
        alliances: Vec<Alliance>,
    },
    PerAlliance {
        alliances: Vec<AllianceSpec>,
    },
}

/// Everything needed to synthesize a scenario deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub bbox: BoundingBox,
    /// Base number of charging requests before demand scaling.
    pub ev_count: usize,
    /// Multiplies `ev_count`; the generated count is the rounded product.
    pub demand_multiplier: f64,
    /// Optional sub-box holding all EV positions.
    pub concentration_region: Option<BoundingBox>,
    pub soc_range: (f64, f64),
    pub time_limit_range_h: (f64, f64),
    pub soc_target: f64,
    pub capacity_kwh: f64,
    pub max_onboard_power_kw: f64,
    pub pile_count: usize,
    pub pile_power_kw: f64,
    pub layout: StationLayout,
    pub market: MarketConfig,
    pub theta_truth: ThetaBelief,
    /// Per-alliance perceived beliefs; alliances absent here perceive the
    /// true distribution.
    #[serde(default)]
    pub theta_beliefs: BTreeMap<String, ThetaBelief>,
    pub seed: u64,
}

fn check_config(cfg: &GeneratorConfig) -> Result<(), ScenarioError> {
    if !cfg.bbox.is_well_formed() {
        return Err(ScenarioError::InvalidConfig(
            "bounding box is not well-formed".into(),
        ));
    }
    if let Some(region) = &cfg.concentration_region {
        if !region.is_well_formed() {
            return Err(ScenarioError::InvalidConfig(
                "concentration region is not well-formed".into(),
            ));
        }
    }
    if cfg.ev_count < 1 {
        return Err(ScenarioError::InvalidConfig("ev_count must be >= 1".into()));
    }
    if !(cfg.demand_multiplier.is_finite() && cfg.demand_multiplier > 0.0) {
        return Err(ScenarioError::InvalidConfig(
            "demand_multiplier must be positive".into(),
        ));
    }
    let (lo, hi) = cfg.soc_range;
    if !(0.0 < lo && lo <= hi && hi < cfg.soc_target) {
        return Err(ScenarioError::InvalidConfig(
            "soc_range must satisfy 0 < lo <= hi < soc_target".into(),
        ));
    }
    let (tlo, thi) = cfg.time_limit_range_h;
    if !(0.0 < tlo && tlo <= thi) {
        return Err(ScenarioError::InvalidConfig(
            "time_limit_range_h must satisfy 0 < lo <= hi".into(),
        ));
    }
    Ok(())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_point(rng: &mut ChaCha8Rng, b: &BoundingBox) -> GeoPoint {
    let lon = uniform_in(rng, b.min.lon, b.max.lon);
    let lat = uniform_in(rng, b.min.lat, b.max.lat);
    GeoPoint::new(lon, lat)
}

/// Synthesizes a scenario from the config. Stations are drawn first so the
/// layout is unaffected by demand scaling; the result always passes
/// validation.
pub fn generate(cfg: &GeneratorConfig) -> Result<Scenario, ScenarioError> {
    check_config(cfg)?;

    let (stations, alliances) = match &cfg.layout {
        StationLayout::Explicit {
            stations,
            alliances,
        } => (stations.clone(), alliances.clone()),
        StationLayout::PerAlliance { alliances } => {
            let mut rng = stream_rng(cfg.seed, STATION_STREAM);
            let mut stations = Vec::new();
            let mut out = Vec::new();
            let mut counter = 0usize;
            for spec in alliances {
                let mut ids = Vec::with_capacity(spec.station_count);
                for _ in 0..spec.station_count {
                    counter += 1;
                    let id = format!("cs_{counter:03}");
                    stations.push(Station {
                        id: id.clone(),
                        position: sample_point(&mut rng, &cfg.bbox),
                        alliance_id: spec.id.clone(),
                        pile_count: cfg.pile_count,
                        pile_power_kw: cfg.pile_power_kw,
                        charging_remaining_h: vec![],
                        queue_count: 0,
                    });
                    ids.push(id);
                }
                out.push(Alliance {
                    id: spec.id.clone(),
                    station_ids: ids,
                    dr: spec.dr.clone(),
                });
            }
            (stations, out)
        }
    };

    let ev_total = (cfg.ev_count as f64 * cfg.demand_multiplier).round() as usize;
    let ev_box = cfg.concentration_region.as_ref().unwrap_or(&cfg.bbox);
    let theta = TruncatedNormal::new(cfg.theta_truth.mu, cfg.theta_truth.sigma, 0.0);
    let mut rng = stream_rng(cfg.seed, EV_STREAM);
    let mut evs = Vec::with_capacity(ev_total);
    for i in 1..=ev_total {
        let position = sample_point(&mut rng, ev_box);
        let soc = uniform_in(&mut rng, cfg.soc_range.0, cfg.soc_range.1);
        let time_limit = uniform_in(&mut rng, cfg.time_limit_range_h.0, cfg.time_limit_range_h.1);
        let theta_true = theta.quantile(rng.random_range(0.0..1.0));
        evs.push(EvRequest {
            // Fixed-width ids keep request identities stable across
            // demand multipliers.
            id: format!("ev_{i:04}"),
            position,
            soc,
            soc_target: cfg.soc_target,
            capacity_kwh: cfg.capacity_kwh,
            time_limit_h: Some(time_limit),
            theta_true,
            max_onboard_power_kw: cfg.max_onboard_power_kw,
        });
    }

    let mut beliefs = BTreeMap::new();
    for al in &alliances {
        let belief = cfg
            .theta_beliefs
            .get(&al.id)
            .copied()
            .unwrap_or(cfg.theta_truth);
        beliefs.insert(al.id.clone(), belief);
    }

    let scenario = Scenario {
        evs,
        stations,
        alliances,
        market: cfg.market.clone(),
        theta_truth: cfg.theta_truth,
        theta_beliefs: beliefs,
    };
    let violations = validate_scenario(&scenario);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid { violations });
    }
    Ok(scenario)
}

/// Loads and validates a scenario JSON file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let scenario: Scenario = serde_json::from_str(&text)?;
    let violations = validate_scenario(&scenario);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid { violations });
    }
    Ok(scenario)
}

/// Writes a scenario as pretty-printed JSON.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    let mut text = serde_json::to_string_pretty(scenario)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Replaces the EV list with `round(len * factor)` requests by cycling the
/// existing ones in order; replicas get a suffixed id. Station state is
/// untouched, so demand scaling never moves the supply side.
pub fn scale_demand(scenario: &Scenario, factor: f64) -> Scenario {
    assert!(factor.is_finite() && factor > 0.0);
    let n = scenario.evs.len();
    let target = (n as f64 * factor).round() as usize;
    let mut evs = Vec::with_capacity(target);
    for idx in 0..target {
        let base = &scenario.evs[idx % n];
        let mut ev = base.clone();
        if idx >= n {
            ev.id = format!("{}_x{}", base.id, idx / n);
        }
        evs.push(ev);
    }
    Scenario {
        evs,
        ..scenario.clone()
    }
}

/// The canonical synthetic base case: three alliances with 28/46/9 stations
/// on an 11 km square, 300 requests, a 0.5..3.0 price band in 0.1 steps,
/// and DR contracts present but disabled.
pub fn build_base_case() -> GeneratorConfig {
    let fils = [6072.3, 9975.9, 1951.8];
    let alliances = ["csa_1", "csa_2", "csa_3"]
        .iter()
        .zip([28usize, 46, 9])
        .zip(fils)
        .map(|((id, station_count), fil_kw)| AllianceSpec {
            id: id.to_string(),
            station_count,
            dr: DrContract {
                fil_kw,
                penalty_price: 6.0,
                prepaid_incentive: 0.5 * fil_kw,
                enabled: false,
            },
        })
        .collect();

    GeneratorConfig {
        bbox: BoundingBox::new(GeoPoint::new(-0.05, -0.05), GeoPoint::new(0.05, 0.05)),
        ev_count: 300,
        demand_multiplier: 1.0,
        concentration_region: None,
        soc_range: (0.15, 0.7),
        time_limit_range_h: (0.5, 2.0),
        soc_target: 0.8,
        capacity_kwh: 60.0,
        max_onboard_power_kw: 60.0,
        pile_count: 4,
        pile_power_kw: 60.0,
        layout: StationLayout::PerAlliance { alliances },
        market: MarketConfig {
            grid_price: 0.5,
            price_max: 3.0,
            price_step: 0.1,
            normal_price: 1.75,
            soc_safe: 0.1,
            value_alpha: 0.88,
            value_beta: 0.88,
            value_lambda: 2.25,
        },
        theta_truth: ThetaBelief {
            mu: 0.1,
            sigma: 0.025,
            z: 11,
        },
        theta_beliefs: BTreeMap::new(),
        seed: 42,
    }
}
