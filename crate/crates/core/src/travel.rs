//! Driving-time providers and station waiting time.
//!
//! Driving time is delegated to a pluggable provider: a synthetic
//! great-circle estimate, a preloaded lookup matrix, or an external routing
//! endpoint (interface only; never called in tests).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{GeoPoint, Station};

/// Earth radius used by the great-circle estimate, in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default urban driving speed for the synthetic provider, km/h.
pub const DEFAULT_SPEED_KMH: f64 = 30.0;

/// Default road-vs-crow-flight detour multiplier.
pub const DEFAULT_DETOUR_FACTOR: f64 = 1.4;

#[derive(Debug, Error)]
pub enum TravelError {
    #[error("travel matrix has no entry for ev '{ev_id}' and station '{station_id}'")]
    MissingPair { ev_id: String, station_id: String },
    #[error("travel matrix row {row}: unknown {kind} id '{id}'")]
    UnknownId {
        row: usize,
        kind: &'static str,
        id: String,
    },
    #[error("travel matrix row {row}: negative duration {hours}")]
    NegativeDuration { row: usize, hours: f64 },
    #[error("failed to read travel matrix: {0}")]
    Csv(#[from] csv::Error),
    #[error("external travel provider '{endpoint}' is not reachable in this build")]
    ExternalUnavailable { endpoint: String },
}

/// Preloaded `(ev, station) -> hours` lookup table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TravelMatrix {
    entries: BTreeMap<(String, String), f64>,
}

#[derive(Debug, Deserialize)]
struct MatrixRow {
    ev_id: String,
    station_id: String,
    hours: f64,
}

impl TravelMatrix {
    /// Loads a CSV with header `ev_id,station_id,hours`, rejecting ids not
    /// present in the given scenario id sets and negative durations. Every
    /// (ev, station) pair must be covered.
    pub fn from_reader<R: Read>(
        reader: R,
        ev_ids: &[String],
        station_ids: &[String],
    ) -> Result<Self, TravelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = BTreeMap::new();
        for (idx, row) in rdr.deserialize::<MatrixRow>().enumerate() {
            let row = row?;
            let rownum = idx + 2; // 1-based, after the header
            if !ev_ids.contains(&row.ev_id) {
                return Err(TravelError::UnknownId {
                    row: rownum,
                    kind: "ev",
                    id: row.ev_id,
                });
            }
            if !station_ids.contains(&row.station_id) {
                return Err(TravelError::UnknownId {
                    row: rownum,
                    kind: "station",
                    id: row.station_id,
                });
            }
            if !(row.hours >= 0.0) {
                return Err(TravelError::NegativeDuration {
                    row: rownum,
                    hours: row.hours,
                });
            }
            entries.insert((row.ev_id, row.station_id), row.hours);
        }
        for ev in ev_ids {
            for st in station_ids {
                if !entries.contains_key(&(ev.clone(), st.clone())) {
                    return Err(TravelError::MissingPair {
                        ev_id: ev.clone(),
                        station_id: st.clone(),
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(
        path: &Path,
        ev_ids: &[String],
        station_ids: &[String],
    ) -> Result<Self, TravelError> {
        let file = std::fs::File::open(path).map_err(|e| {
            TravelError::Csv(csv::Error::from(e))
        })?;
        Self::from_reader(file, ev_ids, station_ids)
    }

    pub fn insert(&mut self, ev_id: &str, station_id: &str, hours: f64) {
        self.entries
            .insert((ev_id.to_string(), station_id.to_string()), hours);
    }

    pub fn get(&self, ev_id: &str, station_id: &str) -> Option<f64> {
        self.entries
            .get(&(ev_id.to_string(), station_id.to_string()))
            .copied()
    }
}

/// Source of driving times between an EV position and a station.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TravelProvider {
    /// Great-circle distance scaled by a detour factor at constant speed.
    Synthetic { speed_kmh: f64, detour_factor: f64 },
    /// Preloaded per-pair durations.
    Matrix { matrix: TravelMatrix },
    /// Descriptor for a real routing service; calls always fail in this
    /// build so test runs stay hermetic.
    External { endpoint: String },
}

impl Default for TravelProvider {
    fn default() -> Self {
        Self::synthetic_default()
    }
}

impl TravelProvider {
    pub fn synthetic_default() -> Self {
        TravelProvider::Synthetic {
            speed_kmh: DEFAULT_SPEED_KMH,
            detour_factor: DEFAULT_DETOUR_FACTOR,
        }
    }

    /// Driving time in hours from `from` to `to` for the given pair of ids.
    pub fn drive_time(
        &self,
        from: GeoPoint,
        to: GeoPoint,
        ev_id: &str,
        station_id: &str,
    ) -> Result<f64, TravelError> {
        match self {
            TravelProvider::Synthetic {
                speed_kmh,
                detour_factor,
            } => Ok(haversine_km(from, to) * detour_factor / speed_kmh),
            TravelProvider::Matrix { matrix } => {
                matrix
                    .get(ev_id, station_id)
                    .ok_or_else(|| TravelError::MissingPair {
                        ev_id: ev_id.to_string(),
                        station_id: station_id.to_string(),
                    })
            }
            TravelProvider::External { endpoint } => Err(TravelError::ExternalUnavailable {
                endpoint: endpoint.clone(),
            }),
        }
    }
}

/// Great-circle distance between two coordinates, in km.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat_a = a.lat.to_radians();
    let lat_b = b.lat.to_radians();
    let d_lat = (b.lat - a.lat).to_radians();
    let d_lon = (b.lon - a.lon).to_radians();
    let h = (d_lat / 2.0).sin().powi(2)
        + lat_a.cos() * lat_b.cos() * (d_lon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Expected waiting time at a station, in hours.
///
/// Free pile: 0. All piles busy: the (1 + queue_count)-th shortest remaining
/// charge duration. When the queue is at least as long as the remaining-time
/// list (outside the defined range), a coarse saturation estimate applies:
/// the longest remaining time plus enough mean-duration service rounds to
/// drain the queue ahead.
pub fn wait_time(st: &Station) -> f64 {
    let charging = &st.charging_remaining_h;
    if charging.len() < st.pile_count {
        return 0.0;
    }
    if st.queue_count < charging.len() {
        return charging[st.queue_count];
    }
    let max = charging.last().copied().unwrap_or(0.0);
    let mean = charging.iter().sum::<f64>() / charging.len() as f64;
    let overflow = (st.queue_count - charging.len() + 1) as f64;
    max + (overflow / st.pile_count as f64).ceil() * mean
}
