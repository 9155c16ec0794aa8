//! JSON-lines catalog metadata for externally supplied waveforms.
//!
//! One event per line: `{id, lat, lon, depth_km, mw, mt: [6], stations:
//! [{name, lat, lon}]}`. Applying a catalog to container records replaces
//! their labels and geometry and marks them as real data.

use crate::features::EventRecord;
use crate::forward::{geo_to_local, EventGeom, StationGeom};
use crate::mtmath::{mt_to_label, MomentTensor};
use crate::Domain;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no catalog entry for record {0}")]
    Missing(String),
    #[error("record {id}: {msg}")]
    Mismatch { id: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogStation {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEvent {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub depth_km: f64,
    pub mw: f64,
    /// `[Mxx, Myy, Mzz, Mxy, Mxz, Myz]`, any overall scale.
    pub mt: [f64; 6],
    pub stations: Vec<CatalogStation>,
}

pub fn parse_catalog(text: &str) -> Result<Vec<CatalogEvent>, CatalogError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CatalogError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Overrides label, hypocenter and station geometry (the five geometric
/// scalars) of un-normalized records. Station order must match the catalog.
pub fn apply_catalog(records: &[EventRecord], catalog: &[CatalogEvent]) -> Result<Vec<EventRecord>, CatalogError> {
    let by_id: HashMap<&str, &CatalogEvent> = catalog.iter().map(|e| (e.id.as_str(), e)).collect();
    records
        .iter()
        .map(|rec| {
            let ev = by_id
                .get(rec.id.as_str())
                .ok_or_else(|| CatalogError::Missing(rec.id.clone()))?;
            let mismatch = |msg: String| CatalogError::Mismatch {
                id: rec.id.clone(),
                msg,
            };
            if rec.normalized {
                return Err(mismatch("record is already normalized".into()));
            }
            if ev.stations.len() != rec.stations.len() {
                return Err(mismatch(format!(
                    "{} catalog stations vs {} in record",
                    ev.stations.len(),
                    rec.stations.len()
                )));
            }
            let mut label = mt_to_label(&MomentTensor::new(ev.mt)).map_err(|e| mismatch(e.to_string()))?;
            label.mw = ev.mw;
            let geom = EventGeom {
                lat: ev.lat,
                lon: ev.lon,
                depth: ev.depth_km,
                origin_time: 0.0,
            };
            let mut out = rec.clone();
            out.domain = Domain::Real;
            out.lat = ev.lat as f32;
            out.lon = ev.lon as f32;
            out.depth = ev.depth_km as f32;
            out.label = label.as_array().map(|v| v as f32);
            for (st, cs) in out.stations.iter_mut().zip(&ev.stations) {
                let sg = StationGeom {
                    name: cs.name.clone(),
                    lat: cs.lat,
                    lon: cs.lon,
                };
                let (dist, az) = geo_to_local(&geom, &sg);
                st.azimuth = az as f32;
                st.dist = dist as f32;
                st.scalars[..5].copy_from_slice(&[cs.lat, cs.lon, az, dist, ev.depth_km].map(|v| v as f32));
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{StationFeatures, WINDOW};

    fn record() -> EventRecord {
        EventRecord {
            id: "ci001".into(),
            domain: Domain::Synthetic,
            normalized: false,
            lat: 0.0,
            lon: 0.0,
            depth: 0.0,
            label: [0.0; 6],
            window: WINDOW,
            stations: (0..5)
                .map(|_| StationFeatures {
                    azimuth: 0.0,
                    dist: 0.0,
                    scalars: [1.0; 20],
                    p_win: vec![0.0; 6 * WINDOW],
                    s_win: vec![0.0; 6 * WINDOW],
                })
                .collect(),
        }
    }

    fn line(n: usize) -> String {
        let st: Vec<String> = (0..n)
            .map(|i| format!(r#"{{"name":"S{i}","lat":{},"lon":-117.0}}"#, 34.1 + 0.1 * i as f64))
            .collect();
        format!(
            r#"{{"id":"ci001","lat":34.0,"lon":-117.0,"depth_km":7.5,"mw":3.6,"mt":[0,0,0,2,0,0],"stations":[{}]}}"#,
            st.join(",")
        )
    }

    #[test]
    fn applies_labels_and_geometry() {
        let cat = parse_catalog(&format!("{}\n\n", line(5))).unwrap();
        let out = apply_catalog(&[record()], &cat).unwrap();
        let r = &out[0];
        assert_eq!(r.domain, Domain::Real);
        assert_eq!(r.label[5], 3.6);
        let norm: f32 = r.label[..5].iter().map(|v| v * v).sum::<f32>();
        assert!(norm > 0.0);
        assert_eq!(r.stations[0].azimuth, 0.0);
        assert!((r.stations[0].dist - 11.119).abs() < 0.01);
        assert_eq!(r.stations[0].scalars[4], 7.5);
        assert_eq!(r.stations[0].scalars[5], 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_catalog("{\"id\": 1}"),
            Err(CatalogError::Parse { line: 1, .. })
        ));
        let cat = parse_catalog(&line(4)).unwrap();
        assert!(matches!(
            apply_catalog(&[record()], &cat),
            Err(CatalogError::Mismatch { .. })
        ));
        assert!(matches!(apply_catalog(&[record()], &[]), Err(CatalogError::Missing(_))));
    }
}
