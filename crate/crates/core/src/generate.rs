//! Dataset generation: mechanism, hypocenter and station sampling, forward
//! simulation, randomization and feature extraction, one event at a time.

use crate::features::{extract_event, EventRecord};
use crate::forward::{geo_to_local, simulate_event, EventGeom, SimConfig, StationGeom, VelocityModel};
use crate::mtmath::sample_uniform_dc;
use crate::psdr::{augment_event, build_model_library, make_pseudo_real, NoiseLibrary, PsdrConfig, PseudoRealParams};
use crate::rng::{derive_rng, streams, SimRng};
use crate::Domain;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionConfig {
    pub lat: (f64, f64),
    pub lon: (f64, f64),
    pub depth_km: (f64, f64),
    pub mw: (f64, f64),
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            lat: (33.2, 34.8),
            lon: (-118.2, -116.2),
            depth_km: (3.0, 20.0),
            mw: (3.0, 5.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationSelection {
    /// Station list file; the bundled network is used when absent.
    pub file: Option<String>,
    /// Stations farther than this from the epicenter are unavailable.
    pub max_dist_km: f64,
    /// Accepted range of available stations per event.
    pub n_range: (usize, usize),
    /// Events with more than `subsample_above` available stations are
    /// reduced to a uniformly drawn count in `subsample`.
    pub subsample_above: usize,
    pub subsample: (usize, usize),
}

impl Default for StationSelection {
    fn default() -> Self {
        Self {
            file: None,
            max_dist_km: 120.0,
            n_range: (5, 1000),
            subsample_above: 50,
            subsample: (30, 50),
        }
    }
}

/// Everything needed to generate events, shared read-only across workers.
#[derive(Debug, Clone)]
pub struct GenContext {
    pub region: RegionConfig,
    pub selection: StationSelection,
    pub network: Vec<StationGeom>,
    pub base_model: VelocityModel,
    pub library: Vec<VelocityModel>,
    pub noise: NoiseLibrary,
    pub sim: SimConfig,
    pub psdr: PsdrConfig,
}

pub const LIBRARY_SIZE: usize = 17;
pub const GEOMETRY_ATTEMPTS: usize = 5;
const ORIGIN_TIME: f64 = 5.0;

impl GenContext {
    /// Builds the velocity-model library from `seed` and fills in its ids.
    pub fn new(
        region: RegionConfig,
        selection: StationSelection,
        network: Vec<StationGeom>,
        base_model: VelocityModel,
        noise: NoiseLibrary,
        sim: SimConfig,
        mut psdr: PsdrConfig,
        seed: u64,
    ) -> Self {
        let library = build_model_library(
            &base_model,
            LIBRARY_SIZE,
            &mut derive_rng(seed, streams::MODEL_LIBRARY, 0),
        );
        psdr.model_library = library.iter().map(|m| m.id.clone()).collect();
        Self {
            region,
            selection,
            network,
            base_model,
            library,
            noise,
            sim,
            psdr,
        }
    }
}

fn uniform(rng: &mut SimRng, r: (f64, f64)) -> f64 {
    r.0 + rng.random::<f64>() * (r.1 - r.0)
}

/// Picks stations within range of the epicenter, sub-sampling dense sets.
/// The flag reports whether sub-sampling happened.
pub fn select_stations(ctx: &GenContext, geom: &EventGeom, rng: &mut SimRng) -> Option<(Vec<StationGeom>, bool)> {
    let sel = &ctx.selection;
    let avail: Vec<&StationGeom> = ctx
        .network
        .iter()
        .filter(|s| geo_to_local(geom, s).0 <= sel.max_dist_km)
        .collect();
    if avail.len() < sel.n_range.0.max(ctx.psdr.min_stations) || avail.len() > sel.n_range.1 {
        return None;
    }
    if avail.len() <= sel.subsample_above {
        return Some((avail.into_iter().cloned().collect(), false));
    }
    let hi = sel.subsample.1.min(avail.len());
    let lo = sel.subsample.0.min(hi);
    let k = rng.random_range(lo..=hi);
    let mut idx = sample(rng, avail.len(), k).into_vec();
    idx.sort_unstable();
    Some((idx.into_iter().map(|i| avail[i].clone()).collect(), true))
}

pub fn event_id(domain: Domain, index: u64) -> String {
    let prefix = match domain {
        Domain::Synthetic => "syn",
        Domain::PseudoReal => "psr",
        Domain::Real => "real",
    };
    format!("{prefix}-{index:06}")
}

/// Generates event `index`; the generator stream depends only on
/// `(seed, index)`, so events can be produced in any order.
pub fn generate_event(ctx: &GenContext, seed: u64, index: u64, domain: Domain) -> Result<EventRecord, String> {
    let mut rng = derive_rng(seed, streams::EVENT, index);
    let mut last_err = String::from("no usable station geometry");
    for _ in 0..GEOMETRY_ATTEMPTS {
        let mt = sample_uniform_dc(&mut rng, ctx.region.mw);
        let geom = EventGeom {
            lat: uniform(&mut rng, ctx.region.lat),
            lon: uniform(&mut rng, ctx.region.lon),
            depth: uniform(&mut rng, ctx.region.depth_km),
            origin_time: ORIGIN_TIME,
        };
        let Some((stations, subsampled)) = select_stations(ctx, &geom, &mut rng) else {
            continue;
        };
        // Station dropout must not undercut the sub-sampled set size.
        let mut psdr = ctx.psdr.clone();
        if subsampled {
            psdr.min_stations = psdr.min_stations.max(ctx.selection.subsample.0);
        }
        let ev = match domain {
            Domain::PseudoReal => {
                let params = PseudoRealParams {
                    mt,
                    geom,
                    stations: &stations,
                    base_model: &ctx.base_model,
                    sim: ctx.sim,
                    psdr: psdr.clone(),
                    noise: &ctx.noise,
                };
                make_pseudo_real(&params, &mut rng)
            }
            _ => {
                let model = &ctx.library[rng.random_range(0..ctx.library.len())];
                simulate_event(&mt, &geom, &stations, model, &ctx.sim)
                    .map_err(Into::into)
                    .and_then(|sim| {
                        let mut ev = sim.event;
                        ev.domain = domain;
                        augment_event(&ev, &psdr, Some(&ctx.noise), &mut rng)
                    })
            }
        };
        match ev {
            Ok(ev) => {
                return extract_event(&event_id(domain, index), &ev).map_err(|e| e.to_string());
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(last_err)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenSummary {
    pub requested: usize,
    pub failures: usize,
    /// `(n_stations, n_events)`, ascending.
    pub station_hist: Vec<(usize, usize)>,
}

impl GenSummary {
    pub fn failure_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.failures as f64 / self.requested as f64
        }
    }
}

/// Generates events `0..n`. Parallel and serial runs give identical output.
pub fn generate_dataset(
    ctx: &GenContext,
    seed: u64,
    n: usize,
    domain: Domain,
    parallel: bool,
) -> (Vec<EventRecord>, GenSummary) {
    let run = |i: usize| generate_event(ctx, seed, i as u64, domain);
    let results: Vec<Result<EventRecord, String>> = if parallel {
        (0..n).into_par_iter().map(run).collect()
    } else {
        (0..n).map(run).collect()
    };
    let mut records = Vec::with_capacity(n);
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("event {i} failed: {e}");
                failures += 1;
            }
        }
    }
    let mut hist = std::collections::BTreeMap::new();
    for r in &records {
        *hist.entry(r.stations.len()).or_insert(0) += 1;
    }
    let summary = GenSummary {
        requested: n,
        failures,
        station_hist: hist.into_iter().collect(),
    };
    (records, summary)
}
