//! Bundled base velocity model and station network, so generation works
//! without any external files.

use crate::forward::{load_station_list, load_velocity_model, StationGeom, VelocityModel};

pub const BASE_MODEL_ID: &str = "socal";
pub const BASE_MODEL_TEXT: &str = include_str!("../assets/base_model.txt");
pub const STATIONS_TEXT: &str = include_str!("../assets/stations.txt");

pub fn base_model() -> VelocityModel {
    load_velocity_model(BASE_MODEL_ID, BASE_MODEL_TEXT).expect("bundled model is valid")
}

pub fn stations() -> Vec<StationGeom> {
    load_station_list(STATIONS_TEXT).expect("bundled station list is valid")
}
