//! Physics side of the SourceNet pipeline: moment tensors, the layered-earth
//! forward simulator, physics-structured domain randomization, and the
//! station feature extraction that feeds the network.

pub mod assets;
pub mod catalog;
pub mod container;
pub mod dsp;
pub mod features;
pub mod forward;
pub mod generate;
pub mod mtmath;
pub mod psdr;
pub mod rng;

use serde::{Deserialize, Serialize};

/// Where an event came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    PseudoReal,
    Real,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Synthetic => 0,
            Domain::PseudoReal => 1,
            Domain::Real => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Synthetic),
            1 => Some(Domain::PseudoReal),
            2 => Some(Domain::Real),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Synthetic => "synthetic",
            Domain::PseudoReal => "pseudo_real",
            Domain::Real => "real",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(Domain::Synthetic),
            "pseudo_real" | "pseudo-real" => Ok(Domain::PseudoReal),
            "real" => Ok(Domain::Real),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

pub use forward::{EventGeom, StationGeom, SyntheticEvent, Trace, VelocityModel};
pub use mtmath::{DoubleCouple, MomentTensor, SourceLabel};
