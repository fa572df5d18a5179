//! TOML file overriding the modeled hardware constants.
//!
//! ```toml
//! clock_hz = 250000000
//! sync_timeout = 1000000000
//!
//! [geom]
//! d = 64
//! l = 16
//!
//! [link]
//! bits_per_cycle = 500
//! hop_latency = 64
//!
//! [lat]
//! add = 11
//! transpose = 64
//! ```
//!
//! Tables may list any subset of their keys; the rest keep their defaults.

use std::path::Path;

use anyhow::{Context, Result};
use dfx_core::cluster::ClusterConfig;
use dfx_core::engine::LatencyTable;
use dfx_core::memory::TileGeom;
use dfx_core::network::RingLink;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub geom: Option<TileGeom>,
    pub link: Option<RingLink>,
    pub lat: Option<LatencyTable>,
    pub clock_hz: Option<u64>,
    pub sync_timeout: Option<u64>,
}

impl Overrides {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&self, c: &mut ClusterConfig) {
        if let Some(g) = self.geom {
            c.geom = g;
        }
        if let Some(l) = self.link {
            c.link = l;
        }
        if let Some(l) = self.lat {
            c.lat = l;
        }
        if let Some(h) = self.clock_hz {
            c.clock_hz = h;
        }
        if let Some(t) = self.sync_timeout {
            c.sync_timeout = t;
        }
    }
}
