//! Run configuration: the serializable knobs, their defaults, and the
//! validation gate every entry point funnels through.
//!
//! A config either validates as a whole or is rejected with a message naming
//! the offending field; no stage re-checks what validation already
//! certified. The one constraint that needs computed data — the bubble count
//! against the ring size — is enforced by the driver as soon as the geometry
//! stage has produced the ring size.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dims::Dimensions;
use crate::error::{Error, Result};
use crate::params::background::BackgroundK;
use crate::params::gauge::GaugePhi;

/// Everything a run depends on. Serialization order is struct order; the
/// config is echoed verbatim into every report so a report alone can
/// reproduce its run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Ambient dimension n.
    pub dim_n: u32,
    /// Operator order m; the equation is the m-fold negative Laplacian.
    pub order_m: u32,
    /// Tower truncation: number of bubbles actually built and verified.
    pub bubbles: u32,
    /// C^1 budget for the distance between the prescribed and the assembled
    /// coefficient; must lie in (0, 1).
    pub epsilon: f64,
    /// Prescribed background curvature.
    pub background: BackgroundK,
    /// Blow-up gauge the tower peaks must outrun.
    pub gauge: GaugePhi,
    /// Probe-cloud size for the pointwise verifications.
    pub probes: usize,
    /// Monte-Carlo node count for the fixed-point quadrature.
    pub mc_samples: usize,
    /// Relative tolerance the fixed-point iteration must reach.
    pub tol: f64,
    /// Iteration cap for the fixed-point solve.
    pub max_iter: usize,
    /// Number of leading probes the fixed-point iteration sweeps; the rest
    /// of the cloud gets one final operator application.
    pub picard_prefix: usize,
    /// Correction levels per probe in the barrier comparison.
    pub supersol_levels: usize,
    /// Master seed; all per-stage streams are derived from it.
    pub seed: u64,
    /// Where to write the report JSON; `None` leaves it to the caller.
    pub report_path: Option<PathBuf>,
    /// Directory for the field CSV dumps; `None` skips them.
    pub fields_path: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dim_n: 8,
            order_m: 2,
            bubbles: 18,
            epsilon: 0.5,
            background: BackgroundK::Const,
            gauge: GaugePhi::Power { q: 4.0 },
            probes: 10_000,
            mc_samples: 16_384,
            tol: 1e-4,
            max_iter: 50,
            picard_prefix: 160,
            supersol_levels: 16,
            seed: 0,
            report_path: None,
            fields_path: None,
        }
    }
}

impl PipelineConfig {
    /// Validate every field and return the dimension pair. The dimension
    /// check itself produces the hypothesis message (m >= 1, n >= 2m + 4).
    pub fn validate(&self) -> Result<Dimensions> {
        let dim = Dimensions::new(self.dim_n, self.order_m)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        self.background.validate()?;
        self.gauge.validate()?;
        if self.bubbles == 0 {
            return Err(Error::Config("bubble count must be positive".into()));
        }
        if self.probes == 0 {
            return Err(Error::Config("probe count must be positive".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("Monte-Carlo sample count must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!(
                "solver tolerance must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("iteration cap must be positive".into()));
        }
        if self.picard_prefix == 0 {
            return Err(Error::Config("iteration prefix must be positive".into()));
        }
        if self.supersol_levels == 0 {
            return Err(Error::Config("barrier level count must be positive".into()));
        }
        Ok(dim)
    }

    /// Parse a JSON config file; missing fields fall back to defaults,
    /// unknown fields are rejected (serde reports the location).
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Derive a per-stage seed from the master seed and a stage tag, so stages
/// draw from independent reproducible streams and inserting a stage never
/// shifts another stage's stream.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    // FNV-1a over the tag, then a splitmix64 finalizer over the XOR with
    // the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
