use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// View budget every domain is padded to.
pub const K_MAX: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    /// Per-channel multiplicative gain, all > 0.
    pub gain: [f64; 3],
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub palette_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: usize,
    pub num_views: usize,
    pub style: DomainStyle,
    /// Logging rate of the source sensor rig; samples are always drawn at 2 Hz.
    pub native_rate_hz: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 || self.num_views > K_MAX {
            return Err(Error::invalid(format!(
                "num_views {} outside [1, {K_MAX}]",
                self.num_views
            )));
        }
        if !(self.style.noise_sigma >= 0.0) || self.style.gain.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::invalid("domain style needs gains > 0 and sigma >= 0"));
        }
        Ok(())
    }
}

/// RGB colors for each semantic layer: background, road, lane marking,
/// agent, ego/trail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub background: [f64; 3],
    pub road: [f64; 3],
    pub lane: [f64; 3],
    pub agent: [f64; 3],
    pub ego: [f64; 3],
    /// Past ego positions.
    pub trail: [f64; 3],
}

pub const PALETTES: [Palette; 4] = [
    Palette {
        background: [0.05, 0.05, 0.05],
        road: [0.45, 0.45, 0.45],
        lane: [0.95, 0.95, 0.20],
        agent: [0.90, 0.10, 0.10],
        ego: [0.10, 0.40, 1.00],
        trail: [0.95, 0.95, 0.95],
    },
    Palette {
        background: [0.20, 0.35, 0.15],
        road: [0.30, 0.30, 0.38],
        lane: [1.00, 1.00, 1.00],
        agent: [0.10, 0.80, 0.90],
        ego: [1.00, 0.50, 0.00],
        trail: [0.95, 0.10, 0.60],
    },
    Palette {
        background: [0.62, 0.55, 0.45],
        road: [0.15, 0.15, 0.15],
        lane: [0.90, 0.45, 0.90],
        agent: [0.20, 0.90, 0.20],
        ego: [0.95, 0.95, 0.95],
        trail: [0.05, 0.30, 0.95],
    },
    Palette {
        background: [0.10, 0.10, 0.30],
        road: [0.55, 0.50, 0.35],
        lane: [0.20, 0.90, 0.60],
        agent: [1.00, 0.85, 0.10],
        ego: [0.80, 0.10, 0.70],
        trail: [0.95, 0.95, 0.60],
    },
];

pub fn palette(id: usize) -> &'static Palette {
    &PALETTES[id % PALETTES.len()]
}

/// Build `n_domains` rendering domains. Domain 0 is a six-camera rig padded
/// with two blank views; the rest use all eight views.
pub fn make_domain_specs(n_domains: usize, seed: u64) -> Result<Vec<DomainSpec>> {
    if n_domains < 1 {
        return Err(Error::invalid("n_domains must be >= 1"));
    }
    let mut out = Vec::with_capacity(n_domains);
    for d in 0..n_domains {
        let mut r = rng::substream(seed, &["domain", &d.to_string()]);
        let gain = [
            r.random_range(0.7..1.3),
            r.random_range(0.7..1.3),
            r.random_range(0.7..1.3),
        ];
        let noise_sigma = 0.02 + 0.03 * d as f64 + r.random_range(0.0..0.01);
        let spec = DomainSpec {
            domain_id: d,
            num_views: if d == 0 { 6 } else { K_MAX },
            style: DomainStyle {
                gain,
                noise_sigma,
                palette_id: d % PALETTES.len(),
            },
            native_rate_hz: if d == 0 { 2.0 } else { 10.0 },
        };
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}
