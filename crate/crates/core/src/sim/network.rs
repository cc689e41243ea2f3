use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cluster::{NodeId, SiteId};
use super::time::{scale, secs};
use super::SimError;

/// Distance class between two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    /// Same node.
    Local,
    /// Different nodes, same site.
    Datacenter,
    /// Different sites.
    Internet,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Local => "local",
            Tier::Datacenter => "datacenter",
            Tier::Internet => "internet",
        }
    }
}

/// One-way latency: normal around `mean_us` with coefficient of variation
/// `cv`, clipped at zero. `cv = 0` is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyDist {
    pub mean_us: f64,
    #[serde(default)]
    pub cv: f64,
}

impl LatencyDist {
    pub fn fixed_us(mean_us: f64) -> Self {
        LatencyDist { mean_us, cv: 0.0 }
    }

    pub fn mean(&self) -> Duration {
        secs(self.mean_us / 1e6)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        if self.cv <= 0.0 {
            return self.mean();
        }
        let normal = Normal::new(self.mean_us, self.mean_us * self.cv).expect("finite parameters");
        secs(normal.sample(rng).max(0.0) / 1e6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub node: NodeId,
    pub site: SiteId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub local: LatencyDist,
    pub datacenter: LatencyDist,
    pub internet: LatencyDist,
    /// Transfer cost in nanoseconds per byte, applied on every tier.
    pub ns_per_byte: f64,
    /// Number of sites known to the model; site ids must be below this.
    pub sites: u16,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel::preset(25.0, 2)
    }
}

impl NetworkModel {
    /// Datacenter is 2x and internet 35x the same-node latency.
    pub fn preset(local_us: f64, sites: u16) -> Self {
        NetworkModel {
            local: LatencyDist::fixed_us(local_us),
            datacenter: LatencyDist::fixed_us(local_us * 2.0),
            internet: LatencyDist::fixed_us(local_us * 35.0),
            ns_per_byte: 1.0,
            sites,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ordered = self.local.mean_us <= self.datacenter.mean_us && self.datacenter.mean_us <= self.internet.mean_us;
        let finite = [self.local, self.datacenter, self.internet].iter().all(|d| d.mean_us.is_finite() && d.mean_us >= 0.0 && d.cv >= 0.0);
        if !ordered || !finite || !(self.ns_per_byte >= 0.0) {
            return Err(SimError::InvalidConfig("latency tiers must satisfy 0 <= local <= datacenter <= internet".into()));
        }
        Ok(())
    }

    pub fn tier(&self, src: Location, dst: Location) -> Result<Tier, SimError> {
        for site in [src.site, dst.site] {
            if site.0 >= self.sites {
                return Err(SimError::UnknownTier(site));
            }
        }
        Ok(if src.node == dst.node {
            Tier::Local
        } else if src.site == dst.site {
            Tier::Datacenter
        } else {
            Tier::Internet
        })
    }

    pub fn latency(&self, tier: Tier) -> &LatencyDist {
        match tier {
            Tier::Local => &self.local,
            Tier::Datacenter => &self.datacenter,
            Tier::Internet => &self.internet,
        }
    }

    pub fn transfer(&self, bytes: u64) -> Duration {
        scale(Duration::from_nanos(1), self.ns_per_byte * bytes as f64)
    }

    pub fn tier_delay(&self, tier: Tier, bytes: u64, rng: &mut impl Rng) -> Duration {
        self.latency(tier).sample(rng) + self.transfer(bytes)
    }

    /// One-way delay for `bytes` from `src` to `dst`.
    pub fn delay(&self, src: Location, dst: Location, bytes: u64, rng: &mut impl Rng) -> Result<Duration, SimError> {
        Ok(self.tier_delay(self.tier(src, dst)?, bytes, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loc(node: u32, site: u16) -> Location {
        Location { node: NodeId(node), site: SiteId(site) }
    }

    #[test]
    fn preset_ratios() {
        let m = NetworkModel::default();
        assert_eq!(m.datacenter.mean(), m.local.mean() * 2);
        assert_eq!(m.internet.mean(), m.local.mean() * 35);
        m.validate().unwrap();
    }

    #[test]
    fn zero_bytes_same_node_is_pure_local() {
        let m = NetworkModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.delay(loc(1, 0), loc(1, 0), 0, &mut rng).unwrap(), m.local.mean());
    }

    #[test]
    fn transfer_is_linear() {
        let m = NetworkModel::default();
        assert_eq!(m.transfer(2048), m.transfer(1024) * 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = m.delay(loc(0, 0), loc(1, 1), 0, &mut rng).unwrap();
        let one = m.delay(loc(0, 0), loc(1, 1), 4096, &mut rng).unwrap() - base;
        let two = m.delay(loc(0, 0), loc(1, 1), 8192, &mut rng).unwrap() - base;
        assert_eq!(two, one * 2);
    }

    #[test]
    fn tiers() {
        let m = NetworkModel::default();
        assert_eq!(m.tier(loc(0, 0), loc(0, 0)).unwrap(), Tier::Local);
        assert_eq!(m.tier(loc(0, 0), loc(1, 0)).unwrap(), Tier::Datacenter);
        assert_eq!(m.tier(loc(0, 0), loc(1, 1)).unwrap(), Tier::Internet);
        assert!(matches!(m.tier(loc(0, 0), loc(1, 9)), Err(SimError::UnknownTier(_))));
    }

    #[test]
    fn misordered_tiers_rejected() {
        let mut m = NetworkModel::default();
        m.datacenter.mean_us = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn jittered_samples_stay_non_negative() {
        let d = LatencyDist { mean_us: 10.0, cv: 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let _ = d.sample(&mut rng);
        }
    }
}
