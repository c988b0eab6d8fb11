//! Minimax bandwidth cost: each tier's time is bytes over bandwidth, the plan
//! costs as much as its slowest tier.

use serde::{Deserialize, Serialize};

use crate::analyzer::DataMovementVolume;
use crate::error::Result;
use crate::hardware::{DeviceModel, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub global: f64,
    pub l2: f64,
    pub dsm: f64,
    pub smem: f64,
    pub reg: f64,
    pub bottleneck: Tier,
    pub total: f64,
}

impl CostBreakdown {
    pub fn get(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Global => self.global,
            Tier::L2 => self.l2,
            Tier::Dsm => self.dsm,
            Tier::Smem => self.smem,
            Tier::Reg => self.reg,
        }
    }
}

/// Slow tiers first, so equal times name the slower tier as bottleneck.
const SCAN: [Tier; 5] = [Tier::Global, Tier::L2, Tier::Dsm, Tier::Smem, Tier::Reg];

pub fn cost(volume: &DataMovementVolume, device: &DeviceModel, cluster_blocks: u64) -> Result<CostBreakdown> {
    let mut times = [0.0f64; 5];
    for (i, tier) in SCAN.into_iter().enumerate() {
        let v = volume.get(tier);
        times[i] = if v == 0 {
            0.0
        } else {
            v as f64 / device.bandwidth(tier, cluster_blocks)?
        };
    }
    let mut best = 0;
    for i in 1..5 {
        if times[i] > times[best] {
            best = i;
        }
    }
    Ok(CostBreakdown {
        global: times[0],
        l2: times[1],
        dsm: times[2],
        smem: times[3],
        reg: times[4],
        bottleneck: SCAN[best],
        total: times[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceModel {
        let mut d = DeviceModel::default_h100();
        d.dsm_bandwidth.insert(4, 1.0e13);
        d
    }

    #[test]
    fn direct_evaluation() {
        let v = DataMovementVolume {
            global: 1_000_000,
            dsm: 500_000,
            ..Default::default()
        };
        let c = cost(&v, &device(), 4).unwrap();
        assert!((c.global - 3.333e-7).abs() < 1e-10);
        assert!((c.dsm - 5e-8).abs() < 1e-15);
        assert_eq!(c.bottleneck, Tier::Global);
        assert_eq!(c.total, c.global);
    }

    #[test]
    fn zero_dsm_and_linearity() {
        let v = DataMovementVolume {
            smem: 4_000_000_000,
            global: 1000,
            ..Default::default()
        };
        let c = cost(&v, &device(), 1).unwrap();
        assert_eq!(c.dsm, 0.0);
        assert_ne!(c.bottleneck, Tier::Dsm);
        let doubled = DataMovementVolume {
            smem: 2 * v.smem,
            ..v
        };
        let c2 = cost(&doubled, &device(), 1).unwrap();
        assert_eq!(c2.total, 2.0 * c.total);
    }
}
