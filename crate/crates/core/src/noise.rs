//! Synthetic pseudo-measurements and device measurements around a known state.
//!
//! Every measurement entry draws its noise from its own stream, keyed by
//! `(master_seed, realization, kind, element)`. An entry therefore gets the
//! same noise in every device configuration that contains it, which is what
//! makes configuration comparisons use common random numbers, and the result
//! does not depend on evaluation order or thread count.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distflow::GridState;
use crate::error::{Error, Result};
use crate::estimator::{MeasurementEntry, MeasurementKind, MeasurementLayout, MeasurementSet};
use crate::grid::RadialGrid;

/// Proportional and absolute error constants, `sigma = c * |value| + sigma0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub c_pm: f64,
    pub sigma0_pm: f64,
    pub c_md_flow: f64,
    pub sigma0_md_flow: f64,
    pub c_md_v2: f64,
    pub sigma0_md_v2: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            c_pm: 0.2,
            sigma0_pm: 1e-4,
            c_md_flow: 0.005,
            sigma0_md_flow: 0.0,
            c_md_v2: 0.001,
            sigma0_md_v2: 0.0,
        }
    }
}

impl NoiseSpec {
    /// Constants used with the bundled 85-node fixture: 20 % load forecasts,
    /// 0.5 % flow and 0.2 % squared-voltage devices, tiny absolute floors.
    pub fn fixture_default() -> Self {
        NoiseSpec {
            c_pm: 0.2,
            sigma0_pm: 1.9e-7,
            c_md_flow: 0.005,
            sigma0_md_flow: 1.9e-7,
            c_md_v2: 0.002,
            sigma0_md_v2: 0.0,
        }
    }

    pub fn zero() -> Self {
        NoiseSpec {
            c_pm: 0.0,
            sigma0_pm: 0.0,
            c_md_flow: 0.0,
            sigma0_md_flow: 0.0,
            c_md_v2: 0.0,
            sigma0_md_v2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("c_pm", self.c_pm),
            ("sigma0_pm", self.sigma0_pm),
            ("c_md_flow", self.c_md_flow),
            ("sigma0_md_flow", self.sigma0_md_flow),
            ("c_md_v2", self.c_md_v2),
            ("sigma0_md_v2", self.sigma0_md_v2),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("noise.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Sigma of any measurement kind.
    pub fn sigma(&self, kind: MeasurementKind, true_value: f64) -> f64 {
        match kind {
            MeasurementKind::PmP(_) | MeasurementKind::PmQ(_) => pm_sigma(true_value, self),
            MeasurementKind::MdPFlow(_) | MeasurementKind::MdQFlow(_) => {
                md_sigma(true_value, DeviceQuantity::Flow, self)
            }
            MeasurementKind::MdV2(_) => md_sigma(true_value, DeviceQuantity::VoltageSq, self),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviceQuantity {
    Flow,
    VoltageSq,
}

pub fn pm_sigma(true_value: f64, spec: &NoiseSpec) -> f64 {
    spec.c_pm * true_value.abs() + spec.sigma0_pm
}

pub fn md_sigma(true_value: f64, quantity: DeviceQuantity, spec: &NoiseSpec) -> f64 {
    match quantity {
        DeviceQuantity::Flow => spec.c_md_flow * true_value.abs() + spec.sigma0_md_flow,
        DeviceQuantity::VoltageSq => spec.c_md_v2 * true_value.abs() + spec.sigma0_md_v2,
    }
}

/// Nodes carrying a measurement device, plus whether the slack's squared
/// voltage is measured independently of any device there.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfiguration {
    pub measured_nodes: BTreeSet<usize>,
    #[serde(default)]
    pub slack_voltage: bool,
}

impl DeviceConfiguration {
    pub fn new(nodes: impl IntoIterator<Item = usize>, slack_voltage: bool) -> Self {
        DeviceConfiguration {
            measured_nodes: nodes.into_iter().collect(),
            slack_voltage,
        }
    }

    pub fn with(&self, node: usize) -> Self {
        let mut c = self.clone();
        c.measured_nodes.insert(node);
        c
    }

    pub fn layout(&self, grid: &RadialGrid) -> Result<MeasurementLayout> {
        let nodes: Vec<usize> = self.measured_nodes.iter().copied().collect();
        MeasurementLayout::for_devices(grid, &nodes, self.slack_voltage)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn kind_code(kind: MeasurementKind) -> u64 {
    let tag = match kind {
        MeasurementKind::PmP(_) => 1,
        MeasurementKind::PmQ(_) => 2,
        MeasurementKind::MdPFlow(_) => 3,
        MeasurementKind::MdQFlow(_) => 4,
        MeasurementKind::MdV2(_) => 5,
    };
    (tag << 32) | kind.element() as u64
}

/// Seed of the noise stream for one entry in one realization.
pub fn stream_seed(master_seed: u64, realization: u64, kind: MeasurementKind) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ realization);
    splitmix64(h ^ kind_code(kind))
}

/// Standard normal draw for one entry in one realization.
pub fn standard_normal(master_seed: u64, realization: u64, kind: MeasurementKind) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(master_seed, realization, kind));
    StandardNormal.sample(&mut rng)
}

/// Precomputed layout, true values and sigmas for one configuration, so that
/// repeated realizations only pay for the random draws.
#[derive(Clone, Debug)]
pub struct MeasurementSampler {
    layout: MeasurementLayout,
    truth: Vec<f64>,
    sigmas: Vec<f64>,
    master_seed: u64,
}

impl MeasurementSampler {
    pub fn new(
        grid: &RadialGrid,
        true_state: &GridState,
        config: &DeviceConfiguration,
        spec: &NoiseSpec,
        master_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if true_state.v_sq.len() != grid.node_count() {
            return Err(Error::invalid("true state", "does not match the grid"));
        }
        let layout = config.layout(grid)?;
        let truth: Vec<f64> = layout.kinds().iter().map(|k| k.read(true_state)).collect();
        let sigmas = layout
            .kinds()
            .iter()
            .zip(&truth)
            .map(|(&k, &v)| spec.sigma(k, v))
            .collect();
        Ok(MeasurementSampler {
            layout,
            truth,
            sigmas,
            master_seed,
        })
    }

    pub fn layout(&self) -> &MeasurementLayout {
        &self.layout
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    /// Measurement values of realization `r`, in layout order.
    pub fn values(&self, r: u64) -> Vec<f64> {
        self.layout
            .kinds()
            .iter()
            .zip(self.truth.iter().zip(&self.sigmas))
            .map(|(&k, (&mean, &sigma))| {
                if sigma == 0.0 {
                    mean
                } else {
                    mean + sigma * standard_normal(self.master_seed, r, k)
                }
            })
            .collect()
    }

    pub fn sample(&self, r: u64) -> MeasurementSet {
        let entries = self
            .layout
            .kinds()
            .iter()
            .zip(self.values(r))
            .zip(&self.sigmas)
            .map(|((&kind, value), &sigma)| MeasurementEntry { kind, value, sigma })
            .collect();
        MeasurementSet { entries }
    }
}

/// Draws realization `r` of the measurements configuration `config` would produce.
pub fn sample_measurements(
    grid: &RadialGrid,
    true_state: &GridState,
    config: &DeviceConfiguration,
    spec: &NoiseSpec,
    master_seed: u64,
    r: u64,
) -> Result<MeasurementSet> {
    Ok(MeasurementSampler::new(grid, true_state, config, spec, master_seed)?.sample(r))
}
