//! Analytical per-token latency model: device classes, objective
//! coefficients, memory bounds and plan evaluation.

mod bounds;
mod coefficients;
mod counts;
pub(crate) mod demand;
mod evaluate;
mod plan_file;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::profiles::{ClusterSpec, Os};

pub use bounds::{memory_bounds, BoundRow, Limit, MemoryBounds, RowBlock};
pub use coefficients::{device_coefficients, DeviceCoefficients};
pub(crate) use coefficients::{compute_time, head_output_time};
pub use counts::{layer_counts, LayerCounts};
pub use evaluate::{check_plan, evaluate_tpot, linear_objective};
pub use plan_file::PlanFileError;

use demand::{budget_v, demand_v, gpu_demand_v, platform, vocab, Platform};

/// Behavior class of a device under a given plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    /// macOS without Metal, RAM exceeded.
    M1,
    /// macOS with Metal, working set exceeded.
    M2,
    /// Linux or Android, RAM (plus swap) exceeded.
    M3,
    /// Memory sufficient, or disk too slow to stream from.
    M4,
}

impl DeviceClass {
    pub fn is_overloaded(self) -> bool {
        self != DeviceClass::M4
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceClass::M1 => "M1",
            DeviceClass::M2 => "M2",
            DeviceClass::M3 => "M3",
            DeviceClass::M4 => "M4",
        })
    }
}

/// Class per device (index-aligned with the cluster), plus forced-M4 and
/// relay flags. Relays compute nothing and are nominally in M4.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetAssignment {
    pub class: Vec<DeviceClass>,
    pub forced: Vec<bool>,
    pub relay: Vec<bool>,
}

impl SetAssignment {
    pub fn all_m4(devices: usize) -> Self {
        SetAssignment {
            class: vec![DeviceClass::M4; devices],
            forced: vec![false; devices],
            relay: vec![false; devices],
        }
    }

    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }

    pub fn members(&self, class: DeviceClass) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.class[m] == class).collect()
    }

    /// Indices of devices that take part in the optimization.
    pub fn compute_devices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&m| !self.relay[m]).collect()
    }

    /// Forced and relay devices must sit in M4.
    pub fn is_consistent(&self) -> bool {
        self.class.len() == self.forced.len()
            && self.class.len() == self.relay.len()
            && (0..self.len())
                .all(|m| !(self.forced[m] || self.relay[m]) || self.class[m] == DeviceClass::M4)
    }
}

/// A layer-to-device assignment and its analytical per-token latency.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub device_ids: Vec<String>,
    pub w: Vec<u32>,
    pub n: Vec<u32>,
    pub k: u32,
    /// Seconds per token.
    pub objective: f64,
    pub sets: SetAssignment,
}

impl PartitionPlan {
    pub fn total_window(&self) -> u32 {
        self.w.iter().sum()
    }

    pub fn relay(&self) -> &[bool] {
        &self.sets.relay
    }
}

/// Objective coefficients for one set assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyCoefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub xi: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub kappa: f64,
    pub bprime: u64,
    pub b_cio: Vec<f64>,
    pub disk: Vec<f64>,
}

/// True when a device never streams weights from disk because its disk is
/// at or below the configured threshold.
pub(crate) fn slow_disk(spec: &ClusterSpec, m: usize) -> bool {
    spec.devices[m].disk_speed() <= spec.disk_speed_threshold
}

/// Place each device into M1..M4 from its memory condition at (w, n).
///
/// Forced and relay devices and devices with slow disks always land in M4.
pub fn classify_devices(
    spec: &ClusterSpec,
    w: &[u32],
    n: &[u32],
    forced: &[bool],
    relay: &[bool],
) -> Result<SetAssignment, ModelError> {
    let devices = spec.devices.len();
    if forced.len() != devices || relay.len() != devices {
        return Err(ModelError::Dimension(format!(
            "expected {devices} forced/relay flags, got {}/{}",
            forced.len(),
            relay.len()
        )));
    }
    if w.len() != devices {
        return Err(ModelError::Dimension(format!(
            "expected {devices} windows, got {}",
            w.len()
        )));
    }
    let counts = layer_counts(w, n, spec.layers())?;
    let bprime = spec.model.layer_bytes_with_kv();
    let class = (0..devices)
        .map(|m| {
            if forced[m] || relay[m] || slow_disk(spec, m) {
                return DeviceClass::M4;
            }
            let d = &spec.devices[m];
            let over = demand_v(d, &spec.model, m == 0, counts.l[m], counts.l_gpu[m], bprime)
                > budget_v(d, &spec.model);
            match (over, platform(d)) {
                (false, _) => DeviceClass::M4,
                (true, Platform::MacCpu) => DeviceClass::M1,
                (true, Platform::MacMetal) => DeviceClass::M2,
                (true, Platform::Linux | Platform::Android) => DeviceClass::M3,
            }
        })
        .collect();
    Ok(SetAssignment {
        class,
        forced: forced.to_vec(),
        relay: relay.to_vec(),
    })
}

/// Build a, b, c and κ for a set assignment.
pub fn objective_terms(spec: &ClusterSpec, sets: &SetAssignment) -> Result<LatencyCoefficients, ModelError> {
    let devices = spec.devices.len();
    if sets.len() != devices || !sets.is_consistent() {
        return Err(ModelError::Dimension("set assignment does not match the cluster".into()));
    }
    let model = &spec.model;
    let bprime = model.layer_bytes_with_kv();
    let bp = bprime as f64;
    let b = model.layer_bytes as f64;
    let row = model.input_row_bytes();

    let mut out = LatencyCoefficients {
        alpha: Vec::with_capacity(devices),
        beta: Vec::with_capacity(devices),
        xi: Vec::with_capacity(devices),
        a: Vec::with_capacity(devices),
        b: Vec::with_capacity(devices),
        c: Vec::with_capacity(devices),
        kappa: 0.0,
        bprime,
        b_cio: Vec::with_capacity(devices),
        disk: Vec::with_capacity(devices),
    };

    for (m, d) in spec.devices.iter().enumerate() {
        let s = d.disk_speed();
        out.disk.push(s);
        out.b_cio.push(demand::b_cio_v(model, m == 0) as f64 / vocab(model) as f64);
        if sets.relay[m] {
            out.alpha.push(0.0);
            out.beta.push(0.0);
            out.xi.push(d.comm_latency);
            out.a.push(0.0);
            out.b.push(0.0);
            out.c.push(d.comm_latency);
            continue;
        }
        let co = device_coefficients(d, model)?;
        out.alpha.push(co.alpha);
        out.beta.push(co.beta);
        out.xi.push(co.xi);
        out.c.push(co.xi);
        let (a, bm) = match sets.class[m] {
            DeviceClass::M1 => (co.alpha + bp / s, 0.0),
            DeviceClass::M2 => (co.alpha + b / s, co.beta),
            DeviceClass::M3 => (co.alpha + bp / s, co.beta - bp / s),
            DeviceClass::M4 => (co.alpha, co.beta),
        };
        out.a.push(a);
        out.b.push(bm);
        if matches!(sets.class[m], DeviceClass::M1 | DeviceClass::M3) {
            let swap = if d.os == Os::Android { d.swap_capacity() as f64 } else { 0.0 };
            out.kappa += (model.cpu_buffer as f64 - d.ram_available as f64 - swap) / s;
        }
    }

    let head = &spec.devices[0];
    let s1 = out.disk[0];
    out.kappa += coefficients::head_output_time(head, model)? + row / s1;
    if sets.class[0] != DeviceClass::M4 {
        out.kappa += model.output_bytes as f64 / s1;
    }
    Ok(out)
}

/// Memory picture for one device under a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryUsage {
    /// Bytes the device's overload condition counts (RAM, or the Metal
    /// working set on Metal devices).
    pub ram_demand: f64,
    pub ram_budget: u64,
    /// Bytes held by the GPU backend; zero without one.
    pub gpu_demand: f64,
    pub gpu_budget: u64,
    /// The device's memory condition for M1..M3 holds.
    pub overloaded: bool,
}

impl MemoryUsage {
    /// GPU memory left for at least one more layer.
    pub fn has_free_gpu(&self, bprime: u64) -> bool {
        self.gpu_budget > 0 && self.gpu_demand + bprime as f64 <= self.gpu_budget as f64
    }
}

pub fn estimate_memory_usage(spec: &ClusterSpec, plan: &PartitionPlan) -> Result<Vec<MemoryUsage>, ModelError> {
    let counts = layer_counts(&plan.w, &plan.n, spec.layers())?;
    let model = &spec.model;
    let bprime = model.layer_bytes_with_kv();
    let v = vocab(model) as f64;
    Ok(spec
        .devices
        .iter()
        .enumerate()
        .map(|(m, d)| {
            let budget = budget_v(d, model);
            if plan.sets.relay.get(m).copied().unwrap_or(false) {
                return MemoryUsage {
                    ram_demand: 0.0,
                    ram_budget: (budget / vocab(model)) as u64,
                    gpu_demand: 0.0,
                    gpu_budget: d.gpu_memory(),
                    overloaded: false,
                };
            }
            let demand = demand_v(d, model, m == 0, counts.l[m], counts.l_gpu[m], bprime);
            MemoryUsage {
                ram_demand: demand as f64 / v,
                ram_budget: (budget / vocab(model)) as u64,
                gpu_demand: gpu_demand_v(d, model, m == 0, counts.l_gpu[m], bprime) as f64 / v,
                gpu_budget: d.gpu_memory(),
                overloaded: demand > budget,
            }
        })
        .collect())
}
