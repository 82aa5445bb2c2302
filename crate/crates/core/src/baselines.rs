//! Heuristic partitioners used for comparison: split by memory (MemSched) or
//! by compute power with out-of-memory migration (PerfSched). Both use a
//! single round.

use crate::error::ModelError;
use crate::halda::largest_remainder;
use crate::latency_model::demand::{b_cio_v, budget_v, platform, vocab, Platform};
use crate::latency_model::{classify_devices, evaluate_tpot, memory_bounds, Limit, PartitionPlan, SetAssignment};
use crate::profiles::{memory_budget, ClusterSpec, QuantFormat};

/// Largest GPU layer count each device holds when it runs all `L` layers in
/// one round.
pub(crate) fn gpu_caps(spec: &ClusterSpec) -> Vec<u32> {
    let bounds = memory_bounds(spec, &SetAssignment::all_m4(spec.devices.len()));
    (0..spec.devices.len())
        .map(|m| match bounds.gpu_limit(m, spec.layers()) {
            Limit::Unbounded => spec.layers(),
            Limit::Infeasible => 0,
            Limit::AtMost(x) => x.clamp(0, spec.layers() as i64) as u32,
        })
        .collect()
}

/// Layers a device holds without exceeding RAM or GPU memory.
fn layer_capacity(spec: &ClusterSpec, m: usize, gpu_cap: u32) -> u32 {
    let d = &spec.devices[m];
    let model = &spec.model;
    let bp = model.layer_bytes_with_kv() as i128 * vocab(model);
    if bp == 0 {
        return spec.layers();
    }
    let mut free = budget_v(d, model) - b_cio_v(model, m == 0);
    if platform(d) == Platform::MacMetal {
        free -= model.gpu_buffer as i128 * vocab(model);
    }
    let ram_layers = (free.max(0) / bp).min(spec.layers() as i128) as u32;
    match platform(d) {
        Platform::Linux | Platform::Android => ram_layers + gpu_cap,
        Platform::MacCpu | Platform::MacMetal => ram_layers,
    }
}

fn finish(spec: &ClusterSpec, w: Vec<u32>, caps: &[u32]) -> Result<PartitionPlan, ModelError> {
    let devices = spec.devices.len();
    let n: Vec<u32> = w.iter().zip(caps).map(|(&w, &c)| w.min(c)).collect();
    let sets = classify_devices(spec, &w, &n, &vec![false; devices], &vec![false; devices])?;
    let mut plan = PartitionPlan {
        device_ids: spec.devices.iter().map(|d| d.id.clone()).collect(),
        w,
        n,
        k: 1,
        objective: 0.0,
        sets,
    };
    plan.objective = evaluate_tpot(spec, &plan)?;
    Ok(plan)
}

/// Windows proportional to RAM plus VRAM budgets; GPUs filled to capacity.
pub fn mem_sched(spec: &ClusterSpec) -> Result<PartitionPlan, ModelError> {
    let weights: Vec<f64> = spec
        .devices
        .iter()
        .map(|d| (memory_budget(d) + d.vram_available.unwrap_or(0)) as f64)
        .collect();
    let w = largest_remainder(&weights, spec.layers());
    finish(spec, w, &gpu_caps(spec))
}

fn q4k(table: &crate::profiles::FlopsTable) -> f64 {
    table.get(&QuantFormat::Q4k).copied().unwrap_or(0.0)
}

/// Windows proportional to q4k throughput (GPU when present); layers that
/// do not fit move to the devices with the most free room, and whatever
/// still does not fit is spread by CPU throughput.
pub fn perf_sched(spec: &ClusterSpec) -> Result<PartitionPlan, ModelError> {
    let power: Vec<f64> = spec
        .devices
        .iter()
        .map(|d| if d.has_gpu() { q4k(&d.gpu_flops) } else { q4k(&d.cpu_flops) })
        .collect();
    let mut w = largest_remainder(&power, spec.layers());
    let gpu = gpu_caps(spec);
    let cap: Vec<u32> = (0..spec.devices.len())
        .map(|m| layer_capacity(spec, m, gpu[m]))
        .collect();

    let mut overflow = 0;
    for m in 0..w.len() {
        if w[m] > cap[m] {
            overflow += w[m] - cap[m];
            w[m] = cap[m];
        }
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by_key(|&m| (std::cmp::Reverse(cap[m] - w[m]), m));
    for m in order {
        let take = (cap[m] - w[m]).min(overflow);
        w[m] += take;
        overflow -= take;
    }
    if overflow > 0 {
        let cpu: Vec<f64> = spec.devices.iter().map(|d| q4k(&d.cpu_flops)).collect();
        for (m, extra) in largest_remainder(&cpu, overflow).into_iter().enumerate() {
            w[m] += extra;
        }
    }
    finish(spec, w, &gpu)
}
