use crate::error::ModelError;
use crate::profiles::ClusterSpec;

use super::coefficients::{cpu_layer_time, gpu_layer_time, head_output_time};
use super::demand::{budget_v, demand_v, gpu_demand_v, platform, reload_v, vocab, Platform};
use super::{layer_counts, slow_disk, DeviceClass, LatencyCoefficients, PartitionPlan};

fn check_dims(spec: &ClusterSpec, plan: &PartitionPlan) -> Result<(), ModelError> {
    let m = spec.devices.len();
    if plan.w.len() != m || plan.n.len() != m || plan.sets.len() != m {
        return Err(ModelError::Dimension(format!(
            "plan covers {} devices, cluster has {m}",
            plan.w.len()
        )));
    }
    Ok(())
}

/// Per-token latency of a plan, summed device by device without assuming
/// that windows tile the model evenly.
///
/// Disk time follows the device's memory condition: an overloaded device
/// pays for the bytes it must stream, any other device pays nothing except
/// the head, which always reads one embedding row.
pub fn evaluate_tpot(spec: &ClusterSpec, plan: &PartitionPlan) -> Result<f64, ModelError> {
    check_dims(spec, plan)?;
    let model = &spec.model;
    let counts = layer_counts(&plan.w, &plan.n, spec.layers())?;
    let bprime = model.layer_bytes_with_kv();
    let bp = bprime as f64;
    let v = vocab(model) as f64;

    let mut total = 0.0;
    for (m, d) in spec.devices.iter().enumerate() {
        let windows = counts.windows[m] as f64;
        if plan.w[m] == 0 {
            total += windows * d.comm_latency;
            continue;
        }
        let is_head = m == 0;
        let l = counts.l[m];
        let lg = counts.l_gpu[m];
        let mut t = (l - lg) as f64 * cpu_layer_time(d, model, bp)?;
        if lg > 0 {
            t += lg as f64 * gpu_layer_time(d, model, bp)?;
        }
        t += windows * (d.device_copy() + d.comm_latency);
        if is_head {
            t += head_output_time(d, model)?;
        }

        let over = demand_v(d, model, is_head, l, lg, bprime) > budget_v(d, model);
        let s = d.disk_speed();
        if over {
            t += reload_v(d, model, is_head, l, lg, bprime) as f64 / v / s;
        } else if is_head {
            t += model.input_row_bytes() / s;
        }
        total += t;
    }
    Ok(total)
}

/// `k·(a·w + b·n + Σc) + κ`.
pub fn linear_objective(coeffs: &LatencyCoefficients, w: &[u32], n: &[u32], k: u32) -> f64 {
    let mut sum = 0.0;
    for m in 0..coeffs.a.len() {
        sum += coeffs.a[m] * w[m] as f64 + coeffs.b[m] * n[m] as f64 + coeffs.c[m];
    }
    k as f64 * sum + coeffs.kappa
}

/// Re-check every constraint a planner-produced plan must satisfy, directly
/// in bytes. Returns human-readable violations; empty means valid.
pub fn check_plan(spec: &ClusterSpec, plan: &PartitionPlan) -> Vec<String> {
    let mut out = Vec::new();
    if let Err(e) = check_dims(spec, plan) {
        out.push(e.to_string());
        return out;
    }
    if !plan.sets.is_consistent() {
        out.push("forced or relay device outside M4".into());
    }
    if plan.k == 0 {
        out.push("k must be at least 1".into());
    }
    let total: u32 = plan.w.iter().sum();
    if plan.k as u64 * total as u64 != spec.layers() as u64 {
        out.push(format!("k·Σw = {}·{total} ≠ L = {}", plan.k, spec.layers()));
    }
    if plan.sets.relay[0] {
        out.push("head device cannot be a relay".into());
    }
    for m in 0..spec.devices.len() {
        let id = &spec.devices[m].id;
        if plan.sets.relay[m] {
            if plan.w[m] != 0 || plan.n[m] != 0 {
                out.push(format!("{id}: relay must have w = n = 0"));
            }
        } else if plan.w[m] == 0 {
            out.push(format!("{id}: w must be positive"));
        }
        if plan.n[m] > plan.w[m] {
            out.push(format!("{id}: n = {} > w = {}", plan.n[m], plan.w[m]));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let Ok(counts) = layer_counts(&plan.w, &plan.n, spec.layers()) else {
        out.push("window sums out of range".into());
        return out;
    };
    let model = &spec.model;
    let bprime = model.layer_bytes_with_kv();
    let v = vocab(model);
    for (m, d) in spec.devices.iter().enumerate() {
        if plan.sets.relay[m] {
            continue;
        }
        let (l, lg) = (counts.l[m], counts.l_gpu[m]);
        if !d.has_gpu() && plan.n[m] > 0 {
            out.push(format!("{}: GPU layers on a CPU-only device", d.id));
        }
        if d.has_gpu() && gpu_demand_v(d, model, m == 0, lg, bprime) > d.gpu_memory() as i128 * v {
            out.push(format!("{}: GPU memory exceeded", d.id));
        }
        let over = demand_v(d, model, m == 0, l, lg, bprime) > budget_v(d, model);
        let class = plan.sets.class[m];
        match class {
            DeviceClass::M4 => {
                if over {
                    out.push(format!("{}: in M4 but memory is overloaded", d.id));
                }
            }
            _ => {
                let expected = match platform(d) {
                    Platform::MacCpu => DeviceClass::M1,
                    Platform::MacMetal => DeviceClass::M2,
                    Platform::Linux | Platform::Android => DeviceClass::M3,
                };
                if class != expected {
                    out.push(format!("{}: class {class} does not fit its platform", d.id));
                }
                if !over {
                    out.push(format!("{}: in {class} but memory is not overloaded", d.id));
                }
                if slow_disk(spec, m) {
                    out.push(format!("{}: slow disk cannot be in {class}", d.id));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency_model::{classify_devices, objective_terms, SetAssignment};
    use crate::profiles::fixtures::*;
    use crate::profiles::{ClusterSpec, Os, QuantFormat};

    fn plan_for(spec: &ClusterSpec, w: Vec<u32>, n: Vec<u32>) -> PartitionPlan {
        let m = spec.devices.len();
        let sets = classify_devices(spec, &w, &n, &vec![false; m], &vec![false; m]).unwrap();
        let k = spec.layers() / w.iter().sum::<u32>();
        PartitionPlan {
            device_ids: spec.devices.iter().map(|d| d.id.clone()).collect(),
            w,
            n,
            k,
            objective: 0.0,
            sets,
        }
    }

    #[test]
    fn single_device_linear_form() {
        // α = 0.002, ξ = 0.001, κ = 0.003 (output compute only).
        let mut d = linux_cpu("a", 100 * GIB);
        d.cpu_flops = flops(1e12);
        d.kv_copy_cpu = 0.0;
        d.mem_throughput_cpu = f64::MAX;
        d.comm_latency = 0.001;
        let mut s = spec(vec![d], 10);
        s.model.layer_flops = flops(2e9);
        s.model.output_flops = flops(3e9);
        s.model.input_bytes = 0;
        s.model.output_bytes = 0;
        let p = plan_for(&s, vec![10], vec![0]);
        let t = evaluate_tpot(&s, &p).unwrap();
        assert!((t - 0.024).abs() < 1e-12, "{t}");
    }

    /// Independent evaluation in plain f64 bytes, one linux/android device
    /// at a time.
    fn oracle_linux(spec: &ClusterSpec, w: &[u32], n: &[u32]) -> f64 {
        let m = &spec.model;
        let big_w: u32 = w.iter().sum();
        let q = spec.layers() / big_w;
        let bp = m.layer_bytes as f64 + 2.0 * (m.kv_heads * m.kv_head_dim + m.v_heads * m.v_head_dim) as f64 * m.kv_tokens as f64;
        let row = m.input_bytes as f64 / m.vocab_size as f64;
        let mut total = 0.0;
        for (i, d) in spec.devices.iter().enumerate() {
            let l = (q * w[i]) as f64;
            let lg = (q * n[i]) as f64;
            let f = m.layer_flops[&QuantFormat::Q4k];
            let mut t = (l - lg) * (f / d.cpu_flops[&QuantFormat::Q4k] + d.kv_copy_cpu + bp / d.mem_throughput_cpu);
            if lg > 0.0 {
                t += lg * (f / d.gpu_flops[&QuantFormat::Q4k] + d.kv_copy_gpu.unwrap() + bp / d.mem_throughput_gpu.unwrap());
            }
            let copy = if d.uma { 0.0 } else { d.ram_to_vram.unwrap_or(0.0) + d.vram_to_ram.unwrap_or(0.0) };
            t += q as f64 * (copy + d.comm_latency);
            let io = if i == 0 { row + m.output_bytes as f64 } else { 0.0 };
            if i == 0 {
                t += m.output_flops[&QuantFormat::Q4k] / d.cpu_flops[&QuantFormat::Q4k] + io / d.mem_throughput_cpu;
            }
            let swap = if d.os == Os::Android { d.swap_capacity() as f64 } else { 0.0 };
            let over = (l - lg) * bp + io + m.cpu_buffer as f64 - d.ram_available as f64 - swap;
            if over > 0.0 {
                t += over / d.disk_seq_read;
            } else if i == 0 {
                t += row / d.disk_seq_read;
            }
            total += t;
        }
        total
    }

    #[test]
    fn overloaded_linux_pair_matches_oracle() {
        let head = linux_cuda("h", 8 * GIB, 2 * GIB);
        let weak = linux_cpu("w", GIB);
        let s = spec(vec![head, weak], 40);
        let p = plan_for(&s, vec![10, 10], vec![4, 0]);
        assert_eq!(p.sets.class[1], DeviceClass::M3);
        let t = evaluate_tpot(&s, &p).unwrap();
        let o = oracle_linux(&s, &p.w, &p.n);
        assert!((t - o).abs() <= 1e-12 * o, "{t} vs {o}");
    }

    #[test]
    fn matches_linear_objective_when_sets_agree() {
        let mut mac = linux_cpu("m", GIB);
        mac.os = Os::Macos;
        let s = spec(vec![linux_cuda("h", 2 * GIB, GIB), mac, mac_metal("mm", GIB), android("a", GIB, GIB / 2)], 48);
        for (w, n) in [
            (vec![6, 6, 6, 6], vec![2, 0, 6, 0]),
            (vec![3, 3, 3, 3], vec![3, 0, 0, 0]),
            (vec![9, 1, 1, 1], vec![0, 0, 1, 0]),
        ] {
            let p = plan_for(&s, w, n);
            let c = objective_terms(&s, &p.sets).unwrap();
            let lin = linear_objective(&c, &p.w, &p.n, p.k);
            let raw = evaluate_tpot(&s, &p).unwrap();
            assert!((lin - raw).abs() <= 1e-9 * raw, "{lin} vs {raw} for {:?}", p.sets.class);
        }
    }

    #[test]
    fn infinite_disk_leaves_only_the_floor() {
        let mut s = spec(vec![linux_cpu("h", GIB), linux_cpu("x", GIB)], 20);
        let p = plan_for(&s, vec![10, 10], vec![0, 0]);
        let slow = evaluate_tpot(&s, &p).unwrap();
        for d in &mut s.devices {
            d.disk_seq_read = 1e15;
        }
        let fast = evaluate_tpot(&s, &p).unwrap();
        let mut free = s.clone();
        for d in &mut free.devices {
            d.ram_available = 1 << 50;
        }
        let no_disk = evaluate_tpot(&free, &p).unwrap();
        assert!(slow > fast);
        assert!((fast - no_disk).abs() < 1e-6, "{fast} vs {no_disk}");
    }

    #[test]
    fn check_plan_catches_wrong_set() {
        let s = spec(vec![linux_cpu("h", 64 * GIB), linux_cpu("x", GIB / 4)], 40);
        let mut p = plan_for(&s, vec![10, 10], vec![0, 0]);
        assert!(check_plan(&s, &p).is_empty());
        p.sets = SetAssignment::all_m4(2);
        assert_eq!(check_plan(&s, &p).len(), 1);
        p.k = 3;
        assert!(!check_plan(&s, &p).is_empty());
    }
}
