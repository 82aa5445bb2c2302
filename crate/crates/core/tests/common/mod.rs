#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ringplan::halda::valid_factors;
use ringplan::ilp::{brute_force_solve, build_instance, IlpOutcome};
use ringplan::latency_model::{DeviceClass, SetAssignment};
use ringplan::profiles::{Backend, ClusterSpec, DeviceProfile, FlopsTable, ModelProfile, Os, QuantFormat};

pub const GIB: u64 = 1 << 30;

pub fn flops(v: f64) -> FlopsTable {
    [(QuantFormat::Q4k, v)].into_iter().collect()
}

pub fn linux_cpu(id: &str, ram: u64) -> DeviceProfile {
    DeviceProfile {
        id: id.into(),
        os: Os::Linux,
        uma: false,
        backend: Backend::None,
        cpu_flops: flops(1e11),
        gpu_flops: BTreeMap::new(),
        mem_throughput_cpu: 1e10,
        mem_throughput_gpu: None,
        kv_copy_cpu: 1e-4,
        kv_copy_gpu: None,
        ram_to_vram: None,
        vram_to_ram: None,
        comm_latency: 0.003,
        disk_seq_read: 2e9,
        disk_rand_read: 1e9,
        ram_available: ram,
        metal_working_set: None,
        vram_available: None,
        swap_available: None,
        bytes_can_swap: None,
        metal_cliff: None,
    }
}

pub fn linux_cuda(id: &str, ram: u64, vram: u64) -> DeviceProfile {
    DeviceProfile {
        backend: Backend::Cuda,
        gpu_flops: flops(1e12),
        mem_throughput_gpu: Some(1e11),
        kv_copy_gpu: Some(1e-5),
        ram_to_vram: Some(1e-4),
        vram_to_ram: Some(1e-4),
        vram_available: Some(vram),
        ..linux_cpu(id, ram)
    }
}

pub fn mac_cpu(id: &str, ram: u64) -> DeviceProfile {
    DeviceProfile {
        os: Os::Macos,
        uma: true,
        ..linux_cpu(id, ram)
    }
}

pub fn mac_metal(id: &str, working_set: u64) -> DeviceProfile {
    DeviceProfile {
        backend: Backend::Metal,
        gpu_flops: flops(5e11),
        mem_throughput_gpu: Some(5e10),
        kv_copy_gpu: Some(2e-5),
        metal_working_set: Some(working_set),
        ..mac_cpu(id, working_set)
    }
}

pub fn android(id: &str, ram: u64, swap: u64) -> DeviceProfile {
    DeviceProfile {
        os: Os::Android,
        swap_available: Some(swap),
        bytes_can_swap: Some(swap),
        ..linux_cpu(id, ram)
    }
}

pub fn model(layers: u32) -> ModelProfile {
    ModelProfile {
        name: "test".into(),
        layer_count: layers,
        layer_flops: flops(1e9),
        output_flops: flops(1e9),
        layer_bytes: 100_000_000,
        input_bytes: 500_000_000,
        output_bytes: 500_000_000,
        kv_heads: 8,
        v_heads: 8,
        kv_head_dim: 128,
        v_head_dim: 128,
        embed_dim: 4096,
        vocab_size: 128_000,
        kv_tokens: 512,
        cpu_buffer: 200_000_000,
        gpu_buffer: 300_000_000,
    }
}

pub fn spec(devices: Vec<DeviceProfile>, layers: u32) -> ClusterSpec {
    ClusterSpec {
        disk_speed_threshold: 5e8,
        topology_relays: BTreeSet::new(),
        model: model(layers),
        devices,
    }
}

pub fn random_device(rng: &mut ChaCha8Rng, id: &str) -> DeviceProfile {
    let ram = rng.random_range(GIB / 2..8 * GIB);
    let mut d = match rng.random_range(0..5) {
        0 => linux_cpu(id, ram),
        1 => linux_cuda(id, ram, rng.random_range(GIB / 2..4 * GIB)),
        2 => mac_metal(id, ram),
        3 => mac_cpu(id, ram),
        _ => android(id, ram, rng.random_range(0..GIB)),
    };
    let speed = rng.random_range(0.2..4.0);
    for v in d.cpu_flops.values_mut() {
        *v *= speed;
    }
    d.disk_seq_read = rng.random_range(1e8..4e9);
    d.disk_rand_read = rng.random_range(1e8..2e9);
    d.comm_latency = rng.random_range(0.0005..0.01);
    d
}

pub fn random_spec(rng: &mut ChaCha8Rng, max_devices: usize, max_layers: u32) -> ClusterSpec {
    let m = rng.random_range(1..=max_devices);
    let layers = rng.random_range(m as u32 * 2..=max_layers);
    let devices = (0..m).map(|i| random_device(rng, &format!("d{i}"))).collect();
    let mut s = spec(devices, layers);
    s.model.layer_bytes = rng.random_range(50_000_000..400_000_000);
    s
}

/// The class a device takes when its memory is exceeded.
pub fn overloaded_class(d: &DeviceProfile) -> DeviceClass {
    match (d.os, d.backend) {
        (Os::Macos, Backend::Metal) => DeviceClass::M2,
        (Os::Macos, _) => DeviceClass::M1,
        _ => DeviceClass::M3,
    }
}

/// Classes each device may take: M4 always, its overloaded class unless its
/// disk is at or below the threshold.
pub fn class_choices(spec: &ClusterSpec) -> Vec<Vec<DeviceClass>> {
    spec.devices
        .iter()
        .map(|d| {
            if d.disk_speed() <= spec.disk_speed_threshold {
                vec![DeviceClass::M4]
            } else {
                vec![DeviceClass::M4, overloaded_class(d)]
            }
        })
        .collect()
}

pub fn round_counts(layers: u32) -> Vec<u32> {
    let f = valid_factors(layers);
    if f.is_empty() {
        vec![1]
    } else {
        f
    }
}

/// Minimum objective over every class vector, every round count and every
/// composition, by exhaustive enumeration.
pub fn outer_enumeration(spec: &ClusterSpec) -> Option<f64> {
    let choices = class_choices(spec);
    let devices = choices.len();
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; devices];
    loop {
        let mut sets = SetAssignment::all_m4(devices);
        for m in 0..devices {
            sets.class[m] = choices[m][idx[m]];
        }
        for k in round_counts(spec.layers()) {
            let inst = build_instance(spec, &sets, k).unwrap();
            if let IlpOutcome::Optimal(s) = brute_force_solve(&inst).unwrap() {
                if best.is_none_or(|b| s.objective < b) {
                    best = Some(s.objective);
                }
            }
        }
        let mut m = 0;
        loop {
            if m == devices {
                return best;
            }
            idx[m] += 1;
            if idx[m] < choices[m].len() {
                break;
            }
            idx[m] = 0;
            m += 1;
        }
    }
}

pub fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs())
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub const GOLDEN_CONFIGS: [&str; 3] = ["home_cluster.toml", "homogeneous_70b.toml", "small_model.toml"];
