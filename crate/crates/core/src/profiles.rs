//! Device and model profiles, cluster configuration loading and validation.
//!
//! Profiles are plain measured inputs: FLOPS per backend and quantization,
//! memory-copy latencies, disk throughputs and memory budgets. Nothing here
//! probes real hardware.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Violation};

/// Weight quantization formats that carry their own FLOPS figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QuantFormat {
    Q4k,
    Q5k,
    Q6k,
    Q80,
    Fp16,
    Fp32,
}

impl QuantFormat {
    pub const ALL: [QuantFormat; 6] = [
        QuantFormat::Q4k,
        QuantFormat::Q5k,
        QuantFormat::Q6k,
        QuantFormat::Q80,
        QuantFormat::Fp16,
        QuantFormat::Fp32,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QuantFormat::Q4k => "q4k",
            QuantFormat::Q5k => "q5k",
            QuantFormat::Q6k => "q6k",
            QuantFormat::Q80 => "q80",
            QuantFormat::Fp16 => "fp16",
            QuantFormat::Fp32 => "fp32",
        }
    }
}

impl fmt::Display for QuantFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QuantFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuantFormat::ALL
            .into_iter()
            .find(|q| q.tag() == s)
            .ok_or_else(|| format!("unknown quant format `{s}`"))
    }
}

impl TryFrom<String> for QuantFormat {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<QuantFormat> for String {
    fn from(q: QuantFormat) -> Self {
        q.tag().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Os {
    Macos,
    Linux,
    Android,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    None,
    Cuda,
    Metal,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::None => "cpu",
            Backend::Cuda => "cuda",
            Backend::Metal => "metal",
        })
    }
}

pub type FlopsTable = BTreeMap<QuantFormat, f64>;

/// Measured capabilities of one device. Units: ops/s, bytes/s, seconds, bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: String,
    pub os: Os,
    #[serde(default)]
    pub uma: bool,
    pub backend: Backend,
    pub cpu_flops: FlopsTable,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gpu_flops: FlopsTable,
    pub mem_throughput_cpu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_throughput_gpu: Option<f64>,
    pub kv_copy_cpu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_copy_gpu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ram_to_vram: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vram_to_ram: Option<f64>,
    pub comm_latency: f64,
    pub disk_seq_read: f64,
    pub disk_rand_read: f64,
    pub ram_available: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metal_working_set: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vram_available: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swap_available: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_can_swap: Option<u64>,
    /// Simulator only: once a Metal device exceeds its working set, reload
    /// the whole assignment every token instead of plain LRU. Defaults to on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metal_cliff: Option<bool>,
}

impl DeviceProfile {
    pub fn has_gpu(&self) -> bool {
        self.backend != Backend::None
    }

    pub fn is_metal(&self) -> bool {
        self.backend == Backend::Metal
    }

    pub fn is_cuda(&self) -> bool {
        self.backend == Backend::Cuda
    }

    /// Disk throughput the page cache reloads at: random reads on macOS,
    /// sequential reads elsewhere (mmap is configured for sequential access).
    pub fn disk_speed(&self) -> f64 {
        match self.os {
            Os::Macos => self.disk_rand_read,
            Os::Linux | Os::Android => self.disk_seq_read,
        }
    }

    /// Bytes the OS may swap out on our behalf; zero outside Android.
    pub fn swap_capacity(&self) -> u64 {
        match self.os {
            Os::Android => self
                .bytes_can_swap
                .unwrap_or(0)
                .min(self.swap_available.unwrap_or(0)),
            _ => 0,
        }
    }

    /// Memory the GPU backend may fill: private VRAM for CUDA, the Metal
    /// recommended working set for Metal, zero otherwise.
    pub fn gpu_memory(&self) -> u64 {
        match self.backend {
            Backend::None => 0,
            Backend::Cuda => self.vram_available.unwrap_or(0),
            Backend::Metal => self.metal_working_set.unwrap_or(0),
        }
    }

    /// RAM↔VRAM round trip per window, zero on UMA devices.
    pub fn device_copy(&self) -> f64 {
        if self.uma {
            0.0
        } else {
            self.ram_to_vram.unwrap_or(0.0) + self.vram_to_ram.unwrap_or(0.0)
        }
    }

    pub fn metal_cliff(&self) -> bool {
        self.metal_cliff.unwrap_or(true)
    }
}

/// Static model facts. Units: ops per layer, bytes, element counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub layer_count: u32,
    pub layer_flops: FlopsTable,
    #[serde(default)]
    pub output_flops: FlopsTable,
    pub layer_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub kv_heads: u64,
    pub v_heads: u64,
    pub kv_head_dim: u64,
    pub v_head_dim: u64,
    pub embed_dim: u64,
    pub vocab_size: u64,
    pub kv_tokens: u64,
    pub cpu_buffer: u64,
    pub gpu_buffer: u64,
}

impl ModelProfile {
    /// Bytes of K and V written per layer per token (FP16 cache).
    pub fn kv_bytes_per_token(&self) -> u64 {
        2 * (self.kv_heads * self.kv_head_dim + self.v_heads * self.v_head_dim)
    }

    /// Per-layer weight bytes plus the layer's KV cache for `kv_tokens` tokens.
    pub fn layer_bytes_with_kv(&self) -> u64 {
        self.layer_bytes_with_kv_at(self.kv_tokens)
    }

    pub fn layer_bytes_with_kv_at(&self, kv_tokens: u64) -> u64 {
        self.layer_bytes + self.kv_bytes_per_token() * kv_tokens
    }

    /// One embedding-table row, the per-token input lookup volume.
    pub fn input_row_bytes(&self) -> f64 {
        self.input_bytes as f64 / self.vocab_size as f64
    }

    /// Quant formats the model actually spends FLOPs on.
    pub fn active_quants(&self) -> impl Iterator<Item = QuantFormat> + '_ {
        self.layer_flops
            .iter()
            .chain(self.output_flops.iter())
            .filter(|(_, f)| **f > 0.0)
            .map(|(q, _)| *q)
    }
}

/// A cluster: devices in ring order (index 0 is the head), the model, and
/// planner thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub disk_speed_threshold: f64,
    #[serde(default, rename = "relays")]
    pub topology_relays: BTreeSet<String>,
    pub model: ModelProfile,
    pub devices: Vec<DeviceProfile>,
}

impl ClusterSpec {
    pub fn layers(&self) -> u32 {
        self.model.layer_count
    }

    pub fn head(&self) -> &DeviceProfile {
        &self.devices[0]
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let spec: ClusterSpec =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let violations = spec.violations();
        if violations.is_empty() {
            Ok(spec)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cluster configs are always representable as TOML")
    }

    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let top = |field: &str, message: String| Violation {
            device: None,
            field: field.to_string(),
            message,
        };
        if !(self.disk_speed_threshold.is_finite() && self.disk_speed_threshold > 0.0) {
            out.push(top(
                "disk_speed_threshold",
                format!("must be > 0, got {}", self.disk_speed_threshold),
            ));
        }
        if self.devices.is_empty() {
            out.push(top("devices", "at least one device is required".into()));
        }
        validate_model(&self.model, &mut out);

        let mut seen = BTreeSet::new();
        for d in &self.devices {
            if !seen.insert(d.id.as_str()) {
                out.push(Violation {
                    device: Some(d.id.clone()),
                    field: "id".into(),
                    message: "duplicate id".into(),
                });
            }
            validate_device(d, &mut out);
        }
        for relay in &self.topology_relays {
            if !seen.contains(relay.as_str()) {
                out.push(top("relays", format!("unknown device id `{relay}`")));
            }
        }
        out
    }
}

fn validate_model(m: &ModelProfile, out: &mut Vec<Violation>) {
    let mut bad = |field: &str, message: String| {
        out.push(Violation {
            device: None,
            field: format!("model.{field}"),
            message,
        })
    };
    if m.layer_count < 1 {
        bad("layer_count", "must be >= 1".into());
    }
    if m.vocab_size < 1 {
        bad("vocab_size", "must be >= 1".into());
    }
    for (name, table) in [("layer_flops", &m.layer_flops), ("output_flops", &m.output_flops)] {
        for (q, f) in table {
            if !(f.is_finite() && *f >= 0.0) {
                bad(name, format!("{q} must be a finite count >= 0, got {f}"));
            }
        }
    }
}

fn validate_device(d: &DeviceProfile, out: &mut Vec<Violation>) {
    let mut bad = |field: &str, message: String| {
        out.push(Violation {
            device: Some(d.id.clone()),
            field: field.to_string(),
            message,
        })
    };
    let positive = |x: f64| x.is_finite() && x > 0.0;
    let nonneg = |x: f64| x.is_finite() && x >= 0.0;

    for (q, s) in &d.cpu_flops {
        if !positive(*s) {
            bad("cpu_flops", format!("{q} must be > 0, got {s}"));
        }
    }
    for (q, s) in &d.gpu_flops {
        if !positive(*s) {
            bad("gpu_flops", format!("{q} must be > 0, got {s}"));
        }
    }
    for (field, v) in [
        ("mem_throughput_cpu", d.mem_throughput_cpu),
        ("disk_seq_read", d.disk_seq_read),
        ("disk_rand_read", d.disk_rand_read),
    ] {
        if !positive(v) {
            bad(field, format!("must be > 0, got {v}"));
        }
    }
    for (field, v) in [("kv_copy_cpu", d.kv_copy_cpu), ("comm_latency", d.comm_latency)] {
        if !nonneg(v) {
            bad(field, format!("must be >= 0, got {v}"));
        }
    }

    if d.backend == Backend::Metal && d.os != Os::Macos {
        bad("backend", "metal requires os = macos".into());
    }
    if d.backend == Backend::Cuda && d.os == Os::Macos {
        bad("backend", "cuda is not available on macos".into());
    }
    if d.uma && d.backend == Backend::Cuda {
        bad("uma", "uma devices must use backend metal or none".into());
    }

    if d.has_gpu() {
        if d.gpu_flops.is_empty() {
            bad("gpu_flops", format!("required for backend {}", d.backend));
        }
        match d.mem_throughput_gpu {
            Some(v) if positive(v) => {}
            Some(v) => bad("mem_throughput_gpu", format!("must be > 0, got {v}")),
            None => bad("mem_throughput_gpu", format!("required for backend {}", d.backend)),
        }
        match d.kv_copy_gpu {
            Some(v) if nonneg(v) => {}
            Some(v) => bad("kv_copy_gpu", format!("must be >= 0, got {v}")),
            None => bad("kv_copy_gpu", format!("required for backend {}", d.backend)),
        }
        for (field, v) in [("ram_to_vram", d.ram_to_vram), ("vram_to_ram", d.vram_to_ram)] {
            match v {
                Some(v) if !nonneg(v) => bad(field, format!("must be >= 0, got {v}")),
                None if !d.uma => bad(field, "required for non-UMA GPU devices".into()),
                _ => {}
            }
        }
    } else {
        for (field, present) in [
            ("gpu_flops", !d.gpu_flops.is_empty()),
            ("mem_throughput_gpu", d.mem_throughput_gpu.is_some()),
            ("kv_copy_gpu", d.kv_copy_gpu.is_some()),
            ("ram_to_vram", d.ram_to_vram.is_some()),
            ("vram_to_ram", d.vram_to_ram.is_some()),
        ] {
            if present {
                bad(field, "must be absent when backend = none".into());
            }
        }
    }

    match (d.backend, d.vram_available) {
        (Backend::Cuda, None) => bad("vram_available", "required for backend cuda".into()),
        (Backend::None | Backend::Metal, Some(_)) => {
            bad("vram_available", "only applies to backend cuda".into())
        }
        _ => {}
    }
    if d.backend == Backend::Metal && d.metal_working_set.is_none() {
        bad("metal_working_set", "required for backend metal".into());
    }
    if d.os != Os::Macos && d.metal_working_set.is_some() {
        bad("metal_working_set", "only applies to macos".into());
    }
    if d.os != Os::Android {
        if d.swap_available.is_some() {
            bad("swap_available", "only applies to android".into());
        }
        if d.bytes_can_swap.is_some() {
            bad("bytes_can_swap", "only applies to android".into());
        }
    }
    if d.metal_cliff.is_some() && d.backend != Backend::Metal {
        bad("metal_cliff", "only applies to backend metal".into());
    }
}

/// Parse and validate a cluster configuration file.
pub fn load_cluster_spec(path: impl AsRef<Path>) -> Result<ClusterSpec, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ClusterSpec::from_toml_str(&text)
}

/// Bytes a device contributes at initialization, used to seed window sizes.
pub fn memory_budget(d: &DeviceProfile) -> u64 {
    match (d.os, d.backend) {
        (Os::Macos, Backend::Metal) => d.metal_working_set.unwrap_or(0),
        (Os::Android, _) => d.ram_available + d.swap_available.unwrap_or(0),
        _ => d.ram_available,
    }
}
