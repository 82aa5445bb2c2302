//! Discrete-event replay of a plan on a ring of devices, with a per-device
//! LRU page cache, one disk channel per device and optional prefetching.

mod cache;
mod engine;
mod schedule;
mod trace;

use std::fmt;
use std::str::FromStr;

use crate::error::SimError;
use crate::latency_model::PartitionPlan;
use crate::profiles::ClusterSpec;

pub use cache::PageCache;
pub use schedule::{build_schedule, RingSchedule, Segment};
pub use trace::{export_trace, TraceFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    /// Plain pipeline: each device runs its whole assignment once per token.
    Pp,
    /// Pipelined ring: the plan's `k` rounds per token.
    Prp,
}

impl FromStr for Parallelism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pp" => Ok(Parallelism::Pp),
            "prp" => Ok(Parallelism::Prp),
            other => Err(format!("unknown mode `{other}` (expected `pp` or `prp`)")),
        }
    }
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parallelism::Pp => "pp",
            Parallelism::Prp => "prp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimMode {
    pub parallelism: Parallelism,
    /// Without prefetching every missing layer is a page fault, which is the
    /// pessimistic stance of the analytical model.
    pub prefetch: bool,
}

impl SimMode {
    pub const PRP: SimMode = SimMode {
        parallelism: Parallelism::Prp,
        prefetch: true,
    };
    pub const PP: SimMode = SimMode {
        parallelism: Parallelism::Pp,
        prefetch: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub mode: SimMode,
    pub prompt_tokens: u32,
    pub decode_tokens: u32,
    /// Grow the KV cache by one token per decode step, which lengthens the
    /// per-layer memory traffic.
    pub kv_growth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Recv,
    ComputeGpu,
    ComputeCpu,
    Prefetch,
    FaultLoad,
    Send,
    Output,
}

impl EventKind {
    pub fn tag(self) -> &'static str {
        match self {
            EventKind::Recv => "recv",
            EventKind::ComputeGpu => "compute_gpu",
            EventKind::ComputeCpu => "compute_cpu",
            EventKind::Prefetch => "prefetch",
            EventKind::FaultLoad => "fault_load",
            EventKind::Send => "send",
            EventKind::Output => "output",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    /// Index into the cluster's device list.
    pub device: usize,
    pub kind: EventKind,
    pub start: f64,
    pub duration: f64,
    /// 0 is the prefill pass; decode tokens count from 1.
    pub token: u32,
    pub round: u32,
    /// Layer computed or loaded, when the event concerns one.
    pub layer: Option<u32>,
}

impl SimEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub device_ids: Vec<String>,
    pub rounds: u32,
    /// Prefill plus the first decode step.
    pub ttft: f64,
    /// Seconds per decode token.
    pub tpot_series: Vec<f64>,
    pub mean_tpot: f64,
    pub events: Vec<SimEvent>,
    /// Total bytes read from disk per device.
    pub disk_bytes_read: Vec<u64>,
    /// Disk bytes per token (same numbering as events) per device. Prefetch
    /// reads count towards the token they prepare.
    pub token_disk_bytes: Vec<Vec<u64>>,
}

/// Replay `plan` for `prompt_tokens` of prefill and `decode_tokens` decode
/// steps.
pub fn simulate(
    spec: &ClusterSpec,
    plan: &PartitionPlan,
    prompt_tokens: u32,
    decode_tokens: u32,
    mode: SimMode,
) -> Result<SimResult, SimError> {
    simulate_with(
        spec,
        plan,
        &SimConfig {
            mode,
            prompt_tokens,
            decode_tokens,
            kv_growth: false,
        },
    )
}

pub fn simulate_with(spec: &ClusterSpec, plan: &PartitionPlan, cfg: &SimConfig) -> Result<SimResult, SimError> {
    engine::run(spec, plan, cfg)
}
