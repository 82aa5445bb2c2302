use crate::profiles::{Backend, ClusterSpec};

use super::demand::{b_cio_v, budget_v, platform, vocab, Platform};
use super::{DeviceClass, SetAssignment};

/// Which block of the stacked RAM constraint a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowBlock {
    M1,
    M2,
    M3,
    /// M4, macOS without Metal: bounds `w`.
    M4MacCpu,
    /// M4, macOS with Metal: bounds `w`.
    M4Metal,
    /// M4, Linux or Android: bounds `w − n`.
    M4Linux,
}

/// One RAM row `pw·w + pn·n + W·z (<|≤) 0` with `z = num / den`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundRow {
    pub device: usize,
    pub block: RowBlock,
    pub pw: i8,
    pub pn: i8,
    /// Strict for the overload rows (M1..M3).
    pub strict: bool,
    /// `z·L·b′·V`, exact.
    pub num: i128,
}

/// Integer limit on a row's left-hand side for a fixed `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    Unbounded,
    Infeasible,
    AtMost(i64),
}

/// RAM rows for every non-relay device and the per-device GPU cap.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBounds {
    pub rows: Vec<BoundRow>,
    /// `z_gpu·L·b′·V` per device; zero without a GPU backend.
    pub gpu_num: Vec<i128>,
    pub has_gpu: Vec<bool>,
    /// Common denominator `L·b′·V`.
    pub den: i128,
    pub z: Vec<f64>,
    pub z_gpu: Vec<f64>,
}

fn floor_div(a: i128, b: i128) -> i128 {
    a.div_euclid(b)
}

fn clamp_i64(x: i128) -> i64 {
    x.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

impl MemoryBounds {
    /// Tightest integer bound on `pw·w + pn·n` for this row at window `W`.
    pub fn row_limit(&self, row: &BoundRow, window: u32) -> Limit {
        let t = -(window as i128) * row.num;
        if self.den == 0 {
            let ok = if row.strict { t > 0 } else { t >= 0 };
            return if ok { Limit::Unbounded } else { Limit::Infeasible };
        }
        let lim = if row.strict {
            floor_div(t - 1, self.den)
        } else {
            floor_div(t, self.den)
        };
        Limit::AtMost(clamp_i64(lim))
    }

    /// Largest `n` the device's GPU can hold at window `W`.
    pub fn gpu_limit(&self, device: usize, window: u32) -> Limit {
        if !self.has_gpu[device] {
            return Limit::AtMost(0);
        }
        let t = window as i128 * self.gpu_num[device];
        if self.den == 0 {
            return if t >= 0 { Limit::Unbounded } else { Limit::Infeasible };
        }
        Limit::AtMost(clamp_i64(floor_div(t, self.den)))
    }
}

/// RAM and GPU bounds for a set assignment, in the block order M1, M2, M3,
/// then the three M4 blocks. M4 rows whose OS selector is zero are dropped.
pub fn memory_bounds(spec: &ClusterSpec, sets: &SetAssignment) -> MemoryBounds {
    let model = &spec.model;
    let v = vocab(model);
    let bprime = model.layer_bytes_with_kv() as i128;
    let den = spec.layers() as i128 * bprime * v;
    let gpu_buf = model.gpu_buffer as i128 * v;

    let mut rows = Vec::new();
    let order = [
        (DeviceClass::M1, None),
        (DeviceClass::M2, None),
        (DeviceClass::M3, None),
        (DeviceClass::M4, Some(RowBlock::M4MacCpu)),
        (DeviceClass::M4, Some(RowBlock::M4Metal)),
        (DeviceClass::M4, Some(RowBlock::M4Linux)),
    ];
    for (class, m4_block) in order {
        for (m, d) in spec.devices.iter().enumerate() {
            if sets.relay[m] || sets.class[m] != class {
                continue;
            }
            let cio = b_cio_v(model, m == 0);
            let budget = budget_v(d, model);
            let p = platform(d);
            let row = match (class, m4_block, p) {
                (DeviceClass::M1, _, _) => (RowBlock::M1, -1, 0, true, budget - cio),
                (DeviceClass::M2, _, _) => (RowBlock::M2, -1, 0, true, budget - cio - gpu_buf),
                (DeviceClass::M3, _, _) => (RowBlock::M3, -1, 1, true, budget - cio),
                (_, Some(RowBlock::M4MacCpu), Platform::MacCpu) => {
                    (RowBlock::M4MacCpu, 1, 0, false, cio - budget)
                }
                (_, Some(RowBlock::M4Metal), Platform::MacMetal) => {
                    (RowBlock::M4Metal, 1, 0, false, cio + gpu_buf - budget)
                }
                (_, Some(RowBlock::M4Linux), Platform::Linux | Platform::Android) => {
                    (RowBlock::M4Linux, 1, -1, false, cio - budget)
                }
                _ => continue,
            };
            rows.push(BoundRow {
                device: m,
                block: row.0,
                pw: row.1,
                pn: row.2,
                strict: row.3,
                num: row.4,
            });
        }
    }

    let mut gpu_num = Vec::with_capacity(spec.devices.len());
    let mut has_gpu = Vec::with_capacity(spec.devices.len());
    for (m, d) in spec.devices.iter().enumerate() {
        let num = match d.backend {
            Backend::None => 0,
            Backend::Cuda => d.vram_available.unwrap_or(0) as i128 * v - gpu_buf,
            Backend::Metal => {
                let head_out = if m == 0 { model.output_bytes as i128 * v } else { 0 };
                d.metal_working_set.unwrap_or(0) as i128 * v - gpu_buf - head_out
            }
        };
        gpu_num.push(num);
        has_gpu.push(d.has_gpu());
    }

    let scale = |num: i128| {
        if den == 0 {
            if num == 0 {
                0.0
            } else {
                f64::INFINITY.copysign(num as f64)
            }
        } else {
            num as f64 / den as f64
        }
    };
    MemoryBounds {
        z: rows.iter().map(|r| scale(r.num)).collect(),
        z_gpu: gpu_num.iter().map(|&g| scale(g)).collect(),
        rows,
        gpu_num,
        has_gpu,
        den,
    }
}
