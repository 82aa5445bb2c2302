//! Exact memory-demand arithmetic. Every quantity is in bytes multiplied by
//! the vocabulary size so the per-token lookup row `b_i / V` stays integral.

use crate::profiles::{Backend, DeviceProfile, ModelProfile, Os};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Platform {
    MacCpu,
    MacMetal,
    Linux,
    Android,
}

pub(crate) fn platform(d: &DeviceProfile) -> Platform {
    match (d.os, d.backend) {
        (Os::Macos, Backend::Metal) => Platform::MacMetal,
        (Os::Macos, _) => Platform::MacCpu,
        (Os::Linux, _) => Platform::Linux,
        (Os::Android, _) => Platform::Android,
    }
}

pub(crate) fn vocab(m: &ModelProfile) -> i128 {
    m.vocab_size as i128
}

/// `(b_i/V + b_o)·V`, the head's input-row and output-weight bytes.
pub(crate) fn head_io_v(m: &ModelProfile) -> i128 {
    m.input_bytes as i128 + m.output_bytes as i128 * vocab(m)
}

/// `b_cio·V` for a device.
pub(crate) fn b_cio_v(m: &ModelProfile, is_head: bool) -> i128 {
    let io = if is_head { head_io_v(m) } else { 0 };
    io + m.cpu_buffer as i128 * vocab(m)
}

/// Bytes·V the device's overload condition compares against.
pub(crate) fn budget_v(d: &DeviceProfile, m: &ModelProfile) -> i128 {
    let bytes = match platform(d) {
        Platform::MacCpu | Platform::Linux => d.ram_available,
        Platform::MacMetal => d.metal_working_set.unwrap_or(0),
        Platform::Android => d.ram_available + d.swap_capacity(),
    };
    bytes as i128 * vocab(m)
}

/// Left-hand side of the device's overload condition, bytes·V.
pub(crate) fn demand_v(
    d: &DeviceProfile,
    m: &ModelProfile,
    is_head: bool,
    l: u32,
    l_gpu: u32,
    bprime: u64,
) -> i128 {
    let bp = bprime as i128 * vocab(m);
    let cio = b_cio_v(m, is_head);
    match platform(d) {
        Platform::MacCpu => l as i128 * bp + cio,
        Platform::MacMetal => l as i128 * bp + cio + m.gpu_buffer as i128 * vocab(m),
        Platform::Linux | Platform::Android => (l - l_gpu) as i128 * bp + cio,
    }
}

/// Bytes·V read from disk per token when the device is overloaded.
pub(crate) fn reload_v(
    d: &DeviceProfile,
    m: &ModelProfile,
    is_head: bool,
    l: u32,
    l_gpu: u32,
    bprime: u64,
) -> i128 {
    match platform(d) {
        Platform::MacMetal => {
            let io = if is_head { head_io_v(m) } else { 0 };
            l as i128 * m.layer_bytes as i128 * vocab(m) + io
        }
        _ => demand_v(d, m, is_head, l, l_gpu, bprime) - budget_v(d, m),
    }
}

/// GPU memory in use, bytes·V, or 0 without a GPU backend.
pub(crate) fn gpu_demand_v(
    d: &DeviceProfile,
    m: &ModelProfile,
    is_head: bool,
    l_gpu: u32,
    bprime: u64,
) -> i128 {
    if !d.has_gpu() {
        return 0;
    }
    let head_out = if is_head && d.is_metal() { m.output_bytes as i128 } else { 0 };
    (l_gpu as i128 * bprime as i128 + m.gpu_buffer as i128 + head_out) * vocab(m)
}
