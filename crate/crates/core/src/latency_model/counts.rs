use crate::error::ModelError;

/// Per-device layer totals for one token, derived from window sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCounts {
    /// Layers each device computes per token.
    pub l: Vec<u32>,
    /// Of those, layers computed on the GPU.
    pub l_gpu: Vec<u32>,
    /// Windows (hence hidden-state sends) each device handles per token.
    pub windows: Vec<u32>,
    /// `L mod W`.
    pub remainder: u32,
    /// `W`, the sum of all windows.
    pub total_window: u32,
}

/// Count layers per device when windows are tiled around the ring until all
/// `layers` are covered. The final partial round fills devices in ring order.
///
/// Devices with `w = 0` are relays: they compute nothing but still forward
/// the hidden state once per round they are reached in.
pub fn layer_counts(w: &[u32], n: &[u32], layers: u32) -> Result<LayerCounts, ModelError> {
    if w.len() != n.len() {
        return Err(ModelError::Dimension(format!(
            "w has {} entries but n has {}",
            w.len(),
            n.len()
        )));
    }
    if let Some(m) = (0..w.len()).find(|&m| n[m] > w[m]) {
        return Err(ModelError::Dimension(format!(
            "device {m}: n = {} exceeds w = {}",
            n[m], w[m]
        )));
    }
    let total: u64 = w.iter().map(|&x| x as u64).sum();
    if total == 0 || total > layers as u64 {
        return Err(ModelError::Dimension(format!(
            "sum of windows is {total}, expected 1..={layers}"
        )));
    }
    let total = total as u32;
    let q = layers / total;
    let r = layers % total;

    let mut out = LayerCounts {
        l: Vec::with_capacity(w.len()),
        l_gpu: Vec::with_capacity(w.len()),
        windows: Vec::with_capacity(w.len()),
        remainder: r,
        total_window: total,
    };
    let mut prefix = 0u32;
    for (&wm, &nm) in w.iter().zip(n) {
        let extra = r.saturating_sub(prefix);
        out.l.push(q * wm + wm.min(extra));
        out.l_gpu.push(q * nm + nm.min(extra));
        out.windows.push(q + extra.min(1));
        prefix += wm.min(r);
    }
    Ok(out)
}
