use crate::error::SimError;
use crate::latency_model::{layer_counts, PartitionPlan};

/// A contiguous run of layers one device computes in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub round: u32,
    /// First layer, zero-based.
    pub start: u32,
    pub len: u32,
    /// Leading layers of the segment that run on the GPU.
    pub gpu: u32,
}

impl Segment {
    pub fn layers(&self) -> std::ops::Range<u32> {
        self.start..self.start + self.len
    }
}

/// Segments per device in ring order. Relays own empty segments so the
/// hidden state still passes through them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingSchedule {
    pub rounds: u32,
    pub segments: Vec<Vec<Segment>>,
}

impl RingSchedule {
    /// Segment of device `m` in `round`, if the device takes part.
    pub fn segment(&self, m: usize, round: u32) -> Option<&Segment> {
        self.segments[m].get(round as usize)
    }
}

/// Walk the ring round by round, handing each device up to `w` layers until
/// the model is covered. The last round may stop part-way round the ring.
pub fn build_schedule(plan: &PartitionPlan, layers: u32) -> Result<RingSchedule, SimError> {
    if plan.w.len() != plan.n.len() {
        return Err(SimError::PlanMismatch("w and n lengths differ".into()));
    }
    let total: u32 = plan.w.iter().sum();
    if total == 0 || total > layers {
        return Err(SimError::PlanMismatch(format!(
            "window sum {total} must be in 1..={layers}"
        )));
    }
    if let Some(m) = (0..plan.w.len()).find(|&m| plan.n[m] > plan.w[m]) {
        return Err(SimError::PlanMismatch(format!("device {m} has n > w")));
    }
    let counts = layer_counts(&plan.w, &plan.n, layers)?;
    let rounds = counts.windows.iter().copied().max().unwrap_or(0);
    let mut segments = vec![Vec::new(); plan.w.len()];
    let mut next = 0;
    for round in 0..rounds {
        for m in 0..plan.w.len() {
            if round >= counts.windows[m] {
                continue;
            }
            let len = plan.w[m].min(layers - next);
            segments[m].push(Segment {
                round,
                start: next,
                len,
                gpu: plan.n[m].min(len),
            });
            next += len;
        }
    }
    debug_assert_eq!(next, layers);
    Ok(RingSchedule { rounds, segments })
}
