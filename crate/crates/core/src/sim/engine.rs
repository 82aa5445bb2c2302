use std::collections::VecDeque;

use crate::error::SimError;
use crate::latency_model::demand::{b_cio_v, budget_v, demand_v, platform, vocab, Platform};
use crate::latency_model::{compute_time, head_output_time, layer_counts, PartitionPlan};
use crate::profiles::{ClusterSpec, DeviceProfile, ModelProfile};

use super::cache::PageCache;
use super::schedule::{build_schedule, RingSchedule};
use super::{EventKind, Parallelism, SimConfig, SimEvent, SimResult};

#[derive(Debug, Clone)]
struct PendingLoad {
    layer: u32,
    issue: f64,
    token: u32,
    round: u32,
}

struct DeviceState {
    cache: PageCache,
    disk_free: f64,
    queue: VecDeque<PendingLoad>,
    /// Seconds to read one layer.
    load_time: f64,
    cliff: bool,
}

struct Recorder {
    events: Vec<SimEvent>,
    token_bytes: Vec<Vec<u64>>,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, device: usize, kind: EventKind, start: f64, duration: f64, token: u32, round: u32, layer: Option<u32>) {
        self.events.push(SimEvent {
            device,
            kind,
            start,
            duration,
            token,
            round,
            layer,
        });
    }
}

/// Weights a device may keep cached: its memory budget minus buffers, the
/// head's I/O tensors and the KV cache of its layers.
fn cache_capacity(d: &DeviceProfile, model: &ModelProfile, is_head: bool, layers: u32) -> u64 {
    let v = vocab(model);
    let mut free = budget_v(d, model) - b_cio_v(model, is_head);
    free -= (model.kv_bytes_per_token() as i128 * model.kv_tokens as i128 * layers as i128) * v;
    if platform(d) == Platform::MacMetal {
        free -= model.gpu_buffer as i128 * v;
    }
    (free.max(0) / v) as u64
}

/// Per-layer compute seconds on each backend for a pass over `tokens`
/// positions; weights and KV are streamed from memory once per pass.
fn layer_times(d: &DeviceProfile, model: &ModelProfile, tokens: f64, kv_tokens: u64) -> Result<(f64, f64), SimError> {
    let bp = model.layer_bytes_with_kv_at(kv_tokens) as f64;
    let cpu = compute_time(&model.layer_flops, &d.cpu_flops, &d.id, "cpu")? * tokens
        + d.kv_copy_cpu * tokens
        + bp / d.mem_throughput_cpu;
    let gpu = if d.has_gpu() {
        let backend = if d.is_metal() { "metal" } else { "cuda" };
        compute_time(&model.layer_flops, &d.gpu_flops, &d.id, backend)? * tokens
            + d.kv_copy_gpu.unwrap_or(0.0) * tokens
            + bp / d.mem_throughput_gpu.unwrap_or(f64::INFINITY)
    } else {
        0.0
    };
    Ok((cpu, gpu))
}

/// Run queued prefetches that start before `until`. Loads already under way
/// at `until` complete; the rest stay queued.
fn advance(st: &mut DeviceState, m: usize, until: f64, layer_bytes: u64, rec: &mut Recorder) {
    while let Some(item) = st.queue.front() {
        if item.issue >= until {
            break;
        }
        if st.cache.ready_at(item.layer).is_some() {
            st.cache.touch(item.layer);
            st.queue.pop_front();
            continue;
        }
        let start = st.disk_free.max(item.issue);
        if start >= until {
            break;
        }
        let item = st.queue.pop_front().expect("front exists");
        let end = start + st.load_time;
        st.disk_free = end;
        st.cache.insert(item.layer, layer_bytes, end);
        rec.token_bytes[item.token as usize][m] += layer_bytes;
        rec.push(m, EventKind::Prefetch, start, st.load_time, item.token, item.round, Some(item.layer));
    }
}

fn pipeline_plan(plan: &PartitionPlan, layers: u32) -> Result<PartitionPlan, SimError> {
    let counts = layer_counts(&plan.w, &plan.n, layers)?;
    Ok(PartitionPlan {
        w: counts.l,
        n: counts.l_gpu,
        k: 1,
        ..plan.clone()
    })
}

fn enqueue(st: &mut DeviceState, sched: &RingSchedule, m: usize, round: u32, token: u32, issue: f64) {
    let Some(seg) = sched.segment(m, round) else {
        return;
    };
    for layer in seg.layers() {
        if !st.cache.is_pinned(layer) {
            st.queue.push_back(PendingLoad {
                layer,
                issue,
                token,
                round,
            });
        }
    }
}

pub(super) fn run(spec: &ClusterSpec, plan: &PartitionPlan, cfg: &SimConfig) -> Result<SimResult, SimError> {
    let devices = spec.devices.len();
    if plan.w.len() != devices || plan.n.len() != devices {
        return Err(SimError::PlanMismatch(format!(
            "plan covers {} devices, cluster has {devices}",
            plan.w.len()
        )));
    }
    if plan.device_ids.iter().zip(&spec.devices).any(|(id, d)| *id != d.id) {
        return Err(SimError::PlanMismatch("device ids differ from the cluster".into()));
    }
    if cfg.decode_tokens == 0 {
        return Err(SimError::NoTokens);
    }
    let model = &spec.model;
    let layers = spec.layers();
    let ring_plan = match cfg.mode.parallelism {
        Parallelism::Prp => plan.clone(),
        Parallelism::Pp => pipeline_plan(plan, layers)?,
    };
    let sched = build_schedule(&ring_plan, layers)?;
    let counts = layer_counts(&ring_plan.w, &ring_plan.n, layers)?;
    let bprime = model.layer_bytes_with_kv();

    let mut states: Vec<DeviceState> = spec
        .devices
        .iter()
        .enumerate()
        .map(|(m, d)| {
            let mut cache = PageCache::new(cache_capacity(d, model, m == 0, counts.l[m]));
            if d.is_cuda() {
                for seg in &sched.segments[m] {
                    for layer in seg.start..seg.start + seg.gpu {
                        cache.pin(layer);
                    }
                }
            }
            let over = demand_v(d, model, m == 0, counts.l[m], counts.l_gpu[m], bprime) > budget_v(d, model);
            DeviceState {
                cache,
                disk_free: 0.0,
                queue: VecDeque::new(),
                load_time: model.layer_bytes as f64 / d.disk_speed(),
                cliff: d.is_metal() && d.metal_cliff() && over,
            }
        })
        .collect();

    let first_token = if cfg.prompt_tokens > 0 { 0 } else { 1 };
    let last_token = cfg.decode_tokens;
    let mut rec = Recorder {
        events: Vec::new(),
        token_bytes: vec![vec![0; devices]; last_token as usize + 1],
    };
    if cfg.mode.prefetch {
        for (m, st) in states.iter_mut().enumerate() {
            enqueue(st, &sched, m, 0, first_token, 0.0);
        }
    }

    let head_out = head_output_time(&spec.devices[0], model)?;
    let mut t = 0.0;
    let mut out_end = vec![0.0; last_token as usize + 1];
    for token in first_token..=last_token {
        let prefill = token == 0;
        let positions = if prefill { cfg.prompt_tokens as f64 } else { 1.0 };
        let kv = if cfg.kv_growth && !prefill {
            model.kv_tokens + cfg.prompt_tokens as u64 + token as u64 - 1
        } else {
            model.kv_tokens
        };
        let times: Vec<(f64, f64)> = spec
            .devices
            .iter()
            .map(|d| layer_times(d, model, positions, kv))
            .collect::<Result<_, _>>()?;

        for round in 0..sched.rounds {
            for m in 0..devices {
                let Some(seg) = sched.segment(m, round) else {
                    continue;
                };
                let d = &spec.devices[m];
                let st = &mut states[m];
                if m != 0 || round != 0 {
                    rec.push(m, EventKind::Recv, t, 0.0, token, round, None);
                }
                if round == 0 && st.cliff {
                    st.cache.clear();
                    st.queue.clear();
                }
                advance(st, m, t, model.layer_bytes, &mut rec);
                st.queue.clear();

                let (cpu_t, gpu_t) = times[m];
                for (i, layer) in seg.layers().enumerate() {
                    let on_gpu = (i as u32) < seg.gpu;
                    if !st.cache.is_pinned(layer) {
                        match st.cache.ready_at(layer) {
                            Some(ready) => {
                                t = t.max(ready);
                                st.cache.touch(layer);
                            }
                            None => {
                                let start = t.max(st.disk_free);
                                let end = start + st.load_time;
                                st.disk_free = end;
                                st.cache.insert(layer, model.layer_bytes, end);
                                rec.token_bytes[token as usize][m] += model.layer_bytes;
                                rec.push(m, EventKind::FaultLoad, start, st.load_time, token, round, Some(layer));
                                t = end;
                            }
                        }
                    }
                    let (kind, dt) = if on_gpu {
                        (EventKind::ComputeGpu, gpu_t)
                    } else {
                        (EventKind::ComputeCpu, cpu_t)
                    };
                    rec.push(m, kind, t, dt, token, round, Some(layer));
                    t += dt;
                }

                let send = d.device_copy() + d.comm_latency;
                rec.push(m, EventKind::Send, t, send, token, round, None);
                t += send;

                if cfg.mode.prefetch {
                    if round + 1 < counts.windows[m] {
                        enqueue(st, &sched, m, round + 1, token, t);
                    } else if token < last_token {
                        enqueue(st, &sched, m, 0, token + 1, t);
                    }
                }
            }
        }
        rec.push(0, EventKind::Recv, t, 0.0, token, sched.rounds.saturating_sub(1), None);
        rec.push(0, EventKind::Output, t, head_out, token, sched.rounds.saturating_sub(1), None);
        t += head_out;
        out_end[token as usize] = t;
    }

    let tpot_series: Vec<f64> = (1..=last_token as usize)
        .map(|i| out_end[i] - if i == 1 && first_token == 1 { 0.0 } else { out_end[i - 1] })
        .collect();
    let mean_tpot = tpot_series.iter().sum::<f64>() / tpot_series.len() as f64;
    let disk_bytes_read = (0..devices)
        .map(|m| rec.token_bytes.iter().map(|row| row[m]).sum())
        .collect();
    Ok(SimResult {
        device_ids: spec.devices.iter().map(|d| d.id.clone()).collect(),
        rounds: sched.rounds,
        ttft: out_end[1],
        tpot_series,
        mean_tpot,
        events: rec.events,
        disk_bytes_read,
        token_disk_bytes: rec.token_bytes,
    })
}
