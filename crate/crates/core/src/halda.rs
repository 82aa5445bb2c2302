//! Iterative set assignment over per-k integer programs, and device
//! selection on top of it.

use crate::error::{ModelError, PlanError};
use crate::ilp::{build_instance, optimal_gpu_layers, solve, solve_with, IlpInstance, IlpOutcome, OBJECTIVE_RTOL};
use crate::latency_model::{
    classify_devices, estimate_memory_usage, objective_terms, slow_disk, DeviceClass,
    PartitionPlan, SetAssignment,
};
use crate::profiles::{memory_budget, ClusterSpec, Os};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaldaOptions {
    /// After the iterative loop, also solve each `k` on the set assignment
    /// chosen by a per-device dynamic program, which is globally optimal.
    pub refine: bool,
    /// Defaults to `4·M + 8`.
    pub iteration_cap: Option<usize>,
}

impl Default for HaldaOptions {
    fn default() -> Self {
        HaldaOptions {
            refine: true,
            iteration_cap: None,
        }
    }
}

/// Divisors of `layers` other than `layers`, ascending.
pub fn valid_factors(layers: u32) -> Vec<u32> {
    (1..layers).filter(|k| layers.is_multiple_of(*k)).collect()
}

fn sweep_factors(layers: u32) -> Vec<u32> {
    let ks = valid_factors(layers);
    if ks.is_empty() {
        vec![1]
    } else {
        ks
    }
}

/// Split `total` proportionally to `weights` by largest remainder. Ties go to
/// the larger weight, then the larger index. All-zero weights split evenly.
pub(crate) fn largest_remainder(weights: &[f64], total: u32) -> Vec<u32> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.to_vec()
    } else {
        vec![1.0; weights.len()]
    };
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let given: u32 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.total_cmp(&ri)
            .then(weights[j].total_cmp(&weights[i]))
            .then(j.cmp(&i))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(given) as usize) {
        out[i] += 1;
    }
    out
}

/// Starting windows: proportional to memory budgets, summing to `L`, with
/// every compute device holding at least one layer. Relays get zero.
pub fn initial_windows(spec: &ClusterSpec, relay: &[bool]) -> Result<Vec<u32>, PlanError> {
    let compute: Vec<usize> = (0..spec.devices.len()).filter(|&m| !relay[m]).collect();
    let layers = spec.layers();
    if compute.is_empty() {
        return Err(PlanError::NoComputeDevices);
    }
    if compute.len() > layers as usize {
        return Err(PlanError::TooManyDevices {
            devices: compute.len(),
            layers,
        });
    }
    let budgets: Vec<f64> = compute
        .iter()
        .map(|&m| memory_budget(&spec.devices[m]) as f64)
        .collect();
    let mut w = largest_remainder(&budgets, layers);
    while let Some(z) = w.iter().position(|&x| x == 0) {
        let (big, _) = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("nonempty");
        w[big] -= 1;
        w[z] = 1;
    }
    let mut full = vec![0; spec.devices.len()];
    for (i, &m) in compute.iter().enumerate() {
        full[m] = w[i];
    }
    Ok(full)
}

/// Device to force into M4 when a GPU has room for another layer while some
/// device (possibly the same one) is overloaded: the unforced M1..M3 device
/// with the slowest disk.
pub fn calibration_check(spec: &ClusterSpec, plan: &PartitionPlan) -> Result<Option<usize>, ModelError> {
    let usage = estimate_memory_usage(spec, plan)?;
    let bprime = spec.model.layer_bytes_with_kv();
    let compute = |m: usize| !plan.sets.relay[m];
    let free_gpu: Vec<usize> = (0..usage.len())
        .filter(|&m| compute(m) && usage[m].has_free_gpu(bprime))
        .collect();
    let overloaded = (0..usage.len()).any(|m| compute(m) && usage[m].overloaded);
    if free_gpu.is_empty() || !overloaded {
        return Ok(None);
    }
    Ok(slowest_unforced(spec, &plan.sets))
}

fn slowest_unforced(spec: &ClusterSpec, sets: &SetAssignment) -> Option<usize> {
    (0..sets.len())
        .filter(|&m| !sets.forced[m] && !sets.relay[m] && sets.class[m].is_overloaded())
        .min_by(|&a, &b| {
            spec.devices[a]
                .disk_speed()
                .total_cmp(&spec.devices[b].disk_speed())
                .then(a.cmp(&b))
        })
}

/// Best plan for the given cluster with all devices computing.
pub fn run(spec: &ClusterSpec) -> Result<PartitionPlan, PlanError> {
    run_with(spec, &vec![false; spec.devices.len()], HaldaOptions::default())
}

#[derive(Debug, Clone)]
struct Candidate {
    sets: SetAssignment,
    k: u32,
    objective: f64,
    w: Vec<u32>,
    n: Vec<u32>,
}

fn improves(new: &Candidate, old: &Option<Candidate>) -> bool {
    match old {
        None => true,
        Some(o) => {
            let tol = OBJECTIVE_RTOL * o.objective.abs();
            new.objective < o.objective - tol
                || (new.objective <= o.objective + tol && new.k < o.k)
        }
    }
}

fn to_plan(spec: &ClusterSpec, c: &Candidate) -> PartitionPlan {
    PartitionPlan {
        device_ids: spec.devices.iter().map(|d| d.id.clone()).collect(),
        w: c.w.clone(),
        n: c.n.clone(),
        k: c.k,
        objective: c.objective,
        sets: c.sets.clone(),
    }
}

/// Solve every `k` for one set assignment; returns the best candidate and
/// the reasons the other `k` failed.
fn sweep(spec: &ClusterSpec, sets: &SetAssignment) -> Result<(Option<Candidate>, Vec<String>), PlanError> {
    let mut best = None;
    let mut reasons = Vec::new();
    for k in sweep_factors(spec.layers()) {
        let inst = build_instance(spec, sets, k)?;
        if let Some(why) = &inst.trivially_infeasible {
            reasons.push(format!("k={k}: {why}"));
            continue;
        }
        match solve_with(&inst, false)? {
            IlpOutcome::Infeasible => {
                reasons.push(format!("k={k}: no integer point satisfies the memory bounds"))
            }
            IlpOutcome::Optimal(sol) => {
                let cand = Candidate {
                    sets: sets.clone(),
                    k,
                    objective: sol.objective,
                    w: sol.w,
                    n: sol.n,
                };
                if improves(&cand, &best) {
                    best = Some(cand);
                }
            }
        }
    }
    Ok((best, reasons))
}

/// The overloaded class a device would take on its platform.
fn overloaded_class(spec: &ClusterSpec, m: usize) -> DeviceClass {
    let d = &spec.devices[m];
    match (d.os, d.is_metal()) {
        (Os::Macos, true) => DeviceClass::M2,
        (Os::Macos, false) => DeviceClass::M1,
        _ => DeviceClass::M3,
    }
}

/// For one `k`, pick each device's class by minimizing the separable
/// objective over all windows summing to `W`.
///
/// Every feasible point of the program for a set assignment classifies back
/// to that assignment, so minimizing per device over both classes covers all
/// assignments at once.
fn best_sets_for_k(
    spec: &ClusterSpec,
    relay: &[bool],
    k: u32,
    kappa_delta: &[f64],
) -> Result<Option<SetAssignment>, PlanError> {
    let m4 = SetAssignment {
        relay: relay.to_vec(),
        ..SetAssignment::all_m4(spec.devices.len())
    };
    let mut over = m4.clone();
    for m in 0..spec.devices.len() {
        if !relay[m] && !slow_disk(spec, m) {
            over.class[m] = overloaded_class(spec, m);
        }
    }
    let a = build_instance(spec, &m4, k)?;
    let b = build_instance(spec, &over, k)?;
    let window = a.window as usize;
    let count = a.device_count();
    if window < count || count == 0 {
        return Ok(None);
    }

    let kf = k as f64;
    // cost[i][w] = (cost, overloaded) for device slot i holding w layers.
    let device_cost = |inst: &IlpInstance, i: usize, w: i64| {
        optimal_gpu_layers(w, &inst.limits[i], inst.b[i])
            .map(|n| kf * (inst.a[i] * w as f64 + inst.b[i] * n as f64))
    };
    let mut cost = vec![vec![None::<(f64, bool)>; window + 1]; count];
    for i in 0..count {
        let m = a.devices[i];
        for w in 1..=window {
            let c4 = device_cost(&a, i, w as i64).map(|c| (c, false));
            let co = if over.class[m] == DeviceClass::M4 {
                None
            } else {
                device_cost(&b, i, w as i64).map(|c| (c + kappa_delta[m], true))
            };
            cost[i][w] = match (c4, co) {
                (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
                (x, y) => x.or(y),
            };
        }
    }

    // f[i][s]: best cost of the first i slots using s layers.
    let mut f = vec![vec![f64::INFINITY; window + 1]; count + 1];
    let mut pick = vec![vec![0usize; window + 1]; count + 1];
    f[0][0] = 0.0;
    for i in 0..count {
        for s in 0..=window {
            if !f[i][s].is_finite() {
                continue;
            }
            for w in 1..=window - s {
                if let Some((c, _)) = cost[i][w] {
                    let v = f[i][s] + c;
                    if v < f[i + 1][s + w] {
                        f[i + 1][s + w] = v;
                        pick[i + 1][s + w] = w;
                    }
                }
            }
        }
    }
    if !f[count][window].is_finite() {
        return Ok(None);
    }
    let mut sets = m4;
    let mut s = window;
    for i in (0..count).rev() {
        let w = pick[i + 1][s];
        if cost[i][w].is_some_and(|(_, o)| o) {
            sets.class[a.devices[i]] = over.class[a.devices[i]];
        }
        s -= w;
    }
    Ok(Some(sets))
}

/// Change in κ when device `m` alone moves to its overloaded class.
fn kappa_deltas(spec: &ClusterSpec, relay: &[bool]) -> Result<Vec<f64>, PlanError> {
    let base_sets = SetAssignment {
        relay: relay.to_vec(),
        ..SetAssignment::all_m4(spec.devices.len())
    };
    let base = objective_terms(spec, &base_sets)?.kappa;
    let mut out = vec![0.0; spec.devices.len()];
    for m in 0..spec.devices.len() {
        if relay[m] || slow_disk(spec, m) {
            continue;
        }
        let mut sets = base_sets.clone();
        sets.class[m] = overloaded_class(spec, m);
        out[m] = objective_terms(spec, &sets)?.kappa - base;
    }
    Ok(out)
}

/// One pass of the set-assignment loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub sets: SetAssignment,
    /// Best objective over all k for these sets.
    pub objective: Option<f64>,
    /// Device moved into M4 at the end of the pass.
    pub forced: Option<usize>,
}

/// Iterative planner with explicit relay flags and options.
pub fn run_with(spec: &ClusterSpec, relay: &[bool], opts: HaldaOptions) -> Result<PartitionPlan, PlanError> {
    run_traced(spec, relay, opts).map(|(plan, _)| plan)
}

/// Like [`run_with`], also returning every pass of the loop.
pub fn run_traced(
    spec: &ClusterSpec,
    relay: &[bool],
    opts: HaldaOptions,
) -> Result<(PartitionPlan, Vec<Iteration>), PlanError> {
    let devices = spec.devices.len();
    if relay.len() != devices {
        return Err(ModelError::Dimension(format!(
            "expected {devices} relay flags, got {}",
            relay.len()
        ))
        .into());
    }
    let mut w = initial_windows(spec, relay)?;
    let mut n = vec![0u32; devices];
    let compute = relay.iter().filter(|&&r| !r).count();
    let cap = opts.iteration_cap.unwrap_or(4 * compute + 8);

    let mut forced = vec![false; devices];
    let mut prev: Option<Vec<DeviceClass>> = None;
    let mut best: Option<Candidate> = None;
    let mut reasons = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut trace = Vec::new();

    while iterations < cap {
        iterations += 1;
        let sets = classify_devices(spec, &w, &n, &forced, relay)?;
        if prev.as_ref() == Some(&sets.class) {
            converged = true;
            break;
        }
        prev = Some(sets.class.clone());
        log::debug!("iteration {iterations}: sets {:?}", sets.class);

        let (found, why) = sweep(spec, &sets)?;
        reasons = why;
        trace.push(Iteration {
            sets: sets.clone(),
            objective: found.as_ref().map(|c| c.objective),
            forced: None,
        });
        let Some(found) = found else {
            // Nothing feasible for any k: relieve the slowest disk and retry.
            match slowest_unforced(spec, &sets) {
                Some(m) => {
                    log::debug!("no feasible k; forcing device {m} into M4");
                    forced[m] = true;
                    trace.last_mut().expect("pushed").forced = Some(m);
                    continue;
                }
                None => {
                    converged = true;
                    break;
                }
            }
        };
        if improves(&found, &best) {
            best = Some(found.clone());
        }
        if let Some(m) = calibration_check(spec, &to_plan(spec, &found))? {
            log::debug!("calibration forces device {m} into M4");
            forced[m] = true;
            trace.last_mut().expect("pushed").forced = Some(m);
            continue;
        }
        let b = best.as_ref().expect("set above");
        w.clone_from(&b.w);
        n.clone_from(&b.n);
    }

    if opts.refine {
        let delta = kappa_deltas(spec, relay)?;
        for k in sweep_factors(spec.layers()) {
            let Some(sets) = best_sets_for_k(spec, relay, k, &delta)? else {
                continue;
            };
            let inst = build_instance(spec, &sets, k)?;
            if let IlpOutcome::Optimal(sol) = solve_with(&inst, false)? {
                let cand = Candidate {
                    sets,
                    k,
                    objective: sol.objective,
                    w: sol.w,
                    n: sol.n,
                };
                if improves(&cand, &best) {
                    log::debug!("refinement improves to {} at k={k}", cand.objective);
                    best = Some(cand);
                }
            }
        }
    }

    let Some(best) = best else {
        return Err(PlanError::Infeasible(reasons));
    };
    let plan = polish(spec, best)?;
    if !converged {
        return Err(PlanError::NonConvergence {
            iterations,
            best: Some(Box::new(plan)),
        });
    }
    Ok((plan, trace))
}

/// Re-solve the winning program for its lexicographically smallest optimum.
fn polish(spec: &ClusterSpec, c: Candidate) -> Result<PartitionPlan, PlanError> {
    let inst = build_instance(spec, &c.sets, c.k)?;
    let sol = match solve(&inst)? {
        IlpOutcome::Optimal(s) => s,
        IlpOutcome::Infeasible => {
            return Err(PlanError::Infeasible(vec!["winning program became infeasible".into()]))
        }
    };
    Ok(to_plan(
        spec,
        &Candidate {
            w: sol.w,
            n: sol.n,
            objective: sol.objective,
            ..c
        },
    ))
}

/// Drop devices that end up with a single layer, one at a time, replanning
/// after each removal. Devices listed as relays stay in the ring with no
/// layers. Stops at the first change that would raise the objective. The
/// head is never removed.
pub fn select_devices(spec: &ClusterSpec, plan: &PartitionPlan) -> Result<(ClusterSpec, PartitionPlan), PlanError> {
    let mut cur_spec = spec.clone();
    let mut cur_plan = plan.clone();
    loop {
        let relay = cur_plan.sets.relay.clone();
        let Some(m) = (1..cur_spec.devices.len()).find(|&m| !relay[m] && cur_plan.w[m] == 1) else {
            break;
        };
        let id = cur_spec.devices[m].id.clone();
        let (next_spec, next_relay) = if cur_spec.topology_relays.contains(&id) {
            let mut r = relay.clone();
            r[m] = true;
            (cur_spec.clone(), r)
        } else {
            let mut s = cur_spec.clone();
            s.devices.remove(m);
            let mut r = relay.clone();
            r.remove(m);
            (s, r)
        };
        if next_relay.iter().all(|&r| r) {
            return Err(PlanError::NoComputeDevices);
        }
        let next_plan = match run_with(&next_spec, &next_relay, HaldaOptions::default()) {
            Ok(p) => p,
            Err(PlanError::Infeasible(_)) => break,
            Err(e) => return Err(e),
        };
        if next_plan.objective > cur_plan.objective {
            log::debug!("keeping `{id}`: removal would raise the objective");
            break;
        }
        log::debug!("removed `{id}`: objective {} -> {}", cur_plan.objective, next_plan.objective);
        cur_spec = next_spec;
        cur_plan = next_plan;
    }
    Ok((cur_spec, cur_plan))
}
