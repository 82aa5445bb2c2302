//! Integer program for a fixed number of rounds `k`, its exact solver and an
//! enumeration oracle.

mod branch_bound;
mod brute;
mod simplex;

pub use brute::brute_force_solve;

use crate::error::{IlpError, PlanError};
use crate::latency_model::{
    memory_bounds, objective_terms, LatencyCoefficients, Limit, MemoryBounds, SetAssignment,
};
use crate::profiles::ClusterSpec;

use branch_bound::branch_and_bound;
use simplex::Lp;

/// Relative tolerance for comparing objectives.
pub const OBJECTIVE_RTOL: f64 = 1e-9;

/// Integer bounds on one device's variables for a fixed `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceLimits {
    pub w_min: i64,
    pub w_max: i64,
    /// Bounds on CPU layers per window, `w − n`.
    pub cpu_min: i64,
    pub cpu_max: i64,
    pub gpu_max: i64,
}

/// One ILP: minimize `k·(a·w + b·n + Σc) + κ` with `Σw = W`.
///
/// Variables exist only for compute devices; relays contribute their
/// per-round communication through `c_sum`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpInstance {
    pub k: u32,
    pub window: u32,
    pub layers: u32,
    /// Cluster index of each variable's device.
    pub devices: Vec<usize>,
    pub cluster_size: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c_sum: f64,
    pub kappa: f64,
    pub limits: Vec<DeviceLimits>,
    pub gpu_mask: Vec<bool>,
    /// Set when the instance is infeasible before any search.
    pub trivially_infeasible: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlpSolution {
    /// Cluster-length vectors; relays hold zero.
    pub w: Vec<u32>,
    pub n: Vec<u32>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IlpOutcome {
    Optimal(IlpSolution),
    Infeasible,
}

impl IlpOutcome {
    pub fn solution(&self) -> Option<&IlpSolution> {
        match self {
            IlpOutcome::Optimal(s) => Some(s),
            IlpOutcome::Infeasible => None,
        }
    }
}

impl IlpInstance {
    pub fn new(
        coeffs: &LatencyCoefficients,
        bounds: &MemoryBounds,
        sets: &SetAssignment,
        layers: u32,
        k: u32,
    ) -> Result<Self, IlpError> {
        if k == 0 || !layers.is_multiple_of(k) {
            return Err(IlpError::NotADivisor { k, layers });
        }
        let window = layers / k;
        let devices = sets.compute_devices();
        let w = window as i64;
        let mut limits = vec![
            DeviceLimits {
                w_min: 1,
                w_max: w,
                cpu_min: 0,
                cpu_max: w,
                gpu_max: w,
            };
            devices.len()
        ];
        let mut trivially_infeasible = None;
        if devices.is_empty() {
            trivially_infeasible = Some("no compute devices".to_string());
        } else if (window as usize) < devices.len() {
            trivially_infeasible = Some(format!(
                "W = {window} is smaller than the {} compute devices",
                devices.len()
            ));
        }

        let slot = |m: usize| devices.iter().position(|&d| d == m);
        for row in &bounds.rows {
            let Some(i) = slot(row.device) else { continue };
            match bounds.row_limit(row, window) {
                Limit::Unbounded => {}
                Limit::Infeasible => {
                    limits[i].w_max = 0;
                    trivially_infeasible.get_or_insert_with(|| {
                        format!("device {} cannot satisfy its {:?} row", row.device, row.block)
                    });
                }
                Limit::AtMost(x) => {
                    let lim = &mut limits[i];
                    match (row.pw, row.pn) {
                        (-1, 0) => lim.w_min = lim.w_min.max(-x),
                        (-1, 1) => lim.cpu_min = lim.cpu_min.max(-x),
                        (1, 0) => lim.w_max = lim.w_max.min(x),
                        (1, -1) => lim.cpu_max = lim.cpu_max.min(x),
                        other => {
                            return Err(IlpError::Internal(format!("unexpected row mask {other:?}")))
                        }
                    }
                }
            }
        }
        for (i, &m) in devices.iter().enumerate() {
            match bounds.gpu_limit(m, window) {
                Limit::Unbounded => {}
                Limit::Infeasible => limits[i].gpu_max = -1,
                Limit::AtMost(x) => limits[i].gpu_max = limits[i].gpu_max.min(x),
            }
        }

        Ok(IlpInstance {
            k,
            window,
            layers,
            a: devices.iter().map(|&m| coeffs.a[m]).collect(),
            b: devices.iter().map(|&m| coeffs.b[m]).collect(),
            c_sum: coeffs.c.iter().sum(),
            kappa: coeffs.kappa,
            gpu_mask: devices.iter().map(|&m| bounds.has_gpu[m]).collect(),
            cluster_size: sets.len(),
            devices,
            limits,
            trivially_infeasible,
        })
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn objective(&self, w: &[i64], n: &[i64]) -> f64 {
        let mut sum = self.c_sum;
        for i in 0..self.devices.len() {
            sum += self.a[i] * w[i] as f64 + self.b[i] * n[i] as f64;
        }
        self.k as f64 * sum + self.kappa
    }

    /// Exact integer feasibility of a compact (compute-devices-only) point.
    pub fn is_feasible(&self, w: &[i64], n: &[i64]) -> bool {
        if self.trivially_infeasible.is_some() {
            return false;
        }
        let total: i64 = w.iter().sum();
        total == self.window as i64
            && self.limits.iter().enumerate().all(|(i, lim)| {
                let cpu = w[i] - n[i];
                w[i] >= 1
                    && w[i] >= lim.w_min
                    && w[i] <= lim.w_max
                    && n[i] >= 0
                    && n[i] <= lim.gpu_max
                    && cpu >= lim.cpu_min.max(0)
                    && cpu <= lim.cpu_max
            })
    }

    fn tolerance(&self, objective: f64) -> f64 {
        OBJECTIVE_RTOL * 0.1 * objective.abs().max(f64::MIN_POSITIVE)
    }

    fn expand(&self, w: &[i64], n: &[i64]) -> IlpSolution {
        let mut fw = vec![0; self.cluster_size];
        let mut fne = vec![0; self.cluster_size];
        for (i, &m) in self.devices.iter().enumerate() {
            fw[m] = w[i] as u32;
            fne[m] = n[i] as u32;
        }
        IlpSolution {
            w: fw,
            n: fne,
            objective: self.objective(w, n),
        }
    }

    fn base_lp(&self) -> Option<Lp> {
        let m = self.devices.len();
        let wf = self.window as f64;
        let mut lp = Lp {
            a: Vec::with_capacity(m + 1),
            row_lo: Vec::with_capacity(m + 1),
            row_hi: Vec::with_capacity(m + 1),
            cost: Vec::with_capacity(2 * m),
            lo: Vec::with_capacity(2 * m),
            hi: Vec::with_capacity(2 * m),
        };
        let k = self.k as f64;
        for (i, lim) in self.limits.iter().enumerate() {
            lp.cost.push(k * self.a[i]);
            lp.lo.push(lim.w_min.max(1) as f64);
            lp.hi.push((lim.w_max as f64).min(wf));
        }
        for (i, lim) in self.limits.iter().enumerate() {
            lp.cost.push(k * self.b[i]);
            lp.lo.push(0.0);
            lp.hi.push((lim.gpu_max as f64).min(wf));
        }
        let mut sum_row = vec![0.0; 2 * m];
        sum_row[..m].fill(1.0);
        lp.a.push(sum_row);
        lp.row_lo.push(wf);
        lp.row_hi.push(wf);
        for (i, lim) in self.limits.iter().enumerate() {
            let mut row = vec![0.0; 2 * m];
            row[i] = 1.0;
            row[m + i] = -1.0;
            lp.a.push(row);
            lp.row_lo.push(lim.cpu_min.max(0) as f64);
            lp.row_hi.push((lim.cpu_max as f64).min(wf));
        }
        let empty = (0..2 * m).any(|j| lp.lo[j] > lp.hi[j])
            || (0..=m).any(|r| lp.row_lo[r] > lp.row_hi[r]);
        (!empty).then_some(lp)
    }

    fn split(&self, point: &[i64]) -> (Vec<i64>, Vec<i64>) {
        let m = self.devices.len();
        (point[..m].to_vec(), point[m..].to_vec())
    }
}

/// Closed-form best `n` for a fixed `w`: each `n` only affects `b·n` and
/// its own interval, so take the upper end when `b < 0` and the lower end
/// otherwise. `None` when the interval is empty or `w` is out of range.
pub fn optimal_gpu_layers(w: i64, limits: &DeviceLimits, b: f64) -> Option<i64> {
    if w < 1 || w < limits.w_min || w > limits.w_max {
        return None;
    }
    let lo = 0.max(w - limits.cpu_max);
    let hi = w.min(limits.gpu_max).min(w - limits.cpu_min.max(0));
    if lo > hi {
        return None;
    }
    Some(if b < 0.0 { hi } else { lo })
}

/// Coefficients, bounds and instance for one set assignment and `k`.
pub fn build_instance(spec: &ClusterSpec, sets: &SetAssignment, k: u32) -> Result<IlpInstance, PlanError> {
    let coeffs = objective_terms(spec, sets)?;
    let bounds = memory_bounds(spec, sets);
    Ok(IlpInstance::new(&coeffs, &bounds, sets, spec.layers(), k)?)
}

/// Provably optimal integer solution, lexicographically smallest `(w, n)`
/// among optima.
pub fn solve(inst: &IlpInstance) -> Result<IlpOutcome, IlpError> {
    solve_with(inst, true)
}

/// Like [`solve`]; without `polish` any optimal point may be returned.
pub fn solve_with(inst: &IlpInstance, polish: bool) -> Result<IlpOutcome, IlpError> {
    if inst.trivially_infeasible.is_some() {
        return Ok(IlpOutcome::Infeasible);
    }
    let Some(lp) = inst.base_lp() else {
        return Ok(IlpOutcome::Infeasible);
    };
    let offset = inst.k as f64 * inst.c_sum + inst.kappa;
    let verify = |p: &[i64]| {
        let (w, n) = inst.split(p);
        inst.is_feasible(&w, &n).then(|| inst.objective(&w, &n))
    };
    // Rough scale for the pruning tolerance before an incumbent exists.
    let scale = offset.abs() + inst.a.iter().map(|a| a.abs()).sum::<f64>() * inst.layers as f64;
    let Some((point, best)) = branch_and_bound(&lp, offset, inst.tolerance(scale), &verify)? else {
        return Ok(IlpOutcome::Infeasible);
    };
    let (w, n) = inst.split(&point);
    if !polish {
        return Ok(IlpOutcome::Optimal(inst.expand(&w, &n)));
    }
    let (w, n) = polish_lex(inst, &lp, offset, best, w)?;
    Ok(IlpOutcome::Optimal(inst.expand(&w, &n)))
}

/// Fix `w` one device at a time to its smallest value that keeps the
/// objective within tolerance of `best`, then choose each `n` in closed form.
fn polish_lex(
    inst: &IlpInstance,
    base: &Lp,
    offset: f64,
    best: f64,
    mut w: Vec<i64>,
) -> Result<(Vec<i64>, Vec<i64>), IlpError> {
    let m = inst.devices.len();
    let tol = inst.tolerance(best);
    let mut lp = base.clone();
    lp.a.push(lp.cost.clone());
    lp.row_lo.push(f64::NEG_INFINITY);
    lp.row_hi.push(best - offset + tol);

    for i in 0..m.saturating_sub(1) {
        if w[i] as f64 > lp.lo[i] {
            lp.cost = vec![0.0; 2 * m];
            lp.cost[i] = 1.0;
            let verify = |p: &[i64]| {
                let (pw, pn) = inst.split(p);
                (inst.is_feasible(&pw, &pn) && inst.objective(&pw, &pn) <= best + 2.0 * tol)
                    .then_some(p[i] as f64)
            };
            if let Some((p, _)) = branch_and_bound(&lp, 0.0, 0.5, &verify)? {
                w = p[..m].to_vec();
            }
        }
        lp.lo[i] = w[i] as f64;
        lp.hi[i] = w[i] as f64;
    }

    let n: Option<Vec<i64>> = (0..m)
        .map(|i| optimal_gpu_layers(w[i], &inst.limits[i], inst.b[i]))
        .collect();
    let n = n.ok_or_else(|| IlpError::Internal("polished windows lost feasibility".into()))?;
    if !inst.is_feasible(&w, &n) || inst.objective(&w, &n) > best + 2.0 * tol {
        return Err(IlpError::Internal("polished point is not optimal".into()));
    }
    Ok((w, n))
}
