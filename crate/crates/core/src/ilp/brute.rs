use crate::error::IlpError;

use super::{optimal_gpu_layers, IlpInstance, IlpOutcome, OBJECTIVE_RTOL};

pub const MAX_BRUTE_WINDOW: u32 = 24;
pub const MAX_BRUTE_DEVICES: usize = 4;

/// Enumerate every composition of `W` into positive parts, in lexicographic
/// order, with each `n` chosen in closed form. Exact by construction.
pub fn brute_force_solve(inst: &IlpInstance) -> Result<IlpOutcome, IlpError> {
    let m = inst.device_count();
    if inst.window > MAX_BRUTE_WINDOW || m > MAX_BRUTE_DEVICES {
        return Err(IlpError::TooLarge {
            window: inst.window,
            devices: m,
        });
    }
    if inst.trivially_infeasible.is_some() || m == 0 || (inst.window as usize) < m {
        return Ok(IlpOutcome::Infeasible);
    }

    let mut best: Option<(Vec<i64>, Vec<i64>, f64)> = None;
    let mut w = vec![0i64; m];
    for_each_composition(inst.window as i64, &mut w, 0, &mut |w| {
        let n: Option<Vec<i64>> = (0..m)
            .map(|i| optimal_gpu_layers(w[i], &inst.limits[i], inst.b[i]))
            .collect();
        let Some(n) = n else { return };
        let obj = inst.objective(w, &n);
        let improves = match &best {
            None => true,
            Some((_, _, b)) => obj < b - OBJECTIVE_RTOL * 0.01 * b.abs(),
        };
        if improves {
            best = Some((w.to_vec(), n, obj));
        }
    });

    Ok(match best {
        None => IlpOutcome::Infeasible,
        Some((w, n, _)) => IlpOutcome::Optimal(inst.expand(&w, &n)),
    })
}

#[cfg(test)]
/// Count of compositions of `total` into `parts` positive parts.
pub fn composition_count(total: u64, parts: u64) -> u64 {
    if parts == 0 || total < parts {
        return 0;
    }
    // C(total − 1, parts − 1)
    let (n, k) = (total - 1, parts - 1);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn for_each_composition(remaining: i64, w: &mut [i64], at: usize, f: &mut dyn FnMut(&[i64])) {
    let left = (w.len() - at) as i64;
    if left == 1 {
        w[at] = remaining;
        f(w);
        return;
    }
    for v in 1..=remaining - (left - 1) {
        w[at] = v;
        for_each_composition(remaining - v, w, at + 1, f);
    }
}

#[cfg(test)]
pub(crate) fn compositions(total: i64, parts: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut w = vec![0; parts];
    for_each_composition(total, &mut w, 0, &mut |w| out.push(w.to_vec()));
    out
}
