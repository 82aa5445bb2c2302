//! Depth-first branch and bound over LP relaxations. All variables are
//! integer.

use crate::error::IlpError;

use super::simplex::{solve_lp, Lp, LpStatus};

const INTEGRALITY_TOL: f64 = 1e-6;
const MAX_NODES: usize = 200_000;

/// Best integer point found and its verified objective.
pub(crate) type Incumbent = (Vec<i64>, f64);

/// Minimize `lp` over integers.
///
/// `offset` is added to LP values before comparing with incumbents, and
/// `verify` maps a rounded point to its exact objective or rejects it.
/// Nodes whose bound is within `tol` of the incumbent are pruned.
pub(crate) fn branch_and_bound(
    lp: &Lp,
    offset: f64,
    tol: f64,
    verify: &dyn Fn(&[i64]) -> Option<f64>,
) -> Result<Option<Incumbent>, IlpError> {
    let mut best: Option<Incumbent> = None;
    let mut stack = vec![(lp.lo.clone(), lp.hi.clone())];
    let mut node = lp.clone();
    let mut visited = 0usize;

    while let Some((lo, hi)) = stack.pop() {
        visited += 1;
        if visited > MAX_NODES {
            return Err(IlpError::Internal("branch-and-bound node limit reached".into()));
        }
        node.lo = lo;
        node.hi = hi;
        let (x, value) = match solve_lp(&node)? {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Err(IlpError::Internal("relaxation is unbounded".into()))
            }
            LpStatus::Optimal { x, value } => (x, value + offset),
        };
        if let Some((_, inc)) = &best {
            if value >= inc - tol {
                continue;
            }
        }

        let mut branch: Option<(usize, f64)> = None;
        for (j, &v) in x.iter().enumerate() {
            let frac = v - v.floor();
            let dist = frac.min(1.0 - frac);
            if dist > INTEGRALITY_TOL && branch.is_none_or(|(_, d)| dist > d) {
                branch = Some((j, dist));
            }
        }

        match branch {
            None => {
                let point: Vec<i64> = x.iter().map(|v| v.round() as i64).collect();
                let Some(obj) = verify(&point) else {
                    log::debug!("rounded relaxation optimum {point:?} rejected");
                    continue;
                };
                if best.as_ref().is_none_or(|(_, inc)| obj < inc - tol) {
                    best = Some((point, obj));
                }
            }
            Some((j, _)) => {
                let f = x[j].floor();
                let mut up = (node.lo.clone(), node.hi.clone());
                up.0[j] = f + 1.0;
                let mut down = (node.lo.clone(), node.hi.clone());
                down.1[j] = f;
                stack.push(up);
                stack.push(down);
            }
        }
    }
    Ok(best)
}
