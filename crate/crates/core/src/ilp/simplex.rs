//! Dense bounded-variable primal simplex with Bland's rule.
//!
//! Solves `min c·x` subject to `row_lo ≤ A·x ≤ row_hi` and `lo ≤ x ≤ hi`.
//! Each row gets a slack `s = A·x` carrying the row bounds; phase one drives
//! one artificial per row to zero.

use crate::error::IlpError;

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone)]
pub(crate) struct Lp {
    pub a: Vec<Vec<f64>>,
    pub row_lo: Vec<f64>,
    pub row_hi: Vec<f64>,
    pub cost: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpStatus {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn run(&mut self, cost: &[f64], opt_tol: f64) -> Result<Phase, IlpError> {
        let rows = self.t.len();
        let cols = self.x.len();
        let mut d = vec![0.0; cols];
        for _ in 0..MAX_ITERATIONS {
            // Reduced costs d = c − c_B·T.
            d.copy_from_slice(cost);
            for i in 0..rows {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    for (dj, tij) in d.iter_mut().zip(&self.t[i]) {
                        *dj -= cb * tij;
                    }
                }
            }

            let entering = (0..cols).find_map(|j| {
                if self.is_basic[j] || self.hi[j] - self.lo[j] <= 0.0 {
                    return None;
                }
                if d[j] < -opt_tol && self.x[j] < self.hi[j] {
                    Some((j, 1.0))
                } else if d[j] > opt_tol && self.x[j] > self.lo[j] {
                    Some((j, -1.0))
                } else {
                    None
                }
            });
            let Some((j, dir)) = entering else {
                return Ok(Phase::Optimal);
            };

            // Nonbasic variables may rest strictly inside their range.
            let mut step = if dir > 0.0 {
                self.hi[j] - self.x[j]
            } else {
                self.x[j] - self.lo[j]
            };
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..rows {
                let alpha = self.t[i][j] * dir;
                let bi = self.basis[i];
                let (limit, to_lower) = if alpha > PIVOT_TOL {
                    if self.lo[bi] == f64::NEG_INFINITY {
                        continue;
                    }
                    ((self.x[bi] - self.lo[bi]) / alpha, true)
                } else if alpha < -PIVOT_TOL {
                    if self.hi[bi] == f64::INFINITY {
                        continue;
                    }
                    ((self.hi[bi] - self.x[bi]) / -alpha, false)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < step,
                    Some((r, _)) => limit < step || (limit == step && bi < self.basis[r]),
                };
                if better {
                    step = limit;
                    leave = Some((i, to_lower));
                }
            }
            if step == f64::INFINITY {
                return Ok(Phase::Unbounded);
            }

            self.x[j] += dir * step;
            for i in 0..rows {
                let bi = self.basis[i];
                self.x[bi] -= self.t[i][j] * dir * step;
            }
            match leave {
                None => {
                    // Bound flip: snap exactly onto the opposite bound.
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some((r, to_lower)) => {
                    let out = self.basis[r];
                    self.x[out] = if to_lower { self.lo[out] } else { self.hi[out] };
                    self.pivot(r, j);
                }
            }
        }
        Err(IlpError::Internal("simplex iteration limit reached".into()))
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.t[r][j];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[j];
            if f != 0.0 {
                for (v, pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                row[j] = 0.0;
            }
        }
        let out = self.basis[r];
        self.is_basic[out] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }
}

fn resting_value(lo: f64, hi: f64, want: f64) -> f64 {
    if lo.is_finite() || hi.is_finite() {
        want.clamp(lo, hi)
    } else {
        0.0
    }
}

pub(crate) fn solve_lp(lp: &Lp) -> Result<LpStatus, IlpError> {
    let n = lp.cost.len();
    let m = lp.a.len();
    if (0..n).any(|j| lp.lo[j] > lp.hi[j]) || (0..m).any(|i| lp.row_lo[i] > lp.row_hi[i]) {
        return Ok(LpStatus::Infeasible);
    }
    let cols = n + 2 * m;

    let mut x = vec![0.0; cols];
    let mut lo = vec![0.0; cols];
    let mut hi = vec![f64::INFINITY; cols];
    for j in 0..n {
        lo[j] = lp.lo[j];
        hi[j] = lp.hi[j];
        x[j] = if lo[j].is_finite() {
            lo[j]
        } else if hi[j].is_finite() {
            hi[j]
        } else {
            0.0
        };
    }

    let mut t = vec![vec![0.0; cols]; m];
    let mut basis = Vec::with_capacity(m);
    for i in 0..m {
        let ax: f64 = (0..n).map(|j| lp.a[i][j] * x[j]).sum();
        let s = n + i;
        lo[s] = lp.row_lo[i];
        hi[s] = lp.row_hi[i];
        x[s] = resting_value(lo[s], hi[s], ax);
        let r = ax - x[s];
        let sigma = if r > 0.0 { -1.0 } else { 1.0 };
        let art = n + m + i;
        x[art] = r.abs();
        // Row i of B⁻¹·[A | −I | diag(σ)] with B = diag(σ).
        for j in 0..n {
            t[i][j] = lp.a[i][j] / sigma;
        }
        t[i][s] = -1.0 / sigma;
        t[i][art] = 1.0;
        basis.push(art);
    }
    let mut is_basic = vec![false; cols];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau { t, basis, is_basic, x, lo, hi };

    let mut phase1 = vec![0.0; cols];
    for c in phase1.iter_mut().skip(n + m) {
        *c = 1.0;
    }
    tab.run(&phase1, 1e-12)?;
    let infeas: f64 = (n + m..cols).map(|j| tab.x[j]).sum();
    if infeas > FEAS_TOL {
        return Ok(LpStatus::Infeasible);
    }
    for j in n + m..cols {
        tab.hi[j] = 0.0;
        if !tab.is_basic[j] {
            tab.x[j] = 0.0;
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.cost);
    let scale = lp.cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs())).max(1e-300);
    match tab.run(&cost, 1e-12 * scale)? {
        Phase::Unbounded => Ok(LpStatus::Unbounded),
        Phase::Optimal => {
            let x: Vec<f64> = tab.x[..n].to_vec();
            let value = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
            Ok(LpStatus::Optimal { x, value })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(s: LpStatus) -> (Vec<f64>, f64) {
        match s {
            LpStatus::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_max() {
        // max x + 2y, x + y ≤ 4, 2x + y ≥ 2, 0 ≤ y ≤ 3, x ≥ 0.
        let lp = Lp {
            a: vec![vec![1.0, 1.0], vec![2.0, 1.0]],
            row_lo: vec![f64::NEG_INFINITY, 2.0],
            row_hi: vec![4.0, f64::INFINITY],
            cost: vec![-1.0, -2.0],
            lo: vec![0.0, 0.0],
            hi: vec![f64::INFINITY, 3.0],
        };
        let (x, v) = optimal(solve_lp(&lp).unwrap());
        assert!((v + 7.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_infeasible() {
        let mut lp = Lp {
            a: vec![vec![1.0, 1.0, 1.0]],
            row_lo: vec![6.0],
            row_hi: vec![6.0],
            cost: vec![3.0, 1.0, 2.0],
            lo: vec![1.0, 1.0, 1.0],
            hi: vec![6.0, 3.0, 6.0],
        };
        let (x, v) = optimal(solve_lp(&lp).unwrap());
        assert_eq!(x.iter().map(|v| v.round() as i64).collect::<Vec<_>>(), vec![1, 3, 2]);
        assert!((v - 10.0).abs() < 1e-9);
        lp.row_lo = vec![20.0];
        lp.row_hi = vec![20.0];
        assert_eq!(solve_lp(&lp).unwrap(), LpStatus::Infeasible);
    }

    #[test]
    fn unbounded() {
        let lp = Lp {
            a: vec![vec![1.0, -1.0]],
            row_lo: vec![0.0],
            row_hi: vec![0.0],
            cost: vec![-1.0, 0.0],
            lo: vec![0.0, 0.0],
            hi: vec![f64::INFINITY, f64::INFINITY],
        };
        assert_eq!(solve_lp(&lp).unwrap(), LpStatus::Unbounded);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's cycling instance; Bland's rule must terminate.
        let lp = Lp {
            a: vec![
                vec![0.25, -60.0, -0.04, 9.0],
                vec![0.5, -90.0, -0.02, 3.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            row_lo: vec![f64::NEG_INFINITY; 3],
            row_hi: vec![0.0, 0.0, 1.0],
            cost: vec![-0.75, 150.0, -0.02, 6.0],
            lo: vec![0.0; 4],
            hi: vec![f64::INFINITY; 4],
        };
        let (_, v) = optimal(solve_lp(&lp).unwrap());
        assert!((v + 0.05).abs() < 1e-9, "{v}");
    }
}
