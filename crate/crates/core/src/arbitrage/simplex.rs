//! Dense primal simplex for `max c'x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The origin is always feasible for the problems built here, so no phase
//! one is needed. Dantzig pricing, switching to Bland's rule after a run of
//! degenerate pivots.

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const MAX_DEGENERATE: usize = 50;

#[derive(Debug, Clone)]
pub(crate) struct DenseLp {
    pub n_vars: usize,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    #[allow(dead_code)]
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpFailure {
    Unbounded,
    IterationLimit,
    Infeasible,
}

impl DenseLp {
    pub fn new(n_vars: usize, cost: Vec<f64>) -> Self {
        Self {
            n_vars,
            rows: Vec::new(),
            rhs: Vec::new(),
            cost,
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n_vars);
        self.rows.push(coeffs);
        self.rhs.push(rhs);
    }

    pub fn solve(&self) -> Result<LpSolution, LpFailure> {
        let m = self.rows.len();
        let n = self.n_vars;
        let width = n + m + 1;
        let mut tab = vec![0.0; (m + 1) * width];
        for (i, row) in self.rows.iter().enumerate() {
            let r = &mut tab[i * width..(i + 1) * width];
            r[..n].copy_from_slice(row);
            r[n + i] = 1.0;
            let b = self.rhs[i];
            if b < -1e-9 {
                return Err(LpFailure::Infeasible);
            }
            r[width - 1] = b.max(0.0);
        }
        // objective row holds reduced costs c_j - z_j and -objective in the last column
        {
            let r = &mut tab[m * width..];
            r[..n].copy_from_slice(&self.cost);
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let max_iter = 50 * (n + m) + 1000;
        let mut degenerate = 0;
        let mut pivots = 0;
        loop {
            if pivots > max_iter {
                return Err(LpFailure::IterationLimit);
            }
            let obj = &tab[m * width..(m + 1) * width - 1];
            let entering = if degenerate >= MAX_DEGENERATE {
                obj.iter().position(|&d| d > COST_TOL)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for (j, &d) in obj.iter().enumerate() {
                    if d > COST_TOL && best.is_none_or(|(_, bd)| d > bd) {
                        best = Some((j, d));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(col) = entering else { break };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = tab[i * width + col];
                if a > PIVOT_TOL {
                    let ratio = tab[i * width + width - 1] / a;
                    match leave {
                        Some((li, lr)) if ratio > lr + 1e-12 || (ratio >= lr - 1e-12 && basis[i] >= basis[li]) => {}
                        _ => leave = Some((i, ratio)),
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(LpFailure::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            pivot(&mut tab, width, m, row, col);
            basis[row] = col;
            pivots += 1;
        }

        let mut x = vec![0.0; n];
        for (i, &bv) in basis.iter().enumerate() {
            if bv < n {
                x[bv] = tab[i * width + width - 1].max(0.0);
            }
        }
        let objective = x.iter().zip(&self.cost).map(|(a, c)| a * c).sum();
        Ok(LpSolution { x, objective, pivots })
    }
}

fn pivot(tab: &mut [f64], width: usize, m: usize, row: usize, col: usize) {
    let p = tab[row * width + col];
    for v in &mut tab[row * width..(row + 1) * width] {
        *v /= p;
    }
    let pivot_row: Vec<f64> = tab[row * width..(row + 1) * width].to_vec();
    for i in 0..=m {
        if i == row {
            continue;
        }
        let f = tab[i * width + col];
        if f == 0.0 {
            continue;
        }
        let r = &mut tab[i * width..(i + 1) * width];
        for (v, pv) in r.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
        r[col] = 0.0;
    }
}
