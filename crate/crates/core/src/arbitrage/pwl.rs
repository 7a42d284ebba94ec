//! Exact dynamic programming over stored energy.
//!
//! The arbitrage problem has a single continuous state (stored energy) and,
//! once the charge/discharge exclusivity is honored, the reward of a period
//! depends only on the energy change `d`: `-price * d / eta_ch` when charging
//! and `-price * eta_dis * d` when discharging. The value-to-go of every
//! period is therefore a continuous piecewise-linear function of energy, and
//! the Bellman backup of such a function can be computed exactly: for a fixed
//! start energy the integrand is piecewise linear in the end energy, so its
//! maximum over the reachable window sits at a breakpoint of the value
//! function, at the start energy itself (idle) or at a window end.

use crate::ess::EssParams;

/// Breakpoints closer than this are merged.
const X_EPS: f64 = 1e-11;

/// Continuous piecewise-linear function on `[xs[0], xs[n-1]]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pwl {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Pwl {
    fn constant(lo: f64, hi: f64, y: f64) -> Self {
        Self {
            xs: vec![lo, hi],
            ys: vec![y, y],
        }
    }

    fn lo(&self) -> f64 {
        self.xs[0]
    }

    fn hi(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        let w = x1 - x0;
        if w <= 0.0 {
            return y0.max(y1);
        }
        y0 + (y1 - y0) * ((x - x0) / w)
    }

    /// Drops near-duplicate abscissae and interior points that lie on the
    /// segment joining their neighbours.
    fn simplify(&mut self) {
        let mut xs: Vec<f64> = Vec::with_capacity(self.xs.len());
        let mut ys: Vec<f64> = Vec::with_capacity(self.ys.len());
        for (&x, &y) in self.xs.iter().zip(&self.ys) {
            if let Some(&last) = xs.last() {
                if x - last <= X_EPS {
                    let ly = ys.last_mut().unwrap();
                    *ly = ly.max(y);
                    continue;
                }
            }
            xs.push(x);
            ys.push(y);
        }
        let mut out_x: Vec<f64> = Vec::with_capacity(xs.len());
        let mut out_y: Vec<f64> = Vec::with_capacity(ys.len());
        for i in 0..xs.len() {
            if i > 0 && i + 1 < xs.len() {
                let (x0, y0) = (*out_x.last().unwrap(), *out_y.last().unwrap());
                let (x2, y2) = (xs[i + 1], ys[i + 1]);
                let interp = y0 + (y2 - y0) * ((xs[i] - x0) / (x2 - x0));
                let scale = 1.0 + y0.abs().max(ys[i].abs()).max(y2.abs());
                if (interp - ys[i]).abs() <= 1e-13 * scale {
                    continue;
                }
            }
            out_x.push(xs[i]);
            out_y.push(ys[i]);
        }
        self.xs = out_x;
        self.ys = out_y;
    }
}

/// One period's transition data.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stage {
    pub price: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    /// Largest energy gain in the period.
    pub gain: f64,
    /// Largest energy loss in the period.
    pub loss: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Stage {
    pub fn new(price: f64, p: &EssParams) -> Self {
        Self {
            price,
            eta_ch: p.eta_ch,
            eta_dis: p.eta_dis,
            gain: p.max_energy_gain(),
            loss: p.max_energy_loss(),
            lo: p.e_min,
            hi: p.e_max,
        }
    }

    /// Reward of changing stored energy by `delta` in this period.
    pub fn reward(&self, delta: f64) -> f64 {
        if delta >= 0.0 {
            -self.price * delta / self.eta_ch
        } else {
            -self.price * self.eta_dis * delta
        }
    }

    /// Reachable end energies from `e`.
    pub fn window(&self, e: f64) -> (f64, f64) {
        ((e - self.loss).max(self.lo), (e + self.gain).min(self.hi))
    }

    /// Bellman backup: value before this period given value after it.
    pub fn backup(&self, next: &Pwl) -> Pwl {
        let (lo, hi) = (self.lo, self.hi);
        let mut cands: Vec<Pwl> = Vec::with_capacity(next.xs.len() + 3);
        cands.push(next.clone());

        // end the period exactly at a breakpoint b of the next value function
        for (&b, &vb) in next.xs.iter().zip(&next.ys) {
            let dl = (b - self.gain).max(lo);
            let dr = (b + self.loss).min(hi);
            if dr - dl <= X_EPS {
                continue;
            }
            let mut xs = vec![dl];
            if b - dl > X_EPS && dr - b > X_EPS {
                xs.push(b);
            }
            xs.push(dr);
            let ys = xs.iter().map(|&e| vb + self.reward(b - e)).collect();
            cands.push(Pwl { xs, ys });
        }

        // charge at full power
        if hi - self.gain - lo > X_EPS {
            let r = self.reward(self.gain);
            let mut xs = vec![lo];
            let mut ys = vec![next.eval(lo + self.gain) + r];
            for (&x, &y) in next.xs.iter().zip(&next.ys) {
                let e = x - self.gain;
                if e > lo + X_EPS && e < hi - self.gain - X_EPS {
                    xs.push(e);
                    ys.push(y + r);
                }
            }
            xs.push(hi - self.gain);
            ys.push(next.eval(hi) + r);
            cands.push(Pwl { xs, ys });
        }

        // discharge at full power
        if hi - (lo + self.loss) > X_EPS {
            let r = self.reward(-self.loss);
            let mut xs = vec![lo + self.loss];
            let mut ys = vec![next.eval(lo) + r];
            for (&x, &y) in next.xs.iter().zip(&next.ys) {
                let e = x + self.loss;
                if e > lo + self.loss + X_EPS && e < hi - X_EPS {
                    xs.push(e);
                    ys.push(y + r);
                }
            }
            xs.push(hi);
            ys.push(next.eval(hi - self.loss) + r);
            cands.push(Pwl { xs, ys });
        }

        let mut env = upper_envelope(&cands, lo, hi);
        env.simplify();
        env
    }
}

/// Upper envelope of partial piecewise-linear functions over `[lo, hi]`.
fn upper_envelope(cands: &[Pwl], lo: f64, hi: f64) -> Pwl {
    let mut crit: Vec<f64> = cands.iter().flat_map(|c| c.xs.iter().copied()).collect();
    crit.push(lo);
    crit.push(hi);
    crit.retain(|&x| x >= lo && x <= hi);
    crit.sort_by(f64::total_cmp);
    crit.dedup_by(|b, a| *b - *a <= X_EPS);
    let n = crit.len();

    // values of each candidate at the critical points inside its domain
    // (walking both sorted lists), NaN outside
    let mut vals = vec![f64::NAN; cands.len() * n];
    for (ci, c) in cands.iter().enumerate() {
        let row = &mut vals[ci * n..(ci + 1) * n];
        let (dl, dr) = (c.lo(), c.hi());
        let mut j = 0;
        for (k, &x) in crit.iter().enumerate() {
            if x < dl - X_EPS || x > dr + X_EPS {
                continue;
            }
            while j + 1 < c.xs.len() && c.xs[j + 1] < x {
                j += 1;
            }
            row[k] = if j + 1 >= c.xs.len() {
                c.ys[j]
            } else {
                let (x0, x1) = (c.xs[j], c.xs[j + 1]);
                let w = x1 - x0;
                if x <= x0 {
                    c.ys[j]
                } else if x >= x1 || w <= 0.0 {
                    c.ys[j + 1]
                } else {
                    c.ys[j] + (c.ys[j + 1] - c.ys[j]) * ((x - x0) / w)
                }
            };
        }
    }

    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(2 * n);
    let mut lines: Vec<(f64, f64)> = Vec::with_capacity(cands.len());
    for k in 0..n.saturating_sub(1) {
        let (a, b) = (crit[k], crit[k + 1]);
        lines.clear();
        for ci in 0..cands.len() {
            let ya = vals[ci * n + k];
            let yb = vals[ci * n + k + 1];
            if ya.is_nan() || yb.is_nan() {
                continue;
            }
            lines.push((ya, yb - ya));
        }
        if lines.is_empty() {
            // cannot happen for a continuous value function; keep the grid
            continue;
        }
        envelope_segment(&lines, a, b, &mut xs, &mut ys);
    }
    if xs.is_empty() {
        return Pwl::constant(lo, hi, f64::NEG_INFINITY);
    }
    Pwl { xs, ys }
}

/// Appends the upper envelope of lines `y(s) = y0 + slope * s`, `s in [0,1]`
/// mapped onto `[a, b]`.
fn envelope_segment(lines: &[(f64, f64)], a: f64, b: f64, xs: &mut Vec<f64>, ys: &mut Vec<f64>) {
    let mut cur = 0;
    for (i, &(y0, m)) in lines.iter().enumerate() {
        let (cy, cm) = lines[cur];
        if y0 > cy || (y0 == cy && m > cm) {
            cur = i;
        }
    }
    let mut s = 0.0;
    push_point(xs, ys, a, lines[cur].0);
    loop {
        let (cy, cm) = lines[cur];
        let mut best: Option<(f64, usize)> = None;
        for (i, &(y0, m)) in lines.iter().enumerate() {
            if m <= cm {
                continue;
            }
            let si = (cy - y0) / (m - cm);
            if si < s || si >= 1.0 {
                continue;
            }
            match best {
                Some((bs, bi)) if si > bs || (si == bs && m <= lines[bi].1) => {}
                _ => best = Some((si, i)),
            }
        }
        match best {
            Some((si, i)) => {
                if si > s {
                    push_point(xs, ys, a + (b - a) * si, cy + cm * si);
                }
                s = si;
                cur = i;
            }
            None => break,
        }
    }
    let (cy, cm) = lines[cur];
    push_point(xs, ys, b, cy + cm);
}

fn push_point(xs: &mut Vec<f64>, ys: &mut Vec<f64>, x: f64, y: f64) {
    if let Some(&last) = xs.last() {
        if x - last <= X_EPS {
            let ly = ys.last_mut().unwrap();
            *ly = ly.max(y);
            return;
        }
    }
    xs.push(x);
    ys.push(y);
}

/// Value-to-go functions for every period: `values[t]` is the optimal
/// benefit collected from period `t` onwards as a function of the energy
/// stored at its start; `values[T]` is identically zero.
pub(crate) fn value_functions(prices: &[f64], p: &EssParams) -> Vec<Pwl> {
    let t_len = prices.len();
    let mut values = vec![Pwl::constant(p.e_min, p.e_max, 0.0); t_len + 1];
    for t in (0..t_len).rev() {
        let stage = Stage::new(prices[t], p);
        values[t] = stage.backup(&values[t + 1]);
    }
    values
}

/// Forward pass picking an optimal end energy for every period. Among
/// optimal moves the smallest `(p_ch, p_dis)` pair wins: idle first, then the
/// shallowest discharge, then the shallowest charge.
pub(crate) fn trajectory(prices: &[f64], p: &EssParams, values: &[Pwl]) -> Vec<f64> {
    let mut e = p.e_init;
    let mut path = Vec::with_capacity(prices.len());
    for (t, &price) in prices.iter().enumerate() {
        let stage = Stage::new(price, p);
        let next = &values[t + 1];
        let (wl, wr) = stage.window(e);
        let mut cands: Vec<f64> = vec![e, wl, wr];
        cands.extend(next.xs.iter().copied().filter(|&x| x > wl && x < wr));
        let score = |x: f64| stage.reward(x - e) + next.eval(x);
        let best = cands.iter().map(|&x| score(x)).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-11 * (1.0 + best.abs());
        let rank = |x: f64| -> (u8, f64) {
            let d = x - e;
            if d.abs() <= 1e-13 {
                (0, 0.0)
            } else if d < 0.0 {
                (1, -d)
            } else {
                (2, d)
            }
        };
        let chosen = cands
            .iter()
            .copied()
            .filter(|&x| score(x) >= best - tol)
            .min_by(|&a, &b| {
                let (ra, da) = rank(a);
                let (rb, db) = rank(b);
                ra.cmp(&rb).then(da.total_cmp(&db))
            })
            .unwrap_or(e);
        e = if (chosen - e).abs() <= 1e-13 { e } else { chosen };
        path.push(e);
    }
    path
}
