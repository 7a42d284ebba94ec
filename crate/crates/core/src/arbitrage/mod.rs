//! Exact storage arbitrage: maximize `sum_t price_t * p_net_t * dt` subject
//! to the energy recursion, energy and power bounds, and mutually exclusive
//! charging/discharging.
//!
//! [`solve_arbitrage`] runs an exact dynamic program over stored energy and
//! reports the bound of the big-M LP relaxation next to it.
//! [`solve_branch_and_bound`] solves the same MILP by branch-and-bound over
//! that relaxation and is kept for cross-checking on short horizons.
//! [`brute_force_arbitrage`] enumerates a power grid and serves as an
//! independent oracle.

mod brute;
mod pwl;
mod simplex;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ess::{EssParams, PriceCurve, Schedule};

pub use brute::{brute_force_arbitrage, BRUTE_FORCE_MAX_PERIODS};
use simplex::DenseLp;

/// Powers below this are treated as zero when snapping solver output.
const POWER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub schedule: Schedule,
    /// Benefit of `schedule` under the price it was solved for.
    pub objective: f64,
    /// Objective of the relaxation with continuous state indicators.
    pub lp_bound: f64,
    /// Search effort: branch-and-bound nodes, value-function pieces for the
    /// dynamic program, or enumerated states for the brute-force oracle.
    pub node_count: usize,
}

/// Optimal schedule and its benefit, without the relaxation bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub schedule: Schedule,
    pub objective: f64,
}

/// `sum_t price_t * p_net_t * dt`.
pub fn benefit_of(s: &Schedule, price: &PriceCurve, p: &EssParams) -> Result<f64> {
    check_len("price curve", s.p_net.len(), price.len())?;
    Ok(price
        .values()
        .iter()
        .zip(&s.p_net)
        .map(|(l, pn)| l * pn * p.delta_t)
        .sum())
}

fn check_inputs(price: &PriceCurve, p: &EssParams) -> Result<()> {
    p.check()?;
    check_len("price curve", p.t_periods, price.len())
}

/// Optimal schedule via the exact energy dynamic program.
pub fn optimal_decision(price: &PriceCurve, p: &EssParams) -> Result<Decision> {
    check_inputs(price, p)?;
    Ok(decide(price, p).0)
}

fn decide(price: &PriceCurve, p: &EssParams) -> (Decision, usize) {
    let prices = price.values();
    let values = pwl::value_functions(prices, p);
    let path = pwl::trajectory(prices, p, &values);
    let pieces = values.iter().map(|v| v.xs.len()).sum();

    let mut p_ch = vec![0.0; prices.len()];
    let mut p_dis = vec![0.0; prices.len()];
    let mut prev = p.e_init;
    for (t, &e) in path.iter().enumerate() {
        let delta = e - prev;
        if delta > 0.0 {
            p_ch[t] = (delta / (p.eta_ch * p.delta_t)).min(p.p_ch_max);
        } else if delta < 0.0 {
            p_dis[t] = (-delta * p.eta_dis / p.delta_t).min(p.p_dis_max);
        }
        prev = e;
    }
    let schedule = Schedule::from_powers(p_ch, p_dis, p).expect("lengths match by construction");
    let objective = benefit_of(&schedule, price, p).expect("lengths match by construction");
    (Decision { schedule, objective }, pieces)
}

/// Provably optimal schedule plus the LP relaxation bound.
pub fn solve_arbitrage(price: &PriceCurve, p: &EssParams) -> Result<SolveOutcome> {
    check_inputs(price, p)?;
    let (decision, pieces) = decide(price, p);
    let lp = relaxation(price, p, &[]).solve().map_err(|e| Error::Solver {
        node: 0,
        reason: format!("{e:?}"),
    })?;
    Ok(SolveOutcome {
        schedule: decision.schedule,
        objective: decision.objective,
        lp_bound: lp.objective,
        node_count: pieces,
    })
}

/// `c*(price)`.
pub fn optimal_benefit(price: &PriceCurve, p: &EssParams) -> Result<f64> {
    Ok(optimal_decision(price, p)?.objective)
}

/// Objective of the big-M relaxation (state indicators continuous in [0,1]).
pub fn lp_relaxation_bound(price: &PriceCurve, p: &EssParams) -> Result<f64> {
    check_inputs(price, p)?;
    relaxation(price, p, &[])
        .solve()
        .map(|s| s.objective)
        .map_err(|e| Error::Solver {
            node: 0,
            reason: format!("{e:?}"),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    NoCharge(usize),
    NoDischarge(usize),
}

/// Big-M relaxation over `x = [p_ch_1..p_ch_T, p_dis_1..p_dis_T]`.
///
/// With `mu_ch + mu_dis <= 1` and `p <= M mu` the indicators project out to
/// `(p_ch + p_dis) / M <= 1`. The energy-coupled power limits are kept as
/// their own rows.
fn relaxation(price: &PriceCurve, p: &EssParams, fixes: &[Fix]) -> DenseLp {
    let t_len = p.t_periods;
    let n = 2 * t_len;
    let a = p.eta_ch * p.delta_t;
    let b = p.delta_t / p.eta_dis;
    let cost: Vec<f64> = (0..n)
        .map(|j| {
            let t = j % t_len;
            let sign = if j < t_len { -1.0 } else { 1.0 };
            sign * price[t] * p.delta_t
        })
        .collect();
    let mut lp = DenseLp::new(n, cost);
    let up_room = p.e_max - p.e_init;
    let down_room = p.e_init - p.e_min;

    // cumulative energy change up to and including period t
    let cumulative = |t: usize| -> Vec<f64> {
        let mut row = vec![0.0; n];
        for s in 0..=t {
            row[s] = a;
            row[t_len + s] = -b;
        }
        row
    };
    for t in 0..t_len {
        let mut cap = vec![0.0; n];
        cap[t] = 1.0;
        lp.add_row(cap, p.p_ch_max);
        let mut cap = vec![0.0; n];
        cap[t_len + t] = 1.0;
        lp.add_row(cap, p.p_dis_max);

        let s = cumulative(t);
        lp.add_row(s.clone(), up_room);
        lp.add_row(s.iter().map(|v| -v).collect(), down_room);

        let prev = if t == 0 { vec![0.0; n] } else { cumulative(t - 1) };
        let mut dis = prev.iter().map(|v| -v).collect::<Vec<_>>();
        dis[t_len + t] += b;
        lp.add_row(dis, down_room);
        let mut ch = prev;
        ch[t] += a;
        lp.add_row(ch, up_room);

        let mut couple = vec![0.0; n];
        couple[t] = 1.0 / p.big_m;
        couple[t_len + t] = 1.0 / p.big_m;
        lp.add_row(couple, 1.0);
    }
    for fix in fixes {
        let mut row = vec![0.0; n];
        match *fix {
            Fix::NoCharge(t) => row[t] = 1.0,
            Fix::NoDischarge(t) => row[t_len + t] = 1.0,
        }
        lp.add_row(row, 0.0);
    }
    lp
}

struct Node {
    bound: f64,
    id: usize,
    fixes: Vec<Fix>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // best bound first, then oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Branch-and-bound over the big-M relaxation.
///
/// Branches on the period with the largest `p_ch * p_dis` product and
/// explores nodes best-bound first. The number of nodes can grow
/// exponentially in the count of negative-price periods, so `max_nodes`
/// caps the search.
pub fn solve_branch_and_bound(price: &PriceCurve, p: &EssParams, max_nodes: usize) -> Result<SolveOutcome> {
    check_inputs(price, p)?;
    let t_len = p.t_periods;
    let solve_node = |fixes: &[Fix], node: usize| {
        relaxation(price, p, fixes).solve().map_err(|e| Error::Solver {
            node,
            reason: format!("{e:?}"),
        })
    };

    let root = solve_node(&[], 0)?;
    let lp_bound = root.objective;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: root.objective,
        id: 0,
        fixes: Vec::new(),
        x: root.x,
    });
    let mut next_id = 1;
    let mut best: Option<(f64, Schedule)> = None;

    while let Some(node) = heap.pop() {
        let incumbent = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        if node.bound <= incumbent + 1e-9 {
            break;
        }
        let (p_ch, p_dis) = node.x.split_at(t_len);
        let branch = (0..t_len)
            .filter(|&t| p_ch[t].min(p_dis[t]) > POWER_EPS)
            .max_by(|&a, &b| (p_ch[a] * p_dis[a]).total_cmp(&(p_ch[b] * p_dis[b])).then(b.cmp(&a)));
        match branch {
            None => {
                let snap = |v: f64, other: f64| if v <= POWER_EPS && v <= other { 0.0 } else { v };
                let ch: Vec<f64> = (0..t_len).map(|t| snap(p_ch[t], p_dis[t])).collect();
                let dis: Vec<f64> = (0..t_len).map(|t| snap(p_dis[t], p_ch[t])).collect();
                let schedule = Schedule::from_powers(ch, dis, p)?;
                let obj = benefit_of(&schedule, price, p)?;
                if obj > incumbent {
                    best = Some((obj, schedule));
                }
            }
            Some(t) => {
                for fix in [Fix::NoDischarge(t), Fix::NoCharge(t)] {
                    if next_id >= max_nodes {
                        return Err(Error::Solver {
                            node: next_id,
                            reason: format!("node limit {max_nodes} reached"),
                        });
                    }
                    let mut fixes = node.fixes.clone();
                    fixes.push(fix);
                    let sol = solve_node(&fixes, next_id)?;
                    if sol.objective > incumbent + 1e-9 {
                        heap.push(Node {
                            bound: sol.objective,
                            id: next_id,
                            fixes,
                            x: sol.x,
                        });
                    }
                    next_id += 1;
                }
            }
        }
    }
    let (objective, schedule) = best.ok_or_else(|| Error::Solver {
        node: next_id,
        reason: "no integer-feasible node found".into(),
    })?;
    Ok(SolveOutcome {
        schedule,
        objective,
        lp_bound,
        node_count: next_id,
    })
}
