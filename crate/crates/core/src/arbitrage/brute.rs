use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ess::{EssParams, PriceCurve, Schedule};

use super::{benefit_of, check_inputs, lp_relaxation_bound, SolveOutcome};

pub const BRUTE_FORCE_MAX_PERIODS: usize = 5;

/// Power levels `k * step` up to `cap`, plus `cap` itself when it is off-grid.
fn levels(step: f64, cap: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1u64;
    loop {
        let v = k as f64 * step;
        if v > cap * (1.0 + 1e-12) {
            break;
        }
        out.push(v.min(cap));
        k += 1;
    }
    if out.last().is_none_or(|&l| l < cap - 1e-12) {
        out.push(cap);
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Idle,
    Charge(usize),
    Discharge(usize),
}

/// Enumerates every per-period action from `{idle} ∪ {charge at k·step} ∪
/// {discharge at k·step}` and returns the best energy-feasible schedule.
///
/// Partial plans reaching the same multiset of charge/discharge levels end
/// at the same stored energy and face the same future, so only the best
/// one per multiset is expanded. This keeps the enumeration exhaustive while
/// making fine grids affordable.
pub fn brute_force_arbitrage(price: &PriceCurve, p: &EssParams, grid_step: f64) -> Result<SolveOutcome> {
    check_inputs(price, p)?;
    if p.t_periods > BRUTE_FORCE_MAX_PERIODS {
        return Err(Error::TooManyPeriods {
            periods: p.t_periods,
            limit: BRUTE_FORCE_MAX_PERIODS,
        });
    }
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::InvalidInput(format!("grid step {grid_step} must be > 0")));
    }
    let ch_levels = levels(grid_step, p.p_ch_max);
    let dis_levels = levels(grid_step, p.p_dis_max);
    let actions: Vec<Action> = std::iter::once(Action::Idle)
        .chain((0..ch_levels.len()).map(Action::Charge))
        .chain((0..dis_levels.len()).map(Action::Discharge))
        .collect();

    // state key: how many times each level index has been used, summarized by
    // the total charged and discharged power (level sums are exact because
    // every level is k * step or the cap)
    type Key = (u64, u32, u64, u32);
    let units = |lv: &[f64], i: usize| -> (u64, u32) {
        if i + 1 == lv.len() && (lv[i] / grid_step - (lv[i] / grid_step).round()).abs() > 1e-9 {
            (0, 1)
        } else {
            ((lv[i] / grid_step).round() as u64, 0)
        }
    };
    let energy_of = |k: &Key| -> f64 {
        let ch = k.0 as f64 * grid_step + k.1 as f64 * p.p_ch_max;
        let dis = k.2 as f64 * grid_step + k.3 as f64 * p.p_dis_max;
        p.e_init + p.eta_ch * ch * p.delta_t - dis / p.eta_dis * p.delta_t
    };
    let feasible = |e: f64| e >= p.e_min - 1e-12 && e <= p.e_max + 1e-12;
    let step = |k: &Key, a: Action| -> (Key, f64, f64) {
        match a {
            Action::Idle => (*k, 0.0, 0.0),
            Action::Charge(i) => {
                let (u, c) = units(&ch_levels, i);
                ((k.0 + u, k.1 + c, k.2, k.3), ch_levels[i], 0.0)
            }
            Action::Discharge(i) => {
                let (u, c) = units(&dis_levels, i);
                ((k.0, k.1, k.2 + u, k.3 + c), 0.0, dis_levels[i])
            }
        }
    };

    let t_len = p.t_periods;
    let prices = price.values();
    // layers[t]: best (value, parent key, action) per state after period t
    let mut layers: Vec<BTreeMap<Key, (f64, Key, usize)>> = Vec::with_capacity(t_len);
    let mut frontier: BTreeMap<Key, (f64, Key, usize)> = BTreeMap::new();
    frontier.insert((0, 0, 0, 0), (0.0, (0, 0, 0, 0), 0));
    let mut visited = 1usize;
    let mut best_final: Option<(f64, Key, usize)> = None;

    for (t, &price) in prices.iter().enumerate() {
        let last = t + 1 == t_len;
        let mut next: BTreeMap<Key, (f64, Key, usize)> = BTreeMap::new();
        for (key, &(value, _, _)) in &frontier {
            for (ai, &a) in actions.iter().enumerate() {
                let (nk, c, d) = step(key, a);
                if !feasible(energy_of(&nk)) {
                    continue;
                }
                visited += 1;
                let v = value + price * (d - c) * p.delta_t;
                if last {
                    if best_final.is_none_or(|(bv, _, _)| v > bv) {
                        best_final = Some((v, *key, ai));
                    }
                } else {
                    match next.get(&nk) {
                        Some(&(bv, _, _)) if bv >= v => {}
                        _ => {
                            next.insert(nk, (v, *key, ai));
                        }
                    }
                }
            }
        }
        layers.push(std::mem::take(&mut frontier));
        frontier = next;
    }

    let (_, mut key, mut ai) = best_final.expect("idle plan is always feasible");
    let mut p_ch = vec![0.0; t_len];
    let mut p_dis = vec![0.0; t_len];
    for t in (0..t_len).rev() {
        match actions[ai] {
            Action::Idle => {}
            Action::Charge(i) => p_ch[t] = ch_levels[i],
            Action::Discharge(i) => p_dis[t] = dis_levels[i],
        }
        if t > 0 {
            let (_, parent, pa) = layers[t][&key];
            key = parent;
            ai = pa;
        }
    }
    let schedule = Schedule::from_powers(p_ch, p_dis, p)?;
    let objective = benefit_of(&schedule, price, p)?;
    Ok(SolveOutcome {
        schedule,
        objective,
        lp_bound: lp_relaxation_bound(price, p)?,
        node_count: visited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(v: &[f64]) -> PriceCurve {
        PriceCurve::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fine_grid_converges_on_rising_fixture() {
        let p = EssParams::default().with_periods(2);
        let out = brute_force_arbitrage(&curve(&[20.0, 100.0]), &p, 1e-4).unwrap();
        // smallest grid charge reaching the discharge threshold is 0.2706
        assert!((out.objective - (50.0 - 20.0 * 0.2706)).abs() < 1e-9);
        assert!((out.objective - 44.589372).abs() <= 100.0 * 1e-4 * 2.0);
    }

    #[test]
    fn negative_single_period_charges_fully() {
        let p = EssParams::default().with_periods(1);
        let out = brute_force_arbitrage(&curve(&[-10.0]), &p, 0.01).unwrap();
        assert!((out.objective - 5.0).abs() < 1e-12);
        assert!((out.schedule.p_ch[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_is_bang_bang() {
        // only idle / full charge / full discharge exist on this grid
        let p = EssParams::default().with_periods(3);
        let lam = curve(&[30.0, -5.0, 80.0]);
        let out = brute_force_arbitrage(&lam, &p, 0.6).unwrap();
        let mut best = f64::NEG_INFINITY;
        for code in 0..27 {
            let mut c = vec![0.0; 3];
            let mut d = vec![0.0; 3];
            let mut k = code;
            for t in 0..3 {
                match k % 3 {
                    1 => c[t] = 0.5,
                    2 => d[t] = 0.5,
                    _ => {}
                }
                k /= 3;
            }
            let s = Schedule::from_powers(c, d, &p).unwrap();
            if s.energy.iter().all(|&e| e >= p.e_min - 1e-12 && e <= p.e_max + 1e-12) {
                best = best.max(benefit_of(&s, &lam, &p).unwrap());
            }
        }
        assert!((out.objective - best).abs() < 1e-12);
    }

    #[test]
    fn long_horizons_are_refused() {
        let p = EssParams::default().with_periods(6);
        assert!(matches!(
            brute_force_arbitrage(&curve(&[1.0; 6]), &p, 0.1),
            Err(Error::TooManyPeriods { .. })
        ));
    }
}
