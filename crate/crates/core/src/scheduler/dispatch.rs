//! Real-time dispatch against a day-ahead bid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterRegistry, ClusterSpec};
use crate::dynamics::{
    feasible_move_targets, forced_moves, step_state, steps_to_target, BatteryMove, BatteryState, ClusterMoves,
    ClusterState, MovePlan,
};
use crate::error::{Error, Result};
use crate::population::{ArrivalSeries, Category};
use crate::scheduler::bid::SecondStage;
use crate::scheduler::market::{Market, MarketPrices};
use crate::scheduler::model::{ClusterKey, Forecast, ModelKind, ModelOptions, Window};

pub type States = BTreeMap<ClusterKey, ClusterState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    Myopic,
    Mpc,
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchContext<'a> {
    pub registry: &'a ClusterRegistry,
    /// Bid per market interval.
    pub bid: &'a [f64],
    pub prices: &'a MarketPrices,
    pub market: Market,
    pub inflexible: &'a [f64],
    /// Arrivals the MPC expects after the current step.
    pub forecast: &'a Forecast,
    pub options: ModelOptions,
    /// MPC lookahead in steps; the window is extended to an interval boundary.
    pub lookahead: usize,
}

/// Cluster states at step 0 for every registered cluster.
pub fn initial_states(registry: &ClusterRegistry, arrivals: &ArrivalSeries) -> Result<States> {
    registry
        .iter()
        .map(|spec| {
            let a = arrivals.arrivals_at(spec.category, spec.index, spec.state_count(), 0);
            Ok(((spec.category, spec.index), ClusterState::new(spec, 0, &a)?))
        })
        .collect()
}

fn spec_of<'r>(registry: &'r ClusterRegistry, key: &ClusterKey) -> Result<&'r ClusterSpec> {
    registry
        .get(key.0, key.1)
        .ok_or_else(|| Error::Domain(format!("cluster {}/{} not registered", key.0, key.1)))
}

/// Flexible load (kWh) at the states' step if `plan` is applied.
pub fn plan_load(states: &States, registry: &ClusterRegistry, plan: &MovePlan) -> Result<f64> {
    let mut total = 0.0;
    for (key, state) in states {
        let spec = spec_of(registry, key)?;
        let none = ClusterMoves::none_for(spec);
        total += state.step_load(spec, plan.get(key).unwrap_or(&none));
    }
    Ok(total)
}

/// Applies `plan` and admits the arrivals of the following step.
pub fn advance(states: &States, registry: &ClusterRegistry, plan: &MovePlan, arrivals: &ArrivalSeries) -> Result<States> {
    let mut next = States::new();
    for (key, state) in states {
        let spec = spec_of(registry, key)?;
        let t1 = state.t() + 1;
        let a = if t1 < arrivals.horizon {
            arrivals.arrivals_at(spec.category, spec.index, spec.state_count(), t1)
        } else {
            vec![]
        };
        let none = ClusterMoves::none_for(spec);
        next.insert(*key, step_state(state, spec, plan.get(key).unwrap_or(&none), &a)?);
    }
    Ok(next)
}

fn deadline_of(spec: &ClusterSpec, cohort: usize, horizon: usize) -> usize {
    (cohort + spec.laxity()).min(horizon)
}

/// Snaps proposed moves to a feasible integer plan that includes every
/// forced move. `proposed` maps (cohort, from) to (to, count).
fn reconcile_battery(
    state: &BatteryState,
    spec: &ClusterSpec,
    proposed: &BTreeMap<(usize, usize), Vec<(usize, u64)>>,
    horizon: usize,
) -> Result<Vec<BatteryMove>> {
    let mut out = Vec::new();
    for (&c, members) in &state.cohorts {
        let after = deadline_of(spec, c, horizon).saturating_sub(state.t + 1);
        for (x, &n) in members.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let targets = feasible_move_targets(spec, x)?;
            let mut left = n;
            if let Some(list) = proposed.get(&(c, x)) {
                for &(to, k) in list {
                    let k = k.min(left);
                    if k == 0 || !targets.contains(&to) || steps_to_target(spec, to)? > after {
                        continue;
                    }
                    left -= k;
                    out.push(BatteryMove {
                        cohort: c,
                        from: x,
                        to,
                        count: k,
                    });
                }
            }
            if left > 0 && steps_to_target(spec, x)? > after {
                let mut to = None;
                for &y in &targets {
                    if y > x && steps_to_target(spec, y)? <= after {
                        to = Some(y);
                        break;
                    }
                }
                let to = to.ok_or_else(|| Error::DeadlineViolation {
                    t: state.t,
                    cluster: spec.index,
                    detail: format!("cohort {c} cannot leave state {x} in time"),
                })?;
                out.push(BatteryMove {
                    cohort: c,
                    from: x,
                    to,
                    count: left,
                });
            }
        }
    }
    Ok(ClusterMoves::Battery(out).merged(&ClusterMoves::Battery(Vec::new())).into_battery())
}

impl ClusterMoves {
    fn into_battery(self) -> Vec<BatteryMove> {
        match self {
            ClusterMoves::Battery(v) => v,
            ClusterMoves::Nid(_) => Vec::new(),
        }
    }
}

/// Rounds fractional counts to integers summing to round(Σ), capped at `cap`.
fn largest_remainder(values: &[f64], cap: u64) -> Vec<u64> {
    let total = (values.iter().sum::<f64>().round().max(0.0) as u64).min(cap);
    let mut out: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let mut assigned: u64 = out.iter().sum();
    while assigned > total {
        let j = (0..out.len()).filter(|&j| out[j] > 0).min_by(|&a, &b| {
            let ra = values[a] - out[a] as f64;
            let rb = values[b] - out[b] as f64;
            ra.partial_cmp(&rb).unwrap()
        });
        match j {
            Some(j) => {
                out[j] -= 1;
                assigned -= 1;
            }
            None => break,
        }
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] - out[a] as f64;
        let rb = values[b] - out[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &j in order.iter().cycle().take(values.len() * 2) {
        if assigned >= total {
            break;
        }
        out[j] += 1;
        assigned += 1;
    }
    out
}

/// Forced moves for every cluster.
pub fn forced_plan(states: &States, registry: &ClusterRegistry, horizon: usize) -> Result<MovePlan> {
    let mut plan = MovePlan::new();
    for (key, state) in states {
        let spec = spec_of(registry, key)?;
        let f = forced_moves(state, spec, Some(horizon))?;
        if !f.is_empty() {
            plan.insert(*key, f);
        }
    }
    Ok(plan)
}

/// Flexible energy the current interval still wants at step `t`.
fn step_target(ctx: &DispatchContext, t: usize, realized: &[f64]) -> f64 {
    let h = ctx.market.interval_of(t);
    let steps = ctx.market.steps(h);
    let done: f64 = (steps.start..t).map(|s| realized.get(s).copied().unwrap_or(0.0)).sum();
    let remaining = (steps.end - t) as f64;
    (ctx.bid[h] - done) / remaining - ctx.inflexible[t]
}

struct Candidate {
    slack: isize,
    state: usize,
    key: ClusterKey,
    cohort: usize,
}

fn myopic(states: &States, ctx: &DispatchContext, t: usize, realized: &[f64]) -> Result<MovePlan> {
    let horizon = ctx.market.horizon;
    let mut plan = forced_plan(states, ctx.registry, horizon)?;
    let mut residual = step_target(ctx, t, realized) - plan_load(states, ctx.registry, &plan)?;

    let mut candidates = Vec::new();
    for (key, state) in states {
        let spec = spec_of(ctx.registry, key)?;
        match state {
            ClusterState::Nid(s) => {
                let forced = match plan.get(key) {
                    Some(ClusterMoves::Nid(k)) => *k,
                    _ => 0,
                };
                let mut skip = forced;
                for (arrival, count) in s.pending_cohorts() {
                    let used = skip.min(count);
                    skip -= used;
                    if count > used {
                        candidates.push(Candidate {
                            slack: (arrival + spec.laxity()) as isize - t as isize,
                            state: 0,
                            key: *key,
                            cohort: arrival,
                        });
                        break;
                    }
                }
            }
            ClusterState::Battery(s) => {
                for &c in s.cohorts.keys() {
                    for x in 0..spec.state_count() {
                        if s.cohorts[&c][x] == 0 {
                            continue;
                        }
                        let d = deadline_of(spec, c, horizon) as isize;
                        candidates.push(Candidate {
                            slack: d - t as isize - steps_to_target(spec, x)? as isize,
                            state: x,
                            key: *key,
                            cohort: c,
                        });
                    }
                }
            }
        }
    }
    candidates.sort_by_key(|c| (c.slack, c.state, c.key, c.cohort));

    for cand in candidates {
        if residual <= 0.0 {
            break;
        }
        let spec = spec_of(ctx.registry, &cand.key)?;
        match &states[&cand.key] {
            ClusterState::Nid(s) => {
                let unit = spec.nid().map_or(0.0, |n| n.at(0));
                let mut k = match plan.get(&cand.key) {
                    Some(ClusterMoves::Nid(k)) => *k,
                    _ => 0,
                };
                while k < s.pending() && (residual - unit).abs() < residual.abs() && unit > 0.0 {
                    k += 1;
                    residual -= unit;
                }
                if k > 0 {
                    plan.insert(cand.key, ClusterMoves::Nid(k));
                }
            }
            ClusterState::Battery(s) => {
                let b = spec.battery().expect("battery spec");
                let x = cand.state;
                let moved: u64 = match plan.get(&cand.key) {
                    Some(ClusterMoves::Battery(v)) => v
                        .iter()
                        .filter(|m| m.cohort == cand.cohort && m.from == x)
                        .map(|m| m.count)
                        .sum(),
                    _ => 0,
                };
                let mut free = s.cohorts[&cand.cohort][x] - moved;
                let mut added = Vec::new();
                while free > 0 {
                    let want = (residual / spec.energy_step).round().max(1.0) as usize;
                    let y = match spec.category {
                        Category::Is => (x + b.rate_at(x)).min(b.capacity),
                        Category::Ric => x + want.min(b.rate).min(b.capacity - x),
                        _ => x + want.min(b.capacity - x),
                    };
                    let delta = (y - x) as f64 * spec.energy_step;
                    if y <= x || (residual - delta).abs() >= residual.abs() {
                        break;
                    }
                    added.push(BatteryMove {
                        cohort: cand.cohort,
                        from: x,
                        to: y,
                        count: 1,
                    });
                    residual -= delta;
                    free -= 1;
                }
                if !added.is_empty() {
                    let base = plan
                        .remove(&cand.key)
                        .unwrap_or(ClusterMoves::Battery(Vec::new()));
                    plan.insert(cand.key, base.merged(&ClusterMoves::Battery(added)));
                }
            }
        }
    }
    Ok(plan)
}

fn mpc(states: &States, ctx: &DispatchContext, t: usize, realized: &[f64]) -> Result<MovePlan> {
    let horizon = ctx.market.horizon;
    let k = ctx.market.interval;
    let end = ((t + ctx.lookahead.max(1)).div_ceil(k) * k).min(horizon);
    let window = Window {
        start: t,
        end,
        horizon,
    };
    let mut options = ctx.options;
    options.kind = ModelKind::Cluster;
    let mut stage = SecondStage::build(
        ctx.registry,
        Some(states),
        ctx.forecast,
        window,
        ctx.inflexible,
        realized,
        ctx.prices,
        ctx.market,
        options,
    )?;
    let first = ctx.market.interval_of(t);
    let bids: Vec<f64> = (first..=ctx.market.interval_of(end - 1)).map(|h| ctx.bid[h]).collect();
    let (_, _, x) = stage.evaluate(&bids)?;
    let sol = crate::lp::LpSolution {
        status: crate::lp::LpStatus::Optimal,
        x,
        objective: 0.0,
        duals: Vec::new(),
        iterations: 0,
    };

    let nid = stage.flex.nid_activations(&sol, t);
    let energy = stage.flex.energy_at(&sol, t);
    let moves = stage.flex.moves_at(&sol, t);
    let forced = forced_plan(states, ctx.registry, horizon)?;

    let mut plan = MovePlan::new();
    for (key, state) in states {
        let spec = spec_of(ctx.registry, key)?;
        match state {
            ClusterState::Nid(s) => {
                let f = match forced.get(key) {
                    Some(ClusterMoves::Nid(k)) => *k,
                    _ => 0,
                };
                let want = nid.get(key).copied().unwrap_or(0.0).round().max(0.0) as u64;
                let m = want.clamp(f, s.pending());
                if m > 0 {
                    plan.insert(*key, ClusterMoves::Nid(m));
                }
            }
            ClusterState::Battery(s) => {
                let mut proposed: BTreeMap<(usize, usize), Vec<(usize, u64)>> = BTreeMap::new();
                if let Some(list) = moves.get(key) {
                    let mut rows: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
                    for &(c, from, to, v) in list {
                        rows.entry((c, from)).or_default().push((to, v));
                    }
                    for ((c, from), row) in rows {
                        let cap = s.cohorts.get(&c).map_or(0, |m| m[from]);
                        let vals: Vec<f64> = row.iter().map(|r| r.1).collect();
                        let counts = largest_remainder(&vals, cap);
                        proposed.insert(
                            (c, from),
                            row.iter().zip(counts).map(|(r, k)| (r.0, k)).collect(),
                        );
                    }
                }
                for (&c, members) in &s.cohorts {
                    let Some(&units) = energy.get(&(*key, c)) else {
                        continue;
                    };
                    let mut left = units.round().max(0.0) as usize;
                    let cap = spec.battery().map_or(0, |b| b.target());
                    for (x, &n) in members.iter().enumerate() {
                        for _ in 0..n {
                            if left == 0 || x >= cap {
                                break;
                            }
                            let y = (x + left).min(cap);
                            left -= y - x;
                            let row = proposed.entry((c, x)).or_default();
                            match row.iter_mut().find(|r| r.0 == y) {
                                Some(r) => r.1 += 1,
                                None => row.push((y, 1)),
                            }
                        }
                    }
                }
                let list = reconcile_battery(s, spec, &proposed, horizon)?;
                if !list.is_empty() {
                    plan.insert(*key, ClusterMoves::Battery(list));
                }
            }
        }
    }
    Ok(plan)
}

/// Move plan for step `t`. `realized` holds total load for steps before `t`.
pub fn dispatch_realtime(
    states: &States,
    ctx: &DispatchContext,
    t: usize,
    realized: &[f64],
    mode: DispatchMode,
) -> Result<MovePlan> {
    if let Some((key, s)) = states.iter().find(|(_, s)| s.t() != t) {
        return Err(Error::Domain(format!(
            "cluster {}/{} is at step {} not {t}",
            key.0,
            key.1,
            s.t()
        )));
    }
    match mode {
        DispatchMode::Myopic => myopic(states, ctx, t, realized),
        DispatchMode::Mpc => mpc(states, ctx, t, realized),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchRun {
    /// Total load (inflexible plus flexible) per step.
    pub load: Vec<f64>,
    pub flexible: Vec<f64>,
    pub plans: Vec<MovePlan>,
    /// Cluster states after the last step.
    pub final_states: States,
}

/// Runs dispatch over the whole horizon applying plans directly.
pub fn simulate(ctx: &DispatchContext, arrivals: &ArrivalSeries, mode: DispatchMode) -> Result<DispatchRun> {
    let horizon = ctx.market.horizon;
    if arrivals.horizon != horizon {
        return Err(Error::Domain("arrivals must cover the market horizon".into()));
    }
    let mut states = initial_states(ctx.registry, arrivals)?;
    let mut run = DispatchRun {
        load: Vec::with_capacity(horizon),
        flexible: Vec::with_capacity(horizon),
        plans: Vec::with_capacity(horizon),
        final_states: States::new(),
    };
    for t in 0..horizon {
        let plan = dispatch_realtime(&states, ctx, t, &run.load, mode)?;
        let flex = plan_load(&states, ctx.registry, &plan)?;
        run.flexible.push(flex);
        run.load.push(ctx.inflexible[t] + flex);
        states = advance(&states, ctx.registry, &plan, arrivals)?;
        run.plans.push(plan);
    }
    run.final_states = states;
    Ok(run)
}
