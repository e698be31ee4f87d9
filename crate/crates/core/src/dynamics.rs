//! Cluster occupancy bookkeeping, switch processes and aggregate load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;

use crate::clustering::{BatteryParams, ClusterKind, ClusterRegistry, ClusterSpec, NidParams};
use crate::error::{Error, Result};
use crate::population::{ArrivalSeries, Category};

/// Battery cluster state. Members are grouped by arrival step because each
/// cohort has its own absolute deadline.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BatteryState {
    pub t: usize,
    pub cohorts: BTreeMap<usize, Vec<u64>>,
    /// Members past their deadline, by final state.
    pub retired: Vec<u64>,
    /// Cumulative arrivals a_x.
    pub arrived: Vec<u64>,
    /// Cumulative switch counts d_{x,x'}.
    pub switches: BTreeMap<(usize, usize), u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NidState {
    pub t: usize,
    /// Arrivals per step for steps 0..=t.
    pub arrivals: Vec<u64>,
    /// Cumulative activations d(t-1).
    pub activated: u64,
    /// Activation step -> count.
    pub ledger: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ClusterState {
    Battery(BatteryState),
    Nid(NidState),
}

/// One block of members switching state within a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BatteryMove {
    pub cohort: usize,
    pub from: usize,
    pub to: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ClusterMoves {
    Battery(Vec<BatteryMove>),
    Nid(u64),
}

impl ClusterMoves {
    pub fn none_for(spec: &ClusterSpec) -> Self {
        match spec.kind {
            ClusterKind::Battery(_) => ClusterMoves::Battery(Vec::new()),
            ClusterKind::Nid(_) => ClusterMoves::Nid(0),
        }
    }

    /// Switch matrix m_{x,x'} summed over cohorts.
    pub fn matrix(&self) -> BTreeMap<(usize, usize), u64> {
        let mut m = BTreeMap::new();
        match self {
            ClusterMoves::Battery(moves) => {
                for mv in moves.iter().filter(|mv| mv.count > 0) {
                    *m.entry((mv.from, mv.to)).or_insert(0) += mv.count;
                }
            }
            ClusterMoves::Nid(k) if *k > 0 => {
                m.insert((0, 1), *k);
            }
            ClusterMoves::Nid(_) => {}
        }
        m
    }

    /// Σ (x' - x) m_{x,x'} in energy units; activations count for NID.
    pub fn energy_units(&self) -> i64 {
        self.matrix()
            .iter()
            .map(|(&(x, y), &k)| (y as i64 - x as i64) * k as i64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix().is_empty()
    }

    /// Union of two plans for the same cluster.
    pub fn merged(&self, other: &ClusterMoves) -> ClusterMoves {
        match (self, other) {
            (ClusterMoves::Nid(a), ClusterMoves::Nid(b)) => ClusterMoves::Nid(a + b),
            (ClusterMoves::Battery(a), ClusterMoves::Battery(b)) => {
                let mut acc: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
                for mv in a.iter().chain(b) {
                    *acc.entry((mv.cohort, mv.from, mv.to)).or_insert(0) += mv.count;
                }
                ClusterMoves::Battery(
                    acc.into_iter()
                        .filter(|(_, c)| *c > 0)
                        .map(|((cohort, from, to), count)| BatteryMove { cohort, from, to, count })
                        .collect(),
                )
            }
            _ => panic!("merging plans of different cluster kinds"),
        }
    }
}

/// Per-step moves for every cluster, keyed by (category, index).
pub type MovePlan = BTreeMap<(Category, usize), ClusterMoves>;

fn battery_of(spec: &ClusterSpec) -> Result<&BatteryParams> {
    spec.battery()
        .ok_or_else(|| Error::Domain(format!("cluster {}/{} is not a battery", spec.category, spec.index)))
}

fn nid_of(spec: &ClusterSpec) -> Result<&NidParams> {
    spec.nid()
        .ok_or_else(|| Error::Domain(format!("cluster {}/{} is not NID", spec.category, spec.index)))
}

/// States reachable in one step from `x`.
pub fn feasible_move_targets(spec: &ClusterSpec, x: usize) -> Result<Vec<usize>> {
    let b = battery_of(spec)?;
    if x > b.capacity {
        return Err(Error::Domain(format!(
            "state {x} outside 0..={} for cluster {}/{}",
            b.capacity, spec.category, spec.index
        )));
    }
    let e = b.capacity;
    let out: Vec<usize> = match spec.category {
        Category::Canonical => (0..=e).filter(|&y| y != x).collect(),
        Category::Ric => {
            let g = b.rate;
            (x.saturating_sub(g)..=(x + g).min(e)).filter(|&y| y != x).collect()
        }
        Category::Is => {
            let y = (x + b.rate_at(x)).min(e);
            if y == x {
                vec![]
            } else {
                vec![y]
            }
        }
        Category::Nid => unreachable!(),
    };
    Ok(out)
}

/// Minimum number of steps from `x` to the service target.
pub fn steps_to_target(spec: &ClusterSpec, x: usize) -> Result<usize> {
    let b = battery_of(spec)?;
    let target = b.target();
    if x >= target {
        return Ok(0);
    }
    Ok(match spec.category {
        Category::Canonical => 1,
        Category::Ric => (target - x).div_ceil(b.rate),
        Category::Is => {
            let mut y = x;
            let mut k = 0;
            while y < target {
                y = (y + b.rate_at(y)).min(b.capacity);
                k += 1;
            }
            k
        }
        Category::Nid => unreachable!(),
    })
}

impl BatteryState {
    /// Active occupancy n_x summed over cohorts.
    pub fn occupancy(&self) -> Vec<u64> {
        let mut n = vec![0; self.arrived.len()];
        for c in self.cohorts.values() {
            for (x, k) in c.iter().enumerate() {
                n[x] += k;
            }
        }
        n
    }

    pub fn active(&self) -> u64 {
        self.cohorts.values().flatten().sum()
    }
}

impl NidState {
    pub fn total_arrived(&self) -> u64 {
        self.arrivals.iter().sum()
    }

    pub fn pending(&self) -> u64 {
        self.total_arrived() - self.activated
    }

    /// Cumulative arrivals a(s), zero for s < 0.
    pub fn cumulative_arrivals(&self, s: isize) -> u64 {
        if s < 0 {
            return 0;
        }
        self.arrivals.iter().take(s as usize + 1).sum()
    }

    /// Pending jobs grouped by arrival step, oldest first.
    pub fn pending_cohorts(&self) -> Vec<(usize, u64)> {
        let mut skip = self.activated;
        let mut out = Vec::new();
        for (s, &k) in self.arrivals.iter().enumerate() {
            let used = skip.min(k);
            skip -= used;
            if k > used {
                out.push((s, k - used));
            }
        }
        out
    }

    /// Load at step `t` from jobs already started.
    pub fn committed_load(&self, profile: &[f64], t: usize) -> f64 {
        committed_load(profile, &self.ledger, t)
    }
}

/// Σ_s ℓ(t - s) · activations(s).
pub fn committed_load(profile: &[f64], ledger: &BTreeMap<usize, u64>, t: usize) -> f64 {
    ledger
        .range(..=t)
        .filter_map(|(&s, &k)| profile.get(t - s).map(|l| l * k as f64))
        .sum()
}

impl ClusterState {
    /// State at `t` holding the arrivals of that step.
    pub fn new(spec: &ClusterSpec, t: usize, arrivals: &[u64]) -> Result<Self> {
        match &spec.kind {
            ClusterKind::Battery(b) => {
                let mut s = BatteryState {
                    t,
                    cohorts: BTreeMap::new(),
                    retired: vec![0; b.capacity + 1],
                    arrived: vec![0; b.capacity + 1],
                    switches: BTreeMap::new(),
                };
                admit_battery(&mut s, spec, b, arrivals)?;
                Ok(ClusterState::Battery(s))
            }
            ClusterKind::Nid(_) => {
                let mut arr = vec![0; t + 1];
                arr[t] = arrivals.first().copied().unwrap_or(0);
                Ok(ClusterState::Nid(NidState {
                    t,
                    arrivals: arr,
                    activated: 0,
                    ledger: BTreeMap::new(),
                }))
            }
        }
    }

    pub fn t(&self) -> usize {
        match self {
            ClusterState::Battery(s) => s.t,
            ClusterState::Nid(s) => s.t,
        }
    }

    pub fn as_battery(&self) -> Option<&BatteryState> {
        match self {
            ClusterState::Battery(s) => Some(s),
            ClusterState::Nid(_) => None,
        }
    }

    pub fn as_nid(&self) -> Option<&NidState> {
        match self {
            ClusterState::Nid(s) => Some(s),
            ClusterState::Battery(_) => None,
        }
    }

    /// Occupancy including retired members, as used by the lemma.
    /// NID clusters report [pending, activated].
    pub fn lemma_occupancy(&self) -> Vec<u64> {
        match self {
            ClusterState::Battery(s) => s
                .occupancy()
                .iter()
                .zip(&s.retired)
                .map(|(a, b)| a + b)
                .collect(),
            ClusterState::Nid(s) => vec![s.pending(), s.activated],
        }
    }

    pub fn lemma_arrivals(&self) -> Vec<u64> {
        match self {
            ClusterState::Battery(s) => s.arrived.clone(),
            ClusterState::Nid(s) => vec![s.total_arrived(), 0],
        }
    }

    /// Load this cluster contributes at its current step if `moves` are applied.
    pub fn step_load(&self, spec: &ClusterSpec, moves: &ClusterMoves) -> f64 {
        match (self, &spec.kind) {
            (ClusterState::Nid(s), ClusterKind::Nid(n)) => {
                let new = match moves {
                    ClusterMoves::Nid(k) => *k as f64 * n.at(0),
                    _ => 0.0,
                };
                s.committed_load(&n.profile, s.t) + new
            }
            _ => moves.energy_units() as f64 * spec.energy_step,
        }
    }
}

fn admit_battery(s: &mut BatteryState, spec: &ClusterSpec, b: &BatteryParams, arrivals: &[u64]) -> Result<()> {
    if arrivals.len() > b.capacity + 1 {
        return Err(Error::Domain(format!(
            "{} arrival states for cluster {}/{} with {} states",
            arrivals.len(),
            spec.category,
            spec.index,
            b.capacity + 1
        )));
    }
    if arrivals.iter().all(|&k| k == 0) {
        return Ok(());
    }
    let mut cohort = vec![0; b.capacity + 1];
    for (x, &k) in arrivals.iter().enumerate() {
        cohort[x] = k;
        s.arrived[x] += k;
    }
    s.cohorts.insert(s.t, cohort);
    retire_due(s, spec, b)
}

fn retire_due(s: &mut BatteryState, spec: &ClusterSpec, b: &BatteryParams) -> Result<()> {
    let target = b.target();
    let due: Vec<usize> = s
        .cohorts
        .keys()
        .copied()
        .filter(|&c| c + b.laxity <= s.t)
        .collect();
    for c in due {
        let members = s.cohorts.remove(&c).expect("cohort present");
        if let Some(x) = (0..target).find(|&x| members[x] > 0) {
            return Err(Error::DeadlineViolation {
                t: s.t,
                cluster: spec.index,
                detail: format!(
                    "{} {} member(s) of cohort {c} in state {x} below target {target}",
                    members[x], spec.category
                ),
            });
        }
        for (x, k) in members.into_iter().enumerate() {
            s.retired[x] += k;
        }
    }
    Ok(())
}

/// Applies `moves` at the state's step and admits arrivals of the next step.
pub fn step_state(
    state: &ClusterState,
    spec: &ClusterSpec,
    moves: &ClusterMoves,
    arrivals_next: &[u64],
) -> Result<ClusterState> {
    match (state, moves) {
        (ClusterState::Battery(s), ClusterMoves::Battery(list)) => {
            let b = battery_of(spec)?;
            let mut next = s.clone();
            let mut outflow: BTreeMap<(usize, usize), u64> = BTreeMap::new();
            for mv in list.iter().filter(|mv| mv.count > 0) {
                if !feasible_move_targets(spec, mv.from)?.contains(&mv.to) {
                    return Err(Error::InfeasibleMove {
                        t: s.t,
                        cluster: spec.index,
                        state: mv.from,
                        detail: format!("{} cannot move to {}", spec.category, mv.to),
                    });
                }
                *outflow.entry((mv.cohort, mv.from)).or_insert(0) += mv.count;
            }
            for (&(c, x), &out) in &outflow {
                let have = s.cohorts.get(&c).map_or(0, |v| v[x]);
                if out > have {
                    return Err(Error::InfeasibleMove {
                        t: s.t,
                        cluster: spec.index,
                        state: x,
                        detail: format!("{out} moves out of cohort {c} holding {have}"),
                    });
                }
            }
            for mv in list.iter().filter(|mv| mv.count > 0) {
                let cohort = next.cohorts.get_mut(&mv.cohort).expect("validated");
                cohort[mv.from] -= mv.count;
                cohort[mv.to] += mv.count;
                *next.switches.entry((mv.from, mv.to)).or_insert(0) += mv.count;
            }
            next.t += 1;
            retire_due(&mut next, spec, b)?;
            admit_battery(&mut next, spec, b, arrivals_next)?;
            Ok(ClusterState::Battery(next))
        }
        (ClusterState::Nid(s), ClusterMoves::Nid(k)) => {
            if *k > s.pending() {
                return Err(Error::InfeasibleMove {
                    t: s.t,
                    cluster: spec.index,
                    state: 0,
                    detail: format!("{k} activations with {} pending", s.pending()),
                });
            }
            let mut next = s.clone();
            if *k > 0 {
                next.activated += k;
                *next.ledger.entry(s.t).or_insert(0) += k;
            }
            let due = s.cumulative_arrivals(s.t as isize - nid_of(spec)?.max_delay as isize);
            if next.activated < due {
                return Err(Error::DeadlineViolation {
                    t: s.t,
                    cluster: spec.index,
                    detail: format!("{} NID job(s) not started by their deadline", due - next.activated),
                });
            }
            next.t += 1;
            next.arrivals.push(arrivals_next.first().copied().unwrap_or(0));
            Ok(ClusterState::Nid(next))
        }
        _ => Err(Error::Domain(format!(
            "move plan kind does not match cluster {}/{}",
            spec.category, spec.index
        ))),
    }
}

/// Battery load of a plan in kWh. NID load comes from [`committed_load`].
pub fn load_from_moves(plan: &MovePlan, registry: &ClusterRegistry) -> f64 {
    plan.iter()
        .filter(|((cat, _), _)| cat.is_battery())
        .map(|(&(cat, q), m)| {
            let step = registry.get(cat, q).map_or(1.0, |s| s.energy_step);
            m.energy_units() as f64 * step
        })
        .sum()
}

/// Σ_x [(Σ_{x'≥x} ∂n_{x'}(t)) - (x+1) ∂a_x(t)] with ∂f(t) = f(t+1) - f(t).
pub fn load_via_lemma(n: &[Vec<u64>], a: &[Vec<u64>], t: usize) -> Result<i64> {
    if n.len() != a.len() {
        return Err(Error::Domain("occupancy and arrival traces differ in length".into()));
    }
    if t + 1 >= n.len() {
        return Err(Error::Domain(format!("step {t} needs a successor in a trace of {}", n.len())));
    }
    let width = n[t].len();
    if [&n[t + 1], &a[t], &a[t + 1]].iter().any(|v| v.len() != width) {
        return Err(Error::Domain("trace widths differ".into()));
    }
    let dn: Vec<i64> = (0..width).map(|x| n[t + 1][x] as i64 - n[t][x] as i64).collect();
    let mut total = 0;
    for x in 0..width {
        let tail: i64 = dn[x..].iter().sum();
        let da = a[t + 1][x] as i64 - a[t][x] as i64;
        total += tail - (x as i64 + 1) * da;
    }
    Ok(total)
}

/// Moves that must happen at the current step so that every member can
/// still meet its deadline. `horizon` acts as a deadline for everyone.
pub fn forced_moves(state: &ClusterState, spec: &ClusterSpec, horizon: Option<usize>) -> Result<ClusterMoves> {
    match state {
        ClusterState::Nid(s) => {
            let chi = nid_of(spec)?.max_delay;
            let due = if horizon.is_some_and(|h| s.t + 1 >= h) {
                s.total_arrived()
            } else {
                s.cumulative_arrivals(s.t as isize - chi as isize)
            };
            Ok(ClusterMoves::Nid(due.saturating_sub(s.activated)))
        }
        ClusterState::Battery(s) => {
            let b = battery_of(spec)?;
            let mut moves = Vec::new();
            for (&c, members) in &s.cohorts {
                let mut deadline = c + b.laxity;
                if let Some(h) = horizon {
                    deadline = deadline.min(h);
                }
                let after = deadline.saturating_sub(s.t + 1);
                for (x, &k) in members.iter().enumerate() {
                    if k == 0 {
                        continue;
                    }
                    let need = steps_to_target(spec, x)?;
                    if need <= after {
                        continue;
                    }
                    if need > after + 1 || deadline <= s.t {
                        return Err(Error::DeadlineViolation {
                            t: s.t,
                            cluster: spec.index,
                            detail: format!(
                                "cohort {c} state {x} needs {need} steps, deadline {deadline}"
                            ),
                        });
                    }
                    let mut to = None;
                    for y in feasible_move_targets(spec, x)? {
                        if y > x && steps_to_target(spec, y)? <= after {
                            to = Some(y);
                            break;
                        }
                    }
                    let to = to.ok_or_else(|| Error::DeadlineViolation {
                        t: s.t,
                        cluster: spec.index,
                        detail: format!("no feasible move from state {x}"),
                    })?;
                    moves.push(BatteryMove {
                        cohort: c,
                        from: x,
                        to,
                        count: k,
                    });
                }
            }
            Ok(ClusterMoves::Battery(moves))
        }
    }
}

/// True when every active member can still be served by `horizon`.
pub fn is_recoverable(state: &ClusterState, spec: &ClusterSpec, horizon: usize) -> bool {
    if state.t() >= horizon {
        return match state {
            ClusterState::Battery(s) => {
                let target = spec.battery().map_or(0, |b| b.target());
                s.cohorts.values().all(|c| c[..target].iter().all(|&k| k == 0))
            }
            ClusterState::Nid(s) => s.pending() == 0,
        };
    }
    if let (ClusterState::Nid(s), Some(n)) = (state, spec.nid()) {
        if s.activated < s.cumulative_arrivals(s.t as isize - n.max_delay as isize - 1) {
            return false;
        }
    }
    forced_moves(state, spec, Some(horizon)).is_ok()
}

fn compositions(n: u64, bins: usize) -> Vec<Vec<u64>> {
    if bins == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, bins - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Every move plan available to one cluster at its current step.
pub fn enumerate_cluster_moves(state: &ClusterState, spec: &ClusterSpec) -> Result<Vec<ClusterMoves>> {
    match state {
        ClusterState::Nid(s) => Ok((0..=s.pending()).map(ClusterMoves::Nid).collect()),
        ClusterState::Battery(s) => {
            let mut plans: Vec<Vec<BatteryMove>> = vec![Vec::new()];
            for (&c, members) in &s.cohorts {
                for (x, &k) in members.iter().enumerate() {
                    if k == 0 {
                        continue;
                    }
                    let targets = feasible_move_targets(spec, x)?;
                    if targets.is_empty() {
                        continue;
                    }
                    let splits = compositions(k, targets.len() + 1);
                    let mut grown = Vec::with_capacity(plans.len() * splits.len());
                    for p in &plans {
                        for split in &splits {
                            let mut q = p.clone();
                            for (j, &to) in targets.iter().enumerate() {
                                if split[j + 1] > 0 {
                                    q.push(BatteryMove {
                                        cohort: c,
                                        from: x,
                                        to,
                                        count: split[j + 1],
                                    });
                                }
                            }
                            grown.push(q);
                        }
                    }
                    plans = grown;
                }
            }
            Ok(plans.into_iter().map(ClusterMoves::Battery).collect())
        }
    }
}

const LOAD_SCALE: f64 = 1e6;

fn load_key(v: f64) -> i64 {
    (v * LOAD_SCALE).round() as i64
}

/// Exhaustive search over cluster-model trajectories at desk scale.
struct Search<'a> {
    specs: Vec<&'a ClusterSpec>,
    arrivals: Vec<Vec<Vec<u64>>>,
    horizon: usize,
    budget: usize,
}

type Step = (i64, Vec<ClusterState>);

impl<'a> Search<'a> {
    fn new(arrivals: &ArrivalSeries, registry: &'a ClusterRegistry, budget: usize) -> Self {
        let horizon = arrivals.horizon;
        let mut specs = Vec::new();
        let mut per = Vec::new();
        for spec in registry.iter() {
            let width = spec.state_count();
            let series: Vec<Vec<u64>> = (0..horizon)
                .map(|t| arrivals.arrivals_at(spec.category, spec.index, width, t))
                .collect();
            if series.iter().flatten().any(|&k| k > 0) {
                specs.push(spec);
                per.push(series);
            }
        }
        Self {
            specs,
            arrivals: per,
            horizon,
            budget,
        }
    }

    fn initial(&self) -> Result<Vec<ClusterState>> {
        self.specs
            .iter()
            .zip(&self.arrivals)
            .map(|(spec, a)| ClusterState::new(spec, 0, &a[0]))
            .collect()
    }

    fn charge(&mut self, n: usize) -> Result<()> {
        if n > self.budget {
            return Err(Error::Size("plasticity search exceeded its node budget".into()));
        }
        self.budget -= n;
        Ok(())
    }

    /// Distinct (load, next states) pairs reachable from `states`.
    fn successors(&mut self, states: &[ClusterState]) -> Result<Vec<Step>> {
        let t = states.first().map_or(0, ClusterState::t);
        let mut combos: Vec<Step> = vec![(0, Vec::new())];
        for (i, state) in states.iter().enumerate() {
            let spec = self.specs[i];
            let empty = vec![0; spec.state_count()];
            let next_arr = self.arrivals[i].get(t + 1).unwrap_or(&empty);
            let mut options: Vec<(i64, ClusterState)> = Vec::new();
            for mv in enumerate_cluster_moves(state, spec)? {
                let Ok(next) = step_state(state, spec, &mv, next_arr) else {
                    continue;
                };
                if is_recoverable(&next, spec, self.horizon) {
                    options.push((load_key(state.step_load(spec, &mv)), next));
                }
            }
            self.charge(options.len() * combos.len())?;
            let mut grown = Vec::with_capacity(combos.len() * options.len());
            for (l, prefix) in &combos {
                for (dl, s) in &options {
                    let mut v = prefix.clone();
                    v.push(s.clone());
                    grown.push((l + dl, v));
                }
            }
            let mut seen = HashSet::new();
            grown.retain(|x| seen.insert(x.clone()));
            combos = grown;
        }
        Ok(combos)
    }

    fn all_loads(
        &mut self,
        states: Vec<ClusterState>,
        memo: &mut HashMap<Vec<ClusterState>, Rc<HashSet<Vec<i64>>>>,
    ) -> Result<Rc<HashSet<Vec<i64>>>> {
        let t = states.first().map_or(self.horizon, ClusterState::t);
        if t >= self.horizon {
            return Ok(Rc::new(HashSet::from([Vec::new()])));
        }
        if let Some(hit) = memo.get(&states) {
            return Ok(hit.clone());
        }
        let mut out = HashSet::new();
        for (l, next) in self.successors(&states)? {
            for tail in self.all_loads(next, memo)?.iter() {
                let mut v = Vec::with_capacity(tail.len() + 1);
                v.push(l);
                v.extend_from_slice(tail);
                out.insert(v);
            }
        }
        let out = Rc::new(out);
        memo.insert(states, out.clone());
        Ok(out)
    }

    fn reaches(
        &mut self,
        states: Vec<ClusterState>,
        target: &[i64],
        tol: i64,
        dead: &mut HashSet<Vec<ClusterState>>,
    ) -> Result<bool> {
        let t = states.first().map_or(self.horizon, ClusterState::t);
        if t >= self.horizon {
            return Ok(true);
        }
        if dead.contains(&states) {
            return Ok(false);
        }
        for (l, next) in self.successors(&states)? {
            if (l - target[t]).abs() <= tol && self.reaches(next, target, tol, dead)? {
                return Ok(true);
            }
        }
        dead.insert(states);
        Ok(false)
    }
}

const SEARCH_BUDGET: usize = 50_000_000;

/// Every flexible load profile the cluster model can produce, in kWh.
pub fn enumerate_plasticity(arrivals: &ArrivalSeries, registry: &ClusterRegistry) -> Result<Vec<Vec<f64>>> {
    let mut search = Search::new(arrivals, registry, SEARCH_BUDGET);
    if search.specs.is_empty() {
        return Ok(vec![vec![0.0; arrivals.horizon]]);
    }
    let init = search.initial()?;
    if !init.iter().zip(&search.specs).all(|(s, spec)| is_recoverable(s, spec, search.horizon)) {
        return Ok(Vec::new());
    }
    let set = search.all_loads(init, &mut HashMap::new())?;
    let mut out: Vec<Vec<f64>> = set
        .iter()
        .map(|v| v.iter().map(|&k| k as f64 / LOAD_SCALE).collect())
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite loads"));
    Ok(out)
}

/// Whether `load` is in the total plasticity set given inflexible demand.
pub fn plasticity_contains(
    load: &[f64],
    inflexible: &[f64],
    arrivals: &ArrivalSeries,
    registry: &ClusterRegistry,
) -> Result<bool> {
    let h = arrivals.horizon;
    if load.len() != h || inflexible.len() != h {
        return Err(Error::Domain("load profile must cover the full horizon".into()));
    }
    let target: Vec<i64> = load.iter().zip(inflexible).map(|(l, i)| load_key(l - i)).collect();
    let mut search = Search::new(arrivals, registry, SEARCH_BUDGET);
    if search.specs.is_empty() {
        return Ok(target.iter().all(|&k| k.abs() <= 1));
    }
    let init = search.initial()?;
    if !init.iter().zip(&search.specs).all(|(s, spec)| is_recoverable(s, spec, h)) {
        return Ok(false);
    }
    search.reaches(init, &target, 1, &mut HashSet::new())
}

/// Occupancy and cumulative arrival traces suitable for [`load_via_lemma`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LemmaTrace {
    pub n: Vec<Vec<u64>>,
    pub a: Vec<Vec<u64>>,
}

impl LemmaTrace {
    pub fn record(&mut self, state: &ClusterState) {
        self.n.push(state.lemma_occupancy());
        self.a.push(state.lemma_arrivals());
    }
}
