//! Continuous relaxation of the cluster model (or the tank baseline) as LP
//! rows over a window of steps.

use std::collections::BTreeMap;

use crate::clustering::{ClusterKind, ClusterRegistry, ClusterSpec};
use crate::dynamics::{feasible_move_targets, ClusterState};
use crate::error::{Error, Result};
use crate::lp::{LpProblem, LpSolution, Sense};
use crate::population::{ArrivalSeries, Category, CellKey};

pub type ClusterKey = (Category, usize);

/// Expected (or realized) arrivals per cell and step.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub horizon: usize,
    pub deltas: BTreeMap<CellKey, Vec<f64>>,
}

impl Forecast {
    pub fn from_series(series: &ArrivalSeries) -> Self {
        let deltas = series
            .series
            .keys()
            .map(|k| (*k, (0..series.horizon).map(|t| series.delta(k, t) as f64).collect()))
            .collect();
        Self {
            horizon: series.horizon,
            deltas,
        }
    }

    /// Cellwise mean of several realizations.
    pub fn mean(series: &[ArrivalSeries]) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::Domain("mean of an empty scenario set".into()))?;
        let mut out = Self::from_series(first);
        for s in &series[1..] {
            if s.horizon != out.horizon {
                return Err(Error::Domain("scenarios differ in horizon".into()));
            }
            for (k, v) in Self::from_series(s).deltas {
                let acc = out.deltas.entry(k).or_insert_with(|| vec![0.0; s.horizon]);
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        let n = series.len() as f64;
        for v in out.deltas.values_mut() {
            for a in v {
                *a /= n;
            }
        }
        Ok(out)
    }

    pub fn at(&self, category: Category, cluster: usize, state: usize, t: usize) -> f64 {
        self.deltas
            .get(&CellKey {
                category,
                cluster,
                state,
            })
            .and_then(|v| v.get(t))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total flexible energy (kWh) the forecast asks for.
    pub fn energy(&self, registry: &ClusterRegistry) -> f64 {
        let mut total = 0.0;
        for (k, v) in &self.deltas {
            let Some(spec) = registry.get(k.category, k.cluster) else {
                continue;
            };
            let per = match &spec.kind {
                ClusterKind::Nid(n) => n.energy(),
                ClusterKind::Battery(b) => b.capacity.saturating_sub(k.state) as f64 * spec.energy_step,
            };
            total += per * v.iter().sum::<f64>();
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cluster,
    /// Every request as a canonical battery with its total energy and deadline.
    Tank,
}

/// Steps `start..end` of a horizon of `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub horizon: usize,
}

impl Window {
    pub fn full(horizon: usize) -> Self {
        Self {
            start: 0,
            end: horizon,
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// constant + Σ coef · x_var
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
}

/// A quantity split among slots, one of which is implied by the total.
#[derive(Debug, Clone)]
pub(crate) struct Allocation {
    pub total: f64,
    /// Step each slot stands for; `None` is the slot past the window.
    pub steps: Vec<Option<usize>>,
    /// LP variable per slot; the implicit slot has none.
    pub vars: Vec<Option<usize>>,
}

impl Allocation {
    pub fn value(&self, x: &[f64], slot: usize) -> f64 {
        match self.vars[slot] {
            Some(j) => x[j],
            None => {
                self.total
                    - self
                        .vars
                        .iter()
                        .flatten()
                        .map(|&j| x[j])
                        .sum::<f64>()
            }
        }
    }

    pub fn value_at(&self, x: &[f64], t: usize) -> f64 {
        (0..self.steps.len())
            .filter(|&s| self.steps[s] == Some(t))
            .map(|s| self.value(x, s))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MoveVar {
    pub key: ClusterKey,
    pub cohort: usize,
    pub t: usize,
    pub from: usize,
    pub to: usize,
    pub var: usize,
}

/// Flexible load of every cluster over a window, as affine expressions.
#[derive(Debug, Clone)]
pub struct FlexModel {
    pub window: Window,
    /// Flexible load per window step (kWh).
    pub load: Vec<Affine>,
    /// Σ t · activity, used to prefer early schedules.
    pub activity: Affine,
    pub(crate) nid: Vec<(ClusterKey, Allocation)>,
    pub(crate) energy: Vec<(ClusterKey, usize, Allocation)>,
    pub(crate) moves: Vec<MoveVar>,
}

/// Options for the relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub kind: ModelKind,
    /// Allow downward moves for canonical and RIC batteries.
    pub v2g: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            kind: ModelKind::Cluster,
            v2g: false,
        }
    }
}

struct Builder<'a> {
    lp: &'a mut LpProblem,
    model: FlexModel,
}

impl Builder<'_> {
    fn local(&self, t: usize) -> Option<usize> {
        (t >= self.model.window.start && t < self.model.window.end).then(|| t - self.model.window.start)
    }

    /// Adds an allocation of `total` over slots; each slot lists (step, kWh per unit).
    fn allocate(&mut self, total: f64, slots: Vec<(Option<usize>, Vec<(usize, f64)>)>) -> Allocation {
        let implicit = slots.iter().position(|(s, _)| s.is_none()).unwrap_or(0);
        let mut vars = vec![None; slots.len()];
        let n_vars = slots.len() - 1;
        for (s, (step, contrib)) in slots.iter().enumerate() {
            if s == implicit {
                for &(t, w) in contrib {
                    if let Some(i) = self.local(t) {
                        self.model.load[i].constant += total * w;
                    }
                }
                if let Some(t) = step {
                    self.model.activity.constant += total * *t as f64;
                }
                continue;
            }
            let j = self.lp.add_var(0.0, 0.0, total);
            vars[s] = Some(j);
            for &(t, w) in contrib {
                if let Some(i) = self.local(t) {
                    self.model.load[i].terms.push((j, w));
                }
            }
            for &(t, w) in &slots[implicit].1 {
                if let Some(i) = self.local(t) {
                    self.model.load[i].terms.push((j, -w));
                }
            }
            let own = step.map_or(0.0, |t| t as f64);
            let base = slots[implicit].0.map_or(0.0, |t| t as f64);
            if own != base {
                self.model.activity.terms.push((j, own - base));
            }
        }
        if n_vars >= 2 {
            let terms = vars.iter().flatten().map(|&j| (j, 1.0)).collect();
            self.lp.add_constraint(terms, Sense::Le, total);
        }
        Allocation {
            total,
            steps: slots.iter().map(|(s, _)| *s).collect(),
            vars,
        }
    }

    fn nid_cohort(&mut self, key: ClusterKey, spec: &ClusterSpec, arrival: usize, count: f64) {
        let n = spec.nid().expect("NID spec");
        let w = self.model.window;
        let lo = arrival.max(w.start);
        let latest = (arrival + n.max_delay).min(w.horizon - 1);
        let mut slots = Vec::new();
        for s in lo..=latest.min(w.end - 1) {
            let contrib = n.profile.iter().enumerate().map(|(k, &l)| (s + k, l)).collect();
            slots.push((Some(s), contrib));
        }
        if latest >= w.end {
            slots.push((None, Vec::new()));
        }
        let alloc = self.allocate(count, slots);
        self.model.nid.push((key, alloc));
    }

    /// Energy `units` (in `unit` kWh each) spread over steps `lo..deadline`.
    fn energy_cohort(&mut self, key: ClusterKey, cohort: usize, units: f64, unit: f64, lo: usize, deadline: usize) {
        let w = self.model.window;
        let deadline = deadline.min(w.horizon);
        let lo = lo.max(w.start);
        let mut slots: Vec<(Option<usize>, Vec<(usize, f64)>)> = (lo..deadline.min(w.end))
            .map(|t| (Some(t), vec![(t, unit)]))
            .collect();
        if deadline > w.end || slots.is_empty() {
            slots.push((None, Vec::new()));
        }
        let alloc = self.allocate(units, slots);
        self.model.energy.push((key, cohort, alloc));
    }

    /// Move-matrix relaxation for one battery cohort.
    fn move_cohort(
        &mut self,
        key: ClusterKey,
        spec: &ClusterSpec,
        cohort: usize,
        occupancy: &[f64],
        v2g: bool,
    ) -> Result<()> {
        let b = spec.battery().expect("battery spec");
        let w = self.model.window;
        let deadline = (cohort + b.laxity).min(w.horizon);
        let lo = cohort.max(w.start);
        let stop = deadline.min(w.end);
        let states = b.capacity + 1;
        let downward = v2g && spec.category != Category::Is;
        let mut targets = Vec::with_capacity(states);
        for x in 0..states {
            let t: Vec<usize> = feasible_move_targets(spec, x)?
                .into_iter()
                .filter(|&y| downward || y > x)
                .collect();
            targets.push(t);
        }
        // Net inflow so far to each state, as (var, ±1) terms.
        let mut net: Vec<Vec<(usize, f64)>> = vec![Vec::new(); states];
        for t in lo..stop {
            let i = t - w.start;
            let mut new_net = net.clone();
            for x in 0..states {
                if targets[x].is_empty() {
                    continue;
                }
                let mut row = Vec::new();
                for &y in &targets[x] {
                    let j = self.lp.add_var(0.0, 0.0, f64::INFINITY);
                    row.push((j, 1.0));
                    new_net[x].push((j, -1.0));
                    new_net[y].push((j, 1.0));
                    self.model.load[i]
                        .terms
                        .push((j, (y as f64 - x as f64) * spec.energy_step));
                    self.model.activity.terms.push((j, t as f64));
                    self.model.moves.push(MoveVar {
                        key,
                        cohort,
                        t,
                        from: x,
                        to: y,
                        var: j,
                    });
                }
                // Moves out of x cannot exceed its occupancy at t.
                for &(j, a) in &net[x] {
                    row.push((j, -a));
                }
                self.lp.add_constraint(row, Sense::Le, occupancy[x]);
            }
            net = new_net;
        }
        if deadline <= w.end {
            for x in 0..b.target() {
                if occupancy[x] == 0.0 && net[x].is_empty() {
                    continue;
                }
                self.lp.add_constraint(net[x].clone(), Sense::Le, -occupancy[x]);
            }
        }
        Ok(())
    }

    fn battery_cohort(
        &mut self,
        key: ClusterKey,
        spec: &ClusterSpec,
        cohort: usize,
        occupancy: &[f64],
        options: ModelOptions,
    ) -> Result<()> {
        let b = spec.battery().expect("battery spec");
        let energy_form = options.kind == ModelKind::Tank || (spec.category == Category::Canonical && !options.v2g);
        if energy_form {
            let target = b.target();
            let units: f64 = occupancy
                .iter()
                .enumerate()
                .map(|(x, &n)| n * target.saturating_sub(x) as f64)
                .sum();
            if units > 0.0 {
                self.energy_cohort(key, cohort, units, spec.energy_step, cohort, cohort + b.laxity);
            }
            Ok(())
        } else {
            self.move_cohort(key, spec, cohort, occupancy, options.v2g)
        }
    }
}

/// Adds the flexible-load relaxation of every cluster to `lp`.
///
/// With `states`, each listed cluster starts from its bookkept state at
/// `window.start` and the forecast supplies arrivals after that step.
/// Without, every arrival in the window comes from the forecast.
pub fn build_flex(
    lp: &mut LpProblem,
    registry: &ClusterRegistry,
    states: Option<&BTreeMap<ClusterKey, ClusterState>>,
    forecast: &Forecast,
    window: Window,
    options: ModelOptions,
) -> Result<FlexModel> {
    if window.is_empty() || window.end > window.horizon {
        return Err(Error::Domain(format!("bad window {window:?}")));
    }
    if states.is_some() && options.kind == ModelKind::Tank {
        return Err(Error::Domain("the tank model only plans from an empty start".into()));
    }
    let mut b = Builder {
        lp,
        model: FlexModel {
            window,
            load: vec![Affine::default(); window.len()],
            activity: Affine::default(),
            nid: Vec::new(),
            energy: Vec::new(),
            moves: Vec::new(),
        },
    };
    let first_forecast = if states.is_some() { window.start + 1 } else { window.start };
    for spec in registry.iter() {
        let key = (spec.category, spec.index);
        let state = states.and_then(|s| s.get(&key));
        match &spec.kind {
            ClusterKind::Nid(n) => {
                if let Some(ClusterState::Nid(s)) = state {
                    for t in window.start..window.end {
                        b.model.load[t - window.start].constant += s.committed_load(&n.profile, t);
                    }
                    for (arrival, count) in s.pending_cohorts() {
                        if options.kind == ModelKind::Tank {
                            unreachable!();
                        }
                        b.nid_cohort(key, spec, arrival, count as f64);
                    }
                }
                for t in first_forecast..window.end {
                    let c = forecast.at(spec.category, spec.index, 0, t);
                    if c <= 0.0 {
                        continue;
                    }
                    match options.kind {
                        ModelKind::Cluster => b.nid_cohort(key, spec, t, c),
                        ModelKind::Tank => {
                            let deadline = t + n.max_delay + n.profile.len();
                            b.energy_cohort(key, t, c * n.energy(), 1.0, t, deadline);
                        }
                    }
                }
            }
            ClusterKind::Battery(bp) => {
                if let Some(ClusterState::Battery(s)) = state {
                    for (&c, members) in &s.cohorts {
                        let occ: Vec<f64> = members.iter().map(|&k| k as f64).collect();
                        b.battery_cohort(key, spec, c, &occ, options)?;
                    }
                }
                for t in first_forecast..window.end {
                    let occ: Vec<f64> = (0..=bp.capacity)
                        .map(|x| forecast.at(spec.category, spec.index, x, t))
                        .collect();
                    if occ.iter().all(|&v| v <= 0.0) {
                        continue;
                    }
                    b.battery_cohort(key, spec, t, &occ, options)?;
                }
            }
        }
    }
    Ok(b.model)
}

impl FlexModel {
    /// Fractional NID activations per cluster at step `t`.
    pub fn nid_activations(&self, sol: &LpSolution, t: usize) -> BTreeMap<ClusterKey, f64> {
        let mut out = BTreeMap::new();
        for (key, alloc) in &self.nid {
            *out.entry(*key).or_insert(0.0) += alloc.value_at(&sol.x, t);
        }
        out
    }

    /// Fractional energy (in cluster units) per (cluster, cohort) at step `t`.
    pub fn energy_at(&self, sol: &LpSolution, t: usize) -> BTreeMap<(ClusterKey, usize), f64> {
        let mut out = BTreeMap::new();
        for (key, cohort, alloc) in &self.energy {
            *out.entry((*key, *cohort)).or_insert(0.0) += alloc.value_at(&sol.x, t);
        }
        out
    }

    /// Fractional moves (cluster, cohort, from, to) at step `t`.
    pub fn moves_at(&self, sol: &LpSolution, t: usize) -> BTreeMap<ClusterKey, Vec<(usize, usize, usize, f64)>> {
        let mut out: BTreeMap<ClusterKey, Vec<_>> = BTreeMap::new();
        for m in self.moves.iter().filter(|m| m.t == t) {
            let v = sol.x[m.var];
            if v > 1e-9 {
                out.entry(m.key).or_default().push((m.cohort, m.from, m.to, v));
            }
        }
        out
    }

    /// Flexible load per window step at a solution.
    pub fn load_values(&self, x: &[f64]) -> Vec<f64> {
        self.load.iter().map(|a| a.eval(x)).collect()
    }
}
