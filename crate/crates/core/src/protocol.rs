//! Anonymous direct-load-scheduling message flow.
//!
//! Collectors aggregate clustered arrivals into per-cell counts, the
//! aggregator broadcasts the fraction of each cell that should move, and each
//! appliance decides on its own with a private coin.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{quantize_request, Assignment, ClusterKind, ClusterRegistry, ClusterSpec, QuantizationGrid};
use crate::dynamics::{feasible_move_targets, steps_to_target, ClusterMoves, ClusterState, MovePlan};
use crate::error::{Error, Result};
use crate::population::{ApplianceRequest, ArrivalStatistics, Category, CellKey, ParticipationModel};
use crate::scheduler::{dispatch_realtime, plan_load, DispatchContext, DispatchMode, States};

/// Uplink wire record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UplinkRecord {
    pub t: usize,
    pub v: Category,
    pub q: usize,
    pub x: usize,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UplinkBatch {
    pub t: usize,
    pub records: Vec<UplinkRecord>,
}

impl UplinkBatch {
    pub fn total(&self) -> u64 {
        self.records.iter().map(|r| r.n).sum()
    }

    /// Merges two batches of the same step; order does not matter.
    pub fn merge(&self, other: &UplinkBatch) -> UplinkBatch {
        let mut acc: BTreeMap<(Category, usize, usize), u64> = BTreeMap::new();
        for r in self.records.iter().chain(&other.records) {
            *acc.entry((r.v, r.q, r.x)).or_insert(0) += r.n;
        }
        UplinkBatch {
            t: self.t,
            records: acc
                .into_iter()
                .map(|((v, q, x), n)| UplinkRecord { t: self.t, v, q, x, n })
                .collect(),
        }
    }

    /// Arrival counts per state for one cluster.
    pub fn arrivals_for(&self, category: Category, cluster: usize, states: usize) -> Vec<u64> {
        let mut out = vec![0; states];
        for r in self.records.iter().filter(|r| r.v == category && r.q == cluster && r.x < states) {
            out[r.x] += r.n;
        }
        out
    }
}

/// Aggregates the assignments arriving at `t` into anonymous cell counts.
pub fn collector_step(t: usize, arrivals: &[Assignment]) -> UplinkBatch {
    let mut acc: BTreeMap<(Category, usize, usize), u64> = BTreeMap::new();
    for a in arrivals.iter().filter(|a| a.arrival == t) {
        *acc.entry((a.category, a.cluster, a.state)).or_insert(0) += 1;
    }
    UplinkBatch {
        t,
        records: acc
            .into_iter()
            .map(|((v, q, x), n)| UplinkRecord { t, v, q, x, n })
            .collect(),
    }
}

/// Downlink wire record: members of cohort `c` in state `x` move to `to`
/// with probability `p`. NID rows use `x = 0`, `to = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownlinkRecord {
    pub t: usize,
    pub v: Category,
    pub q: usize,
    pub c: usize,
    pub x: usize,
    pub to: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispatchTable {
    pub t: usize,
    pub rows: Vec<DownlinkRecord>,
}

type RowKey = (Category, usize, usize, usize);

impl DispatchTable {
    /// Rows grouped by (category, cluster, cohort, state).
    pub fn index(&self) -> HashMap<RowKey, Vec<(usize, f64)>> {
        let mut out: HashMap<RowKey, Vec<(usize, f64)>> = HashMap::new();
        for r in &self.rows {
            out.entry((r.v, r.q, r.c, r.x)).or_default().push((r.to, r.p));
        }
        out
    }
}

/// Turns a plan into per-row move probabilities m / n.
pub fn broadcast_table(t: usize, plan: &MovePlan, states: &States) -> Result<DispatchTable> {
    let mut rows = Vec::new();
    for (&(v, q), moves) in plan {
        let state = states
            .get(&(v, q))
            .ok_or_else(|| Error::Protocol(format!("plan names unknown cluster {v}/{q}")))?;
        match (moves, state) {
            (ClusterMoves::Nid(m), ClusterState::Nid(s)) => {
                if *m > s.pending() {
                    return Err(Error::InfeasibleMove {
                        t,
                        cluster: q,
                        state: 0,
                        detail: format!("{m} activations for {} pending", s.pending()),
                    });
                }
                // Oldest cohorts first.
                let mut left = *m;
                for (c, n) in s.pending_cohorts() {
                    if left == 0 {
                        break;
                    }
                    let k = left.min(n);
                    left -= k;
                    rows.push(DownlinkRecord {
                        t,
                        v,
                        q,
                        c,
                        x: 0,
                        to: 1,
                        p: k as f64 / n as f64,
                    });
                }
            }
            (ClusterMoves::Battery(list), ClusterState::Battery(s)) => {
                let mut out_of: BTreeMap<(usize, usize), u64> = BTreeMap::new();
                for mv in list.iter().filter(|m| m.count > 0) {
                    *out_of.entry((mv.cohort, mv.from)).or_insert(0) += mv.count;
                }
                for (&(c, x), &k) in &out_of {
                    let n = s.cohorts.get(&c).map_or(0, |m| m[x]);
                    if k > n {
                        return Err(Error::InfeasibleMove {
                            t,
                            cluster: q,
                            state: x,
                            detail: format!("{k} moves out of {n} members"),
                        });
                    }
                }
                let mut acc: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
                for mv in list.iter().filter(|m| m.count > 0) {
                    *acc.entry((mv.cohort, mv.from, mv.to)).or_insert(0) += mv.count;
                }
                for ((c, x, to), k) in acc {
                    let n = s.cohorts[&c][x];
                    rows.push(DownlinkRecord {
                        t,
                        v,
                        q,
                        c,
                        x,
                        to,
                        p: k as f64 / n as f64,
                    });
                }
            }
            _ => return Err(Error::Protocol(format!("plan kind does not match cluster {v}/{q}"))),
        }
    }
    Ok(DispatchTable { t, rows })
}

/// One appliance. Its identity never leaves the struct.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplianceAgent {
    id: u64,
    pub category: Category,
    pub cluster: usize,
    /// Arrival step, shared by the cohort.
    pub cohort: usize,
    /// Battery state, or 0 pending / 1 started for NID.
    pub state: usize,
    pub started: Option<usize>,
}

impl ApplianceAgent {
    pub fn new(assignment: &Assignment) -> Self {
        Self {
            id: assignment.request,
            category: assignment.category,
            cluster: assignment.cluster,
            cohort: assignment.arrival,
            state: assignment.state,
            started: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Load drawn at step `t` by a started NID job.
    pub fn pulse_load(&self, spec: &ClusterSpec, t: usize) -> f64 {
        match (self.started, &spec.kind) {
            (Some(s), ClusterKind::Nid(n)) if t >= s => n.at(t - s),
            _ => 0.0,
        }
    }

    fn row_key(&self) -> RowKey {
        (self.category, self.cluster, self.cohort, self.state)
    }

    /// The move this agent must make now to keep its deadline, if any.
    fn must_move(&self, spec: &ClusterSpec, t: usize, horizon: usize) -> Result<Option<usize>> {
        match &spec.kind {
            ClusterKind::Nid(n) => {
                let due = self.cohort + n.max_delay <= t || t + 1 >= horizon;
                Ok((self.state == 0 && due).then_some(1))
            }
            ClusterKind::Battery(_) => {
                let deadline = (self.cohort + spec.laxity()).min(horizon);
                let after = deadline.saturating_sub(t + 1);
                if steps_to_target(spec, self.state)? <= after {
                    return Ok(None);
                }
                for y in feasible_move_targets(spec, self.state)? {
                    if y > self.state && steps_to_target(spec, y)? <= after {
                        return Ok(Some(y));
                    }
                }
                Err(Error::DeadlineViolation {
                    t,
                    cluster: spec.index,
                    detail: format!("agent in state {} cannot recover", self.state),
                })
            }
        }
    }

    /// Whether moving to `to` keeps the deadline reachable.
    fn allowed(&self, spec: &ClusterSpec, to: usize, t: usize, horizon: usize) -> Result<bool> {
        match &spec.kind {
            ClusterKind::Nid(_) => Ok(self.state == 0 && to == 1),
            ClusterKind::Battery(_) => {
                let deadline = (self.cohort + spec.laxity()).min(horizon);
                let after = deadline.saturating_sub(t + 1);
                Ok(feasible_move_targets(spec, self.state)?.contains(&to) && steps_to_target(spec, to)? <= after)
            }
        }
    }

    fn apply(&mut self, spec: &ClusterSpec, to: usize, t: usize) -> f64 {
        let from = self.state;
        self.state = to;
        match &spec.kind {
            ClusterKind::Nid(_) => {
                self.started = Some(t);
                0.0
            }
            ClusterKind::Battery(_) => (to as f64 - from as f64) * spec.energy_step,
        }
    }
}

/// Outcome of one agent's reaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reaction {
    pub from: usize,
    pub to: usize,
    /// Battery energy drawn at this step; NID pulses are read from the agent.
    pub energy: f64,
}

/// Samples the agent's move from its row of the table.
pub fn agent_react<R: Rng + ?Sized>(
    agent: &mut ApplianceAgent,
    spec: &ClusterSpec,
    table: &HashMap<RowKey, Vec<(usize, f64)>>,
    t: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Option<Reaction>> {
    let mut choice = None;
    if let Some(row) = table.get(&agent.row_key()) {
        let total: f64 = row.iter().map(|r| r.1).sum();
        if total > 1.0 + 1e-9 || row.iter().any(|r| r.1 < 0.0) {
            return Err(Error::Protocol(format!("row probabilities sum to {total}")));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(to, p) in row {
            acc += p;
            if u < acc {
                choice = Some(to);
                break;
            }
        }
    }
    resolve(agent, spec, choice, t, horizon)
}

fn resolve(
    agent: &mut ApplianceAgent,
    spec: &ClusterSpec,
    choice: Option<usize>,
    t: usize,
    horizon: usize,
) -> Result<Option<Reaction>> {
    let choice = match choice {
        Some(to) if agent.allowed(spec, to, t, horizon)? => Some(to),
        _ => None,
    };
    let target = match choice {
        Some(to) => Some(to),
        None => agent.must_move(spec, t, horizon)?,
    };
    Ok(target.map(|to| {
        let from = agent.state;
        let energy = agent.apply(spec, to, t);
        Reaction { from, to, energy }
    }))
}

/// Expected arrivals per cell per unit intensity, participation included.
pub fn cell_probabilities(
    stats: &ArrivalStatistics,
    participation: &ParticipationModel,
    registry: &ClusterRegistry,
    grid: &QuantizationGrid,
) -> Result<BTreeMap<CellKey, f64>> {
    stats.validate()?;
    let mut out = BTreeMap::new();
    let mut add = |req: ApplianceRequest, w: f64| -> Result<()> {
        if w <= 0.0 {
            return Ok(());
        }
        let a = quantize_request(&req, registry, grid)?;
        let p = participation.probability(a.category, a.cluster);
        let key = CellKey {
            category: a.category,
            cluster: a.cluster,
            state: a.state,
        };
        *out.entry(key).or_insert(0.0) += w * p;
        Ok(())
    };
    let base = ApplianceRequest {
        id: 0,
        category: stats.category,
        arrival: 0,
        initial_charge: 0.0,
        energy: 0.0,
        deadline: 0.0,
        target_fraction: 1.0,
        max_rate: 1.0,
        profile: Vec::new(),
    };
    for (lax, wl) in stats.laxity.iter() {
        if stats.category == Category::Nid {
            if stats.profiles.is_empty() {
                let rate = stats.pulse_rate.unwrap_or(1.0);
                for (e, we) in stats.energy.iter() {
                    let profile = crate::population::constant_rate_pulse(e, rate);
                    add(
                        ApplianceRequest {
                            energy: e,
                            deadline: lax,
                            profile,
                            ..base.clone()
                        },
                        wl * we,
                    )?;
                }
            } else {
                for p in &stats.profiles {
                    add(
                        ApplianceRequest {
                            energy: p.profile.iter().sum(),
                            deadline: lax,
                            profile: p.profile.clone(),
                            ..base.clone()
                        },
                        wl * p.weight,
                    )?;
                }
            }
            continue;
        }
        for (e, we) in stats.energy.iter() {
            for (s, ws) in stats.initial_charge.iter() {
                for (rho, wr) in stats.target_fraction.iter() {
                    for (g, wg) in stats.max_rate.iter() {
                        add(
                            ApplianceRequest {
                                energy: e,
                                initial_charge: (s * e).clamp(0.0, e),
                                deadline: lax,
                                target_fraction: rho,
                                max_rate: g,
                                ..base.clone()
                            },
                            wl * we * ws * wr * wg,
                        )?;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Expected uplink count Σ_v Σ_q Σ_x E{∂a_x(t)} at step `t`.
pub fn expected_uplink_rate(
    stats: &[ArrivalStatistics],
    participation: &ParticipationModel,
    registry: &ClusterRegistry,
    grid: &QuantizationGrid,
    t: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for s in stats {
        let lambda = s.intensity_at(t);
        if lambda == 0.0 {
            continue;
        }
        let cells = cell_probabilities(s, participation, registry, grid)?;
        total += lambda * cells.values().sum::<f64>();
    }
    Ok(total)
}

/// Expected number of nonempty uplink records at step `t`.
pub fn expected_uplink_records(
    stats: &[ArrivalStatistics],
    participation: &ParticipationModel,
    registry: &ClusterRegistry,
    grid: &QuantizationGrid,
    t: usize,
) -> Result<f64> {
    let mut lambda: BTreeMap<CellKey, f64> = BTreeMap::new();
    for s in stats {
        for (k, p) in cell_probabilities(s, participation, registry, grid)? {
            *lambda.entry(k).or_insert(0.0) += s.intensity_at(t) * p;
        }
    }
    Ok(lambda.values().map(|l| 1.0 - (-l).exp()).sum())
}

pub fn write_uplink<W: Write>(batch: &UplinkBatch, mut out: W) -> Result<()> {
    for r in &batch.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_downlink<W: Write>(table: &DispatchTable, mut out: W) -> Result<()> {
    for r in &table.rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_uplink<R: BufRead>(input: R) -> Result<Vec<UplinkRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProtocolOptions {
    /// Movers per row drawn without replacement (exact counts) instead of
    /// independent coins.
    pub variance_reduction: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolRun {
    /// Metered total load per step.
    pub load: Vec<f64>,
    pub flexible: Vec<f64>,
    /// Load the aggregator expected from its own bookkeeping.
    pub planned_flexible: Vec<f64>,
    pub uplink_records: Vec<usize>,
    pub uplink_arrivals: Vec<u64>,
    pub downlink_records: Vec<usize>,
    /// Agent counts per cell at the start of each step, after arrivals.
    pub occupancy: Vec<BTreeMap<CellKey, u64>>,
    /// Planned and realized movers per downlink row.
    pub row_outcomes: Vec<RowOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowOutcome {
    pub record: DownlinkRecord,
    pub planned: f64,
    pub realized: u64,
}

fn agent_occupancy(agents: &[ApplianceAgent], t: usize) -> BTreeMap<CellKey, u64> {
    let mut occ = BTreeMap::new();
    for a in agents.iter().filter(|a| a.cohort <= t) {
        *occ.entry(CellKey {
            category: a.category,
            cluster: a.cluster,
            state: a.state,
        })
        .or_insert(0) += 1;
    }
    occ
}

/// Closed-loop run driven only through protocol messages. The aggregator
/// plans on its own bookkeeping; agents react with private randomness.
pub fn run_protocol(
    ctx: &DispatchContext,
    assignments: &[Assignment],
    mode: DispatchMode,
    options: ProtocolOptions,
) -> Result<ProtocolRun> {
    let horizon = ctx.market.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut agents: Vec<ApplianceAgent> = assignments
        .iter()
        .filter(|a| a.arrival < horizon)
        .map(ApplianceAgent::new)
        .collect();
    for a in &agents {
        if ctx.registry.get(a.category, a.cluster).is_none() {
            return Err(Error::Assignment(format!("agent in unknown cluster {}/{}", a.category, a.cluster)));
        }
    }
    let mut run = ProtocolRun::default();
    let mut believed = States::new();
    let mut batch = collector_step(0, assignments);
    for spec in ctx.registry.iter() {
        let a = batch.arrivals_for(spec.category, spec.index, spec.state_count());
        believed.insert((spec.category, spec.index), ClusterState::new(spec, 0, &a)?);
    }
    let mut planned_total: Vec<f64> = Vec::with_capacity(horizon);

    for t in 0..horizon {
        run.uplink_records.push(batch.records.len());
        run.uplink_arrivals.push(batch.total());
        run.occupancy.push(agent_occupancy(&agents, t));

        let plan = dispatch_realtime(&believed, ctx, t, &planned_total, mode)?;
        let planned = plan_load(&believed, ctx.registry, &plan)?;
        run.planned_flexible.push(planned);
        planned_total.push(planned + ctx.inflexible[t]);
        let table = broadcast_table(t, &plan, &believed)?;
        run.downlink_records.push(table.rows.len());
        let index = table.index();

        let mut realized: HashMap<(RowKey, usize), u64> = HashMap::new();
        let mut energy = 0.0;
        let active: Vec<usize> = (0..agents.len()).filter(|&i| agents[i].cohort <= t).collect();
        if options.variance_reduction {
            // Exact number of movers per row, chosen uniformly.
            let mut by_row: BTreeMap<RowKey, Vec<usize>> = BTreeMap::new();
            for &i in &active {
                by_row.entry(agents[i].row_key()).or_default().push(i);
            }
            let mut chosen: HashMap<usize, usize> = HashMap::new();
            let mut keys: Vec<&RowKey> = index.keys().collect();
            keys.sort();
            for key in keys {
                let Some(members) = by_row.get_mut(key) else { continue };
                members.shuffle(&mut rng);
                let n = members.len() as f64;
                let mut at = 0;
                for &(to, p) in &index[key] {
                    let k = ((p * n).round() as usize).min(members.len() - at);
                    for &i in &members[at..at + k] {
                        chosen.insert(i, to);
                    }
                    at += k;
                }
            }
            for &i in &active {
                let spec = ctx.registry.get(agents[i].category, agents[i].cluster).expect("checked");
                let key = agents[i].row_key();
                if let Some(r) = resolve(&mut agents[i], spec, chosen.get(&i).copied(), t, horizon)? {
                    energy += r.energy;
                    *realized.entry((key, r.to)).or_insert(0) += 1;
                }
            }
        } else {
            for &i in &active {
                let spec = ctx.registry.get(agents[i].category, agents[i].cluster).expect("checked");
                let key = agents[i].row_key();
                if let Some(r) = agent_react(&mut agents[i], spec, &index, t, horizon, &mut rng)? {
                    energy += r.energy;
                    *realized.entry((key, r.to)).or_insert(0) += 1;
                }
            }
        }
        for r in &table.rows {
            let n = match &believed[&(r.v, r.q)] {
                ClusterState::Nid(s) => s
                    .pending_cohorts()
                    .iter()
                    .find(|(c, _)| *c == r.c)
                    .map_or(0, |p| p.1),
                ClusterState::Battery(s) => s.cohorts.get(&r.c).map_or(0, |m| m[r.x]),
            };
            run.row_outcomes.push(RowOutcome {
                record: *r,
                planned: r.p * n as f64,
                realized: realized.get(&((r.v, r.q, r.c, r.x), r.to)).copied().unwrap_or(0),
            });
        }
        for a in &agents {
            if let Some(spec) = ctx.registry.get(a.category, a.cluster) {
                energy += a.pulse_load(spec, t);
            }
        }
        run.flexible.push(energy);
        run.load.push(energy + ctx.inflexible[t]);

        batch = if t + 1 < horizon {
            collector_step(t + 1, assignments)
        } else {
            UplinkBatch {
                t: t + 1,
                records: Vec::new(),
            }
        };
        let mut next = States::new();
        for (key, state) in &believed {
            let spec = ctx.registry.get(key.0, key.1).expect("registered");
            let a = batch.arrivals_for(key.0, key.1, spec.state_count());
            let none = ClusterMoves::none_for(spec);
            next.insert(
                *key,
                crate::dynamics::step_state(state, spec, plan.get(key).unwrap_or(&none), &a)?,
            );
        }
        believed = next;
    }
    Ok(run)
}
