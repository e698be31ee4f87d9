//! Dense bounded-variable primal simplex.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c'x
//! subject to  a_i'x {<=, >=, =} b_i      for every constraint i
//!             l <= x <= u
//! ```
//!
//! Variables are shifted or mirrored so that every internal column lives in
//! `[0, u']`; nonbasic columns sit at either bound, which keeps upper bounds out
//! of the row set. Phase one minimizes the sum of artificials. Pricing is
//! Dantzig's rule until a run of degenerate pivots is seen, after which the
//! phase finishes under Bland's rule so it cannot cycle.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(Constraint { terms, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any bound or constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let gap = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Domain("bound vectors do not match variable count".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j] == f64::INFINITY {
                return Err(Error::Domain(format!(
                    "variable {j} has empty bounds [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::Domain(format!("variable {j} has non-finite cost")));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(Error::Domain(format!("constraint {i} has non-finite rhs")));
            }
            if let Some(&(j, _)) = c.terms.iter().find(|&&(j, a)| j >= n || !a.is_finite()) {
                return Err(Error::Domain(format!("constraint {i} references bad column {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the optimal objective to each constraint's rhs.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Value of the Lagrangian dual built from `duals`, or `None` when the
    /// multipliers are not dual feasible.
    pub fn dual_objective(&self, problem: &LpProblem) -> Option<f64> {
        let n = problem.num_vars();
        let mut reduced = problem.objective.clone();
        let mut value = 0.0;
        for (c, &y) in problem.constraints.iter().zip(&self.duals) {
            let sign_ok = match c.sense {
                Sense::Le => y <= 1e-7,
                Sense::Ge => y >= -1e-7,
                Sense::Eq => true,
            };
            if !sign_ok {
                return None;
            }
            value += y * c.rhs;
            for &(j, a) in &c.terms {
                reduced[j] -= a * y;
            }
        }
        for j in 0..n {
            let d = reduced[j];
            if d > 1e-7 {
                if problem.lower[j] == f64::NEG_INFINITY {
                    return None;
                }
                value += d * problem.lower[j];
            } else if d < -1e-7 {
                if problem.upper[j] == f64::INFINITY {
                    return None;
                }
                value += d * problem.upper[j];
            }
        }
        Some(value)
    }

    /// Absolute gap between primal and dual objectives.
    pub fn duality_gap(&self, problem: &LpProblem) -> f64 {
        match self.dual_objective(problem) {
            Some(d) => (self.objective - d).abs(),
            None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
    pub degenerate_streak: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            degenerate_streak: 50,
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    solve_lp_with(problem, SimplexOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, options: SimplexOptions) -> Result<LpSolution> {
    Ok(cold_solve(problem, options)?.1)
}

/// Solves from scratch, returning the final tableau when optimal.
fn cold_solve(problem: &LpProblem, options: SimplexOptions) -> Result<(Option<Tableau>, LpSolution)> {
    problem.validate()?;
    let mut tableau = Tableau::build(problem);
    let mut iterations = 0;

    if tableau.has_artificials() {
        tableau.set_phase_one_costs();
        let status = tableau.run(&options, &mut iterations);
        if status == LpStatus::IterationLimit {
            return Ok((None, tableau.failed(problem, status, iterations)));
        }
        if tableau.objective_value() > FEAS_TOL * (1.0 + tableau.rhs_scale) {
            return Ok((None, tableau.failed(problem, LpStatus::Infeasible, iterations)));
        }
        tableau.fix_artificials();
    }

    tableau.set_phase_two_costs();
    let status = tableau.run(&options, &mut iterations);
    if status != LpStatus::Optimal {
        return Ok((None, tableau.failed(problem, status, iterations)));
    }
    let sol = tableau.solution(problem, iterations);
    Ok((Some(tableau), sol))
}

/// An LP re-solved many times with only right-hand sides changing.
///
/// The last optimal basis stays dual feasible under rhs changes, so each
/// re-solve runs the dual simplex from it. Anything unexpected falls back to
/// a cold solve.
pub struct WarmLp {
    problem: LpProblem,
    options: SimplexOptions,
    tableau: Option<Tableau>,
    /// Right-hand sides the tableau currently represents.
    applied: Vec<f64>,
}

impl WarmLp {
    pub fn new(problem: LpProblem) -> Self {
        Self {
            problem,
            options: SimplexOptions::default(),
            tableau: None,
            applied: Vec::new(),
        }
    }

    pub fn problem(&self) -> &LpProblem {
        &self.problem
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) {
        self.problem.constraints[row].rhs = rhs;
    }

    pub fn solve(&mut self) -> Result<LpSolution> {
        if let Some(mut t) = self.tableau.take() {
            for (i, c) in self.problem.constraints.iter().enumerate() {
                let delta = c.rhs - self.applied[i];
                if delta != 0.0 {
                    t.shift_rhs(i, delta);
                }
            }
            let mut iterations = 0;
            let limit = 20 * (t.rows + t.cols);
            if t.dual_run(limit, &mut iterations) && t.run(&self.options, &mut iterations) == LpStatus::Optimal {
                let sol = t.solution(&self.problem, iterations);
                if self.problem.max_violation(&sol.x) <= FEAS_TOL * (1.0 + t.rhs_scale) {
                    self.applied = self.problem.constraints.iter().map(|c| c.rhs).collect();
                    self.tableau = Some(t);
                    return Ok(sol);
                }
            }
        }
        let (t, sol) = cold_solve(&self.problem, self.options)?;
        if t.is_some() {
            self.applied = self.problem.constraints.iter().map(|c| c.rhs).collect();
        }
        self.tableau = t;
        Ok(sol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColState {
    Basic,
    Lower,
    Upper,
}

/// How an original variable maps to internal columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = lower + col
    Shifted { col: usize, lower: f64 },
    /// x = upper - col
    Mirrored { col: usize, upper: f64 },
    /// x = plus - minus
    Split { plus: usize, minus: usize },
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols` matrix holding B^-1 A.
    a: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<ColState>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    phase_two_cost: Vec<f64>,
    reduced: Vec<f64>,
    artificial_start: usize,
    /// Sign applied to each original row to make its rhs nonnegative.
    row_sign: Vec<f64>,
    /// For each row, the column holding its identity entry and that entry's
    /// coefficient before any pivots (in the sign-flipped row).
    identity_col: Vec<(usize, f64)>,
    var_map: Vec<VarMap>,
    rhs_scale: f64,
}

impl Tableau {
    fn build(problem: &LpProblem) -> Self {
        let n = problem.num_vars();
        let m = problem.constraints.len();

        let mut var_map = Vec::with_capacity(n);
        let mut col_cost = Vec::new();
        let mut col_upper = Vec::new();
        for j in 0..n {
            let (l, u, c) = (problem.lower[j], problem.upper[j], problem.objective[j]);
            if l.is_finite() {
                let col = col_cost.len();
                col_cost.push(c);
                col_upper.push(u - l);
                var_map.push(VarMap::Shifted { col, lower: l });
            } else if u.is_finite() {
                let col = col_cost.len();
                col_cost.push(-c);
                col_upper.push(f64::INFINITY);
                var_map.push(VarMap::Mirrored { col, upper: u });
            } else {
                let plus = col_cost.len();
                col_cost.push(c);
                col_cost.push(-c);
                col_upper.push(f64::INFINITY);
                col_upper.push(f64::INFINITY);
                var_map.push(VarMap::Split { plus, minus: plus + 1 });
            }
        }
        let n_struct = col_cost.len();

        // Right-hand sides after moving the fixed parts of each variable.
        let mut rhs: Vec<f64> = problem.constraints.iter().map(|c| c.rhs).collect();
        for (i, c) in problem.constraints.iter().enumerate() {
            for &(j, a) in &c.terms {
                match var_map[j] {
                    VarMap::Shifted { lower, .. } => rhs[i] -= a * lower,
                    VarMap::Mirrored { upper, .. } => rhs[i] -= a * upper,
                    VarMap::Split { .. } => {}
                }
            }
        }
        let row_sign: Vec<f64> = rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();

        let slack_coef: Vec<Option<f64>> = problem
            .constraints
            .iter()
            .map(|c| match c.sense {
                Sense::Le => Some(1.0),
                Sense::Ge => Some(-1.0),
                Sense::Eq => None,
            })
            .collect();
        let n_slack = slack_coef.iter().filter(|s| s.is_some()).count();
        let needs_artificial: Vec<bool> = (0..m)
            .map(|i| match slack_coef[i] {
                Some(s) => s * row_sign[i] < 0.0,
                None => true,
            })
            .collect();
        let n_art = needs_artificial.iter().filter(|&&b| b).count();
        let artificial_start = n_struct + n_slack;
        let cols = artificial_start + n_art;

        let mut a = vec![0.0; m * cols];
        let mut basis = vec![0; m];
        let mut state = vec![ColState::Lower; cols];
        let mut upper = col_upper;
        upper.resize(cols, f64::INFINITY);
        let mut cost = col_cost;
        cost.resize(cols, 0.0);
        let mut identity_col = vec![(0, 0.0); m];

        let mut next_slack = n_struct;
        let mut next_art = artificial_start;
        for (i, c) in problem.constraints.iter().enumerate() {
            let sign = row_sign[i];
            let row = &mut a[i * cols..(i + 1) * cols];
            for &(j, coef) in &c.terms {
                match var_map[j] {
                    VarMap::Shifted { col, .. } => row[col] += sign * coef,
                    VarMap::Mirrored { col, .. } => row[col] -= sign * coef,
                    VarMap::Split { plus, minus } => {
                        row[plus] += sign * coef;
                        row[minus] -= sign * coef;
                    }
                }
            }
            if let Some(s) = slack_coef[i] {
                row[next_slack] = sign * s;
                if !needs_artificial[i] {
                    basis[i] = next_slack;
                    state[next_slack] = ColState::Basic;
                }
                identity_col[i] = (next_slack, sign * s);
                next_slack += 1;
            }
            if needs_artificial[i] {
                row[next_art] = 1.0;
                basis[i] = next_art;
                state[next_art] = ColState::Basic;
                if slack_coef[i].is_none() {
                    identity_col[i] = (next_art, 1.0);
                }
                next_art += 1;
            }
        }

        let beta: Vec<f64> = rhs.iter().zip(&row_sign).map(|(b, s)| b * s).collect();
        let rhs_scale = beta.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let phase_two_cost = cost.clone();

        Self {
            rows: m,
            cols,
            a,
            beta,
            basis,
            state,
            upper,
            cost,
            phase_two_cost,
            reduced: vec![0.0; cols],
            artificial_start,
            row_sign,
            identity_col,
            var_map,
            rhs_scale,
        }
    }

    fn has_artificials(&self) -> bool {
        self.artificial_start < self.cols
    }

    fn set_phase_one_costs(&mut self) {
        for j in 0..self.cols {
            self.cost[j] = if j >= self.artificial_start { 1.0 } else { 0.0 };
        }
        self.refresh_reduced_costs();
    }

    fn set_phase_two_costs(&mut self) {
        self.cost.copy_from_slice(&self.phase_two_cost);
        self.refresh_reduced_costs();
    }

    /// Artificials are pinned at zero once phase one has driven them out.
    fn fix_artificials(&mut self) {
        for j in self.artificial_start..self.cols {
            self.upper[j] = 0.0;
            if self.state[j] == ColState::Upper {
                self.state[j] = ColState::Lower;
            }
        }
        for i in 0..self.rows {
            if self.basis[i] >= self.artificial_start {
                self.beta[i] = 0.0;
            }
        }
    }

    fn refresh_reduced_costs(&mut self) {
        self.reduced.copy_from_slice(&self.cost);
        for i in 0..self.rows {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.cols..(i + 1) * self.cols];
                for (d, &v) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * v;
                }
            }
        }
    }

    fn objective_value(&self) -> f64 {
        let mut value = 0.0;
        for i in 0..self.rows {
            value += self.cost[self.basis[i]] * self.beta[i];
        }
        for j in 0..self.cols {
            if self.state[j] == ColState::Upper {
                value += self.cost[j] * self.upper[j];
            }
        }
        value
    }

    fn entering_allowed(&self, j: usize) -> bool {
        // Artificials may leave but never re-enter.
        j < self.artificial_start && self.upper[j] > 0.0
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if !self.entering_allowed(j) {
                continue;
            }
            let d = self.reduced[j];
            let dir = match self.state[j] {
                ColState::Lower if d < -COST_TOL => 1.0,
                ColState::Upper if d > COST_TOL => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(b, _)| d.abs() > self.reduced[b].abs()) {
                best = Some((j, dir));
            }
        }
        best
    }

    fn run(&mut self, options: &SimplexOptions, iterations: &mut usize) -> LpStatus {
        let mut bland = false;
        let mut streak = 0;
        loop {
            if *iterations >= options.max_iterations {
                return LpStatus::IterationLimit;
            }
            let Some((enter, dir)) = self.choose_entering(bland) else {
                return LpStatus::Optimal;
            };
            *iterations += 1;

            // Ratio test over basic variables, then the entering bound flip.
            let mut step = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.rows {
                let alpha = self.a[i * self.cols + enter];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * alpha;
                let b = self.basis[i];
                let (limit, to_upper) = if rate < 0.0 {
                    (self.beta[i].max(0.0) / -rate, false)
                } else {
                    let ub = self.upper[b];
                    if ub == f64::INFINITY {
                        continue;
                    }
                    ((ub - self.beta[i]).max(0.0) / rate, true)
                };
                let better = match leave {
                    None => true,
                    Some(_) if limit < step - 1e-12 => true,
                    Some((r, _)) if limit <= step + 1e-12 => {
                        if bland {
                            b < self.basis[r]
                        } else {
                            alpha.abs() > self.a[r * self.cols + enter].abs()
                        }
                    }
                    Some(_) => false,
                };
                if better {
                    step = if leave.is_none() { limit } else { step.min(limit) };
                    leave = Some((i, to_upper));
                }
            }
            if self.upper[enter] <= step {
                leave = None;
                step = self.upper[enter];
            }
            if step == f64::INFINITY {
                return LpStatus::Unbounded;
            }

            if step <= 1e-12 {
                streak += 1;
                if streak > options.degenerate_streak {
                    bland = true;
                }
            } else {
                streak = 0;
            }

            for i in 0..self.rows {
                let alpha = self.a[i * self.cols + enter];
                if alpha != 0.0 {
                    self.beta[i] -= dir * alpha * step;
                }
            }

            match leave {
                None => {
                    self.state[enter] = if dir > 0.0 {
                        ColState::Upper
                    } else {
                        ColState::Lower
                    };
                }
                Some((r, to_upper)) => {
                    let leaving = self.basis[r];
                    let start = if self.state[enter] == ColState::Upper {
                        self.upper[enter]
                    } else {
                        0.0
                    };
                    self.state[leaving] = if to_upper {
                        ColState::Upper
                    } else {
                        ColState::Lower
                    };
                    self.state[enter] = ColState::Basic;
                    self.basis[r] = enter;
                    self.pivot(r, enter);
                    self.beta[r] = start + dir * step;
                }
            }
        }
    }

    /// Applies a change of `delta` to the rhs of original row `i`.
    fn shift_rhs(&mut self, i: usize, delta: f64) {
        let (col, coef) = self.identity_col[i];
        let d = self.row_sign[i] * delta / coef;
        for k in 0..self.rows {
            let v = self.a[k * self.cols + col];
            if v != 0.0 {
                self.beta[k] += v * d;
            }
        }
        self.rhs_scale = self.rhs_scale.max(delta.abs());
    }

    /// Dual simplex until every basic variable is within its bounds.
    /// Returns false on infeasibility or when `limit` pivots are exceeded.
    fn dual_run(&mut self, limit: usize, iterations: &mut usize) -> bool {
        let tol = FEAS_TOL * (1.0 + self.rhs_scale);
        loop {
            let mut pick: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let b = self.basis[i];
                let excess = if self.beta[i] < -tol {
                    -self.beta[i]
                } else if self.beta[i] > self.upper[b] + tol {
                    self.beta[i] - self.upper[b]
                } else {
                    continue;
                };
                if pick.is_none_or(|(_, e)| excess > e) {
                    pick = Some((i, excess));
                }
            }
            let Some((r, _)) = pick else {
                return true;
            };
            if *iterations >= limit {
                return false;
            }
            *iterations += 1;
            let leaving = self.basis[r];
            let below = self.beta[r] < 0.0;
            let target = if below { 0.0 } else { self.upper[leaving] };

            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.cols {
                if self.state[j] == ColState::Basic || !self.entering_allowed(j) {
                    continue;
                }
                let alpha = self.a[r * self.cols + j];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let up = self.state[j] == ColState::Lower;
                // Moving x_j changes beta_r by -alpha per unit.
                let helps = if below { (alpha < 0.0) == up } else { (alpha > 0.0) == up };
                if !helps {
                    continue;
                }
                let ratio = (self.reduced[j] / alpha).abs();
                let better = match enter {
                    None => true,
                    Some((k, best)) => {
                        ratio < best - 1e-12
                            || (ratio <= best + 1e-12 && alpha.abs() > self.a[r * self.cols + k].abs())
                    }
                };
                if better {
                    enter = Some((j, ratio));
                }
            }
            let Some((j, _)) = enter else {
                return false;
            };
            let alpha = self.a[r * self.cols + j];
            let delta = (self.beta[r] - target) / alpha;
            for i in 0..self.rows {
                let v = self.a[i * self.cols + j];
                if v != 0.0 {
                    self.beta[i] -= v * delta;
                }
            }
            let start = if self.state[j] == ColState::Upper { self.upper[j] } else { 0.0 };
            self.state[leaving] = if below { ColState::Lower } else { ColState::Upper };
            self.state[j] = ColState::Basic;
            self.basis[r] = j;
            self.pivot(r, j);
            self.beta[r] = start + delta;
        }
    }

    fn pivot(&mut self, r: usize, enter: usize) {
        let cols = self.cols;
        let inv = 1.0 / self.a[r * cols + enter];
        {
            let row = &mut self.a[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[enter] = 1.0;
        }
        let pivot_row: Vec<f64> = self.a[r * cols..(r + 1) * cols].to_vec();
        let nonzero: Vec<usize> = (0..cols).filter(|&j| pivot_row[j] != 0.0).collect();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let factor = self.a[i * cols + enter];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.a[i * cols..(i + 1) * cols];
            for &j in &nonzero {
                row[j] -= factor * pivot_row[j];
            }
            row[enter] = 0.0;
        }
        let factor = self.reduced[enter];
        if factor != 0.0 {
            for &j in &nonzero {
                self.reduced[j] -= factor * pivot_row[j];
            }
            self.reduced[enter] = 0.0;
        }
    }

    fn column_values(&self) -> Vec<f64> {
        let mut values = vec![0.0; self.cols];
        for j in 0..self.cols {
            if self.state[j] == ColState::Upper {
                values[j] = self.upper[j];
            }
        }
        for i in 0..self.rows {
            values[self.basis[i]] = self.beta[i].clamp(0.0, self.upper[self.basis[i]]);
        }
        values
    }

    fn primal(&self, values: &[f64]) -> Vec<f64> {
        self.var_map
            .iter()
            .map(|m| match *m {
                VarMap::Shifted { col, lower } => lower + values[col],
                VarMap::Mirrored { col, upper } => upper - values[col],
                VarMap::Split { plus, minus } => values[plus] - values[minus],
            })
            .collect()
    }

    fn duals(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let (col, coef) = self.identity_col[i];
                // reduced = -y'_i * coef, y_i = row_sign * y'_i
                let y_flipped = -self.reduced[col] / coef;
                self.row_sign[i] * y_flipped
            })
            .collect()
    }

    fn solution(&self, problem: &LpProblem, iterations: usize) -> LpSolution {
        let values = self.column_values();
        let x = self.primal(&values);
        LpSolution {
            status: LpStatus::Optimal,
            objective: problem.objective_value(&x),
            duals: self.duals(),
            x,
            iterations,
        }
    }

    fn failed(&self, problem: &LpProblem, status: LpStatus, iterations: usize) -> LpSolution {
        let values = self.column_values();
        let x = self.primal(&values);
        LpSolution {
            status,
            objective: problem.objective_value(&x),
            duals: vec![0.0; self.rows],
            x,
            iterations,
        }
    }
}
