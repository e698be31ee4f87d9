//! Brute-force LP optimum by enumerating every vertex of a bounded polytope.

use plasticity::lp::{LpProblem, Sense};

/// Returns `None` when the polytope is empty. Requires finite variable bounds.
pub fn vertex_enumeration_optimum(lp: &LpProblem) -> Option<f64> {
    let n = lp.num_vars();
    // Inequalities g'x <= h; equalities are always active.
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut row = vec![0.0; n];
        for &(j, a) in &c.terms {
            row[j] += a;
        }
        match c.sense {
            Sense::Le => ineq.push((row, c.rhs)),
            Sense::Ge => ineq.push((row.iter().map(|v| -v).collect(), -c.rhs)),
            Sense::Eq => eq.push((row, c.rhs)),
        }
    }
    for j in 0..n {
        assert!(lp.lower[j].is_finite() && lp.upper[j].is_finite());
        let mut up = vec![0.0; n];
        up[j] = 1.0;
        ineq.push((up, lp.upper[j]));
        let mut lo = vec![0.0; n];
        lo[j] = -1.0;
        ineq.push((lo, -lp.lower[j]));
    }
    // Any n linearly independent active rows, equalities included, so that
    // dependent equalities do not hide vertices.
    enumerate(lp, &ineq, &eq)
}

fn enumerate(
    lp: &LpProblem,
    ineq: &[(Vec<f64>, f64)],
    eq: &[(Vec<f64>, f64)],
) -> Option<f64> {
    let n = lp.num_vars();
    let all: Vec<(Vec<f64>, f64)> = eq.iter().chain(ineq.iter()).cloned().collect();
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let rows: Vec<(Vec<f64>, f64)> = subset.iter().map(|&i| all[i].clone()).collect();
        if let Some(x) = solve_square(rows) {
            if feasible(&x, ineq, eq) {
                let v = lp.objective_value(&x);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        if !next_combination(&mut subset, all.len()) {
            break;
        }
    }
    best
}

fn feasible(x: &[f64], ineq: &[(Vec<f64>, f64)], eq: &[(Vec<f64>, f64)]) -> bool {
    let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    ineq.iter().all(|(r, h)| dot(r) <= h + 1e-9 * (1.0 + h.abs()))
        && eq.iter().all(|(r, h)| (dot(r) - h).abs() <= 1e-9 * (1.0 + h.abs()))
}

fn solve_square(mut rows: Vec<(Vec<f64>, f64)>) -> Option<Vec<f64>> {
    let n = rows.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| rows[a].0[col].abs().total_cmp(&rows[b].0[col].abs()))?;
        if rows[pivot].0[col].abs() < 1e-10 {
            return None;
        }
        rows.swap(col, pivot);
        let (head, tail) = rows.split_at_mut(col + 1);
        let p = &head[col];
        for r in tail.iter_mut() {
            let f = r.0[col] / p.0[col];
            if f != 0.0 {
                for k in col..n {
                    r.0[k] -= f * p.0[k];
                }
                r.1 -= f * p.1;
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| rows[i].0[k] * x[k]).sum();
        x[i] = (rows[i].1 - s) / rows[i].0[i];
    }
    Some(x)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
