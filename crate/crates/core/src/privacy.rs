//! Information leakage of the anonymous uplink.
//!
//! The aggregator sees only per-cell counts A, the noiseless sum of Bernoulli
//! arrival indicators D. I(A;D) = H(A) is bounded by Poisson entropies and
//! turned into a lower bound on the error of any reconstruction of D.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::population::CellKey;

const TAIL: f64 = 1e-12;

/// Entropy of Poisson(λ) in nats.
pub fn poisson_entropy(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("Poisson rate must be finite and nonnegative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let ln_l = lambda.ln();
    let mode = lambda.floor() as u64;
    let ln_fact: f64 = (2..=mode).map(|j| (j as f64).ln()).sum();
    let ln_mode = -lambda + mode as f64 * ln_l - ln_fact;
    let term = |lp: f64| -lp.exp() * lp;

    let mut h = term(ln_mode);
    // Upward from the mode; ratios λ/(k+1) < 1.
    let mut lp = ln_mode;
    let mut k = mode;
    loop {
        lp += ln_l - ((k + 1) as f64).ln();
        k += 1;
        let c = term(lp);
        h += c;
        let r = lambda / (k + 1) as f64;
        if lp < -1.0 && c / (1.0 - r) < TAIL {
            break;
        }
    }
    // Downward; ratios k/λ ≤ 1.
    let mut lp = ln_mode;
    let mut k = mode;
    while k > 0 {
        lp += (k as f64).ln() - ln_l;
        k -= 1;
        let c = term(lp);
        h += c;
        let r = k as f64 / lambda;
        if lp < -1.0 && r < 1.0 && c / (1.0 - r) < TAIL {
            break;
        }
    }
    Ok(h)
}

/// Arrival probabilities ε per appliance for each cell at one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrivalProbabilityModel {
    pub cells: BTreeMap<CellKey, Vec<f64>>,
}

impl ArrivalProbabilityModel {
    pub fn validate(&self) -> Result<()> {
        for (k, eps) in &self.cells {
            if eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::Domain(format!(
                    "arrival probabilities of {}/{}/{} must lie in [0, 1]",
                    k.category, k.cluster, k.state
                )));
            }
        }
        Ok(())
    }

    pub fn rate(&self, cell: &CellKey) -> f64 {
        self.cells.get(cell).map_or(0.0, |e| e.iter().sum())
    }
}

/// Σ_cells H(Poisson(Σ_i ε)).
pub fn mi_upper_bound(model: &ArrivalProbabilityModel) -> Result<f64> {
    model.validate()?;
    model.cells.values().map(|e| poisson_entropy(e.iter().sum())).sum()
}

/// Summed over independent steps.
pub fn mi_upper_bound_window(models: &[ArrivalProbabilityModel]) -> Result<f64> {
    models.iter().map(mi_upper_bound).sum()
}

/// 1 + (I + ln 2) / ln max Pr(A). Can be negative.
pub fn error_lower_bound(mi: f64, max_prob_a: f64) -> Result<f64> {
    if !(max_prob_a > 0.0 && max_prob_a < 1.0) {
        return Err(Error::Domain(format!(
            "most likely outcome probability must lie in (0, 1), got {max_prob_a}"
        )));
    }
    if !(mi >= 0.0) {
        return Err(Error::Domain(format!("mutual information must be nonnegative, got {mi}")));
    }
    Ok(1.0 + (mi + std::f64::consts::LN_2) / max_prob_a.ln())
}

/// Distribution of a sum of independent Bernoullis.
pub fn poisson_binomial(eps: &[f64]) -> Vec<f64> {
    let mut p = vec![1.0];
    for &e in eps {
        let mut next = vec![0.0; p.len() + 1];
        for (k, &v) in p.iter().enumerate() {
            next[k] += v * (1.0 - e);
            next[k + 1] += v * e;
        }
        p = next;
    }
    p
}

/// max Pr(A) when cells are independent.
pub fn max_prob_a(model: &ArrivalProbabilityModel) -> f64 {
    model
        .cells
        .values()
        .map(|e| poisson_binomial(e).into_iter().fold(0.0, f64::max))
        .product()
}

/// Same over a window of independent steps.
pub fn max_prob_a_window(models: &[ArrivalProbabilityModel]) -> f64 {
    models.iter().map(max_prob_a).product()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactLeakage {
    pub mi: f64,
    pub max_prob_a: f64,
    pub map_error: f64,
}

pub const MAX_APPLIANCES: usize = 8;
pub const MAX_CELLS: usize = 3;

/// Exhaustive oracle: `eps[i][c]` is the probability appliance i reports
/// into cell c. Every indicator is an independent Bernoulli.
pub fn exact_mi_enumeration(eps: &[Vec<f64>]) -> Result<ExactLeakage> {
    let n = eps.len();
    let cells = eps.first().map_or(0, Vec::len);
    if n > MAX_APPLIANCES || cells > MAX_CELLS {
        return Err(Error::Size(format!(
            "enumeration supports at most {MAX_APPLIANCES} appliances and {MAX_CELLS} cells"
        )));
    }
    if eps.iter().any(|r| r.len() != cells) {
        return Err(Error::Domain("every appliance needs one probability per cell".into()));
    }
    if eps.iter().flatten().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Domain("arrival probabilities must lie in [0, 1]".into()));
    }
    let bits: Vec<f64> = eps.iter().flatten().copied().collect();
    let radix = n + 1;
    let outcomes = radix.pow(cells as u32);
    let mut p_a = vec![0.0; outcomes];
    let mut best = vec![0.0f64; outcomes];
    let stride: Vec<usize> = (0..cells).map(|c| radix.pow(c as u32)).collect();

    fn walk(bits: &[f64], cells: usize, stride: &[usize], i: usize, p: f64, a: usize, p_a: &mut [f64], best: &mut [f64]) {
        if p == 0.0 {
            return;
        }
        if i == bits.len() {
            p_a[a] += p;
            best[a] = best[a].max(p);
            return;
        }
        let e = bits[i];
        let c = i % cells;
        walk(bits, cells, stride, i + 1, p * (1.0 - e), a, p_a, best);
        walk(bits, cells, stride, i + 1, p * e, a + stride[c], p_a, best);
    }
    if cells > 0 {
        walk(&bits, cells, &stride, 0, 1.0, 0, &mut p_a, &mut best);
    } else {
        p_a[0] = 1.0;
        best[0] = 1.0;
    }
    let mi = p_a.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>().max(0.0);
    Ok(ExactLeakage {
        mi,
        max_prob_a: p_a.iter().copied().fold(0.0, f64::max),
        map_error: (1.0 - best.iter().sum::<f64>()).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyRow {
    pub v: String,
    pub q: usize,
    pub x: usize,
    pub lambda: f64,
    #[serde(rename = "H_nats")]
    pub h_nats: f64,
    #[serde(rename = "H_bits")]
    pub h_bits: f64,
    pub mi_bound: f64,
    pub err_lower: f64,
    pub err_lower_clamped: f64,
    pub exact_mi: Option<f64>,
    pub map_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub rows: Vec<PrivacyRow>,
    /// Nats.
    pub mi_bound: f64,
    pub max_prob_a: f64,
    /// Raw bound; None when A is deterministic.
    pub err_lower: Option<f64>,
    pub exact: Option<ExactLeakage>,
}

impl PrivacyReport {
    pub fn mi_bound_bits(&self) -> f64 {
        self.mi_bound / std::f64::consts::LN_2
    }
}

/// Report over a window of steps; a single step is a window of one.
pub fn privacy_report(models: &[ArrivalProbabilityModel]) -> Result<PrivacyReport> {
    let mi = mi_upper_bound_window(models)?;
    let pmax = max_prob_a_window(models);
    let err = if pmax < 1.0 { Some(error_lower_bound(mi, pmax)?) } else { None };

    // Exact figures only for a single small step.
    let exact = match models {
        [m] => {
            let n = m.cells.values().map(Vec::len).max().unwrap_or(0);
            if n <= MAX_APPLIANCES && m.cells.len() <= MAX_CELLS && !m.cells.is_empty() {
                let eps: Vec<Vec<f64>> = (0..n)
                    .map(|i| m.cells.values().map(|e| e.get(i).copied().unwrap_or(0.0)).collect())
                    .collect();
                Some(exact_mi_enumeration(&eps)?)
            } else {
                None
            }
        }
        _ => None,
    };

    let mut lambda: BTreeMap<CellKey, f64> = BTreeMap::new();
    for m in models {
        for k in m.cells.keys() {
            *lambda.entry(*k).or_insert(0.0) += m.rate(k);
        }
    }
    let mut rows = Vec::new();
    for (k, _) in lambda {
        let h: f64 = models.iter().map(|m| poisson_entropy(m.rate(&k))).sum::<Result<f64>>()?;
        let l: f64 = models.iter().map(|m| m.rate(&k)).sum();
        rows.push(PrivacyRow {
            v: k.category.as_str().to_string(),
            q: k.cluster,
            x: k.state,
            lambda: l,
            h_nats: h,
            h_bits: h / std::f64::consts::LN_2,
            mi_bound: mi,
            err_lower: err.unwrap_or(f64::NAN),
            err_lower_clamped: err.map_or(f64::NAN, |e| e.max(0.0)),
            exact_mi: exact.map(|e| e.mi),
            map_err: exact.map(|e| e.map_error),
        });
    }
    Ok(PrivacyReport {
        rows,
        mi_bound: mi,
        max_prob_a: pmax,
        err_lower: err,
        exact,
    })
}

pub fn write_privacy_csv<W: Write>(report: &PrivacyReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
