//! Population response to a dynamic price signal.

use crate::clustering::ClusterRegistry;
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, Sense};
use crate::population::ArrivalSeries;
use crate::scheduler::model::{build_flex, Forecast, ModelOptions, Window};

/// Cheapest feasible load under per-step prices, preferring early schedules
/// among equally cheap ones. Returns inflexible plus flexible load.
pub fn price_response(
    prices: &[f64],
    arrivals: &ArrivalSeries,
    registry: &ClusterRegistry,
    inflexible: &[f64],
    options: ModelOptions,
) -> Result<Vec<f64>> {
    let horizon = arrivals.horizon;
    if prices.len() != horizon || inflexible.len() != horizon {
        return Err(Error::Domain("prices and inflexible load must cover the horizon".into()));
    }
    let forecast = Forecast::from_series(arrivals);
    let mut lp = LpProblem::new();
    let flex = build_flex(&mut lp, registry, None, &forecast, Window::full(horizon), options)?;
    let mut cost_terms = Vec::new();
    let mut cost_const = 0.0;
    for (t, a) in flex.load.iter().enumerate() {
        cost_const += prices[t] * a.constant;
        for &(j, c) in &a.terms {
            cost_terms.push((j, prices[t] * c));
        }
    }
    for &(j, c) in &cost_terms {
        lp.objective[j] += c;
    }
    let first = solve_lp(&lp)?;
    if !first.is_optimal() {
        return Err(Error::Lp {
            status: first.status,
            context: "price response".into(),
        });
    }
    // Second pass: among optimal schedules take the earliest one.
    let best = first.objective;
    lp.add_constraint(cost_terms, Sense::Le, best + 1e-9 * (1.0 + (best + cost_const).abs()));
    lp.objective.iter_mut().for_each(|c| *c = 0.0);
    for &(j, w) in &flex.activity.terms {
        lp.objective[j] += w;
    }
    let second = solve_lp(&lp)?;
    let x = if second.is_optimal() { second.x } else { first.x };
    Ok(flex
        .load_values(&x)
        .into_iter()
        .zip(inflexible)
        .map(|(f, i)| f + i)
        .collect())
}
