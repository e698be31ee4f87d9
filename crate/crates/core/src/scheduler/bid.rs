//! Day-ahead bid by sample average approximation, solved with a multi-cut
//! L-shaped decomposition.

use crate::clustering::ClusterRegistry;
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus, Sense, WarmLp};
use crate::scheduler::market::{Market, MarketPrices};
use crate::scheduler::model::{build_flex, FlexModel, Forecast, ModelKind, ModelOptions, Window};

/// Everything the ex-ante problem needs.
#[derive(Debug, Clone, Copy)]
pub struct BidInputs<'a> {
    pub registry: &'a ClusterRegistry,
    pub scenarios: &'a [Forecast],
    pub inflexible: &'a [f64],
    pub prices: &'a MarketPrices,
    pub market: Market,
    pub options: ModelOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidSolution {
    /// Unrounded bid per market interval.
    pub bid: Vec<f64>,
    /// Forward cost plus mean deviation cost at `bid`.
    pub objective: f64,
    pub lower_bound: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BendersOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BendersOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 500,
        }
    }
}

impl BidInputs<'_> {
    fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Domain("the scenario set is empty".into()));
        }
        if self.inflexible.len() != self.market.horizon {
            return Err(Error::Domain("inflexible load must cover the horizon".into()));
        }
        if self.scenarios.iter().any(|s| s.horizon != self.market.horizon) {
            return Err(Error::Domain("scenarios must share the market horizon".into()));
        }
        if self.prices.intervals() != self.market.intervals() {
            return Err(Error::Domain("prices must cover every market interval".into()));
        }
        Ok(())
    }
}

/// Deviation LP for one scenario with the bid entering through row rhs.
pub(crate) struct SecondStage {
    pub lp: WarmLp,
    pub flex: FlexModel,
    /// Balance row per interval: flex - dev⁺ + dev⁻ = rhs_offset + B_h.
    pub rows: Vec<usize>,
    pub offset: Vec<f64>,
}

impl SecondStage {
    /// Builds the deviation LP over `window` given fixed loads already
    /// realized in each interval before the window.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        registry: &ClusterRegistry,
        states: Option<&std::collections::BTreeMap<crate::scheduler::model::ClusterKey, crate::dynamics::ClusterState>>,
        forecast: &Forecast,
        window: Window,
        inflexible: &[f64],
        realized: &[f64],
        prices: &MarketPrices,
        market: Market,
        options: ModelOptions,
    ) -> Result<Self> {
        let mut lp = LpProblem::new();
        let flex = build_flex(&mut lp, registry, states, forecast, window, options)?;
        let first = market.interval_of(window.start);
        let last = market.interval_of(window.end - 1);
        let mut rows = Vec::new();
        let mut offset = Vec::new();
        for h in first..=last {
            let up = lp.add_var(prices.up[h], 0.0, f64::INFINITY);
            let down = lp.add_var(prices.down[h], 0.0, f64::INFINITY);
            let mut terms = vec![(up, -1.0), (down, 1.0)];
            let mut fixed = 0.0;
            for t in market.steps(h) {
                if t < window.start {
                    fixed += realized.get(t).copied().unwrap_or(0.0);
                } else if t < window.end {
                    let a = &flex.load[t - window.start];
                    fixed += a.constant + inflexible[t];
                    terms.extend_from_slice(&a.terms);
                }
            }
            rows.push(lp.add_constraint(terms, Sense::Eq, -fixed));
            offset.push(-fixed);
        }
        Ok(Self {
            lp: WarmLp::new(lp),
            flex,
            rows,
            offset,
        })
    }

    /// Optimal deviation cost and its gradient in the bid.
    pub fn evaluate(&mut self, bid: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        for (k, &r) in self.rows.iter().enumerate() {
            self.lp.set_rhs(r, self.offset[k] + bid[k]);
        }
        let sol = self.lp.solve()?;
        if !sol.is_optimal() {
            return Err(Error::Lp {
                status: sol.status,
                context: "scenario deviation problem".into(),
            });
        }
        let grad = self.rows.iter().map(|&r| sol.duals[r]).collect();
        Ok((sol.objective, grad, sol.x))
    }
}

/// Upper bound on the energy any scenario can place in each interval.
fn bid_caps(inputs: &BidInputs) -> Vec<f64> {
    let flex = inputs
        .scenarios
        .iter()
        .map(|s| s.energy(inputs.registry))
        .fold(0.0, f64::max);
    inputs
        .market
        .aggregate(inputs.inflexible)
        .into_iter()
        .map(|l| l.max(0.0) + flex)
        .collect()
}

/// Minimizes forward cost plus mean deviation cost over the scenarios.
pub fn solve_bid(inputs: &BidInputs, benders: BendersOptions) -> Result<BidSolution> {
    inputs.validate()?;
    let market = inputs.market;
    let h_count = market.intervals();
    let n = inputs.scenarios.len();
    let mut subs = inputs
        .scenarios
        .iter()
        .map(|s| {
            SecondStage::build(
                inputs.registry,
                None,
                s,
                Window::full(market.horizon),
                inputs.inflexible,
                &[],
                inputs.prices,
                market,
                inputs.options,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut master = LpProblem::new();
    let caps = bid_caps(inputs);
    let b_vars: Vec<usize> = (0..h_count)
        .map(|h| master.add_var(inputs.prices.forward[h], 0.0, caps[h]))
        .collect();
    let theta: Vec<usize> = (0..n)
        .map(|_| master.add_var(1.0 / n as f64, 0.0, f64::INFINITY))
        .collect();

    let forward = |bid: &[f64]| -> f64 { bid.iter().zip(&inputs.prices.forward).map(|(b, p)| b * p).sum() };
    let mut evaluate = |bid: &[f64], master: &mut LpProblem, theta_hat: Option<&[f64]>| -> Result<f64> {
        let mut expected = 0.0;
        for (s, sub) in subs.iter_mut().enumerate() {
            let (q, grad, _) = sub.evaluate(bid)?;
            expected += q / n as f64;
            if theta_hat.is_some_and(|t| q <= t[s] + benders.tolerance * (1.0 + q.abs())) {
                continue;
            }
            // θ_s ≥ Q_s(B̂) + g'(B - B̂)
            let linear: f64 = grad.iter().zip(bid).map(|(g, b)| g * b).sum();
            let mut terms = vec![(theta[s], 1.0)];
            terms.extend(grad.iter().enumerate().map(|(h, &g)| (b_vars[h], -g)));
            master.add_constraint(terms, Sense::Ge, q - linear);
        }
        Ok(forward(bid) + expected)
    };

    // Trust region in the sup norm around the incumbent.
    let scale = caps.iter().fold(0.0_f64, |a, &c| a.max(c)).max(1e-9);
    let mut radius = 0.25 * scale;
    let mut center: Vec<f64> = vec![0.0; h_count];
    let mut upper = evaluate(&center, &mut master, None)?;
    let mut lower = f64::NEG_INFINITY;
    let tol = |ub: f64| benders.tolerance * (1.0 + ub.abs());
    for iter in 1..=benders.max_iterations {
        for (h, &j) in b_vars.iter().enumerate() {
            master.lower[j] = (center[h] - radius).max(0.0);
            master.upper[j] = (center[h] + radius).min(caps[h]);
        }
        let sol = solve_lp(&master)?;
        if !sol.is_optimal() {
            return Err(Error::Lp {
                status: sol.status,
                context: "bid master problem".into(),
            });
        }
        let predicted = upper - sol.objective;
        if predicted <= tol(upper) {
            // No progress inside the box; check the model globally.
            for (h, &j) in b_vars.iter().enumerate() {
                master.lower[j] = 0.0;
                master.upper[j] = caps[h];
            }
            let global = solve_lp(&master)?;
            if !global.is_optimal() {
                return Err(Error::Lp {
                    status: global.status,
                    context: "bid master problem".into(),
                });
            }
            lower = lower.max(global.objective);
            if upper - lower <= tol(upper) {
                return Ok(BidSolution {
                    bid: center,
                    objective: upper,
                    lower_bound: lower,
                    iterations: iter,
                });
            }
            radius = (radius * 4.0).min(scale);
            continue;
        }
        let bid: Vec<f64> = b_vars.iter().map(|&j| sol.x[j].max(0.0)).collect();
        let theta_hat: Vec<f64> = theta.iter().map(|&j| sol.x[j]).collect();
        let value = evaluate(&bid, &mut master, Some(&theta_hat))?;
        let step = bid.iter().zip(&center).fold(0.0_f64, |a, (b, c)| a.max((b - c).abs()));
        if upper - value >= 0.1 * predicted {
            if upper - value >= 0.5 * predicted && step >= 0.99 * radius {
                radius = (radius * 2.0).min(scale);
            }
            center = bid;
            upper = value;
        } else {
            radius = (radius * 0.5).max(1e-9 * scale);
        }
    }
    Err(Error::Lp {
        status: LpStatus::IterationLimit,
        context: "bid decomposition did not converge".into(),
    })
}

/// Cluster-model bid.
pub fn optimize_bid(inputs: &BidInputs) -> Result<BidSolution> {
    let mut i = *inputs;
    i.options.kind = ModelKind::Cluster;
    solve_bid(&i, BendersOptions::default())
}

/// Tank-model bid: every request as an interruptible canonical battery.
pub fn tank_bid(inputs: &BidInputs) -> Result<BidSolution> {
    let mut i = *inputs;
    i.options.kind = ModelKind::Tank;
    solve_bid(&i, BendersOptions::default())
}

/// The same problem as one monolithic LP; used to check the decomposition.
pub fn solve_bid_extensive(inputs: &BidInputs) -> Result<BidSolution> {
    inputs.validate()?;
    let market = inputs.market;
    let n = inputs.scenarios.len() as f64;
    let mut lp = LpProblem::new();
    let caps = bid_caps(inputs);
    let b_vars: Vec<usize> = (0..market.intervals())
        .map(|h| lp.add_var(inputs.prices.forward[h], 0.0, caps[h]))
        .collect();
    for s in inputs.scenarios {
        let flex = build_flex(&mut lp, inputs.registry, None, s, Window::full(market.horizon), inputs.options)?;
        for h in 0..market.intervals() {
            let up = lp.add_var(inputs.prices.up[h] / n, 0.0, f64::INFINITY);
            let down = lp.add_var(inputs.prices.down[h] / n, 0.0, f64::INFINITY);
            let mut terms = vec![(up, -1.0), (down, 1.0), (b_vars[h], -1.0)];
            let mut fixed = 0.0;
            for t in market.steps(h) {
                fixed += flex.load[t].constant + inputs.inflexible[t];
                terms.extend_from_slice(&flex.load[t].terms);
            }
            lp.add_constraint(terms, Sense::Eq, -fixed);
        }
    }
    let sol = solve_lp(&lp)?;
    if !sol.is_optimal() {
        return Err(Error::Lp {
            status: sol.status,
            context: "extensive-form bid problem".into(),
        });
    }
    Ok(BidSolution {
        bid: b_vars.iter().map(|&j| sol.x[j]).collect(),
        objective: sol.objective,
        lower_bound: sol.objective,
        iterations: sol.iterations,
    })
}
