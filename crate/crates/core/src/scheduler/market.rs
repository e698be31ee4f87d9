//! Two-settlement market: prices, bids and settlement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prices per market interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPrices {
    pub forward: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

impl MarketPrices {
    pub fn flat(intervals: usize, forward: f64, up: f64, down: f64) -> Self {
        Self {
            forward: vec![forward; intervals],
            up: vec![up; intervals],
            down: vec![down; intervals],
        }
    }

    pub fn intervals(&self) -> usize {
        self.forward.len()
    }

    /// Checks lengths, signs and, unless `allow_arbitrage`, π⁺ ≥ π^F.
    pub fn validate(&self, intervals: usize, allow_arbitrage: bool) -> Result<()> {
        if self.forward.len() != intervals || self.up.len() != intervals || self.down.len() != intervals {
            return Err(Error::Config(format!("prices must cover {intervals} market intervals")));
        }
        for h in 0..intervals {
            let (f, u, d) = (self.forward[h], self.up[h], self.down[h]);
            if !(f.is_finite() && u.is_finite() && d.is_finite()) || f < 0.0 || d < 0.0 || u < 0.0 {
                return Err(Error::Config(format!("prices at interval {h} must be finite and nonnegative")));
            }
            if !allow_arbitrage && u < f {
                return Err(Error::Config(format!(
                    "upward deviation price below forward price at interval {h}"
                )));
            }
        }
        Ok(())
    }

    /// Reads `h,pi_F,pi_plus,pi_minus` rows.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            h: usize,
            #[serde(rename = "pi_F")]
            forward: f64,
            pi_plus: f64,
            pi_minus: f64,
        }
        let mut rows: Vec<Row> = Vec::new();
        for r in csv::Reader::from_reader(reader).deserialize() {
            rows.push(r?);
        }
        rows.sort_by_key(|r| r.h);
        if rows.iter().enumerate().any(|(i, r)| r.h != i) {
            return Err(Error::Config("price rows must number intervals 0..H without gaps".into()));
        }
        Ok(Self {
            forward: rows.iter().map(|r| r.forward).collect(),
            up: rows.iter().map(|r| r.pi_plus).collect(),
            down: rows.iter().map(|r| r.pi_minus).collect(),
        })
    }
}

/// Steps `h*k .. (h+1)*k` form market interval `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Market {
    pub horizon: usize,
    pub interval: usize,
}

impl Market {
    pub fn new(horizon: usize, interval: usize) -> Result<Self> {
        if interval == 0 || horizon < interval {
            return Err(Error::Config("need horizon >= market interval >= 1".into()));
        }
        Ok(Self { horizon, interval })
    }

    pub fn intervals(&self) -> usize {
        self.horizon.div_ceil(self.interval)
    }

    pub fn interval_of(&self, t: usize) -> usize {
        t / self.interval
    }

    pub fn steps(&self, h: usize) -> std::ops::Range<usize> {
        h * self.interval..((h + 1) * self.interval).min(self.horizon)
    }

    /// Sums a per-step series into intervals.
    pub fn aggregate(&self, series: &[f64]) -> Vec<f64> {
        (0..self.intervals())
            .map(|h| self.steps(h).map(|t| series.get(t).copied().unwrap_or(0.0)).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlementRow {
    pub h: usize,
    #[serde(rename = "B")]
    pub bid: f64,
    #[serde(rename = "L_realized")]
    pub load: f64,
    pub dev_plus: f64,
    pub dev_minus: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub forward: f64,
    pub deviation: f64,
    pub total: f64,
    pub rows: Vec<SettlementRow>,
}

/// Forward cost of the bid plus deviation penalties on realized interval loads.
pub fn settlement_cost(load: &[f64], bid: &[f64], prices: &MarketPrices, market: Market) -> Result<Settlement> {
    if load.len() != market.horizon {
        return Err(Error::Domain("realized load must cover the horizon".into()));
    }
    let h_count = market.intervals();
    if bid.len() != h_count || prices.intervals() != h_count {
        return Err(Error::Domain("bid and prices must cover every market interval".into()));
    }
    let per = market.aggregate(load);
    let mut rows = Vec::with_capacity(h_count);
    let (mut forward, mut deviation) = (0.0, 0.0);
    for h in 0..h_count {
        let up = (per[h] - bid[h]).max(0.0);
        let down = (bid[h] - per[h]).max(0.0);
        let f = prices.forward[h] * bid[h];
        let d = prices.up[h] * up + prices.down[h] * down;
        forward += f;
        deviation += d;
        rows.push(SettlementRow {
            h,
            bid: bid[h],
            load: per[h],
            dev_plus: up,
            dev_minus: down,
            cost: f + d,
        });
    }
    Ok(Settlement {
        forward,
        deviation,
        total: forward + deviation,
        rows,
    })
}

/// Rounds a bid to the nearest multiple of `granularity` (no-op when zero).
pub fn round_bid(bid: &[f64], granularity: f64) -> Vec<f64> {
    if granularity <= 0.0 {
        return bid.iter().map(|b| b.max(0.0)).collect();
    }
    bid.iter()
        .map(|b| ((b / granularity).round() * granularity).max(0.0))
        .collect()
}
