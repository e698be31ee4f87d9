//! End-to-end scenarios: config, sampling, bidding, dispatch and reports.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    quantization_error_report, quantize_all, quantize_request, registry_from_grid, write_error_report, Assignment,
    ClusterRegistry, QuantizationGrid,
};
use crate::error::{Error, Result};
use crate::population::{
    apply_participation, build_arrival_series, generate_population, ApplianceRequest, ArrivalSeries, ArrivalStatistics, Categorical,
    Category, ParticipationModel,
};
use crate::privacy::{privacy_report, write_privacy_csv, ArrivalProbabilityModel, PrivacyReport};
use crate::protocol::{cell_probabilities, run_protocol, ProtocolOptions};
use crate::scheduler::{
    optimize_bid, round_bid, settlement_cost, simulate, tank_bid, BidInputs, DispatchContext, DispatchMode, Forecast,
    Market, MarketPrices, ModelKind, ModelOptions, Settlement, SettlementRow,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchConfig {
    #[serde(default = "mpc")]
    pub mode: DispatchMode,
    /// MPC lookahead in steps; the whole remaining horizon when absent.
    #[serde(default)]
    pub lookahead: Option<usize>,
    /// Drive appliances through broadcast tables instead of direct moves.
    #[serde(default = "yes")]
    pub protocol: bool,
}

fn mpc() -> DispatchMode {
    DispatchMode::Mpc
}

fn yes() -> bool {
    true
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            mode: DispatchMode::Mpc,
            lookahead: None,
            protocol: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BidModel {
    #[default]
    Cluster,
    Tank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "version")]
    pub schema_version: u32,
    pub horizon: usize,
    #[serde(default = "one")]
    pub market_interval: usize,
    pub grid: QuantizationGrid,
    pub arrivals: Vec<ArrivalStatistics>,
    /// Rescales intensities so this many requests are expected in total.
    #[serde(default)]
    pub population: Option<f64>,
    #[serde(default)]
    pub participation: ParticipationModel,
    /// Per step; zeros when empty.
    #[serde(default)]
    pub inflexible: Vec<f64>,
    /// Explicit prices per market interval.
    #[serde(default)]
    pub prices: Option<MarketPrices>,
    /// CSV with columns h,pi_F,pi_plus,pi_minus, relative to the config file.
    #[serde(default)]
    pub price_file: Option<PathBuf>,
    /// Deviation prices of the synthetic curve as multiples of the forward price.
    #[serde(default = "two")]
    pub up_factor: f64,
    #[serde(default = "half")]
    pub down_factor: f64,
    #[serde(default)]
    pub allow_arbitrage: bool,
    #[serde(default = "ten")]
    pub scenarios: usize,
    #[serde(default)]
    pub bid_model: BidModel,
    #[serde(default)]
    pub bid_granularity: f64,
    #[serde(default)]
    pub dispatch: DispatchConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub v2g_discharge: bool,
    #[serde(default)]
    pub variance_reduction: bool,
}

fn version() -> u32 {
    SCHEMA_VERSION
}
fn one() -> usize {
    1
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> usize {
    10
}
fn out() -> PathBuf {
    PathBuf::from("out")
}

/// Two-peak day repeated past 24 hours.
pub fn synthetic_forward_prices(hours: usize) -> Vec<f64> {
    (0..hours)
        .map(|h| {
            let t = (h % 24) as f64;
            let bump = |c: f64, w: f64, a: f64| a * (-(t - c).powi(2) / (2.0 * w * w)).exp();
            30.0 + bump(8.0, 2.0, 15.0) + bump(19.0, 2.5, 25.0) - bump(3.5, 2.0, 8.0)
        })
        .map(|p| p / 1000.0)
        .collect()
}

/// Relative arrival shape of plug-ins over a day: workplace and home peaks.
fn arrival_shape() -> Vec<f64> {
    (0..24)
        .map(|h| {
            let t = h as f64;
            0.05 + 0.6 * (-(t - 8.5).powi(2) / 4.0).exp() + (-(t - 18.0).powi(2) / 6.0).exp()
        })
        .collect()
}

impl ScenarioConfig {
    /// Desk-scale version of the PHEV experiment: level-1 pulses,
    /// 5 energy × 3 laxity clusters, 32-hour day.
    pub fn paper_default() -> Self {
        let grid = QuantizationGrid {
            energy_step: 2.2,
            energy_levels: 5,
            laxity_step: 4,
            laxity_levels: 3,
            rate_levels: vec![1],
            rho_levels: vec![1.0],
            nid_profiles: Vec::new(),
            nid_pulse_rate: Some(1.1),
        };
        let nid = ArrivalStatistics {
            category: Category::Nid,
            intensity: arrival_shape(),
            energy: Categorical {
                values: vec![2.2, 4.4, 6.6, 8.8, 11.0],
                weights: vec![0.15, 0.3, 0.3, 0.15, 0.1],
            },
            laxity: Categorical {
                values: vec![1.0, 5.0, 9.0],
                weights: vec![0.3, 0.4, 0.3],
            },
            initial_charge: Categorical::point(0.0),
            target_fraction: Categorical::point(1.0),
            max_rate: Categorical::point(1.0),
            profiles: Vec::new(),
            pulse_rate: Some(1.1),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            horizon: 32,
            market_interval: 1,
            grid,
            arrivals: vec![nid],
            population: Some(400.0),
            participation: ParticipationModel::default(),
            inflexible: Vec::new(),
            prices: None,
            price_file: None,
            up_factor: 2.0,
            down_factor: 0.5,
            allow_arbitrage: false,
            scenarios: 10,
            bid_model: BidModel::Cluster,
            bid_granularity: 0.0,
            dispatch: DispatchConfig::default(),
            seed: 0,
            output_dir: out(),
            v2g_discharge: false,
            variance_reduction: false,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative price file resolves against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json_str(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.price_file, path.parent()) {
            if p.is_relative() {
                cfg.price_file = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Market::new(self.horizon, self.market_interval)?;
        if self.scenarios == 0 {
            return Err(Error::Config("scenarios: need at least one SAA sample".into()));
        }
        if !self.inflexible.is_empty() && self.inflexible.len() != self.horizon {
            return Err(Error::Config("inflexible: must list one value per step".into()));
        }
        if self.inflexible.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("inflexible: values must be finite".into()));
        }
        if self.prices.is_some() && self.price_file.is_some() {
            return Err(Error::Config("give prices or price_file, not both".into()));
        }
        if !(self.up_factor >= 0.0 && self.down_factor >= 0.0) {
            return Err(Error::Config("deviation price factors must be nonnegative".into()));
        }
        if let Some(p) = self.population {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Config("population: must be nonnegative".into()));
            }
        }
        if self.bid_granularity < 0.0 {
            return Err(Error::Config("bid_granularity: must be nonnegative".into()));
        }
        self.grid.validate()?;
        self.participation.validate()?;
        for s in &self.arrivals {
            s.validate()?;
        }
        Ok(())
    }

    pub fn scale_population(&mut self, factor: f64) {
        match self.population.as_mut() {
            Some(p) => *p *= factor,
            None => {
                for s in &mut self.arrivals {
                    s.intensity.iter_mut().for_each(|l| *l *= factor);
                }
            }
        }
    }
}

/// Everything derived from a config once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub registry: ClusterRegistry,
    pub stats: Vec<ArrivalStatistics>,
    pub market: Market,
    pub prices: MarketPrices,
    pub inflexible: Vec<f64>,
}

impl Prepared {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let market = Market::new(config.horizon, config.market_interval)?;
        let mut stats = config.arrivals.clone();
        if let Some(target) = config.population {
            let expected: f64 = stats.iter().map(|s| s.expected_count(config.horizon)).sum();
            if expected > 0.0 {
                let f = target / expected;
                for s in &mut stats {
                    s.intensity.iter_mut().for_each(|l| *l *= f);
                }
            }
        }
        let mut cats: Vec<Category> = stats.iter().map(|s| s.category).collect();
        cats.sort();
        cats.dedup();
        let registry = registry_from_grid(&config.grid, &cats)?;
        let prices = match (&config.prices, &config.price_file) {
            (Some(p), _) => p.clone(),
            (None, Some(path)) => MarketPrices::from_csv(File::open(path)?)?,
            (None, None) => {
                let f = synthetic_forward_prices(market.intervals());
                MarketPrices {
                    up: f.iter().map(|p| p * config.up_factor).collect(),
                    down: f.iter().map(|p| p * config.down_factor).collect(),
                    forward: f,
                }
            }
        };
        prices.validate(market.intervals(), config.allow_arbitrage)?;
        let inflexible = if config.inflexible.is_empty() {
            vec![0.0; config.horizon]
        } else {
            config.inflexible.clone()
        };
        Ok(Self {
            config: config.clone(),
            registry,
            stats,
            market,
            prices,
            inflexible,
        })
    }

    /// Independent seed for a named stream.
    pub fn seed(&self, stream: u64, index: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream.wrapping_mul(1 << 32).wrapping_add(index));
        rng.next_u64()
    }

    /// Participating requests of one realization.
    pub fn sample_requests(&self, seed: u64) -> Result<Vec<ApplianceRequest>> {
        let requests = generate_population(&self.stats, self.config.horizon, seed)?;
        let grid = &self.config.grid;
        apply_participation(
            &requests,
            &self.config.participation,
            |r| quantize_request(r, &self.registry, grid).map(|a| a.cluster),
            seed ^ 0x5DEE_CE66,
        )
    }

    /// Generate, filter by participation and cluster one realization.
    pub fn sample(&self, seed: u64) -> Result<Vec<Assignment>> {
        quantize_all(&self.sample_requests(seed)?, &self.registry, &self.config.grid)
    }

    pub fn series(&self, assignments: &[Assignment]) -> Result<ArrivalSeries> {
        build_arrival_series(assignments, &self.registry, self.config.horizon)
    }

    pub fn options(&self, kind: ModelKind) -> ModelOptions {
        ModelOptions {
            kind,
            v2g: self.config.v2g_discharge,
        }
    }

    /// The SAA scenario set.
    pub fn scenarios(&self) -> Result<Vec<ArrivalSeries>> {
        (0..self.config.scenarios as u64)
            .map(|s| self.sample(self.seed(1, s)).and_then(|a| self.series(&a)))
            .collect()
    }

    /// Per-step Bernoulli models for the uplink, one pool per category.
    pub fn privacy_models(&self) -> Result<Vec<ArrivalProbabilityModel>> {
        let mut cells = Vec::new();
        for s in &self.stats {
            let pool = s.expected_count(self.config.horizon).round().max(1.0) as usize;
            let p = cell_probabilities(s, &self.config.participation, &self.registry, &self.config.grid)?;
            cells.push((s, pool, p));
        }
        let mut out = Vec::with_capacity(self.config.horizon);
        for t in 0..self.config.horizon {
            let mut m = ArrivalProbabilityModel::default();
            for (s, pool, p) in &cells {
                for (k, w) in p {
                    let eps = (s.intensity_at(t) * w / *pool as f64).min(1.0);
                    m.cells.entry(*k).or_default().extend(std::iter::repeat_n(eps, *pool));
                }
            }
            out.push(m);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationStats {
    pub mean_abs_deviation: f64,
    pub mean_flexible: f64,
    /// Mean absolute deviation over mean flexible load.
    pub relative: f64,
}

pub fn deviation_stats(rows: &[SettlementRow], flexible: &[f64], market: Market) -> DeviationStats {
    let n = rows.len().max(1) as f64;
    let mad = rows.iter().map(|r| (r.load - r.bid).abs()).sum::<f64>() / n;
    let flex = market.aggregate(flexible).iter().sum::<f64>() / n;
    DeviationStats {
        mean_abs_deviation: mad,
        mean_flexible: flex,
        relative: if flex > 0.0 { mad / flex } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageStats {
    pub uplink_records: Vec<usize>,
    pub uplink_arrivals: Vec<u64>,
    pub downlink_records: Vec<usize>,
}

/// One bid evaluated against one realization.
#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub model: BidModel,
    pub bid: Vec<f64>,
    pub expected_cost: f64,
    pub load: Vec<f64>,
    pub flexible: Vec<f64>,
    pub settlement: Settlement,
    pub deviation: DeviationStats,
    pub messages: Option<MessageStats>,
}

/// Bid for the given model from the SAA scenarios.
pub fn compute_bid(prep: &Prepared, scenarios: &[ArrivalSeries], model: BidModel) -> Result<(Vec<f64>, f64)> {
    let forecasts: Vec<Forecast> = scenarios.iter().map(Forecast::from_series).collect();
    let inputs = BidInputs {
        registry: &prep.registry,
        scenarios: &forecasts,
        inflexible: &prep.inflexible,
        prices: &prep.prices,
        market: prep.market,
        options: prep.options(ModelKind::Cluster),
    };
    let sol = match model {
        BidModel::Cluster => optimize_bid(&inputs)?,
        BidModel::Tank => tank_bid(&inputs)?,
    };
    Ok((round_bid(&sol.bid, prep.config.bid_granularity), sol.objective))
}

/// Dispatches a realization against `bid` with the true cluster model.
pub fn dispatch_against(
    prep: &Prepared,
    scenarios: &[ArrivalSeries],
    realized: &[Assignment],
    bid: &[f64],
    protocol_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Option<MessageStats>)> {
    let forecast = Forecast::mean(scenarios)?;
    let ctx = DispatchContext {
        registry: &prep.registry,
        bid,
        prices: &prep.prices,
        market: prep.market,
        inflexible: &prep.inflexible,
        forecast: &forecast,
        options: prep.options(ModelKind::Cluster),
        lookahead: prep.config.dispatch.lookahead.unwrap_or(prep.config.horizon),
    };
    if prep.config.dispatch.protocol {
        let run = run_protocol(
            &ctx,
            realized,
            prep.config.dispatch.mode,
            ProtocolOptions {
                variance_reduction: prep.config.variance_reduction,
                seed: protocol_seed,
            },
        )?;
        let msgs = MessageStats {
            uplink_records: run.uplink_records,
            uplink_arrivals: run.uplink_arrivals,
            downlink_records: run.downlink_records,
        };
        Ok((run.load, run.flexible, Some(msgs)))
    } else {
        let run = simulate(&ctx, &prep.series(realized)?, prep.config.dispatch.mode)?;
        Ok((run.load, run.flexible, None))
    }
}

pub fn evaluate_model(
    prep: &Prepared,
    scenarios: &[ArrivalSeries],
    realized: &[Assignment],
    model: BidModel,
) -> Result<ModelOutcome> {
    let (bid, expected_cost) = compute_bid(prep, scenarios, model)?;
    let (load, flexible, messages) = dispatch_against(prep, scenarios, realized, &bid, prep.seed(3, 0))?;
    let settlement = settlement_cost(&load, &bid, &prep.prices, prep.market)?;
    let deviation = deviation_stats(&settlement.rows, &flexible, prep.market);
    Ok(ModelOutcome {
        model,
        bid,
        expected_cost,
        load,
        flexible,
        settlement,
        deviation,
        messages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub bid_model: BidModel,
    pub requests: usize,
    pub expected_cost: f64,
    pub forward_cost: f64,
    pub deviation_cost: f64,
    pub total_cost: f64,
    pub deviation: DeviationStats,
    pub uplink_messages: u64,
    pub downlink_messages: u64,
    pub mi_bound_nats: f64,
    pub mi_bound_bits: f64,
    pub err_lower: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: RunSummary,
    pub outcome: ModelOutcome,
    pub files: Vec<PathBuf>,
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T], files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name, files)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = create(dir, name, files)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct LoadRow {
    t: usize,
    #[serde(rename = "L_inflexible")]
    inflexible: f64,
    #[serde(rename = "L_flexible")]
    flexible: f64,
    #[serde(rename = "L_total")]
    total: f64,
}

#[derive(Serialize)]
struct BidRow {
    h: usize,
    #[serde(rename = "B")]
    bid: f64,
    #[serde(rename = "pi_F")]
    forward: f64,
    pi_plus: f64,
    pi_minus: f64,
}

#[derive(Serialize)]
struct MessageRow {
    t: usize,
    uplink_records: usize,
    uplink_arrivals: u64,
    downlink_records: usize,
}

/// Peak-step and whole-horizon privacy reports.
pub fn privacy_reports(prep: &Prepared) -> Result<(PrivacyReport, PrivacyReport)> {
    let models = prep.privacy_models()?;
    let peak = (0..models.len())
        .max_by(|&a, &b| {
            let la: f64 = models[a].cells.keys().map(|k| models[a].rate(k)).sum();
            let lb: f64 = models[b].cells.keys().map(|k| models[b].rate(k)).sum();
            la.total_cmp(&lb).then(b.cmp(&a))
        })
        .unwrap_or(0);
    let step = privacy_report(&models[peak..=peak.min(models.len().saturating_sub(1))])?;
    let window = privacy_report(&models)?;
    Ok((step, window))
}

fn write_privacy(dir: &Path, prep: &Prepared, files: &mut Vec<PathBuf>) -> Result<(PrivacyReport, PrivacyReport)> {
    let (step, window) = privacy_reports(prep)?;
    write_privacy_csv(&step, create(dir, "privacy.csv", files)?)?;
    write_privacy_csv(&window, create(dir, "privacy_window.csv", files)?)?;
    Ok((step, window))
}

/// Full pipeline for the configured bid model.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    let prep = Prepared::new(config)?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();

    let scenarios = prep.scenarios()?;
    let requests = prep.sample_requests(prep.seed(2, 0))?;
    let realized = quantize_all(&requests, &prep.registry, &config.grid)?;
    let outcome = evaluate_model(&prep, &scenarios, &realized, config.bid_model)?;

    let bid_rows: Vec<BidRow> = (0..prep.market.intervals())
        .map(|h| BidRow {
            h,
            bid: outcome.bid[h],
            forward: prep.prices.forward[h],
            pi_plus: prep.prices.up[h],
            pi_minus: prep.prices.down[h],
        })
        .collect();
    write_csv(&dir, "bid.csv", &bid_rows, &mut files)?;
    let load_rows: Vec<LoadRow> = (0..config.horizon)
        .map(|t| LoadRow {
            t,
            inflexible: prep.inflexible[t],
            flexible: outcome.flexible[t],
            total: outcome.load[t],
        })
        .collect();
    write_csv(&dir, "load.csv", &load_rows, &mut files)?;
    write_csv(&dir, "settlement.csv", &outcome.settlement.rows, &mut files)?;
    let (up, down) = match &outcome.messages {
        Some(m) => {
            let rows: Vec<MessageRow> = (0..config.horizon)
                .map(|t| MessageRow {
                    t,
                    uplink_records: m.uplink_records[t],
                    uplink_arrivals: m.uplink_arrivals[t],
                    downlink_records: m.downlink_records[t],
                })
                .collect();
            write_csv(&dir, "messages.csv", &rows, &mut files)?;
            (
                m.uplink_records.iter().sum::<usize>() as u64,
                m.downlink_records.iter().sum::<usize>() as u64,
            )
        }
        None => (0, 0),
    };
    let errors = quantization_error_report(&requests, &prep.registry, &config.grid)?;
    write_error_report(&errors, create(&dir, "quantization_error.csv", &mut files)?)?;
    let (step, _) = write_privacy(&dir, &prep, &mut files)?;

    let summary = RunSummary {
        bid_model: config.bid_model,
        requests: realized.len(),
        expected_cost: outcome.expected_cost,
        forward_cost: outcome.settlement.forward,
        deviation_cost: outcome.settlement.deviation,
        total_cost: outcome.settlement.total,
        deviation: outcome.deviation.clone(),
        uplink_messages: up,
        downlink_messages: down,
        mi_bound_nats: step.mi_bound,
        mi_bound_bits: step.mi_bound_bits(),
        err_lower: step.err_lower,
    };
    write_json(&dir, "summary.json", &summary, &mut files)?;
    Ok(RunReport { summary, outcome, files })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub h: usize,
    #[serde(rename = "B_cluster")]
    pub bid_cluster: f64,
    #[serde(rename = "B_tank")]
    pub bid_tank: f64,
    #[serde(rename = "L_cluster")]
    pub load_cluster: f64,
    #[serde(rename = "L_tank")]
    pub load_tank: f64,
    pub dev_cluster: f64,
    pub dev_tank: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub cluster: ModelOutcome,
    pub tank: ModelOutcome,
    pub rows: Vec<ComparisonRow>,
}

/// Both bids against the same realization and the same true-model dispatch.
pub fn compare_outcomes(prep: &Prepared, scenarios: &[ArrivalSeries], realized: &[Assignment]) -> Result<Comparison> {
    let cluster = evaluate_model(prep, scenarios, realized, BidModel::Cluster)?;
    let tank = evaluate_model(prep, scenarios, realized, BidModel::Tank)?;
    let rows = (0..prep.market.intervals())
        .map(|h| {
            let c = &cluster.settlement.rows[h];
            let k = &tank.settlement.rows[h];
            ComparisonRow {
                h,
                bid_cluster: c.bid,
                bid_tank: k.bid,
                load_cluster: c.load,
                load_tank: k.load,
                dev_cluster: c.load - c.bid,
                dev_tank: k.load - k.bid,
            }
        })
        .collect();
    Ok(Comparison { cluster, tank, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub cluster_forward: f64,
    pub cluster_deviation: f64,
    pub cluster_total: f64,
    pub tank_forward: f64,
    pub tank_deviation: f64,
    pub tank_total: f64,
    pub cluster_relative_deviation: f64,
    pub tank_relative_deviation: f64,
}

pub fn compare_models(config: &ScenarioConfig) -> Result<(Comparison, Vec<PathBuf>)> {
    let prep = Prepared::new(config)?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let scenarios = prep.scenarios()?;
    let realized = prep.sample(prep.seed(2, 0))?;
    let cmp = compare_outcomes(&prep, &scenarios, &realized)?;
    write_csv(&dir, "compare.csv", &cmp.rows, &mut files)?;
    let s = ComparisonSummary {
        cluster_forward: cmp.cluster.settlement.forward,
        cluster_deviation: cmp.cluster.settlement.deviation,
        cluster_total: cmp.cluster.settlement.total,
        tank_forward: cmp.tank.settlement.forward,
        tank_deviation: cmp.tank.settlement.deviation,
        tank_total: cmp.tank.settlement.total,
        cluster_relative_deviation: cmp.cluster.deviation.relative,
        tank_relative_deviation: cmp.tank.deviation.relative,
    };
    write_json(&dir, "compare_summary.json", &s, &mut files)?;
    Ok((cmp, files))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacySummary {
    pub peak_mi_bound_nats: f64,
    pub peak_mi_bound_bits: f64,
    pub peak_max_prob_a: f64,
    pub peak_err_lower: Option<f64>,
    pub window_mi_bound_nats: f64,
    pub window_mi_bound_bits: f64,
    pub window_err_lower: Option<f64>,
}

pub fn privacy_only(config: &ScenarioConfig) -> Result<(PrivacySummary, Vec<PathBuf>)> {
    let prep = Prepared::new(config)?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let (step, window) = write_privacy(&dir, &prep, &mut files)?;
    let s = PrivacySummary {
        peak_mi_bound_nats: step.mi_bound,
        peak_mi_bound_bits: step.mi_bound_bits(),
        peak_max_prob_a: step.max_prob_a,
        peak_err_lower: step.err_lower,
        window_mi_bound_nats: window.mi_bound,
        window_mi_bound_bits: window.mi_bound_bits(),
        window_err_lower: window.err_lower,
    };
    write_json(&dir, "privacy_summary.json", &s, &mut files)?;
    Ok((s, files))
}
