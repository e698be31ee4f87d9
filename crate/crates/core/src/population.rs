//! Synthetic appliance request streams, participation thinning and per-cell
//! arrival series.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::clustering::{Assignment, ClusterRegistry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "CANONICAL")]
    Canonical,
    #[serde(rename = "RIC")]
    Ric,
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "NID")]
    Nid,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Canonical, Category::Ric, Category::Is, Category::Nid];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Canonical => "CANONICAL",
            Category::Ric => "RIC",
            Category::Is => "IS",
            Category::Nid => "NID",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn is_battery(self) -> bool {
        self != Category::Nid
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One flexible-load arrival.
///
/// `deadline` is an absolute step for battery categories and the maximum
/// start delay (relative, in steps) for NID jobs. It is fractional so that
/// quantization error can be measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplianceRequest {
    pub id: u64,
    pub category: Category,
    pub arrival: usize,
    pub initial_charge: f64,
    pub energy: f64,
    pub deadline: f64,
    pub target_fraction: f64,
    pub max_rate: f64,
    pub profile: Vec<f64>,
}

impl ApplianceRequest {
    /// Time between arrival and deadline (battery) or maximum delay (NID).
    pub fn laxity(&self) -> f64 {
        match self.category {
            Category::Nid => self.deadline,
            _ => self.deadline - self.arrival as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(format!("request {}: {what}", self.id)));
        match self.category {
            Category::Nid => {
                if self.deadline < 0.0 {
                    return bad("negative maximum delay");
                }
                if self.profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("profile must be finite and nonnegative");
                }
                if self.profile.iter().sum::<f64>() <= 0.0 {
                    return bad("profile carries no energy");
                }
            }
            _ => {
                if self.deadline <= self.arrival as f64 {
                    return bad("deadline must follow arrival");
                }
                if !(0.0..=self.energy).contains(&self.initial_charge) {
                    return bad("initial charge outside [0, E]");
                }
                if self.category != Category::Canonical {
                    if !(0.0..=1.0).contains(&self.target_fraction) {
                        return bad("target fraction outside [0, 1]");
                    }
                    if self.max_rate < 1.0 {
                        return bad("rate limit below one energy unit per step");
                    }
                }
            }
        }
        Ok(())
    }
}

/// Discrete distribution over real values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Categorical {
    pub fn point(value: f64) -> Self {
        Self {
            values: vec![value],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config(format!("{name}: empty distribution")));
        }
        if self.values.len() != self.weights.len() {
            return Err(Error::Config(format!("{name}: values and weights differ in length")));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("{name}: weights must be nonnegative")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("{name}: weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(&self.weights).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedProfile {
    pub profile: Vec<f64>,
    pub weight: f64,
}

/// Per-category arrival process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalStatistics {
    pub category: Category,
    /// Expected requests per step; steps past the end of the vector see none.
    pub intensity: Vec<f64>,
    /// Requested energy (battery) or job energy (NID with `pulse_rate`).
    pub energy: Categorical,
    /// Steps between arrival and deadline, or maximum start delay for NID.
    pub laxity: Categorical,
    /// Initial charge as a fraction of the requested energy.
    #[serde(default = "zero_point")]
    pub initial_charge: Categorical,
    #[serde(default = "one_point")]
    pub target_fraction: Categorical,
    #[serde(default = "one_point")]
    pub max_rate: Categorical,
    /// NID jobs drawn from a weighted pulse library.
    #[serde(default)]
    pub profiles: Vec<WeightedProfile>,
    /// NID jobs built from the energy draw as constant-rate pulses.
    #[serde(default)]
    pub pulse_rate: Option<f64>,
}

fn zero_point() -> Categorical {
    Categorical::point(0.0)
}

fn one_point() -> Categorical {
    Categorical::point(1.0)
}

impl ArrivalStatistics {
    pub fn validate(&self) -> Result<()> {
        let tag = self.category.as_str();
        if self.intensity.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!("{tag}: intensity must be nonnegative")));
        }
        self.laxity.validate(&format!("{tag}.laxity"))?;
        if self.category == Category::Nid {
            match (self.profiles.is_empty(), self.pulse_rate) {
                (false, None) => {
                    let total: f64 = self.profiles.iter().map(|p| p.weight).sum();
                    if (total - 1.0).abs() > 1e-9 || self.profiles.iter().any(|p| p.weight < 0.0) {
                        return Err(Error::Config(format!(
                            "{tag}.profiles: weights must be nonnegative and sum to 1"
                        )));
                    }
                    for p in &self.profiles {
                        if p.profile.iter().any(|v| *v < 0.0) || p.profile.iter().sum::<f64>() <= 0.0 {
                            return Err(Error::Config(format!("{tag}.profiles: empty pulse")));
                        }
                    }
                }
                (true, Some(rate)) => {
                    if !(rate > 0.0) {
                        return Err(Error::Config(format!("{tag}.pulse_rate must be positive")));
                    }
                    self.energy.validate(&format!("{tag}.energy"))?;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "{tag}: exactly one of profiles or pulse_rate is required"
                    )))
                }
            }
        } else {
            self.energy.validate(&format!("{tag}.energy"))?;
            self.initial_charge.validate(&format!("{tag}.initial_charge"))?;
            self.target_fraction.validate(&format!("{tag}.target_fraction"))?;
            self.max_rate.validate(&format!("{tag}.max_rate"))?;
        }
        Ok(())
    }

    pub fn intensity_at(&self, t: usize) -> f64 {
        self.intensity.get(t).copied().unwrap_or(0.0)
    }

    /// Total expected requests over `horizon` steps.
    pub fn expected_count(&self, horizon: usize) -> f64 {
        (0..horizon).map(|t| self.intensity_at(t)).sum()
    }
}

/// Splits `energy` into full steps at `rate` followed by the remainder.
pub fn constant_rate_pulse(energy: f64, rate: f64) -> Vec<f64> {
    let mut pulse = Vec::new();
    let mut left = energy;
    while left > 1e-9 {
        let chunk = left.min(rate);
        pulse.push(chunk);
        left -= chunk;
    }
    pulse
}

/// Poisson arrivals per step with parameters drawn independently per request.
pub fn generate_requests(
    stats: &ArrivalStatistics,
    horizon: usize,
    seed: u64,
) -> Result<Vec<ApplianceRequest>> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least one step".into()));
    }
    stats.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let energy = stats.energy.sampler();
    let laxity = stats.laxity.sampler()?;
    let profiles = if stats.profiles.is_empty() {
        None
    } else {
        let weights: Vec<f64> = stats.profiles.iter().map(|p| p.weight).collect();
        Some(WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?)
    };
    let battery = stats.category.is_battery();
    let charge = stats.initial_charge.sampler();
    let rho = stats.target_fraction.sampler();
    let rate = stats.max_rate.sampler();

    let mut out = Vec::new();
    for t in 0..horizon {
        let lambda = stats.intensity_at(t);
        if lambda <= 0.0 {
            continue;
        }
        let count = Poisson::new(lambda)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let lax = stats.laxity.values[laxity.sample(&mut rng)];
            let mut req = ApplianceRequest {
                id: out.len() as u64,
                category: stats.category,
                arrival: t,
                initial_charge: 0.0,
                energy: 0.0,
                deadline: lax,
                target_fraction: 1.0,
                max_rate: 1.0,
                profile: Vec::new(),
            };
            if battery {
                let e = stats.energy.values[energy.as_ref().map_err(clone_err)?.sample(&mut rng)];
                let s = stats.initial_charge.values[charge.as_ref().map_err(clone_err)?.sample(&mut rng)];
                req.energy = e;
                req.initial_charge = (s * e).clamp(0.0, e);
                req.deadline = t as f64 + lax;
                req.target_fraction = stats.target_fraction.values[rho.as_ref().map_err(clone_err)?.sample(&mut rng)];
                req.max_rate = stats.max_rate.values[rate.as_ref().map_err(clone_err)?.sample(&mut rng)];
            } else if let Some(index) = &profiles {
                req.profile = stats.profiles[index.sample(&mut rng)].profile.clone();
                req.energy = req.profile.iter().sum();
            } else {
                let e = stats.energy.values[energy.as_ref().map_err(clone_err)?.sample(&mut rng)];
                req.profile = constant_rate_pulse(e, stats.pulse_rate.unwrap_or(1.0));
                req.energy = e;
            }
            out.push(req);
        }
    }
    Ok(out)
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}

/// Generates every category's stream and renumbers ids globally.
pub fn generate_population(
    stats: &[ArrivalStatistics],
    horizon: usize,
    seed: u64,
) -> Result<Vec<ApplianceRequest>> {
    let mut all = Vec::new();
    for (k, s) in stats.iter().enumerate() {
        let stream = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64);
        all.extend(generate_requests(s, horizon, stream)?);
    }
    all.sort_by_key(|r| r.arrival);
    for (i, r) in all.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationOverride {
    pub category: Category,
    pub cluster: usize,
    pub probability: f64,
}

/// Probability that a request in a given quantization bin joins the program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipationModel {
    #[serde(default = "full")]
    pub default: f64,
    #[serde(default)]
    pub overrides: Vec<ParticipationOverride>,
}

fn full() -> f64 {
    1.0
}

impl Default for ParticipationModel {
    fn default() -> Self {
        Self {
            default: 1.0,
            overrides: Vec::new(),
        }
    }
}

impl ParticipationModel {
    pub fn uniform(p: f64) -> Self {
        Self {
            default: p,
            overrides: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.default) || self.overrides.iter().any(|o| !ok(o.probability)) {
            return Err(Error::Config("participation probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn probability(&self, category: Category, cluster: usize) -> f64 {
        self.overrides
            .iter()
            .find(|o| o.category == category && o.cluster == cluster)
            .map_or(self.default, |o| o.probability)
    }
}

/// Keeps each request independently with its bin's participation probability.
/// `bin` maps a request to its cluster index.
pub fn apply_participation<F>(
    requests: &[ApplianceRequest],
    model: &ParticipationModel,
    mut bin: F,
    seed: u64,
) -> Result<Vec<ApplianceRequest>>
where
    F: FnMut(&ApplianceRequest) -> Result<usize>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(requests.len());
    for r in requests {
        let p = model.probability(r.category, bin(r)?);
        // One draw per request keeps streams aligned across models.
        let u: f64 = rng.random();
        if u < p {
            kept.push(r.clone());
        }
    }
    Ok(kept)
}

/// Identifies one arrival series: category, cluster and quantized state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub category: Category,
    pub cluster: usize,
    pub state: usize,
}

/// Cumulative arrival counts a_x(t) for every cell of a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSeries {
    pub horizon: usize,
    pub series: BTreeMap<CellKey, Vec<u64>>,
}

impl ArrivalSeries {
    pub fn empty(registry: &ClusterRegistry, horizon: usize) -> Self {
        let mut series = BTreeMap::new();
        for spec in registry.iter() {
            for state in 0..spec.state_count() {
                let key = CellKey {
                    category: spec.category,
                    cluster: spec.index,
                    state,
                };
                series.insert(key, vec![0; horizon]);
            }
        }
        Self { horizon, series }
    }

    pub fn cumulative(&self, key: &CellKey, t: usize) -> u64 {
        self.series.get(key).map_or(0, |s| s[t])
    }

    /// Arrivals landing in `key` exactly at step `t`.
    pub fn delta(&self, key: &CellKey, t: usize) -> u64 {
        match self.series.get(key) {
            None => 0,
            Some(s) if t == 0 => s[0],
            Some(s) => s[t] - s[t - 1],
        }
    }

    /// Arrivals per state for one cluster at step `t`.
    pub fn arrivals_at(&self, category: Category, cluster: usize, states: usize, t: usize) -> Vec<u64> {
        (0..states)
            .map(|state| {
                self.delta(
                    &CellKey {
                        category,
                        cluster,
                        state,
                    },
                    t,
                )
            })
            .collect()
    }

    /// Total arrivals up to and including `t`, summed over every cell.
    pub fn total_through(&self, t: usize) -> u64 {
        self.series.values().map(|s| s[t]).sum()
    }
}

/// Superposes unit steps u(t - tau) per assigned request.
pub fn build_arrival_series(
    assigned: &[Assignment],
    registry: &ClusterRegistry,
    horizon: usize,
) -> Result<ArrivalSeries> {
    let mut out = ArrivalSeries::empty(registry, horizon);
    for a in assigned {
        let key = CellKey {
            category: a.category,
            cluster: a.cluster,
            state: a.state,
        };
        let series = out.series.get_mut(&key).ok_or_else(|| {
            Error::Assignment(format!(
                "no cell {}/{} state {} in registry",
                a.category, a.cluster, a.state
            ))
        })?;
        if a.arrival >= horizon {
            continue;
        }
        for v in &mut series[a.arrival..] {
            *v += 1;
        }
    }
    Ok(out)
}
