//! Parameter quantization into a finite cluster registry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::steps_to_target;
use crate::error::{Error, Result};
use crate::population::{constant_rate_pulse, ApplianceRequest, Category};

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationGrid {
    /// Energy per battery state (kWh).
    pub energy_step: f64,
    pub energy_levels: usize,
    /// Laxity granularity in steps.
    pub laxity_step: usize,
    pub laxity_levels: usize,
    /// Allowed charging rates, in energy units per step.
    #[serde(default = "unit_rates")]
    pub rate_levels: Vec<u32>,
    /// Allowed target fractions.
    #[serde(default = "unit_rho")]
    pub rho_levels: Vec<f64>,
    /// Explicit NID pulse library.
    #[serde(default)]
    pub nid_profiles: Vec<Vec<f64>>,
    /// Build the NID library from the energy levels at this power instead.
    #[serde(default)]
    pub nid_pulse_rate: Option<f64>,
}

fn unit_rates() -> Vec<u32> {
    vec![1]
}

fn unit_rho() -> Vec<f64> {
    vec![1.0]
}

impl QuantizationGrid {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("quantization grid: {m}")));
        if !(self.energy_step > 0.0 && self.energy_step.is_finite()) {
            return fail("energy step must be positive");
        }
        if self.laxity_step < 1 {
            return fail("laxity step must be at least one step");
        }
        if self.energy_levels == 0 || self.laxity_levels == 0 {
            return fail("level counts must be at least one");
        }
        if self.rate_levels.is_empty() || self.rate_levels.contains(&0) {
            return fail("rate levels must be nonempty and at least one unit");
        }
        if self.rho_levels.is_empty() || self.rho_levels.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return fail("target fractions must be nonempty and lie in [0, 1]");
        }
        for p in &self.nid_profiles {
            if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return fail("NID profiles must be nonempty, finite and nonnegative");
            }
        }
        if let Some(r) = self.nid_pulse_rate {
            if !(r > 0.0) {
                return fail("NID pulse rate must be positive");
            }
        }
        Ok(())
    }

    /// Pulse library used for NID matching.
    pub fn nid_library(&self) -> Result<Vec<Vec<f64>>> {
        if !self.nid_profiles.is_empty() {
            return Ok(self.nid_profiles.clone());
        }
        match self.nid_pulse_rate {
            Some(rate) => Ok((1..=self.energy_levels)
                .map(|k| constant_rate_pulse(k as f64 * self.energy_step, rate))
                .collect()),
            None => Err(Error::Config(
                "quantization grid: NID clusters need nid_profiles or nid_pulse_rate".into(),
            )),
        }
    }

    pub fn laxity_value(&self, level: usize) -> usize {
        level * self.laxity_step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryParams {
    /// E^q in energy units.
    pub capacity: usize,
    /// Relative deadline in steps.
    pub laxity: usize,
    pub target_fraction: f64,
    /// G^q in energy units per step.
    pub rate: usize,
    /// Optional per-state rate for IS clusters.
    pub rate_table: Option<Vec<usize>>,
}

impl BatteryParams {
    /// Smallest state that satisfies the service requirement.
    pub fn target(&self) -> usize {
        let raw = self.target_fraction * self.capacity as f64;
        ((raw - 1e-9).ceil().max(0.0) as usize).min(self.capacity)
    }

    pub fn rate_at(&self, x: usize) -> usize {
        self.rate_table
            .as_ref()
            .and_then(|t| t.get(x).copied())
            .unwrap_or(self.rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NidParams {
    pub profile: Vec<f64>,
    /// Maximum start delay in steps.
    pub max_delay: usize,
}

impl NidParams {
    pub fn energy(&self) -> f64 {
        self.profile.iter().sum()
    }

    pub fn at(&self, k: usize) -> f64 {
        self.profile.get(k).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterKind {
    Battery(BatteryParams),
    Nid(NidParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub category: Category,
    pub index: usize,
    /// kWh per energy unit.
    pub energy_step: f64,
    pub kind: ClusterKind,
}

impl ClusterSpec {
    pub fn battery(&self) -> Option<&BatteryParams> {
        match &self.kind {
            ClusterKind::Battery(b) => Some(b),
            ClusterKind::Nid(_) => None,
        }
    }

    pub fn nid(&self) -> Option<&NidParams> {
        match &self.kind {
            ClusterKind::Nid(n) => Some(n),
            ClusterKind::Battery(_) => None,
        }
    }

    /// Number of quantized states (one pending state for NID).
    pub fn state_count(&self) -> usize {
        match &self.kind {
            ClusterKind::Battery(b) => b.capacity + 1,
            ClusterKind::Nid(_) => 1,
        }
    }

    pub fn laxity(&self) -> usize {
        match &self.kind {
            ClusterKind::Battery(b) => b.laxity,
            ClusterKind::Nid(n) => n.max_delay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ClusterKind::Battery(b) => {
                if b.capacity < 1 || b.rate < 1 || !(0.0..=1.0).contains(&b.target_fraction) {
                    return Err(Error::Config(format!(
                        "cluster {}/{}: invalid battery parameters",
                        self.category, self.index
                    )));
                }
                if let Some(t) = &b.rate_table {
                    if t.len() != b.capacity + 1 || t.contains(&0) {
                        return Err(Error::Config(format!(
                            "cluster {}/{}: rate table needs one positive entry per state",
                            self.category, self.index
                        )));
                    }
                }
            }
            ClusterKind::Nid(n) => {
                if n.profile.is_empty() || n.profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config(format!(
                        "cluster {}/{}: invalid pulse",
                        self.category, self.index
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterRegistry {
    clusters: BTreeMap<Category, Vec<ClusterSpec>>,
}

impl ClusterRegistry {
    /// Builds a registry from explicit specs; indices must be dense per category.
    pub fn from_specs(specs: Vec<ClusterSpec>) -> Result<Self> {
        let mut clusters: BTreeMap<Category, Vec<ClusterSpec>> = BTreeMap::new();
        for s in specs {
            s.validate()?;
            if s.category.is_battery() != s.battery().is_some() {
                return Err(Error::Config(format!(
                    "cluster {}/{}: kind does not match category",
                    s.category, s.index
                )));
            }
            clusters.entry(s.category).or_default().push(s);
        }
        for (cat, list) in &mut clusters {
            list.sort_by_key(|s| s.index);
            for (i, s) in list.iter().enumerate() {
                if s.index != i {
                    return Err(Error::Config(format!(
                        "cluster indices for {cat} are not dense and unique"
                    )));
                }
            }
        }
        Ok(Self { clusters })
    }

    pub fn get(&self, category: Category, index: usize) -> Option<&ClusterSpec> {
        self.clusters.get(&category)?.get(index)
    }

    pub fn category(&self, category: Category) -> &[ClusterSpec] {
        self.clusters.get(&category).map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, category: Category) -> usize {
        self.category(category).len()
    }

    pub fn len(&self) -> usize {
        self.clusters.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClusterSpec> {
        self.clusters.values().flatten()
    }
}

/// Cartesian product of quantized levels for each requested category.
pub fn registry_from_grid(grid: &QuantizationGrid, categories: &[Category]) -> Result<ClusterRegistry> {
    grid.validate()?;
    let mut specs = Vec::new();
    let mut cats = categories.to_vec();
    cats.sort();
    cats.dedup();
    for cat in cats {
        let mut index = 0;
        let mut push = |kind| {
            specs.push(ClusterSpec {
                category: cat,
                index,
                energy_step: grid.energy_step,
                kind,
            });
            index += 1;
        };
        match cat {
            Category::Nid => {
                for profile in grid.nid_library()? {
                    for l in 0..grid.laxity_levels {
                        push(ClusterKind::Nid(NidParams {
                            profile: profile.clone(),
                            max_delay: grid.laxity_value(l),
                        }));
                    }
                }
            }
            Category::Canonical => {
                for e in 1..=grid.energy_levels {
                    for l in 0..grid.laxity_levels {
                        push(ClusterKind::Battery(BatteryParams {
                            capacity: e,
                            laxity: grid.laxity_value(l),
                            target_fraction: 1.0,
                            rate: e,
                            rate_table: None,
                        }));
                    }
                }
            }
            Category::Ric | Category::Is => {
                for e in 1..=grid.energy_levels {
                    for l in 0..grid.laxity_levels {
                        for &g in &grid.rate_levels {
                            for &rho in &grid.rho_levels {
                                push(ClusterKind::Battery(BatteryParams {
                                    capacity: e,
                                    laxity: grid.laxity_value(l),
                                    target_fraction: rho,
                                    rate: g as usize,
                                    rate_table: None,
                                }));
                            }
                        }
                    }
                }
            }
        }
    }
    ClusterRegistry::from_specs(specs)
}

/// A request's cluster and starting state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assignment {
    pub request: u64,
    pub category: Category,
    pub cluster: usize,
    pub state: usize,
    pub arrival: usize,
}

fn nearest<T: Copy>(levels: &[T], value: f64, as_f64: impl Fn(T) -> f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &l) in levels.iter().enumerate() {
        let d = (as_f64(l) - value).abs();
        if d < best_d - TIE_EPS {
            best = i;
            best_d = d;
        }
    }
    best
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len().max(b.len()))
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum()
}

fn laxity_level(grid: &QuantizationGrid, laxity: f64) -> usize {
    let raw = (laxity / grid.laxity_step as f64 + 1e-9).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(grid.laxity_levels - 1)
    }
}

/// Maps a request to its cluster with conservative rounding.
pub fn quantize_request(
    request: &ApplianceRequest,
    registry: &ClusterRegistry,
    grid: &QuantizationGrid,
) -> Result<Assignment> {
    let lax = laxity_level(grid, request.laxity());
    let index = match request.category {
        Category::Nid => {
            let library = grid.nid_library()?;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in library.iter().enumerate() {
                let d = l1(p, &request.profile);
                if d < best_d - TIE_EPS {
                    best = i;
                    best_d = d;
                }
            }
            best * grid.laxity_levels + lax
        }
        cat => {
            let units = request.energy / grid.energy_step;
            let e = ((units - 1e-9).ceil().max(1.0) as usize).min(grid.energy_levels);
            let base = (e - 1) * grid.laxity_levels + lax;
            if cat == Category::Canonical {
                base
            } else {
                let g = nearest(&grid.rate_levels, request.max_rate / grid.energy_step, |r| r as f64);
                let r = nearest(&grid.rho_levels, request.target_fraction, |r| r);
                (base * grid.rate_levels.len() + g) * grid.rho_levels.len() + r
            }
        }
    };
    let lookup = |index: usize| {
        registry.get(request.category, index).ok_or_else(|| {
            Error::Assignment(format!(
                "request {}: no {} cluster {index} in registry",
                request.id, request.category
            ))
        })
    };
    let mut index = index;
    let mut spec = lookup(index)?;
    let state = match &spec.kind {
        ClusterKind::Battery(b) => {
            let x0 = (request.initial_charge / grid.energy_step).round().max(0.0) as usize;
            let mut x0 = x0.min(b.capacity);
            // A member that cannot reach its target in time becomes must-run:
            // its laxity grows to the first level that allows charging at full rate.
            let stride = match request.category {
                Category::Canonical => 1,
                _ => grid.rate_levels.len() * grid.rho_levels.len(),
            };
            let mut level = lax;
            while steps_to_target(spec, x0)? > spec.laxity() && level + 1 < grid.laxity_levels {
                level += 1;
                index += stride;
                spec = lookup(index)?;
            }
            while steps_to_target(spec, x0)? > spec.laxity() {
                x0 += 1;
            }
            x0
        }
        ClusterKind::Nid(_) => 0,
    };
    Ok(Assignment {
        request: request.id,
        category: request.category,
        cluster: index,
        state,
        arrival: request.arrival,
    })
}

pub fn quantize_all(
    requests: &[ApplianceRequest],
    registry: &ClusterRegistry,
    grid: &QuantizationGrid,
) -> Result<Vec<Assignment>> {
    requests.iter().map(|r| quantize_request(r, registry, grid)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterErrorRow {
    pub category: Category,
    pub q: usize,
    pub count: usize,
    pub mean_energy_err: f64,
    pub mean_laxity_err: f64,
}

/// Mean absolute rounding error per occupied cluster, in kWh and steps.
pub fn quantization_error_report(
    requests: &[ApplianceRequest],
    registry: &ClusterRegistry,
    grid: &QuantizationGrid,
) -> Result<Vec<ClusterErrorRow>> {
    let mut acc: BTreeMap<(Category, usize), (usize, f64, f64)> = BTreeMap::new();
    for r in requests {
        let a = quantize_request(r, registry, grid)?;
        let spec = registry.get(a.category, a.cluster).expect("assigned cluster exists");
        let (de, dl) = match &spec.kind {
            ClusterKind::Battery(b) => (
                (b.capacity as f64 * grid.energy_step - r.energy).abs(),
                (r.laxity() - b.laxity as f64).abs(),
            ),
            ClusterKind::Nid(n) => ((n.energy() - r.energy).abs(), (r.laxity() - n.max_delay as f64).abs()),
        };
        let e = acc.entry((a.category, a.cluster)).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += de;
        e.2 += dl;
    }
    Ok(acc
        .into_iter()
        .map(|((category, q), (count, se, sl))| ClusterErrorRow {
            category,
            q,
            count,
            mean_energy_err: se / count as f64,
            mean_laxity_err: sl / count as f64,
        })
        .collect())
}

pub fn write_error_report<W: std::io::Write>(rows: &[ClusterErrorRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
