//! Time clustering of PMF series and K-means compression into product-form
//! scenario trees.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{AirportId, OpType};
use crate::pmf::{wasserstein_1d, Pmf, PmfError};

pub const DEFAULT_MAX_SCENARIOS: usize = 4096;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("time series has {0} intervals, at least 2 are required")]
    TooFewIntervals(usize),
    #[error("change-point count {n} invalid for {intervals} intervals")]
    InvalidN { n: usize, intervals: usize },
    #[error("k = {k} exceeds the {atoms} positively weighted atoms")]
    KTooLarge { k: usize, atoms: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("tree would have {count} scenarios, cap is {cap}")]
    ScenarioExplosion { count: usize, cap: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("malformed scenario tree: {0}")]
    Malformed(String),
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

/// Partition of `0..horizon` into consecutive stages.
///
/// `boundaries` holds the last interval of every stage except the final one,
/// so stage 1 is `[0, c_1]`, stage 2 is `[c_1 + 1, c_2]`, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeClustering {
    pub horizon: usize,
    pub boundaries: Vec<usize>,
    pub representatives: Vec<Pmf>,
}

impl TimeClustering {
    pub fn new(
        horizon: usize,
        boundaries: Vec<usize>,
        representatives: Vec<Pmf>,
    ) -> Result<Self, ScenarioError> {
        let c = Self {
            horizon,
            boundaries,
            representatives,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon == 0 {
            return Err(ScenarioError::Malformed("empty horizon".into()));
        }
        let sorted = self.boundaries.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.boundaries.last().map_or(true, |&c| c + 1 < self.horizon);
        if !sorted || !in_range {
            return Err(ScenarioError::Malformed(format!(
                "boundaries {:?} do not partition 0..{}",
                self.boundaries, self.horizon
            )));
        }
        if self.representatives.len() != self.num_stages() {
            return Err(ScenarioError::Malformed(format!(
                "{} representatives for {} stages",
                self.representatives.len(),
                self.num_stages()
            )));
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn intervals(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(self.num_stages());
        for &c in &self.boundaries {
            out.push(start..c + 1);
            start = c + 1;
        }
        out.push(start..self.horizon);
        out
    }

    /// Stage index covering interval `t`.
    pub fn stage_of(&self, t: usize) -> Option<usize> {
        (t < self.horizon).then(|| self.boundaries.partition_point(|&c| c < t))
    }
}

/// Wasserstein gaps `w_t = W(pmf_t, pmf_{t-1})` for `t = 1..len`; entry `t - 1` holds `w_t`.
pub fn wasserstein_gaps(pmfs: &[Pmf]) -> Vec<f64> {
    pmfs.windows(2).map(|w| wasserstein_1d(&w[1], &w[0])).collect()
}

/// Splits the series at its `n` largest consecutive Wasserstein gaps (ties
/// toward earlier intervals) and averages each stage's members.
pub fn cluster_time_series(pmfs: &[Pmf], n: usize) -> Result<TimeClustering, ScenarioError> {
    let horizon = pmfs.len();
    if horizon < 2 {
        return Err(ScenarioError::TooFewIntervals(horizon));
    }
    if n > horizon - 1 {
        return Err(ScenarioError::InvalidN { n, intervals: horizon });
    }
    let gaps = wasserstein_gaps(pmfs);
    let mut order: Vec<usize> = (0..gaps.len()).collect();
    order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
    // gap index i separates intervals i and i + 1
    let mut boundaries: Vec<usize> = order[..n].to_vec();
    boundaries.sort_unstable();

    let mut clustering = TimeClustering {
        horizon,
        boundaries,
        representatives: Vec::new(),
    };
    clustering.representatives = clustering
        .intervals()
        .into_iter()
        .map(|r| Pmf::average(&pmfs[r].iter().collect::<Vec<_>>()))
        .collect::<Result<_, _>>()?;
    Ok(clustering)
}

/// Compressed stage distribution; atoms sorted by support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReducedPmf {
    pub atoms: Vec<(u32, f64)>,
}

impl ReducedPmf {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(s, p)| s as f64 * p).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn to_pmf(&self) -> Result<Pmf, PmfError> {
        Pmf::from_atoms(self.atoms.iter().copied())
    }
}

fn round_half_up(x: f64) -> u32 {
    (x + 0.5).floor() as u32
}

/// Weighted 1-D K-means over the positively weighted atoms of `p`.
///
/// Centers start at weighted quantiles `(j + 0.5) / k`; duplicate seeds are
/// replaced by other support points drawn with `seed`. Lloyd iterations run
/// until the assignment is stable or 100 rounds.
pub fn compress_pmf_kmeans(p: &Pmf, k: usize, seed: u64) -> Result<ReducedPmf, ScenarioError> {
    let points: Vec<(f64, f64)> = p
        .iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|(s, w)| (s as f64, w))
        .collect();
    if k == 0 {
        return Err(ScenarioError::ZeroK);
    }
    if k > points.len() {
        return Err(ScenarioError::KTooLarge { k, atoms: points.len() });
    }

    let total: f64 = points.iter().map(|p| p.1).sum();
    let mut centers: Vec<f64> = Vec::with_capacity(k);
    for j in 0..k {
        let target = (j as f64 + 0.5) / k as f64 * total;
        let mut acc = 0.0;
        let mut pick = points[points.len() - 1].0;
        for &(s, w) in &points {
            acc += w;
            if acc >= target {
                pick = s;
                break;
            }
        }
        if !centers.contains(&pick) {
            centers.push(pick);
        }
    }
    if centers.len() < k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spare: Vec<f64> = points
            .iter()
            .map(|p| p.0)
            .filter(|s| !centers.contains(s))
            .collect();
        spare.shuffle(&mut rng);
        centers.extend(spare.into_iter().take(k - centers.len()));
    }
    centers.sort_by(f64::total_cmp);

    let nearest = |centers: &[f64], x: f64| -> usize {
        let mut best = 0;
        for (j, c) in centers.iter().enumerate() {
            if (x - c).abs() < (x - centers[best]).abs() {
                best = j;
            }
        }
        best
    };

    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centers, p.0)).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut num = vec![0.0; k];
        let mut den = vec![0.0; k];
        for (&(s, w), &a) in points.iter().zip(&assign) {
            num[a] += s * w;
            den[a] += w;
        }
        for j in 0..k {
            if den[j] > 0.0 {
                centers[j] = num[j] / den[j];
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = (points[a].0 - centers[assign[a]]).abs();
                        let db = (points[b].0 - centers[assign[b]]).abs();
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centers[j] = points[far].0;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p.0)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for (&(s, w), &a) in points.iter().zip(&assign) {
        num[a] += s * w;
        den[a] += w;
    }
    let mut atoms: Vec<(u32, f64)> = (0..k)
        .filter(|&j| den[j] > 0.0)
        .map(|j| (round_half_up(num[j] / den[j]), den[j]))
        .collect();
    atoms.sort_by_key(|a| a.0);
    // contiguous clusters keep rounded supports distinct; merge defensively anyway
    atoms.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    Ok(ReducedPmf { atoms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// One capacity per stage.
    pub capacities: Vec<u32>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub k_per_stage: usize,
    pub seed: u64,
    pub max_scenarios: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            k_per_stage: 3,
            seed: 0,
            max_scenarios: DEFAULT_MAX_SCENARIOS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub airport: AirportId,
    pub op_type: OpType,
    pub time_clusters: TimeClustering,
    pub stages: Vec<ReducedPmf>,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioTree {
    /// Enumerates the product of the stage atoms, stage 1 most significant.
    pub fn from_stages(
        airport: impl Into<AirportId>,
        op_type: OpType,
        time_clusters: TimeClustering,
        stages: Vec<ReducedPmf>,
        max_scenarios: usize,
    ) -> Result<Self, ScenarioError> {
        time_clusters.validate()?;
        if stages.len() != time_clusters.num_stages() {
            return Err(ScenarioError::Malformed(format!(
                "{} stage distributions for {} time clusters",
                stages.len(),
                time_clusters.num_stages()
            )));
        }
        if stages.iter().any(|s| s.is_empty()) {
            return Err(ScenarioError::Malformed("stage without atoms".into()));
        }
        let count = stages
            .iter()
            .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
            .unwrap_or(usize::MAX);
        if count > max_scenarios {
            return Err(ScenarioError::ScenarioExplosion { count, cap: max_scenarios });
        }
        let mut scenarios = vec![Scenario {
            capacities: Vec::new(),
            probability: 1.0,
        }];
        for stage in &stages {
            scenarios = scenarios
                .iter()
                .flat_map(|prefix| {
                    stage.atoms.iter().map(move |&(s, p)| {
                        let mut capacities = prefix.capacities.clone();
                        capacities.push(s);
                        Scenario {
                            capacities,
                            probability: prefix.probability * p,
                        }
                    })
                })
                .collect();
        }
        Ok(Self {
            airport: airport.into(),
            op_type,
            time_clusters,
            stages,
            scenarios,
        })
    }

    /// Single-stage tree that places capacity `value` on every interval.
    pub fn constant(airport: impl Into<AirportId>, op_type: OpType, horizon: usize, value: u32) -> Self {
        let clustering = TimeClustering {
            horizon,
            boundaries: Vec::new(),
            representatives: vec![Pmf::point_mass(value)],
        };
        let stages = vec![ReducedPmf { atoms: vec![(value, 1.0)] }];
        Self::from_stages(airport, op_type, clustering, stages, 1)
            .expect("a one-atom tree is always valid")
    }

    /// Checks structural invariants of a tree read from disk.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let rebuilt = Self::from_stages(
            self.airport.clone(),
            self.op_type,
            self.time_clusters.clone(),
            self.stages.clone(),
            usize::MAX,
        )?;
        if rebuilt.scenarios.len() != self.scenarios.len()
            || rebuilt
                .scenarios
                .iter()
                .zip(&self.scenarios)
                .any(|(a, b)| a.capacities != b.capacities || (a.probability - b.probability).abs() > 1e-9)
        {
            return Err(ScenarioError::Malformed(
                "scenario list is not the product of the stage distributions".into(),
            ));
        }
        let total: f64 = self.scenarios.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(ScenarioError::Malformed(format!("scenario mass {total}")));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.time_clusters.horizon
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    /// Capacity at interval `t` under scenario `scenario`.
    pub fn capacity_at(&self, scenario: usize, t: usize) -> Result<u32, ScenarioError> {
        let s = self.scenarios.get(scenario).ok_or_else(|| {
            ScenarioError::IndexOutOfRange(format!(
                "scenario {scenario} of {}",
                self.scenarios.len()
            ))
        })?;
        let stage = self.time_clusters.stage_of(t).ok_or_else(|| {
            ScenarioError::IndexOutOfRange(format!("interval {t} of {}", self.horizon()))
        })?;
        Ok(s.capacities[stage])
    }

    /// Per-interval capacities of one stage vector.
    pub fn expand(&self, stage_values: &[u32]) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.horizon());
        for (r, &v) in self.time_clusters.intervals().iter().zip(stage_values) {
            out.extend(std::iter::repeat(v).take(r.len()));
        }
        out
    }
}

/// Clusters a PMF series and compresses every stage; `k` is clamped to the
/// number of positively weighted atoms in each stage representative.
pub fn build_scenario_tree(
    airport: impl Into<AirportId>,
    op_type: OpType,
    clustering: TimeClustering,
    config: &TreeConfig,
) -> Result<ScenarioTree, ScenarioError> {
    if config.k_per_stage == 0 {
        return Err(ScenarioError::ZeroK);
    }
    clustering.validate()?;
    let stages = clustering
        .representatives
        .iter()
        .enumerate()
        .map(|(i, rep)| {
            let k = config.k_per_stage.min(rep.positive_atoms());
            compress_pmf_kmeans(rep, k, config.seed.wrapping_add(i as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ScenarioTree::from_stages(airport, op_type, clustering, stages, config.max_scenarios)
}
