//! Out-of-sample evaluation under downward capacity shifts and the
//! radius/reduction sensitivity sweep.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::OpType;
use crate::maghp::{
    build_det, build_dr, build_sp, recourse_cost, BuildOptions, CapacityProfile, Epsilon,
    GroundDelayPolicy, MaghpError, MaghpInstance, ModelKind, SolveResult,
};
use crate::pmf::{Pmf, PmfError};
use crate::solver::{ConstraintSense, MilpBackend, Model, SolveOptions, SolverError, VarKind};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("target mean {target} unreachable; the variability band allows at least {min_mean}")]
    InfeasibleReduction { target: f64, min_mean: f64 },
    #[error("invalid reduction spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Maghp(#[from] MaghpError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionSpec {
    /// Fractional drop `r` of every mean capacity.
    pub reduction_level: f64,
    /// Largest relative change `δ` of any atom's weight.
    pub variability_cap: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for ReductionSpec {
    fn default() -> Self {
        Self {
            reduction_level: 0.0,
            variability_cap: 1.0,
            sample_count: 100,
            seed: 0,
        }
    }
}

impl ReductionSpec {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if !(0.0..1.0).contains(&self.reduction_level) {
            return Err(EvaluationError::InvalidSpec(format!(
                "reduction level {} outside [0, 1)",
                self.reduction_level
            )));
        }
        if !(self.variability_cap >= 0.0 && self.variability_cap.is_finite()) {
            return Err(EvaluationError::InvalidSpec(format!(
                "variability cap {} must be non-negative",
                self.variability_cap
            )));
        }
        if self.sample_count == 0 {
            return Err(EvaluationError::InvalidSpec("sample count must be positive".into()));
        }
        Ok(())
    }
}

/// Weight bounds `[p̂ - δp̂, p̂ + δp̂]` clipped at zero.
pub fn variability_band(p: &Pmf, delta: f64) -> Vec<(f64, f64)> {
    p.weights()
        .iter()
        .map(|&w| ((w - delta * w).max(0.0), w + delta * w))
        .collect()
}

const MEAN_SLACK: f64 = 1e-9;

/// Lowest-mean reweighting of `p` whose mean stays at least `(1 - r)·mean(p)`
/// and whose weights stay within the `δ` band. The support is unchanged.
pub fn reduce_distribution(
    p: &Pmf,
    r: f64,
    delta: f64,
    backend: &dyn MilpBackend,
) -> Result<Pmf, EvaluationError> {
    ReductionSpec {
        reduction_level: r,
        variability_cap: delta,
        ..Default::default()
    }
    .validate()?;
    let target = p.mean() * (1.0 - r);
    let band = variability_band(p, delta);
    let xs: Vec<f64> = p.support().iter().map(|&s| s as f64).collect();

    let mut model = Model::new();
    let vars: Vec<_> = band
        .iter()
        .zip(&xs)
        .map(|(&(lo, hi), &x)| model.add_bounded_variable(lo, hi, false, x))
        .collect();
    model.add_linear_constraint(vars.iter().map(|&v| (v, 1.0)), ConstraintSense::Eq, 1.0);
    model.add_linear_constraint(vars.iter().zip(&xs).map(|(&v, &x)| (v, x)), ConstraintSense::Ge, target);
    let sol = model.minimize(backend, &SolveOptions::default())?;
    let raw: Vec<f64> = vars.iter().map(|&v| sol.value(v)).collect();
    let weights = polish(&raw, &band, &xs, target);

    let mean: f64 = weights.iter().zip(&xs).map(|(w, x)| w * x).sum();
    if mean > target + MEAN_SLACK * target.max(1.0) {
        return Err(EvaluationError::InfeasibleReduction {
            target,
            min_mean: mean,
        });
    }
    Ok(Pmf::new(p.support().to_vec(), weights)?)
}

/// Snaps a vertex solution onto its active bounds and re-solves the free
/// weights from the two equality rows, so mass and mean hold to rounding.
fn polish(raw: &[f64], band: &[(f64, f64)], xs: &[f64], target: f64) -> Vec<f64> {
    const SNAP: f64 = 1e-7;
    let mut w: Vec<f64> = raw
        .iter()
        .zip(band)
        .map(|(&v, &(lo, hi))| {
            if (v - lo).abs() <= SNAP {
                lo
            } else if (hi - v).abs() <= SNAP {
                hi
            } else {
                v.clamp(lo, hi)
            }
        })
        .collect();
    let free: Vec<usize> = (0..w.len())
        .filter(|&i| w[i] != band[i].0 && w[i] != band[i].1)
        .collect();
    let fixed_mass: f64 = (0..w.len()).filter(|i| !free.contains(i)).map(|i| w[i]).sum();
    let fixed_mean: f64 = (0..w.len()).filter(|i| !free.contains(i)).map(|i| w[i] * xs[i]).sum();
    match free[..] {
        [i] => w[i] = (1.0 - fixed_mass).clamp(band[i].0, band[i].1),
        [i, j] if xs[i] != xs[j] => {
            // w_i + w_j = m, x_i w_i + x_j w_j = target - fixed_mean
            let m = 1.0 - fixed_mass;
            let wi = (target - fixed_mean - xs[j] * m) / (xs[i] - xs[j]);
            w[i] = wi.clamp(band[i].0, band[i].1);
            w[j] = (m - w[i]).clamp(band[j].0, band[j].1);
        }
        _ => {}
    }
    w
}

/// Realized per-interval capacities for every active tree of an instance.
pub type CapacitySample = CapacityProfile;

/// Shifts each tree's stage representatives by `r` and draws
/// `sample_count` independent stage vectors per tree.
///
/// Draws consume one uniform per (sample, tree, stage) in a fixed order, so
/// two specs that differ only in `reduction_level` share their random numbers.
pub fn resample_capacities(
    instance: &MaghpInstance,
    spec: &ReductionSpec,
    backend: &dyn MilpBackend,
) -> Result<Vec<CapacitySample>, EvaluationError> {
    spec.validate()?;
    let trees = instance.active_trees();
    let shifted: Vec<Vec<Pmf>> = trees
        .iter()
        .map(|t| {
            t.time_clusters
                .representatives
                .iter()
                .map(|p| reduce_distribution(p, spec.reduction_level, spec.variability_cap, backend))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = (0..spec.sample_count)
        .map(|_| {
            trees
                .iter()
                .zip(&shifted)
                .map(|(t, stages)| {
                    let values: Vec<u32> = stages.iter().map(|p| p.quantile(rng.gen::<f64>())).collect();
                    ((t.airport.clone(), t.op_type), t.expand(&values))
                })
                .collect()
        })
        .collect();
    Ok(samples)
}

/// Second-stage cost of a policy on one realized sample, split by operation type.
pub fn sample_recourse(
    policy: &GroundDelayPolicy,
    instance: &MaghpInstance,
    sample: &CapacitySample,
) -> (f64, f64) {
    let unit = instance.costs.recourse();
    let (mut dep, mut arr) = (0.0, 0.0);
    for ((airport, op), caps) in sample {
        let c = recourse_cost(&policy.load(instance, airport, *op), caps, unit);
        match op {
            OpType::Departure => dep += c,
            OpType::Arrival => arr += c,
        }
    }
    (dep, arr)
}

/// Second stage of one sample solved as an LP over the queue variables.
pub fn second_stage_lp(
    policy: &GroundDelayPolicy,
    instance: &MaghpInstance,
    sample: &CapacitySample,
    backend: &dyn MilpBackend,
) -> Result<f64, EvaluationError> {
    let unit = instance.costs.recourse();
    let mut model = Model::new();
    for ((airport, op), caps) in sample {
        let load = policy.load(instance, airport, *op);
        for (l, c) in load.iter().zip(caps) {
            let y = model.add_variable(VarKind::Continuous, unit);
            // load_t <= cap_t + y_t
            model.add_linear_constraint([(y, 1.0)], ConstraintSense::Ge, *l as f64 - *c as f64);
        }
    }
    Ok(model.minimize(backend, &SolveOptions::default())?.objective)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfSampleCost {
    pub first_stage_cost: f64,
    /// Mean second-stage departure queueing cost.
    pub departure_recourse: f64,
    pub arrival_recourse: f64,
    /// First-stage cost plus the mean second-stage cost.
    pub mean_cost: f64,
    /// Total cost of every sample.
    pub per_sample: Vec<f64>,
}

pub fn out_of_sample_cost(
    policy: &GroundDelayPolicy,
    instance: &MaghpInstance,
    samples: &[CapacitySample],
) -> OutOfSampleCost {
    let first = policy.first_stage_cost(&instance.costs);
    let parts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| sample_recourse(policy, instance, s))
        .collect();
    let n = samples.len().max(1) as f64;
    let dep = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let arr = parts.iter().map(|p| p.1).sum::<f64>() / n;
    OutOfSampleCost {
        first_stage_cost: first,
        departure_recourse: dep,
        arrival_recourse: arr,
        mean_cost: first + dep + arr,
        per_sample: parts.iter().map(|(d, a)| first + d + a).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub day: String,
    pub epsilons: Vec<f64>,
    pub reduction_levels: Vec<f64>,
    pub variability_cap: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub build: BuildOptions,
    pub solve: SolveOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            day: "fixture".into(),
            epsilons: (0..=10).map(|i| i as f64 / 100.0).collect(),
            reduction_levels: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            variability_cap: 1.0,
            sample_count: 100,
            seed: 0,
            build: BuildOptions::default(),
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub day: String,
    pub reduction: f64,
    pub model: ModelKind,
    pub epsilon: Option<f64>,
    pub in_sample: f64,
    pub cost: OutOfSampleCost,
}

/// One line of the headline comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub day: String,
    pub reduction: f64,
    pub det: f64,
    pub sp: f64,
    pub dr: f64,
    pub improvement_vs_det: f64,
    pub improvement_vs_sp: f64,
    pub epsilon_star: f64,
    pub det_departure_delay: f64,
    pub det_arrival_delay: f64,
    pub sp_departure_delay: f64,
    pub sp_arrival_delay: f64,
    pub dr_departure_delay: f64,
    pub dr_arrival_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<PolicyRow>,
    pub summary: Vec<SummaryRow>,
    /// In-sample dr objective per radius, with the sp objective for reference.
    pub in_sample: Vec<(f64, f64)>,
    pub sp_in_sample: f64,
}

/// Solved policies for one instance: det on the best-capacity scenario, sp,
/// and dr at each radius.
pub struct SolvedPolicies {
    pub det: SolveResult,
    pub sp: SolveResult,
    pub dr: Vec<(f64, SolveResult)>,
}

pub fn solve_policies(
    instance: &MaghpInstance,
    epsilons: &[f64],
    build: &BuildOptions,
    backend: &(dyn MilpBackend + Sync),
    options: &SolveOptions,
) -> Result<SolvedPolicies, EvaluationError> {
    let det = build_det(instance, &instance.best_case_capacities())?.solve(instance, backend, options)?;
    let sp = build_sp(instance, build)?.solve(instance, backend, options)?;
    let dr = epsilons
        .par_iter()
        .map(|&e| {
            let r = build_dr(instance, Epsilon::uniform(e), build)?.solve(instance, backend, options)?;
            Ok((e, r))
        })
        .collect::<Result<Vec<_>, EvaluationError>>()?;
    Ok(SolvedPolicies { det, sp, dr })
}

fn improvement(base: f64, value: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - value) / base
    }
}

/// Solves every model once and scores each policy on shared samples at every
/// reduction level.
pub fn epsilon_sweep(
    instance: &MaghpInstance,
    config: &SweepConfig,
    backend: &(dyn MilpBackend + Sync),
) -> Result<SensitivityReport, EvaluationError> {
    if config.epsilons.is_empty() {
        return Err(EvaluationError::InvalidSpec("empty epsilon grid".into()));
    }
    let solved = solve_policies(instance, &config.epsilons, &config.build, backend, &config.solve)?;
    sweep_solved(instance, &solved, config, backend)
}

/// Scoring half of [`epsilon_sweep`] for already solved policies.
pub fn sweep_solved(
    instance: &MaghpInstance,
    solved: &SolvedPolicies,
    config: &SweepConfig,
    backend: &dyn MilpBackend,
) -> Result<SensitivityReport, EvaluationError> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &r in &config.reduction_levels {
        let spec = ReductionSpec {
            reduction_level: r,
            variability_cap: config.variability_cap,
            sample_count: config.sample_count,
            seed: config.seed,
        };
        let samples = resample_capacities(instance, &spec, backend)?;
        let row = |model, epsilon, res: &SolveResult| PolicyRow {
            day: config.day.clone(),
            reduction: r,
            model,
            epsilon,
            in_sample: res.objective,
            cost: out_of_sample_cost(&res.policy, instance, &samples),
        };
        let det = row(ModelKind::Det, None, &solved.det);
        let sp = row(ModelKind::Sp, None, &solved.sp);
        let dr: Vec<PolicyRow> = solved
            .dr
            .iter()
            .map(|(e, res)| row(ModelKind::Dr, Some(*e), res))
            .collect();
        // smallest radius among the cheapest
        let best = dr
            .iter()
            .fold(None::<&PolicyRow>, |acc, x| match acc {
                Some(a) if a.cost.mean_cost <= x.cost.mean_cost => Some(a),
                _ => Some(x),
            })
            .expect("epsilon grid is non-empty");
        summary.push(SummaryRow {
            day: config.day.clone(),
            reduction: r,
            det: det.cost.mean_cost,
            sp: sp.cost.mean_cost,
            dr: best.cost.mean_cost,
            improvement_vs_det: improvement(det.cost.mean_cost, best.cost.mean_cost),
            improvement_vs_sp: improvement(sp.cost.mean_cost, best.cost.mean_cost),
            epsilon_star: best.epsilon.unwrap_or(0.0),
            det_departure_delay: det.cost.departure_recourse,
            det_arrival_delay: det.cost.arrival_recourse,
            sp_departure_delay: sp.cost.departure_recourse,
            sp_arrival_delay: sp.cost.arrival_recourse,
            dr_departure_delay: best.cost.departure_recourse,
            dr_arrival_delay: best.cost.arrival_recourse,
        });
        rows.push(det);
        rows.push(sp);
        rows.extend(dr);
    }
    Ok(SensitivityReport {
        rows,
        summary,
        in_sample: solved.dr.iter().map(|(e, r)| (*e, r.objective)).collect(),
        sp_in_sample: solved.sp.objective,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Headline table: Day, Reduction, Det., Stoch., DR, %↓ vs Det., %↓ vs Stoch., ε*,
/// followed by mean second-stage delay costs per model.
pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), EvaluationError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "Day",
        "Reduction",
        "Det.",
        "Stoch.",
        "DR",
        "%↓ vs Det.",
        "%↓ vs Stoch.",
        "ε*",
        "Det. dep. delay",
        "Det. arr. delay",
        "Stoch. dep. delay",
        "Stoch. arr. delay",
        "DR dep. delay",
        "DR arr. delay",
    ])?;
    for r in rows {
        out.write_record([
            r.day.clone(),
            format!("{:.0}%", 100.0 * r.reduction),
            format!("{:.2}", r.det),
            format!("{:.2}", r.sp),
            format!("{:.2}", r.dr),
            pct(r.improvement_vs_det),
            pct(r.improvement_vs_sp),
            format!("{:.2}", r.epsilon_star),
            format!("{:.2}", r.det_departure_delay),
            format!("{:.2}", r.det_arrival_delay),
            format!("{:.2}", r.sp_departure_delay),
            format!("{:.2}", r.sp_arrival_delay),
            format!("{:.2}", r.dr_departure_delay),
            format!("{:.2}", r.dr_arrival_delay),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One line per (reduction, model, radius, sample) with the sample's total cost.
pub fn write_samples_csv<W: Write>(w: W, rows: &[PolicyRow]) -> Result<(), EvaluationError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["day", "reduction", "model", "epsilon", "sample", "cost"])?;
    for r in rows {
        let eps = r.epsilon.map(|e| e.to_string()).unwrap_or_default();
        for (i, c) in r.cost.per_sample.iter().enumerate() {
            out.write_record([
                r.day.clone(),
                r.reduction.to_string(),
                r.model.to_string(),
                eps.clone(),
                i.to_string(),
                c.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One line per scored policy and reduction level.
pub fn write_policy_rows_csv<W: Write>(w: W, rows: &[PolicyRow]) -> Result<(), EvaluationError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "day",
        "reduction",
        "model",
        "epsilon",
        "in_sample",
        "first_stage",
        "departure_recourse",
        "arrival_recourse",
        "mean_cost",
    ])?;
    for r in rows {
        out.write_record([
            r.day.clone(),
            r.reduction.to_string(),
            r.model.to_string(),
            r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
            r.in_sample.to_string(),
            r.cost.first_stage_cost.to_string(),
            r.cost.departure_recourse.to_string(),
            r.cost.arrival_recourse.to_string(),
            r.cost.mean_cost.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// In-sample objective against the radius.
pub fn write_in_sample_csv<W: Write>(w: W, report: &SensitivityReport) -> Result<(), EvaluationError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "dr_objective", "sp_objective"])?;
    for (e, v) in &report.in_sample {
        out.write_record([e.to_string(), v.to_string(), report.sp_in_sample.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
