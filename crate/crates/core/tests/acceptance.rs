//! Acceptance checks, one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gdp_dro::capacity::{estimate_capacities, Criterion, EstimationParams, IntervalStats, OpType};
use gdp_dro::evaluation::{
    epsilon_sweep, reduce_distribution, resample_capacities, sample_recourse, second_stage_lp,
    variability_band, EvaluationError, ReductionSpec, SweepConfig,
};
use gdp_dro::maghp::{
    build_dr, build_sp, policy_worst_case, BuildOptions, Epsilon, MaghpError, MaghpInstance,
};
use gdp_dro::pmf::{l1_distance, pairwise_costs, wasserstein_1d, wasserstein_lp, DiscreteJointDistribution, Pmf};
use gdp_dro::prediction::{evaluate, metrics_from_predictions, train, PredictorKind, TrainConfig};
use gdp_dro::scenario::{build_scenario_tree, cluster_time_series, compress_pmf_kmeans, TreeConfig};
use gdp_dro::solver::{HighsBackend, SolveOptions};
use gdp_dro::synthetic::{
    random_instance, stress_instance, synthetic_labeled, RandomInstanceConfig, StressConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn opts() -> SolveOptions {
    SolveOptions {
        mip_rel_gap: 0.0,
        ..SolveOptions::default()
    }
}

fn random_pmf(rng: &mut ChaCha8Rng, max_atoms: usize, max_value: u32) -> Pmf {
    let n = rng.gen_range(1..=max_atoms);
    let atoms: Vec<(u32, f64)> = (0..n)
        .map(|_| (rng.gen_range(0..=max_value), rng.gen_range(0.05..1.0)))
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    Pmf::from_atoms(atoms.into_iter().map(|(s, w)| (s, w / total))).unwrap()
}

/// Random instances of the size given in the criteria whose models are feasible.
fn feasible_instances(count: usize) -> Vec<MaghpInstance> {
    let cfg = RandomInstanceConfig::default();
    (0u64..)
        .map(|seed| random_instance(seed, &cfg))
        .filter(|inst| {
            build_sp(inst, &BuildOptions::default())
                .unwrap()
                .solve(inst, &HighsBackend, &opts())
                .is_ok()
        })
        .take(count)
        .collect()
}

fn ac1(instances: &[MaghpInstance]) -> Check {
    let mut worst = 0.0f64;
    for (k, inst) in instances.iter().enumerate() {
        let sp = build_sp(inst, &BuildOptions::default())
            .and_then(|m| m.solve(inst, &HighsBackend, &opts()))
            .map_err(|e| format!("instance {k}: sp {e}"))?;
        let dr = build_dr(inst, Epsilon::uniform(0.0), &BuildOptions::default())
            .and_then(|m| m.solve(inst, &HighsBackend, &opts()))
            .map_err(|e| format!("instance {k}: dr {e}"))?;
        let rel = (dr.objective - sp.objective).abs() / sp.objective.max(1.0);
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || format!("instance {k}: dr {} vs sp {}", dr.objective, sp.objective))?;
    }
    Ok(format!("{} instances, max relative gap {worst:.2e}", instances.len()))
}

fn ac2() -> Check {
    let cfg = RandomInstanceConfig {
        max_flights: 8,
        max_intervals: 5,
        ..Default::default()
    };
    let mut checked = 0;
    let mut worst = 0.0f64;
    for seed in 0u64.. {
        if checked == 20 {
            break;
        }
        let inst = random_instance(seed, &cfg);
        let mut any = false;
        for e in [0.02, 0.05, 0.1] {
            let res = match build_dr(&inst, Epsilon::uniform(e), &BuildOptions::default())
                .and_then(|m| m.solve(&inst, &HighsBackend, &opts()))
            {
                Ok(r) => r,
                Err(MaghpError::Infeasible) => continue,
                Err(e) => return Err(format!("seed {seed}: {e}")),
            };
            let primal = res.first_stage_cost
                + inst
                    .active_trees()
                    .into_iter()
                    .map(|t| policy_worst_case(&inst, &res.policy, t, e, &HighsBackend))
                    .sum::<Result<f64, _>>()
                    .map_err(|e| e.to_string())?;
            let rel = (primal - res.objective).abs() / primal.abs().max(1.0);
            worst = worst.max(rel);
            ensure(rel <= 1e-5, || format!("seed {seed} eps {e}: {} vs {primal}", res.objective))?;
            any = true;
        }
        checked += any as usize;
    }
    Ok(format!("{checked} instances x 3 radii, max relative gap {worst:.2e}"))
}

fn grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 100.0).collect()
}

fn ac3(instances: &[MaghpInstance]) -> Check {
    let mut pairs = 0;
    let check = |name: &str, values: &[f64]| -> Result<(), String> {
        for w in values.windows(2) {
            ensure(w[1] >= w[0] - 1e-7, || format!("{name}: {} then {}", w[0], w[1]))?;
        }
        Ok(())
    };
    for (k, inst) in instances.iter().enumerate() {
        let values = grid()
            .into_iter()
            .map(|e| {
                build_dr(inst, Epsilon::uniform(e), &BuildOptions::default())
                    .and_then(|m| m.solve(inst, &HighsBackend, &opts()))
                    .map(|r| r.objective)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("instance {k}: {e}"))?;
        check(&format!("instance {k}"), &values)?;
        pairs += values.len() - 1;
    }
    let stress = stress_instance(&StressConfig::default());
    let values = grid()
        .into_iter()
        .map(|e| {
            build_dr(&stress, Epsilon::uniform(e), &BuildOptions::default())
                .and_then(|m| m.solve(&stress, &HighsBackend, &opts()))
                .map(|r| r.objective)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("stress: {e}"))?;
    check("stress", &values)?;
    pairs += values.len() - 1;
    Ok(format!("{} instances, {pairs} consecutive radius pairs", instances.len() + 1))
}

fn ac4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let p = random_pmf(&mut rng, 8, 12);
        let q = random_pmf(&mut rng, 8, 12);
        let joint = |p: &Pmf| DiscreteJointDistribution::new(p.iter().map(|(s, w)| (vec![s], w)).collect()).unwrap();
        let (jp, jq) = (joint(&p), joint(&q));
        let lp = wasserstein_lp(&jp, &jq, &pairwise_costs(&jp, &jq, l1_distance), &HighsBackend)
            .map_err(|e| e.to_string())?;
        let closed = wasserstein_1d(&p, &q);
        worst = worst.max((lp - closed).abs());
        ensure((lp - closed).abs() <= 1e-8, || format!("pair {i}: {closed} vs {lp}"))?;
    }
    Ok(format!("200 pairs, max gap {worst:.2e}"))
}

/// Lowest reachable mean: fill the band's upper bounds from the smallest atom.
fn min_mean(p: &Pmf, delta: f64) -> f64 {
    let band = variability_band(p, delta);
    let mut w: Vec<f64> = band.iter().map(|b| b.0).collect();
    let mut left = 1.0 - w.iter().sum::<f64>();
    for (i, &(lo, hi)) in band.iter().enumerate() {
        let add = (hi - lo).min(left);
        w[i] += add;
        left -= add;
    }
    w.iter().zip(p.support()).map(|(w, &s)| w * s as f64).sum()
}

fn ac5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut feasible, mut drawn) = (0, 0);
    let mut worst = 0.0f64;
    while feasible < 100 {
        drawn += 1;
        let p = random_pmf(&mut rng, 8, 12);
        let r = rng.gen_range(0.0..0.6);
        let delta = rng.gen_range(0.1..2.0);
        let target = (1.0 - r) * p.mean();
        if min_mean(&p, delta) > target - 1e-6 {
            continue;
        }
        let out = reduce_distribution(&p, r, delta, &HighsBackend).map_err(|e| format!("triple {drawn}: {e}"))?;
        worst = worst.max((out.mean() - target).abs());
        ensure((out.mean() - target).abs() <= 1e-8, || format!("triple {drawn}: mean {} vs {target}", out.mean()))?;
        for ((s, w), (lo, hi)) in p.iter().zip(variability_band(&p, delta)) {
            let v = out.weight_of(s);
            ensure(lo <= v && v <= hi, || format!("triple {drawn}: weight {v} of {s} outside [{lo}, {hi}] (input {w})"))?;
        }
        feasible += 1;
    }
    for (value, r) in [(5u32, 0.2), (1, 0.5), (9, 0.01)] {
        match reduce_distribution(&Pmf::point_mass(value), r, 1.0, &HighsBackend) {
            Err(EvaluationError::InfeasibleReduction { .. }) => {}
            other => return Err(format!("point mass {value} at r {r}: {other:?}")),
        }
    }
    Ok(format!("100 feasible of {drawn} drawn, max mean gap {worst:.2e}; point masses rejected"))
}

fn ac6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50 {
        let horizon = rng.gen_range(2..=12);
        let series: Vec<Pmf> = (0..horizon).map(|_| random_pmf(&mut rng, 8, 10)).collect();
        let n = rng.gen_range(0..horizon.min(3));
        let clustering = cluster_time_series(&series, n).map_err(|e| e.to_string())?;
        let cfg = TreeConfig {
            k_per_stage: rng.gen_range(1..=4),
            seed: case,
            ..Default::default()
        };
        let tree = build_scenario_tree("ATL", OpType::Arrival, clustering, &cfg).map_err(|e| e.to_string())?;
        let total: f64 = tree.scenarios.iter().map(|s| s.probability).sum();
        ensure((total - 1.0).abs() <= 1e-8, || format!("case {case}: total {total}"))?;
        for (i, stage) in tree.stages.iter().enumerate() {
            for &(value, weight) in &stage.atoms {
                let marginal: f64 = tree
                    .scenarios
                    .iter()
                    .filter(|s| s.capacities[i] == value)
                    .map(|s| s.probability)
                    .sum();
                ensure((marginal - weight).abs() <= 1e-12, || {
                    format!("case {case} stage {i} atom {value}: {marginal} vs {weight}")
                })?;
            }
        }
        for rep in &tree.time_clusters.representatives {
            let k = rng.gen_range(1..=rep.positive_atoms());
            let c = compress_pmf_kmeans(rep, k, case).map_err(|e| e.to_string())?;
            let mass: f64 = rep.weights().iter().sum();
            ensure((c.total_mass() - mass).abs() <= 1e-12, || format!("case {case}: mass {} vs {mass}", c.total_mass()))?;
            let full = compress_pmf_kmeans(rep, rep.positive_atoms(), case).map_err(|e| e.to_string())?;
            let expected: Vec<(u32, f64)> = rep.iter().filter(|a| a.1 > 0.0).collect();
            ensure(full.atoms == expected, || format!("case {case}: lossy at full k {:?}", full.atoms))?;
        }
    }
    Ok("50 trees".into())
}

fn ac7() -> Check {
    let inst = stress_instance(&StressConfig::default());
    let rep = epsilon_sweep(&inst, &SweepConfig::default(), &HighsBackend).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for row in &rep.summary {
        let sp_vs_det = (row.det - row.sp) / row.det;
        lines.push(format!(
            "r={:.1} det={:.2} sp={:.2} dr={:.2} eps*={:.2}",
            row.reduction, row.det, row.sp, row.dr, row.epsilon_star
        ));
        ensure(sp_vs_det > 0.2 && row.improvement_vs_det > 0.2, || {
            format!("(a) r {}: sp {:.3}, dr {:.3} below det", row.reduction, sp_vs_det, row.improvement_vs_det)
        })?;
    }
    let last = rep
        .summary
        .iter()
        .find(|r| (r.reduction - 0.5).abs() < 1e-12)
        .ok_or("no r = 0.5 row")?;
    ensure(last.dr < last.sp, || format!("(b) dr {} vs sp {} at r = 0.5", last.dr, last.sp))?;
    for w in rep.summary.windows(2) {
        ensure(w[1].epsilon_star >= w[0].epsilon_star, || {
            format!("(c) eps* {} at r {} after {}", w[1].epsilon_star, w[1].reduction, w[0].epsilon_star)
        })?;
    }
    Ok(format!("dr vs sp at r = 0.5: {:.1}%; {}", 100.0 * last.improvement_vs_sp, lines.join("; ")))
}

fn ac8() -> Check {
    let truths = [0u32, 4, 9, 2];
    let pmfs: Vec<Pmf> = truths.iter().map(|&c| Pmf::point_mass(c)).collect();
    let m = metrics_from_predictions(pmfs.iter().zip(truths), 0.9).map_err(|e| e.to_string())?;
    ensure((m.rmse, m.mae, m.picp, m.mpiw) == (0.0, 0.0, 1.0, 1.0), || format!("perfect predictor {m:?}"))?;
    let (train_set, _) = synthetic_labeled(20_000, 10, 11);
    let (test_set, _) = synthetic_labeled(10_000, 10, 12);
    let cfg = TrainConfig {
        kind: PredictorKind::Empirical,
        max_capacity: Some(10),
        ..Default::default()
    };
    let model = train("ATL", OpType::Arrival, &train_set, &cfg).map_err(|e| e.to_string())?;
    let m = evaluate(&model, &test_set, 0.9).map_err(|e| e.to_string())?;
    ensure(m.picp >= 0.87, || format!("picp {}", m.picp))?;
    Ok(format!("picp {:.4} over 10000 points, mpiw {:.2}", m.picp, m.mpiw))
}

fn ac9() -> Check {
    use Criterion::*;
    let fixture: [(u32, u32, f64, u32); 12] = [
        (2, 2, 0.0, 0),
        (3, 5, 0.0, 0),
        (4, 5, 0.0, 0),
        (8, 8, 0.0, 0),
        (5, 6, 20.0, 2),
        (3, 3, 15.0, 2),
        (2, 2, 30.0, 1),
        (6, 4, 14.9, 3),
        (8, 12, 16.0, 5),
        (1, 2, 20.0, 1),
        (0, 0, 0.0, 0),
        (3, 4, 25.0, 2),
    ];
    let stats: Vec<IntervalStats> = fixture
        .iter()
        .enumerate()
        .map(|(i, &(throughput, scheduled_demand, avg_delay, delayed_count))| IntervalStats {
            airport: "ATL".into(),
            op_type: OpType::Departure,
            interval_index: i,
            throughput,
            scheduled_demand,
            avg_delay,
            delayed_count,
        })
        .collect();
    let expected: Vec<(usize, u32, Vec<Criterion>)> = vec![
        (1, 3, vec![C2]),
        (2, 4, vec![C2]),
        (3, 8, vec![C1]),
        (4, 5, vec![C3]),
        (5, 3, vec![C3]),
        (8, 8, vec![C1, C2, C3]),
        (9, 1, vec![C2]),
        (11, 3, vec![C2, C3]),
    ];
    let got: Vec<(usize, u32, Vec<Criterion>)> = estimate_capacities(&stats, &EstimationParams::default())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|o| (o.interval_index, o.capacity, o.criteria_hit))
        .collect();
    ensure(got == expected, || format!("got {got:?}"))?;
    Ok("12 intervals, 8 observations".into())
}

fn ac10() -> Check {
    let cfg = RandomInstanceConfig::default();
    let build = BuildOptions { pin_initial_recourse: false };
    let mut pairs = 0;
    let mut worst = 0.0f64;
    for seed in 0u64.. {
        if pairs >= 50 {
            break;
        }
        let inst = random_instance(seed, &cfg);
        let policy = build_sp(&inst, &build)
            .and_then(|m| m.solve(&inst, &HighsBackend, &opts()))
            .map_err(|e| format!("seed {seed}: {e}"))?
            .policy;
        let spec = ReductionSpec {
            reduction_level: 0.0,
            sample_count: 5,
            seed,
            ..Default::default()
        };
        let samples = resample_capacities(&inst, &spec, &HighsBackend).map_err(|e| e.to_string())?;
        for s in samples.iter().take(50 - pairs) {
            let (d, a) = sample_recourse(&policy, &inst, s);
            let lp = second_stage_lp(&policy, &inst, s, &HighsBackend).map_err(|e| e.to_string())?;
            worst = worst.max((d + a - lp).abs());
            ensure((d + a - lp).abs() <= 1e-8, || format!("seed {seed}: {} vs {lp}", d + a))?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs, max gap {worst:.2e}"))
}

fn run(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let elapsed = start.elapsed();
    let outcome = outcome.and_then(|msg| {
        if elapsed > limit {
            Err(format!("{msg}; took {elapsed:.1?}, limit {limit:?}"))
        } else {
            Ok(msg)
        }
    });
    match &outcome {
        Ok(msg) => println!("{name} PASS ({elapsed:.1?}) {msg}"),
        Err(msg) => println!("{name} FAIL ({elapsed:.1?}) {msg}"),
    }
    outcome.is_ok()
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let instances = feasible_instances(20);
    let results = [
        run("AC1", min(2), || ac1(&instances)),
        run("AC2", min(5), ac2),
        run("AC3", min(15), || ac3(&instances)),
        run("AC4", Duration::from_secs(30), ac4),
        run("AC5", min(5), ac5),
        run("AC6", min(5), ac6),
        run("AC7", min(15), ac7),
        run("AC8", min(5), ac8),
        run("AC9", min(1), ac9),
        run("AC10", min(5), ac10),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
