//! Seeded synthetic data: operation records, labeled feature vectors, small
//! random ground-holding instances and the stress instance used for trend
//! checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{OpType, OperationRecord, INTERVAL_MINUTES};
use crate::maghp::{Costs, Flight, FlightConnection, MaghpInstance};
use crate::pmf::Pmf;
use crate::prediction::{FeatureVector, LabeledSample, FEATURE_DIM};
use crate::scenario::{
    build_scenario_tree, cluster_time_series, ReducedPmf, ScenarioTree, TimeClustering, TreeConfig,
};

pub const AIRPORTS: [&str; 3] = ["ATL", "ORD", "DFW"];

/// Operation records for `airports` over `horizon` intervals. Each interval
/// draws a capacity and a demand; when demand exceeds capacity the excess
/// slips into later intervals and picks up delay.
pub fn synthetic_records(airports: &[&str], horizon: usize, seed: u64) -> Vec<OperationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let step = INTERVAL_MINUTES;
    for airport in airports {
        for op in OpType::ALL {
            let mut backlog: Vec<u32> = Vec::new();
            for t in 0..horizon {
                let capacity = rng.gen_range(2..=6u32);
                let demand = rng.gen_range(1..=7u32);
                for _ in 0..demand {
                    backlog.push(t as u32 * step + rng.gen_range(0..step));
                }
                backlog.sort_unstable();
                let served = (capacity as usize).min(backlog.len());
                for sched in backlog.drain(..served) {
                    let start = (t as u32 * step).max(sched);
                    let actual = rng.gen_range(start..(t as u32 + 1) * step);
                    out.push(OperationRecord {
                        airport: airport.to_string(),
                        op_type: op,
                        scheduled_time: sched,
                        actual_time: actual,
                    });
                }
            }
        }
    }
    out
}

/// Labeled samples whose features take a handful of discrete patterns, each
/// with its own label distribution; returns the samples and the true
/// distribution of every sample.
pub fn synthetic_labeled(n: usize, max_capacity: u32, seed: u64) -> (Vec<LabeledSample>, Vec<Pmf>) {
    const PATTERNS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truths: Vec<Pmf> = (0..PATTERNS)
        .map(|k| {
            let raw: Vec<f64> = (0..=max_capacity)
                .map(|c| {
                    let center = (k as f64 + 1.0) * max_capacity as f64 / (PATTERNS as f64 + 1.0);
                    (-(c as f64 - center).powi(2) / 4.0).exp()
                })
                .collect();
            let total: f64 = raw.iter().sum();
            Pmf::from_dense(raw.iter().map(|w| w / total).collect()).expect("normalized")
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut pmfs = Vec::with_capacity(n);
    for i in 0..n {
        // the first patterns appear in order so that min-max bounds always span [0, 1]
        let k = if i < PATTERNS { i } else { rng.gen_range(0..PATTERNS) };
        let features: Vec<f64> = (0..FEATURE_DIM)
            .map(|j| if j % 2 == 0 { k as f64 / (PATTERNS - 1) as f64 } else { 0.5 })
            .collect();
        let label = truths[k].quantile(rng.gen());
        samples.push(LabeledSample {
            features: FeatureVector::new(features).expect("fixed length"),
            capacity: label,
        });
        pmfs.push(truths[k].clone());
    }
    (samples, pmfs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInstanceConfig {
    pub max_airports: usize,
    pub max_flights: usize,
    pub max_intervals: usize,
    pub max_scenarios: usize,
    pub max_capacity: u32,
}

impl Default for RandomInstanceConfig {
    fn default() -> Self {
        Self {
            max_airports: 3,
            max_flights: 30,
            max_intervals: 8,
            max_scenarios: 4,
            max_capacity: 3,
        }
    }
}

fn random_stage(rng: &mut ChaCha8Rng, atoms: usize, max_capacity: u32) -> Vec<(u32, f64)> {
    let mut values: Vec<u32> = (0..=max_capacity).collect();
    values.shuffle(rng);
    let mut values: Vec<u32> = values.into_iter().take(atoms).collect();
    values.sort_unstable();
    let raw: Vec<f64> = values.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    values.into_iter().zip(raw.iter().map(|w| w / total)).collect()
}

fn random_tree(rng: &mut ChaCha8Rng, airport: &str, op: OpType, horizon: usize, cfg: &RandomInstanceConfig) -> ScenarioTree {
    let two_stages = horizon >= 2 && cfg.max_scenarios >= 2 && rng.gen_bool(0.5);
    let (boundaries, stages) = if two_stages {
        let per_stage = ((cfg.max_scenarios as f64).sqrt().floor() as usize).max(1);
        let stages: Vec<Vec<(u32, f64)>> = (0..2)
            .map(|_| {
                let k = rng.gen_range(1..=per_stage.min(cfg.max_capacity as usize + 1));
                random_stage(rng, k, cfg.max_capacity)
            })
            .collect();
        (vec![rng.gen_range(0..horizon - 1)], stages)
    } else {
        let k = rng.gen_range(1..=cfg.max_scenarios.min(cfg.max_capacity as usize + 1));
        (Vec::new(), vec![random_stage(rng, k, cfg.max_capacity)])
    };
    let reps = stages
        .iter()
        .map(|s| Pmf::from_atoms(s.iter().copied()).expect("normalized"))
        .collect();
    let clustering = TimeClustering::new(horizon, boundaries, reps).expect("valid boundaries");
    let stages = stages.into_iter().map(|atoms| ReducedPmf { atoms }).collect();
    ScenarioTree::from_stages(airport, op, clustering, stages, cfg.max_scenarios)
        .expect("within scenario cap")
}

/// Small random instance within the limits of `cfg`.
pub fn random_instance(seed: u64, cfg: &RandomInstanceConfig) -> MaghpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_airports = rng.gen_range(1..=cfg.max_airports.clamp(1, AIRPORTS.len()));
    let airports: Vec<String> = AIRPORTS[..n_airports].iter().map(|s| s.to_string()).collect();
    let horizon = rng.gen_range(2.min(cfg.max_intervals)..=cfg.max_intervals);
    let trees: Vec<ScenarioTree> = airports
        .iter()
        .flat_map(|z| OpType::ALL.map(|op| (z.clone(), op)))
        .map(|(z, op)| random_tree(&mut rng, &z, op, horizon, cfg))
        .collect();

    let n_flights = rng.gen_range(1..=cfg.max_flights.max(1));
    let mut flights: Vec<Flight> = Vec::with_capacity(n_flights);
    for i in 0..n_flights {
        let origin_in = n_airports > 1 || rng.gen_bool(0.5);
        let origin_in = origin_in && rng.gen_bool(0.9);
        let dest_in = !origin_in || rng.gen_bool(0.8);
        let origin = if origin_in { airports[rng.gen_range(0..n_airports)].clone() } else { "OUT".into() };
        let destination = if dest_in {
            let options: Vec<&String> = airports.iter().filter(|z| **z != origin).collect();
            match options.choose(&mut rng) {
                Some(z) => (*z).clone(),
                None => airports[0].clone(),
            }
        } else {
            "OUT".into()
        };
        let dep = rng.gen_range(0..horizon);
        let ft = rng.gen_range(1..=3);
        flights.push(Flight {
            id: format!("F{i:02}"),
            origin,
            destination,
            sched_dep: dep,
            sched_arr: dep + ft,
            in_network_origin: origin_in,
            in_network_destination: dest_in,
        });
    }

    let mut connections = Vec::new();
    let mut has_succ = vec![false; n_flights];
    let mut has_pred = vec![false; n_flights];
    for p in 0..n_flights {
        for s in 0..n_flights {
            let (fp, fs) = (&flights[p], &flights[s]);
            if p == s || has_succ[p] || has_pred[s] || !fp.in_network_destination {
                continue;
            }
            if fp.destination == fs.origin && fs.sched_dep >= fp.sched_arr && rng.gen_bool(0.5) {
                connections.push(FlightConnection {
                    predecessor: fp.id.clone(),
                    successor: fs.id.clone(),
                    slack: fs.sched_dep - fp.sched_arr,
                });
                has_succ[p] = true;
                has_pred[s] = true;
            }
        }
    }
    MaghpInstance {
        airports,
        flights,
        connections,
        horizon,
        costs: Costs::default(),
        trees,
    }
}

/// Parameters of the stress instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub horizon: usize,
    /// Last interval of the first time cluster.
    pub split: usize,
    /// Per-interval capacity weights on `0..len` for the two regimes.
    pub early: Vec<f64>,
    pub late: Vec<f64>,
    /// Intervals with scheduled departures; each gets `per_slot` flights per airport.
    pub departure_slots: Vec<usize>,
    pub per_slot: usize,
    pub flight_time: usize,
    pub k_per_stage: usize,
    pub seed: u64,
}

impl Default for StressConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            split: 5,
            early: vec![0.05, 0.2, 0.05, 0.3, 0.1, 0.0, 0.0, 0.2, 0.1],
            late: vec![0.05, 0.2, 0.05, 0.3, 0.1, 0.0, 0.0, 0.2, 0.1],
            departure_slots: vec![0, 2, 4, 6, 8],
            per_slot: 4,
            flight_time: 2,
            k_per_stage: 3,
            seed: 7,
        }
    }
}

fn normalized(ws: &[f64]) -> Pmf {
    let total: f64 = ws.iter().sum();
    Pmf::from_dense(ws.iter().map(|w| w / total).collect()).expect("positive weights")
}

/// Three airports with bursty schedules, two time clusters and `k` atoms per
/// stage. Trees come out of the full clustering and compression pipeline.
pub fn stress_instance(cfg: &StressConfig) -> MaghpInstance {
    let airports: Vec<String> = AIRPORTS.iter().map(|s| s.to_string()).collect();
    let series: Vec<Pmf> = (0..cfg.horizon)
        .map(|t| normalized(if t <= cfg.split { &cfg.early } else { &cfg.late }))
        .collect();
    let tree_cfg = TreeConfig {
        k_per_stage: cfg.k_per_stage,
        seed: cfg.seed,
        ..Default::default()
    };
    let n_changes = usize::from(cfg.early != cfg.late);
    let trees: Vec<ScenarioTree> = airports
        .iter()
        .flat_map(|z| OpType::ALL.map(|op| (z.clone(), op)))
        .map(|(z, op)| {
            let mut clustering = cluster_time_series(&series, n_changes).expect("horizon >= 2");
            if n_changes == 0 {
                // identical regimes still get two stages
                clustering = TimeClustering::new(
                    cfg.horizon,
                    vec![cfg.split],
                    vec![normalized(&cfg.early), normalized(&cfg.late)],
                )
                .expect("split inside the horizon");
            }
            build_scenario_tree(z, op, clustering, &tree_cfg).expect("small tree")
        })
        .collect();

    let mut flights = Vec::new();
    for (i, origin) in airports.iter().enumerate() {
        let mut j = 0;
        for &dep in &cfg.departure_slots {
            for _ in 0..cfg.per_slot {
                let (destination, dest_in) = match j % 3 {
                    0 => ("OUT".to_string(), false),
                    k => (airports[(i + k) % airports.len()].clone(), true),
                };
                flights.push(Flight {
                    id: format!("{origin}{j:02}"),
                    origin: origin.clone(),
                    destination,
                    sched_dep: dep,
                    sched_arr: dep + cfg.flight_time,
                    in_network_origin: true,
                    in_network_destination: dest_in,
                });
                j += 1;
            }
        }
    }
    MaghpInstance {
        airports,
        flights,
        connections: Vec::new(),
        horizon: cfg.horizon,
        costs: Costs::default(),
        trees,
    }
}
