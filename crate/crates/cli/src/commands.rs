use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use gdp_dro::capacity::{
    aggregate_intervals, coverage_ratio, estimate_capacities, read_records_csv, write_observations_csv,
    write_records_csv, AirportId, OpType,
};
use gdp_dro::evaluation::{
    epsilon_sweep, out_of_sample_cost, resample_capacities, write_in_sample_csv, write_policy_rows_csv,
    write_samples_csv, write_summary_csv, PolicyRow, ReductionSpec, SweepConfig,
};
use gdp_dro::maghp::{
    build_det, build_dr, build_sp, Epsilon, Flight, FlightConnection, MaghpInstance, ModelKind,
    SolveResult,
};
use gdp_dro::pmf::Pmf;
use gdp_dro::prediction::{
    evaluate, temporal_split, train, FeatureVector, LabeledSample, PredictionMetrics,
};
use gdp_dro::scenario::{build_scenario_tree, cluster_time_series};
use gdp_dro::solver::default_backend;
use gdp_dro::synthetic::{stress_instance, synthetic_labeled, synthetic_records, StressConfig, AIRPORTS};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::CliError;

/// One labeled interval of the training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRow {
    pub airport: AirportId,
    pub op_type: OpType,
    pub day: String,
    pub week_of_quarter: u32,
    pub interval: usize,
    pub features: FeatureVector,
    pub capacity: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictedSeries {
    pub airport: AirportId,
    pub op_type: OpType,
    pub day: String,
    pub pmfs: Vec<Pmf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesMetrics {
    airport: AirportId,
    op_type: OpType,
    validation: Option<PredictionMetrics>,
    test: Option<PredictionMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub airports: Vec<AirportId>,
    pub flights: Vec<Flight>,
    #[serde(default)]
    pub connections: Vec<FlightConnection>,
}

/// Instance layout on disk, with trees referenced by relative path.
#[derive(Serialize)]
struct InstanceOut<'a> {
    airports: &'a [AirportId],
    flights: &'a [Flight],
    connections: &'a [FlightConnection],
    horizon: usize,
    costs: gdp_dro::maghp::Costs,
    trees: Vec<String>,
}

/// Writes through a temporary file in the target directory and renames it.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::domain("json", e))?;
        writeln!(w).map_err(|e| CliError::io(path, e))
    })
}

/// Single-line JSON for bulky row lists.
fn write_json_compact<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, value).map_err(|e| CliError::domain("json", e))?;
        writeln!(w).map_err(|e| CliError::io(path, e))
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn input(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))?;
    if !p.exists() {
        return Err(CliError::MissingInput(p));
    }
    Ok(p)
}

fn input_or(path: &Option<PathBuf>, fallback: PathBuf) -> Result<PathBuf, CliError> {
    let p = path.clone().unwrap_or(fallback);
    if !p.exists() {
        return Err(CliError::MissingInput(p));
    }
    Ok(p)
}

fn series_file(airport: &str, op: OpType) -> String {
    format!("{airport}_{op}.json")
}

pub fn estimate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let path = input(&cfg.paths.records, "records")?;
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let records = read_records_csv(BufReader::new(file), &cfg.horizon.time_format)
        .map_err(|e| CliError::domain("estimate", e))?;
    let stats = aggregate_intervals(&records, cfg.horizon.intervals).map_err(|e| CliError::domain("estimate", e))?;
    let obs = estimate_capacities(&stats, &cfg.estimation).map_err(|e| CliError::domain("estimate", e))?;
    for ((airport, op), ratio) in coverage_ratio(&stats, &obs) {
        info!("{airport} {op}: {:.1}% of intervals saturated", 100.0 * ratio);
    }
    write_atomic(&cfg.paths.out_dir.join("capacities.csv"), |w| {
        write_observations_csv(w, &obs).map_err(|e| CliError::domain("estimate", e))
    })?;
    println!("{} capacity observations from {} records", obs.len(), records.len());
    Ok(())
}

pub fn predict(cfg: &PipelineConfig) -> Result<(), CliError> {
    let path = input(&cfg.paths.dataset, "dataset")?;
    let rows: Vec<DatasetRow> = read_json(&path)?;
    let mut groups: BTreeMap<(AirportId, OpType), Vec<DatasetRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.airport.clone(), r.op_type)).or_default().push(r);
    }
    let sample = |r: &DatasetRow| LabeledSample {
        features: r.features.clone(),
        capacity: r.capacity,
    };
    let train_cfg = cfg.train_config();
    let level = cfg.training.level;
    let mut metrics = Vec::new();
    let mut predictions = Vec::new();
    for ((airport, op), rows) in groups {
        let split = temporal_split(rows.into_iter().map(|r| (r.week_of_quarter, r)));
        let train_set: Vec<LabeledSample> = split.train.iter().map(sample).collect();
        let model = train(&airport, op, &train_set, &train_cfg).map_err(|e| CliError::domain("predict", e))?;
        let score = |rows: &[DatasetRow]| -> Result<Option<PredictionMetrics>, CliError> {
            if rows.is_empty() {
                return Ok(None);
            }
            let set: Vec<LabeledSample> = rows.iter().map(sample).collect();
            evaluate(&model, &set, level).map(Some).map_err(|e| CliError::domain("predict", e))
        };
        metrics.push(SeriesMetrics {
            airport: airport.clone(),
            op_type: op,
            validation: score(&split.validation)?,
            test: score(&split.test)?,
        });
        write_json(&cfg.paths.model_dir.join(series_file(&airport, op)), &model)?;

        let day = match &cfg.training.day {
            Some(d) => d.clone(),
            None => match split.test.iter().map(|r| &r.day).min() {
                Some(d) => d.clone(),
                None => continue,
            },
        };
        let mut day_rows: Vec<&DatasetRow> = split.test.iter().filter(|r| r.day == day).collect();
        day_rows.sort_by_key(|r| r.interval);
        if day_rows.iter().enumerate().any(|(i, r)| r.interval != i) {
            return Err(CliError::Domain(format!(
                "predict: test rows of {airport} {op} on {day} do not cover intervals 0..{}",
                day_rows.len()
            )));
        }
        let pmfs = day_rows
            .iter()
            .map(|r| model.predict_pmf(r.features.values()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::domain("predict", e))?;
        predictions.push(PredictedSeries {
            airport,
            op_type: op,
            day,
            pmfs,
        });
    }
    write_json(&cfg.paths.out_dir.join("metrics.json"), &metrics)?;
    write_json(&cfg.paths.out_dir.join("predictions.json"), &predictions)?;
    println!("trained {} models, predicted {} series", metrics.len(), predictions.len());
    Ok(())
}

pub fn reduce_scenarios(cfg: &PipelineConfig) -> Result<(), CliError> {
    let path = input_or(&cfg.paths.predictions, cfg.paths.out_dir.join("predictions.json"))?;
    let series: Vec<PredictedSeries> = read_json(&path)?;
    let out = &cfg.paths.out_dir;
    let mut refs = Vec::new();
    let mut horizon = None;
    for s in &series {
        let clustering = cluster_time_series(&s.pmfs, cfg.scenarios.change_points)
            .map_err(|e| CliError::domain("reduce-scenarios", e))?;
        let tree = build_scenario_tree(s.airport.clone(), s.op_type, clustering, &cfg.tree_config())
            .map_err(|e| CliError::domain("reduce-scenarios", e))?;
        info!("{} {}: {} scenarios", s.airport, s.op_type, tree.num_scenarios());
        let name = format!("trees/{}", series_file(&s.airport, s.op_type));
        write_json(&out.join(&name), &tree)?;
        refs.push(name);
        if *horizon.get_or_insert(s.pmfs.len()) != s.pmfs.len() {
            return Err(CliError::Domain("reduce-scenarios: predicted series differ in length".into()));
        }
    }
    if let Some(p) = &cfg.paths.schedule {
        if !p.exists() {
            return Err(CliError::MissingInput(p.clone()));
        }
        let schedule: Schedule = read_json(p)?;
        let instance = InstanceOut {
            airports: &schedule.airports,
            flights: &schedule.flights,
            connections: &schedule.connections,
            horizon: horizon.unwrap_or(cfg.horizon.intervals),
            costs: cfg.costs.costs(),
            trees: refs.clone(),
        };
        let path = out.join("instance.json");
        write_json(&path, &instance)?;
        // fail here rather than at solve time
        MaghpInstance::load(&path).map_err(|e| CliError::domain("reduce-scenarios", e))?;
    }
    println!("built {} scenario trees", refs.len());
    Ok(())
}

fn load_instance(cfg: &PipelineConfig) -> Result<MaghpInstance, CliError> {
    let path = input_or(&cfg.paths.instance, cfg.paths.out_dir.join("instance.json"))?;
    MaghpInstance::load(&path).map_err(|e| CliError::domain("instance", e))
}

pub fn solve(cfg: &PipelineConfig, model: ModelKind, epsilon: f64) -> Result<PathBuf, CliError> {
    let instance = load_instance(cfg)?;
    let backend = default_backend();
    let opts = cfg.solve_options();
    let built = match model {
        ModelKind::Det => build_det(&instance, &instance.best_case_capacities()),
        ModelKind::Sp => build_sp(&instance, &cfg.build_options()),
        ModelKind::Dr => build_dr(&instance, Epsilon::uniform(epsilon), &cfg.build_options()),
    }
    .map_err(|e| CliError::domain("solve", e))?;
    let result = built
        .solve(&instance, &backend, &opts)
        .map_err(|e| CliError::domain("solve", e))?;
    let name = match model {
        ModelKind::Dr => format!("result_dr_{epsilon}.json"),
        m => format!("result_{m}.json"),
    };
    let path = cfg.paths.out_dir.join(name);
    write_json(&path, &result)?;
    println!(
        "{model}: objective {:.6}, ground delay {}, airborne delay {}",
        result.objective,
        result.policy.total_ground_delay(),
        result.policy.total_airborne_delay()
    );
    Ok(path)
}

pub fn evaluate_results(cfg: &PipelineConfig, results: &[PathBuf]) -> Result<(), CliError> {
    if results.is_empty() {
        return Err(CliError::Config("evaluate needs at least one --result file".into()));
    }
    let instance = load_instance(cfg)?;
    let solved = results
        .iter()
        .map(|p| read_json::<SolveResult>(p).map(|r| (p, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let backend = default_backend();
    let mut rows = Vec::new();
    for &r in &cfg.reduction.levels {
        let spec = ReductionSpec {
            reduction_level: r,
            variability_cap: cfg.reduction.variability_cap,
            sample_count: cfg.reduction.sample_count,
            seed: cfg.seed,
        };
        let samples = resample_capacities(&instance, &spec, &backend)
            .map_err(|e| CliError::domain("evaluate", e))?;
        for (path, res) in &solved {
            let epsilon = (res.model == ModelKind::Dr).then(|| epsilon_from_name(path)).flatten();
            rows.push(PolicyRow {
                day: cfg.day.clone(),
                reduction: r,
                model: res.model,
                epsilon,
                in_sample: res.objective,
                cost: out_of_sample_cost(&res.policy, &instance, &samples),
            });
        }
    }
    let out = &cfg.paths.out_dir;
    write_atomic(&out.join("evaluation.csv"), |w| {
        write_policy_rows_csv(w, &rows).map_err(|e| CliError::domain("evaluate", e))
    })?;
    write_atomic(&out.join("evaluation_samples.csv"), |w| {
        write_samples_csv(w, &rows).map_err(|e| CliError::domain("evaluate", e))
    })?;
    println!("scored {} policies at {} reduction levels", solved.len(), cfg.reduction.levels.len());
    Ok(())
}

fn epsilon_from_name(path: &Path) -> Option<f64> {
    path.file_stem()?.to_str()?.strip_prefix("result_dr_")?.parse().ok()
}

pub fn sweep(cfg: &PipelineConfig) -> Result<(), CliError> {
    let instance = load_instance(cfg)?;
    let config = SweepConfig {
        day: cfg.day.clone(),
        epsilons: cfg.epsilons.clone(),
        reduction_levels: cfg.reduction.levels.clone(),
        variability_cap: cfg.reduction.variability_cap,
        sample_count: cfg.reduction.sample_count,
        seed: cfg.seed,
        build: cfg.build_options(),
        solve: cfg.solve_options(),
    };
    let backend = default_backend();
    let report = epsilon_sweep(&instance, &config, &backend).map_err(|e| CliError::domain("sweep", e))?;
    let out = &cfg.paths.out_dir;
    let err = |e| CliError::domain("sweep", e);
    write_atomic(&out.join("summary.csv"), |w| write_summary_csv(w, &report.summary).map_err(err))?;
    write_atomic(&out.join("policies.csv"), |w| write_policy_rows_csv(w, &report.rows).map_err(err))?;
    write_atomic(&out.join("samples.csv"), |w| write_samples_csv(w, &report.rows).map_err(err))?;
    write_atomic(&out.join("in_sample.csv"), |w| write_in_sample_csv(w, &report).map_err(err))?;
    write_json(&out.join("report.json"), &report)?;
    for row in &report.summary {
        println!(
            "r={:.2} det={:.3} sp={:.3} dr={:.3} eps*={}",
            row.reduction, row.det, row.sp, row.dr, row.epsilon_star
        );
    }
    Ok(())
}

/// Synthetic inputs for every subcommand plus a config pointing at them.
pub fn fixture(cfg: &PipelineConfig, dir: &Path) -> Result<(), CliError> {
    let horizon = cfg.horizon.intervals;
    if horizon < 8 {
        return Err(CliError::Config("the fixture needs at least 8 intervals".into()));
    }
    let records = synthetic_records(&AIRPORTS, horizon, cfg.seed);
    write_atomic(&dir.join("records.csv"), |w| {
        write_records_csv(w, &records).map_err(|e| CliError::domain("fixture", e))
    })?;

    // twelve weeks with one day each; week 12 is the test day
    let mut rows = Vec::new();
    for (k, airport) in AIRPORTS.iter().enumerate() {
        for (j, op) in OpType::ALL.into_iter().enumerate() {
            let seed = cfg.seed.wrapping_add((2 * k + j) as u64);
            let (samples, _) = synthetic_labeled(12 * horizon, 10, seed);
            for (i, s) in samples.into_iter().enumerate() {
                let week = (i / horizon) as u32 + 1;
                rows.push(DatasetRow {
                    airport: airport.to_string(),
                    op_type: op,
                    day: format!("w{week:02}"),
                    week_of_quarter: week,
                    interval: i % horizon,
                    features: s.features,
                    capacity: s.capacity,
                });
            }
        }
    }
    write_json_compact(&dir.join("dataset.json"), &rows)?;

    // 3 airports, 30 flights, two time clusters, two atoms per stage
    let step = (horizon - 4) / 4;
    let stress = StressConfig {
        horizon,
        split: horizon / 2 - 1,
        early: vec![0.1, 0.35, 0.1, 0.15, 0.3],
        late: vec![0.25, 0.1, 0.05, 0.3, 0.3],
        departure_slots: (0..5).map(|i| i * step).collect(),
        per_slot: 2,
        k_per_stage: 2,
        seed: cfg.seed,
        ..StressConfig::default()
    };
    let mut instance = stress_instance(&stress);
    instance.costs = cfg.costs.costs();
    let schedule = Schedule {
        airports: instance.airports.clone(),
        flights: instance.flights.clone(),
        connections: instance.connections.clone(),
    };
    write_json(&dir.join("schedule.json"), &schedule)?;
    write_json(&dir.join("instance.json"), &instance)?;

    let mut out_cfg = cfg.clone();
    out_cfg.paths.records = Some("records.csv".into());
    out_cfg.paths.dataset = Some("dataset.json".into());
    out_cfg.paths.schedule = Some("schedule.json".into());
    out_cfg.paths.instance = Some("instance.json".into());
    out_cfg.paths.predictions = None;
    out_cfg.paths.model_dir = "models".into();
    out_cfg.paths.out_dir = "out".into();
    let text = out_cfg.to_toml()?;
    write_atomic(&dir.join("config.toml"), |w| {
        w.write_all(text.as_bytes()).map_err(|e| CliError::io(dir, e))
    })?;
    println!("fixture written to {}", dir.display());
    Ok(())
}
