use serde::{Deserialize, Serialize};

use super::{
    scenario_distances, CapacityProfile, GroundDelayPolicy, MaghpError, MaghpInstance,
    SolveResult, SolveStatus, TreeDuals, TreeRecourse,
};
use crate::capacity::{AirportId, OpType};
use crate::solver::{self, ConstraintSense, MilpBackend, Model, SolveOptions, VarId, VarKind};

const OBJECTIVE_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Det,
    Sp,
    Dr,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Det => "det",
            ModelKind::Sp => "sp",
            ModelKind::Dr => "dr",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "det" => Ok(ModelKind::Det),
            "sp" => Ok(ModelKind::Sp),
            "dr" => Ok(ModelKind::Dr),
            _ => Err(format!("unknown model `{s}`, expected det, sp or dr")),
        }
    }
}

/// Wasserstein radius per operation type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilon {
    pub departure: f64,
    pub arrival: f64,
}

impl Epsilon {
    pub fn uniform(e: f64) -> Self {
        Self {
            departure: e,
            arrival: e,
        }
    }

    pub fn get(&self, op: OpType) -> f64 {
        match op {
            OpType::Departure => self.departure,
            OpType::Arrival => self.arrival,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    /// Forces the first-interval recourse `y_0` to zero.
    pub pin_initial_recourse: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            pin_initial_recourse: true,
        }
    }
}

struct FlightVars {
    dep: Vec<(usize, VarId)>,
    arr: Vec<(usize, VarId)>,
}

struct TreeVars {
    airport: AirportId,
    op_type: OpType,
    probabilities: Vec<f64>,
    /// `y[scenario][t]`
    y: Vec<Vec<VarId>>,
    alpha: Option<VarId>,
    beta: Vec<VarId>,
}

/// A built MILP together with the variable layout needed to read a policy back.
pub struct MaghpModel {
    pub kind: ModelKind,
    pub model: Model,
    flights: Vec<FlightVars>,
    trees: Vec<TreeVars>,
    epsilon: Option<Epsilon>,
    recourse_cost: f64,
}

/// Slot variables, assignment rows, `a_f >= 0`, connections and the
/// first-stage objective.
fn first_stage(instance: &MaghpInstance, model: &mut Model) -> Vec<FlightVars> {
    let (cg, ca) = (instance.costs.ground, instance.costs.airborne);
    let max_delay = instance.max_ground_delay();
    let vars: Vec<FlightVars> = instance
        .flights
        .iter()
        .zip(&max_delay)
        .map(|(f, &md)| {
            // g = Σ t u - d, a = Σ t v - Σ t u - flight time
            let dep = (f.sched_dep..=f.sched_dep + md)
                .map(|t| (t, model.add_variable(VarKind::Binary, (cg - ca) * t as f64)))
                .collect::<Vec<_>>();
            let arr = (f.sched_arr..=f.sched_arr + md)
                .map(|t| (t, model.add_variable(VarKind::Binary, ca * t as f64)))
                .collect::<Vec<_>>();
            model.add_objective_constant(-cg * f.sched_dep as f64 - ca * f.flight_time() as f64);
            model.add_linear_constraint(dep.iter().map(|&(_, v)| (v, 1.0)), ConstraintSense::Eq, 1.0);
            model.add_linear_constraint(arr.iter().map(|&(_, v)| (v, 1.0)), ConstraintSense::Eq, 1.0);
            model.add_linear_constraint(
                arr.iter()
                    .map(|&(t, v)| (v, t as f64))
                    .chain(dep.iter().map(|&(t, v)| (v, -(t as f64)))),
                ConstraintSense::Ge,
                f.flight_time() as f64,
            );
            FlightVars { dep, arr }
        })
        .collect();

    // g_s >= g_p + a_p - slack, i.e. Σ t u_s - Σ t v_p >= d_s - r_p - slack
    for (p, s, slack) in instance.active_connections() {
        let (fp, fs) = (&instance.flights[p], &instance.flights[s]);
        model.add_linear_constraint(
            vars[s]
                .dep
                .iter()
                .map(|&(t, v)| (v, t as f64))
                .chain(vars[p].arr.iter().map(|&(t, v)| (v, -(t as f64)))),
            ConstraintSense::Ge,
            fs.sched_dep as f64 - fp.sched_arr as f64 - slack as f64,
        );
    }
    vars
}

/// Slot variables of the flights loading `(airport, op)` at interval `t`.
fn load_terms(
    instance: &MaghpInstance,
    vars: &[FlightVars],
    airport: &str,
    op: OpType,
    t: usize,
) -> Vec<(VarId, f64)> {
    instance
        .flights_at(airport, op)
        .into_iter()
        .filter_map(|i| {
            let slots = match op {
                OpType::Departure => &vars[i].dep,
                OpType::Arrival => &vars[i].arr,
            };
            slots.iter().find(|&&(s, _)| s == t).map(|&(_, v)| (v, 1.0))
        })
        .collect()
}

/// Deterministic model with hard capacities.
pub fn build_det(
    instance: &MaghpInstance,
    capacities: &CapacityProfile,
) -> Result<MaghpModel, MaghpError> {
    instance.validate()?;
    let mut model = Model::new();
    let flights = first_stage(instance, &mut model);
    for tree in instance.active_trees() {
        let key = (tree.airport.clone(), tree.op_type);
        let cap = capacities.get(&key).ok_or_else(|| MaghpError::MissingCapacity {
            airport: key.0.clone(),
            op_type: key.1,
        })?;
        if cap.len() < instance.horizon {
            return Err(MaghpError::InvalidInstance(format!(
                "capacity profile for {} {} has {} intervals",
                key.0,
                key.1,
                cap.len()
            )));
        }
        for t in 0..instance.horizon {
            let terms = load_terms(instance, &flights, &tree.airport, tree.op_type, t);
            if !terms.is_empty() {
                model.add_linear_constraint(terms, ConstraintSense::Le, cap[t] as f64);
            }
        }
    }
    Ok(MaghpModel {
        kind: ModelKind::Det,
        model,
        flights,
        trees: Vec::new(),
        epsilon: None,
        recourse_cost: instance.costs.recourse(),
    })
}

/// Recourse variables and per-scenario capacity rows for every active tree.
fn recourse_layer(
    instance: &MaghpInstance,
    model: &mut Model,
    flights: &[FlightVars],
    objective_weighted: bool,
    options: &BuildOptions,
) -> Result<Vec<TreeVars>, MaghpError> {
    let unit = instance.costs.recourse();
    let mut out = Vec::new();
    for tree in instance.active_trees() {
        let probabilities: Vec<f64> = tree.scenarios.iter().map(|s| s.probability).collect();
        let loads: Vec<Vec<(VarId, f64)>> = (0..instance.horizon)
            .map(|t| load_terms(instance, flights, &tree.airport, tree.op_type, t))
            .collect();
        let mut y = Vec::with_capacity(tree.num_scenarios());
        for (s, p) in probabilities.iter().enumerate() {
            let obj = if objective_weighted { p * unit } else { 0.0 };
            let ys: Vec<VarId> = (0..instance.horizon)
                .map(|t| {
                    let upper = if t == 0 && options.pin_initial_recourse { 0.0 } else { f64::INFINITY };
                    model.add_bounded_variable(0.0, upper, false, obj)
                })
                .collect();
            for (t, terms) in loads.iter().enumerate() {
                if terms.is_empty() {
                    continue;
                }
                let cap = tree.capacity_at(s, t)? as f64;
                model.add_linear_constraint(
                    terms.iter().copied().chain([(ys[t], -1.0)]),
                    ConstraintSense::Le,
                    cap,
                );
            }
            y.push(ys);
        }
        out.push(TreeVars {
            airport: tree.airport.clone(),
            op_type: tree.op_type,
            probabilities,
            y,
            alpha: None,
            beta: Vec::new(),
        });
    }
    Ok(out)
}

/// Two-stage stochastic model over the scenario trees (extensive form).
pub fn build_sp(instance: &MaghpInstance, options: &BuildOptions) -> Result<MaghpModel, MaghpError> {
    instance.validate()?;
    let mut model = Model::new();
    let flights = first_stage(instance, &mut model);
    let trees = recourse_layer(instance, &mut model, &flights, true, options)?;
    Ok(MaghpModel {
        kind: ModelKind::Sp,
        model,
        flights,
        trees,
        epsilon: None,
        recourse_cost: instance.costs.recourse(),
    })
}

/// Deterministic equivalent of the Wasserstein distributionally robust model.
pub fn build_dr(
    instance: &MaghpInstance,
    epsilon: Epsilon,
    options: &BuildOptions,
) -> Result<MaghpModel, MaghpError> {
    for e in [epsilon.departure, epsilon.arrival] {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(MaghpError::InvalidEpsilon(e));
        }
    }
    instance.validate()?;
    let unit = instance.costs.recourse();
    let mut model = Model::new();
    let flights = first_stage(instance, &mut model);
    let mut trees = recourse_layer(instance, &mut model, &flights, false, options)?;
    for tv in &mut trees {
        let tree = instance
            .tree(&tv.airport, tv.op_type)
            .expect("active trees exist");
        let dist = scenario_distances(tree);
        let alpha = model.add_variable(VarKind::Continuous, epsilon.get(tv.op_type));
        let beta: Vec<VarId> = tv
            .probabilities
            .iter()
            .map(|&p| model.add_variable(VarKind::Free, p))
            .collect();
        // α d(ξ̄, ξ) + β(ξ̄) >= C Σ_t y_t(ξ) for every ordered pair
        for (i, &b) in beta.iter().enumerate() {
            for (j, ys) in tv.y.iter().enumerate() {
                model.add_linear_constraint(
                    [(alpha, dist[i][j]), (b, 1.0)]
                        .into_iter()
                        .chain(ys.iter().map(|&v| (v, -unit))),
                    ConstraintSense::Ge,
                    0.0,
                );
            }
        }
        tv.alpha = Some(alpha);
        tv.beta = beta;
    }
    Ok(MaghpModel {
        kind: ModelKind::Dr,
        model,
        flights,
        trees,
        epsilon: Some(epsilon),
        recourse_cost: unit,
    })
}

fn chosen_slot(slots: &[(usize, VarId)], values: &[f64]) -> usize {
    slots
        .iter()
        .max_by(|a, b| values[a.1.index()].total_cmp(&values[b.1.index()]))
        .map(|&(t, _)| t)
        .expect("every flight has at least one slot")
}

impl MaghpModel {
    pub fn solve(
        &self,
        instance: &MaghpInstance,
        backend: &dyn MilpBackend,
        options: &SolveOptions,
    ) -> Result<SolveResult, MaghpError> {
        let sol = self.model.minimize(backend, options)?;
        let status = match sol.status {
            solver::SolveStatus::Optimal => SolveStatus::Optimal,
            solver::SolveStatus::TimeLimit => SolveStatus::TimeLimit,
        };
        let values = &sol.values;
        let policy = self.extract_policy(instance, values)?;
        let first_stage_cost = policy.first_stage_cost(&instance.costs);

        let second_stage: Vec<TreeRecourse> = self
            .trees
            .iter()
            .map(|tv| TreeRecourse {
                airport: tv.airport.clone(),
                op_type: tv.op_type,
                y: tv
                    .y
                    .iter()
                    .map(|ys| ys.iter().map(|v| values[v.index()].max(0.0)).collect())
                    .collect(),
            })
            .collect();
        let duals: Vec<TreeDuals> = self
            .trees
            .iter()
            .filter_map(|tv| {
                Some(TreeDuals {
                    airport: tv.airport.clone(),
                    op_type: tv.op_type,
                    alpha: values[tv.alpha?.index()],
                    beta: tv.beta.iter().map(|v| values[v.index()]).collect(),
                })
            })
            .collect();

        let recomputed = first_stage_cost
            + match self.kind {
                ModelKind::Det => 0.0,
                ModelKind::Sp => self
                    .trees
                    .iter()
                    .zip(&second_stage)
                    .map(|(tv, r)| {
                        tv.probabilities
                            .iter()
                            .zip(&r.y)
                            .map(|(p, ys)| p * self.recourse_cost * ys.iter().sum::<f64>())
                            .sum::<f64>()
                    })
                    .sum(),
                ModelKind::Dr => {
                    let eps = self.epsilon.expect("dr models carry epsilon");
                    self.trees
                        .iter()
                        .zip(&duals)
                        .map(|(tv, d)| {
                            eps.get(tv.op_type) * d.alpha
                                + tv.probabilities.iter().zip(&d.beta).map(|(p, b)| p * b).sum::<f64>()
                        })
                        .sum()
                }
            };
        if (recomputed - sol.objective).abs() > OBJECTIVE_RTOL * sol.objective.abs().max(1.0) {
            return Err(MaghpError::ObjectiveMismatch {
                reported: sol.objective,
                recomputed,
            });
        }
        Ok(SolveResult {
            model: self.kind,
            status,
            objective: sol.objective,
            first_stage_cost,
            policy,
            second_stage,
            duals,
        })
    }

    /// Reads the chosen slots back and recomputes delays.
    pub fn extract_policy(
        &self,
        instance: &MaghpInstance,
        values: &[f64],
    ) -> Result<GroundDelayPolicy, MaghpError> {
        let dep: Vec<usize> = self.flights.iter().map(|f| chosen_slot(&f.dep, values)).collect();
        let arr: Vec<usize> = self.flights.iter().map(|f| chosen_slot(&f.arr, values)).collect();
        GroundDelayPolicy::from_slots(instance, &dep, &arr)
    }
}
