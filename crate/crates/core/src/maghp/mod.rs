//! Multi-airport ground-holding: instances, policies, and the deterministic,
//! stochastic and distributionally robust models.
//!
//! Time is discretized into `horizon` intervals `0..horizon`. Every slot at or
//! beyond `horizon` belongs to the overflow period, which has no capacity
//! limit; it keeps every instance feasible.

mod inner;
mod model;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{AirportId, OpType};
use crate::pmf::{l2_distance, normalize_ground_costs, PmfError};
use crate::scenario::{ScenarioError, ScenarioTree};
use crate::solver::SolverError;

pub use inner::{inner_worst_case, policy_worst_case};
pub use model::{build_det, build_dr, build_sp, BuildOptions, Epsilon, MaghpModel, ModelKind};

#[derive(Debug, Error)]
pub enum MaghpError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("no capacity data for {airport} {op_type}")]
    MissingCapacity { airport: AirportId, op_type: OpType },
    #[error("model is infeasible")]
    Infeasible,
    #[error("time limit reached without a feasible solution")]
    TimeLimit,
    #[error("objective {reported} does not match {recomputed} recomputed from the solution")]
    ObjectiveMismatch { reported: f64, recomputed: f64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Solver(SolverError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl From<SolverError> for MaghpError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Infeasible => MaghpError::Infeasible,
            SolverError::TimeLimit => MaghpError::TimeLimit,
            other => MaghpError::Solver(other),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub id: String,
    pub origin: AirportId,
    pub destination: AirportId,
    /// Scheduled departure interval `d_f`.
    pub sched_dep: usize,
    /// Scheduled arrival interval `r_f`.
    pub sched_arr: usize,
    #[serde(default = "default_true")]
    pub in_network_origin: bool,
    #[serde(default = "default_true")]
    pub in_network_destination: bool,
}

impl Flight {
    pub fn flight_time(&self) -> usize {
        self.sched_arr - self.sched_dep
    }
}

/// Two flights flown by the same aircraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightConnection {
    pub predecessor: String,
    pub successor: String,
    /// Scheduled turnaround slack beyond the minimum, in intervals.
    pub slack: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    /// Ground-holding cost per flight and interval.
    pub ground: f64,
    /// Airborne-holding cost per flight and interval.
    pub airborne: f64,
    /// Second-stage queueing cost per flight and interval; defaults to `airborne`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recourse: Option<f64>,
}

impl Costs {
    pub fn recourse(&self) -> f64 {
        self.recourse.unwrap_or(self.airborne)
    }
}

impl Default for Costs {
    fn default() -> Self {
        Self {
            ground: 1.0,
            airborne: 3.0,
            recourse: None,
        }
    }
}

/// Per-interval capacities keyed by airport and operation type.
pub type CapacityProfile = BTreeMap<(AirportId, OpType), Vec<u32>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaghpInstance {
    pub airports: Vec<AirportId>,
    pub flights: Vec<Flight>,
    #[serde(default)]
    pub connections: Vec<FlightConnection>,
    pub horizon: usize,
    pub costs: Costs,
    pub trees: Vec<ScenarioTree>,
}

/// A tree given inline or as a path relative to the instance file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum TreeRef {
    Path(PathBuf),
    Inline(Box<ScenarioTree>),
}

#[derive(Debug, Deserialize)]
struct InstanceFile {
    airports: Vec<AirportId>,
    flights: Vec<Flight>,
    #[serde(default)]
    connections: Vec<FlightConnection>,
    horizon: usize,
    costs: Costs,
    trees: Vec<TreeRef>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MaghpError {
    MaghpError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl MaghpInstance {
    /// Reads an instance file; tree entries may be inline objects or paths
    /// relative to the instance file.
    pub fn load(path: &Path) -> Result<Self, MaghpError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let file: InstanceFile = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let trees = file
            .trees
            .into_iter()
            .map(|t| match t {
                TreeRef::Inline(t) => Ok(*t),
                TreeRef::Path(p) => {
                    let p = base.join(p);
                    let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| io_err(&p, e))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let instance = Self {
            airports: file.airports,
            flights: file.flights,
            connections: file.connections,
            horizon: file.horizon,
            costs: file.costs,
            trees,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<(), MaghpError> {
        let bad = |m: String| Err(MaghpError::InvalidInstance(m));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        let c = self.costs;
        if !(c.ground > 0.0 && c.airborne >= c.ground && c.airborne.is_finite()) {
            return bad(format!(
                "costs must satisfy airborne >= ground > 0, got {} and {}",
                c.airborne, c.ground
            ));
        }
        if !(c.recourse() >= 0.0 && c.recourse().is_finite()) {
            return bad(format!("recourse cost {} must be non-negative", c.recourse()));
        }
        let mut ids = HashMap::new();
        for (i, f) in self.flights.iter().enumerate() {
            if ids.insert(f.id.as_str(), i).is_some() {
                return bad(format!("duplicate flight id {}", f.id));
            }
            if f.sched_dep >= self.horizon {
                return bad(format!("flight {} departs outside the horizon", f.id));
            }
            if f.sched_arr <= f.sched_dep {
                return bad(format!("flight {} has non-positive flight time", f.id));
            }
            for (flag, airport, op) in [
                (f.in_network_origin, &f.origin, OpType::Departure),
                (f.in_network_destination, &f.destination, OpType::Arrival),
            ] {
                if !flag {
                    continue;
                }
                if !self.airports.contains(airport) {
                    return bad(format!("flight {} uses unknown airport {airport}", f.id));
                }
                if self.tree(airport, op).is_none() {
                    return Err(MaghpError::MissingCapacity {
                        airport: airport.clone(),
                        op_type: op,
                    });
                }
            }
        }
        for t in &self.trees {
            t.validate()?;
            if t.horizon() != self.horizon {
                return bad(format!(
                    "tree {} {} spans {} intervals, instance has {}",
                    t.airport,
                    t.op_type,
                    t.horizon(),
                    self.horizon
                ));
            }
        }
        for conn in &self.connections {
            let (Some(&p), Some(&s)) = (
                ids.get(conn.predecessor.as_str()),
                ids.get(conn.successor.as_str()),
            ) else {
                return bad(format!(
                    "connection {} -> {} names an unknown flight",
                    conn.predecessor, conn.successor
                ));
            };
            if self.flights[p].destination != self.flights[s].origin {
                return bad(format!(
                    "connection {} -> {} changes airport",
                    conn.predecessor, conn.successor
                ));
            }
        }
        Ok(())
    }

    pub fn tree(&self, airport: &str, op_type: OpType) -> Option<&ScenarioTree> {
        self.trees
            .iter()
            .find(|t| t.airport == airport && t.op_type == op_type)
    }

    pub fn flight_index(&self, id: &str) -> Option<usize> {
        self.flights.iter().position(|f| f.id == id)
    }

    /// Trees that constrain at least one flight, in a stable order.
    pub fn active_trees(&self) -> Vec<&ScenarioTree> {
        let mut out: Vec<&ScenarioTree> = self
            .trees
            .iter()
            .filter(|t| !self.flights_at(&t.airport, t.op_type).is_empty())
            .collect();
        out.sort_by(|a, b| (&a.airport, a.op_type).cmp(&(&b.airport, b.op_type)));
        out
    }

    /// Indices of flights that use the capacity of `airport` for `op_type`.
    pub fn flights_at(&self, airport: &str, op_type: OpType) -> Vec<usize> {
        self.flights
            .iter()
            .enumerate()
            .filter(|(_, f)| match op_type {
                OpType::Departure => f.in_network_origin && f.origin == airport,
                OpType::Arrival => f.in_network_destination && f.destination == airport,
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Connections whose turnaround airport is in the network, as
    /// (predecessor index, successor index, slack).
    pub fn active_connections(&self) -> Vec<(usize, usize, usize)> {
        self.connections
            .iter()
            .filter_map(|c| {
                let p = self.flight_index(&c.predecessor)?;
                let s = self.flight_index(&c.successor)?;
                (self.flights[p].in_network_destination && self.flights[s].in_network_origin)
                    .then_some((p, s, c.slack))
            })
            .collect()
    }

    /// Largest ground delay each flight may need: enough to reach the overflow
    /// period, extended along connections so that any upstream delay can
    /// propagate.
    pub fn max_ground_delay(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .flights
            .iter()
            .map(|f| self.horizon - f.sched_dep)
            .collect();
        let conns = self.active_connections();
        for _ in 0..=self.flights.len() {
            let mut changed = false;
            for &(p, s, slack) in &conns {
                let need = d[p].saturating_sub(slack);
                if need > d[s] {
                    d[s] = need;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        d
    }

    /// Stage-wise maximum capacity of every active tree, expanded per interval.
    pub fn best_case_capacities(&self) -> CapacityProfile {
        self.active_trees()
            .into_iter()
            .map(|t| {
                let best: Vec<u32> = t
                    .stages
                    .iter()
                    .map(|s| s.atoms.iter().map(|a| a.0).max().unwrap_or(0))
                    .collect();
                ((t.airport.clone(), t.op_type), t.expand(&best))
            })
            .collect()
    }

    /// Capacities of scenario `index` of each active tree, per interval.
    pub fn scenario_capacities(&self, pick: impl Fn(&ScenarioTree) -> usize) -> CapacityProfile {
        self.active_trees()
            .into_iter()
            .map(|t| {
                let s = &t.scenarios[pick(t)];
                ((t.airport.clone(), t.op_type), t.expand(&s.capacities))
            })
            .collect()
    }
}

/// Normalized ℓ2 distances between the scenario vectors of a tree. A tree
/// with a single distinct scenario gets the zero matrix.
pub fn scenario_distances(tree: &ScenarioTree) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = tree
        .scenarios
        .iter()
        .map(|a| {
            tree.scenarios
                .iter()
                .map(|b| l2_distance(&a.capacities, &b.capacities))
                .collect()
        })
        .collect();
    normalize_ground_costs(&raw).unwrap_or(raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightAssignment {
    pub flight: String,
    pub dep_slot: usize,
    pub arr_slot: usize,
    pub ground_delay: usize,
    pub airborne_delay: usize,
}

/// First-stage decision: one departure and one arrival slot per flight, in
/// instance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundDelayPolicy {
    pub assignments: Vec<FlightAssignment>,
}

impl GroundDelayPolicy {
    /// Builds and checks a policy from departure and arrival slots.
    pub fn from_slots(
        instance: &MaghpInstance,
        dep: &[usize],
        arr: &[usize],
    ) -> Result<Self, MaghpError> {
        if dep.len() != instance.flights.len() || arr.len() != instance.flights.len() {
            return Err(MaghpError::InvalidPolicy("slot count differs from flight count".into()));
        }
        let mut assignments = Vec::with_capacity(dep.len());
        for (f, (&u, &v)) in instance.flights.iter().zip(dep.iter().zip(arr)) {
            if u < f.sched_dep || v < u + f.flight_time() {
                return Err(MaghpError::InvalidPolicy(format!(
                    "flight {} assigned slots ({u}, {v})",
                    f.id
                )));
            }
            let g = u - f.sched_dep;
            assignments.push(FlightAssignment {
                flight: f.id.clone(),
                dep_slot: u,
                arr_slot: v,
                ground_delay: g,
                airborne_delay: v - f.sched_arr - g,
            });
        }
        for (p, s, slack) in instance.active_connections() {
            let (a, b) = (&assignments[p], &assignments[s]);
            if b.ground_delay + slack < a.ground_delay + a.airborne_delay {
                return Err(MaghpError::InvalidPolicy(format!(
                    "connection {} -> {} violated",
                    a.flight, b.flight
                )));
            }
        }
        Ok(Self { assignments })
    }

    pub fn first_stage_cost(&self, costs: &Costs) -> f64 {
        self.assignments
            .iter()
            .map(|a| costs.ground * a.ground_delay as f64 + costs.airborne * a.airborne_delay as f64)
            .sum()
    }

    pub fn total_ground_delay(&self) -> usize {
        self.assignments.iter().map(|a| a.ground_delay).sum()
    }

    pub fn total_airborne_delay(&self) -> usize {
        self.assignments.iter().map(|a| a.airborne_delay).sum()
    }

    /// Flights scheduled per interval `0..horizon` at one airport; overflow slots are not counted.
    pub fn load(&self, instance: &MaghpInstance, airport: &str, op_type: OpType) -> Vec<u32> {
        let mut load = vec![0u32; instance.horizon];
        for i in instance.flights_at(airport, op_type) {
            let a = &self.assignments[i];
            let slot = match op_type {
                OpType::Departure => a.dep_slot,
                OpType::Arrival => a.arr_slot,
            };
            if slot < instance.horizon {
                load[slot] += 1;
            }
        }
        load
    }

    /// Optimal recourse cost for every scenario of `tree` under this policy.
    pub fn scenario_recourse(&self, instance: &MaghpInstance, tree: &ScenarioTree) -> Vec<f64> {
        let load = self.load(instance, &tree.airport, tree.op_type);
        tree.scenarios
            .iter()
            .map(|s| recourse_cost(&load, &tree.expand(&s.capacities), instance.costs.recourse()))
            .collect()
    }
}

/// Closed-form second stage: every flight above capacity joins the queue.
pub fn recourse_cost(load: &[u32], capacity: &[u32], unit_cost: f64) -> f64 {
    let overflow: u32 = load
        .iter()
        .zip(capacity)
        .map(|(&l, &c)| l.saturating_sub(c))
        .sum();
    unit_cost * overflow as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecourse {
    pub airport: AirportId,
    pub op_type: OpType,
    /// `y[scenario][t]` for `t` in `0..horizon`.
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDuals {
    pub airport: AirportId,
    pub op_type: OpType,
    pub alpha: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub model: ModelKind,
    pub status: SolveStatus,
    pub objective: f64,
    pub first_stage_cost: f64,
    pub policy: GroundDelayPolicy,
    pub second_stage: Vec<TreeRecourse>,
    pub duals: Vec<TreeDuals>,
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::scenario::{ReducedPmf, TimeClustering};
    use crate::pmf::Pmf;

    pub fn tree(airport: &str, op: OpType, horizon: usize, boundaries: Vec<usize>, stages: Vec<Vec<(u32, f64)>>) -> ScenarioTree {
        let reps = stages
            .iter()
            .map(|s| Pmf::from_atoms(s.iter().copied()).unwrap())
            .collect();
        let c = TimeClustering::new(horizon, boundaries, reps).unwrap();
        let stages = stages.into_iter().map(|atoms| ReducedPmf { atoms }).collect();
        ScenarioTree::from_stages(airport, op, c, stages, 4096).unwrap()
    }

    pub fn flight(id: &str, o: &str, d: &str, dep: usize, arr: usize) -> Flight {
        Flight {
            id: id.into(),
            origin: o.into(),
            destination: d.into(),
            sched_dep: dep,
            sched_arr: arr,
            in_network_origin: true,
            in_network_destination: true,
        }
    }

    /// Flight from an in-network origin to an uncapacitated destination.
    pub fn outbound(id: &str, o: &str, dep: usize) -> Flight {
        Flight {
            in_network_destination: false,
            ..flight(id, o, "OUT", dep, dep + 1)
        }
    }
}
