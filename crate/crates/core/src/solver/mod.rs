//! A small MILP modeling layer.
//!
//! Models are assembled backend-independently as a list of columns and rows and
//! handed to a [`MilpBackend`] for solving. All models are minimization problems.

mod highs_backend;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use highs_backend::HighsBackend;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("solver backend `{0}` is not available")]
    BackendUnavailable(String),
    #[error("model is infeasible")]
    Infeasible,
    #[error("model is unbounded")]
    Unbounded,
    #[error("time limit reached before a feasible solution was found")]
    TimeLimit,
    #[error("solver failure: {0}")]
    Failure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// Continuous, bounded below by zero.
    Continuous,
    /// Continuous, unbounded in both directions.
    Free,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub terms: Vec<(VarId, f64)>,
    pub sense: ConstraintSense,
    pub rhs: f64,
}

/// A minimization MILP.
#[derive(Debug, Clone, Default)]
pub struct Model {
    variables: Vec<Variable>,
    constraints: Vec<LinearConstraint>,
    objective_offset: f64,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, kind: VarKind, objective: f64) -> VarId {
        let (lower, upper, integer) = match kind {
            VarKind::Continuous => (0.0, f64::INFINITY, false),
            VarKind::Free => (f64::NEG_INFINITY, f64::INFINITY, false),
            VarKind::Binary => (0.0, 1.0, true),
        };
        self.add_bounded_variable(lower, upper, integer, objective)
    }

    pub fn add_bounded_variable(
        &mut self,
        lower: f64,
        upper: f64,
        integer: bool,
        objective: f64,
    ) -> VarId {
        self.variables.push(Variable {
            lower,
            upper,
            integer,
            objective,
        });
        VarId(self.variables.len() - 1)
    }

    /// Adds `Σ coef·var  (sense)  rhs`. Repeated variables in `terms` are summed.
    pub fn add_linear_constraint(
        &mut self,
        terms: impl IntoIterator<Item = (VarId, f64)>,
        sense: ConstraintSense,
        rhs: f64,
    ) {
        let mut terms: Vec<(VarId, f64)> = terms.into_iter().collect();
        terms.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        self.constraints.push(LinearConstraint {
            terms: merged,
            sense,
            rhs,
        });
    }

    /// Constant added to the objective.
    pub fn add_objective_constant(&mut self, value: f64) {
        self.objective_offset += value;
    }

    pub fn objective_offset(&self) -> f64 {
        self.objective_offset
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_mip(&self) -> bool {
        self.variables.iter().any(|v| v.integer)
    }

    /// Objective value of an assignment, including the constant offset.
    pub fn evaluate_objective(&self, values: &[f64]) -> f64 {
        self.objective_offset
            + self
                .variables
                .iter()
                .zip(values)
                .map(|(v, x)| v.objective * x)
                .sum::<f64>()
    }

    /// Largest constraint or bound violation of an assignment.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, x) in self.variables.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|(v, k)| k * values[v.0]).sum();
            let viol = match c.sense {
                ConstraintSense::Le => lhs - c.rhs,
                ConstraintSense::Ge => c.rhs - lhs,
                ConstraintSense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn minimize(
        &self,
        backend: &dyn MilpBackend,
        options: &SolveOptions,
    ) -> Result<Solution, SolverError> {
        if self.variables.is_empty() {
            if self.constraints.iter().any(|c| !empty_row_satisfied(c)) {
                return Err(SolverError::Infeasible);
            }
            return Ok(Solution {
                status: SolveStatus::Optimal,
                objective: self.objective_offset,
                values: Vec::new(),
            });
        }
        backend.solve(self, options)
    }
}

fn empty_row_satisfied(c: &LinearConstraint) -> bool {
    match c.sense {
        ConstraintSense::Le => 0.0 <= c.rhs,
        ConstraintSense::Ge => 0.0 >= c.rhs,
        ConstraintSense::Eq => c.rhs == 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Stopped at the time limit with a feasible incumbent.
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
}

impl Solution {
    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Wall-clock limit in seconds.
    pub time_limit: f64,
    pub mip_rel_gap: f64,
    pub feasibility_tolerance: f64,
    pub seed: u64,
    pub threads: u32,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: 300.0,
            mip_rel_gap: 1e-6,
            feasibility_tolerance: 1e-9,
            seed: 0,
            threads: 1,
            verbose: false,
        }
    }
}

pub trait MilpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, model: &Model, options: &SolveOptions) -> Result<Solution, SolverError>;
}

/// Looks up a backend by name. Only `highs` ships with this crate.
pub fn backend_by_name(name: &str) -> Result<Box<dyn MilpBackend>, SolverError> {
    match name.to_ascii_lowercase().as_str() {
        "highs" => Ok(Box::new(HighsBackend)),
        other => Err(SolverError::BackendUnavailable(other.to_string())),
    }
}

pub fn default_backend() -> HighsBackend {
    HighsBackend
}
