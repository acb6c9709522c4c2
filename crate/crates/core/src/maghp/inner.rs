use super::{scenario_distances, GroundDelayPolicy, MaghpError, MaghpInstance};
use crate::scenario::ScenarioTree;
use crate::solver::{ConstraintSense, MilpBackend, Model, SolveOptions, VarKind};

/// Worst-case expected recourse over distributions within transport distance
/// `epsilon` of the empirical one, solved over explicit transport plans.
///
/// `costs[j]` is the recourse of support point `j`, `probabilities[i]` the
/// empirical weight of point `i`, and `distances[i][j]` the ground metric.
pub fn inner_worst_case(
    costs: &[f64],
    probabilities: &[f64],
    distances: &[Vec<f64>],
    epsilon: f64,
    backend: &dyn MilpBackend,
) -> Result<f64, MaghpError> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(MaghpError::InvalidEpsilon(epsilon));
    }
    let n = costs.len();
    if probabilities.len() != n || distances.len() != n || distances.iter().any(|r| r.len() != n) {
        return Err(MaghpError::InvalidInstance("inner problem dimensions differ".into()));
    }
    let mut model = Model::new();
    // maximize Σ π_ij c_j by minimizing its negation
    let plan: Vec<Vec<_>> = (0..n)
        .map(|_| {
            costs
                .iter()
                .map(|&c| model.add_variable(VarKind::Continuous, -c))
                .collect()
        })
        .collect();
    for (row, &p) in plan.iter().zip(probabilities) {
        model.add_linear_constraint(row.iter().map(|&v| (v, 1.0)), ConstraintSense::Eq, p);
    }
    model.add_linear_constraint(
        plan.iter()
            .zip(distances)
            .flat_map(|(row, d)| row.iter().zip(d).map(|(&v, &dij)| (v, dij))),
        ConstraintSense::Le,
        epsilon,
    );
    let sol = model.minimize(backend, &SolveOptions::default())?;
    Ok(-sol.objective)
}

/// Worst-case expected recourse of a fixed policy against one scenario tree.
pub fn policy_worst_case(
    instance: &MaghpInstance,
    policy: &GroundDelayPolicy,
    tree: &ScenarioTree,
    epsilon: f64,
    backend: &dyn MilpBackend,
) -> Result<f64, MaghpError> {
    let costs = policy.scenario_recourse(instance, tree);
    let probabilities: Vec<f64> = tree.scenarios.iter().map(|s| s.probability).collect();
    inner_worst_case(&costs, &probabilities, &scenario_distances(tree), epsilon, backend)
}
