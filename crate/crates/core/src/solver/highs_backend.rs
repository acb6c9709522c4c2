use std::num::NonZeroU32;

use highs::{HighsModelStatus, HighsOptionValue, HighsSolutionStatus, RowProblem, Sense};

use super::{ConstraintSense, MilpBackend, Model, Solution, SolveOptions, SolveStatus, SolverError};

/// HiGHS through the `highs` bindings.
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

impl MilpBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn solve(&self, model: &Model, options: &SolveOptions) -> Result<Solution, SolverError> {
        let mut pb = RowProblem::default();
        let cols: Vec<_> = model
            .variables()
            .iter()
            .map(|v| pb.add_column_with_integrality(v.objective, v.lower..=v.upper, v.integer))
            .collect();
        for c in model.constraints() {
            let row: Vec<_> = c.terms.iter().map(|(v, k)| (cols[v.index()], *k)).collect();
            match c.sense {
                ConstraintSense::Le => pb.add_row(..=c.rhs, row),
                ConstraintSense::Ge => pb.add_row(c.rhs.., row),
                ConstraintSense::Eq => pb.add_row(c.rhs..=c.rhs, row),
            }
        }

        let mut hm = pb
            .try_optimise(Sense::Minimise)
            .map_err(|s| SolverError::Failure(format!("invalid model: {s:?}")))?;
        if !options.verbose {
            hm.make_quiet();
        }
        set_option(&mut hm, "time_limit", options.time_limit)?;
        set_option(&mut hm, "mip_rel_gap", options.mip_rel_gap)?;
        set_option(&mut hm, "primal_feasibility_tolerance", options.feasibility_tolerance)?;
        set_option(&mut hm, "dual_feasibility_tolerance", options.feasibility_tolerance)?;
        set_option(&mut hm, "random_seed", (options.seed % i32::MAX as u64) as i32)?;
        if let Some(t) = NonZeroU32::new(options.threads) {
            hm.set_threads(t);
        }

        let solved = hm
            .try_solve()
            .map_err(|s| SolverError::Failure(format!("HiGHS run failed: {s:?}")))?;
        let status = match solved.status() {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible => return Err(SolverError::Infeasible),
            HighsModelStatus::Unbounded => return Err(SolverError::Unbounded),
            HighsModelStatus::UnboundedOrInfeasible => return Err(SolverError::Infeasible),
            HighsModelStatus::ReachedTimeLimit => {
                if solved.primal_solution_status() == HighsSolutionStatus::Feasible {
                    SolveStatus::TimeLimit
                } else {
                    return Err(SolverError::TimeLimit);
                }
            }
            other => return Err(SolverError::Failure(format!("model status {other:?}"))),
        };
        let values = solved.get_solution().columns().to_vec();
        let objective = model.evaluate_objective(&values);
        Ok(Solution {
            status,
            objective,
            values,
        })
    }
}

fn set_option<V: HighsOptionValue>(
    model: &mut highs::Model,
    name: &str,
    value: V,
) -> Result<(), SolverError> {
    model
        .try_set_option(name, value)
        .map_err(|e| SolverError::Failure(format!("option {name}: {e:?}")))
}
