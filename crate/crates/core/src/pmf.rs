//! Discrete capacity distributions and Wasserstein distances between them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{ConstraintSense, MilpBackend, Model, SolveOptions, SolverError, VarKind};

/// Invariant tolerance on probability mass.
pub const PROB_TOL: f64 = 1e-9;
/// Largest deviation from unit mass that [`Pmf::new`] silently renormalizes.
pub const RENORMALIZE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmfError {
    #[error("support has {support} entries but weights has {weights}")]
    LengthMismatch { support: usize, weights: usize },
    #[error("a distribution needs at least one atom")]
    Empty,
    #[error("weight {value} at index {index} is negative or not finite")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, outside [1-1e-6, 1+1e-6]")]
    MassDeviationTooLarge { sum: f64 },
    #[error("support must be strictly increasing (index {index})")]
    UnsortedSupport { index: usize },
    #[error("scenario vectors have inconsistent lengths ({expected} vs {found})")]
    RaggedScenarios { expected: usize, found: usize },
    #[error("cost matrix shape {rows}x{cols} does not match distributions {expected_rows}x{expected_cols}")]
    CostShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("ground costs must be finite and non-negative")]
    InvalidCost,
    #[error("all ground costs are zero")]
    AllZeroCosts,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Probability mass function over non-negative integer capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PmfRepr", into = "PmfRepr")]
pub struct Pmf {
    support: Vec<u32>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PmfRepr {
    support: Vec<u32>,
    weights: Vec<f64>,
}

impl TryFrom<PmfRepr> for Pmf {
    type Error = PmfError;

    fn try_from(r: PmfRepr) -> Result<Self, Self::Error> {
        Pmf::new(r.support, r.weights)
    }
}

impl From<Pmf> for PmfRepr {
    fn from(p: Pmf) -> Self {
        PmfRepr {
            support: p.support,
            weights: p.weights,
        }
    }
}

fn check_mass(weights: &mut [f64]) -> Result<(), PmfError> {
    for (index, &value) in weights.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(PmfError::NegativeWeight { index, value });
        }
    }
    let sum: f64 = weights.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > RENORMALIZE_TOL {
        return Err(PmfError::MassDeviationTooLarge { sum });
    }
    if dev > PROB_TOL {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(())
}

impl Pmf {
    /// Validates and builds a PMF. Mass within 1e-6 of one is renormalized;
    /// mass already within 1e-9 is kept bit-for-bit.
    pub fn new(support: Vec<u32>, mut weights: Vec<f64>) -> Result<Self, PmfError> {
        if support.len() != weights.len() {
            return Err(PmfError::LengthMismatch {
                support: support.len(),
                weights: weights.len(),
            });
        }
        if support.is_empty() {
            return Err(PmfError::Empty);
        }
        if let Some(index) = support.windows(2).position(|w| w[0] >= w[1]) {
            return Err(PmfError::UnsortedSupport { index: index + 1 });
        }
        check_mass(&mut weights)?;
        Ok(Self { support, weights })
    }

    pub fn point_mass(value: u32) -> Self {
        Self {
            support: vec![value],
            weights: vec![1.0],
        }
    }

    /// PMF on `0..weights.len()`.
    pub fn from_dense(weights: Vec<f64>) -> Result<Self, PmfError> {
        let support = (0..weights.len() as u32).collect();
        Self::new(support, weights)
    }

    /// Builds a PMF from unsorted, possibly repeated (value, weight) pairs by
    /// merging equal values.
    pub fn from_atoms(atoms: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, PmfError> {
        let mut atoms: Vec<(u32, f64)> = atoms.into_iter().collect();
        atoms.sort_by_key(|a| a.0);
        let mut support = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            if support.last() == Some(&v) {
                *weights.last_mut().unwrap() += w;
            } else {
                support.push(v);
                weights.push(w);
            }
        }
        Self::new(support, weights)
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    /// Probability of `value` (zero off-support).
    pub fn weight_of(&self, value: u32) -> f64 {
        self.support
            .binary_search(&value)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(s, w)| s as f64 * w).sum()
    }

    pub fn max_support(&self) -> u32 {
        *self.support.last().expect("non-empty")
    }

    /// Number of atoms carrying strictly positive mass.
    pub fn positive_atoms(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Inverse-CDF sampling from a uniform draw `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        for (s, w) in self.iter() {
            acc += w;
            if u < acc {
                return s;
            }
        }
        // u beyond accumulated mass: last atom with positive weight
        self.iter()
            .filter(|(_, w)| *w > 0.0)
            .last()
            .map(|(s, _)| s)
            .unwrap_or_else(|| self.max_support())
    }

    /// Pointwise average of several PMFs over the union of their supports.
    pub fn average(pmfs: &[&Pmf]) -> Result<Pmf, PmfError> {
        if pmfs.is_empty() {
            return Err(PmfError::Empty);
        }
        let n = pmfs.len() as f64;
        let mut sums = std::collections::BTreeMap::new();
        for (s, w) in pmfs.iter().flat_map(|p| p.iter()) {
            *sums.entry(s).or_insert(0.0) += w;
        }
        Pmf::new(
            sums.keys().copied().collect(),
            sums.values().map(|w| w / n).collect(),
        )
    }
}

/// Mean of a PMF, `Σ weight·support`.
pub fn pmf_mean(p: &Pmf) -> f64 {
    p.mean()
}

/// Order-1 Wasserstein distance between PMFs on the integer line, computed as
/// the integral of the absolute CDF difference.
pub fn wasserstein_1d(p: &Pmf, q: &Pmf) -> f64 {
    let (ps, qs) = (p.support(), q.support());
    let (pw, qw) = (p.weights(), q.weights());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut cdf_p, mut cdf_q) = (0.0f64, 0.0f64);
    let mut prev: Option<u32> = None;
    let mut total = 0.0;
    while i < ps.len() || j < qs.len() {
        let x = match (ps.get(i), qs.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if let Some(px) = prev {
            total += (cdf_p - cdf_q).abs() * (x - px) as f64;
        }
        if ps.get(i) == Some(&x) {
            cdf_p += pw[i];
            i += 1;
        }
        if qs.get(j) == Some(&x) {
            cdf_q += qw[j];
            j += 1;
        }
        prev = Some(x);
    }
    total
}

/// A finite joint distribution over integer capacity vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJointDistribution {
    atoms: Vec<(Vec<u32>, f64)>,
}

impl DiscreteJointDistribution {
    pub fn new(mut atoms: Vec<(Vec<u32>, f64)>) -> Result<Self, PmfError> {
        let Some(first) = atoms.first() else {
            return Err(PmfError::Empty);
        };
        let dim = first.0.len();
        if let Some((v, _)) = atoms.iter().find(|(v, _)| v.len() != dim) {
            return Err(PmfError::RaggedScenarios {
                expected: dim,
                found: v.len(),
            });
        }
        let mut w: Vec<f64> = atoms.iter().map(|a| a.1).collect();
        check_mass(&mut w)?;
        for (a, w) in atoms.iter_mut().zip(w) {
            a.1 = w;
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(Vec<u32>, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.1)
    }
}

impl From<&Pmf> for DiscreteJointDistribution {
    fn from(p: &Pmf) -> Self {
        Self {
            atoms: p.iter().map(|(s, w)| (vec![s], w)).collect(),
        }
    }
}

pub fn l1_distance(a: &[u32], b: &[u32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum()
}

pub fn l2_distance(a: &[u32], b: &[u32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Pairwise ground-cost matrix between the atoms of two distributions.
pub fn pairwise_costs(
    mu: &DiscreteJointDistribution,
    nu: &DiscreteJointDistribution,
    metric: fn(&[u32], &[u32]) -> f64,
) -> Vec<Vec<f64>> {
    mu.atoms()
        .iter()
        .map(|(a, _)| nu.atoms().iter().map(|(b, _)| metric(a, b)).collect())
        .collect()
}

/// Optimal value of the transportation LP between `mu` and `nu` under `ground_cost`.
pub fn wasserstein_lp(
    mu: &DiscreteJointDistribution,
    nu: &DiscreteJointDistribution,
    ground_cost: &[Vec<f64>],
    backend: &dyn MilpBackend,
) -> Result<f64, PmfError> {
    let (m, n) = (mu.len(), nu.len());
    let cols = ground_cost.first().map_or(0, Vec::len);
    if ground_cost.len() != m || ground_cost.iter().any(|r| r.len() != n) {
        return Err(PmfError::CostShape {
            rows: ground_cost.len(),
            cols,
            expected_rows: m,
            expected_cols: n,
        });
    }
    if ground_cost.iter().flatten().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(PmfError::InvalidCost);
    }
    // equalize total mass so that dust-level differences cannot make the LP infeasible
    let mu_mass: f64 = mu.probabilities().sum();
    let nu_mass: f64 = nu.probabilities().sum();
    let scale = mu_mass / nu_mass;

    let mut model = Model::new();
    let plan: Vec<Vec<_>> = ground_cost
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| model.add_variable(VarKind::Continuous, c))
                .collect()
        })
        .collect();
    for (i, (_, p)) in mu.atoms().iter().enumerate() {
        model.add_linear_constraint(plan[i].iter().map(|&v| (v, 1.0)), ConstraintSense::Eq, *p);
    }
    for (j, (_, q)) in nu.atoms().iter().enumerate() {
        model.add_linear_constraint(
            plan.iter().map(|row| (row[j], 1.0)),
            ConstraintSense::Eq,
            q * scale,
        );
    }
    let sol = model.minimize(backend, &SolveOptions::default())?;
    Ok(sol.objective)
}

/// Divides every entry by the largest one.
pub fn normalize_ground_costs(cost: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PmfError> {
    if cost.iter().flatten().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(PmfError::InvalidCost);
    }
    let max = cost.iter().flatten().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(PmfError::AllZeroCosts);
    }
    Ok(cost
        .iter()
        .map(|row| row.iter().map(|c| c / max).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::HighsBackend;
    use proptest::prelude::*;

    fn six_atoms() -> Pmf {
        Pmf::from_dense(vec![0.05, 0.10, 0.70, 0.10, 0.03, 0.02]).unwrap()
    }

    #[test]
    fn make_pmf_examples() {
        let p = six_atoms();
        assert_eq!(p.support(), &[0, 1, 2, 3, 4, 5]);
        let d = Pmf::new(vec![3], vec![1.0]).unwrap();
        assert_eq!(d, Pmf::point_mass(3));
        assert!(matches!(
            Pmf::new(vec![0, 1], vec![0.5, -0.1]),
            Err(PmfError::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn make_pmf_rejects_bad_inputs() {
        assert!(matches!(
            Pmf::new(vec![0, 1], vec![1.0]),
            Err(PmfError::LengthMismatch { .. })
        ));
        assert_eq!(Pmf::new(vec![], vec![]), Err(PmfError::Empty));
        assert!(matches!(
            Pmf::new(vec![0, 1], vec![0.5, 0.4]),
            Err(PmfError::MassDeviationTooLarge { .. })
        ));
        assert!(matches!(
            Pmf::new(vec![1, 1], vec![0.5, 0.5]),
            Err(PmfError::UnsortedSupport { .. })
        ));
        assert!(matches!(
            Pmf::new(vec![0], vec![f64::NAN]),
            Err(PmfError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn small_mass_deviation_is_renormalized() {
        let p = Pmf::new(vec![0, 1], vec![0.5, 0.5 + 5e-7]).unwrap();
        let sum: f64 = p.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(pmf_mean(&Pmf::point_mass(3)), 3.0);
        assert_eq!(pmf_mean(&Pmf::new(vec![0, 2], vec![0.5, 0.5]).unwrap()), 1.0);
        // 0.10 + 1.40 + 0.30 + 0.12 + 0.10
        assert!((pmf_mean(&six_atoms()) - 2.02).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_1d_examples() {
        let p = six_atoms();
        assert_eq!(wasserstein_1d(&p, &p), 0.0);
        assert_eq!(
            wasserstein_1d(&Pmf::point_mass(3), &Pmf::point_mass(7)),
            4.0
        );
        let a = Pmf::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let b = Pmf::new(vec![0, 1], vec![0.0, 1.0]).unwrap();
        assert!((wasserstein_1d(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_1d_disjoint_supports() {
        // mass 1/2 at 0 and 1/2 at 10 vs point mass at 4: 0.5*4 + 0.5*6
        let a = Pmf::new(vec![0, 10], vec![0.5, 0.5]).unwrap();
        assert!((wasserstein_1d(&a, &Pmf::point_mass(4)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_lp_examples() {
        let mu = DiscreteJointDistribution::new(vec![(vec![1, 2], 0.3), (vec![4, 0], 0.7)]).unwrap();
        let c = pairwise_costs(&mu, &mu, l2_distance);
        let v = wasserstein_lp(&mu, &mu, &c, &HighsBackend).unwrap();
        assert!(v.abs() < 1e-12);

        let a = DiscreteJointDistribution::new(vec![(vec![0], 1.0)]).unwrap();
        let b = DiscreteJointDistribution::new(vec![(vec![5], 1.0)]).unwrap();
        let v = wasserstein_lp(&a, &b, &[vec![2.5]], &HighsBackend).unwrap();
        assert!((v - 2.5).abs() < 1e-12);

        let p = Pmf::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let q = Pmf::new(vec![0, 1], vec![0.0, 1.0]).unwrap();
        let (dp, dq) = ((&p).into(), (&q).into());
        let c = pairwise_costs(&dp, &dq, l1_distance);
        let v = wasserstein_lp(&dp, &dq, &c, &HighsBackend).unwrap();
        assert!((v - wasserstein_1d(&p, &q)).abs() < 1e-8);
    }

    #[test]
    fn wasserstein_lp_checks_shape() {
        let a = DiscreteJointDistribution::new(vec![(vec![0], 1.0)]).unwrap();
        assert!(matches!(
            wasserstein_lp(&a, &a, &[vec![0.0, 1.0]], &HighsBackend),
            Err(PmfError::CostShape { .. })
        ));
        assert_eq!(
            wasserstein_lp(&a, &a, &[vec![-1.0]], &HighsBackend),
            Err(PmfError::InvalidCost)
        );
    }

    #[test]
    fn joint_distribution_validation() {
        assert!(matches!(
            DiscreteJointDistribution::new(vec![(vec![0], 0.5), (vec![1, 2], 0.5)]),
            Err(PmfError::RaggedScenarios { .. })
        ));
        assert!(DiscreteJointDistribution::new(vec![]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_ground_costs(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(),
            vec![vec![0.0, 1.0], vec![1.0, 0.0]]
        );
        assert_eq!(
            normalize_ground_costs(&[vec![0.0, 0.0], vec![0.0, 0.0]]),
            Err(PmfError::AllZeroCosts)
        );
        assert_eq!(
            normalize_ground_costs(&[vec![1.0, 4.0], vec![2.0, 8.0]]).unwrap(),
            vec![vec![0.125, 0.5], vec![0.25, 1.0]]
        );
    }

    #[test]
    fn average_uses_union_support() {
        let a = Pmf::point_mass(1);
        let b = Pmf::new(vec![2, 3], vec![0.5, 0.5]).unwrap();
        let avg = Pmf::average(&[&a, &b]).unwrap();
        assert_eq!(avg.support(), &[1, 2, 3]);
        assert_eq!(avg.weights(), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn quantile_sampling_edges() {
        let p = Pmf::new(vec![1, 4, 9], vec![0.2, 0.0, 0.8]).unwrap();
        assert_eq!(p.quantile(0.0), 1);
        assert_eq!(p.quantile(0.2), 9);
        assert_eq!(p.quantile(0.999_999_999_999), 9);
    }

    fn arb_pmf() -> impl Strategy<Value = Pmf> {
        proptest::collection::btree_map(0u32..20, 0.01f64..1.0, 1..8).prop_map(|m| {
            let total: f64 = m.values().sum();
            Pmf::new(
                m.keys().copied().collect(),
                m.values().map(|w| w / total).collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn wasserstein_1d_is_a_metric(p in arb_pmf(), q in arb_pmf(), r in arb_pmf()) {
            let pq = wasserstein_1d(&p, &q);
            prop_assert!((pq - wasserstein_1d(&q, &p)).abs() <= 1e-8);
            prop_assert!(pq >= 0.0);
            prop_assert!(wasserstein_1d(&p, &p).abs() <= 1e-12);
            prop_assert!(pq <= wasserstein_1d(&p, &r) + wasserstein_1d(&r, &q) + 1e-8);
            if pq <= 1e-12 {
                // zero distance only between identical distributions (on positive mass)
                for v in p.support().iter().chain(q.support()) {
                    prop_assert!((p.weight_of(*v) - q.weight_of(*v)).abs() <= 1e-8);
                }
            }
        }

        #[test]
        fn serialization_round_trips_bit_identically(p in arb_pmf()) {
            let json = serde_json::to_string(&p).unwrap();
            let back: Pmf = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.support(), p.support());
            for (a, b) in back.weights().iter().zip(p.weights()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn lp_value_scales_linearly(p in arb_pmf(), q in arb_pmf(), lambda in 0.1f64..10.0) {
            let (dp, dq) = ((&p).into(), (&q).into());
            let c = pairwise_costs(&dp, &dq, l1_distance);
            let scaled: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|x| x * lambda).collect()).collect();
            let base = wasserstein_lp(&dp, &dq, &c, &HighsBackend).unwrap();
            let s = wasserstein_lp(&dp, &dq, &scaled, &HighsBackend).unwrap();
            prop_assert!((s - lambda * base).abs() <= 1e-8 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn json_format() {
        let p = Pmf::new(vec![2, 5], vec![0.25, 0.75]).unwrap();
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"support":[2,5],"weights":[0.25,0.75]}"#
        );
        let bad: Result<Pmf, _> = serde_json::from_str(r#"{"support":[2],"weights":[0.5]}"#);
        assert!(bad.is_err());
    }
}
