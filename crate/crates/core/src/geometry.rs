//! Bounds on the attribute projection of the bias-free embedding at the
//! adversarial equilibrium, with Monte-Carlo checks and an empirical audit of
//! trained embeddings.
//!
//! Axes: `x = e1` is the attribute direction, `y = e2` an attribute-free
//! direction, `z = e3` leaves the x–y plane. The discriminator boundary is
//! `x' = cos φ (cos γ x + sin γ y) + sin φ z` and the bias-aware embedding is
//! `u_b = C (cos θ x + sin θ y)`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams, Rng};

/// Slack allowed before a sample counts as violating a bound.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;

/// Below this residual norm a constraint is treated as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Adversarial learning only: `u_d` is constrained to `x'⊥` (plane A).
    #[serde(rename = "AL")]
    AdversarialOnly,
    /// Adversarial learning plus orthogonality: `u_d ∈ x'⊥ ∩ u_b⊥` (A ∩ B).
    #[serde(rename = "FairRec")]
    FairRec,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::AdversarialOnly => "AL",
            Regime::FairRec => "FairRec",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryScenario {
    pub theta: f64,
    pub gamma: f64,
    pub phi: f64,
    pub c_norm: f64,
    pub dim: usize,
}

impl Default for GeometryScenario {
    fn default() -> Self {
        Self {
            theta: PI / 4.0,
            gamma: PI / 6.0,
            phi: PI / 6.0,
            c_norm: 1.0,
            dim: 8,
        }
    }
}

impl GeometryScenario {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("theta", self.theta), ("gamma", self.gamma), ("phi", self.phi)] {
            if !(0.0..=PI / 2.0 + 1e-12).contains(&a) {
                return Err(Error::InvalidInput(format!("{name} = {a} outside [0, π/2]")));
            }
        }
        if !(self.c_norm > 0.0) {
            return Err(Error::InvalidInput(format!("C_norm = {} must be positive", self.c_norm)));
        }
        if self.dim < 3 {
            return Err(Error::InvalidInput(format!(
                "dim = {} too small: A ∩ B needs an ambient dimension of at least 3",
                self.dim
            )));
        }
        Ok(())
    }

    fn axis(&self, i: usize) -> Array1<f64> {
        let mut v = Array1::zeros(self.dim);
        v[i] = 1.0;
        v
    }

    pub fn attribute_axis(&self) -> Array1<f64> {
        self.axis(0)
    }

    pub fn discriminator_axis(&self) -> Array1<f64> {
        let mut v = Array1::zeros(self.dim);
        v[0] = self.phi.cos() * self.gamma.cos();
        v[1] = self.phi.cos() * self.gamma.sin();
        v[2] = self.phi.sin();
        v
    }

    pub fn bias_embedding(&self) -> Array1<f64> {
        let mut v = Array1::zeros(self.dim);
        v[0] = self.c_norm * self.theta.cos();
        v[1] = self.c_norm * self.theta.sin();
        v
    }

    fn constraints(&self, regime: Regime) -> Vec<Array1<f64>> {
        match regime {
            Regime::AdversarialOnly => vec![self.discriminator_axis()],
            Regime::FairRec => vec![self.discriminator_axis(), self.bias_embedding()],
        }
    }

    /// Orthonormal basis of the subspace `u_d` is confined to.
    pub fn feasible_basis(&self, regime: Regime) -> Result<Vec<Array1<f64>>> {
        self.validate()?;
        let mut span: Vec<Array1<f64>> = Vec::new();
        for c in self.constraints(regime) {
            push_orthogonalized(&mut span, c);
        }
        let fixed = span.len();
        for i in 0..self.dim {
            push_orthogonalized(&mut span, self.axis(i));
        }
        let basis = span.split_off(fixed);
        if basis.is_empty() {
            return Err(Error::InvalidInput("empty feasible subspace".into()));
        }
        Ok(basis)
    }
}

/// Gram–Schmidt step: append the normalized residual of `v` against `basis`
/// unless it is (numerically) dependent. Two passes for stability.
fn push_orthogonalized(basis: &mut Vec<Array1<f64>>, mut v: Array1<f64>) {
    for _ in 0..2 {
        for b in basis.iter() {
            let p = b.dot(&v);
            v.scaled_add(-p, b);
        }
    }
    let n = v.dot(&v).sqrt();
    if n > RANK_TOLERANCE {
        basis.push(v / n);
    }
}

/// `|x·u_d| ≤ ‖u_d‖ sin γ`, the adversarial-only bound for φ = 0.
pub fn bound_adversarial_only(u_norm: f64, gamma: f64) -> f64 {
    u_norm * gamma.sin()
}

/// `|x·u_d| ≤ ‖u_d‖ sin θ sin φ`, the claimed bound with orthogonality.
pub fn bound_fairrec(u_norm: f64, theta: f64, phi: f64) -> f64 {
    u_norm * theta.sin() * phi.sin()
}

pub fn regime_bound(scenario: &GeometryScenario, regime: Regime) -> f64 {
    match regime {
        Regime::AdversarialOnly => bound_adversarial_only(1.0, scenario.gamma),
        Regime::FairRec => bound_fairrec(1.0, scenario.theta, scenario.phi),
    }
}

/// Supremum of `|x·u|` over unit `u` in the feasible subspace: the norm of
/// the projection of `x` onto it.
pub fn exact_max_projection(scenario: &GeometryScenario, regime: Regime) -> Result<f64> {
    let x = scenario.attribute_axis();
    let basis = scenario.feasible_basis(regime)?;
    Ok(basis.iter().map(|b| b.dot(&x).powi(2)).sum::<f64>().sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub regime: Regime,
    pub theta: f64,
    pub gamma: f64,
    pub phi: f64,
    pub dim: usize,
    pub samples: usize,
    pub max_projection: f64,
    pub bound: f64,
    pub violations: usize,
    /// Analytic supremum of the projection over the feasible subspace.
    pub exact_max: f64,
    /// Largest |constraint · u_d| seen; should sit at rounding level.
    pub max_constraint_residual: f64,
}

/// Sample unit `u_d` uniformly from the regime's feasible subspace and count
/// samples whose attribute projection exceeds the bound.
pub fn monte_carlo_verify(
    scenario: &GeometryScenario,
    regime: Regime,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<BoundCheckResult> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let basis = scenario.feasible_basis(regime)?;
    let x = scenario.attribute_axis();
    let constraints: Vec<Array1<f64>> = scenario
        .constraints(regime)
        .into_iter()
        .map(|c| {
            let n = c.dot(&c).sqrt();
            c / n
        })
        .collect();
    let bound = regime_bound(scenario, regime);

    let mut max_projection = 0.0f64;
    let mut max_residual = 0.0f64;
    let mut violations = 0;
    let mut u = Array1::zeros(scenario.dim);
    for _ in 0..n_samples {
        u.fill(0.0);
        loop {
            for b in &basis {
                let c: f64 = StandardNormal.sample(rng);
                u.scaled_add(c, b);
            }
            let n = u.dot(&u).sqrt();
            if n > 0.0 {
                u /= n;
                break;
            }
        }
        let p = x.dot(&u).abs();
        max_projection = max_projection.max(p);
        if p > bound + VIOLATION_TOLERANCE {
            violations += 1;
        }
        for c in &constraints {
            max_residual = max_residual.max(c.dot(&u).abs());
        }
    }
    Ok(BoundCheckResult {
        regime,
        theta: scenario.theta,
        gamma: scenario.gamma,
        phi: scenario.phi,
        dim: scenario.dim,
        samples: n_samples,
        max_projection,
        bound,
        violations,
        exact_max: exact_max_projection(scenario, regime)?,
        max_constraint_residual: max_residual,
    })
}

/// {0, π/12, …, π/2}.
pub fn angle_grid() -> Vec<f64> {
    (0..=6).map(|i| i as f64 * PI / 12.0).collect()
}

/// Every grid scenario: the adversarial-only regime at φ = 0 over (θ, γ) and
/// the FairRec regime over (θ, γ, φ).
pub fn verify_grid(dim: usize, n_samples: usize, seed: u64) -> Result<Vec<BoundCheckResult>> {
    let mut rng = stream_rng(seed, streams::GEOMETRY);
    let grid = angle_grid();
    let mut out = Vec::new();
    for &theta in &grid {
        for &gamma in &grid {
            let s = GeometryScenario {
                theta,
                gamma,
                phi: 0.0,
                c_norm: 1.0,
                dim,
            };
            out.push(monte_carlo_verify(&s, Regime::AdversarialOnly, n_samples, &mut rng)?);
        }
    }
    for &theta in &grid {
        for &gamma in &grid {
            for &phi in &grid {
                let s = GeometryScenario {
                    theta,
                    gamma,
                    phi,
                    c_norm: 1.0,
                    dim,
                };
                out.push(monte_carlo_verify(&s, Regime::FairRec, n_samples, &mut rng)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasProjection {
    pub users: usize,
    /// Mean |cos(u_d, x̂)|.
    pub free_axis: f64,
    /// Mean |cos(u_b, x̂)|; `None` without a bias-aware embedding.
    pub bias_axis: Option<f64>,
    /// Mean |cos(u_d, u_b)|.
    pub free_bias: Option<f64>,
}

fn abs_cos(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = (a.dot(&a) * b.dot(&b)).sqrt();
    if n == 0.0 {
        0.0
    } else {
        (a.dot(&b) / n).abs()
    }
}

fn mean_abs_cos_to(rows: &Array2<f64>, axis: &Array1<f64>) -> f64 {
    rows.rows().into_iter().map(|r| abs_cos(r, axis.view())).sum::<f64>() / rows.nrows() as f64
}

/// Attribute direction estimated as the normalized difference of the mean
/// bias-free embedding of the first two classes present.
pub fn empirical_bias_projection(
    free: &Array2<f64>,
    bias: Option<&Array2<f64>>,
    labels: &[usize],
) -> Result<BiasProjection> {
    if free.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: free.nrows(),
        });
    }
    if let Some(b) = bias {
        if b.dim() != free.dim() {
            return Err(Error::DimensionMismatch {
                expected: free.nrows(),
                actual: b.nrows(),
            });
        }
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two attribute classes".into()));
    }
    let class_mean = |c: usize| {
        let mut sum = Array1::zeros(free.ncols());
        let mut n = 0.0;
        for (row, _) in labels.iter().enumerate().filter(|(_, &l)| l == c) {
            sum += &free.row(row);
            n += 1.0;
        }
        sum / n
    };
    let mut axis = class_mean(classes[1]) - class_mean(classes[0]);
    let norm = axis.dot(&axis).sqrt();
    if norm > 0.0 {
        axis /= norm;
    }
    Ok(BiasProjection {
        users: labels.len(),
        free_axis: mean_abs_cos_to(free, &axis),
        bias_axis: bias.map(|b| mean_abs_cos_to(b, &axis)),
        free_bias: bias.map(|b| {
            b.rows()
                .into_iter()
                .zip(free.rows())
                .map(|(ub, ud)| abs_cos(ub, ud))
                .sum::<f64>()
                / labels.len() as f64
        }),
    })
}
