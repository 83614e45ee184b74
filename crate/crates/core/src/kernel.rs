//! Constrained kernel regression through quadrature-augmented Gram matrices.
//!
//! A subgroup mean-equality constraint is a noiseless pseudo-observation of
//! the functional `∫ (p_A(x) − p_B(x)) f(x) dx = 0`. Against an empirical
//! realization of the densities, the functional's covariances with the
//! training points are sample averages of kernel evaluations, and the
//! augmented system
//!
//! ```text
//! [ Q   R  ] [α_c]   [0]
//! [ Rᵀ  K+σ²I ] [α_x] = [y]
//! ```
//!
//! (Q: constraint-constraint terms, R: constraint-training cross terms)
//! forces every fitted constraint gap to zero. Constraint rows never receive
//! noise; jitter, when required, goes to the training block only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Tolerances;

#[derive(Clone, Debug, PartialEq)]
pub enum KernelFunction {
    /// `variance * exp(-‖u − v‖² / (2 lengthscale²))`
    SquaredExponential { lengthscale: f64, variance: f64 },
    /// `variance * (u·v)`
    Linear { variance: f64 },
    /// `variance * (u·v + 1)^degree`
    Polynomial { degree: u32, variance: f64 },
}

impl KernelFunction {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            KernelFunction::SquaredExponential {
                lengthscale,
                variance,
            } => *lengthscale > 0.0 && lengthscale.is_finite() && *variance > 0.0 && variance.is_finite(),
            KernelFunction::Linear { variance } => *variance > 0.0 && variance.is_finite(),
            KernelFunction::Polynomial { variance, .. } => *variance > 0.0 && variance.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "kernel hyperparameters must be positive and finite".into(),
            ))
        }
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        match self {
            KernelFunction::SquaredExponential {
                lengthscale,
                variance,
            } => {
                let sq: f64 = u
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                variance * (-sq / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelFunction::Linear { variance } => {
                variance * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            }
            KernelFunction::Polynomial { degree, variance } => {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                variance * (dot + 1.0).powi(*degree as i32)
            }
        }
    }
}

/// Sample-set realization of `q(x) = p_A(x) − p_B(x)`: one row per sample.
#[derive(Clone, Debug)]
pub struct QuadratureConstraint {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl QuadratureConstraint {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<QuadratureConstraint> {
        if a.nrows() == 0 || b.nrows() == 0 {
            return Err(Error::EmptyGroup(
                "quadrature constraint sample set".into(),
            ));
        }
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "constraint sample sets have {} vs {} features",
                a.ncols(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint sample sets".into()));
        }
        Ok(QuadratureConstraint { a, b })
    }

    /// Builds the sample sets by selecting rows of a data matrix.
    pub fn from_rows(x: &DMatrix<f64>, rows_a: &[usize], rows_b: &[usize]) -> Result<QuadratureConstraint> {
        let take = |rows: &[usize]| -> DMatrix<f64> {
            DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
        };
        QuadratureConstraint::new(take(rows_a), take(rows_b))
    }

    pub fn sample_sets(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a, &self.b)
    }

    /// Empirical `∫ q(x) K(x, p) dx` at an arbitrary point.
    fn cross_term(&self, kernel: &KernelFunction, point: &[f64]) -> f64 {
        mean_kernel_to_point(kernel, &self.a, point) - mean_kernel_to_point(kernel, &self.b, point)
    }
}

fn row_buf(m: &DMatrix<f64>, i: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend((0..m.ncols()).map(|j| m[(i, j)]));
}

fn mean_kernel_to_point(kernel: &KernelFunction, samples: &DMatrix<f64>, point: &[f64]) -> f64 {
    let mut buf = Vec::with_capacity(samples.ncols());
    let mut sum = 0.0;
    for i in 0..samples.nrows() {
        row_buf(samples, i, &mut buf);
        sum += kernel.eval(&buf, point);
    }
    sum / samples.nrows() as f64
}

fn mean_kernel_between(kernel: &KernelFunction, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> f64 {
    let mut bx = Vec::with_capacity(xs.ncols());
    let mut by = Vec::with_capacity(ys.ncols());
    let mut sum = 0.0;
    for i in 0..xs.nrows() {
        row_buf(xs, i, &mut bx);
        for j in 0..ys.nrows() {
            row_buf(ys, j, &mut by);
            sum += kernel.eval(&bx, &by);
        }
    }
    sum / (xs.nrows() * ys.nrows()) as f64
}

/// Empirical `∫ q(x) K(x, x_i) dx` for every training row:
/// entry i is `mean_{a∈A} K(a, x_i) − mean_{b∈B} K(b, x_i)`.
pub fn empirical_quadrature_row(
    kernel: &KernelFunction,
    constraint: &QuadratureConstraint,
    x: &DMatrix<f64>,
) -> DVector<f64> {
    let mut buf = Vec::with_capacity(x.ncols());
    DVector::from_fn(x.nrows(), |i, _| {
        row_buf(x, i, &mut buf);
        constraint.cross_term(kernel, &buf)
    })
}

/// Empirical `∫∫ q₁(x) K(x, x′) q₂(x′) dx dx′`, the constraint-constraint
/// block entry. Symmetric in its two constraints; the diagonal is
/// nonnegative up to round-off for any PSD kernel.
pub fn quadrature_self_term(
    kernel: &KernelFunction,
    c1: &QuadratureConstraint,
    c2: &QuadratureConstraint,
) -> f64 {
    mean_kernel_between(kernel, &c1.a, &c2.a) - mean_kernel_between(kernel, &c1.a, &c2.b)
        - mean_kernel_between(kernel, &c1.b, &c2.a)
        + mean_kernel_between(kernel, &c1.b, &c2.b)
}

/// A fitted constrained kernel regressor: training inputs, the cached
/// factorization of the augmented Gram matrix, and the dual weights.
#[derive(Clone, Debug)]
pub struct ConstrainedKernelSystem {
    kernel: KernelFunction,
    x: DMatrix<f64>,
    constraints: Vec<QuadratureConstraint>,
    sigma_n_sq: f64,
    /// Dual weights, constraint entries first.
    alpha: DVector<f64>,
    /// Jitter added to the training block (0 when none was needed).
    jitter_added: f64,
}

/// Fits a constrained kernel regressor: builds the `(C+n)×(C+n)` augmented
/// matrix (constraint rows first and noiseless), appends a pseudo-observation
/// of 0 per constraint, and caches the factorization's dual weights.
pub fn fit(
    x: DMatrix<f64>,
    y: &[f64],
    kernel: KernelFunction,
    sigma_n_sq: f64,
    constraints: Vec<QuadratureConstraint>,
) -> Result<ConstrainedKernelSystem> {
    kernel.validate()?;
    if x.nrows() == 0 {
        return Err(Error::Data("kernel fit requires at least one row".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel training data".into()));
    }
    if !sigma_n_sq.is_finite() || sigma_n_sq < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma_n_sq must be a finite non-negative value, got {sigma_n_sq}"
        )));
    }
    for c in &constraints {
        if c.a.ncols() != x.ncols() || c.b.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch(
                "constraint samples and training data must share the feature count".into(),
            ));
        }
    }

    let n = x.nrows();
    let n_constraints = constraints.len();
    let size = n + n_constraints;
    let mut m = DMatrix::zeros(size, size);

    for (i, ci) in constraints.iter().enumerate() {
        for (j, cj) in constraints.iter().enumerate().skip(i) {
            let v = quadrature_self_term(&kernel, ci, cj);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        let row = empirical_quadrature_row(&kernel, ci, &x);
        for t in 0..n {
            m[(i, n_constraints + t)] = row[t];
            m[(n_constraints + t, i)] = row[t];
        }
    }

    let mut bi = Vec::with_capacity(x.ncols());
    let mut bj = Vec::with_capacity(x.ncols());
    for i in 0..n {
        row_buf(&x, i, &mut bi);
        for j in i..n {
            row_buf(&x, j, &mut bj);
            let mut v = kernel.eval(&bi, &bj);
            if i == j {
                v += sigma_n_sq;
            }
            m[(n_constraints + i, n_constraints + j)] = v;
            m[(n_constraints + j, n_constraints + i)] = v;
        }
    }

    let mut rhs = DVector::zeros(size);
    for (i, &target) in y.iter().enumerate() {
        rhs[n_constraints + i] = target;
    }

    // Cholesky, then one retry with jitter on the training block only.
    let tol = Tolerances::default();
    let (alpha, jitter_added) = match m.clone().cholesky() {
        Some(chol) => (solve_refined(&chol, &m, &rhs), 0.0),
        None => {
            let trace: f64 = (0..n).map(|i| m[(n_constraints + i, n_constraints + i)]).sum();
            let jitter = tol.psd_jitter * trace / n as f64;
            let mut jittered = m.clone();
            for i in 0..n {
                jittered[(n_constraints + i, n_constraints + i)] += jitter;
            }
            match jittered.clone().cholesky() {
                Some(chol) => (solve_refined(&chol, &jittered, &rhs), jitter),
                None => {
                    return Err(Error::Numerical(format!(
                        "augmented kernel matrix is not positive definite even after jitter {jitter:.3e}; \
                         increase sigma_n_sq or drop redundant constraints"
                    )))
                }
            }
        }
    };

    Ok(ConstrainedKernelSystem {
        kernel,
        x,
        constraints,
        sigma_n_sq,
        alpha,
        jitter_added,
    })
}

fn solve_refined(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> DVector<f64> {
    let mut alpha = chol.solve(rhs);
    let residual = rhs - m * &alpha;
    alpha += chol.solve(&residual);
    alpha
}

impl ConstrainedKernelSystem {
    pub fn n_training_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn sigma_n_sq(&self) -> f64 {
        self.sigma_n_sq
    }

    pub fn jitter_added(&self) -> f64 {
        self.jitter_added
    }

    /// Posterior-mean prediction at a point: cross-covariances to the
    /// constraints are empirical quadrature terms, to the training rows plain
    /// kernel evaluations. With zero constraints this is exactly kernel-ridge
    /// regression.
    pub fn predict(&self, x_star: &[f64]) -> Result<f64> {
        if x_star.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "prediction point has {} features, model expects {}",
                x_star.len(),
                self.x.ncols()
            )));
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction point".into()));
        }
        let n_constraints = self.constraints.len();
        let mut acc = 0.0;
        for (i, c) in self.constraints.iter().enumerate() {
            acc += c.cross_term(&self.kernel, x_star) * self.alpha[i];
        }
        let mut buf = Vec::with_capacity(self.x.ncols());
        for i in 0..self.x.nrows() {
            row_buf(&self.x, i, &mut buf);
            acc += self.kernel.eval(&buf, x_star) * self.alpha[n_constraints + i];
        }
        Ok(acc)
    }

    pub fn predict_rows(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut buf = Vec::with_capacity(points.ncols());
        (0..points.nrows())
            .map(|i| {
                row_buf(points, i, &mut buf);
                self.predict(&buf)
            })
            .collect()
    }

    /// Mean prediction gap over a constraint's defining sample sets.
    pub fn constraint_gap(&self, index: usize) -> Result<f64> {
        let c = &self.constraints[index];
        let mean = |samples: &DMatrix<f64>| -> Result<f64> {
            let preds = self.predict_rows(samples)?;
            Ok(preds.iter().sum::<f64>() / preds.len() as f64)
        };
        Ok(mean(&c.a)? - mean(&c.b)?)
    }
}

/// The 3×3 covariance of `(a − b, a, b)` for a two-dimensional zero-mean
/// Gaussian with variances `σa², σb²`, correlation `ρ`, and i.i.d.
/// observation noise `σn²` on the two coordinates (never on the difference).
/// With `σn² = 0` the matrix is singular: the constraint row is a linear
/// functional of the others, realizing the rank-2 structure.
pub fn gaussian_example_matrix(
    sigma_a: f64,
    sigma_b: f64,
    rho: f64,
    sigma_n_sq: f64,
) -> Result<DMatrix<f64>> {
    if sigma_a < 0.0 || sigma_b < 0.0 || !sigma_a.is_finite() || !sigma_b.is_finite() {
        return Err(Error::InvalidArgument(
            "standard deviations must be finite and non-negative".into(),
        ));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "correlation must lie in [-1, 1], got {rho}"
        )));
    }
    if sigma_n_sq < 0.0 || !sigma_n_sq.is_finite() {
        return Err(Error::InvalidArgument(
            "sigma_n_sq must be finite and non-negative".into(),
        ));
    }
    let va = sigma_a * sigma_a;
    let vb = sigma_b * sigma_b;
    let cov = rho * sigma_a * sigma_b;
    Ok(DMatrix::from_row_slice(
        3,
        3,
        &[
            va + vb - 2.0 * cov,
            va - cov,
            vb - cov,
            va - cov,
            sigma_n_sq + va,
            cov,
            vb - cov,
            cov,
            sigma_n_sq + vb,
        ],
    ))
}
