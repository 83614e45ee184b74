//! Dense linear algebra for simultaneous mean-equality constraints.
//!
//! The central operation takes a vector of leaf values `y` and a constraint
//! matrix `Z` (one column per constraint, one row per leaf) and returns the
//! L2-closest vector satisfying `Zᵀŷ = 0`:
//!
//! ```text
//! ŷ = y − Z (ZᵀZ)⁺ Zᵀ y
//! ```
//!
//! Real constraint sets are frequently rank deficient (marginal constraints
//! are linear combinations of intersection constraints), so the pseudo-inverse
//! is realized through a rank-revealing SVD of `Z` with a relative
//! singular-value cutoff: the projector onto the column space of `Z` is
//! basis invariant, which makes dependent constraints harmless.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central record of numerical tolerances. Every solver accepts an override;
/// these are the defaults.
#[derive(Clone, Debug)]
pub struct Tolerances {
    /// Relative singular-value cutoff for rank decisions.
    pub sv_cutoff: f64,
    /// Relative tolerance when checking that a matrix is symmetric.
    pub symmetry_rtol: f64,
    /// Relative scale for post-projection constraint residual checks.
    pub residual_rtol: f64,
    /// Jitter factor (times `trace/n`) applied to kernel training blocks
    /// whose factorization fails.
    pub psd_jitter: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sv_cutoff: 1e-10,
            symmetry_rtol: 1e-8,
            residual_rtol: 1e-8,
            psd_jitter: 1e-8,
        }
    }
}

/// Outcome of a null-space projection.
#[derive(Clone, Debug)]
pub struct ProjectionResult {
    /// The projected vector `ŷ` (length L).
    pub perturbed_values: DVector<f64>,
    /// `|z_cᵀ ŷ|` per constraint, after projection.
    pub residual_norms: Vec<f64>,
    /// Number of singular values of `Z` above the relative cutoff.
    pub effective_rank: usize,
    /// `‖ŷ − y‖₂`.
    pub perturbation_norm: f64,
}

fn ensure_finite_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn ensure_finite_matrix(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Thin SVD of a tall matrix by one-sided Jacobi: Givens rotations mix column
/// pairs until all pairs are orthogonal, leaving `W = U·diag(σ)` (scaled left
/// singular vectors) in place. Chosen over bidiagonalization-based SVD because
/// it keeps full accuracy on exactly rank-deficient inputs, which dependent
/// constraint sets produce routinely; cost is O(L·C²) per sweep with the
/// column count C small in this domain.
struct ThinSvd {
    /// Orthogonal (not normalized) columns spanning the column space.
    w: DMatrix<f64>,
    /// Column norms of `w`, i.e. the singular values (unordered).
    sigmas: Vec<f64>,
}

fn jacobi_thin_svd(z: &DMatrix<f64>) -> Result<ThinSvd> {
    const MAX_SWEEPS: usize = 64;
    // rotate anything less orthogonal than this...
    const ROTATE_TOL: f64 = 1e-15;
    // ...accept the sweep-capped result down to this level...
    const ACCEPT_TOL: f64 = 1e-12;
    // ...and treat columns this far below the matrix scale as exact zeros.
    // Once a column is rotated down to rounding noise it stays parallel to
    // whatever produced it, so without this floor the sweep never settles.
    const ZERO_COL_TOL: f64 = 1e-14;

    let mut w = z.clone_owned();
    let cols = w.ncols();
    let scale = (0..cols)
        .map(|j| w.column(j).norm())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Ok(ThinSvd {
            w,
            sigmas: vec![0.0; cols],
        });
    }
    let zero_norm_sq = (ZERO_COL_TOL * scale) * (ZERO_COL_TOL * scale);

    let mut max_off = 0.0_f64;
    for _ in 0..MAX_SWEEPS {
        max_off = 0.0;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..w.nrows() {
                    let vp = w[(i, p)];
                    let vq = w[(i, q)];
                    app += vp * vp;
                    aqq += vq * vq;
                    apq += vp * vq;
                }
                if app <= zero_norm_sq || aqq <= zero_norm_sq {
                    continue;
                }
                let rel = apq.abs() / (app * aqq).sqrt();
                max_off = max_off.max(rel);
                if rel <= ROTATE_TOL {
                    continue;
                }
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..w.nrows() {
                    let vp = w[(i, p)];
                    let vq = w[(i, q)];
                    w[(i, p)] = cs * vp - sn * vq;
                    w[(i, q)] = sn * vp + cs * vq;
                }
            }
        }
        if max_off <= ROTATE_TOL {
            break;
        }
    }
    if max_off > ACCEPT_TOL {
        return Err(Error::Numerical(format!(
            "one-sided Jacobi SVD failed to converge (residual orthogonality {max_off:.3e})"
        )));
    }
    let sigmas = (0..cols)
        .map(|j| {
            let norm = w.column(j).norm();
            if norm * norm <= zero_norm_sq {
                w.column_mut(j).fill(0.0);
                0.0
            } else {
                norm
            }
        })
        .collect();
    Ok(ThinSvd { w, sigmas })
}

/// Minimum-norm least-squares solve of a symmetric system through its
/// eigendecomposition, dropping eigenvalues below `rel_cutoff` times the
/// largest magnitude.
fn symmetric_min_norm_solve(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rel_cutoff: f64,
) -> DVector<f64> {
    let eigen = m.clone_owned().symmetric_eigen();
    let lambda_max = eigen
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0_f64, f64::max);
    let mut x = DVector::zeros(m.nrows());
    if lambda_max == 0.0 {
        return x;
    }
    for k in 0..eigen.eigenvalues.len() {
        let lambda = eigen.eigenvalues[k];
        if lambda.abs() > rel_cutoff * lambda_max {
            let v = eigen.eigenvectors.column(k);
            x.axpy(v.dot(rhs) / lambda, &v, 1.0);
        }
    }
    x
}

fn check_projection_inputs(y: &DVector<f64>, z: &DMatrix<f64>, sv_cutoff: f64) -> Result<()> {
    if y.len() == 0 || z.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "projection requires L >= 1 and C >= 1, got L={} C={}",
            y.len(),
            z.ncols()
        )));
    }
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "constraint matrix has {} rows but value vector has length {}",
            z.nrows(),
            y.len()
        )));
    }
    if !(sv_cutoff > 0.0 && sv_cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sv_cutoff must lie in (0, 1), got {sv_cutoff}"
        )));
    }
    ensure_finite_vector(y, "value vector")?;
    ensure_finite_matrix(z, "constraint matrix")?;
    Ok(())
}

/// Projects `y` onto the null space of `Zᵀ`, i.e. returns the L2-closest
/// vector with `z_cᵀŷ = 0` for every constraint column `c` (restricted to the
/// rank-revealed column space of `Z`).
///
/// Singular values below `sv_cutoff` times the largest singular value are
/// treated as zero.
pub fn project_onto_nullspace(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    sv_cutoff: f64,
) -> Result<ProjectionResult> {
    check_projection_inputs(y, z, sv_cutoff)?;

    let svd = jacobi_thin_svd(z)?;
    let sigma_max = svd.sigmas.iter().copied().fold(0.0_f64, f64::max);

    let kept: Vec<usize> = if sigma_max > 0.0 {
        (0..svd.sigmas.len())
            .filter(|&i| svd.sigmas[i] > sv_cutoff * sigma_max)
            .collect()
    } else {
        Vec::new()
    };

    let mut yhat = y.clone();
    // Two passes of orthogonal deflation give machine-zero residuals.
    for _ in 0..2 {
        for &i in &kept {
            let col = svd.w.column(i);
            let coeff = col.dot(&yhat) / (svd.sigmas[i] * svd.sigmas[i]);
            yhat.axpy(-coeff, &col, 1.0);
        }
    }

    let residual_norms: Vec<f64> = (0..z.ncols())
        .map(|c| z.column(c).dot(&yhat).abs())
        .collect();
    let perturbation_norm = (&yhat - y).norm();

    Ok(ProjectionResult {
        perturbed_values: yhat,
        residual_norms,
        effective_rank: kept.len(),
        perturbation_norm,
    })
}

/// Weighted variant of [`project_onto_nullspace`]: minimizes
/// `Σ_j w_j (ŷ_j − y_j)²` subject to the same constraints. Weights must be
/// strictly positive; the closed form is
/// `ŷ = y − W⁻¹Z (ZᵀW⁻¹Z)⁺ Zᵀy`, computed through the unweighted projection
/// in the metric `u = W^{1/2}(ŷ − y)`.
pub fn weighted_nullspace_projection(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    weights: &[f64],
    sv_cutoff: f64,
) -> Result<ProjectionResult> {
    if weights.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has length {} but value vector has length {}",
            weights.len(),
            y.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::InvalidArgument(
            "projection weights must be finite and strictly positive".into(),
        ));
    }
    check_projection_inputs(y, z, sv_cutoff)?;

    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let y_scaled = DVector::from_fn(y.len(), |i, _| y[i] * sqrt_w[i]);
    let z_scaled = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] / sqrt_w[i]);

    let scaled = project_onto_nullspace(&y_scaled, &z_scaled, sv_cutoff)?;
    let yhat = DVector::from_fn(y.len(), |i, _| scaled.perturbed_values[i] / sqrt_w[i]);

    let residual_norms: Vec<f64> = (0..z.ncols())
        .map(|c| z.column(c).dot(&yhat).abs())
        .collect();
    let perturbation_norm = (&yhat - y).norm();

    Ok(ProjectionResult {
        perturbed_values: yhat,
        residual_norms,
        effective_rank: scaled.effective_rank,
        perturbation_norm,
    })
}

/// Projection followed by noise shrinkage: `(1 + σₙ²)⁻¹ ŷ`. With
/// `sigma_n_sq = 0` this is identical to [`project_onto_nullspace`].
pub fn noisy_update(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    sigma_n_sq: f64,
    sv_cutoff: f64,
) -> Result<DVector<f64>> {
    if !sigma_n_sq.is_finite() || sigma_n_sq < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma_n_sq must be a finite non-negative value, got {sigma_n_sq}"
        )));
    }
    let projected = project_onto_nullspace(y, z, sv_cutoff)?;
    Ok(projected.perturbed_values / (1.0 + sigma_n_sq))
}

/// Closed-form single-constraint update `ŷ = y − z (zᵀy)/(zᵀz)`.
///
/// Degenerate `z = 0` leaves `y` unchanged. Agrees with
/// [`project_onto_nullspace`] on a one-column matrix.
pub fn single_constraint_update(y: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() == 0 {
        return Err(Error::DimensionMismatch("L must be at least 1".into()));
    }
    if z.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "constraint vector has length {} but value vector has length {}",
            z.len(),
            y.len()
        )));
    }
    ensure_finite_vector(y, "value vector")?;
    ensure_finite_vector(z, "constraint vector")?;

    let denom = z.dot(z);
    if denom == 0.0 {
        return Ok(y.clone());
    }
    let scale = z.dot(y) / denom;
    Ok(y - z * scale)
}

/// Solves `K·x = rhs` for a symmetric `K`.
///
/// Positive-definite systems go through a Cholesky factorization with one step
/// of iterative refinement; anything else falls back to an SVD minimum-norm
/// least-squares solve. Asymmetry beyond tolerance is an error.
pub fn solve_augmented_system(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    solve_augmented_system_with(k, rhs, &Tolerances::default())
}

/// [`solve_augmented_system`] with explicit tolerances.
pub fn solve_augmented_system_with(
    k: &DMatrix<f64>,
    rhs: &DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "augmented system must be square, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.nrows() != rhs.len() {
        return Err(Error::DimensionMismatch(format!(
            "system is {}x{} but right-hand side has length {}",
            k.nrows(),
            k.ncols(),
            rhs.len()
        )));
    }
    ensure_finite_matrix(k, "augmented system")?;
    ensure_finite_vector(rhs, "right-hand side")?;

    let scale = k.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let mut max_asymmetry = 0.0_f64;
    for i in 0..k.nrows() {
        for j in (i + 1)..k.ncols() {
            max_asymmetry = max_asymmetry.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    if max_asymmetry > tol.symmetry_rtol * scale.max(1.0) {
        return Err(Error::NotSymmetric { max_asymmetry });
    }

    if let Some(chol) = k.clone().cholesky() {
        let mut x = chol.solve(rhs);
        let residual = rhs - k * &x;
        x += chol.solve(&residual);
        return Ok(x);
    }

    // Indefinite or singular: minimum-norm least squares via the symmetric
    // eigendecomposition, plus one refinement step.
    let mut x = symmetric_min_norm_solve(k, rhs, tol.sv_cutoff);
    let residual = rhs - k * &x;
    x += symmetric_min_norm_solve(k, &residual, tol.sv_cutoff);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }

    #[test]
    fn hand_projection_two_leaves() {
        let y = vec2(&[0.0, 10.0]);
        let z = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let result = project_onto_nullspace(&y, &z, 1e-10).unwrap();
        assert!((result.perturbed_values[0] - 5.0).abs() < 1e-12);
        assert!((result.perturbed_values[1] - 5.0).abs() < 1e-12);
        assert!((result.perturbation_norm - 50.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(result.effective_rank, 1);
        assert!(result.residual_norms[0] < 1e-12);
    }

    #[test]
    fn zero_constraint_matrix_is_identity() {
        let y = vec2(&[3.0, -1.5, 7.25]);
        let z = DMatrix::zeros(3, 2);
        let result = project_onto_nullspace(&y, &z, 1e-10).unwrap();
        assert_eq!(result.effective_rank, 0);
        assert_eq!(result.perturbed_values, y);
        assert_eq!(result.perturbation_norm, 0.0);
    }

    #[test]
    fn duplicated_constraint_column_is_rank_one() {
        let y = vec2(&[0.0, 10.0]);
        let z = DMatrix::from_column_slice(2, 2, &[1.0, -1.0, 2.0, -2.0]);
        let result = project_onto_nullspace(&y, &z, 1e-10).unwrap();
        assert_eq!(result.effective_rank, 1);
        assert!((result.perturbed_values[0] - 5.0).abs() < 1e-12);
        assert!((result.perturbed_values[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_bad_inputs() {
        let y = vec2(&[1.0, 2.0]);
        let z3 = DMatrix::zeros(3, 1);
        assert!(matches!(
            project_onto_nullspace(&y, &z3, 1e-10),
            Err(Error::DimensionMismatch(_))
        ));

        let z = DMatrix::zeros(2, 1);
        assert!(matches!(
            project_onto_nullspace(&y, &z, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            project_onto_nullspace(&y, &z, 1.0),
            Err(Error::InvalidArgument(_))
        ));

        let bad = vec2(&[f64::NAN, 0.0]);
        assert!(matches!(
            project_onto_nullspace(&bad, &z, 1e-10),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn noisy_update_matches_scaled_projection() {
        let y = vec2(&[0.0, 10.0]);
        let z = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);

        let clean = noisy_update(&y, &z, 0.0, 1e-10).unwrap();
        assert!((clean[0] - 5.0).abs() < 1e-12);
        assert!((clean[1] - 5.0).abs() < 1e-12);

        let noisy = noisy_update(&y, &z, 1.0, 1e-10).unwrap();
        assert!((noisy[0] - 2.5).abs() < 1e-12);
        assert!((noisy[1] - 2.5).abs() < 1e-12);

        // No constraint, pure shrinkage 3 / 1.5.
        let single = noisy_update(&vec2(&[3.0]), &DMatrix::zeros(1, 1), 0.5, 1e-10).unwrap();
        assert!((single[0] - 2.0).abs() < 1e-12);

        assert!(matches!(
            noisy_update(&y, &z, -0.25, 1e-10),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_constraint_examples() {
        let updated = single_constraint_update(&vec2(&[0.0, 10.0]), &vec2(&[1.0, -1.0])).unwrap();
        assert!((updated[0] - 5.0).abs() < 1e-12);
        assert!((updated[1] - 5.0).abs() < 1e-12);

        let satisfied = single_constraint_update(&vec2(&[4.0, 4.0]), &vec2(&[1.0, -1.0])).unwrap();
        assert_eq!(satisfied, vec2(&[4.0, 4.0]));

        let degenerate =
            single_constraint_update(&vec2(&[1.0, 2.0, 3.0]), &vec2(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(degenerate, vec2(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn single_constraint_agrees_with_projection() {
        let y = vec2(&[1.0, -2.0, 0.5, 4.0]);
        let z = vec2(&[0.3, -0.1, 0.0, -0.2]);
        let direct = single_constraint_update(&y, &z).unwrap();
        let zmat = DMatrix::from_column_slice(4, 1, z.as_slice());
        let projected = project_onto_nullspace(&y, &zmat, 1e-10).unwrap();
        for i in 0..4 {
            assert!((direct[i] - projected.perturbed_values[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn weighted_projection_prefers_heavy_leaves() {
        // Equalizing two leaves with weights (9, 1): the light leaf moves 9x more.
        let y = vec2(&[0.0, 10.0]);
        let z = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let result = weighted_nullspace_projection(&y, &z, &[9.0, 1.0], 1e-10).unwrap();
        // Minimize 9a² + b² with (0 + a) − (10 + b) = 0 → a = 1, b = −9.
        assert!((result.perturbed_values[0] - 1.0).abs() < 1e-10);
        assert!((result.perturbed_values[1] - 1.0).abs() < 1e-10);
        assert!(result.residual_norms[0] < 1e-10);

        // Unit weights must reproduce the unweighted projection.
        let unit = weighted_nullspace_projection(&y, &z, &[1.0, 1.0], 1e-10).unwrap();
        assert!((unit.perturbed_values[0] - 5.0).abs() < 1e-12);

        assert!(matches!(
            weighted_nullspace_projection(&y, &z, &[1.0, 0.0], 1e-10),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn augmented_solve_examples() {
        let identity = DMatrix::<f64>::identity(2, 2);
        let x = solve_augmented_system(&identity, &vec2(&[1.0, 2.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);

        let diag = DMatrix::from_column_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = solve_augmented_system(&diag, &vec2(&[2.0, 4.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);

        // Singular system: minimum-norm solution.
        let singular = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = solve_augmented_system(&singular, &vec2(&[2.0, 2.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10);
        assert!((x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn augmented_solve_rejects_asymmetry() {
        let asym = DMatrix::from_column_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            solve_augmented_system(&asym, &vec2(&[1.0, 1.0])),
            Err(Error::NotSymmetric { .. })
        ));
    }
}
