//! Dense linear-algebra primitives shared by every other module.
//!
//! Everything here is a pure function of its inputs. Tolerances are explicit:
//! rank decisions take a *relative* tolerance that is multiplied by the largest
//! singular value (or largest absolute eigenvalue for symmetric inputs).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Residual allowed in the Penrose conditions (relative).
pub const TOL_PINV: f64 = 1e-10;
/// Residual allowed for idempotence and symmetry of projectors.
pub const TOL_PROJ: f64 = 1e-10;
/// Asymmetry above which an assembled "symmetric" operator is reported as inconsistent.
pub const SYMMETRY_DIAGNOSTIC_TOL: f64 = 1e-8;

/// Default relative rank tolerance `max(rows, cols) * eps`; singular values below
/// `default_rank_tol(..) * sigma_max` are treated as zero.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

fn ensure_finite(a: &Mat, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Largest absolute entry of `a - a^T`, relative to the largest absolute entry of `a`.
pub fn symmetry_residual(a: &Mat) -> f64 {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale.max(1.0)
}

/// Real square matrix with exactly symmetric storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(Mat);

impl SymmetricMatrix {
    /// Builds `(A + A^T) / 2`, which is exactly symmetric in floating point.
    pub fn symmetrize(a: Mat) -> Self {
        assert!(a.is_square(), "symmetrize requires a square matrix");
        let t = a.transpose();
        let mut s = (a + t) * 0.5;
        // Copy the lower triangle up so that s[(i,j)] and s[(j,i)] are the same bits.
        for i in 0..s.nrows() {
            for j in (i + 1)..s.ncols() {
                s[(i, j)] = s[(j, i)];
            }
        }
        SymmetricMatrix(s)
    }

    /// Accepts `a` if its relative asymmetry is at most `tol`, then symmetrizes it.
    pub fn try_from_matrix(a: Mat, tol: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        ensure_finite(&a, "symmetric matrix")?;
        let r = symmetry_residual(&a);
        if r > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric (relative residual {r:.3e})"
            )));
        }
        Ok(Self::symmetrize(a))
    }

    pub fn identity(dim: usize) -> Self {
        SymmetricMatrix(Mat::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        SymmetricMatrix(Mat::identity(dim, dim) * c)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn eigen(&self) -> SpectralDecomposition {
        SpectralDecomposition::of_symmetric(&self.0)
    }

    /// Eigenvalues in descending order (no eigenvectors).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// True when the smallest eigenvalue is at least `-tol * max(1, ||A||)`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        ev.last().is_none_or(|&min| min >= -tol * scale)
    }

    /// Principal square root of a PSD matrix (negative rounding noise is clipped).
    pub fn sqrt_psd(&self) -> Mat {
        self.eigen().map(|l| l.max(0.0).sqrt())
    }
}

/// Eigendecomposition `A = V diag(lambda) V^T` of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vector,
    pub eigenvectors: Mat,
}

impl SpectralDecomposition {
    pub fn of_symmetric(a: &Mat) -> Self {
        let SymmetricEigen {
            eigenvalues,
            eigenvectors,
        } = a.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));
        let vals = Vector::from_iterator(order.len(), order.iter().map(|&i| eigenvalues[i]));
        let vecs = Mat::from_fn(eigenvectors.nrows(), order.len(), |r, c| {
            eigenvectors[(r, order[c])]
        });
        SpectralDecomposition {
            eigenvalues: vals,
            eigenvectors: vecs,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Absolute cutoff below which an eigenvalue counts as zero.
    pub fn cutoff(&self, rel_tol: f64) -> f64 {
        rel_tol * self.max_abs_eigenvalue()
    }

    /// Mask of eigenvalues treated as nonzero.
    pub fn nonzero_mask(&self, rel_tol: f64) -> Vec<bool> {
        let cut = self.cutoff(rel_tol);
        self.eigenvalues.iter().map(|&l| l.abs() > cut).collect()
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        self.nonzero_mask(rel_tol).iter().filter(|&&b| b).count()
    }

    /// `V diag(f(lambda)) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let scaled = Mat::from_fn(self.dim(), self.dim(), |r, c| {
            self.eigenvectors[(r, c)] * f(self.eigenvalues[c])
        });
        &scaled * self.eigenvectors.transpose()
    }

    pub fn reconstruct(&self) -> Mat {
        self.map(|l| l)
    }

    pub fn pseudoinverse(&self, rel_tol: f64) -> Mat {
        let cut = self.cutoff(rel_tol);
        self.map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 })
    }

    /// Orthogonal projector onto the span of eigenvectors with nonzero eigenvalue.
    pub fn range_projector(&self, rel_tol: f64) -> Projector {
        let cut = self.cutoff(rel_tol);
        Projector {
            entries: self.map(|l| if l.abs() > cut { 1.0 } else { 0.0 }),
            kind: ProjectorKind::Range,
        }
    }

    pub fn reconstruction_error(&self, a: &Mat) -> f64 {
        (a - self.reconstruct()).norm() / a.norm().max(f64::MIN_POSITIVE)
    }

    pub fn orthogonality_error(&self) -> f64 {
        let g = self.eigenvectors.transpose() * &self.eigenvectors;
        (g - Mat::identity(self.dim(), self.dim())).amax()
    }
}

/// Thin singular value decomposition `A = U diag(s) V^T`, singular values descending.
#[derive(Debug, Clone)]
pub struct SingularDecomposition {
    pub u: Mat,
    pub singular_values: Vector,
    pub v: Mat,
}

impl SingularDecomposition {
    /// Thin SVD with singular values in descending order.
    ///
    /// nalgebra's bidiagonal SVD occasionally returns orthonormal factors that do not
    /// reproduce `a` (seen on rank-deficient inputs with exact zero rows). The result is
    /// checked and, on failure, recomputed from the symmetric eigendecomposition of
    /// `[[0, A], [A^T, 0]]`, whose eigenpairs are `(+-s_i, [u_i; +-v_i] / sqrt 2)`.
    pub fn of(a: &Mat) -> Result<Self> {
        ensure_finite(a, "matrix")?;
        if a.nrows() == 0 || a.ncols() == 0 {
            return Ok(SingularDecomposition {
                u: Mat::zeros(a.nrows(), 0),
                singular_values: Vector::zeros(0),
                v: Mat::zeros(a.ncols(), 0),
            });
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested V^T");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        let singular_values = Vector::from_iterator(order.len(), order.iter().map(|&i| s[i]));
        let u = Mat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let v = Mat::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
        let out = SingularDecomposition {
            u,
            singular_values,
            v,
        };
        if out.reproduces(a) {
            return Ok(out);
        }
        let fallback = Self::jordan_wielandt(a);
        if fallback.reproduces(a) {
            Ok(fallback)
        } else {
            Err(Error::NumericalInconsistency(format!(
                "SVD of a {}x{} matrix does not reproduce it",
                a.nrows(),
                a.ncols()
            )))
        }
    }

    fn reproduces(&self, a: &Mat) -> bool {
        let scale = self.sigma_max().max(a.amax()).max(f64::MIN_POSITIVE);
        let tol = 64.0 * (a.nrows() + a.ncols()) as f64 * f64::EPSILON * scale;
        let rebuilt = &self.u * Mat::from_diagonal(&self.singular_values) * self.v.transpose();
        (rebuilt - a).amax() <= tol
    }

    fn jordan_wielandt(a: &Mat) -> Self {
        let (m, n) = a.shape();
        let k = m.min(n);
        let mut h = Mat::zeros(m + n, m + n);
        h.view_mut((0, m), (m, n)).copy_from(a);
        h.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
        let eig = SpectralDecomposition::of_symmetric(&h);
        let root2 = std::f64::consts::SQRT_2;
        let mut u = Mat::zeros(m, k);
        let mut v = Mat::zeros(n, k);
        for i in 0..k {
            let w = eig.eigenvectors.column(i);
            u.set_column(i, &(w.rows(0, m) * root2));
            v.set_column(i, &(w.rows(m, n) * root2));
        }
        let singular_values = Vector::from_fn(k, |i, _| eig.eigenvalues[i].max(0.0));
        SingularDecomposition {
            u,
            singular_values,
            v,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }

    /// Orthonormal basis of the row space, `rank(rel_tol)` columns.
    pub fn row_basis(&self, rel_tol: f64) -> Mat {
        let r = self.rank(rel_tol);
        self.v.columns(0, r).into_owned()
    }

    /// Orthonormal basis of the column space.
    pub fn column_basis(&self, rel_tol: f64) -> Mat {
        let r = self.rank(rel_tol);
        self.u.columns(0, r).into_owned()
    }
}

/// Moore-Penrose pseudoinverse. Singular values below `rank_tol * sigma_max` are
/// truncated; `None` selects [`default_rank_tol`].
pub fn pseudoinverse(a: &Mat, rank_tol: Option<f64>) -> Result<Mat> {
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(a.nrows(), a.ncols()));
    let svd = SingularDecomposition::of(a)?;
    let cut = tol * svd.sigma_max();
    let mut out = Mat::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            out += (svd.v.column(i) / s) * svd.u.column(i).transpose();
        }
    }
    Ok(out)
}

/// Largest residual among the four Penrose conditions, each relative to `||A||` or `||A^+||`.
pub fn penrose_residual(a: &Mat, pinv: &Mat) -> f64 {
    let an = a.norm().max(f64::MIN_POSITIVE);
    let pn = pinv.norm().max(f64::MIN_POSITIVE);
    let apa = a * pinv * a;
    let pap = pinv * a * pinv;
    let ap = a * pinv;
    let pa = pinv * a;
    [
        (apa - a).norm() / an,
        (pap - pinv).norm() / pn,
        (&ap - ap.transpose()).norm() / ap.norm().max(1.0),
        (&pa - pa.transpose()).norm() / pa.norm().max(1.0),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    Range,
    Nullspace,
}

/// Orthogonal projector stored as a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    entries: Mat,
    kind: ProjectorKind,
}

impl Projector {
    /// Projector `Q Q^T` for a matrix `Q` with orthonormal columns.
    pub fn from_orthonormal_basis(q: &Mat, kind: ProjectorKind) -> Self {
        let p = q * q.transpose();
        Projector {
            entries: SymmetricMatrix::symmetrize(p).into_inner(),
            kind,
        }
    }

    pub fn kind(&self) -> ProjectorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.entries
    }

    /// `I - P`, with the kind flipped.
    pub fn complement(&self) -> Projector {
        let kind = match self.kind {
            ProjectorKind::Range => ProjectorKind::Nullspace,
            ProjectorKind::Nullspace => ProjectorKind::Range,
        };
        Projector {
            entries: Mat::identity(self.dim(), self.dim()) - &self.entries,
            kind,
        }
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.entries * v
    }

    /// Rank, read off the trace.
    pub fn rank(&self) -> usize {
        self.entries.trace().round().max(0.0) as usize
    }

    pub fn idempotence_residual(&self) -> f64 {
        (&self.entries * &self.entries - &self.entries).amax()
    }

    pub fn symmetry_residual(&self) -> f64 {
        (&self.entries - self.entries.transpose()).amax()
    }
}

/// Projector onto `range(A^T)` (the row space of `A`), i.e. `A^+ A`.
pub fn range_projector(a: &Mat, rank_tol: Option<f64>) -> Result<Projector> {
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(a.nrows(), a.ncols()));
    let svd = SingularDecomposition::of(a)?;
    Ok(Projector::from_orthonormal_basis(
        &svd.row_basis(tol),
        ProjectorKind::Range,
    ))
}

/// Projector onto `null(A)`, i.e. `I - A^+ A`.
pub fn nullspace_projector(a: &Mat, rank_tol: Option<f64>) -> Result<Projector> {
    Ok(range_projector(a, rank_tol)?.complement())
}

/// `sum_{j=0}^{k-1} A^j` for symmetric `A`, evaluated as `(I - A^k)(I - A)^+ + k P_0`
/// with `P_0` the projector onto `null(I - A)`, all in the eigenbasis of `A`.
pub fn truncated_geometric(a: &SymmetricMatrix, k: usize) -> Mat {
    let eig = a.eigen();
    let scale = eig.max_abs_eigenvalue().max(1.0);
    let cut = default_rank_tol(a.dim(), a.dim()) * scale;
    eig.map(|mu| geometric_sum(mu, k, cut))
}

/// Scalar `sum_{j<k} mu^j`, with `k` returned when `|1 - mu| <= cut`.
pub(crate) fn geometric_sum(mu: f64, k: usize, cut: f64) -> f64 {
    let d = 1.0 - mu;
    if d.abs() <= cut {
        return k as f64;
    }
    if mu > 0.0 {
        // 1 - mu^k without cancellation when mu is close to 1.
        let one_minus_pow = -((k as f64) * (mu - 1.0).ln_1p()).exp_m1();
        one_minus_pow / d
    } else {
        (1.0 - mu.powi(k as i32)) / d
    }
}

/// `c_0 I + c_1 A + c_2 A^2 + ...` by Horner's rule.
pub fn matrix_polynomial(coefficients: &[f64], a: &Mat) -> Mat {
    let n = a.nrows();
    let mut acc = Mat::zeros(n, n);
    for &c in coefficients.iter().rev() {
        acc = &acc * a;
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    acc
}

/// Spectral norm (largest singular value), from the eigenvalues of the smaller Gram
/// matrix when `a` is not symmetric.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    if a.is_square() && symmetry_residual(a) == 0.0 {
        return a
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    let gram = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    SymmetricMatrix::symmetrize(gram)
        .0
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, v| m.max(*v))
        .sqrt()
}

/// Sum of matrices by a fixed pairwise tree, so the rounding pattern depends only on
/// the input order (not on how the terms were produced in parallel).
pub fn tree_sum(mut terms: Vec<Mat>) -> Option<Mat> {
    if terms.is_empty() {
        return None;
    }
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        let mut it = terms.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        terms = next;
    }
    terms.pop()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pinv_identity_and_zero() {
        let i3 = Mat::identity(3, 3);
        assert!((pseudoinverse(&i3, None).unwrap() - &i3).amax() < 1e-15);
        let z = Mat::zeros(3, 2);
        let pz = pseudoinverse(&z, None).unwrap();
        assert_eq!(pz.shape(), (2, 3));
        assert_eq!(pz.amax(), 0.0);
    }

    #[test]
    fn pinv_full_rank_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mat(&mut rng, 5, 3);
        let p = pseudoinverse(&a, None).unwrap();
        assert!((&a * &p * &a - &a).amax() <= 1e-10);
        assert!(penrose_residual(&a, &p) <= TOL_PINV);
    }

    #[test]
    fn pinv_rejects_nan() {
        let mut a = Mat::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(pseudoinverse(&a, None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_mat(&mut rng, 6, 2);
        let a = &b * random_mat(&mut rng, 2, 4);
        let p = pseudoinverse(&a, None).unwrap();
        assert!(penrose_residual(&a, &p) <= TOL_PINV);
        assert_eq!(SingularDecomposition::of(&a).unwrap().rank(1e-10), 2);
    }

    #[test]
    fn svd_falls_back_when_the_factorization_is_wrong() {
        // A 7x4 rank-2 input on which the bidiagonal SVD misses by ~5e-3.
        let u = [
            [0.0, -0.38652293325035875],
            [-0.7274410380643892, -0.589055298376195],
            [0.4457381767956727, 0.9943262307619587],
            [-0.7417388672251958, 0.10012096369257889],
            [0.0, 0.6712352855212705],
            [0.17765681915603557, 0.9671425552023531],
            [0.03540082226780793, 0.4889957689691248],
        ];
        let v = [
            [0.7662291322687027, -0.5276821363539385],
            [0.7567385437587469, 0.2694614663591576],
            [-0.3011657171519499, 0.3043286188561549],
            [-0.0011961449422255134, 0.0],
        ];
        let uu = Mat::from_fn(7, 2, |i, j| u[i][j]);
        let vv = Mat::from_fn(4, 2, |i, j| v[i][j]);
        let a = uu * vv.transpose();
        let svd = SingularDecomposition::of(&a).unwrap();
        assert!(svd.reproduces(&a));
        assert_eq!(svd.rank(1e-10), 2);
        assert!((svd.u.columns(0, 2).tr_mul(&svd.u.columns(0, 2)) - Mat::identity(2, 2)).amax() < 1e-13);
        assert!(penrose_residual(&a, &pseudoinverse(&a, None).unwrap()) <= TOL_PINV);
        let direct = SymmetricMatrix::symmetrize(a.transpose() * &a).eigenvalues()[0].sqrt();
        assert!((spectral_norm(&a) - direct).abs() < 1e-14);
    }

    #[test]
    fn geometric_trivial_cases() {
        let z = SymmetricMatrix::symmetrize(Mat::zeros(3, 3));
        assert!((truncated_geometric(&z, 4) - Mat::identity(3, 3)).amax() < 1e-14);
        let i = SymmetricMatrix::identity(3);
        assert!((truncated_geometric(&i, 3) - Mat::identity(3, 3) * 3.0).amax() < 1e-14);
        assert_eq!(truncated_geometric(&i, 0).amax(), 0.0);
    }

    #[test]
    fn geometric_matches_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_mat(&mut rng, 4, 4).qr().q();
        let spectrum = Vector::from_fn(4, |_, _| rng.random_range(-0.9..0.9));
        let a = SymmetricMatrix::symmetrize(&q * Mat::from_diagonal(&spectrum) * q.transpose());
        let mut direct = Mat::zeros(4, 4);
        let mut pow = Mat::identity(4, 4);
        for _ in 0..7 {
            direct += &pow;
            pow = &pow * a.as_mat();
        }
        assert!((truncated_geometric(&a, 7) - direct).amax() <= 1e-12);
    }

    #[test]
    fn projector_trivial_cases() {
        let i = Mat::identity(3, 3);
        let pr = range_projector(&i, None).unwrap();
        let pn = nullspace_projector(&i, None).unwrap();
        assert!((pr.as_mat() - &i).amax() < 1e-14);
        assert!(pn.as_mat().amax() < 1e-14);
        assert_eq!(pn.kind(), ProjectorKind::Nullspace);

        let mut a = Mat::identity(3, 3);
        a[(1, 1)] = 0.0;
        let pn = nullspace_projector(&a, None).unwrap();
        assert_eq!(pn.rank(), 1);
        assert!((pn.as_mat()[(1, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projector_wide_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mat(&mut rng, 6, 9);
        let pr = range_projector(&a, None).unwrap();
        let pn = nullspace_projector(&a, None).unwrap();
        assert_eq!(pr.rank() + pn.rank(), 9);
        assert_eq!(pr.rank(), 6);
        assert!(pr.idempotence_residual() <= 1e-10);
        assert!(pn.idempotence_residual() <= 1e-10);
        assert!((pr.as_mat() + pn.as_mat() - Mat::identity(9, 9)).amax() <= 1e-12);
        // rows of A lie in range(A^T)
        let x = a.row(2).transpose();
        assert!((pr.apply(&x) - &x).amax() <= 1e-12);
    }

    #[test]
    fn symmetric_storage_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = SymmetricMatrix::symmetrize(random_mat(&mut rng, 5, 5));
        assert_eq!(symmetry_residual(s.as_mat()), 0.0);
        assert!(SymmetricMatrix::try_from_matrix(random_mat(&mut rng, 4, 4), 1e-8).is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_mat(&mut rng, 6, 6);
        let s = SymmetricMatrix::symmetrize(a.transpose() * a);
        let e = s.eigen();
        assert!(e.reconstruction_error(s.as_mat()) <= 1e-12);
        assert!(e.orthogonality_error() <= 1e-12);
        assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!(s.is_psd(1e-12));
    }

    #[test]
    fn polynomial_horner() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let got = matrix_polynomial(&[1.0, -2.0, 0.5], &a);
        let want = Mat::identity(2, 2) - &a * 2.0 + &a * &a * 0.5;
        assert!((got - want).amax() < 1e-14);
    }

    #[test]
    fn tree_sum_matches_sequential() {
        let mats: Vec<Mat> = (0..7).map(|i| Mat::identity(2, 2) * i as f64).collect();
        assert_eq!(tree_sum(mats).unwrap()[(0, 0)], 21.0);
        assert!(tree_sum(Vec::new()).is_none());
    }
}
