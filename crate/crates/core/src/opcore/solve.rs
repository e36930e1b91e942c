//! Direct and iterative linear solvers and spectral estimates.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::linmap::LinearMap;
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyHandle {
    l: DMatrix<f64>,
}

impl CholeskyHandle {
    /// Factors `a = L L^T`, failing with the pivot index when a pivot drops
    /// below `1e-12` times the largest diagonal entry.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        assert!(a.is_square());
        let n = a.nrows();
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)].abs())).max(1.0);
        let tol = 1e-12 * max_diag;
        let mut l = a.lower_triangle();
        for k in 0..n {
            let mut d = l[(k, k)];
            for j in 0..k {
                d -= l[(k, j)] * l[(k, j)];
            }
            if d <= tol {
                return Err(Error::RankDeficient { pivot: k });
            }
            let d = d.sqrt();
            l[(k, k)] = d;
            for i in k + 1..n {
                let mut v = l[(i, k)];
                for j in 0..k {
                    v -= l[(i, j)] * l[(k, j)];
                }
                l[(i, k)] = v / d;
            }
        }
        // zero the strict upper part left over from lower_triangle (already zero)
        Ok(Self { l })
    }

    pub fn order(&self) -> usize {
        self.l.nrows()
    }

    /// The lower-triangular factor.
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.order();
        let mut x = rhs.clone();
        for i in 0..n {
            let mut v = x[i];
            for j in 0..i {
                v -= self.l[(i, j)] * x[j];
            }
            x[i] = v / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for j in i + 1..n {
                v -= self.l[(j, i)] * x[j];
            }
            x[i] = v / self.l[(i, i)];
        }
        x
    }
}

/// Convenience wrapper matching the kernel contract: `x` with
/// `||A x - rhs|| <= 1e-12 (1 + ||rhs||)` for well-conditioned factors.
pub fn solve_spd(factorization: &CholeskyHandle, rhs: &DVector<f64>) -> DVector<f64> {
    factorization.solve(rhs)
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: DVector<f64>,
    pub relres: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Preconditioned conjugate gradients on a self-adjoint PSD operator.
///
/// Stops when the true residual satisfies `||A x - rhs|| <= tol (1 + ||rhs||)`.
/// Detected negative curvature aborts with an indefinite-operator error.
pub fn pcg(
    a: &LinearMap,
    rhs: &DVector<f64>,
    precond: Option<&LinearMap>,
    tol: f64,
    maxit: usize,
) -> Result<PcgResult> {
    assert!(tol > 0.0, "pcg tolerance must be positive");
    let n = rhs.len();
    let scale = 1.0 + rhs.norm();
    let mut x = DVector::zeros(n);
    let mut r = rhs.clone();
    let mut best_x = x.clone();
    let mut best_res = r.norm();
    if best_res <= tol * scale {
        return Ok(PcgResult {
            x,
            relres: best_res / scale,
            iters: 0,
            converged: true,
        });
    }
    let apply_prec = |v: &DVector<f64>| -> DVector<f64> {
        match precond {
            Some(m) => m.apply(v),
            None => v.clone(),
        }
    };
    let mut z = apply_prec(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut iters = 0;
    for _ in 0..maxit {
        iters += 1;
        let ap = a.apply(&p);
        let pap = p.dot(&ap);
        if pap < -1e-14 * p.norm_squared() {
            return Err(Error::IndefiniteOperator);
        }
        if pap.abs() <= f64::MIN_POSITIVE {
            break;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let res = r.norm();
        if res < best_res {
            best_res = res;
            best_x.copy_from(&x);
        }
        if res <= tol * scale {
            break;
        }
        z = apply_prec(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + beta * &p;
    }
    // report the true residual of the best iterate
    let true_res = (a.apply(&best_x) - rhs).norm();
    let relres = true_res / scale;
    Ok(PcgResult {
        x: best_x,
        relres,
        iters,
        converged: relres <= tol,
    })
}

/// Power-iteration estimate of the spectral norm.
///
/// Deterministic: starts from the all-ones vector, falling back to a seeded
/// random vector when that lies in the kernel. Capped at 1000 iterations.
pub fn operator_norm(a: &LinearMap, tol: f64) -> f64 {
    assert!(tol > 0.0);
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // work on A*A for general maps, on A itself when self-adjoint (then the
    // dominant |eigenvalue| is the norm)
    let sym = a.is_self_adjoint();
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        if sym {
            a.apply(v)
        } else {
            a.apply_adjoint(&a.apply(v))
        }
    };
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0_f64;
    for attempt in 0..2 {
        if attempt == 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            v = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let nv = v.norm();
            if nv == 0.0 {
                return 0.0;
            }
            v /= nv;
        }
        est = 0.0;
        for _ in 0..1000 {
            let w = apply(&v);
            let nw = w.norm();
            if nw <= f64::MIN_POSITIVE {
                est = 0.0;
                break;
            }
            let new_est = if sym { nw } else { nw.sqrt() };
            let done = (new_est - est).abs() <= tol * new_est.max(f64::MIN_POSITIVE);
            est = new_est;
            v = w / nw;
            if done {
                return est;
            }
        }
        if est > 0.0 {
            return est;
        }
    }
    est
}

/// Smallest Ritz value of a self-adjoint operator after `steps` Lanczos steps
/// with full reorthogonalization. Used as a cheap positive-definiteness probe.
pub fn lanczos_min_ritz(a: &LinearMap, steps: usize, seed: u64) -> Result<f64> {
    assert!(a.is_self_adjoint());
    let n = a.ncols();
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let steps = steps.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = vec![DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)];
    let nq = q[0].norm();
    q[0] /= nq;
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for k in 0..steps {
        let mut w = a.apply(&q[k]);
        let alpha = q[k].dot(&w);
        alphas.push(alpha);
        w.axpy(-alpha, &q[k], 1.0);
        if k > 0 {
            let beta_prev: f64 = betas[k - 1];
            w.axpy(-beta_prev, &q[k - 1], 1.0);
        }
        // full reorthogonalization, twice
        for _ in 0..2 {
            for qi in &q {
                let c = qi.dot(&w);
                w.axpy(-c, qi, 1.0);
            }
        }
        let beta = w.norm();
        if beta <= 1e-14 || k + 1 == steps {
            break;
        }
        betas.push(beta);
        q.push(w / beta);
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let (vals, _) = super::symm::sym_eig(&t)?;
    Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Projection of `z` onto the range of `g`, computed from the normal
/// equations `G* G w = G* z` by conjugate gradients; returns `G w`.
pub fn project_range(g: &LinearMap, z: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    assert_eq!(z.len(), g.nrows());
    if z.norm() == 0.0 {
        return Ok(DVector::zeros(z.len()));
    }
    let normal = g.gram_adjoint();
    let rhs = g.apply_adjoint(z);
    let maxit = 20 * (g.ncols() + 10);
    let out = pcg(&normal, &rhs, None, tol.max(1e-15), maxit)?;
    if !out.converged && out.relres > (tol * 1e3).max(1e-9) {
        return Err(Error::NumericalFailure {
            what: format!("range projection cg stalled at relres {:.2e}", out.relres),
            iterations: Some(out.iters),
        });
    }
    Ok(g.apply(&out.x))
}

/// Applies the Moore-Penrose pseudoinverse of a self-adjoint PSD operator
/// `m` to `r` by conjugate gradients restricted to range(M).
///
/// For consistent right-hand sides (`r` in range(M), the case of every
/// internal use) plain CG from zero converges to the minimum-norm solution
/// at single-system accuracy. Otherwise `r` is first projected onto the
/// range through the normal equations `M^2 s = M r`.
pub fn pinv_apply(m: &LinearMap, r: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    assert!(m.is_self_adjoint());
    let rhs = m.apply(r);
    if rhs.norm() == 0.0 {
        return Ok(DVector::zeros(r.len()));
    }
    let maxit = 60 * (m.ncols() + 10);
    if let Ok(direct) = pcg(m, r, None, tol.max(1e-15), maxit) {
        if direct.converged {
            return Ok(direct.x);
        }
    }
    let m2 = {
        let sq = m.clone().compose(m.clone());
        sq.assume_self_adjoint()
    };
    let out = pcg(&m2, &rhs, None, tol.max(1e-15), maxit)?;
    if !out.converged && out.relres > (tol * 1e3).max(1e-9) {
        return Err(Error::NumericalFailure {
            what: format!("pseudoinverse cg stalled at relres {:.2e}", out.relres),
            iterations: Some(out.iters),
        });
    }
    Ok(out.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_identity_and_diagonal() {
        let chol = CholeskyHandle::factor(&DMatrix::identity(3, 3)).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(chol.solve(&b), b);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let chol = CholeskyHandle::factor(&d).unwrap();
        let x = chol.solve(&DVector::from_vec(vec![2.0, 8.0]));
        assert!((x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn cholesky_dense_two_by_two_oracle() {
        // A = [[4,1],[1,3]], inverse = 1/11 [[3,-1],[-1,4]]; rhs (1,2) ->
        // (1/11, 7/11)
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let chol = CholeskyHandle::factor(&a).unwrap();
        let x = chol.solve(&DVector::from_vec(vec![1.0, 2.0]));
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match CholeskyHandle::factor(&a) {
            Err(Error::RankDeficient { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn pcg_identity_converges_immediately() {
        let a = LinearMap::identity(4);
        let b = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.5]);
        let out = pcg(&a, &b, None, 1e-12, 10).unwrap();
        assert!(out.converged);
        assert!(out.iters <= 1);
        assert!((out.x - b).norm() < 1e-12);
    }

    #[test]
    fn pcg_perfect_preconditioner_two_steps() {
        let a = LinearMap::diagonal(DVector::from_vec(vec![1.0, 10.0]));
        let pre = LinearMap::diagonal(DVector::from_vec(vec![1.0, 0.1]));
        let b = DVector::from_vec(vec![1.0, 10.0]);
        let out = pcg(&a, &b, Some(&pre), 1e-12, 10).unwrap();
        assert!(out.converged && out.iters <= 2);
        assert!((out.x - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-10);
    }

    #[test]
    fn pcg_matches_direct_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let direct = CholeskyHandle::factor(&a).unwrap().solve(&b);
        let out = pcg(&LinearMap::dense_symmetric(&a), &b, None, 1e-14, 50).unwrap();
        assert!(out.converged);
        assert!((out.x - direct).norm() < 1e-10);
    }

    #[test]
    fn pcg_detects_indefinite_operator() {
        let a = LinearMap::diagonal(DVector::from_vec(vec![1.0, -1.0]));
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            pcg(&a, &b, None, 1e-10, 10),
            Err(Error::IndefiniteOperator)
        ));
    }

    #[test]
    fn pcg_nonconverged_returns_best_iterate() {
        let a = LinearMap::diagonal(DVector::from_vec(vec![1.0, 1e-6]));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let out = pcg(&a, &b, None, 1e-14, 1).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iters, 1);
    }

    #[test]
    fn operator_norm_examples() {
        let d = LinearMap::diagonal(DVector::from_vec(vec![1.0, 3.0]));
        assert!((operator_norm(&d, 1e-12) - 3.0).abs() < 1e-9);
        let z = LinearMap::zeros(3, 3);
        assert_eq!(operator_norm(&z, 1e-10), 0.0);
        // singular values of [[0,2],[0,0]] via A^T A = diag(0,4)
        let a = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]));
        assert!((operator_norm(&a, 1e-12) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn project_range_examples() {
        // surjective square map: projection is the identity
        let g = LinearMap::dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]));
        let z = DVector::from_vec(vec![0.3, -0.7]);
        let p = project_range(&g, &z, 1e-13).unwrap();
        assert!((p - &z).norm() < 1e-10);

        // range = span(e1)
        let g = LinearMap::dense(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let p = project_range(&g, &DVector::from_vec(vec![1.0, 1.0]), 1e-13).unwrap();
        assert!((p - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-10);

        // least squares oracle: G = [[1],[1]], z = (2,0) -> G w with
        // w = (G^T G)^{-1} G^T z = 1 -> (1,1)
        let g = LinearMap::dense(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let p = project_range(&g, &DVector::from_vec(vec![2.0, 0.0]), 1e-13).unwrap();
        assert!((p - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-10);
    }

    #[test]
    fn project_range_orthogonality_property() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let g = LinearMap::dense(DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() - 0.5));
        let z = DVector::from_fn(5, |_, _| rng.random::<f64>() - 0.5);
        let p = project_range(&g, &z, 1e-13).unwrap();
        for _ in 0..20 {
            let u = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let ip = (&z - &p).dot(&g.apply(&u));
            assert!(ip.abs() < 1e-9 * (1.0 + z.norm() * u.norm()));
        }
    }

    #[test]
    fn pinv_apply_examples() {
        let eye = LinearMap::identity(3);
        let r = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((pinv_apply(&eye, &r, 1e-13).unwrap() - &r).norm() < 1e-10);

        let d = LinearMap::diagonal(DVector::from_vec(vec![2.0, 0.0]));
        let x = pinv_apply(&d, &DVector::from_vec(vec![4.0, 5.0]), 1e-13).unwrap();
        assert!((x - DVector::from_vec(vec![2.0, 0.0])).norm() < 1e-10);

        // rank one: [[2,2],[2,2]]^dagger (2,2) = (0.5, 0.5)
        let m = LinearMap::dense_symmetric(&DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        let x = pinv_apply(&m, &DVector::from_vec(vec![2.0, 2.0]), 1e-13).unwrap();
        assert!((x - DVector::from_vec(vec![0.5, 0.5])).norm() < 1e-10);
    }

    #[test]
    fn lanczos_bounds_smallest_eigenvalue() {
        let a = LinearMap::diagonal(DVector::from_vec(vec![0.5, 2.0, 7.0]));
        let ritz = lanczos_min_ritz(&a, 20, 1).unwrap();
        assert!(ritz >= 0.5 - 1e-9 && ritz <= 2.0);
    }
}
