//! Proximal mappings of the convex functions used by the solvers.

use nalgebra::{DMatrix, DVector};

use super::linmap::{LinearMap, MapKind};
use super::solve::CholeskyHandle;
use super::symm::{project_psd, sym_eig, SymMatrix};
use crate::error::{Error, Result};

/// Relative tolerance used when testing membership in an indicator domain.
const DOM_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ProxBlock {
    pub dim: usize,
    pub f: ProxFn,
}

/// A closed proper convex function with a computable proximal mapping.
#[derive(Debug, Clone)]
pub enum ProxFn {
    /// f = 0 on a space of the given dimension.
    Zero { dim: usize },
    /// f(u) = lambda * ||u||_1
    L1 { dim: usize, lambda: f64 },
    /// Indicator of the nonnegative orthant.
    NonNeg { dim: usize },
    /// Indicator of the positive semidefinite cone in svec coordinates.
    Psd { order: usize },
    /// Indicator of the box [lower, upper] componentwise.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// f(u) = <g, u>
    Linear { g: DVector<f64> },
    /// f(u) = 1/2 <u, Q u> + <g, u> with Q symmetric PSD.
    Quadratic { q: DMatrix<f64>, g: DVector<f64> },
    /// Concatenation of independent blocks.
    Separable(Vec<ProxBlock>),
    /// Placeholder for user functions; no solver is registered.
    Custom { name: String, dim: usize },
}

impl ProxFn {
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Self {
        ProxFn::Box {
            lower: DVector::from_element(dim, lo),
            upper: DVector::from_element(dim, hi),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProxFn::Zero { dim } | ProxFn::L1 { dim, .. } | ProxFn::NonNeg { dim } => *dim,
            ProxFn::Psd { order } => order * (order + 1) / 2,
            ProxFn::Box { lower, .. } => lower.len(),
            ProxFn::Linear { g } => g.len(),
            ProxFn::Quadratic { g, .. } => g.len(),
            ProxFn::Separable(blocks) => blocks.iter().map(|b| b.dim).sum(),
            ProxFn::Custom { dim, .. } => *dim,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ProxFn::Zero { .. } => true,
            ProxFn::Separable(blocks) => blocks.iter().all(|b| b.f.is_zero()),
            _ => false,
        }
    }

    /// Function value; indicators return `+inf` outside their domain
    /// (membership tested to a small relative tolerance).
    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        let scale = 1.0 + u.norm();
        match self {
            ProxFn::Zero { .. } => 0.0,
            ProxFn::L1 { lambda, .. } => lambda * u.iter().map(|x| x.abs()).sum::<f64>(),
            ProxFn::NonNeg { .. } => {
                if u.iter().all(|&x| x >= -DOM_TOL * scale) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFn::Psd { order } => {
                let s = SymMatrix::from_svec(u.clone()).expect("svec length");
                debug_assert_eq!(s.order(), *order);
                match sym_eig(&s.to_dense()) {
                    Ok((vals, _)) => {
                        if vals.iter().all(|&v| v >= -DOM_TOL * scale) {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    }
                    Err(_) => f64::INFINITY,
                }
            }
            ProxFn::Box { lower, upper } => {
                let ok = u
                    .iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .all(|(&x, (&l, &h))| x >= l - DOM_TOL * scale && x <= h + DOM_TOL * scale);
                if ok {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFn::Linear { g } => g.dot(u),
            ProxFn::Quadratic { q, g } => 0.5 * u.dot(&(q * u)) + g.dot(u),
            ProxFn::Separable(blocks) => {
                let mut off = 0;
                let mut total = 0.0;
                for b in blocks {
                    total += b.f.eval(&DVector::from(u.rows(off, b.dim)));
                    off += b.dim;
                }
                total
            }
            ProxFn::Custom { .. } => f64::INFINITY,
        }
    }

    /// Euclidean projection onto the effective domain.
    pub fn project_domain(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ProxFn::NonNeg { .. } => Ok(u.map(|x| x.max(0.0))),
            ProxFn::Box { lower, upper } => Ok(DVector::from_fn(u.len(), |i, _| {
                u[i].clamp(lower[i], upper[i])
            })),
            ProxFn::Psd { .. } => {
                let s = SymMatrix::from_svec(u.clone())?;
                Ok(project_psd(&s)?.into_svec())
            }
            ProxFn::Separable(blocks) => {
                let mut out = u.clone();
                let mut off = 0;
                for b in blocks {
                    let seg = DVector::from(u.rows(off, b.dim));
                    let p = b.f.project_domain(&seg)?;
                    for k in 0..b.dim {
                        out[off + k] = p[k];
                    }
                    off += b.dim;
                }
                Ok(out)
            }
            ProxFn::Custom { name, .. } => Err(Error::Unsupported(format!(
                "no solver registered for custom function `{name}`"
            ))),
            _ => Ok(u.clone()),
        }
    }
}

/// Diagonal of a weight operator, when it is diagonal.
fn weight_diagonal(w: &LinearMap) -> Option<DVector<f64>> {
    match w.kind() {
        MapKind::Identity => Some(DVector::from_element(w.ncols(), 1.0)),
        MapKind::Diagonal(d) => Some(d.clone()),
        MapKind::Scaled(s, inner) => weight_diagonal(inner).map(|d| d * *s),
        _ => None,
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// The Moreau-Yosida proximal mapping argmin f(u) + 1/2 ||u - v||_W^2.
///
/// `w` must be self-adjoint positive definite; separable indicator functions
/// and the l1 norm require a diagonal weight, the PSD indicator requires a
/// scaled identity.
pub fn prox(f: &ProxFn, v: &DVector<f64>, w: &LinearMap) -> Result<DVector<f64>> {
    assert_eq!(v.len(), f.dim(), "prox dimension mismatch");
    assert_eq!(w.ncols(), v.len(), "weight dimension mismatch");
    let diag = weight_diagonal(w);
    if let Some(d) = &diag {
        if d.iter().any(|&x| x <= 0.0) {
            return Err(Error::InvalidInput("prox weight not positive definite".into()));
        }
    }
    match f {
        ProxFn::Zero { .. } => Ok(v.clone()),
        ProxFn::L1 { lambda, .. } => {
            let d = diag.ok_or_else(|| {
                Error::Unsupported("l1 prox needs a diagonal weight".into())
            })?;
            Ok(DVector::from_fn(v.len(), |i, _| {
                soft_threshold(v[i], lambda / d[i])
            }))
        }
        ProxFn::NonNeg { .. } => {
            diag.ok_or_else(|| Error::Unsupported("separable prox needs a diagonal weight".into()))?;
            Ok(v.map(|x| x.max(0.0)))
        }
        ProxFn::Box { lower, upper } => {
            diag.ok_or_else(|| Error::Unsupported("separable prox needs a diagonal weight".into()))?;
            Ok(DVector::from_fn(v.len(), |i, _| {
                v[i].clamp(lower[i], upper[i])
            }))
        }
        ProxFn::Psd { .. } => {
            let d = diag.ok_or_else(|| Error::Unsupported("psd prox needs a scaled identity weight".into()))?;
            let uniform = d.iter().all(|&x| (x - d[0]).abs() <= 1e-14 * d[0].abs());
            if !uniform {
                return Err(Error::Unsupported(
                    "psd prox needs a scaled identity weight".into(),
                ));
            }
            let s = SymMatrix::from_svec(v.clone())?;
            Ok(project_psd(&s)?.into_svec())
        }
        ProxFn::Linear { g } => {
            if let Some(d) = diag {
                Ok(DVector::from_fn(v.len(), |i, _| v[i] - g[i] / d[i]))
            } else {
                let wd = w.to_dense();
                let chol = CholeskyHandle::factor(&wd)?;
                Ok(v - chol.solve(g))
            }
        }
        ProxFn::Quadratic { q, g } => {
            let wd = w.to_dense();
            let sys = q + &wd;
            let chol = CholeskyHandle::factor(&sys)?;
            let rhs = &wd * v - g;
            Ok(chol.solve(&rhs))
        }
        ProxFn::Separable(blocks) => {
            let d = diag.ok_or_else(|| {
                Error::Unsupported("separable prox needs a diagonal weight".into())
            })?;
            let mut out = DVector::zeros(v.len());
            let mut off = 0;
            for b in blocks {
                let seg = DVector::from(v.rows(off, b.dim));
                let wseg = LinearMap::diagonal(DVector::from(d.rows(off, b.dim)));
                let p = prox(&b.f, &seg, &wseg)?;
                for k in 0..b.dim {
                    out[off + k] = p[k];
                }
                off += b.dim;
            }
            Ok(out)
        }
        ProxFn::Custom { name, .. } => Err(Error::Unsupported(format!(
            "no solver registered for custom function `{name}`"
        ))),
    }
}

/// Minimum-norm element of `g + ∂f(u)`.
///
/// This is the exact stationarity residual of `min f + smooth part` when `g`
/// is the smooth gradient at `u`; activity is detected with the tolerance
/// `act_tol`.
pub fn subgrad_residual(f: &ProxFn, u: &DVector<f64>, g: &DVector<f64>, act_tol: f64) -> Result<DVector<f64>> {
    match f {
        ProxFn::Zero { .. } => Ok(g.clone()),
        ProxFn::Linear { g: g0 } => Ok(g + g0),
        ProxFn::Quadratic { q, g: g0 } => Ok(g + q * u + g0),
        ProxFn::L1 { lambda, .. } => Ok(DVector::from_fn(u.len(), |i, _| {
            if u[i] > act_tol {
                g[i] + lambda
            } else if u[i] < -act_tol {
                g[i] - lambda
            } else {
                soft_threshold(g[i], *lambda)
            }
        })),
        ProxFn::NonNeg { .. } => Ok(DVector::from_fn(u.len(), |i, _| {
            if u[i] > act_tol {
                g[i]
            } else {
                // g + (-inf, 0]: the minimum-norm element is min(g, 0)
                g[i].min(0.0)
            }
        })),
        ProxFn::Box { lower, upper } => Ok(DVector::from_fn(u.len(), |i, _| {
            let at_lower = u[i] - lower[i] <= act_tol;
            let at_upper = upper[i] - u[i] <= act_tol;
            match (at_lower, at_upper) {
                (true, true) => 0.0,
                (true, false) => g[i].min(0.0),
                (false, true) => g[i].max(0.0),
                (false, false) => g[i],
            }
        })),
        ProxFn::Psd { .. } => {
            let s = SymMatrix::from_svec(u.clone())?;
            let (vals, vecs) = sym_eig(&s.to_dense())?;
            let gd = SymMatrix::from_svec(g.clone())?.to_dense();
            let mut gt = vecs.transpose() * gd * &vecs;
            let scale = vals.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
            let active: Vec<usize> = (0..vals.len())
                .filter(|&i| vals[i] <= act_tol * scale)
                .collect();
            if !active.is_empty() {
                // On the active (zero-eigenvalue) subspace, adding the normal
                // cone (NSD matrices) cancels the PSD part of the rotated
                // gradient block; the NSD part remains as residual.
                let k = active.len();
                let mut blockm = DMatrix::zeros(k, k);
                for (ai, &i) in active.iter().enumerate() {
                    for (aj, &j) in active.iter().enumerate() {
                        blockm[(ai, aj)] = gt[(i, j)];
                    }
                }
                let proj = project_psd(&SymMatrix::from_dense(&blockm))?.to_dense();
                for (ai, &i) in active.iter().enumerate() {
                    for (aj, &j) in active.iter().enumerate() {
                        gt[(i, j)] -= proj[(ai, aj)];
                    }
                }
            }
            let back = &vecs * gt * vecs.transpose();
            Ok(SymMatrix::from_dense(&back).into_svec())
        }
        ProxFn::Separable(blocks) => {
            let mut out = DVector::zeros(u.len());
            let mut off = 0;
            for b in blocks {
                let useg = DVector::from(u.rows(off, b.dim));
                let gseg = DVector::from(g.rows(off, b.dim));
                let r = subgrad_residual(&b.f, &useg, &gseg, act_tol)?;
                for k in 0..b.dim {
                    out[off + k] = r[k];
                }
                off += b.dim;
            }
            Ok(out)
        }
        ProxFn::Custom { name, .. } => Err(Error::Unsupported(format!(
            "no solver registered for custom function `{name}`"
        ))),
    }
}

/// Indices of svec coordinates covered by PSD blocks of a separable function;
/// empty when none are present.
pub fn has_psd_block(f: &ProxFn) -> bool {
    match f {
        ProxFn::Psd { .. } => true,
        ProxFn::Separable(blocks) => blocks.iter().any(|b| has_psd_block(&b.f)),
        _ => false,
    }
}

pub use super::symm::order_from_svec_dim as psd_order_from_dim;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ident(n: usize) -> LinearMap {
        LinearMap::identity(n)
    }

    #[test]
    fn zero_prox_is_identity() {
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let p = prox(&ProxFn::Zero { dim: 3 }, &v, &ident(3)).unwrap();
        assert_eq!(p, v);
    }

    #[test]
    fn l1_prox_soft_thresholds() {
        let v = DVector::from_vec(vec![2.0]);
        let p = prox(&ProxFn::L1 { dim: 1, lambda: 0.5 }, &v, &ident(1)).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-15);
        // sigma-scaled weight thresholds at lambda/sigma
        let w = LinearMap::scaled_identity(1, 4.0);
        let p = prox(&ProxFn::L1 { dim: 1, lambda: 0.5 }, &v, &w).unwrap();
        assert!((p[0] - (2.0 - 0.125)).abs() < 1e-15);
    }

    #[test]
    fn nonneg_prox_projects() {
        let v = DVector::from_vec(vec![-1.0, 2.0]);
        let p = prox(&ProxFn::NonNeg { dim: 2 }, &v, &ident(2)).unwrap();
        assert_eq!(p, DVector::from_vec(vec![0.0, 2.0]));
    }

    #[test]
    fn quadratic_prox_solves_stationarity() {
        // minimize 1/2 u^2 + 1/2 (u-3)^2 -> u = 1.5 (stationary point by hand)
        let f = ProxFn::Quadratic {
            q: DMatrix::from_element(1, 1, 1.0),
            g: DVector::zeros(1),
        };
        let p = prox(&f, &DVector::from_element(1, 3.0), &ident(1)).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn prox_output_in_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = ProxFn::Separable(vec![
            ProxBlock { dim: 3, f: ProxFn::NonNeg { dim: 3 } },
            ProxBlock { dim: 2, f: ProxFn::uniform_box(2, -0.5, 0.5) },
            ProxBlock { dim: 3, f: ProxFn::Psd { order: 2 } },
        ]);
        for _ in 0..20 {
            let v = DVector::from_fn(8, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let p = prox(&f, &v, &ident(8)).unwrap();
            assert!(f.eval(&p).is_finite());
        }
    }

    #[test]
    fn prox_firm_nonexpansive_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let funcs: Vec<ProxFn> = vec![
            ProxFn::L1 { dim: 5, lambda: 0.7 },
            ProxFn::NonNeg { dim: 5 },
            ProxFn::uniform_box(5, -1.0, 2.0),
        ];
        let wdiag = DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0, 1.5]);
        let w = LinearMap::diagonal(wdiag.clone());
        for f in &funcs {
            for _ in 0..50 {
                let u = DVector::from_fn(5, |_, _| rng.random::<f64>() * 4.0 - 2.0);
                let v = DVector::from_fn(5, |_, _| rng.random::<f64>() * 4.0 - 2.0);
                let pu = prox(f, &u, &w).unwrap();
                let pv = prox(f, &v, &w).unwrap();
                let wnorm = |x: &DVector<f64>| {
                    x.iter()
                        .zip(wdiag.iter())
                        .map(|(xi, wi)| wi * xi * xi)
                        .sum::<f64>()
                        .sqrt()
                };
                assert!(wnorm(&(pu - pv)) <= wnorm(&(u - v)) + 1e-12);
            }
        }
    }

    #[test]
    fn custom_prox_is_unsupported() {
        let f = ProxFn::Custom { name: "huber".into(), dim: 2 };
        let v = DVector::zeros(2);
        assert!(matches!(
            prox(&f, &v, &ident(2)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn subgrad_residual_detects_stationarity() {
        // nonneg: u = 0 active with positive gradient is stationary
        let f = ProxFn::NonNeg { dim: 2 };
        let u = DVector::from_vec(vec![0.0, 1.0]);
        let g = DVector::from_vec(vec![0.3, 0.0]);
        let r = subgrad_residual(&f, &u, &g, 1e-10).unwrap();
        assert!(r.norm() < 1e-15);
        // negative gradient at an active coordinate is not, and the residual
        // is an actual element of g + the normal cone
        let g = DVector::from_vec(vec![-0.3, 0.0]);
        let r = subgrad_residual(&f, &u, &g, 1e-10).unwrap();
        assert!((r[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn subgrad_residual_psd_cone() {
        // S = diag(1, 0); a positive gradient entry on the null space is
        // absorbed by the normal cone, a negative one is not.
        let s = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let f = ProxFn::Psd { order: 2 };
        let mut gm = SymMatrix::zeros(2);
        gm.set(0, 0, 0.2);
        gm.set(1, 1, 0.4);
        let r = subgrad_residual(&f, s.svec(), gm.svec(), 1e-9).unwrap();
        let rm = SymMatrix::from_svec(r).unwrap();
        assert!((rm.get(0, 0) - 0.2).abs() < 1e-12);
        assert!(rm.get(1, 1).abs() < 1e-12);

        gm.set(1, 1, -0.4);
        let r = subgrad_residual(&f, s.svec(), gm.svec(), 1e-9).unwrap();
        let rm = SymMatrix::from_svec(r).unwrap();
        assert!((rm.get(1, 1) + 0.4).abs() < 1e-12);
    }
}
