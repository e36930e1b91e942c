//! Desk-scale ground-truth oracles: active-set enumeration for small QPs,
//! vertex enumeration for small LPs, and a dense log-barrier path-following
//! loop for small QSDPs. These are deliberately independent of the first-order
//! solvers they are used to check.

use nalgebra::{DMatrix, DVector};

use super::QSDPInstance;
use crate::error::{Error, Result};
use crate::opcore::{sym_eig, CholeskyHandle, SymMatrix};

const QP_DIM_CAP: usize = 24;
const QP_ENUM_CAP: u32 = 20;

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub value: f64,
}

/// Exact minimizer of
/// `min 1/2 x^T H x + g^T x  s.t.  A_eq x = b_eq, A_in x >= b_in`
/// by enumeration of all active sets of the inequality rows. Each candidate
/// KKT system is solved by a dense least-norm solve; primal and dual
/// feasibility select the valid ones.
pub fn oracle_small_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<QpSolution> {
    let n = g.len();
    let m_in = a_in.nrows();
    if n > QP_DIM_CAP || m_in as u32 > QP_ENUM_CAP {
        return Err(Error::SizeLimit {
            dim: n.max(m_in),
            cap: QP_DIM_CAP,
        });
    }
    let m_eq = a_eq.nrows();
    let tol = 1e-9 * (1.0 + g.norm() + b_eq.norm() + b_in.norm());
    let mut best: Option<QpSolution> = None;
    for mask in 0u64..(1u64 << m_in) {
        let active: Vec<usize> = (0..m_in).filter(|i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let dim = n + m_eq + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for r in 0..m_eq {
            for c in 0..n {
                kkt[(n + r, c)] = a_eq[(r, c)];
                kkt[(c, n + r)] = a_eq[(r, c)];
            }
            rhs[n + r] = b_eq[r];
        }
        for (k, &r) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + m_eq + k, c)] = a_in[(r, c)];
                kkt[(c, n + m_eq + k)] = -a_in[(r, c)];
            }
            rhs[n + m_eq + k] = b_in[r];
        }
        for i in 0..n {
            rhs[i] = -g[i];
        }
        let sol = match least_norm_solve(&kkt, &rhs) {
            Some(s) => s,
            None => continue,
        };
        // the KKT system must actually be satisfied (it may be inconsistent)
        if (&kkt * &sol - &rhs).norm() > tol * 10.0 {
            continue;
        }
        let x = DVector::from(sol.rows(0, n));
        // primal feasibility
        if m_in > 0 && (a_in * &x - b_in).iter().any(|&v| v < -tol) {
            continue;
        }
        if m_eq > 0 && (a_eq * &x - b_eq).norm() > tol * 10.0 {
            continue;
        }
        // dual feasibility of the active multipliers
        let nu = DVector::from(sol.rows(n + m_eq, na));
        if nu.iter().any(|&v| v < -tol) {
            continue;
        }
        let value = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
        if best.as_ref().is_none_or(|b| value < b.value - 1e-14) {
            best = Some(QpSolution { x, value });
        }
    }
    best.ok_or_else(|| Error::NumericalFailure {
        what: "active-set enumeration found no feasible stationary point".into(),
        iterations: None,
    })
}

/// Least-norm solution of a (possibly singular) symmetric-structured dense
/// system via the spectral pseudoinverse of the normal equations.
fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let (vals, vecs) = sym_eig(&(0.5 * (&ata + ata.transpose()))).ok()?;
    let vmax = vals.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
    let inv = DVector::from_iterator(
        vals.len(),
        vals.iter()
            .map(|&v| if v > 1e-11 * vmax { 1.0 / v } else { 0.0 }),
    );
    Some(&vecs * DMatrix::from_diagonal(&inv) * vecs.transpose() * atb)
}

/// Exact value of `min c^T x  s.t.  A x = b, x >= 0` by enumeration of basic
/// feasible solutions.
pub fn oracle_lp_vertex(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution> {
    let n = c.len();
    let m = a.nrows();
    if n > 16 || m > 8 {
        return Err(Error::SizeLimit { dim: n, cap: 16 });
    }
    let tol = 1e-9 * (1.0 + b.norm());
    let mut best: Option<QpSolution> = None;
    let mut basis = vec![0usize; m];
    enumerate_bases(n, m, 0, &mut basis, &mut |basis: &[usize]| {
        let mut sub = DMatrix::zeros(m, m);
        for (j, &col) in basis.iter().enumerate() {
            sub.set_column(j, &a.column(col));
        }
        let lu = sub.clone().lu();
        if let Some(xb) = lu.solve(b) {
            if (&sub * &xb - b).norm() > tol {
                return;
            }
            if xb.iter().all(|&v| v >= -tol) {
                let mut x = DVector::zeros(n);
                for (j, &col) in basis.iter().enumerate() {
                    x[col] = xb[j].max(0.0);
                }
                let value = c.dot(&x);
                if best.as_ref().is_none_or(|bst| value < bst.value - 1e-14) {
                    best = Some(QpSolution { x, value });
                }
            }
        }
    });
    best.ok_or_else(|| Error::NumericalFailure {
        what: "vertex enumeration found no basic feasible solution".into(),
        iterations: None,
    })
}

fn enumerate_bases(n: usize, m: usize, depth: usize, basis: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if depth == m {
        f(basis);
        return;
    }
    let start = if depth == 0 { 0 } else { basis[depth - 1] + 1 };
    for col in start..n {
        basis[depth] = col;
        enumerate_bases(n, m, depth + 1, basis, f);
    }
}

#[derive(Debug, Clone)]
pub struct QsdpOracle {
    pub x: SymMatrix,
    pub value: f64,
    /// certified duality gap at the final barrier parameter
    pub gap: f64,
}

const QSDP_ORDER_CAP: usize = 8;

/// High-accuracy primal log-barrier path following for
/// `min 1/2 <X, Q X> - <C, X>  s.t.  A_E X = b_E, A_I X >= b_I, X PSD`,
/// started from a strictly feasible `x0`. The returned gap is the barrier
/// duality bound `mu (n + m_I)`.
pub fn oracle_small_qsdp(inst: &QSDPInstance, x0: &SymMatrix, gap_tol: f64) -> Result<QsdpOracle> {
    inst.validate()?;
    let n = inst.n;
    if n > QSDP_ORDER_CAP {
        return Err(Error::SizeLimit {
            dim: n,
            cap: QSDP_ORDER_CAP,
        });
    }
    let dim = inst.sdim();
    let m_e = inst.m_e();
    let m_i = inst.m_i();
    let degree = (n + m_i) as f64;

    let mut x = x0.svec().clone();
    check_strict(inst, &x)?;

    let obj = |x: &DVector<f64>| 0.5 * x.dot(&inst.q.apply(x)) - inst.c.svec().dot(x);
    let mut mu = (1.0 + obj(&x).abs()) / degree;
    let target_mu = gap_tol / degree;

    // assemble the dense Hessian of -log det at X: H[e_j] = svec(Xi e_j Xi)
    let barrier_hess = |xinv: &DMatrix<f64>| -> DMatrix<f64> {
        let mut h = DMatrix::zeros(dim, dim);
        let mut e = DVector::zeros(dim);
        for j in 0..dim {
            e[j] = 1.0;
            let ej = SymMatrix::from_svec(e.clone()).unwrap().to_dense();
            let m = xinv * ej * xinv;
            h.set_column(j, SymMatrix::from_dense(&m).svec());
            e[j] = 0.0;
        }
        0.5 * (&h + h.transpose())
    };

    while mu > target_mu {
        // centering: Newton with equality constraints
        for _ in 0..100 {
            let xm = SymMatrix::from_svec(x.clone()).unwrap().to_dense();
            let xinv = xm
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NumericalFailure {
                    what: "barrier iterate became singular".into(),
                    iterations: None,
                })?;
            let slack = &inst.a_i * &x - &inst.b_i;
            let mut grad = inst.q.apply(&x) - inst.c.svec()
                - mu * SymMatrix::from_dense(&xinv).svec();
            let mut hess = inst.q.to_dense() + mu * barrier_hess(&xinv);
            if m_i > 0 {
                let inv_s = DVector::from_iterator(m_i, slack.iter().map(|&s| 1.0 / s));
                grad -= mu * (inst.a_i.transpose() * &inv_s);
                let inv_s2 = DVector::from_iterator(m_i, slack.iter().map(|&s| 1.0 / (s * s)));
                hess += mu
                    * (inst.a_i.transpose() * DMatrix::from_diagonal(&inv_s2) * &inst.a_i);
            }
            // dense symmetric KKT solve
            let kdim = dim + m_e;
            let mut kkt = DMatrix::zeros(kdim, kdim);
            kkt.view_mut((0, 0), (dim, dim))
                .copy_from(&(0.5 * (&hess + hess.transpose())));
            for r in 0..m_e {
                for c2 in 0..dim {
                    kkt[(dim + r, c2)] = inst.a_e[(r, c2)];
                    kkt[(c2, dim + r)] = inst.a_e[(r, c2)];
                }
            }
            let mut rhs = DVector::zeros(kdim);
            for i in 0..dim {
                rhs[i] = -grad[i];
            }
            // keep equality feasibility exact
            let eqres = &inst.b_e - &inst.a_e * &x;
            for r in 0..m_e {
                rhs[dim + r] = eqres[r];
            }
            let step = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::NumericalFailure {
                    what: "barrier KKT solve failed".into(),
                    iterations: None,
                })?;
            let dx = DVector::from(step.rows(0, dim));
            let lambda_sq = dx.dot(&(&hess * &dx));
            // backtracking to stay strictly feasible
            let mut t = 1.0;
            for _ in 0..60 {
                let cand = &x + t * &dx;
                if check_strict(inst, &cand).is_ok() {
                    break;
                }
                t *= 0.5;
            }
            x += t * &dx;
            if lambda_sq.abs().sqrt() * t < 1e-10 {
                break;
            }
        }
        mu *= 0.2;
    }
    let value = obj(&x);
    Ok(QsdpOracle {
        x: SymMatrix::from_svec(x).unwrap(),
        value,
        gap: mu * degree / 0.2, // last mu used in centering before the final shrink
    })
}

fn check_strict(inst: &QSDPInstance, x: &DVector<f64>) -> Result<()> {
    let xm = SymMatrix::from_svec(x.clone()).unwrap().to_dense();
    if CholeskyHandle::factor(&xm).is_err() {
        return Err(Error::NumericalFailure {
            what: "point not strictly PSD".into(),
            iterations: None,
        });
    }
    let slack = &inst.a_i * x - &inst.b_i;
    if slack.iter().any(|&s| s <= 0.0) {
        return Err(Error::NumericalFailure {
            what: "inequality slack not strictly positive".into(),
            iterations: None,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{biq_strict_point, gen_biq_qsdp, toy_sdp};
    use crate::opcore::LinearMap;

    #[test]
    fn qp_oracle_unconstrained() {
        // H = I, g = -(1, 2): x = (1, 2)
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-1.0, -2.0]);
        let sol = oracle_small_qp(
            &h,
            &g,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
        )
        .unwrap();
        assert!((sol.x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-9);
    }

    #[test]
    fn qp_oracle_matches_lasso_closed_form() {
        // scalar lasso via the split x = u - v, u, v >= 0:
        // min 1/2 (u - v - 2)^2 + 0.5 (u + v) with x >= 0 (u - v >= 0)
        let h = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let g = DVector::from_vec(vec![-2.0 + 0.5, 2.0 + 0.5]);
        let a_in = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0]);
        let b_in = DVector::zeros(3);
        let sol = oracle_small_qp(
            &h,
            &g,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &a_in,
            &b_in,
        )
        .unwrap();
        let x = sol.x[0] - sol.x[1];
        assert!((x - 1.5).abs() < 1e-8, "x = {x}");
    }

    #[test]
    fn lp_vertex_oracle_basis_pursuit_toy() {
        // min |x|_1 s.t. x1 + x2 = 1 -> split into 4 nonnegative variables
        let c = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let a = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, -1.0, -1.0]);
        let b = DVector::from_element(1, 1.0);
        let sol = oracle_lp_vertex(&c, &a, &b).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn qsdp_oracle_toy_sdp_value() {
        // the toy SDP as a QSDP with Q = 0: value 1 (note the sign of C in
        // the QSDP objective)
        let toy = toy_sdp();
        let dim = crate::opcore::svec_dim(2);
        let inst = QSDPInstance {
            n: 2,
            q: LinearMap::zeros(dim, dim),
            a_e: toy.a.clone(),
            a_i: DMatrix::zeros(0, dim),
            b_e: toy.b.clone(),
            b_i: DVector::zeros(0),
            c: SymMatrix::from_svec(-toy.c.clone()).unwrap(),
            d_scale: DVector::zeros(0),
        };
        let x0 = SymMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5]));
        let out = oracle_small_qsdp(&inst, &x0, 1e-10).unwrap();
        assert!((out.value - 1.0).abs() < 1e-7, "value {}", out.value);
        assert!(out.gap <= 1e-9);
    }

    #[test]
    fn qsdp_oracle_biq_instance_is_feasible_and_certified() {
        let inst = gen_biq_qsdp(4, 2, 2, 21);
        let x0 = biq_strict_point(4);
        let out = oracle_small_qsdp(&inst, &x0, 1e-10).unwrap();
        assert!(out.gap <= 1e-9);
        // primal feasibility of the oracle point
        assert!((&inst.a_e * out.x.svec() - &inst.b_e).norm() < 1e-8);
        let slack = &inst.a_i * out.x.svec() - &inst.b_i;
        assert!(slack.iter().all(|&s| s >= -1e-9));
    }
}
