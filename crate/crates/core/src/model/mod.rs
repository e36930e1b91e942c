//! Problem data model, majorization oracle, KKT residuals, and the
//! normalized accuracy metrics used for stopping.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcore::{
    offsets, project_psd, project_range, prox, LinearMap, ProxBlock, ProxFn, SymMatrix,
};

/// Smooth convex part of the objective with an explicit curvature bound.
///
/// The curvature operator plays the role of the majorizer: for every anchor
/// `y'`, `f(y) <= f(y') + <grad f(y'), y - y'> + 1/2 ||y - y'||^2_Sigma`.
#[derive(Debug, Clone)]
pub enum SmoothFn {
    Zero {
        dim: usize,
    },
    /// f(y) = 1/2 <y, Q y> + <lin, y> + constant, with Sigma = Q (tight).
    Quadratic {
        q: LinearMap,
        lin: DVector<f64>,
        constant: f64,
    },
    /// log-sum-exp with a user supplied curvature bound (the Hessian is
    /// dominated by the identity).
    LogSumExp {
        dim: usize,
        sigma: LinearMap,
    },
}

impl SmoothFn {
    pub fn zero(dim: usize) -> Self {
        SmoothFn::Zero { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            SmoothFn::Zero { dim } | SmoothFn::LogSumExp { dim, .. } => *dim,
            SmoothFn::Quadratic { lin, .. } => lin.len(),
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match self {
            SmoothFn::Zero { .. } => 0.0,
            SmoothFn::Quadratic { q, lin, constant } => {
                0.5 * y.dot(&q.apply(y)) + lin.dot(y) + constant
            }
            SmoothFn::LogSumExp { .. } => {
                let m = y.max();
                m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            }
        }
    }

    pub fn grad(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            SmoothFn::Zero { dim } => DVector::zeros(*dim),
            SmoothFn::Quadratic { q, lin, .. } => q.apply(y) + lin,
            SmoothFn::LogSumExp { .. } => {
                let m = y.max();
                let e = y.map(|v| (v - m).exp());
                let s: f64 = e.iter().sum();
                e / s
            }
        }
    }

    /// The self-adjoint PSD curvature operator of the majorization.
    pub fn sigma_hat(&self) -> LinearMap {
        match self {
            SmoothFn::Zero { dim } => LinearMap::zeros(*dim, *dim),
            SmoothFn::Quadratic { q, .. } => q.clone(),
            SmoothFn::LogSumExp { sigma, .. } => sigma.clone(),
        }
    }

    /// The majorizing quadratic model anchored at `anchor`.
    pub fn majorized_value(&self, y: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        let d = y - anchor;
        self.value(anchor) + self.grad(anchor).dot(&d) + 0.5 * d.dot(&self.sigma_hat().apply(&d))
    }
}

/// The multi-block problem
/// `min p(y_1) + f(y) - <b, z>  s.t.  F* y + G* z = c`.
#[derive(Debug, Clone)]
pub struct MultiBlockProblem {
    pub blocks: Vec<usize>,
    pub p: ProxFn,
    pub f: SmoothFn,
    /// F_i : X -> Y_i
    pub f_maps: Vec<LinearMap>,
    /// G : X -> Z
    pub g_map: LinearMap,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl MultiBlockProblem {
    pub fn new(
        blocks: Vec<usize>,
        p: ProxFn,
        f: SmoothFn,
        f_maps: Vec<LinearMap>,
        g_map: LinearMap,
        b: DVector<f64>,
        c: DVector<f64>,
    ) -> Result<Self> {
        if blocks.is_empty() || f_maps.len() != blocks.len() {
            return Err(Error::InvalidInput(
                "one F map per y block is required".into(),
            ));
        }
        let x_dim = g_map.ncols();
        let y_dim: usize = blocks.iter().sum();
        if p.dim() != blocks[0] {
            return Err(Error::InvalidInput(format!(
                "p acts on block 1 (dim {}), got {}",
                blocks[0],
                p.dim()
            )));
        }
        if f.dim() != y_dim {
            return Err(Error::InvalidInput("smooth part dimension mismatch".into()));
        }
        for (i, m) in f_maps.iter().enumerate() {
            if m.ncols() != x_dim || m.nrows() != blocks[i] {
                return Err(Error::InvalidInput(format!(
                    "F_{} must map X (dim {}) to Y_{} (dim {})",
                    i + 1,
                    x_dim,
                    i + 1,
                    blocks[i]
                )));
            }
        }
        if b.len() != g_map.nrows() || c.len() != x_dim {
            return Err(Error::InvalidInput("b or c dimension mismatch".into()));
        }
        if !f.sigma_hat().is_self_adjoint() {
            return Err(Error::InvalidInput("majorizer must be self-adjoint".into()));
        }
        if !b.is_empty() && b.norm() > 0.0 {
            let pb = project_range(&g_map, &b, 1e-13)?;
            let gap = (&b - pb).norm();
            if gap > 1e-10 * (1.0 + b.norm()) {
                return Err(Error::InvalidInput(format!(
                    "b is not in range(G): distance {gap:.3e}"
                )));
            }
        }
        Ok(Self {
            blocks,
            p,
            f,
            f_maps,
            g_map,
            b,
            c,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn x_dim(&self) -> usize {
        self.g_map.ncols()
    }

    pub fn y_dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn z_dim(&self) -> usize {
        self.g_map.nrows()
    }

    pub fn block_offsets(&self) -> Vec<usize> {
        offsets(&self.blocks)
    }

    /// The stacked map F : X -> Y with rows F_1, ..., F_s.
    pub fn f_stack(&self) -> LinearMap {
        LinearMap::block(
            self.blocks.clone(),
            vec![self.x_dim()],
            self.f_maps
                .iter()
                .cloned()
                .enumerate()
                .map(|(i, m)| (i, 0, m))
                .collect(),
        )
    }

    /// F* y = sum_i F_i* y_i
    pub fn f_adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        let off = self.block_offsets();
        let mut out = DVector::zeros(self.x_dim());
        for (i, m) in self.f_maps.iter().enumerate() {
            let seg = DVector::from(y.rows(off[i], self.blocks[i]));
            out += m.apply_adjoint(&seg);
        }
        out
    }

    /// F x stacked over blocks.
    pub fn f_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let off = self.block_offsets();
        let mut out = DVector::zeros(self.y_dim());
        for (i, m) in self.f_maps.iter().enumerate() {
            let t = m.apply(x);
            for k in 0..self.blocks[i] {
                out[off[i] + k] = t[k];
            }
        }
        out
    }

    /// F* y + G* z - c
    pub fn constraint_residual(&self, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        self.f_adjoint(y) + self.g_map.apply_adjoint(z) - &self.c
    }

    /// p(y_1) + f(y) - <b, z>
    pub fn objective(&self, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let y1 = DVector::from(y.rows(0, self.blocks[0]));
        self.p.eval(&y1) + self.f.value(y) - self.b.dot(z)
    }

    /// The prox function on all of Y: p on block 1, zero elsewhere.
    pub fn p_full(&self) -> ProxFn {
        let rest: usize = self.y_dim() - self.blocks[0];
        if rest == 0 {
            self.p.clone()
        } else {
            ProxFn::Separable(vec![
                ProxBlock {
                    dim: self.blocks[0],
                    f: self.p.clone(),
                },
                ProxBlock {
                    dim: rest,
                    f: ProxFn::Zero { dim: rest },
                },
            ])
        }
    }
}

/// A candidate primal-dual point for the multi-block problem.
#[derive(Debug, Clone)]
pub struct KKTPoint {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

/// The majorized augmented Lagrangian
/// `p(y_1) + fhat(y, anchor) - <b, z> + <F*y + G*z - c, x> + sigma/2 ||F*y + G*z - c||^2`.
///
/// Returns `+inf` when `y_1` lies outside the domain of `p`.
pub fn eval_majorized_auglag(
    prob: &MultiBlockProblem,
    y: &DVector<f64>,
    z: &DVector<f64>,
    x: &DVector<f64>,
    y_anchor: &DVector<f64>,
    sigma: f64,
) -> f64 {
    let y1 = DVector::from(y.rows(0, prob.blocks[0]));
    let pval = prob.p.eval(&y1);
    if !pval.is_finite() {
        return f64::INFINITY;
    }
    let r = prob.constraint_residual(y, z);
    pval + prob.f.majorized_value(y, y_anchor) - prob.b.dot(z)
        + r.dot(x)
        + 0.5 * sigma * r.norm_squared()
}

/// Stacked KKT residual
/// `(c - F*y - G*z;  y - Prox(y - grad f(y) - F x);  G x - b)`
/// where the prox applies `p` to block 1 and the identity elsewhere.
pub fn kkt_residual(prob: &MultiBlockProblem, u: &KKTPoint) -> DVector<f64> {
    let d1 = &prob.c - prob.f_adjoint(&u.y) - prob.g_map.apply_adjoint(&u.z);
    let inner = &u.y - prob.f.grad(&u.y) - prob.f_apply(&u.x);
    let y1 = DVector::from(inner.rows(0, prob.blocks[0]));
    let p1 = prox(&prob.p, &y1, &LinearMap::identity(prob.blocks[0])).unwrap_or(y1.clone());
    let mut d2 = &u.y - &inner;
    for k in 0..prob.blocks[0] {
        d2[k] = u.y[k] - p1[k];
    }
    let d3 = prob.g_map.apply(&u.x) - &prob.b;
    stack(&[d1, d2, d3])
}

pub fn kkt_residual_norm(prob: &MultiBlockProblem, u: &KKTPoint) -> f64 {
    kkt_residual(prob, u).norm()
}

/// Relative residual used as the generic stopping rule.
pub fn kkt_residual_rel(prob: &MultiBlockProblem, u: &KKTPoint) -> f64 {
    kkt_residual_norm(prob, u) / (1.0 + prob.c.norm() + prob.b.norm())
}

pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(total);
    let mut off = 0;
    for p in parts {
        for k in 0..p.len() {
            out[off + k] = p[k];
        }
        off += p.len();
    }
    out
}

/// Normalized accuracy measures for a linear SDP pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EtaSdp {
    pub eta_d: f64,
    pub eta_p: f64,
    pub eta_s: f64,
    pub eta_gap: f64,
    /// max of the feasibility measures, excluding the gap
    pub eta_max: f64,
}

/// Stopping quotients for the SDP pair
/// `min <C,X> s.t. A X = b, X PSD` and its dual.
pub fn eta_sdp(
    a: &LinearMap,
    b: &DVector<f64>,
    c: &SymMatrix,
    x: &SymMatrix,
    z: &DVector<f64>,
    s: &SymMatrix,
) -> Result<EtaSdp> {
    let eta_d = (a.apply_adjoint(z) + s.svec() - c.svec()).norm() / (1.0 + c.fro_norm());
    let eta_p = (a.apply(x.svec()) - b).norm() / (1.0 + b.norm());
    let proj = project_psd(x)?;
    let cone = (x.svec() - proj.svec()).norm() / (1.0 + x.fro_norm());
    let compl = x.inner(s).abs() / (1.0 + x.fro_norm() + s.fro_norm());
    let eta_s = cone.max(compl);
    let pobj = c.inner(x);
    let dobj = b.dot(z);
    let eta_gap = (pobj - dobj) / (1.0 + pobj.abs() + dobj.abs());
    Ok(EtaSdp {
        eta_d,
        eta_p,
        eta_s,
        eta_gap,
        eta_max: eta_d.max(eta_p).max(eta_s),
    })
}

/// Normalized accuracy measures for a convex quadratic SDP pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EtaQsdp {
    pub eta_d: f64,
    pub eta_p: f64,
    pub eta_w: f64,
    pub eta_s: f64,
    pub eta_i: f64,
    pub eta_gap: f64,
    pub eta_max: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn eta_qsdp(
    q: &LinearMap,
    a_e: &LinearMap,
    a_i: &LinearMap,
    b_e: &DVector<f64>,
    b_i: &DVector<f64>,
    c: &SymMatrix,
    x: &SymMatrix,
    w: &SymMatrix,
    s: &SymMatrix,
    z_e: &DVector<f64>,
    z_i: &DVector<f64>,
) -> Result<EtaQsdp> {
    let q_norm = crate::opcore::operator_norm(q, 1e-8);
    let eta_d = (s.svec() - q.apply(w.svec()) + a_e.apply_adjoint(z_e) + a_i.apply_adjoint(z_i)
        + c.svec())
    .norm()
        / (1.0 + c.fro_norm());
    let eta_p = (a_e.apply(x.svec()) - b_e).norm() / (1.0 + b_e.norm());
    let eta_w = (q.apply(x.svec()) - q.apply(w.svec())).norm() / (1.0 + q_norm);
    let proj = project_psd(x)?;
    let cone = (x.svec() - proj.svec()).norm() / (1.0 + x.fro_norm());
    let compl = x.inner(s).abs() / (1.0 + x.fro_norm() + s.fro_norm());
    let eta_s = cone.max(compl);
    let slack = a_i.apply(x.svec()) - b_i;
    let neg = |v: &DVector<f64>| v.map(|t| t.min(0.0)).norm();
    let eta_i = if b_i.is_empty() {
        0.0
    } else {
        (neg(z_i) / (1.0 + z_i.norm()))
            .max(neg(&slack) / (1.0 + b_i.norm()))
            .max(slack.dot(z_i).abs() / (1.0 + slack.norm() + z_i.norm()))
    };
    let pobj = 0.5 * x.svec().dot(&q.apply(x.svec())) - c.inner(x);
    let dobj = -0.5 * w.svec().dot(&q.apply(w.svec())) + b_e.dot(z_e) + b_i.dot(z_i);
    let eta_gap = (pobj - dobj) / (1.0 + pobj.abs() + dobj.abs());
    Ok(EtaQsdp {
        eta_d,
        eta_p,
        eta_w,
        eta_s,
        eta_i,
        eta_gap,
        eta_max: eta_d.max(eta_p).max(eta_w).max(eta_s).max(eta_i),
    })
}

/// Report of the sampled majorization checks.
#[derive(Debug, Clone, Copy)]
pub struct MajorizationReport {
    /// worst slack of `fhat(y, y') - f(y)` (negative means violation)
    pub worst_majorization_slack: f64,
    /// worst slack of the three-point gradient inequality
    pub worst_gradient_slack: f64,
    pub pass: bool,
}

/// Samples random triples and checks both the majorization property and the
/// three-point inequality
/// `<grad f(w) - grad f(w'), w'' - w'> >= -1/4 ||w - w''||^2_Sigma`.
pub fn check_majorization(f: &SmoothFn, n_samples: usize, seed: u64) -> MajorizationReport {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = f.dim();
    let sigma = f.sigma_hat();
    let mut worst_major = f64::INFINITY;
    let mut worst_grad = f64::INFINITY;
    for _ in 0..n_samples {
        let draw =
            |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let w = draw(&mut rng);
        let w1 = draw(&mut rng);
        let w2 = draw(&mut rng);
        worst_major = worst_major.min(f.majorized_value(&w, &w1) - f.value(&w));
        let lhs = (f.grad(&w) - f.grad(&w1)).dot(&(&w2 - &w1));
        let d = &w - &w2;
        let rhs = -0.25 * d.dot(&sigma.apply(&d));
        worst_grad = worst_grad.min(lhs - rhs);
    }
    MajorizationReport {
        worst_majorization_slack: worst_major,
        worst_gradient_slack: worst_grad,
        pass: worst_major >= -1e-10 && worst_grad >= -1e-10,
    }
}

/// Dense extraction of one block of the curvature operator.
pub fn sigma_hat_block(prob: &MultiBlockProblem, i: usize, j: usize) -> LinearMap {
    let off = prob.block_offsets();
    prob.f.sigma_hat().submap(
        off[i]..off[i] + prob.blocks[i],
        off[j]..off[j] + prob.blocks[j],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// Single-block problem with no z part: min 1/2 y^2 s.t. y = 1.
    fn tiny_qp() -> MultiBlockProblem {
        MultiBlockProblem::new(
            vec![1],
            ProxFn::Zero { dim: 1 },
            SmoothFn::Quadratic {
                q: LinearMap::identity(1),
                lin: DVector::zeros(1),
                constant: 0.0,
            },
            vec![LinearMap::identity(1)],
            LinearMap::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn auglag_matches_hand_value_on_tiny_qp() {
        let p = tiny_qp();
        let y = DVector::zeros(1);
        let z = DVector::zeros(0);
        let x = DVector::zeros(1);
        let v = eval_majorized_auglag(&p, &y, &z, &x, &y, 1.0);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auglag_zero_data_gives_zero() {
        let p = MultiBlockProblem::new(
            vec![2],
            ProxFn::Zero { dim: 2 },
            SmoothFn::zero(2),
            vec![LinearMap::identity(2)],
            LinearMap::zeros(1, 2),
            DVector::zeros(1),
            DVector::zeros(2),
        )
        .unwrap();
        let v = eval_majorized_auglag(
            &p,
            &DVector::zeros(2),
            &DVector::zeros(1),
            &DVector::zeros(2),
            &DVector::zeros(2),
            1.0,
        );
        assert_eq!(v, 0.0);
    }

    #[test]
    fn auglag_feasible_point_drops_penalty_terms() {
        let q = LinearMap::dense_symmetric(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let prob = MultiBlockProblem::new(
            vec![2],
            ProxFn::NonNeg { dim: 2 },
            SmoothFn::Quadratic {
                q,
                lin: DVector::from_vec(vec![0.1, -0.2]),
                constant: 0.3,
            },
            vec![LinearMap::identity(2)],
            LinearMap::dense(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])),
            DVector::from_element(1, 0.7),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        // feasible point: y = c - G*z with x = 0 and y = y_anchor, so the
        // multiplier and penalty terms vanish
        let z = DVector::from_element(1, 0.25);
        let y = &prob.c - prob.g_map.apply_adjoint(&z);
        let x = DVector::zeros(2);
        let v = eval_majorized_auglag(&prob, &y, &z, &x, &y, 3.0);
        let want = prob.objective(&y, &z);
        assert!((v - want).abs() < 1e-13);
    }

    #[test]
    fn auglag_infinite_outside_domain() {
        let prob = MultiBlockProblem::new(
            vec![1],
            ProxFn::NonNeg { dim: 1 },
            SmoothFn::zero(1),
            vec![LinearMap::identity(1)],
            LinearMap::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(1),
        )
        .unwrap();
        let v = eval_majorized_auglag(
            &prob,
            &DVector::from_element(1, -1.0),
            &DVector::zeros(0),
            &DVector::zeros(1),
            &DVector::zeros(1),
            1.0,
        );
        assert!(v.is_infinite());
    }

    #[test]
    fn majorization_quadratic_exact() {
        let q = LinearMap::dense_symmetric(&DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let f = SmoothFn::Quadratic {
            q,
            lin: DVector::zeros(2),
            constant: 0.0,
        };
        let rep = check_majorization(&f, 100, 42);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.worst_majorization_slack >= -1e-12);
    }

    #[test]
    fn under_majorization_fails() {
        // curvature bound = half the true Hessian of a strictly convex
        // quadratic violates the majorization property
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let quad = SmoothFn::Quadratic {
            q: LinearMap::dense_symmetric(&h),
            lin: DVector::zeros(2),
            constant: 0.0,
        };
        let weak = LinearMap::dense_symmetric(&(0.5 * &h));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut violated = false;
        for _ in 0..100 {
            let y = DVector::from_fn(2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let a = DVector::from_fn(2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let d = &y - &a;
            let model = quad.value(&a) + quad.grad(&a).dot(&d) + 0.5 * d.dot(&weak.apply(&d));
            if model < quad.value(&y) - 1e-10 {
                violated = true;
                break;
            }
        }
        assert!(violated);
    }

    #[test]
    fn logsumexp_majorized_by_identity() {
        // Hessian of log-sum-exp is diag(p) - p p^T, dominated by the
        // identity; checked densely on a grid as the oracle.
        let n = 2;
        for a in [-2.0_f64, -0.5, 0.0, 1.0] {
            for b in [-1.5_f64, 0.25, 2.0] {
                let y = DVector::from_vec(vec![a, b]);
                let e: Vec<f64> = y.iter().map(|v| v.exp()).collect();
                let s: f64 = e.iter().sum();
                let mut h = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let pij = e[i] / s * e[j] / s;
                        h[(i, j)] = if i == j { e[i] / s - pij } else { -pij };
                    }
                }
                let (vals, _) = crate::opcore::sym_eig(&h).unwrap();
                assert!(vals.iter().all(|&v| v <= 1.0 + 1e-12));
            }
        }
        let f = SmoothFn::LogSumExp {
            dim: 2,
            sigma: LinearMap::identity(2),
        };
        let rep = check_majorization(&f, 200, 5);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn kkt_residual_zero_at_solution_of_tiny_qp() {
        let p = tiny_qp();
        let u = KKTPoint {
            x: DVector::from_element(1, -1.0),
            y: DVector::from_element(1, 1.0),
            z: DVector::zeros(0),
        };
        assert!(kkt_residual_norm(&p, &u) < 1e-14);
    }

    #[test]
    fn kkt_feasibility_slot_is_linear_in_x() {
        // the third slot is G x - b, so perturbing x by delta moves it by
        // G delta exactly
        let g = LinearMap::dense(DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 2.0, 1.0]));
        let prob = MultiBlockProblem::new(
            vec![3],
            ProxFn::Zero { dim: 3 },
            SmoothFn::zero(3),
            vec![LinearMap::zeros(3, 3)],
            g.clone(),
            g.apply(&DVector::from_vec(vec![0.1, 0.2, 0.3])),
            DVector::zeros(3),
        )
        .unwrap();
        let u = KKTPoint {
            x: DVector::from_vec(vec![1.0, -1.0, 0.5]),
            y: DVector::zeros(3),
            z: DVector::zeros(2),
        };
        let delta = DVector::from_vec(vec![0.3, -0.2, 0.7]);
        let mut u2 = u.clone();
        u2.x += &delta;
        let r1 = kkt_residual(&prob, &u);
        let r2 = kkt_residual(&prob, &u2);
        let slot = 3 + 3;
        let diff = DVector::from(r2.rows(slot, 2)) - DVector::from(r1.rows(slot, 2));
        assert!((diff - g.apply(&delta)).norm() < 1e-14);
    }

    #[test]
    fn auglag_matches_straight_line_expansion() {
        // cross-check against an inline expansion of
        // phi(w) + hhat(w, w') + <A*w - c, x> + sigma/2 ||A*w - c||^2
        // with w = (y, z)
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = {
            let r = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            LinearMap::dense_symmetric(&(&r * r.transpose()))
        };
        let lin = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
        let g = LinearMap::dense(DMatrix::from_fn(2, 4, |_, _| rng.random::<f64>() - 0.5));
        let prob = MultiBlockProblem::new(
            vec![3],
            ProxFn::NonNeg { dim: 3 },
            SmoothFn::Quadratic {
                q: q.clone(),
                lin: lin.clone(),
                constant: 0.7,
            },
            vec![LinearMap::dense(DMatrix::from_fn(3, 4, |_, _| rng.random::<f64>() - 0.5))],
            g.clone(),
            g.apply(&DVector::from_vec(vec![0.1, 0.2, 0.3, -0.1])),
            DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5),
        )
        .unwrap();
        let y = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let ya = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let z = DVector::from_fn(2, |_, _| rng.random::<f64>() - 0.5);
        let x = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
        let sigma = 1.7;
        let got = eval_majorized_auglag(&prob, &y, &z, &x, &ya, sigma);
        // straight-line expansion
        let f_at = |v: &DVector<f64>| 0.5 * v.dot(&q.apply(v)) + lin.dot(v) + 0.7;
        let grad_at = q.apply(&ya) + &lin;
        let d = &y - &ya;
        let hhat = f_at(&ya) + grad_at.dot(&d) + 0.5 * d.dot(&q.apply(&d));
        let aw = prob.f_maps[0].apply_adjoint(&y) + g.apply_adjoint(&z) - &prob.c;
        let want = 0.0 /* p(y1) with y >= 0 */ + hhat - prob.b.dot(&z)
            + aw.dot(&x)
            + 0.5 * sigma * aw.norm_squared();
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn eta_sdp_toy_values() {
        // toy: A = tr, b = 1, C = diag(1,2); optimum X = diag(1,0),
        // z = 1, S = diag(0,1)
        let tr = SymMatrix::identity(2);
        let a = LinearMap::dense(DMatrix::from_row_slice(1, tr.svec().len(), tr.svec().as_slice()));
        let b = DVector::from_element(1, 1.0);
        let c = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let x = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let z = DVector::from_element(1, 1.0);
        let s = SymMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let eta = eta_sdp(&a, &b, &c, &x, &z, &s).unwrap();
        assert!(eta.eta_max <= 1e-12, "{eta:?}");
        assert!(eta.eta_gap.abs() <= 1e-12);

        // X = -I, otherwise optimal: cone violation is the full norm
        let xneg = SymMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0]));
        let eta = eta_sdp(&a, &b, &c, &xneg, &z, &s).unwrap();
        let fro = xneg.fro_norm();
        assert!(eta.eta_s >= fro / (1.0 + fro) - 1e-12);

        // X scaled by 2: eta_p = |tr(2X) - 1| / (1 + 1) = 0.5
        let x2 = SymMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let eta = eta_sdp(&a, &b, &c, &x2, &z, &s).unwrap();
        assert!((eta.eta_p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eta_qsdp_examples() {
        // Q = 0 and W = X make eta_w vanish; an exact KKT tuple scores zero.
        let n = 2;
        let dim = crate::opcore::svec_dim(n);
        let q = LinearMap::zeros(dim, dim);
        let tr = SymMatrix::identity(n);
        let a_e = LinearMap::dense(DMatrix::from_row_slice(1, tr.svec().len(), tr.svec().as_slice()));
        let a_i = LinearMap::zeros(0, dim);
        let b_e = DVector::from_element(1, 1.0);
        let b_i = DVector::zeros(0);
        // dual constraint reads S - QW + A_E* z_E + A_I* z_I + C = 0: with
        // X* = diag(1,0), z_E = 1, S = diag(0,1) take C = -diag(1,2)
        let c = SymMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let z_e = DVector::from_element(1, 1.0);
        let s = SymMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let x = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let w = x.clone();
        let z_i = DVector::zeros(0);
        let eta = eta_qsdp(&q, &a_e, &a_i, &b_e, &b_i, &c, &x, &w, &s, &z_e, &z_i).unwrap();
        assert!(eta.eta_max <= 1e-12, "{eta:?}");
        assert!(eta.eta_w == 0.0);
    }

    #[test]
    fn eta_qsdp_negative_multiplier_quotient() {
        let n = 2;
        let dim = crate::opcore::svec_dim(n);
        let q = LinearMap::zeros(dim, dim);
        let a_e = LinearMap::zeros(0, dim);
        let a_i = LinearMap::dense(DMatrix::zeros(2, dim));
        let b_e = DVector::zeros(0);
        let b_i = DVector::zeros(2);
        let c = SymMatrix::zeros(n);
        let x = SymMatrix::zeros(n);
        let w = SymMatrix::zeros(n);
        let s = SymMatrix::zeros(n);
        let z_e = DVector::zeros(0);
        // one entry -0.1 with unit norm: eta_i >= 0.1 / 2
        let z_i = DVector::from_vec(vec![-0.1, (1.0_f64 - 0.01).sqrt()]);
        let eta = eta_qsdp(&q, &a_e, &a_i, &b_e, &b_i, &c, &x, &w, &s, &z_e, &z_i).unwrap();
        assert!(eta.eta_i >= 0.1 / 2.0 - 1e-12);
    }

    #[test]
    fn b_outside_range_rejected() {
        let g = LinearMap::dense(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let err = MultiBlockProblem::new(
            vec![2],
            ProxFn::Zero { dim: 2 },
            SmoothFn::zero(2),
            vec![LinearMap::dense(DMatrix::zeros(2, 1))],
            g,
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::zeros(1),
        );
        assert!(err.is_err());
    }
}
