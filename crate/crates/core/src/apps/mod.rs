//! Application front-ends: dual linear SDP, dual convex quadratic SDP,
//! constrained lasso and basis pursuit, plus synthetic instance generators
//! and desk-scale ground-truth oracles.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ipalm::GenericProblem;
use crate::model::{
    eta_qsdp, stack, EtaQsdp, EtaSdp, KKTPoint, MultiBlockProblem, SmoothFn,
};
use crate::opcore::{
    operator_norm, svec_dim, sym_eig, CholeskyHandle, LinearMap, ProxBlock, ProxFn, SymMatrix,
};
use crate::sgsadmm::{EtaSummary, IterMetric};

pub mod oracles;

pub use oracles::{oracle_lp_vertex, oracle_small_qp, oracle_small_qsdp, QpSolution};

/// Cone blocks of an SDP instance: semidefinite blocks in svec coordinates
/// and diagonal (nonnegative-vector) blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConeBlock {
    Psd(usize),
    Diag(usize),
}

impl ConeBlock {
    pub fn packed_dim(&self) -> usize {
        match self {
            ConeBlock::Psd(n) => svec_dim(*n),
            ConeBlock::Diag(d) => *d,
        }
    }
}

/// Linear SDP data: `min <C, X> s.t. A X = b, X in cone`.
#[derive(Debug, Clone, PartialEq)]
pub struct SDPInstance {
    pub blocks: Vec<ConeBlock>,
    /// constraint rows in packed coordinates (m x dim)
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// packed cost coefficients
    pub c: DVector<f64>,
}

impl SDPInstance {
    pub fn single(a_rows: &[SymMatrix], b: DVector<f64>, c: &SymMatrix) -> Self {
        let n = c.order();
        let dim = svec_dim(n);
        let mut a = DMatrix::zeros(a_rows.len(), dim);
        for (i, row) in a_rows.iter().enumerate() {
            assert_eq!(row.order(), n);
            for j in 0..dim {
                a[(i, j)] = row.svec()[j];
            }
        }
        Self {
            blocks: vec![ConeBlock::Psd(n)],
            a,
            b,
            c: c.svec().clone(),
        }
    }

    pub fn packed_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.packed_dim()).sum()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// Indicator of the cone as a prox function over the packed coordinates.
    pub fn cone_prox(&self) -> ProxFn {
        if self.blocks.len() == 1 {
            return match self.blocks[0] {
                ConeBlock::Psd(n) => ProxFn::Psd { order: n },
                ConeBlock::Diag(d) => ProxFn::NonNeg { dim: d },
            };
        }
        ProxFn::Separable(
            self.blocks
                .iter()
                .map(|blk| ProxBlock {
                    dim: blk.packed_dim(),
                    f: match blk {
                        ConeBlock::Psd(n) => ProxFn::Psd { order: *n },
                        ConeBlock::Diag(d) => ProxFn::NonNeg { dim: *d },
                    },
                })
                .collect(),
        )
    }

    /// Full row rank certificate via Cholesky of A A*.
    pub fn check_full_rank(&self) -> Result<()> {
        if self.num_constraints() == 0 {
            return Ok(());
        }
        let gram = &self.a * self.a.transpose();
        CholeskyHandle::factor(&gram).map_err(|e| match e {
            Error::RankDeficient { pivot } => Error::InvalidInput(format!(
                "constraint rows are linearly dependent (pivot {pivot} of A A*)"
            )),
            other => other,
        })?;
        Ok(())
    }

    /// Normalized accuracy quotients of a candidate primal/dual tuple in
    /// packed coordinates.
    pub fn eta(&self, x: &DVector<f64>, z: &DVector<f64>, s: &DVector<f64>) -> Result<EtaSdp> {
        let cone = self.cone_prox();
        let proj = cone.project_domain(x)?;
        let eta_d = (self.a.transpose() * z + s - &self.c).norm() / (1.0 + self.c.norm());
        let eta_p = (&self.a * x - &self.b).norm() / (1.0 + self.b.norm());
        let cone_dist = (x - proj).norm() / (1.0 + x.norm());
        let compl = x.dot(s).abs() / (1.0 + x.norm() + s.norm());
        let eta_s = cone_dist.max(compl);
        let pobj = self.c.dot(x);
        let dobj = self.b.dot(z);
        let eta_gap = (pobj - dobj) / (1.0 + pobj.abs() + dobj.abs());
        Ok(EtaSdp {
            eta_d,
            eta_p,
            eta_s,
            eta_gap,
            eta_max: eta_d.max(eta_p).max(eta_s),
        })
    }
}

/// Maps the dual SDP `min delta_cone(Y) - <b, z> s.t. Y + A* z = C` onto the
/// multi-block model: a single y block carrying the cone indicator, identity
/// F, and G = A. The multiplier converges to the primal X.
pub fn build_sdp_dual(inst: &SDPInstance, allow_rank_deficient: bool) -> Result<MultiBlockProblem> {
    if !allow_rank_deficient {
        inst.check_full_rank()?;
    }
    let dim = inst.packed_dim();
    MultiBlockProblem::new(
        vec![dim],
        inst.cone_prox(),
        SmoothFn::zero(dim),
        vec![LinearMap::identity(dim)],
        LinearMap::dense(inst.a.clone()),
        inst.b.clone(),
        inst.c.clone(),
    )
}

/// Stopping metric for SDP runs: the iterate maps as X = multiplier,
/// S = y, z = z.
#[derive(Debug, Clone)]
pub struct SdpMetric {
    pub inst: SDPInstance,
}

impl IterMetric for SdpMetric {
    fn eval(&self, _prob: &MultiBlockProblem, u: &KKTPoint) -> Result<EtaSummary> {
        let eta = self.inst.eta(&u.x, &u.z, &u.y)?;
        Ok(EtaSummary {
            eta_max: eta.eta_max,
            eta_gap: eta.eta_gap,
        })
    }
}

/// The 2x2 example instance: trace constraint, C = diag(1, 2). Optimum:
/// X = diag(1, 0), z = 1, S = diag(0, 1), value 1.
pub fn toy_sdp() -> SDPInstance {
    SDPInstance::single(
        &[SymMatrix::identity(2)],
        DVector::from_element(1, 1.0),
        &SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
    )
}

/// Convex quadratic SDP data:
/// `min 1/2 <X, Q X> - <C, X>  s.t.  A_E X = b_E, A_I X >= b_I, X PSD`.
#[derive(Debug, Clone)]
pub struct QSDPInstance {
    pub n: usize,
    pub q: LinearMap,
    pub a_e: DMatrix<f64>,
    pub a_i: DMatrix<f64>,
    pub b_e: DVector<f64>,
    pub b_i: DVector<f64>,
    pub c: SymMatrix,
    /// positive diagonal of the scaling matrix D
    pub d_scale: DVector<f64>,
}

impl QSDPInstance {
    pub fn sdim(&self) -> usize {
        svec_dim(self.n)
    }

    pub fn m_e(&self) -> usize {
        self.a_e.nrows()
    }

    pub fn m_i(&self) -> usize {
        self.a_i.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.sdim();
        if self.a_e.ncols() != dim
            || self.a_i.ncols() != dim
            || self.b_e.len() != self.m_e()
            || self.b_i.len() != self.m_i()
            || self.q.nrows() != dim
            || self.q.ncols() != dim
            || self.d_scale.len() != self.m_i()
        {
            return Err(Error::InvalidInput("inconsistent QSDP dimensions".into()));
        }
        if self.d_scale.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidInput("D must have positive diagonal".into()));
        }
        Ok(())
    }

    /// The default scaling `sqrt(||A_I||)/2` on the diagonal.
    pub fn default_d_scale(a_i: &DMatrix<f64>) -> DVector<f64> {
        let m_i = a_i.nrows();
        if m_i == 0 {
            return DVector::zeros(0);
        }
        let norm = operator_norm(&LinearMap::dense(a_i.clone()), 1e-8);
        DVector::from_element(m_i, (norm.sqrt() / 2.0).max(1e-3))
    }
}

/// Variable layout of the dual QSDP as a multi-block problem: y blocks are
/// ((S, s), W, z_E) in sweep order, the z role is taken by z_I, and the
/// multiplier carries (X, D^{-1}(A_I X - b_I)).
#[derive(Debug, Clone)]
pub struct QsdpLayout {
    pub n: usize,
    pub m_e: usize,
    pub m_i: usize,
    /// human-readable update order of one iteration
    pub update_order: Vec<&'static str>,
}

impl QsdpLayout {
    pub fn split(&self, u: &KKTPoint) -> QsdpPoint {
        let sdim = svec_dim(self.n);
        QsdpPoint {
            x: SymMatrix::from_svec(DVector::from(u.x.rows(0, sdim))).expect("svec"),
            s: SymMatrix::from_svec(DVector::from(u.y.rows(0, sdim))).expect("svec"),
            slack: DVector::from(u.y.rows(sdim, self.m_i)),
            w: SymMatrix::from_svec(DVector::from(u.y.rows(sdim + self.m_i, sdim))).expect("svec"),
            z_e: DVector::from(u.y.rows(2 * sdim + self.m_i, self.m_e)),
            z_i: u.z.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QsdpPoint {
    pub x: SymMatrix,
    pub s: SymMatrix,
    pub slack: DVector<f64>,
    pub w: SymMatrix,
    pub z_e: DVector<f64>,
    pub z_i: DVector<f64>,
}

/// Builds the dual QSDP
/// `min delta_PSD(S) + delta_+(s) + 1/2 <W, Q W> - <b_E, z_E> - <b_I, z_I>`
/// subject to `S - Q W + A_E* z_E + A_I* z_I + C = 0` and `D(s - z_I) = 0`
/// as a 3-block problem with z_I in the z role, so the large z_I system is
/// solved once per iteration.
pub fn build_qsdp_dual(inst: &QSDPInstance) -> Result<(MultiBlockProblem, QsdpLayout)> {
    inst.validate()?;
    let sdim = inst.sdim();
    let (m_e, m_i) = (inst.m_e(), inst.m_i());
    let x_dim = sdim + m_i;
    let d_diag = LinearMap::diagonal(inst.d_scale.clone());

    let blocks = vec![sdim + m_i, sdim, m_e];
    let p = ProxFn::Separable(vec![
        ProxBlock {
            dim: sdim,
            f: ProxFn::Psd { order: inst.n },
        },
        ProxBlock {
            dim: m_i,
            f: ProxFn::NonNeg { dim: m_i },
        },
    ]);
    let y_dim: usize = blocks.iter().sum();
    let q_full = LinearMap::block_diag(vec![
        LinearMap::zeros(sdim + m_i, sdim + m_i),
        inst.q.clone(),
        LinearMap::zeros(m_e, m_e),
    ]);
    let mut lin = DVector::zeros(y_dim);
    for k in 0..m_e {
        lin[2 * sdim + m_i + k] = -inst.b_e[k];
    }
    let f = SmoothFn::Quadratic {
        q: q_full,
        lin,
        constant: 0.0,
    };

    // F_1 (X, xI) = (X; D xI)
    let f1 = LinearMap::block(
        vec![sdim, m_i],
        vec![sdim, m_i],
        vec![
            (0, 0, LinearMap::identity(sdim)),
            (1, 1, d_diag.clone()),
        ],
    );
    // F_2 (X, xI) = -Q X
    let f2 = LinearMap::block(
        vec![sdim],
        vec![sdim, m_i],
        vec![(0, 0, inst.q.clone().scale(-1.0))],
    );
    // F_3 (X, xI) = A_E X
    let f3 = LinearMap::block(
        vec![m_e],
        vec![sdim, m_i],
        vec![(0, 0, LinearMap::dense(inst.a_e.clone()))],
    );
    // G (X, xI) = A_I X - D xI
    let g = LinearMap::block(
        vec![m_i],
        vec![sdim, m_i],
        vec![
            (0, 0, LinearMap::dense(inst.a_i.clone())),
            (0, 1, d_diag.scale(-1.0)),
        ],
    );
    let mut c = DVector::zeros(x_dim);
    for k in 0..sdim {
        c[k] = -inst.c.svec()[k];
    }
    let prob = MultiBlockProblem::new(blocks, p, f, vec![f1, f2, f3], g, inst.b_i.clone(), c)?;
    let layout = QsdpLayout {
        n: inst.n,
        m_e,
        m_i,
        update_order: vec![
            "z_E (backward)",
            "W (backward)",
            "(S, s)",
            "W",
            "z_E",
            "z_I",
            "multipliers",
        ],
    };
    Ok((prob, layout))
}

/// Proximal terms for the dual QSDP blocks: the W block gets
/// `rho I - sigma Q Q` in exact mode (closed-form subproblems) or a small
/// ridge in iterative mode so that the block stays positive definite.
pub fn qsdp_d_ops(
    inst: &QSDPInstance,
    prob: &MultiBlockProblem,
    sigma: f64,
    exact_w_block: bool,
) -> Vec<LinearMap> {
    let sdim = inst.sdim();
    let q_norm = operator_norm(&inst.q, 1e-8);
    let d2 = if exact_w_block {
        let rho = sigma * q_norm * q_norm + 1e-8;
        LinearMap::sum(vec![
            LinearMap::scaled_identity(sdim, rho),
            inst.q.clone().compose(inst.q.clone()).assume_self_adjoint().scale(-sigma),
        ])
    } else {
        let eps = 1e-8 * (1.0 + sigma * q_norm * q_norm);
        LinearMap::scaled_identity(sdim, eps)
    };
    vec![
        LinearMap::zeros(prob.blocks[0], prob.blocks[0]),
        d2,
        LinearMap::zeros(prob.blocks[2], prob.blocks[2]),
    ]
}

/// Stopping metric for QSDP runs.
#[derive(Debug, Clone)]
pub struct QsdpMetric {
    pub inst: QSDPInstance,
    pub layout: QsdpLayout,
}

impl IterMetric for QsdpMetric {
    fn eval(&self, _prob: &MultiBlockProblem, u: &KKTPoint) -> Result<EtaSummary> {
        let pt = self.layout.split(u);
        let eta = self.qsdp_eta(&pt)?;
        Ok(EtaSummary {
            eta_max: eta.eta_max,
            eta_gap: eta.eta_gap,
        })
    }
}

impl QsdpMetric {
    pub fn qsdp_eta(&self, pt: &QsdpPoint) -> Result<EtaQsdp> {
        eta_qsdp(
            &self.inst.q,
            &LinearMap::dense(self.inst.a_e.clone()),
            &LinearMap::dense(self.inst.a_i.clone()),
            &self.inst.b_e,
            &self.inst.b_i,
            &self.inst.c,
            &pt.x,
            &pt.w,
            &pt.s,
            &pt.z_e,
            &pt.z_i,
        )
    }
}

/// Constrained lasso data:
/// `min 1/2 ||Phi x - eta||^2 + lambda ||x||_1 s.t. A_E x = b_E, A_I x >= b_I`.
#[derive(Debug, Clone)]
pub struct LassoInstance {
    pub phi_mat: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub lambda: f64,
    pub a_e: DMatrix<f64>,
    pub b_e: DVector<f64>,
    pub a_i: DMatrix<f64>,
    pub b_i: DVector<f64>,
}

impl LassoInstance {
    pub fn unconstrained(phi_mat: DMatrix<f64>, eta: DVector<f64>, lambda: f64) -> Self {
        let n = phi_mat.ncols();
        Self {
            phi_mat,
            eta,
            lambda,
            a_e: DMatrix::zeros(0, n),
            b_e: DVector::zeros(0),
            a_i: DMatrix::zeros(0, n),
            b_i: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.phi_mat.ncols()
    }

    pub fn primal_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.phi_mat * x - &self.eta).norm_squared()
            + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct LassoLayout {
    pub n: usize,
    pub m_e: usize,
    pub m_i: usize,
}

impl LassoLayout {
    /// The recovered primal variable is the negated head of the multiplier.
    pub fn primal_from(&self, u: &KKTPoint) -> DVector<f64> {
        -DVector::from(u.x.rows(0, self.n))
    }
}

/// Dualizes the constrained lasso through its composite quadratic form:
/// block 1 carries the box and nonnegativity indicators, block 2 the
/// quadratic from Phi^T Phi, and z stacks the equality and inequality
/// multipliers.
pub fn build_constrained_lasso(inst: &LassoInstance) -> Result<(MultiBlockProblem, LassoLayout)> {
    if inst.lambda <= 0.0 {
        return Err(Error::InvalidInput("lambda must be positive".into()));
    }
    let n = inst.n();
    let (m_e, m_i) = (inst.a_e.nrows(), inst.a_i.nrows());
    let q_qp = {
        let q = inst.phi_mat.transpose() * &inst.phi_mat;
        LinearMap::dense_symmetric(&q)
    };
    let c_qp = inst.phi_mat.transpose() * &inst.eta;

    let blocks = vec![n + m_i, n];
    let p = ProxFn::Separable(vec![
        ProxBlock {
            dim: n,
            f: ProxFn::uniform_box(n, -inst.lambda, inst.lambda),
        },
        ProxBlock {
            dim: m_i,
            f: ProxFn::NonNeg { dim: m_i },
        },
    ]);
    let y_dim = n + m_i + n;
    let f = SmoothFn::Quadratic {
        q: LinearMap::block_diag(vec![LinearMap::zeros(n + m_i, n + m_i), q_qp.clone()]),
        lin: DVector::zeros(y_dim),
        constant: 0.0,
    };
    let f1 = LinearMap::identity(n + m_i);
    let f2 = LinearMap::block(
        vec![n],
        vec![n, m_i],
        vec![(0, 0, q_qp)],
    );
    // G (x, x') = -(A_E x; A_I x + x')
    let mut entries = vec![
        (0, 0, LinearMap::dense(inst.a_e.clone()).scale(-1.0)),
        (1, 0, LinearMap::dense(inst.a_i.clone()).scale(-1.0)),
    ];
    if m_i > 0 {
        entries.push((1, 1, LinearMap::scaled_identity(m_i, -1.0)));
    }
    let g = LinearMap::block(vec![m_e, m_i], vec![n, m_i], entries);
    let b = stack(&[inst.b_e.clone(), inst.b_i.clone()]);
    let c = stack(&[c_qp, DVector::zeros(m_i)]);
    let prob = MultiBlockProblem::new(blocks, p, f, vec![f1, f2], g, b, c)?;
    Ok((prob, LassoLayout { n, m_e, m_i }))
}

/// Dual basis pursuit `min delta_{||.||_inf <= 1}(y) - <b, z> s.t. G* z - y = 0`
/// for the primal `min ||x||_1 s.t. G x = b`; the multiplier converges to the
/// primal solution directly.
pub fn build_basis_pursuit_dual(g: &DMatrix<f64>, b: &DVector<f64>) -> Result<MultiBlockProblem> {
    let n = g.ncols();
    MultiBlockProblem::new(
        vec![n],
        ProxFn::uniform_box(n, -1.0, 1.0),
        SmoothFn::zero(n),
        vec![LinearMap::scaled_identity(n, -1.0)],
        LinearMap::dense(g.clone()),
        b.clone(),
        DVector::zeros(n),
    )
    .map_err(|e| match e {
        Error::InvalidInput(msg) if msg.contains("range") => {
            Error::InvalidInput(format!("basis pursuit needs b in range(G): {msg}"))
        }
        other => other,
    })
}

fn rand_unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>() * 2.0 - 1.0
}

fn rand_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let mut m = SymMatrix::zeros(n);
    for j in 0..n {
        for i in 0..=j {
            m.set(i, j, rand_unit(rng));
        }
    }
    m
}

/// Seeded random dual-SDP instance with a planted strictly feasible primal
/// point (defining b) and a strictly feasible dual slack (defining C), so the
/// KKT system is solvable.
pub fn gen_random_sdp(n: usize, m: usize, seed: u64) -> SDPInstance {
    assert!(n >= 2);
    let dim = svec_dim(n);
    assert!(m <= dim, "cannot draw {m} independent rows in dimension {dim}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<SymMatrix> = Vec::with_capacity(m);
    loop {
        rows.clear();
        for _ in 0..m {
            // sparse symmetric row: roughly 30% fill of the upper triangle
            let mut s = SymMatrix::zeros(n);
            let mut nonzero = false;
            for j in 0..n {
                for i in 0..=j {
                    if rng.random::<f64>() < 0.3 {
                        s.set(i, j, rand_unit(&mut rng));
                        nonzero = true;
                    }
                }
            }
            if !nonzero {
                s.set(0, 0, 1.0);
            }
            rows.push(s);
        }
        // full row rank required
        let mut a = DMatrix::zeros(m, dim);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..dim {
                a[(i, j)] = r.svec()[j];
            }
        }
        if m == 0 || CholeskyHandle::factor(&(&a * a.transpose())).is_ok() {
            break;
        }
    }
    // strictly feasible primal X0 > 0 sets b
    let x0 = {
        let w = rand_sym(n, &mut rng).to_dense();
        let shift = {
            let (vals, _) = sym_eig(&w).expect("eig");
            vals.iter().cloned().fold(0.0_f64, f64::min).abs() + 1.0
        };
        SymMatrix::from_dense(&(0.3 * w + DMatrix::identity(n, n) * shift * 0.3))
    };
    let b = DVector::from_iterator(m, rows.iter().map(|r| r.inner(&x0)));
    // strictly feasible dual slack sets C = S0 + A* z0
    let s0 = {
        let w = rand_sym(n, &mut rng).to_dense();
        let shift = {
            let (vals, _) = sym_eig(&w).expect("eig");
            vals.iter().cloned().fold(0.0_f64, f64::min).abs() + 1.0
        };
        SymMatrix::from_dense(&(0.2 * w + DMatrix::identity(n, n) * shift * 0.2))
    };
    let z0 = DVector::from_fn(m, |_, _| rand_unit(&mut rng));
    let mut c = s0.svec().clone();
    for (i, r) in rows.iter().enumerate() {
        c += r.svec() * z0[i];
    }
    let c = SymMatrix::from_svec(c).expect("svec");
    SDPInstance::single(&rows, b, &c)
}

/// Seeded QSDP instance following the binary-integer-quadratic relaxation
/// constraint pattern on an n x n matrix variable (the last row/column holds
/// the linear part), with a symmetrized-Kronecker quadratic of prescribed
/// factor ranks.
pub fn gen_biq_qsdp(n: usize, rank_a: usize, rank_b: usize, seed: u64) -> QSDPInstance {
    assert!(n >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nbar = n - 1;
    let dim = svec_dim(n);

    let mut eq_rows: Vec<SymMatrix> = Vec::new();
    // diag(Xbar)_i = x_i  <=>  X_ii - X_in = 0
    for i in 0..nbar {
        let mut m = SymMatrix::zeros(n);
        m.set(i, i, 1.0);
        m.set(i, n - 1, -0.5);
        eq_rows.push(m);
    }
    // corner X_nn = 1
    let mut corner = SymMatrix::zeros(n);
    corner.set(n - 1, n - 1, 1.0);
    eq_rows.push(corner);
    let m_e = eq_rows.len();
    let mut b_e = DVector::zeros(m_e);
    b_e[m_e - 1] = 1.0;

    // inequalities per pair i < j: x_i - Xbar_ij >= 0, x_j - Xbar_ij >= 0,
    // Xbar_ij - x_i - x_j >= -1
    let mut in_rows: Vec<SymMatrix> = Vec::new();
    let mut b_i_vals: Vec<f64> = Vec::new();
    for i in 0..nbar {
        for j in i + 1..nbar {
            let mut m1 = SymMatrix::zeros(n);
            m1.set(i, n - 1, 0.5);
            m1.set(i, j, -0.5);
            in_rows.push(m1);
            b_i_vals.push(0.0);
            let mut m2 = SymMatrix::zeros(n);
            m2.set(j, n - 1, 0.5);
            m2.set(i, j, -0.5);
            in_rows.push(m2);
            b_i_vals.push(0.0);
            let mut m3 = SymMatrix::zeros(n);
            m3.set(i, j, 0.5);
            m3.set(i, n - 1, -0.5);
            m3.set(j, n - 1, -0.5);
            in_rows.push(m3);
            b_i_vals.push(-1.0);
        }
    }

    let pack = |rows: &[SymMatrix]| {
        let mut a = DMatrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..dim {
                a[(i, j)] = r.svec()[j];
            }
        }
        a
    };
    let a_e = pack(&eq_rows);
    let a_i = pack(&in_rows);

    // symmetrized Kronecker factors of prescribed rank, normalized
    let psd_factor = |rank: usize, rng: &mut ChaCha8Rng| {
        let r = DMatrix::from_fn(n, rank.clamp(1, n), |_, _| rand_unit(rng));
        let m = &r * r.transpose();
        let norm = operator_norm(&LinearMap::dense_symmetric(&m), 1e-8).max(1e-12);
        m / norm
    };
    let fa = psd_factor(rank_a, &mut rng);
    let fb = psd_factor(rank_b, &mut rng);
    let q = LinearMap::sym_kron(fa, fb);

    let c = rand_sym(n, &mut rng);
    let d_scale = QSDPInstance::default_d_scale(&a_i);
    QSDPInstance {
        n,
        q,
        a_e,
        a_i,
        b_e,
        b_i: DVector::from_vec(b_i_vals),
        c,
        d_scale,
    }
}

/// The strictly feasible point planted by the BIQ constraint pattern:
/// x = 0.3, Xbar = x x^T + diag(x - x^2), corner 1.
pub fn biq_strict_point(n: usize) -> SymMatrix {
    let nbar = n - 1;
    let t = 0.3;
    let mut x = DMatrix::zeros(n, n);
    for i in 0..nbar {
        for j in 0..nbar {
            x[(i, j)] = t * t;
        }
        x[(i, i)] = t;
        x[(i, n - 1)] = t;
        x[(n - 1, i)] = t;
    }
    x[(n - 1, n - 1)] = 1.0;
    SymMatrix::from_dense(&x)
}

/// Options for the random multi-block instances used by the equivalence and
/// certificate suites.
#[derive(Debug, Clone)]
pub struct MultiBlockGenOptions {
    pub blocks: Vec<usize>,
    pub x_dim: usize,
    pub z_dim: usize,
    /// rank of G (z_dim for surjective instances)
    pub g_rank: usize,
    /// block-1 function: false = zero, true = nonnegativity indicator
    pub nonneg_block1: bool,
}

impl Default for MultiBlockGenOptions {
    fn default() -> Self {
        Self {
            blocks: vec![5, 4, 3],
            x_dim: 6,
            z_dim: 4,
            g_rank: 3,
            nonneg_block1: true,
        }
    }
}

/// Seeded random multi-block instance with a planted KKT point, returned
/// along with the plant. `b` is set from the planted multiplier so the
/// equivalence initialization `G x0 = b` is available at `x0 = x*`.
pub fn gen_multiblock(seed: u64, opts: &MultiBlockGenOptions) -> (MultiBlockProblem, KKTPoint) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_dim: usize = opts.blocks.iter().sum();

    let q = {
        let r = DMatrix::from_fn(y_dim, y_dim, |_, _| rand_unit(&mut rng));
        let m = &r * r.transpose() / y_dim as f64 + DMatrix::identity(y_dim, y_dim) * 0.1;
        LinearMap::dense_symmetric(&m)
    };
    let f_maps: Vec<LinearMap> = opts
        .blocks
        .iter()
        .map(|&d| LinearMap::dense(DMatrix::from_fn(d, opts.x_dim, |_, _| rand_unit(&mut rng))))
        .collect();
    let g_map = {
        let u = DMatrix::from_fn(opts.z_dim, opts.g_rank.min(opts.z_dim), |_, _| {
            rand_unit(&mut rng)
        });
        let v = DMatrix::from_fn(opts.g_rank.min(opts.z_dim), opts.x_dim, |_, _| {
            rand_unit(&mut rng)
        });
        LinearMap::dense(u * v)
    };

    // plant the KKT point
    let mut y_star = DVector::from_fn(y_dim, |_, _| rand_unit(&mut rng));
    if opts.nonneg_block1 {
        for i in 0..opts.blocks[0] {
            // roughly half the coordinates active at zero
            y_star[i] = if rng.random::<f64>() < 0.5 {
                0.0
            } else {
                rng.random::<f64>() + 0.1
            };
        }
    }
    let x_star = DVector::from_fn(opts.x_dim, |_, _| rand_unit(&mut rng));
    let z_star = DVector::from_fn(opts.z_dim, |_, _| rand_unit(&mut rng));

    // choose the linear term so the stationarity condition holds at the plant
    let grad_wo_lin = q.apply(&y_star) + {
        let mut fx = DVector::zeros(y_dim);
        let mut off = 0;
        for (i, fm) in f_maps.iter().enumerate() {
            let t = fm.apply(&x_star);
            for k in 0..opts.blocks[i] {
                fx[off + k] = t[k];
            }
            off += opts.blocks[i];
        }
        fx
    };
    let mut lin = -grad_wo_lin.clone();
    if opts.nonneg_block1 {
        for i in 0..opts.blocks[0] {
            if y_star[i] == 0.0 {
                // active coordinate: leave a nonnegative residual in the
                // normal cone
                lin[i] += rng.random::<f64>() * 0.5;
            }
        }
    }
    let p = if opts.nonneg_block1 {
        ProxFn::NonNeg {
            dim: opts.blocks[0],
        }
    } else {
        ProxFn::Zero {
            dim: opts.blocks[0],
        }
    };
    let f = SmoothFn::Quadratic {
        q,
        lin,
        constant: 0.0,
    };
    let b = g_map.apply(&x_star);
    let c = {
        let mut fy = DVector::zeros(opts.x_dim);
        let mut off = 0;
        for (i, fm) in f_maps.iter().enumerate() {
            fy += fm.apply_adjoint(&DVector::from(y_star.rows(off, opts.blocks[i])));
            off += opts.blocks[i];
        }
        fy + g_map.apply_adjoint(&z_star)
    };
    let prob = MultiBlockProblem::new(opts.blocks.clone(), p, f, f_maps, g_map, b, c)
        .expect("generated instance is consistent");
    (
        prob,
        KKTPoint {
            x: x_star,
            y: y_star,
            z: z_star,
        },
    )
}

/// Proximal terms that keep block 1 diagonal when it carries a nonsmooth
/// function: `D_1 = rho I - (Sigma_11 + sigma F_1 F_1*)` with a small margin,
/// zero elsewhere.
pub fn default_d_ops(prob: &MultiBlockProblem, sigma: f64) -> Vec<LinearMap> {
    let mut out: Vec<LinearMap> = prob
        .blocks
        .iter()
        .map(|&d| LinearMap::zeros(d, d))
        .collect();
    if !matches!(prob.p, ProxFn::Zero { .. }) {
        let d1 = prob.blocks[0];
        let n11 = LinearMap::sum(vec![
            crate::model::sigma_hat_block(prob, 0, 0),
            prob.f_maps[0].gram().scale(sigma),
        ]);
        let dense = n11.to_dense();
        let mut diag_only = true;
        for r in 0..d1 {
            for c in 0..d1 {
                if r != c && dense[(r, c)] != 0.0 {
                    diag_only = false;
                }
            }
        }
        if !diag_only {
            let rho = operator_norm(&n11.assume_self_adjoint(), 1e-10) * (1.0 + 1e-3) + 1e-10;
            out[0] = LinearMap::sum(vec![
                LinearMap::scaled_identity(d1, rho),
                LinearMap::dense_symmetric(&dense).scale(-1.0),
            ]);
        }
    }
    out
}

/// Seeded generic problem with a planted KKT pair for the proximal-ALM
/// certificate suite.
pub fn gen_generic(seed: u64, w_dim: usize, x_dim: usize, nonneg: bool) -> (GenericProblem, DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = {
        let r = DMatrix::from_fn(w_dim, w_dim, |_, _| rand_unit(&mut rng));
        LinearMap::dense_symmetric(&(&r * r.transpose() / w_dim as f64
            + DMatrix::identity(w_dim, w_dim) * 0.2))
    };
    let a_map = LinearMap::dense(DMatrix::from_fn(w_dim, x_dim, |_, _| rand_unit(&mut rng)));
    let mut w_star = DVector::from_fn(w_dim, |_, _| rand_unit(&mut rng));
    if nonneg {
        for i in 0..w_dim {
            w_star[i] = if rng.random::<f64>() < 0.4 {
                0.0
            } else {
                rng.random::<f64>() + 0.1
            };
        }
    }
    let x_star = DVector::from_fn(x_dim, |_, _| rand_unit(&mut rng));
    let g0 = q.apply(&w_star) + a_map.apply(&x_star);
    let mut lin = -g0.clone();
    if nonneg {
        for i in 0..w_dim {
            if w_star[i] == 0.0 {
                lin[i] += rng.random::<f64>() * 0.5;
            }
        }
    }
    let phi = if nonneg {
        ProxFn::NonNeg { dim: w_dim }
    } else {
        ProxFn::Zero { dim: w_dim }
    };
    let gp = GenericProblem {
        phi,
        h: SmoothFn::Quadratic {
            q,
            lin,
            constant: 0.0,
        },
        a_map: a_map.clone(),
        c: a_map.apply_adjoint(&w_star),
    };
    (gp, x_star, w_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kkt_residual_norm, sigma_hat_block};
    use crate::sgsadmm::{admm_step, build_step3, ADMMConfig, Step3Mode};

    #[test]
    fn toy_sdp_optimum_by_grid_brute_force() {
        // primal: min <C, X> over X = diag(t, 1-t), t in [0, 1] (the PSD
        // feasible set of the trace constraint restricted to diagonals);
        // complementarity check selects t = 1
        let inst = toy_sdp();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let x = SymMatrix::from_diagonal(&DVector::from_vec(vec![t, 1.0 - t]));
            let v = inst.c.dot(x.svec());
            if v < best.0 {
                best = (v, t);
            }
        }
        assert!((best.0 - 1.0).abs() < 1e-9);
        assert!((best.1 - 1.0).abs() < 1e-9);
        // the optimal tuple satisfies the KKT system of the dual model
        let prob = build_sdp_dual(&inst, false).unwrap();
        let u = KKTPoint {
            x: SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))
                .svec()
                .clone(),
            y: SymMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))
                .svec()
                .clone(),
            z: DVector::from_element(1, 1.0),
        };
        assert!(kkt_residual_norm(&prob, &u) <= 1e-12);
    }

    #[test]
    fn sdp_builder_round_trip_identity() {
        let inst = toy_sdp();
        let prob = build_sdp_dual(&inst, false).unwrap();
        // G* e_1 equals the svec of the first constraint matrix
        let e1 = DVector::from_element(1, 1.0);
        let back = prob.g_map.apply_adjoint(&e1);
        assert!((back - SymMatrix::identity(2).svec()).norm() < 1e-15);
    }

    #[test]
    fn sdp_one_admm_step_matches_hand_recursion() {
        // from (X, z, S) = 0 with sigma = 1: S1 = C (already PSD),
        // z1 = (A(C - S1) + b)/(A A*) = 0.5, X1 = tau * diag(0.5, 0.5)
        let inst = toy_sdp();
        let prob = build_sdp_dual(&inst, false).unwrap();
        let tau = 1.618;
        let cfg = ADMMConfig::new(1.0, tau);
        let dec = crate::sgs::build_decomposition(
            &prob,
            &cfg.resolved_d_ops(&prob),
            1.0,
            &cfg.dec_opts,
        )
        .unwrap();
        let step3 = build_step3(&prob, &Step3Mode::Direct).unwrap();
        let dim = prob.y_dim();
        let out = admm_step(
            &prob,
            &dec,
            &step3,
            1.0,
            tau,
            &DVector::zeros(dim),
            &DVector::zeros(dim),
            &DVector::zeros(1),
            0.0,
        )
        .unwrap();
        assert!((&out.y_next - inst.c.clone()).norm() < 1e-12);
        assert!((out.z_next[0] - 0.5).abs() < 1e-12);
        let want_x = SymMatrix::from_diagonal(&DVector::from_vec(vec![
            tau * 0.5,
            tau * 0.5,
        ]));
        assert!((&out.x_next - want_x.svec()).norm() < 1e-12);
    }

    #[test]
    fn sdp_rank_deficient_rows_rejected() {
        let a1 = SymMatrix::identity(2);
        let a2 = SymMatrix::from_dense(&(2.0 * SymMatrix::identity(2).to_dense()));
        let inst = SDPInstance::single(
            &[a1, a2],
            DVector::from_vec(vec![1.0, 2.0]),
            &SymMatrix::identity(2),
        );
        assert!(build_sdp_dual(&inst, false).is_err());
        assert!(build_sdp_dual(&inst, true).is_ok());
    }

    #[test]
    fn psd_c_with_zero_b_is_solved_by_zero() {
        // C PSD, b = 0: z = 0, S = C, X = 0 is a KKT point
        let c = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let inst = SDPInstance::single(&[SymMatrix::identity(2)], DVector::zeros(1), &c);
        let prob = build_sdp_dual(&inst, false).unwrap();
        let u = KKTPoint {
            x: DVector::zeros(3),
            y: c.svec().clone(),
            z: DVector::zeros(1),
        };
        assert!(kkt_residual_norm(&prob, &u) <= 1e-13);
    }

    #[test]
    fn qsdp_builder_shapes_and_update_order() {
        let inst = gen_biq_qsdp(4, 2, 2, 7);
        assert_eq!(inst.m_i(), 3 * (3 * 2) / 2); // 3 C(3,2) = 9
        let (prob, layout) = build_qsdp_dual(&inst).unwrap();
        assert_eq!(prob.num_blocks(), 3);
        assert_eq!(layout.update_order.len(), 7);
        // strictly feasible plant satisfies the constraints strictly
        let x0 = biq_strict_point(inst.n);
        let eq = &inst.a_e * x0.svec() - &inst.b_e;
        assert!(eq.norm() < 1e-12);
        let slack = &inst.a_i * x0.svec() - &inst.b_i;
        assert!(slack.iter().all(|&v| v > 1e-3), "{slack:?}");
        let (vals, _) = sym_eig(&x0.to_dense()).unwrap();
        assert!(vals.iter().all(|&v| v > 1e-4));
    }

    #[test]
    fn gen_biq_counts_follow_the_pattern() {
        let inst = gen_biq_qsdp(6, 2, 2, 3);
        // m_I = 3 C(5,2) = 30
        assert_eq!(inst.m_i(), 30);
        assert_eq!(inst.m_e(), 6);
    }

    #[test]
    fn qsdp_degenerate_cases() {
        // m_I = 0 drops the slack block dimension to zero
        let mut inst = gen_biq_qsdp(4, 1, 1, 9);
        inst.a_i = DMatrix::zeros(0, inst.sdim());
        inst.b_i = DVector::zeros(0);
        inst.d_scale = DVector::zeros(0);
        let (prob, _) = build_qsdp_dual(&inst).unwrap();
        assert_eq!(prob.blocks[0], inst.sdim());
        assert_eq!(prob.z_dim(), 0);

        // Q = 0 reduces the majorizer to zero on the W block
        let mut inst = gen_biq_qsdp(4, 1, 1, 10);
        inst.q = LinearMap::zeros(inst.sdim(), inst.sdim());
        let (prob, _) = build_qsdp_dual(&inst).unwrap();
        let sig = sigma_hat_block(&prob, 1, 1);
        assert_eq!(operator_norm(&sig, 1e-8), 0.0);
    }

    #[test]
    fn lasso_scalar_closed_form() {
        // n=1, Phi=1, eta=2, lambda=0.5, x >= 0: optimum 1.5
        let inst = LassoInstance {
            phi_mat: DMatrix::from_element(1, 1, 1.0),
            eta: DVector::from_element(1, 2.0),
            lambda: 0.5,
            a_e: DMatrix::zeros(0, 1),
            b_e: DVector::zeros(0),
            a_i: DMatrix::from_element(1, 1, 1.0),
            b_i: DVector::zeros(1),
        };
        let (prob, layout) = build_constrained_lasso(&inst).unwrap();
        // KKT plant from the closed form: x* = 1.5, z_I = 0,
        // y2 = x*, y11 = lambda sign = 0.5, y12 = 0; the multiplier carries
        // (-x*, A_I x* - b_I)
        let u = KKTPoint {
            x: DVector::from_vec(vec![-1.5, 1.5]),
            y: DVector::from_vec(vec![0.5, 0.0, 1.5]),
            z: DVector::from_vec(vec![0.0]),
        };
        assert!(
            kkt_residual_norm(&prob, &u) <= 1e-12,
            "residual {}",
            kkt_residual_norm(&prob, &u)
        );
        assert!((layout.primal_from(&u)[0] - 1.5).abs() < 1e-12);
        // dual objective relates to the primal value through 1/2 ||eta||^2
        let dual_val = prob.objective(&u.y, &u.z);
        let primal = inst.primal_value(&DVector::from_element(1, 1.5));
        assert!((primal - (0.5 * inst.eta.norm_squared() - dual_val)).abs() < 1e-12);
    }

    #[test]
    fn lasso_small_lambda_approaches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let phi = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() - 0.5);
        let eta = DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5);
        let ls = (phi.transpose() * &phi)
            .try_inverse()
            .unwrap()
            * (phi.transpose() * &eta);
        let inst = LassoInstance::unconstrained(phi, eta, 1e-9);
        let (prob, layout) = build_constrained_lasso(&inst).unwrap();
        let cfg = ADMMConfig::new(1.0, 1.618);
        let mut cfg = cfg;
        cfg.stop_tol = 1e-10;
        cfg.max_iter = 20_000;
        cfg.store_vectors = false;
        let (sol, _) = crate::sgsadmm::run_admm(
            &prob,
            &cfg,
            &DVector::zeros(prob.x_dim()),
            &DVector::zeros(prob.y_dim()),
            &DVector::zeros(prob.z_dim()),
            None,
        )
        .unwrap();
        assert!(sol.converged);
        let x = layout.primal_from(&sol.u);
        assert!((x - ls).amax() < 1e-5);
    }

    #[test]
    fn basis_pursuit_toy() {
        // G = [1, 1], b = 1: dual z* = 1, primal value 1
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_element(1, 1.0);
        let prob = build_basis_pursuit_dual(&g, &b).unwrap();
        let cfg = {
            let mut c = ADMMConfig::new(1.0, 1.618);
            c.stop_tol = 1e-10;
            c.max_iter = 20_000;
            c.store_vectors = false;
            c
        };
        let (sol, _) = crate::sgsadmm::classic_admm_2block(
            &prob,
            &cfg,
            &DVector::zeros(2),
            &DVector::zeros(2),
            &DVector::zeros(1),
            None,
        )
        .unwrap();
        assert!(sol.converged);
        assert!((sol.u.z[0] - 1.0).abs() < 1e-6);
        // recovered primal: multiplier x solves G x = b with matching value
        let x = &sol.u.x;
        assert!((&g * x - &b).norm() < 1e-6);
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        let dual_val = prob.b.dot(&sol.u.z);
        assert!((l1 - dual_val).abs() < 1e-6);

        // b = 0 is solved by zero
        let prob0 = build_basis_pursuit_dual(&g, &DVector::zeros(1)).unwrap();
        let u0 = KKTPoint {
            x: DVector::zeros(2),
            y: DVector::zeros(2),
            z: DVector::zeros(1),
        };
        assert!(kkt_residual_norm(&prob0, &u0) <= 1e-14);
    }

    #[test]
    fn basis_pursuit_rejects_infeasible_rhs() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert!(build_basis_pursuit_dual(&g, &b).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_random_sdp(6, 8, 42);
        let b = gen_random_sdp(6, 8, 42);
        assert_eq!(a, b);
        let (p1, k1) = gen_multiblock(5, &MultiBlockGenOptions::default());
        let (p2, k2) = gen_multiblock(5, &MultiBlockGenOptions::default());
        assert_eq!(k1.x, k2.x);
        assert_eq!(p1.b, p2.b);
        assert_eq!(p1.c, p2.c);
    }

    #[test]
    fn planted_multiblock_kkt_point_is_exact() {
        for seed in 0..6u64 {
            for nonneg in [false, true] {
                let mut opts = MultiBlockGenOptions::default();
                opts.nonneg_block1 = nonneg;
                opts.g_rank = if seed % 2 == 0 { opts.z_dim } else { opts.z_dim - 1 };
                let (prob, star) = gen_multiblock(seed, &opts);
                let r = kkt_residual_norm(&prob, &star);
                assert!(r <= 1e-12, "seed {seed} nonneg {nonneg}: residual {r}");
            }
        }
    }

    #[test]
    fn planted_generic_kkt_pair_is_exact() {
        for seed in 0..4u64 {
            let (gp, x_star, w_star) = gen_generic(seed, 6, 4, seed % 2 == 0);
            assert!(gp.kkt_residual_norm(&x_star, &w_star) <= 1e-12);
        }
    }
}
