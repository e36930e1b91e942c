//! Inexact majorized proximal augmented Lagrangian method with a possibly
//! indefinite proximal term and dual step-length in (0, 2), together with the
//! runtime certificates derived from its convergence analysis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SmoothFn;
use crate::opcore::{
    operator_norm, pcg, prox, solve_prox_qp, subgrad_residual, sym_eig, CholeskyHandle, LinearMap,
    ProxFn,
};

/// Dense-assembly cap for assumption checks and certificates.
pub const DENSE_CAP: usize = 500;

/// The linearly constrained problem `min phi(w) + h(w)  s.t.  A* w = c`.
#[derive(Debug, Clone)]
pub struct GenericProblem {
    pub phi: ProxFn,
    pub h: SmoothFn,
    /// A : X -> W
    pub a_map: LinearMap,
    pub c: DVector<f64>,
}

impl GenericProblem {
    pub fn w_dim(&self) -> usize {
        self.a_map.nrows()
    }

    pub fn x_dim(&self) -> usize {
        self.a_map.ncols()
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        self.phi.eval(w) + self.h.value(w)
    }

    /// Stacked KKT residual `(c - A* w;  w - Prox_phi(w - grad h(w) - A x))`.
    pub fn kkt_residual(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let top = &self.c - self.a_map.apply_adjoint(w);
        let inner = w - self.h.grad(w) - self.a_map.apply(x);
        let p = prox(&self.phi, &inner, &LinearMap::identity(self.w_dim())).unwrap_or(inner);
        let bottom = w - p;
        crate::model::stack(&[top, bottom])
    }

    pub fn kkt_residual_norm(&self, x: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.kkt_residual(x, w).norm()
    }

    pub fn kkt_residual_rel(&self, x: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.kkt_residual_norm(x, w) / (1.0 + self.c.norm())
    }
}

/// Summable subproblem tolerance schedules.
#[derive(Debug, Clone)]
pub enum EpsSchedule {
    Zero,
    /// eps_k = e0 * gamma^k with gamma < 1
    Geometric { e0: f64, gamma: f64 },
    /// eps_k = 1 / (alpha (k+1)^1.2)
    Polynomial { alpha: f64 },
}

impl EpsSchedule {
    pub fn eps(&self, k: usize) -> f64 {
        match self {
            EpsSchedule::Zero => 0.0,
            EpsSchedule::Geometric { e0, gamma } => e0 * gamma.powi(k as i32),
            EpsSchedule::Polynomial { alpha } => 1.0 / (alpha * ((k + 1) as f64).powf(1.2)),
        }
    }

    /// Upper bound on the full series sum.
    pub fn sum_upper_bound(&self) -> f64 {
        match self {
            EpsSchedule::Zero => 0.0,
            EpsSchedule::Geometric { e0, gamma } => e0 / (1.0 - gamma),
            EpsSchedule::Polynomial { alpha } => {
                // partial sum plus integral tail bound
                let n = 1_000_000usize;
                let mut s = 0.0;
                for j in 1..=n {
                    s += (j as f64).powf(-1.2);
                }
                (s + 5.0 * (n as f64).powf(-0.2)) / alpha
            }
        }
    }

    /// Upper bound on the sum of squares (from k = 1 on).
    pub fn sum_sq_upper_bound(&self) -> f64 {
        match self {
            EpsSchedule::Zero => 0.0,
            EpsSchedule::Geometric { e0, gamma } => {
                let e1 = e0 * gamma;
                e1 * e1 / (1.0 - gamma * gamma)
            }
            EpsSchedule::Polynomial { alpha } => {
                let n = 100_000usize;
                let mut s = 0.0;
                for j in 2..=n {
                    s += (j as f64).powf(-2.4);
                }
                (s + (n as f64).powf(-1.4) / 1.4) / (alpha * alpha)
            }
        }
    }
}

/// Configuration of the proximal ALM.
#[derive(Debug, Clone)]
pub struct IpalmConfig {
    pub sigma: f64,
    /// dual step-length in (0, 2)
    pub tau: f64,
    /// proximal operator S, self-adjoint, possibly indefinite
    pub s_op: LinearMap,
    pub eps: EpsSchedule,
    pub max_iter: usize,
    pub stop_tol: f64,
}

impl IpalmConfig {
    pub fn validate(&self, gp: &GenericProblem) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 2.0) {
            return Err(Error::Misuse(format!(
                "step-length tau must lie in (0, 2), got {}",
                self.tau
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Misuse("sigma must be positive".into()));
        }
        if self.s_op.nrows() != gp.w_dim() || !self.s_op.is_self_adjoint() {
            return Err(Error::InvalidInput(
                "proximal operator S must be self-adjoint on W".into(),
            ));
        }
        Ok(())
    }
}

/// Report of the operator conditions backing the method.
#[derive(Debug, Clone, Copy)]
pub struct AssumptionBasicReport {
    /// smallest eigenvalue of `S + 1/2 Sigma_h` (must be >= -tol)
    pub shift_min_eig: f64,
    /// smallest eigenvalue of `1/2 Sigma_h + sigma A A* + S` (must be > 0)
    pub pd_min_eig: f64,
    /// smallest eigenvalue of `M = Sigma_h + S + sigma A A*`
    pub m_min_eig: f64,
    pub pass: bool,
}

/// Verifies `S >= -1/2 Sigma_h`, `1/2 Sigma_h + sigma A A* + S > 0`, and the
/// positive definiteness of `M = Sigma_h + S + sigma A A*`.
pub fn check_assumption_basic(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
) -> Result<AssumptionBasicReport> {
    cfg.validate(gp)?;
    let n = gp.w_dim();
    if n > DENSE_CAP {
        return Err(Error::SizeLimit { dim: n, cap: DENSE_CAP });
    }
    let sig = gp.h.sigma_hat().to_dense();
    let s = cfg.s_op.to_dense();
    let aat = gp.a_map.gram().to_dense();
    let min_eig = |m: &DMatrix<f64>| -> Result<f64> {
        let sym = 0.5 * (m + m.transpose());
        let (vals, _) = sym_eig(&sym)?;
        Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
    };
    let shift = &s + 0.5 * &sig;
    let shift_min_eig = min_eig(&shift)?;
    let scale = 1.0 + sig.norm() + s.norm();
    if shift_min_eig < -1e-10 * scale {
        return Err(Error::AssumptionViolation(format!(
            "S >= -1/2 Sigma_h fails: min eig {shift_min_eig:.3e}"
        )));
    }
    let pd = 0.5 * &sig + cfg.sigma * &aat + &s;
    let pd_min_eig = min_eig(&pd)?;
    if pd_min_eig <= 1e-12 * scale {
        return Err(Error::AssumptionViolation(format!(
            "1/2 Sigma_h + sigma A A* + S > 0 fails: min eig {pd_min_eig:.3e}"
        )));
    }
    let m = &sig + &s + cfg.sigma * &aat;
    let m_min_eig = min_eig(&m)?;
    if m_min_eig <= 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "M = Sigma_h + S + sigma A A* is not positive definite: min eig {m_min_eig:.3e}"
        )));
    }
    Ok(AssumptionBasicReport {
        shift_min_eig,
        pd_min_eig,
        m_min_eig,
        pass: true,
    })
}

/// Total quadratic operator of the subproblem, `M = Sigma_h + S + sigma A A*`,
/// and the linear coefficient at the current point.
pub fn subproblem_data(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    x_k: &DVector<f64>,
    w_k: &DVector<f64>,
) -> (LinearMap, DVector<f64>) {
    let m = LinearMap::sum(vec![
        gp.h.sigma_hat(),
        cfg.s_op.clone(),
        gp.a_map.gram().scale(cfg.sigma),
    ]);
    let q = gp.h.grad(w_k) - gp.h.sigma_hat().apply(w_k) + gp.a_map.apply(x_k)
        - cfg.sigma * gp.a_map.apply(&gp.c)
        - cfg.s_op.apply(w_k);
    (m, q)
}

/// Subproblem back-ends.
#[derive(Debug)]
pub enum SubSolver {
    /// Dense direct solve with active-set polish; residuals at round-off.
    Dense { m_cache: Option<DMatrix<f64>> },
    /// Plain proximal-gradient iterations stopped at the requested tolerance;
    /// produces honestly inexact residual certificates.
    ProxGradient { max_iter: usize },
    /// Conjugate gradients; only valid when phi = 0.
    Pcg { maxit: usize },
}

impl SubSolver {
    pub fn dense() -> Self {
        SubSolver::Dense { m_cache: None }
    }

    fn solve(
        &mut self,
        gp: &GenericProblem,
        cfg: &IpalmConfig,
        x_k: &DVector<f64>,
        w_k: &DVector<f64>,
        eps_k: f64,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (m, q) = subproblem_data(gp, cfg, x_k, w_k);
        match self {
            SubSolver::Dense { m_cache } => {
                if m_cache.is_none() {
                    let d = m.to_dense();
                    *m_cache = Some(0.5 * (&d + d.transpose()));
                }
                let md = m_cache.as_ref().unwrap();
                let w = solve_prox_qp(&gp.phi, md, &q, 1e-12, 500_000)?;
                let d = subgrad_residual(&gp.phi, &w, &(md * &w + &q), 1e-10 * (1.0 + w.amax()))?;
                Ok((w, d))
            }
            SubSolver::ProxGradient { max_iter } => {
                let md = m.to_dense();
                let md = 0.5 * (&md + md.transpose());
                let (vals, _) = sym_eig(&md)?;
                let lmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weight = LinearMap::scaled_identity(gp.w_dim(), lmax);
                let mut w = gp.phi.project_domain(w_k)?;
                let target = eps_k.max(1e-12 * (1.0 + q.norm()));
                let mut d = subgrad_residual(&gp.phi, &w, &(&md * &w + &q), 1e-10)?;
                let mut it = 0;
                while d.norm() > target && it < *max_iter {
                    let grad = &md * &w + &q;
                    w = prox(&gp.phi, &(&w - grad / lmax), &weight)?;
                    d = subgrad_residual(&gp.phi, &w, &(&md * &w + &q), 1e-10 * (1.0 + w.amax()))?;
                    it += 1;
                }
                if d.norm() > target {
                    return Err(Error::ToleranceNotMet {
                        achieved: d.norm(),
                        required: target,
                    });
                }
                Ok((w, d))
            }
            SubSolver::Pcg { maxit } => {
                if !gp.phi.is_zero() {
                    return Err(Error::Unsupported(
                        "pcg subproblem solver requires phi = 0".into(),
                    ));
                }
                let rhs = -&q;
                let tol = eps_k.max(1e-13) / (1.0 + rhs.norm());
                let out = pcg(&m.clone().assume_self_adjoint(), &rhs, None, tol, *maxit)?;
                let d = m.apply(&out.x) + &q;
                Ok((out.x, d))
            }
        }
    }
}

/// One iteration: approximately minimize the proximal majorized augmented
/// Lagrangian with a certified residual `d_k`, then update the multiplier
/// `x_{k+1} = x_k + tau sigma (A* w_{k+1} - c)`.
pub fn ipalm_step(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    x_k: &DVector<f64>,
    w_k: &DVector<f64>,
    solver: &mut SubSolver,
    eps_k: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (w_next, d) = solver.solve(gp, cfg, x_k, w_k, eps_k)?;
    let (_, q) = subproblem_data(gp, cfg, x_k, w_k);
    let floor = 1e-10 * (1.0 + q.norm());
    if d.norm() > eps_k.max(floor) {
        return Err(Error::ToleranceNotMet {
            achieved: d.norm(),
            required: eps_k.max(floor),
        });
    }
    let x_next = x_k + cfg.tau * cfg.sigma * (gp.a_map.apply_adjoint(&w_next) - &gp.c);
    Ok((w_next, x_next, d))
}

/// Per-run record of iterates and certified residuals.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub xs: Vec<DVector<f64>>,
    pub ws: Vec<DVector<f64>>,
    pub ds: Vec<DVector<f64>>,
    /// declared residual bound per iteration (schedule value with a
    /// round-off floor)
    pub eps: Vec<f64>,
    pub resid_norms: Vec<f64>,
    pub sigma: f64,
    pub tau: f64,
    /// upper bounds on the schedule series, used by the complexity bound
    pub eps_total: f64,
    pub eps_sq_total: f64,
}

#[derive(Debug, Clone)]
pub struct IpalmSolution {
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_resid_rel: f64,
}

/// Runs the method until the relative KKT residual drops below
/// `cfg.stop_tol` or `cfg.max_iter` is reached.
pub fn run_ipalm(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    x0: &DVector<f64>,
    w0: &DVector<f64>,
    solver: &mut SubSolver,
) -> Result<(IpalmSolution, RunTrace)> {
    check_assumption_basic(gp, cfg)?;
    let mut x = x0.clone();
    let mut w = w0.clone();
    let mut trace = RunTrace {
        xs: vec![x.clone()],
        ws: vec![w.clone()],
        ds: Vec::new(),
        eps: Vec::new(),
        resid_norms: vec![gp.kkt_residual_norm(&x, &w)],
        sigma: cfg.sigma,
        tau: cfg.tau,
        eps_total: cfg.eps.sum_upper_bound(),
        eps_sq_total: cfg.eps.sum_sq_upper_bound(),
    };
    let mut converged = gp.kkt_residual_rel(&x, &w) <= cfg.stop_tol;
    let mut iterations = 0;
    while !converged && iterations < cfg.max_iter {
        let eps_k = cfg.eps.eps(iterations);
        let (w_next, x_next, d) = ipalm_step(gp, cfg, &x, &w, solver, eps_k)?;
        let (_, q) = subproblem_data(gp, cfg, &x, &w);
        let declared = eps_k.max(1e-10 * (1.0 + q.norm()));
        w = w_next;
        x = x_next;
        iterations += 1;
        trace.xs.push(x.clone());
        trace.ws.push(w.clone());
        trace.ds.push(d);
        trace.eps.push(declared);
        trace.resid_norms.push(gp.kkt_residual_norm(&x, &w));
        converged = gp.kkt_residual_rel(&x, &w) <= cfg.stop_tol;
    }
    let final_resid_rel = gp.kkt_residual_rel(&x, &w);
    Ok((
        IpalmSolution {
            x,
            w,
            iterations,
            converged,
            final_resid_rel,
        },
        trace,
    ))
}

/// Dense metric operators of the convergence analysis.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub xi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub xi_min_eig: f64,
    pub theta_min_eig: f64,
}

pub fn assemble_metrics(gp: &GenericProblem, cfg: &IpalmConfig) -> Result<Metrics> {
    let n = gp.w_dim();
    if n > DENSE_CAP {
        return Err(Error::SizeLimit { dim: n, cap: DENSE_CAP });
    }
    let sig = gp.h.sigma_hat().to_dense();
    let s = cfg.s_op.to_dense();
    let aat = gp.a_map.gram().to_dense();
    let (tau, sigma) = (cfg.tau, cfg.sigma);
    let xi = tau * sigma * (0.5 * &sig + &s + ((2.0 - tau) * sigma / 6.0) * &aat);
    let theta = tau * sigma * (&sig + &s + ((2.0 - tau) * sigma / 3.0) * &aat);
    let xi = 0.5 * (&xi + xi.transpose());
    let theta = 0.5 * (&theta + theta.transpose());
    let m = &sig + &s + sigma * &aat;
    let min_eig = |mm: &DMatrix<f64>| -> Result<f64> {
        let (vals, _) = sym_eig(mm)?;
        Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
    };
    let xi_min_eig = min_eig(&xi)?;
    let theta_min_eig = min_eig(&theta)?;
    if xi_min_eig <= 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "Xi is not positive definite (min eig {xi_min_eig:.3e})"
        )));
    }
    if theta_min_eig <= 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "Theta is not positive definite (min eig {theta_min_eig:.3e})"
        )));
    }
    Ok(Metrics {
        xi,
        theta,
        m: 0.5 * (&m + m.transpose()),
        xi_min_eig,
        theta_min_eig,
    })
}

impl Metrics {
    /// Squared weighted distance `||x||^2 + <w, Theta w>`.
    pub fn omega_norm_sq(&self, x: &DVector<f64>, w: &DVector<f64>) -> f64 {
        x.norm_squared() + w.dot(&(&self.theta * w))
    }
}

/// Per-iteration quasi-Fejér descent check.
#[derive(Debug, Clone)]
pub struct FejerReport {
    pub worst_slack: f64,
    pub scale: f64,
    pub violations: usize,
    /// index of the first violating iteration, if any
    pub first_violation: Option<usize>,
    pub pass: bool,
}

/// Evaluates the descent inequality of the convergence theorem at every
/// recorded iteration against a reference solution `(x*, w*)`.
pub fn fejer_certificate(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    trace: &RunTrace,
    x_star: &DVector<f64>,
    w_star: &DVector<f64>,
) -> Result<FejerReport> {
    let metrics = assemble_metrics(gp, cfg)?;
    let (tau, sigma) = (cfg.tau, cfg.sigma);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut first_violation = None;
    let scale = 1.0 + metrics.omega_norm_sq(&(&trace.xs[0] - x_star), &(&trace.ws[0] - w_star));
    let tol = 1e-8 * scale;
    for k in 0..trace.ds.len() {
        let xe0 = &trace.xs[k] - x_star;
        let we0 = &trace.ws[k] - w_star;
        let xe1 = &trace.xs[k + 1] - x_star;
        let we1 = &trace.ws[k + 1] - w_star;
        let lhs = metrics.omega_norm_sq(&xe1, &we1) - metrics.omega_norm_sq(&xe0, &we0);
        let dx = &trace.xs[k + 1] - &trace.xs[k];
        let dw = &trace.ws[k + 1] - &trace.ws[k];
        let rhs = -((2.0 - tau) / (3.0 * tau) * dx.norm_squared()
            + dw.dot(&(&metrics.xi * &dw))
            - 2.0 * tau * sigma * trace.ds[k].dot(&we1));
        let slack = lhs - rhs;
        if slack > tol {
            violations += 1;
            first_violation.get_or_insert(k);
        }
        worst = worst.max(slack);
    }
    if trace.ds.is_empty() {
        worst = 0.0;
    }
    Ok(FejerReport {
        worst_slack: worst,
        scale,
        violations,
        first_violation,
        pass: violations == 0,
    })
}

/// Non-ergodic complexity check: the curve `k * min_{j<=k} ||R(u^j)||^2`
/// stays below the assembled constant and trends to zero.
#[derive(Debug, Clone)]
pub struct ComplexityReport {
    pub curve: Vec<f64>,
    pub varrho: f64,
    pub bounded: bool,
    pub trend_ok: bool,
    pub pass: bool,
}

pub fn complexity_certificate(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    trace: &RunTrace,
    x_star: &DVector<f64>,
    w_star: &DVector<f64>,
) -> Result<ComplexityReport> {
    if trace.resid_norms.len() < 2 {
        return Err(Error::InvalidInput("trace must hold at least 2 iterates".into()));
    }
    let metrics = assemble_metrics(gp, cfg)?;
    let consts = rate_constants(gp, cfg)?;
    let (tau, sigma) = (cfg.tau, cfg.sigma);
    let aa_norm = operator_norm(&gp.a_map, 1e-10).powi(2);
    let sig_s = gp.h.sigma_hat().to_dense() + cfg.s_op.to_dense();
    let sig_s_norm = operator_norm(&LinearMap::dense_symmetric(&sig_s), 1e-10);
    let factor = ((12.0 * sigma * sigma * (tau - 1.0).powi(2) * aa_norm + 3.0)
        / (tau * sigma * sigma * (2.0 - tau)))
        .max(2.0 * consts.zeta * sig_s_norm / (tau * sigma));
    let u0_sq = metrics.omega_norm_sq(&(&trace.xs[0] - x_star), &(&trace.ws[0] - w_star));
    let theta_inv_half = 1.0 / metrics.theta_min_eig.max(f64::MIN_POSITIVE).sqrt();
    let eps_sum = trace.eps_total;
    let e = u0_sq
        + 2.0 * tau * sigma * theta_inv_half * eps_sum * (u0_sq.sqrt() + consts.mu * eps_sum)
        + 4.0 * trace.eps_sq_total;
    let varrho = factor * e;

    let mut curve = Vec::with_capacity(trace.resid_norms.len().saturating_sub(1));
    let mut best = f64::INFINITY;
    for (k, r) in trace.resid_norms.iter().enumerate() {
        best = best.min(r * r);
        if k >= 1 {
            curve.push(k as f64 * best);
        }
    }
    let bounded = curve.iter().all(|&c| c <= varrho * (1.0 + 1e-12) + 1e-300);
    let n = curve.len();
    let trend_ok = if n >= 8 {
        let q = n / 4;
        let first: f64 = curve[..q].iter().sum::<f64>() / q as f64;
        let last: f64 = curve[n - q..].iter().sum::<f64>() / q as f64;
        last <= first + 1e-300
    } else {
        true
    };
    Ok(ComplexityReport {
        curve,
        varrho,
        bounded,
        trend_ok,
        pass: bounded && trend_ok,
    })
}

/// The rate constants of the local convergence analysis, computed densely.
#[derive(Debug, Clone, Copy)]
pub struct RateConstants {
    pub rho: f64,
    pub beta: f64,
    pub mu: f64,
    pub zeta: f64,
}

pub fn rate_constants(gp: &GenericProblem, cfg: &IpalmConfig) -> Result<RateConstants> {
    let metrics = assemble_metrics(gp, cfg)?;
    let (tau, sigma) = (cfg.tau, cfg.sigma);
    // smallest zeta with zeta Xi >= Theta via the Cholesky congruence
    let chol = CholeskyHandle::factor(&metrics.xi).map_err(|_| {
        Error::AssumptionViolation("Xi is not positive definite".into())
    })?;
    let n = metrics.xi.nrows();
    let mut transformed = DMatrix::zeros(n, n);
    {
        // L^{-1} Theta L^{-T} column by column
        let mut cols = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = DVector::from(metrics.theta.column(j).into_owned());
            cols.set_column(j, &forward_sub(&chol, &col));
        }
        for i in 0..n {
            let row = DVector::from(cols.row(i).transpose());
            transformed.set_row(i, &forward_sub(&chol, &row).transpose());
        }
    }
    let sym = 0.5 * (&transformed + transformed.transpose());
    let (vals, _) = sym_eig(&sym)?;
    let zeta = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let aa_norm = operator_norm(&gp.a_map, 1e-10).powi(2);
    let sig_s = gp.h.sigma_hat().to_dense() + cfg.s_op.to_dense();
    let sig_s_norm = operator_norm(&LinearMap::dense_symmetric(&sig_s), 1e-10);
    let theta_norm = operator_norm(&LinearMap::dense_symmetric(&metrics.theta), 1e-10);
    let rho = ((6.0 * sigma * sigma * (tau - 1.0).powi(2) * aa_norm + 3.0)
        / (tau * sigma * sigma * (2.0 - tau)))
        .max(2.0 * zeta * sig_s_norm / (tau * sigma))
        * theta_norm.max(1.0);
    let beta = zeta.sqrt().max((3.0 * tau / (2.0 - tau)).sqrt());
    let aat = gp.a_map.gram().to_dense();
    let inner = &sig_s + (2.0 / 3.0) * (1.0 + tau) * sigma * aat;
    let inner_norm = operator_norm(&LinearMap::dense_symmetric(&inner), 1e-10);
    let (mvals, _) = sym_eig(&metrics.m)?;
    let m_min = mvals.iter().cloned().fold(f64::INFINITY, f64::min);
    if m_min <= 0.0 {
        return Err(Error::AssumptionViolation("M is not positive definite".into()));
    }
    let mu = (tau * sigma * inner_norm).sqrt() / m_min;
    Ok(RateConstants { rho, beta, mu, zeta })
}

fn forward_sub(chol: &CholeskyHandle, rhs: &DVector<f64>) -> DVector<f64> {
    // solve L y = rhs using the stored factor of chol (lower-triangular)
    let n = rhs.len();
    let l = chol.lower();
    let mut y = rhs.clone();
    for i in 0..n {
        let mut v = y[i];
        for j in 0..i {
            v -= l[(i, j)] * y[j];
        }
        y[i] = v / l[(i, i)];
    }
    y
}

/// Weighted distances of the trace iterates to a reference point and the
/// fitted tail contraction factor (least-squares slope of the log distance
/// over the last 30% of iterations).
pub fn omega_distances(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    trace: &RunTrace,
    x_star: &DVector<f64>,
    w_star: &DVector<f64>,
) -> Result<(Vec<f64>, Option<f64>)> {
    let metrics = assemble_metrics(gp, cfg)?;
    let dists: Vec<f64> = trace
        .xs
        .iter()
        .zip(trace.ws.iter())
        .map(|(x, w)| metrics.omega_norm_sq(&(x - x_star), &(w - w_star)).sqrt())
        .collect();
    let n = dists.len();
    let start = n - (3 * n / 10).max(2).min(n);
    let pts: Vec<(f64, f64)> = dists[start..]
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 1e-300)
        .map(|(i, &d)| (i as f64, d.ln()))
        .collect();
    let rate = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = m * sxx - sx * sx;
        if denom.abs() > 1e-300 {
            Some(((m * sxy - sx * sy) / denom).exp())
        } else {
            None
        }
    } else {
        None
    };
    Ok((dists, rate))
}

/// Post-hoc error-control statistic `||d_k|| / ||u_k - u_{k+1}||` per
/// iteration. The local rate theory bounds it by `1/mu`; it is reported only,
/// never enforced online (the condition references future iterates).
pub fn eta_hat_stats(trace: &RunTrace) -> Vec<f64> {
    (0..trace.ds.len())
        .map(|k| {
            let du = (&trace.xs[k] - &trace.xs[k + 1]).norm_squared()
                + (&trace.ws[k] - &trace.ws[k + 1]).norm_squared();
            let du = du.sqrt();
            if du > 1e-300 {
                trace.ds[k].norm() / du
            } else {
                0.0
            }
        })
        .collect()
}

/// Combined certificate bundle for one run.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub fejer: FejerReport,
    pub complexity: ComplexityReport,
    pub omega_distances: Vec<f64>,
    pub rate_estimate: Option<f64>,
}

pub fn certificates(
    gp: &GenericProblem,
    cfg: &IpalmConfig,
    trace: &RunTrace,
    x_star: &DVector<f64>,
    w_star: &DVector<f64>,
) -> Result<CertificateReport> {
    let fejer = fejer_certificate(gp, cfg, trace, x_star, w_star)?;
    let complexity = complexity_certificate(gp, cfg, trace, x_star, w_star)?;
    let (omega, rate_estimate) = omega_distances(gp, cfg, trace, x_star, w_star)?;
    Ok(CertificateReport {
        fejer,
        complexity,
        omega_distances: omega,
        rate_estimate,
    })
}
