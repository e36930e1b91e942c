//! The symmetric Gauss-Seidel decomposition based multi-block proximal ADMM
//! with dual step-length in (0, 2): the four-step iteration, the two-block
//! special case, the reconstruction of the proximal-ALM view (shadow
//! sequence, accumulated errors, block-diagonal proximal operator), the
//! feasibility bound, and the adaptive penalty rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipalm::{EpsSchedule, GenericProblem, IpalmConfig, SubSolver};
use crate::model::{kkt_residual, kkt_residual_rel, stack, KKTPoint, MultiBlockProblem, SmoothFn};
use crate::opcore::{
    operator_norm, pcg, pinv_apply, prox, sym_eig, CholeskyHandle, LinearMap, ProxBlock, ProxFn,
};
use crate::sgs::{
    aggregate_error, build_decomposition, sgs_sweep, verify_assumption_p, AssumptionPReport,
    DecompositionOptions, SGSDecomposition,
};

pub use crate::sgs::verify_sgs_lemma;

/// Dense cap for the ALM-view reconstruction.
pub const DENSE_CAP: usize = 500;

/// Adaptive penalty policy; disabled by default so that recorded traces
/// match the fixed-penalty theory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveSigma {
    pub enabled: bool,
    pub ratio_window: usize,
    pub factor: f64,
}

impl Default for AdaptiveSigma {
    fn default() -> Self {
        Self {
            enabled: false,
            ratio_window: 20,
            factor: 1.25,
        }
    }
}

/// How the multiplier-space linear system of Step 3 is solved.
#[derive(Debug, Clone)]
pub enum Step3Mode {
    /// Cholesky of G G* (falls back to conjugate gradients in range(G) when
    /// the Gram operator is singular).
    Direct,
    /// Conjugate gradients certified against the tolerance schedule.
    Pcg { maxit: usize },
}

#[derive(Debug, Clone)]
pub struct ADMMConfig {
    pub sigma: f64,
    pub tau: f64,
    /// proximal operators D_i; empty means all zero
    pub d_ops: Vec<LinearMap>,
    pub tol_schedule: EpsSchedule,
    pub adaptive: AdaptiveSigma,
    pub stop_tol: f64,
    pub max_iter: usize,
    pub dec_opts: DecompositionOptions,
    pub step3: Step3Mode,
    /// record full iterate vectors in the trace (needed by certificates)
    pub store_vectors: bool,
}

impl ADMMConfig {
    pub fn new(sigma: f64, tau: f64) -> Self {
        Self {
            sigma,
            tau,
            d_ops: Vec::new(),
            tol_schedule: EpsSchedule::Zero,
            adaptive: AdaptiveSigma::default(),
            stop_tol: 1e-8,
            max_iter: 10_000,
            dec_opts: DecompositionOptions::default(),
            step3: Step3Mode::Direct,
            store_vectors: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 2.0) {
            return Err(Error::Misuse(format!(
                "step-length tau must lie in (0, 2), got {}",
                self.tau
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Misuse("sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_d_ops(&self, prob: &MultiBlockProblem) -> Vec<LinearMap> {
        if self.d_ops.is_empty() {
            prob.blocks.iter().map(|&d| LinearMap::zeros(d, d)).collect()
        } else {
            self.d_ops.clone()
        }
    }
}

/// Admissibility report for the proximal terms (per-block positive
/// definiteness plus the global lower bound on D).
pub fn check_assumption_p(
    prob: &MultiBlockProblem,
    d_ops: &[LinearMap],
    sigma: f64,
) -> Result<AssumptionPReport> {
    verify_assumption_p(prob, d_ops, sigma)
}

/// Step-3 solver handle, rebuilt whenever sigma changes.
#[derive(Debug)]
pub enum Step3 {
    Chol(CholeskyHandle),
    RangeCg { maxit: usize },
    Pcg { maxit: usize },
}

pub fn build_step3(prob: &MultiBlockProblem, mode: &Step3Mode) -> Result<Step3> {
    let z_dim = prob.z_dim();
    match mode {
        Step3Mode::Direct => {
            if z_dim == 0 {
                return Ok(Step3::Chol(CholeskyHandle::factor(&DMatrix::zeros(0, 0))?));
            }
            if z_dim <= 2000 {
                let gram = prob.g_map.gram().to_dense();
                let gram = 0.5 * (&gram + gram.transpose());
                match CholeskyHandle::factor(&gram) {
                    Ok(chol) => Ok(Step3::Chol(chol)),
                    // singular Gram operator: solve within range(G)
                    Err(Error::RankDeficient { .. }) => Ok(Step3::RangeCg {
                        maxit: 40 * z_dim + 100,
                    }),
                    Err(e) => Err(e),
                }
            } else {
                Ok(Step3::RangeCg {
                    maxit: 40 * z_dim + 100,
                })
            }
        }
        Step3Mode::Pcg { maxit } => Ok(Step3::Pcg { maxit: *maxit }),
    }
}

/// Output of a single four-step iteration.
#[derive(Debug, Clone)]
pub struct StepOut {
    pub y_half: DVector<f64>,
    pub y_next: DVector<f64>,
    pub z_next: DVector<f64>,
    pub x_next: DVector<f64>,
    pub delta_tilde: DVector<f64>,
    pub delta: DVector<f64>,
    pub gamma: DVector<f64>,
}

/// One iteration of the method: backward/forward sweep in y, the linear
/// solve in z with residual certificate gamma, then the tau-scaled
/// multiplier update.
#[allow(clippy::too_many_arguments)]
pub fn admm_step(
    prob: &MultiBlockProblem,
    dec: &SGSDecomposition,
    step3: &Step3,
    sigma: f64,
    tau: f64,
    x_k: &DVector<f64>,
    y_k: &DVector<f64>,
    z_k: &DVector<f64>,
    eps_k: f64,
) -> Result<StepOut> {
    let sweep = sgs_sweep(dec, prob, z_k, x_k, y_k, sigma, eps_k)?;
    let y_next = sweep.y_next;

    // Step 3: G G* z = (b - G x_k)/sigma - G (F* y_next - c)
    let rhs = (&prob.b - prob.g_map.apply(x_k)) / sigma
        - prob.g_map.apply(&(prob.f_adjoint(&y_next) - &prob.c));
    let z_next = match step3 {
        Step3::Chol(chol) => chol.solve(&rhs),
        Step3::RangeCg { maxit } => {
            let gram = prob.g_map.gram();
            pcg(&gram, &rhs, None, 1e-13, *maxit)?.x
        }
        Step3::Pcg { maxit } => {
            let gram = prob.g_map.gram();
            let tol = (eps_k / sigma).max(1e-13) / (1.0 + rhs.norm());
            pcg(&gram, &rhs, None, tol, *maxit)?.x
        }
    };
    let gamma = prob.g_map.apply(x_k) - &prob.b
        + sigma * prob.g_map.apply(&prob.constraint_residual(&y_next, &z_next));
    let floor = 1e-9 * sigma * (1.0 + rhs.norm());
    if gamma.norm() > eps_k.max(floor) {
        return Err(Error::ToleranceNotMet {
            achieved: gamma.norm(),
            required: eps_k.max(floor),
        });
    }

    // Step 4
    let x_next = x_k + tau * sigma * prob.constraint_residual(&y_next, &z_next);
    Ok(StepOut {
        y_half: sweep.y_half,
        y_next,
        z_next,
        x_next,
        delta_tilde: sweep.delta_tilde,
        delta: sweep.delta,
        gamma,
    })
}

/// Per-iteration application metric (eta quotients).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EtaSummary {
    pub eta_max: f64,
    pub eta_gap: f64,
}

pub trait IterMetric {
    fn eval(&self, prob: &MultiBlockProblem, u: &KKTPoint) -> Result<EtaSummary>;
}

#[derive(Debug, Clone)]
pub struct AdmmTrace {
    pub xs: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
    pub zs: Vec<DVector<f64>>,
    pub y_halfs: Vec<DVector<f64>>,
    pub delta_tildes: Vec<DVector<f64>>,
    pub deltas: Vec<DVector<f64>>,
    pub gammas: Vec<DVector<f64>>,
    /// declared residual bound per iteration
    pub eps: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub feas_norms: Vec<f64>,
    pub kkt_norms: Vec<f64>,
    pub etas: Vec<Option<EtaSummary>>,
    pub tau: f64,
    pub eps_total: f64,
    pub eps_sq_total: f64,
    pub sigma_changed: bool,
}

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub u: KKTPoint,
    pub iterations: usize,
    pub converged: bool,
    pub final_metric: f64,
    pub final_eta: Option<EtaSummary>,
    pub objective: f64,
}

/// Geometric-mean based penalty adaptation: a persistent imbalance between
/// the constraint residual and the dual-side residual moves sigma by a fixed
/// factor, clamped to [1e-4, 1e6].
pub fn adapt_sigma(recent_ratios: &[f64], sigma: f64) -> f64 {
    if recent_ratios.is_empty() {
        return sigma;
    }
    let logmean =
        recent_ratios.iter().map(|r| r.max(1e-300).ln()).sum::<f64>() / recent_ratios.len() as f64;
    let mean = logmean.exp();
    let next = if mean > 5.0 {
        sigma * 1.25
    } else if mean < 0.2 {
        sigma / 1.25
    } else {
        sigma
    };
    next.clamp(1e-4, 1e6)
}

/// Runs the method until the application metric (when provided) or the
/// relative KKT residual drops below `cfg.stop_tol`.
pub fn run_admm(
    prob: &MultiBlockProblem,
    cfg: &ADMMConfig,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
    metric: Option<&dyn IterMetric>,
) -> Result<(AdmmSolution, AdmmTrace)> {
    cfg.validate()?;
    let d_ops = cfg.resolved_d_ops(prob);
    let mut sigma = cfg.sigma;
    let mut dec = build_decomposition(prob, &d_ops, sigma, &cfg.dec_opts)?;
    let mut step3 = build_step3(prob, &cfg.step3)?;

    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut z = z0.clone();

    let eval_metric = |x: &DVector<f64>,
                       y: &DVector<f64>,
                       z: &DVector<f64>|
     -> Result<(f64, Option<EtaSummary>)> {
        let u = KKTPoint {
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
        };
        match metric {
            Some(m) => {
                let eta = m.eval(prob, &u)?;
                Ok((eta.eta_max, Some(eta)))
            }
            None => Ok((kkt_residual_rel(prob, &u), None)),
        }
    };

    let mut trace = AdmmTrace {
        xs: vec![x.clone()],
        ys: vec![y.clone()],
        zs: vec![z.clone()],
        y_halfs: Vec::new(),
        delta_tildes: Vec::new(),
        deltas: Vec::new(),
        gammas: Vec::new(),
        eps: Vec::new(),
        sigmas: Vec::new(),
        feas_norms: vec![(&prob.b - prob.g_map.apply(&x)).norm()],
        kkt_norms: vec![crate::model::kkt_residual_norm(
            prob,
            &KKTPoint {
                x: x.clone(),
                y: y.clone(),
                z: z.clone(),
            },
        )],
        etas: Vec::new(),
        tau: cfg.tau,
        eps_total: cfg.tol_schedule.sum_upper_bound(),
        eps_sq_total: cfg.tol_schedule.sum_sq_upper_bound(),
        sigma_changed: false,
    };
    let (m0, eta0) = eval_metric(&x, &y, &z)?;
    trace.etas.push(eta0);

    let mut converged = m0 <= cfg.stop_tol;
    let mut iterations = 0;
    let mut ratio_window: Vec<f64> = Vec::new();
    let mut final_metric = m0;
    let mut final_eta = eta0;

    while !converged && iterations < cfg.max_iter {
        let eps_k = cfg.tol_schedule.eps(iterations);
        let out = admm_step(prob, &dec, &step3, sigma, cfg.tau, &x, &y, &z, eps_k)?;
        x = out.x_next;
        y = out.y_next;
        z = out.z_next;
        iterations += 1;

        let declared = {
            let worst = out
                .delta
                .norm()
                .max(out.delta_tilde.norm())
                .max(out.gamma.norm());
            eps_k.max(worst)
        };
        trace.sigmas.push(sigma);
        trace.eps.push(declared);
        trace
            .feas_norms
            .push((&prob.b - prob.g_map.apply(&x)).norm());
        let u = KKTPoint {
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
        };
        trace
            .kkt_norms
            .push(crate::model::kkt_residual_norm(prob, &u));
        if cfg.store_vectors {
            trace.xs.push(x.clone());
            trace.ys.push(y.clone());
            trace.zs.push(z.clone());
            trace.y_halfs.push(out.y_half.clone());
            trace.delta_tildes.push(out.delta_tilde.clone());
            trace.deltas.push(out.delta.clone());
            trace.gammas.push(out.gamma.clone());
        }
        let (m, eta) = eval_metric(&x, &y, &z)?;
        trace.etas.push(eta);
        final_metric = m;
        final_eta = eta;
        converged = m <= cfg.stop_tol;

        if cfg.adaptive.enabled && !converged {
            let r = kkt_residual(prob, &u);
            let x_dim = prob.x_dim();
            let y_dim = prob.y_dim();
            let primal = DVector::from(r.rows(0, x_dim)).norm() / (1.0 + prob.c.norm());
            let dual = (DVector::from(r.rows(x_dim, y_dim)).norm()
                + DVector::from(r.rows(x_dim + y_dim, prob.z_dim())).norm())
                / (1.0 + prob.b.norm());
            ratio_window.push(if dual > 1e-300 { primal / dual } else { 1e6 });
            if ratio_window.len() >= cfg.adaptive.ratio_window {
                let next = adapt_sigma(&ratio_window, sigma);
                ratio_window.clear();
                if next != sigma {
                    sigma = next;
                    dec = build_decomposition(prob, &d_ops, sigma, &cfg.dec_opts)?;
                    step3 = build_step3(prob, &cfg.step3)?;
                    trace.sigma_changed = true;
                }
            }
        }
    }
    let u = KKTPoint { x, y, z };
    let objective = prob.objective(&u.y, &u.z);
    Ok((
        AdmmSolution {
            u,
            iterations,
            converged,
            final_metric,
            final_eta,
            objective,
        },
        trace,
    ))
}

/// Classic two-block ADMM entry point: requires a single y block and a
/// vacuous smooth part.
pub fn classic_admm_2block(
    prob: &MultiBlockProblem,
    cfg: &ADMMConfig,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
    metric: Option<&dyn IterMetric>,
) -> Result<(AdmmSolution, AdmmTrace)> {
    if prob.num_blocks() != 1 {
        return Err(Error::Misuse(format!(
            "two-block entry point requires a single y block, got {}",
            prob.num_blocks()
        )));
    }
    if !matches!(prob.f, SmoothFn::Zero { .. }) {
        return Err(Error::Misuse(
            "two-block entry point requires a vacuous smooth part".into(),
        ));
    }
    run_admm(prob, cfg, x0, y0, z0, metric)
}

/// The feasibility-bound certificate: checks
/// `||b - G x_k|| <= xi_k + 1e-10` with
/// `xi_k = |1 - tau|^k xi_0 + tau sum |1 - tau|^{k-i} eps_{i-1}`.
#[derive(Debug, Clone)]
pub struct XiReport {
    pub xi: Vec<f64>,
    pub worst_slack: f64,
    pub pass: bool,
}

pub fn xi_bound_certificate(trace: &AdmmTrace, tau: f64) -> XiReport {
    let q = (1.0 - tau).abs();
    let mut xi = Vec::with_capacity(trace.feas_norms.len());
    let mut cur = trace.feas_norms[0];
    xi.push(cur);
    let mut worst = f64::NEG_INFINITY;
    for k in 1..trace.feas_norms.len() {
        cur = q * cur + tau * trace.eps[k - 1];
        xi.push(cur);
        worst = worst.max(trace.feas_norms[k] - cur);
    }
    if trace.feas_norms.len() == 1 {
        worst = 0.0;
    }
    XiReport {
        xi,
        worst_slack: worst,
        pass: worst <= 1e-10,
    }
}

/// The reconstructed proximal-ALM view of a recorded run.
#[derive(Debug, Clone)]
pub struct EquivalenceView {
    /// shadow iterates v_k = (y_k; Pi_range(G) z_k)
    pub vs: Vec<DVector<f64>>,
    /// accumulated y-part errors of the joint subproblem
    pub deltas_alm: Vec<DVector<f64>>,
    pub gammas: Vec<DVector<f64>>,
    pub eps_hat: Vec<f64>,
    pub eps_hat_partial_sums: Vec<f64>,
    /// upper bounds on the full series sum and sum of squares of the bounds
    pub eps_hat_total: f64,
    pub eps_hat_sq_total: f64,
    pub max_inclusion_violation: f64,
    pub worst_gamma_range_violation: f64,
    /// worst excess of ||(Delta_k; gamma_k)|| over its summable bound
    pub worst_eps_hat_slack: f64,
    /// dense y-part of the block-diagonal proximal operator of the view
    pub t_y: DMatrix<f64>,
}

/// Rebuilds the proximal-ALM interpretation of a trace: the shadow sequence,
/// the error vectors of the joint subproblem, their summable bounds, and the
/// worst violation of the subdifferential inclusion.
pub fn reconstruct_alm_view(
    prob: &MultiBlockProblem,
    cfg: &ADMMConfig,
    trace: &AdmmTrace,
) -> Result<EquivalenceView> {
    if trace.sigma_changed {
        return Err(Error::Misuse(
            "the ALM view requires a fixed penalty parameter".into(),
        ));
    }
    if trace.xs.len() < 2 {
        return Err(Error::InvalidInput("trace records no iterations".into()));
    }
    let (y_dim, z_dim) = (prob.y_dim(), prob.z_dim());
    if y_dim + z_dim > DENSE_CAP {
        return Err(Error::SizeLimit {
            dim: y_dim + z_dim,
            cap: DENSE_CAP,
        });
    }
    let sigma = cfg.sigma;
    let tau = cfg.tau;
    let d_ops = cfg.resolved_d_ops(prob);
    let dec = build_decomposition(prob, &d_ops, sigma, &cfg.dec_opts)?;
    let gram = prob.g_map.gram();
    let proj = range_projector(&gram.to_dense())?;
    let t_y = assemble_t_y(prob, &dec, sigma)?;

    let k_count = trace.xs.len() - 1;
    let mut vs = Vec::with_capacity(k_count + 1);
    for k in 0..=k_count {
        let pz = &proj * &trace.zs[k];
        vs.push(stack(&[trace.ys[k].clone(), pz]));
    }

    // conventions for the k = -1 quantities
    let r0 = prob.constraint_residual(&trace.ys[0], &trace.zs[0]);
    let x_prev0 = &trace.xs[0] - tau * sigma * &r0;
    let gamma_m1 = prob.g_map.apply(&x_prev0) - &prob.b + sigma * prob.g_map.apply(&r0);

    let fg_norm = {
        // || F G* (G G*)^dagger || via dense assembly
        let fd = prob.f_stack().to_dense();
        let gd = prob.g_map.to_dense();
        let pinv = dense_pinv(&gram.to_dense())?;
        let m = &fd * gd.transpose() * &pinv;
        operator_norm(&LinearMap::dense(m), 1e-10)
    };
    let nund_norm = {
        let n = dec.y_dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            m.set_column(j, &dec.apply_upper(&dec.solve_diag(&e)?));
            e[j] = 0.0;
        }
        operator_norm(&LinearMap::dense(m), 1e-10)
    };
    let s = prob.num_blocks() as f64;

    let xi_rep = xi_bound_certificate(trace, tau);
    let mut deltas_alm = Vec::with_capacity(k_count);
    let mut eps_hat = Vec::with_capacity(k_count);
    let mut max_violation = 0.0_f64;
    let mut worst_gamma_range: f64 = 0.0;
    let mut worst_eps_hat_slack = f64::NEG_INFINITY;

    let d1 = prob.blocks[0];

    for k in 0..k_count {
        let dsgs = aggregate_error(&dec, &trace.deltas[k], &trace.delta_tildes[k])?;
        let (gamma_prev, x_prev) = if k == 0 {
            (gamma_m1.clone(), x_prev0.clone())
        } else {
            (trace.gammas[k - 1].clone(), trace.xs[k - 1].clone())
        };
        let resid_arg =
            &gamma_prev - &trace.gammas[k] - prob.g_map.apply(&(&x_prev - &trace.xs[k]));
        let pinv_part = pinv_apply(&gram, &resid_arg, 1e-13)?;
        let delta_k = &dsgs - prob.f_apply(&prob.g_map.apply_adjoint(&pinv_part));
        let g_out = &trace.gammas[k] - &proj * &trace.gammas[k];
        worst_gamma_range = worst_gamma_range.max(g_out.norm() / (1.0 + trace.gammas[k].norm()));

        // subdifferential inclusion at (y^{k+1}, z^{k+1})
        let y_next = &trace.ys[k + 1];
        let z_next = &trace.zs[k + 1];
        let smooth = prob.f.grad(&trace.ys[k])
            + prob.f.sigma_hat().apply(&(y_next - &trace.ys[k]))
            + prob.f_apply(&(&trace.xs[k] + sigma * prob.constraint_residual(y_next, z_next)))
            + &t_y * (y_next - &trace.ys[k]);
        let r = &delta_k - &smooth;
        let mut viol_sq = 0.0;
        let r1 = DVector::from(r.rows(0, d1));
        let y1 = DVector::from(y_next.rows(0, d1));
        let back = prox(&prob.p, &(&y1 + &r1), &LinearMap::identity(d1))?;
        viol_sq += (&y1 - back).norm_squared();
        for i in d1..y_dim {
            viol_sq += r[i] * r[i];
        }
        let gamma_check = prob.g_map.apply(&trace.xs[k]) - &prob.b
            + sigma * prob.g_map.apply(&prob.constraint_residual(y_next, z_next));
        viol_sq += (&gamma_check - &trace.gammas[k]).norm_squared();
        max_violation = max_violation.max(viol_sq.sqrt());

        // summable bound on (Delta_k; gamma_k)
        let full_err = stack(&[delta_k.clone(), trace.gammas[k].clone()]).norm();
        let bound = if k == 0 {
            full_err
        } else {
            let e_k = trace.eps[k];
            let e_km1 = trace.eps[k - 1];
            (s + 1.0) * e_k
                + 2.0 * s * nund_norm * e_k
                + fg_norm * (e_km1 + xi_rep.xi[k - 1] + e_k + xi_rep.xi[k])
        };
        worst_eps_hat_slack = worst_eps_hat_slack.max(full_err - bound - 1e-10);
        eps_hat.push(bound);
        deltas_alm.push(delta_k);
    }
    let mut partial = 0.0;
    let eps_hat_partial_sums: Vec<f64> = eps_hat
        .iter()
        .map(|e| {
            partial += e;
            partial
        })
        .collect();
    // full-series bounds: finite partial sums plus a tail from the schedule
    // series and the geometric decay of the feasibility bound
    let c1 = (s + 1.0) + 2.0 * s * nund_norm;
    let q = (1.0 - tau).abs();
    let xi_last = xi_rep.xi.last().copied().unwrap_or(0.0);
    let xi_tail = (xi_last + tau * trace.eps_total) / (1.0 - q).max(1e-12);
    let eps_tail = c1 * trace.eps_total + fg_norm * (2.0 * trace.eps_total + 2.0 * xi_tail);
    let eps_hat_total = eps_hat_partial_sums.last().copied().unwrap_or(0.0) + eps_tail;
    let eps_hat_sq_total =
        eps_hat.iter().map(|e| e * e).sum::<f64>() + eps_tail * eps_tail;
    Ok(EquivalenceView {
        vs,
        deltas_alm,
        gammas: trace.gammas.clone(),
        eps_hat,
        eps_hat_partial_sums,
        eps_hat_total,
        eps_hat_sq_total,
        max_inclusion_violation: max_violation,
        worst_gamma_range_violation: worst_gamma_range,
        worst_eps_hat_slack,
        t_y,
    })
}

/// Orthogonal projector onto the range of a symmetric PSD Gram matrix.
fn range_projector(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (vals, vecs) = sym_eig(&(0.5 * (gram + gram.transpose())))?;
    let vmax = vals.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
    let mut proj = DMatrix::zeros(n, n);
    for i in 0..vals.len() {
        if vals[i] > 1e-12 * vmax {
            let v = vecs.column(i);
            proj += v * v.transpose();
        }
    }
    Ok(proj)
}

fn dense_pinv(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (vals, vecs) = sym_eig(&(0.5 * (gram + gram.transpose())))?;
    let vmax = vals.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
    let inv = DVector::from_iterator(
        vals.len(),
        vals.iter()
            .map(|&v| if v > 1e-12 * vmax { 1.0 / v } else { 0.0 }),
    );
    Ok(&vecs * DMatrix::from_diagonal(&inv) * vecs.transpose())
}

/// Dense y-part of the block-diagonal proximal operator of the ALM view:
/// `T_y = D + N_sGS + sigma F G* (G G*)^dagger G F*`.
pub fn assemble_t_y(
    prob: &MultiBlockProblem,
    dec: &SGSDecomposition,
    sigma: f64,
) -> Result<DMatrix<f64>> {
    let d_full = LinearMap::block_diag(dec.d_ops.clone()).to_dense();
    let n_sgs = dec.sgs_operator()?.to_dense();
    let fd = prob.f_stack().to_dense();
    let gd = prob.g_map.to_dense();
    let pinv = dense_pinv(&prob.g_map.gram().to_dense())?;
    let cross = sigma * (&fd * gd.transpose() * pinv * &gd * fd.transpose());
    let t = d_full + n_sgs + cross;
    Ok(0.5 * (&t + t.transpose()))
}

/// Coordinates of the proximal-ALM reformulation of a multi-block problem:
/// w = (y; zeta) with z = R zeta restricted to range(G).
#[derive(Debug, Clone)]
pub struct Reformulation {
    pub gp: GenericProblem,
    pub cfg: IpalmConfig,
    /// orthonormal basis of range(G) (columns)
    pub r_basis: DMatrix<f64>,
}

impl Reformulation {
    /// Maps an ADMM iterate (y, z) to reformulation coordinates (y; R^T z).
    pub fn to_w(&self, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        stack(&[y.clone(), self.r_basis.transpose() * z])
    }

    /// Splits a reformulation iterate into (y, Pi_range(G) z).
    pub fn from_w(&self, w: &DVector<f64>, y_dim: usize) -> (DVector<f64>, DVector<f64>) {
        let y = DVector::from(w.rows(0, y_dim));
        let zeta = DVector::from(w.rows(y_dim, w.len() - y_dim));
        (y, &self.r_basis * zeta)
    }
}

/// Builds the proximal ALM instance equivalent to the sGS proximal ADMM on
/// `prob`: spaces reduced to Y x range(G), the smooth part keeps the
/// curvature of f, and the proximal operator carries `T_y` on y and zero on
/// the z part.
pub fn reformulate(prob: &MultiBlockProblem, cfg: &ADMMConfig) -> Result<Reformulation> {
    cfg.validate()?;
    let (y_dim, z_dim) = (prob.y_dim(), prob.z_dim());
    if y_dim + z_dim > DENSE_CAP {
        return Err(Error::SizeLimit {
            dim: y_dim + z_dim,
            cap: DENSE_CAP,
        });
    }
    let d_ops = cfg.resolved_d_ops(prob);
    let dec = build_decomposition(prob, &d_ops, cfg.sigma, &cfg.dec_opts)?;
    let t_y = assemble_t_y(prob, &dec, cfg.sigma)?;

    // orthonormal basis of range(G)
    let gram = prob.g_map.gram().to_dense();
    let r_basis = {
        let (vals, vecs) = sym_eig(&(0.5 * (&gram + gram.transpose())))?;
        let vmax = vals.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
        let cols: Vec<usize> = (0..vals.len())
            .filter(|&i| vals[i] > 1e-12 * vmax)
            .collect();
        let mut r = DMatrix::zeros(z_dim, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            r.set_column(j, &vecs.column(i));
        }
        r
    };
    let r_dim = r_basis.ncols();

    // phi: p on block 1, zero elsewhere (including the reduced z part)
    let rest = y_dim - prob.blocks[0] + r_dim;
    let phi = if rest == 0 {
        prob.p.clone()
    } else {
        ProxFn::Separable(vec![
            ProxBlock {
                dim: prob.blocks[0],
                f: prob.p.clone(),
            },
            ProxBlock {
                dim: rest,
                f: ProxFn::Zero { dim: rest },
            },
        ])
    };

    // h(y, zeta) = f(y) - <b, R zeta>
    let (fq, flin, fc0) = match &prob.f {
        SmoothFn::Zero { dim } => (LinearMap::zeros(*dim, *dim), DVector::zeros(*dim), 0.0),
        SmoothFn::Quadratic { q, lin, constant } => (q.clone(), lin.clone(), *constant),
        SmoothFn::LogSumExp { .. } => {
            return Err(Error::Unsupported(
                "the reformulation requires a quadratic smooth part".into(),
            ))
        }
    };
    let h = SmoothFn::Quadratic {
        q: LinearMap::block_diag(vec![fq, LinearMap::zeros(r_dim, r_dim)]),
        lin: stack(&[flin, -(r_basis.transpose() * &prob.b)]),
        constant: fc0,
    };
    // A x = (F x; R^T G x)
    let a_map = LinearMap::block(
        vec![y_dim, r_dim],
        vec![prob.x_dim()],
        vec![
            (0, 0, prob.f_stack()),
            (
                1,
                0,
                LinearMap::dense(r_basis.transpose().into_owned()).compose(prob.g_map.clone()),
            ),
        ],
    );
    let s_op = LinearMap::block_diag(vec![
        LinearMap::dense_symmetric(&t_y),
        LinearMap::zeros(r_dim, r_dim),
    ]);
    let gp = GenericProblem {
        phi,
        h,
        a_map,
        c: prob.c.clone(),
    };
    let icfg = IpalmConfig {
        sigma: cfg.sigma,
        tau: cfg.tau,
        s_op,
        eps: EpsSchedule::Zero,
        max_iter: cfg.max_iter,
        stop_tol: cfg.stop_tol,
    };
    Ok(Reformulation {
        gp,
        cfg: icfg,
        r_basis,
    })
}

/// Outcome of running the sGS proximal ADMM and the proximal ALM on the
/// reformulation side by side from the same initial point.
#[derive(Debug, Clone)]
pub struct EquivalenceOutcome {
    /// componentwise max deviation over the x, y and projected-z sequences
    pub max_deviation: f64,
    pub iterations: usize,
}

/// Runs both methods for `iters` iterations with exact subproblem solves and
/// compares the sequences {(x_k, y_k, Pi_range(G) z_k)}.
///
/// Sequence identity needs `G x0 = b` and a z0 that already satisfies its
/// stationarity condition given (x0, y0); the z0 is produced internally by
/// one Step-3 solve.
pub fn run_equivalence(
    prob: &MultiBlockProblem,
    cfg: &ADMMConfig,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    iters: usize,
) -> Result<EquivalenceOutcome> {
    let feas0 = (&prob.b - prob.g_map.apply(x0)).norm();
    if feas0 > 1e-10 * (1.0 + prob.b.norm()) {
        return Err(Error::Misuse(format!(
            "sequence equivalence needs G x0 = b (violation {feas0:.3e})"
        )));
    }
    let mut run_cfg = cfg.clone();
    run_cfg.max_iter = iters;
    run_cfg.stop_tol = 0.0;
    run_cfg.tol_schedule = EpsSchedule::Zero;
    run_cfg.adaptive.enabled = false;
    run_cfg.store_vectors = true;

    // initial z: one exact Step-3 solve at (x0, y0)
    let step3 = build_step3(prob, &Step3Mode::Direct)?;
    let rhs = (&prob.b - prob.g_map.apply(x0)) / cfg.sigma
        - prob.g_map.apply(&(prob.f_adjoint(y0) - &prob.c));
    let z0 = match &step3 {
        Step3::Chol(chol) => chol.solve(&rhs),
        Step3::RangeCg { maxit } | Step3::Pcg { maxit } => {
            pcg(&prob.g_map.gram(), &rhs, None, 1e-14, *maxit)?.x
        }
    };

    let (_, trace) = run_admm(prob, &run_cfg, x0, y0, &z0, None)?;

    let reform = reformulate(prob, &run_cfg)?;
    let w0 = reform.to_w(y0, &z0);
    let mut icfg = reform.cfg.clone();
    icfg.max_iter = iters;
    icfg.stop_tol = 0.0;
    let mut solver = SubSolver::dense();
    let (_, itrace) = crate::ipalm::run_ipalm(&reform.gp, &icfg, x0, &w0, &mut solver)?;

    let y_dim = prob.y_dim();
    let kmax = iters.min(trace.xs.len() - 1).min(itrace.xs.len() - 1);
    let proj = range_projector(&prob.g_map.gram().to_dense())?;
    let mut max_dev = 0.0_f64;
    for k in 0..=kmax {
        let dx = (&trace.xs[k] - &itrace.xs[k]).amax();
        let (yi, zi) = reform.from_w(&itrace.ws[k], y_dim);
        let dy = (&trace.ys[k] - yi).amax();
        let pz = &proj * &trace.zs[k];
        let dz = (&pz - zi).amax();
        max_dev = max_dev.max(dx).max(dy).max(dz);
    }
    Ok(EquivalenceOutcome {
        max_deviation: max_dev,
        iterations: kmax,
    })
}

/// Worst discrepancy between the recorded residual vectors of a trace and
/// their recomputation from the stored iterates and half-sweep states, plus
/// the worst excess of any recorded residual over its declared bound.
#[derive(Debug, Clone, Copy)]
pub struct TraceAudit {
    pub max_recompute_discrepancy: f64,
    pub worst_bound_excess: f64,
    pub pass: bool,
}

/// Re-derives every certified residual (backward and forward sweep residuals
/// and the Step-3 gradient) from the stored iterates and compares with the
/// recorded vectors.
pub fn verify_trace_residuals(
    prob: &MultiBlockProblem,
    cfg: &ADMMConfig,
    trace: &AdmmTrace,
) -> Result<TraceAudit> {
    if trace.y_halfs.len() != trace.xs.len() - 1 {
        return Err(Error::InvalidInput(
            "trace must store full iterate vectors for the audit".into(),
        ));
    }
    let d_ops = cfg.resolved_d_ops(prob);
    let offsets = prob.block_offsets();
    let s = prob.num_blocks();
    let y_dim = prob.y_dim();
    let mut max_disc = 0.0_f64;
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 0..trace.y_halfs.len() {
        let sigma = trace.sigmas[k];
        let dec = build_decomposition(prob, &d_ops, sigma, &cfg.dec_opts)?;
        let (x_k, y_k, z_k) = (&trace.xs[k], &trace.ys[k], &trace.zs[k]);
        // backward residuals: block i evaluated at (y_k[<i]; y_half[>=i])
        for i in (1..s).rev() {
            let mut point = y_k.clone();
            for t in offsets[i]..y_dim {
                point[t] = trace.y_halfs[k][t];
            }
            let rec = crate::sgs::block_residual(&dec, prob, i, &point, y_k, z_k, x_k, sigma)?;
            let stored = DVector::from(trace.delta_tildes[k].rows(offsets[i], prob.blocks[i]));
            max_disc = max_disc.max((rec - stored).norm());
        }
        // forward residuals: block i at (y_{k+1}[<=i]; y_half[>i])
        #[allow(clippy::needless_range_loop)]
        for i in 0..s {
            let mut point = trace.y_halfs[k].clone();
            let hi = offsets[i] + prob.blocks[i];
            for t in 0..hi {
                point[t] = trace.ys[k + 1][t];
            }
            let rec = crate::sgs::block_residual(&dec, prob, i, &point, y_k, z_k, x_k, sigma)?;
            let stored = DVector::from(trace.deltas[k].rows(offsets[i], prob.blocks[i]));
            max_disc = max_disc.max((rec - stored).norm());
        }
        // Step-3 residual
        let gamma = prob.g_map.apply(x_k) - &prob.b
            + sigma
                * prob
                    .g_map
                    .apply(&prob.constraint_residual(&trace.ys[k + 1], &trace.zs[k + 1]));
        max_disc = max_disc.max((&gamma - &trace.gammas[k]).norm());
        // declared bounds hold as logged
        let worst = trace.deltas[k]
            .norm()
            .max(trace.delta_tildes[k].norm())
            .max(trace.gammas[k].norm());
        worst_excess = worst_excess.max(worst - trace.eps[k]);
    }
    Ok(TraceAudit {
        max_recompute_discrepancy: max_disc,
        worst_bound_excess: worst_excess.max(0.0),
        pass: max_disc <= 1e-10 && worst_excess <= 1e-14,
    })
}

/// Maps a recorded run and its reconstructed view into a proximal-ALM trace
/// on the reformulation coordinates, so the descent and complexity
/// certificates can be evaluated against it.
pub fn alm_trace_from_view(
    reform: &Reformulation,
    trace: &AdmmTrace,
    view: &EquivalenceView,
) -> crate::ipalm::RunTrace {
    let rt = reform.r_basis.transpose();
    let ws: Vec<DVector<f64>> = trace
        .ys
        .iter()
        .zip(trace.zs.iter())
        .map(|(y, z)| stack(&[y.clone(), &rt * z]))
        .collect();
    let ds: Vec<DVector<f64>> = view
        .deltas_alm
        .iter()
        .zip(view.gammas.iter())
        .map(|(d, g)| stack(&[d.clone(), &rt * g]))
        .collect();
    let resid_norms: Vec<f64> = trace
        .xs
        .iter()
        .zip(ws.iter())
        .map(|(x, w)| reform.gp.kkt_residual_norm(x, w))
        .collect();
    crate::ipalm::RunTrace {
        xs: trace.xs.clone(),
        ws,
        ds,
        eps: view.eps_hat.clone(),
        resid_norms,
        sigma: trace.sigmas.first().copied().unwrap_or(1.0),
        tau: trace.tau,
        eps_total: view.eps_hat_total,
        eps_sq_total: view.eps_hat_sq_total,
    }
}
