//! Run configuration, result/trace serialization, SDPA file I/O, and the
//! command entry points behind the CLI (solve, bench, verify, gen).

pub mod sdpa;

use std::io::Write as IoWrite;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::apps::{
    self, build_basis_pursuit_dual, build_constrained_lasso, build_qsdp_dual, build_sdp_dual,
    gen_biq_qsdp, gen_multiblock, gen_random_sdp, LassoInstance, MultiBlockGenOptions,
    QSDPInstance, QsdpMetric, SDPInstance, SdpMetric,
};
use crate::error::{Error, Result};
use crate::ipalm::{self, EpsSchedule, SubSolver};
use crate::model::{KKTPoint, MultiBlockProblem};
use crate::opcore::LinearMap;
use crate::sgsadmm::{
    self, alm_trace_from_view, build_step3, reconstruct_alm_view, reformulate, run_admm,
    run_equivalence, verify_sgs_lemma, verify_trace_residuals, xi_bound_certificate, ADMMConfig,
    AdmmTrace, IterMetric, Step3Mode,
};

pub use sdpa::{parse_sdpa, parse_sdpa_file, write_sdpa};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Ipalm,
    SgsIpadmm,
    ClassicAdmm,
    /// benchmark baseline without a convergence guarantee
    DirectlyExtended,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverKind::Ipalm => "ipalm",
            SolverKind::SgsIpadmm => "sgs-ipadmm",
            SolverKind::ClassicAdmm => "classic-admm",
            SolverKind::DirectlyExtended => "directly-extended",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleSpec {
    None,
    Geometric { e0: f64, gamma: f64 },
    /// `eps_k = 1/(alpha (k+1)^1.2)`; alpha defaults to 1 + ||c||
    Polynomial { alpha: Option<f64> },
}

impl ScheduleSpec {
    pub fn resolve(&self, c_norm: f64) -> EpsSchedule {
        match self {
            ScheduleSpec::None => EpsSchedule::Zero,
            ScheduleSpec::Geometric { e0, gamma } => EpsSchedule::Geometric {
                e0: *e0,
                gamma: *gamma,
            },
            ScheduleSpec::Polynomial { alpha } => EpsSchedule::Polynomial {
                alpha: alpha.unwrap_or(1.0 + c_norm),
            },
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ScheduleSpec::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Sdpa,
    Native,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSpec {
    File { path: String, format: FileFormat },
    ToySdp,
    Sdp { n: usize, m: usize },
    BiqQsdp { n: usize, rank_a: usize, rank_b: usize },
    Lasso { n: usize, rows: usize },
    BasisPursuit { n: usize, m: usize },
    MultiBlock { nonneg: bool },
}

impl std::fmt::Display for InstanceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InstanceSpec::File { path, .. } => write!(f, "file:{path}"),
            InstanceSpec::ToySdp => write!(f, "toy-sdp"),
            InstanceSpec::Sdp { n, m } => write!(f, "sdp(n={n},m={m})"),
            InstanceSpec::BiqQsdp { n, .. } => write!(f, "biq-qsdp(n={n})"),
            InstanceSpec::Lasso { n, rows } => write!(f, "lasso(n={n},rows={rows})"),
            InstanceSpec::BasisPursuit { n, m } => write!(f, "basis-pursuit(n={n},m={m})"),
            InstanceSpec::MultiBlock { nonneg } => write!(f, "multi-block(nonneg={nonneg})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub instance: InstanceSpec,
    pub seed: u64,
    pub tau: f64,
    pub sigma: f64,
    pub stop_tol: f64,
    pub max_iter: usize,
    pub schedule: ScheduleSpec,
    pub adaptive_sigma: bool,
    pub trace_path: Option<String>,
}

impl RunConfig {
    pub fn new(solver: SolverKind, instance: InstanceSpec) -> Self {
        Self {
            solver,
            instance,
            seed: 0,
            tau: 1.9,
            sigma: 1.0,
            stop_tol: 1e-6,
            max_iter: 100_000,
            schedule: ScheduleSpec::None,
            adaptive_sigma: false,
            trace_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 2.0) {
            return Err(Error::Misuse(format!(
                "step-length tau must lie in (0, 2), got {}",
                self.tau
            )));
        }
        if self.stop_tol <= 0.0 {
            return Err(Error::Misuse("stop tolerance must be positive".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Misuse("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Self-describing structured result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    /// converged | iteration-limit
    pub status: String,
    pub solver: String,
    pub instance: String,
    pub iterations: usize,
    pub kkt_rel: f64,
    pub eta_max: Option<f64>,
    pub eta_gap: Option<f64>,
    /// objective of the solved (dual) model
    pub objective: f64,
    /// application primal/dual objective pair when available
    pub objective_pair: Option<[f64; 2]>,
    /// excluded from reproducibility comparisons
    pub wall_time_ms: u64,
    pub config: RunConfig,
}

impl ResultRecord {
    /// Copy with volatile fields cleared, for reproducibility comparisons.
    pub fn normalized(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_ms = 0;
        r
    }
}

// ---------------------------------------------------------------------------
// instance loading
// ---------------------------------------------------------------------------

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_mat(rows: &[Vec<f64>], cols_hint: usize) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(cols_hint);
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::InvalidInput("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Portable JSON payload for non-SDPA instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NativeFile {
    Lasso {
        phi: Vec<Vec<f64>>,
        eta: Vec<f64>,
        lambda: f64,
        a_e: Vec<Vec<f64>>,
        b_e: Vec<f64>,
        a_i: Vec<Vec<f64>>,
        b_i: Vec<f64>,
    },
    BasisPursuit {
        g: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    Qsdp {
        n: usize,
        factor_a: Vec<Vec<f64>>,
        factor_b: Vec<Vec<f64>>,
        a_e: Vec<Vec<f64>>,
        b_e: Vec<f64>,
        a_i: Vec<Vec<f64>>,
        b_i: Vec<f64>,
        c_svec: Vec<f64>,
        d_scale: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum LoadedInstance {
    Sdp(SDPInstance),
    Qsdp(QSDPInstance),
    Lasso(LassoInstance),
    BasisPursuit { g: DMatrix<f64>, b: DVector<f64> },
    MultiBlock { prob: MultiBlockProblem, star: KKTPoint },
}

pub fn gen_lasso(n: usize, rows: usize, seed: u64) -> LassoInstance {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let phi_mat = DMatrix::from_fn(rows.max(n + 1), n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let a_i = DMatrix::from_fn(2.min(n), n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let eta = DVector::from_fn(phi_mat.nrows(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
    // feasible with margin at a reference point
    let xbar = DVector::from_element(n, 0.1);
    let b_i = &a_i * &xbar - DVector::from_element(a_i.nrows(), 0.5);
    LassoInstance {
        phi_mat,
        eta,
        lambda: 0.3,
        a_e: DMatrix::zeros(0, n),
        b_e: DVector::zeros(0),
        a_i,
        b_i,
    }
}

pub fn gen_basis_pursuit(n: usize, m: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut x = DVector::zeros(n);
    for i in 0..m.min(n) {
        x[i] = rng.random::<f64>() * 2.0 - 1.0;
    }
    let b = &g * x;
    (g, b)
}

pub fn load_instance(spec: &InstanceSpec, seed: u64) -> Result<LoadedInstance> {
    Ok(match spec {
        InstanceSpec::File { path, format } => match format {
            FileFormat::Sdpa => LoadedInstance::Sdp(parse_sdpa_file(std::path::Path::new(path))?),
            FileFormat::Native => {
                let text = std::fs::read_to_string(path)?;
                let nf: NativeFile = serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidInput(format!("native file: {e}")))?;
                match nf {
                    NativeFile::Lasso {
                        phi,
                        eta,
                        lambda,
                        a_e,
                        b_e,
                        a_i,
                        b_i,
                    } => {
                        let pm = rows_mat(&phi, 0)?;
                        let n = pm.ncols();
                        LoadedInstance::Lasso(LassoInstance {
                            phi_mat: pm,
                            eta: DVector::from_vec(eta),
                            lambda,
                            a_e: rows_mat(&a_e, n)?,
                            b_e: DVector::from_vec(b_e),
                            a_i: rows_mat(&a_i, n)?,
                            b_i: DVector::from_vec(b_i),
                        })
                    }
                    NativeFile::BasisPursuit { g, b } => LoadedInstance::BasisPursuit {
                        g: rows_mat(&g, 0)?,
                        b: DVector::from_vec(b),
                    },
                    NativeFile::Qsdp {
                        n,
                        factor_a,
                        factor_b,
                        a_e,
                        b_e,
                        a_i,
                        b_i,
                        c_svec,
                        d_scale,
                    } => {
                        let dim = crate::opcore::svec_dim(n);
                        LoadedInstance::Qsdp(QSDPInstance {
                            n,
                            q: LinearMap::sym_kron(
                                rows_mat(&factor_a, n)?,
                                rows_mat(&factor_b, n)?,
                            ),
                            a_e: rows_mat(&a_e, dim)?,
                            b_e: DVector::from_vec(b_e),
                            a_i: rows_mat(&a_i, dim)?,
                            b_i: DVector::from_vec(b_i),
                            c: crate::opcore::SymMatrix::from_svec(DVector::from_vec(c_svec))?,
                            d_scale: DVector::from_vec(d_scale),
                        })
                    }
                }
            }
        },
        InstanceSpec::ToySdp => LoadedInstance::Sdp(apps::toy_sdp()),
        InstanceSpec::Sdp { n, m } => LoadedInstance::Sdp(gen_random_sdp(*n, *m, seed)),
        InstanceSpec::BiqQsdp { n, rank_a, rank_b } => {
            LoadedInstance::Qsdp(gen_biq_qsdp(*n, *rank_a, *rank_b, seed))
        }
        InstanceSpec::Lasso { n, rows } => LoadedInstance::Lasso(gen_lasso(*n, *rows, seed)),
        InstanceSpec::BasisPursuit { n, m } => {
            let (g, b) = gen_basis_pursuit(*n, *m, seed);
            LoadedInstance::BasisPursuit { g, b }
        }
        InstanceSpec::MultiBlock { nonneg } => {
            let opts = MultiBlockGenOptions {
                nonneg_block1: *nonneg,
                ..Default::default()
            };
            let (prob, star) = gen_multiblock(seed, &opts);
            LoadedInstance::MultiBlock { prob, star }
        }
    })
}

/// Serializes a generated instance to the given format.
pub fn instance_to_text(inst: &LoadedInstance, format: FileFormat) -> Result<String> {
    match (inst, format) {
        (LoadedInstance::Sdp(s), FileFormat::Sdpa) => Ok(write_sdpa(s)),
        (LoadedInstance::Sdp(_), FileFormat::Native) => Err(Error::Unsupported(
            "SDP instances are written in the sdpa format".into(),
        )),
        (LoadedInstance::Lasso(l), FileFormat::Native) => {
            let nf = NativeFile::Lasso {
                phi: mat_rows(&l.phi_mat),
                eta: l.eta.iter().cloned().collect(),
                lambda: l.lambda,
                a_e: mat_rows(&l.a_e),
                b_e: l.b_e.iter().cloned().collect(),
                a_i: mat_rows(&l.a_i),
                b_i: l.b_i.iter().cloned().collect(),
            };
            Ok(serde_json::to_string_pretty(&nf).expect("serialize"))
        }
        (LoadedInstance::BasisPursuit { g, b }, FileFormat::Native) => {
            let nf = NativeFile::BasisPursuit {
                g: mat_rows(g),
                b: b.iter().cloned().collect(),
            };
            Ok(serde_json::to_string_pretty(&nf).expect("serialize"))
        }
        (LoadedInstance::Qsdp(q), FileFormat::Native) => match q.q.kind() {
            crate::opcore::MapKind::SymKron { a, b } => {
                let nf = NativeFile::Qsdp {
                    n: q.n,
                    factor_a: mat_rows(a),
                    factor_b: mat_rows(b),
                    a_e: mat_rows(&q.a_e),
                    b_e: q.b_e.iter().cloned().collect(),
                    a_i: mat_rows(&q.a_i),
                    b_i: q.b_i.iter().cloned().collect(),
                    c_svec: q.c.svec().iter().cloned().collect(),
                    d_scale: q.d_scale.iter().cloned().collect(),
                };
                Ok(serde_json::to_string_pretty(&nf).expect("serialize"))
            }
            _ => Err(Error::Unsupported(
                "only symmetrized-Kronecker quadratics are serialized".into(),
            )),
        },
        _ => Err(Error::Unsupported(
            "unsupported instance/format combination".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

type PairFn = Box<dyn Fn(&KKTPoint, f64) -> [f64; 2]>;

struct BuiltProblem {
    prob: MultiBlockProblem,
    metric: Option<Box<dyn IterMetric>>,
    d_ops: Vec<LinearMap>,
    dec_opts: crate::sgs::DecompositionOptions,
    step3: Step3Mode,
    /// primal/dual pair evaluator when the application defines one
    pair: Option<PairFn>,
    two_block: bool,
}

fn build_problem(inst: &LoadedInstance, cfg: &RunConfig) -> Result<BuiltProblem> {
    let inexact = !cfg.schedule.is_exact();
    Ok(match inst {
        LoadedInstance::Sdp(s) => {
            let prob = build_sdp_dual(s, false)?;
            let s2 = s.clone();
            BuiltProblem {
                prob,
                metric: Some(Box::new(SdpMetric { inst: s.clone() })),
                d_ops: Vec::new(),
                dec_opts: Default::default(),
                step3: Step3Mode::Direct,
                pair: Some(Box::new(move |u, _| [s2.c.dot(&u.x), s2.b.dot(&u.z)])),
                two_block: true,
            }
        }
        LoadedInstance::Qsdp(q) => {
            let (prob, layout) = build_qsdp_dual(q)?;
            let d_ops = apps::qsdp_d_ops(q, &prob, cfg.sigma, !inexact);
            let mut dec_opts = crate::sgs::DecompositionOptions::default();
            if inexact {
                dec_opts.pcg_blocks.insert(1);
                dec_opts.skip_admissible = true;
            }
            let metric = QsdpMetric {
                inst: q.clone(),
                layout: layout.clone(),
            };
            let q2 = q.clone();
            let layout2 = layout.clone();
            BuiltProblem {
                prob,
                metric: Some(Box::new(metric)),
                d_ops,
                dec_opts,
                step3: if inexact {
                    Step3Mode::Pcg { maxit: 10_000 }
                } else {
                    Step3Mode::Direct
                },
                pair: Some(Box::new(move |u, _| {
                    let pt = layout2.split(u);
                    let pobj =
                        0.5 * pt.x.svec().dot(&q2.q.apply(pt.x.svec())) - q2.c.inner(&pt.x);
                    let dobj = -0.5 * pt.w.svec().dot(&q2.q.apply(pt.w.svec()))
                        + q2.b_e.dot(&pt.z_e)
                        + q2.b_i.dot(&pt.z_i);
                    [pobj, dobj]
                })),
                two_block: false,
            }
        }
        LoadedInstance::Lasso(l) => {
            let (prob, layout) = build_constrained_lasso(l)?;
            let l2 = l.clone();
            BuiltProblem {
                prob,
                metric: None,
                d_ops: Vec::new(),
                dec_opts: Default::default(),
                step3: Step3Mode::Direct,
                pair: Some(Box::new(move |u, dual_obj| {
                    let x = layout.primal_from(u);
                    [l2.primal_value(&x), 0.5 * l2.eta.norm_squared() - dual_obj]
                })),
                two_block: false,
            }
        }
        LoadedInstance::BasisPursuit { g, b } => {
            let prob = build_basis_pursuit_dual(g, b)?;
            BuiltProblem {
                prob,
                metric: None,
                d_ops: Vec::new(),
                dec_opts: Default::default(),
                step3: Step3Mode::Direct,
                pair: Some(Box::new(move |u, dual_obj| {
                    let l1: f64 = u.x.iter().map(|v| v.abs()).sum();
                    [l1, -dual_obj]
                })),
                two_block: true,
            }
        }
        LoadedInstance::MultiBlock { prob, .. } => BuiltProblem {
            prob: prob.clone(),
            metric: None,
            d_ops: apps::default_d_ops(prob, cfg.sigma),
            dec_opts: Default::default(),
            step3: Step3Mode::Direct,
            pair: None,
            two_block: false,
        },
    })
}

fn admm_config(cfg: &RunConfig, built: &BuiltProblem) -> ADMMConfig {
    let mut ac = ADMMConfig::new(cfg.sigma, cfg.tau);
    ac.stop_tol = cfg.stop_tol;
    ac.max_iter = cfg.max_iter;
    ac.tol_schedule = cfg.schedule.resolve(built.prob.c.norm());
    ac.adaptive.enabled = cfg.adaptive_sigma;
    ac.d_ops = built.d_ops.clone();
    ac.dec_opts = built.dec_opts.clone();
    ac.step3 = built.step3.clone();
    ac.store_vectors = cfg.trace_path.is_some();
    ac
}

fn trace_csv(trace: &AdmmTrace) -> String {
    use std::fmt::Write;
    let mut out =
        String::from("k,eta_max,eta_gap,sigma,tau,step_x,step_y,step_z,delta,delta_tilde,gamma\n");
    let fmt_eta = |e: &Option<sgsadmm::EtaSummary>, pick_gap: bool| -> String {
        match e {
            Some(v) => format!("{}", if pick_gap { v.eta_gap } else { v.eta_max }),
            None => String::new(),
        }
    };
    for k in 0..trace.sigmas.len() {
        let (sx, sy, sz) = if trace.xs.len() > k + 1 {
            (
                format!("{}", (&trace.xs[k + 1] - &trace.xs[k]).norm()),
                format!("{}", (&trace.ys[k + 1] - &trace.ys[k]).norm()),
                format!("{}", (&trace.zs[k + 1] - &trace.zs[k]).norm()),
            )
        } else {
            (String::new(), String::new(), String::new())
        };
        let (dn, dtn, gn) = if trace.deltas.len() > k {
            (
                format!("{}", trace.deltas[k].norm()),
                format!("{}", trace.delta_tildes[k].norm()),
                format!("{}", trace.gammas[k].norm()),
            )
        } else {
            (String::new(), String::new(), String::new())
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            k + 1,
            fmt_eta(&trace.etas[k + 1], false),
            fmt_eta(&trace.etas[k + 1], true),
            trace.sigmas[k],
            trace.tau,
            sx,
            sy,
            sz,
            dn,
            dtn,
            gn
        )
        .unwrap();
    }
    out
}

fn solve_impl(cfg: &RunConfig) -> Result<(ResultRecord, Option<String>)> {
    cfg.validate()?;
    let inst = load_instance(&cfg.instance, cfg.seed)?;
    let built = build_problem(&inst, cfg)?;
    let prob = &built.prob;
    let started = Instant::now();

    let (status, iterations, kkt_rel, eta_max, eta_gap, objective, u, trace) = match cfg.solver {
        SolverKind::Ipalm => {
            let ac = admm_config(cfg, &built);
            let reform = reformulate(prob, &ac)?;
            let mut icfg = reform.cfg.clone();
            icfg.eps = cfg.schedule.resolve(prob.c.norm());
            icfg.max_iter = cfg.max_iter;
            icfg.stop_tol = cfg.stop_tol;
            let mut solver = if matches!(icfg.eps, EpsSchedule::Zero) {
                SubSolver::dense()
            } else {
                SubSolver::ProxGradient { max_iter: 500_000 }
            };
            let x0 = DVector::zeros(prob.x_dim());
            let w0 = reform.to_w(&DVector::zeros(prob.y_dim()), &DVector::zeros(prob.z_dim()));
            let (sol, _) = ipalm::run_ipalm(&reform.gp, &icfg, &x0, &w0, &mut solver)?;
            let (y, z) = reform.from_w(&sol.w, prob.y_dim());
            let u = KKTPoint { x: sol.x, y, z };
            let obj = prob.objective(&u.y, &u.z);
            let (em, eg) = match &built.metric {
                Some(m) => {
                    let e = m.eval(prob, &u)?;
                    (Some(e.eta_max), Some(e.eta_gap))
                }
                None => (None, None),
            };
            (
                if sol.converged {
                    "converged"
                } else {
                    "iteration-limit"
                },
                sol.iterations,
                sol.final_resid_rel,
                em,
                eg,
                obj,
                u,
                None,
            )
        }
        SolverKind::SgsIpadmm | SolverKind::ClassicAdmm => {
            let ac = admm_config(cfg, &built);
            let x0 = DVector::zeros(prob.x_dim());
            let y0 = DVector::zeros(prob.y_dim());
            let z0 = DVector::zeros(prob.z_dim());
            let (sol, trace) = if cfg.solver == SolverKind::ClassicAdmm {
                if !built.two_block {
                    return Err(Error::Misuse(
                        "classic-admm applies to two-block instances (SDP, basis pursuit)".into(),
                    ));
                }
                sgsadmm::classic_admm_2block(prob, &ac, &x0, &y0, &z0, built.metric.as_deref())?
            } else {
                run_admm(prob, &ac, &x0, &y0, &z0, built.metric.as_deref())?
            };
            let kkt = crate::model::kkt_residual_rel(prob, &sol.u);
            (
                if sol.converged {
                    "converged"
                } else {
                    "iteration-limit"
                },
                sol.iterations,
                kkt,
                sol.final_eta.map(|e| e.eta_max),
                sol.final_eta.map(|e| e.eta_gap),
                sol.objective,
                sol.u,
                Some(trace),
            )
        }
        SolverKind::DirectlyExtended => {
            let ac = admm_config(cfg, &built);
            let (sol, trace) = run_directly_extended(prob, &ac, built.metric.as_deref())?;
            let kkt = crate::model::kkt_residual_rel(prob, &sol.u);
            (
                if sol.converged {
                    "converged"
                } else {
                    "iteration-limit"
                },
                sol.iterations,
                kkt,
                sol.final_eta.map(|e| e.eta_max),
                sol.final_eta.map(|e| e.eta_gap),
                sol.objective,
                sol.u,
                Some(trace),
            )
        }
    };
    let pair = built.pair.as_ref().map(|f| f(&u, objective));
    let record = ResultRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        status: status.to_string(),
        solver: cfg.solver.to_string(),
        instance: cfg.instance.to_string(),
        iterations,
        kkt_rel,
        eta_max,
        eta_gap,
        objective,
        objective_pair: pair,
        wall_time_ms: started.elapsed().as_millis() as u64,
        config: cfg.clone(),
    };
    let csv = match (&cfg.trace_path, trace) {
        (Some(_), Some(t)) => Some(trace_csv(&t)),
        _ => None,
    };
    Ok((record, csv))
}

/// The forward-only multi-block baseline used by the benchmark harness; it
/// carries no convergence guarantee and is labeled as such in results.
pub fn run_directly_extended(
    prob: &MultiBlockProblem,
    cfg: &ADMMConfig,
    metric: Option<&dyn IterMetric>,
) -> Result<(sgsadmm::AdmmSolution, AdmmTrace)> {
    cfg.validate()?;
    let d_ops = cfg.resolved_d_ops(prob);
    let dec = crate::sgs::build_decomposition(prob, &d_ops, cfg.sigma, &cfg.dec_opts)?;
    let step3 = build_step3(prob, &cfg.step3)?;
    let mut x = DVector::zeros(prob.x_dim());
    let mut y = DVector::zeros(prob.y_dim());
    let mut z = DVector::zeros(prob.z_dim());
    let eval = |x: &DVector<f64>,
                y: &DVector<f64>,
                z: &DVector<f64>|
     -> Result<(f64, Option<sgsadmm::EtaSummary>)> {
        let u = KKTPoint {
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
        };
        match metric {
            Some(m) => {
                let e = m.eval(prob, &u)?;
                Ok((e.eta_max, Some(e)))
            }
            None => Ok((crate::model::kkt_residual_rel(prob, &u), None)),
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
        kkt_norms: Vec::new(),
        etas: Vec::new(),
        tau: cfg.tau,
        eps_total: cfg.tol_schedule.sum_upper_bound(),
        eps_sq_total: cfg.tol_schedule.sum_sq_upper_bound(),
        sigma_changed: false,
    };
    let (m0, eta0) = eval(&x, &y, &z)?;
    trace.etas.push(eta0);
    let mut converged = m0 <= cfg.stop_tol;
    let mut iterations = 0;
    let mut final_metric = m0;
    let mut final_eta = eta0;
    while !converged && iterations < cfg.max_iter {
        let eps_k = cfg.tol_schedule.eps(iterations);
        let (y_next, _delta) = crate::sgs::forward_sweep(&dec, prob, &z, &x, &y, cfg.sigma, eps_k)?;
        let rhs = (&prob.b - prob.g_map.apply(&x)) / cfg.sigma
            - prob.g_map.apply(&(prob.f_adjoint(&y_next) - &prob.c));
        let z_next = match &step3 {
            sgsadmm::Step3::Chol(chol) => chol.solve(&rhs),
            sgsadmm::Step3::RangeCg { maxit } => {
                crate::opcore::pcg(&prob.g_map.gram(), &rhs, None, 1e-13, *maxit)?.x
            }
            sgsadmm::Step3::Pcg { maxit } => {
                let tol = (eps_k / cfg.sigma).max(1e-13) / (1.0 + rhs.norm());
                crate::opcore::pcg(&prob.g_map.gram(), &rhs, None, tol, *maxit)?.x
            }
        };
        x += cfg.tau * cfg.sigma * prob.constraint_residual(&y_next, &z_next);
        y = y_next;
        z = z_next;
        iterations += 1;
        trace.sigmas.push(cfg.sigma);
        trace
            .feas_norms
            .push((&prob.b - prob.g_map.apply(&x)).norm());
        let (m, eta) = eval(&x, &y, &z)?;
        trace.etas.push(eta);
        final_metric = m;
        final_eta = eta;
        converged = m <= cfg.stop_tol;
    }
    let u = KKTPoint { x, y, z };
    let objective = prob.objective(&u.y, &u.z);
    Ok((
        sgsadmm::AdmmSolution {
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

/// Runs the configured solver, writes the result record to `sink` and the
/// optional per-iteration trace to the configured path. Exit codes: 0 on
/// convergence, 2 on hitting the iteration cap, 1 on any error.
pub fn solve_command(cfg: &RunConfig, sink: &mut dyn IoWrite) -> i32 {
    match solve_impl(cfg) {
        Ok((record, csv)) => {
            if let (Some(path), Some(text)) = (&cfg.trace_path, csv) {
                if let Err(e) = std::fs::write(path, text) {
                    eprintln!("error: cannot write trace: {e}");
                    return 1;
                }
            }
            let json = serde_json::to_string_pretty(&record).expect("record serializes");
            if writeln!(sink, "{json}").is_err() {
                return 1;
            }
            if record.status == "converged" {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub instance: InstanceSpec,
    pub seeds: Vec<u64>,
    pub taus: Vec<f64>,
    pub solvers: Vec<SolverKind>,
    pub sigma: f64,
    pub stop_tol: f64,
    pub max_iter: usize,
    pub schedule: ScheduleSpec,
}

/// Runs the grid and writes a per-cell CSV plus a performance-profile CSV
/// (fraction of instances solved within a factor of the per-instance best
/// iteration count). Cell failures are recorded in-row; the run continues.
pub fn bench_command(
    spec: &BenchSpec,
    cells_sink: &mut dyn IoWrite,
    profile_sink: &mut dyn IoWrite,
) -> i32 {
    struct Cell {
        seed: u64,
        solver: String,
        tau: f64,
        status: String,
        iterations: usize,
        eta_max: String,
        eta_gap: String,
    }
    let mut rows: Vec<Cell> = Vec::new();
    for &seed in &spec.seeds {
        for &tau in &spec.taus {
            for &solver in &spec.solvers {
                let cfg = RunConfig {
                    solver,
                    instance: spec.instance.clone(),
                    seed,
                    tau,
                    sigma: spec.sigma,
                    stop_tol: spec.stop_tol,
                    max_iter: spec.max_iter,
                    schedule: spec.schedule,
                    adaptive_sigma: false,
                    trace_path: None,
                };
                let cell = match solve_impl(&cfg) {
                    Ok((rec, _)) => Cell {
                        seed,
                        solver: solver.to_string(),
                        tau,
                        status: rec.status.clone(),
                        iterations: rec.iterations,
                        eta_max: rec.eta_max.map(|v| format!("{v}")).unwrap_or_default(),
                        eta_gap: rec.eta_gap.map(|v| format!("{v}")).unwrap_or_default(),
                    },
                    Err(e) => Cell {
                        seed,
                        solver: solver.to_string(),
                        tau,
                        status: format!("error: {e}"),
                        iterations: 0,
                        eta_max: String::new(),
                        eta_gap: String::new(),
                    },
                };
                rows.push(cell);
            }
        }
    }
    let mut ok = writeln!(
        cells_sink,
        "instance,seed,solver,tau,status,iterations,eta_max,eta_gap"
    )
    .is_ok();
    for r in &rows {
        ok &= writeln!(
            cells_sink,
            "{},{},{},{},{},{},{},{}",
            spec.instance, r.seed, r.solver, r.tau, r.status, r.iterations, r.eta_max, r.eta_gap
        )
        .is_ok();
    }

    // performance profile over iteration counts
    let variants: Vec<(String, f64)> = spec
        .solvers
        .iter()
        .flat_map(|s| spec.taus.iter().map(move |&t| (s.to_string(), t)))
        .collect();
    let rho_grid = [1.0, 1.05, 1.1, 1.25, 1.5, 2.0, 4.0, 8.0, 16.0];
    ok &= writeln!(profile_sink, "solver,tau,rho,fraction").is_ok();
    for (sname, tau) in &variants {
        for &rho in &rho_grid {
            let mut solved_within = 0usize;
            let mut total = 0usize;
            for &seed in &spec.seeds {
                let best = rows
                    .iter()
                    .filter(|r| r.seed == seed && r.status == "converged")
                    .map(|r| r.iterations)
                    .min();
                let Some(best) = best else { continue };
                total += 1;
                if let Some(row) = rows
                    .iter()
                    .find(|r| r.seed == seed && &r.solver == sname && r.tau == *tau)
                {
                    if row.status == "converged" && (row.iterations as f64) <= rho * best as f64 {
                        solved_within += 1;
                    }
                }
            }
            let fraction = if total == 0 {
                0.0
            } else {
                solved_within as f64 / total as f64
            };
            ok &= writeln!(profile_sink, "{sname},{tau},{rho},{fraction}").is_ok();
        }
    }
    if ok {
        0
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateLine {
    pub name: String,
    pub pass: bool,
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub lines: Vec<CertificateLine>,
    pub pass: bool,
}

/// Runs the full certificate bundle on a seeded random multi-block instance:
/// sequence equivalence, the sweep/one-shot identity, the reconstructed
/// subdifferential inclusion, the descent and complexity certificates
/// against the planted reference solution, the feasibility bound on an
/// inexact run, and a residual audit of the stored trace.
pub fn verify_bundle(cfg: &RunConfig) -> Result<VerifyOutcome> {
    cfg.validate()?;
    let opts = MultiBlockGenOptions {
        nonneg_block1: true,
        ..Default::default()
    };
    let (prob, star) = gen_multiblock(cfg.seed, &opts);
    let d_ops = apps::default_d_ops(&prob, cfg.sigma);
    let mut ac = ADMMConfig::new(cfg.sigma, cfg.tau);
    ac.d_ops = d_ops.clone();
    ac.stop_tol = 0.0;
    ac.max_iter = 40;
    ac.store_vectors = true;

    let mut lines: Vec<CertificateLine> = Vec::new();
    let push = |lines: &mut Vec<CertificateLine>, name: &str, pass: bool, worst: f64, detail: String| {
        lines.push(CertificateLine {
            name: name.to_string(),
            pass,
            worst,
            detail,
        });
    };

    // exact run from the feasibility-compatible start
    let x0 = star.x.clone();
    let y0 = DVector::zeros(prob.y_dim());
    let (_, trace) = run_admm(&prob, &ac, &x0, &y0, &DVector::zeros(prob.z_dim()), None)?;

    let eq = run_equivalence(&prob, &ac, &x0, &y0, 40)?;
    push(
        &mut lines,
        "equivalence",
        eq.max_deviation <= 1e-9,
        eq.max_deviation,
        format!("{} iterations", eq.iterations),
    );

    // sweep vs one-shot identity on the first iterations
    let dec = crate::sgs::build_decomposition(&prob, &d_ops, cfg.sigma, &ac.dec_opts)?;
    let mut worst_lemma = 0.0_f64;
    let mut worst_fact = 0.0_f64;
    for k in 0..trace.y_halfs.len().min(10) {
        let dsgs = crate::sgs::aggregate_error(&dec, &trace.deltas[k], &trace.delta_tildes[k])?;
        let rep = verify_sgs_lemma(
            &dec,
            &prob,
            &trace.zs[k],
            &trace.xs[k],
            &trace.ys[k],
            cfg.sigma,
            &trace.ys[k + 1],
            &dsgs,
        )?;
        worst_lemma = worst_lemma.max(rep.sweep_violation);
        worst_fact = worst_fact.max(rep.factorization_residual);
    }
    push(
        &mut lines,
        "sgs-lemma",
        worst_lemma <= 1e-9 && worst_fact <= 1e-12,
        worst_lemma,
        format!("factorization residual {worst_fact:.3e}"),
    );

    let view = reconstruct_alm_view(&prob, &ac, &trace)?;
    push(
        &mut lines,
        "alm-inclusion",
        view.max_inclusion_violation <= 1e-9 && view.worst_gamma_range_violation <= 1e-10,
        view.max_inclusion_violation,
        format!(
            "gamma range violation {:.3e}",
            view.worst_gamma_range_violation
        ),
    );

    let reform = reformulate(&prob, &ac)?;
    let alm_trace = alm_trace_from_view(&reform, &trace, &view);
    let w_star = reform.to_w(&star.y, &star.z);
    let star_resid = reform.gp.kkt_residual_norm(&star.x, &w_star);
    let fejer = ipalm::fejer_certificate(&reform.gp, &reform.cfg, &alm_trace, &star.x, &w_star)?;
    push(
        &mut lines,
        "fejer",
        fejer.pass && star_resid <= 1e-9,
        fejer.worst_slack,
        format!("reference residual {star_resid:.3e}"),
    );
    let complexity =
        ipalm::complexity_certificate(&reform.gp, &reform.cfg, &alm_trace, &star.x, &w_star)?;
    push(
        &mut lines,
        "complexity",
        complexity.pass,
        complexity.curve.iter().cloned().fold(0.0_f64, f64::max),
        format!("bound {:.3e}", complexity.varrho),
    );

    // inexact run: iterative inner solves with the polynomial schedule
    let mut aci = ac.clone();
    aci.tol_schedule = EpsSchedule::Polynomial {
        alpha: 1.0 + prob.c.norm(),
    };
    aci.dec_opts.pcg_blocks.insert(1);
    aci.dec_opts.pcg_blocks.insert(2);
    aci.step3 = Step3Mode::Pcg { maxit: 4000 };
    aci.max_iter = 60;
    let (_, itrace) = run_admm(&prob, &aci, &x0, &y0, &DVector::zeros(prob.z_dim()), None)?;
    let xi = xi_bound_certificate(&itrace, cfg.tau);
    push(
        &mut lines,
        "xi-bound",
        xi.pass,
        xi.worst_slack,
        format!("{} iterations", itrace.sigmas.len()),
    );

    let audit = verify_trace_residuals(&prob, &aci, &itrace)?;
    push(
        &mut lines,
        "residual-audit",
        audit.pass,
        audit.max_recompute_discrepancy,
        format!("bound excess {:.3e}", audit.worst_bound_excess),
    );

    let pass = lines.iter().all(|l| l.pass);
    Ok(VerifyOutcome { lines, pass })
}

/// Prints one pass/fail line per certificate; exit 0 iff all pass, 3 on a
/// certificate violation, 1 on setup errors.
pub fn verify_command(cfg: &RunConfig, sink: &mut dyn IoWrite) -> i32 {
    match verify_bundle(cfg) {
        Ok(out) => {
            for l in &out.lines {
                let _ = writeln!(
                    sink,
                    "{} {:<16} worst {: >12.3e}  ({})",
                    if l.pass { "PASS" } else { "FAIL" },
                    l.name,
                    l.worst,
                    l.detail
                );
            }
            if out.pass {
                0
            } else {
                3
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Generates an instance and writes it to `path`.
pub fn gen_command(spec: &InstanceSpec, seed: u64, path: &str, format: FileFormat) -> i32 {
    let run = || -> Result<()> {
        let inst = load_instance(spec, seed)?;
        let text = instance_to_text(&inst, format)?;
        std::fs::write(path, text)?;
        Ok(())
    };
    match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
