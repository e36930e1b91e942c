//! Linear-operator abstraction, symmetric-matrix kernel, proximal operators,
//! and direct/iterative linear solvers.

pub mod linmap;
pub mod prox;
pub mod proxqp;
pub mod solve;
pub mod symm;

pub use linmap::{check_adjoint_consistency, offsets, CsrMatrix, LinearMap, MapKind};
pub use prox::{prox, subgrad_residual, ProxBlock, ProxFn};
pub use proxqp::solve_prox_qp;
pub use solve::{
    lanczos_min_ritz, operator_norm, pcg, pinv_apply, project_range, solve_spd, CholeskyHandle,
    PcgResult,
};
pub use symm::{project_psd, smat, svec, svec_dim, sym_eig, SymMatrix};
