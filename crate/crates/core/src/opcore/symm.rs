//! Symmetric matrices in scaled-vector (svec) form.
//!
//! `svec` packs the upper triangle column by column with off-diagonal entries
//! scaled by sqrt(2), so that the Euclidean inner product of two svec vectors
//! equals the Frobenius inner product of the matrices they represent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Packed dimension of the svec representation of an `n x n` symmetric matrix.
pub fn svec_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Recovers the matrix order from a packed length, if it is triangular.
pub fn order_from_svec_dim(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1)) / 2;
    (n.saturating_sub(1)..=n + 1).find(|&cand| svec_dim(cand) == len)
}

/// A symmetric matrix stored in svec form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: DVector<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: DVector::zeros(svec_dim(n)),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        let mut m = Self::zeros(d.len());
        for i in 0..d.len() {
            m.set(i, i, d[i]);
        }
        m
    }

    /// Wraps an svec vector without copying. Fails if the length is not triangular.
    pub fn from_svec(v: DVector<f64>) -> Result<Self> {
        let n = order_from_svec_dim(v.len())
            .ok_or_else(|| Error::InvalidInput(format!("svec length {} is not n(n+1)/2", v.len())))?;
        Ok(Self { n, data: v })
    }

    /// Symmetrizes `m` as (M + M^T)/2 and packs it.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        out
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn svec(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_svec(self) -> DVector<f64> {
        self.data
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.n);
        j * (j + 1) / 2 + i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let v = self.data[self.idx(i, j)];
        if i == j {
            v
        } else {
            v / SQRT2
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] = if i == j { value } else { SQRT2 * value };
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.get(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Frobenius inner product, evaluated on the packed vectors.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.data.dot(&other.data)
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// svec of a dense symmetric matrix (symmetrizing first).
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    SymMatrix::from_dense(m).into_svec()
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(SymMatrix::from_svec(v.clone())?.to_dense())
}

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues (ascending order not guaranteed) and the orthogonal
/// factor with eigenvectors as columns.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let max_iter = 30 * m.nrows().max(8);
    let sym = nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, max_iter).ok_or(
        Error::NumericalFailure {
            what: "symmetric eigendecomposition".into(),
            iterations: Some(max_iter),
        },
    )?;
    Ok((sym.eigenvalues, sym.eigenvectors))
}

/// Projection onto the positive semidefinite cone.
///
/// Negative eigenvalues are clipped to zero, which gives the Frobenius-nearest
/// PSD matrix.
pub fn project_psd(s: &SymMatrix) -> Result<SymMatrix> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(
            "projection input has non-finite entries".into(),
        ));
    }
    let (vals, vecs) = sym_eig(&s.to_dense())?;
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(0.0)));
    let rebuilt = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
    Ok(SymMatrix::from_dense(&rebuilt))
}
