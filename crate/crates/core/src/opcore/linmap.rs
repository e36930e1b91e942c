//! Abstract linear operators with adjoints.
//!
//! A [`LinearMap`] is a tagged representation of a linear operator between
//! finite-dimensional spaces. Operators are immutable after construction and
//! cheap to compose; dense assembly is available for desk-scale algebra.

use nalgebra::{DMatrix, DVector};

use super::symm::{order_from_svec_dim, svec_dim, SymMatrix};
use crate::error::{Error, Result};

/// Compressed sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds CSR storage from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(i, j, v) in triplets {
            assert!(i < rows && j < cols, "triplet out of bounds");
            per_row[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    fn apply(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        for i in 0..self.rows {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * v[self.indices[k]];
            }
            out[i] += acc;
        }
    }

    fn apply_adjoint(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        for i in 0..self.rows {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for k in self.indptr[i]..self.indptr[i + 1] {
                out[self.indices[k]] += self.values[k] * vi;
            }
        }
    }
}

/// A block partitioned operator; absent blocks are zero.
#[derive(Debug, Clone)]
pub struct BlockMap {
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    pub entries: Vec<(usize, usize, LinearMap)>,
}

#[derive(Debug, Clone)]
pub enum MapKind {
    Zero,
    Identity,
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
    Scaled(f64, Box<LinearMap>),
    /// Sum of identically shaped maps.
    Sum(Vec<LinearMap>),
    /// Composition applied right to left: `Product([a, b])` is `a(b(v))`.
    Product(Vec<LinearMap>),
    Adjoint(Box<LinearMap>),
    Block(Box<BlockMap>),
    /// Symmetrized Kronecker operator on svec space: v -> svec((A X B + B X A)/2)
    /// with X = smat(v); self-adjoint for symmetric A, B.
    SymKron {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct LinearMap {
    rows: usize,
    cols: usize,
    self_adjoint: bool,
    kind: MapKind,
}

impl LinearMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            self_adjoint: rows == cols,
            kind: MapKind::Zero,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            self_adjoint: true,
            kind: MapKind::Identity,
        }
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self::identity(n).scale(s)
    }

    pub fn diagonal(d: DVector<f64>) -> Self {
        let n = d.len();
        Self {
            rows: n,
            cols: n,
            self_adjoint: true,
            kind: MapKind::Diagonal(d),
        }
    }

    /// Dense operator. The self-adjoint flag is set only for exactly
    /// symmetric square matrices; use [`LinearMap::dense_symmetric`] to
    /// symmetrize explicitly.
    pub fn dense(m: DMatrix<f64>) -> Self {
        let sym = m.is_square() && {
            let mut ok = true;
            'outer: for j in 0..m.ncols() {
                for i in 0..j {
                    if m[(i, j)] != m[(j, i)] {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            ok
        };
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            self_adjoint: sym,
            kind: MapKind::Dense(m),
        }
    }

    pub fn dense_symmetric(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square());
        let sym = 0.5 * (m + m.transpose());
        Self {
            rows: sym.nrows(),
            cols: sym.ncols(),
            self_adjoint: true,
            kind: MapKind::Dense(sym),
        }
    }

    pub fn sparse(m: CsrMatrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            self_adjoint: false,
            kind: MapKind::Sparse(m),
        }
    }

    pub fn scale(self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            self_adjoint: self.self_adjoint,
            kind: MapKind::Scaled(s, Box::new(self)),
        }
    }

    pub fn sum(terms: Vec<LinearMap>) -> Self {
        assert!(!terms.is_empty(), "sum of no operators");
        let (rows, cols) = (terms[0].rows, terms[0].cols);
        assert!(
            terms.iter().all(|t| t.rows == rows && t.cols == cols),
            "sum shape mismatch"
        );
        let sym = terms.iter().all(|t| t.self_adjoint);
        Self {
            rows,
            cols,
            self_adjoint: sym,
            kind: MapKind::Sum(terms),
        }
    }

    /// `a.compose(b)` applies `b` first: (a ∘ b) v = a(b(v)).
    pub fn compose(self, b: LinearMap) -> Self {
        assert_eq!(self.cols, b.rows, "composition shape mismatch");
        Self {
            rows: self.rows,
            cols: b.cols,
            self_adjoint: false,
            kind: MapKind::Product(vec![self, b]),
        }
    }

    pub fn adjoint(self) -> Self {
        if self.self_adjoint {
            return self;
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            self_adjoint: false,
            kind: MapKind::Adjoint(Box::new(self)),
        }
    }

    /// The Gram operator A A*, flagged self-adjoint.
    pub fn gram(&self) -> Self {
        let mut m = self.clone().compose(self.clone().adjoint());
        m.self_adjoint = true;
        m
    }

    /// The Gram operator A* A, flagged self-adjoint.
    pub fn gram_adjoint(&self) -> Self {
        let mut m = self.clone().adjoint().compose(self.clone());
        m.self_adjoint = true;
        m
    }

    pub fn block(row_dims: Vec<usize>, col_dims: Vec<usize>, entries: Vec<(usize, usize, LinearMap)>) -> Self {
        let rows: usize = row_dims.iter().sum();
        let cols: usize = col_dims.iter().sum();
        for (i, j, m) in &entries {
            assert!(*i < row_dims.len() && *j < col_dims.len(), "block index out of range");
            assert_eq!(m.rows, row_dims[*i], "block row dim mismatch");
            assert_eq!(m.cols, col_dims[*j], "block col dim mismatch");
        }
        Self {
            rows,
            cols,
            self_adjoint: false,
            kind: MapKind::Block(Box::new(BlockMap {
                row_dims,
                col_dims,
                entries,
            })),
        }
    }

    /// Block-diagonal operator from per-block maps.
    pub fn block_diag(blocks: Vec<LinearMap>) -> Self {
        let row_dims: Vec<usize> = blocks.iter().map(|b| b.rows).collect();
        let col_dims: Vec<usize> = blocks.iter().map(|b| b.cols).collect();
        let sym = blocks.iter().all(|b| b.self_adjoint);
        let entries = blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| (i, i, b))
            .collect();
        let mut m = Self::block(row_dims, col_dims, entries);
        m.self_adjoint = sym;
        m
    }

    pub fn sym_kron(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert!(a.is_square() && b.is_square() && a.nrows() == b.nrows());
        let dim = svec_dim(a.nrows());
        Self {
            rows: dim,
            cols: dim,
            self_adjoint: true,
            kind: MapKind::SymKron { a, b },
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.self_adjoint
    }

    /// Marks the operator self-adjoint; caller asserts symmetry.
    pub fn assume_self_adjoint(mut self) -> Self {
        assert_eq!(self.rows, self.cols);
        self.self_adjoint = true;
        self
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.cols, "apply dimension mismatch");
        let mut out = DVector::zeros(self.rows);
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_adjoint(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.rows, "adjoint apply dimension mismatch");
        let mut out = DVector::zeros(self.cols);
        self.apply_adjoint_into(v, &mut out);
        out
    }

    fn apply_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.kind {
            MapKind::Zero => {}
            MapKind::Identity => *out += v,
            MapKind::Diagonal(d) => {
                for i in 0..d.len() {
                    out[i] += d[i] * v[i];
                }
            }
            MapKind::Dense(m) => {
                out.gemv(1.0, m, v, 1.0);
            }
            MapKind::Sparse(m) => m.apply(v, out),
            MapKind::Scaled(s, inner) => {
                let t = inner.apply(v);
                out.axpy(*s, &t, 1.0);
            }
            MapKind::Sum(terms) => {
                for t in terms {
                    t.apply_into(v, out);
                }
            }
            MapKind::Product(factors) => {
                let mut cur = v.clone();
                for f in factors.iter().rev() {
                    cur = f.apply(&cur);
                }
                *out += cur;
            }
            MapKind::Adjoint(inner) => inner.apply_adjoint_into(v, out),
            MapKind::Block(b) => {
                let row_off = offsets(&b.row_dims);
                let col_off = offsets(&b.col_dims);
                for (i, j, m) in &b.entries {
                    let seg = DVector::from(v.rows(col_off[*j], b.col_dims[*j]));
                    let t = m.apply(&seg);
                    for k in 0..b.row_dims[*i] {
                        out[row_off[*i] + k] += t[k];
                    }
                }
            }
            MapKind::SymKron { a, b } => {
                let x = SymMatrix::from_svec(v.clone()).expect("sym_kron arg").to_dense();
                let axb = a * &x * b;
                let sym = SymMatrix::from_dense(&(&axb + axb.transpose()).scale(0.5));
                *out += sym.svec();
            }
        }
    }

    fn apply_adjoint_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        if self.self_adjoint {
            // adjoint equals apply on a self-adjoint operator
            match &self.kind {
                MapKind::Adjoint(inner) => return inner.apply_into(v, out),
                _ => return self.apply_self_adjoint_into(v, out),
            }
        }
        match &self.kind {
            MapKind::Zero => {}
            MapKind::Identity => *out += v,
            MapKind::Diagonal(d) => {
                for i in 0..d.len() {
                    out[i] += d[i] * v[i];
                }
            }
            MapKind::Dense(m) => {
                out.gemv_tr(1.0, m, v, 1.0);
            }
            MapKind::Sparse(m) => m.apply_adjoint(v, out),
            MapKind::Scaled(s, inner) => {
                let t = inner.apply_adjoint(v);
                out.axpy(*s, &t, 1.0);
            }
            MapKind::Sum(terms) => {
                for t in terms {
                    t.apply_adjoint_into(v, out);
                }
            }
            MapKind::Product(factors) => {
                let mut cur = v.clone();
                for f in factors.iter() {
                    cur = f.apply_adjoint(&cur);
                }
                *out += cur;
            }
            MapKind::Adjoint(inner) => inner.apply_into(v, out),
            MapKind::Block(b) => {
                let row_off = offsets(&b.row_dims);
                let col_off = offsets(&b.col_dims);
                for (i, j, m) in &b.entries {
                    let seg = DVector::from(v.rows(row_off[*i], b.row_dims[*i]));
                    let t = m.apply_adjoint(&seg);
                    for k in 0..b.col_dims[*j] {
                        out[col_off[*j] + k] += t[k];
                    }
                }
            }
            MapKind::SymKron { .. } => unreachable!("sym_kron is always self-adjoint"),
        }
    }

    fn apply_self_adjoint_into(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        self.apply_into(v, out)
    }

    /// Dense assembly by application to the standard basis.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            MapKind::Dense(m) => m.clone(),
            _ => {
                let mut out = DMatrix::zeros(self.rows, self.cols);
                let mut e = DVector::zeros(self.cols);
                for j in 0..self.cols {
                    e[j] = 1.0;
                    let col = self.apply(&e);
                    out.set_column(j, &col);
                    e[j] = 0.0;
                }
                out
            }
        }
    }

    /// Dense sub-block extraction.
    pub fn submap(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> LinearMap {
        let d = self.to_dense();
        let sub = d.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned();
        if rows == cols && self.self_adjoint {
            LinearMap::dense_symmetric(&sub)
        } else {
            LinearMap::dense(sub)
        }
    }

    /// Extracts the diagonal of the assembled operator (used for Jacobi
    /// preconditioners); requires a square operator.
    pub fn diagonal_of(&self) -> DVector<f64> {
        assert_eq!(self.rows, self.cols);
        match &self.kind {
            MapKind::Diagonal(d) => d.clone(),
            MapKind::Identity => DVector::from_element(self.rows, 1.0),
            MapKind::Dense(m) => m.diagonal(),
            _ => self.to_dense().diagonal(),
        }
    }
}

/// Running offsets of a dimension partition.
pub fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in dims {
        out.push(acc);
        acc += d;
    }
    out
}

/// Checks `<A v, u> == <v, A* u>` on seeded random pairs.
pub fn check_adjoint_consistency(map: &LinearMap, pairs: usize, seed: u64) -> Result<f64> {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let v = DVector::from_fn(map.ncols(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let u = DVector::from_fn(map.nrows(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let lhs = map.apply(&v).dot(&u);
        let rhs = v.dot(&map.apply_adjoint(&u));
        let err = (lhs - rhs).abs() / (1.0 + u.norm() * v.norm());
        worst = worst.max(err);
        if map.is_self_adjoint() && map.nrows() == map.ncols() {
            let uu = DVector::from_fn(map.ncols(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let sym_err = (map.apply(&v).dot(&uu) - v.dot(&map.apply(&uu))).abs()
                / (1.0 + uu.norm() * v.norm());
            worst = worst.max(sym_err);
        }
    }
    if worst > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "adjoint consistency violated: worst relative error {worst:.3e}"
        )));
    }
    Ok(worst)
}

/// Convenience: dense assembly of the operator restricted to svec space and
/// reinterpreted as acting on a symmetric matrix argument.
pub fn sym_order_of(map: &LinearMap) -> Option<usize> {
    order_from_svec_dim(map.ncols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_dense(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn adjoint_consistency_across_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = rand_dense(4, 6, &mut rng);
        let maps = vec![
            LinearMap::zeros(3, 5),
            LinearMap::identity(4),
            LinearMap::diagonal(DVector::from_vec(vec![1.0, -2.0, 0.5])),
            LinearMap::dense(d.clone()),
            LinearMap::dense(d.clone()).scale(-1.7),
            LinearMap::dense(d.clone()).adjoint(),
            LinearMap::sum(vec![LinearMap::dense(d.clone()), LinearMap::zeros(4, 6)]),
            LinearMap::dense(rand_dense(3, 4, &mut rng)).compose(LinearMap::dense(d.clone())),
            LinearMap::dense(d.clone()).gram(),
            LinearMap::block(
                vec![4, 2],
                vec![6, 2],
                vec![
                    (0, 0, LinearMap::dense(d.clone())),
                    (1, 1, LinearMap::identity(2)),
                ],
            ),
            LinearMap::sparse(CsrMatrix::from_triplets(
                3,
                4,
                &[(0, 1, 2.0), (2, 3, -1.0), (0, 1, 0.5), (1, 0, 3.0)],
            )),
        ];
        for (i, m) in maps.iter().enumerate() {
            let worst = check_adjoint_consistency(m, 100, 17 + i as u64).unwrap();
            assert!(worst <= 1e-12, "map {i} worst {worst}");
        }
    }

    #[test]
    fn sym_kron_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a0 = rand_dense(3, 3, &mut rng);
        let b0 = rand_dense(3, 3, &mut rng);
        let a = 0.5 * (&a0 + a0.transpose());
        let b = 0.5 * (&b0 + b0.transpose());
        let q = LinearMap::sym_kron(a.clone(), b.clone());
        check_adjoint_consistency(&q, 50, 5).unwrap();
        let v = DVector::from_fn(q.ncols(), |_, _| rng.random::<f64>());
        let x = SymMatrix::from_svec(v.clone()).unwrap().to_dense();
        let want = SymMatrix::from_dense(&(0.5 * (&a * &x * &b + &b * &x * &a)));
        let got = q.apply(&v);
        assert!((got - want.svec()).norm() < 1e-12);
    }

    #[test]
    fn dense_assembly_reproduces_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = LinearMap::dense(rand_dense(3, 5, &mut rng));
        let g = LinearMap::dense(rand_dense(3, 5, &mut rng));
        let m = LinearMap::sum(vec![f, g.clone()]).compose(g.gram_adjoint());
        let d = m.to_dense();
        let v = DVector::from_fn(m.ncols(), |_, _| rng.random::<f64>());
        assert!((m.apply(&v) - &d * &v).norm() < 1e-12);
    }
}
