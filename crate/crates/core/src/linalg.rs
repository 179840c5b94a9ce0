//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Singular value decomposition with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, `rows x k`.
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    /// Right singular vectors as columns, `cols x k`.
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }
}

/// Thin SVD, `k = min(rows, cols)`.
pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(r, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(c, 0),
        });
    }
    let m = faer::Mat::<f64>::from_fn(r, c, |i, j| a[(i, j)]);
    let s = m.thin_svd().map_err(|e| {
        Error::NumericalFailure(format!("SVD of a {r}x{c} matrix did not converge: {e:?}"))
    })?;
    let (u, sv, v) = (s.U(), s.S().column_vector(), s.V());
    let k = r.min(c);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let out = Svd {
        u: DMatrix::from_fn(r, k, |i, q| u[(i, order[q])]),
        sigma: DVector::from_fn(k, |q, _| sv[order[q]]),
        v: DMatrix::from_fn(c, k, |i, q| v[(i, order[q])]),
    };
    let scale = out.sigma_max().max(f64::MIN_POSITIVE);
    let err = (&out.u * DMatrix::from_diagonal(&out.sigma) * out.v.transpose() - a).abs().max();
    if err > 1e-13 * scale * (r.max(c) as f64) {
        return Err(Error::NumericalFailure(format!(
            "SVD of a {r}x{c} matrix reconstructs with error {err:.3e}"
        )));
    }
    Ok(out)
}

/// SVD whose right factor spans all of `R^cols`; missing singular values are 0.
pub fn svd_full_right(a: &DMatrix<f64>) -> Result<Svd> {
    let (r, c) = a.shape();
    if r >= c {
        return svd(a);
    }
    let mut padded = DMatrix::zeros(c, c);
    padded.view_mut((0, 0), (r, c)).copy_from(a);
    let mut s = svd(&padded)?;
    // padding rows carry no left information
    s.u = s.u.rows(0, r).into_owned();
    Ok(s)
}

/// Square orthogonal factor of the QR decomposition of a tall matrix.
pub fn full_q(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    assert!(r >= c, "full_q expects rows >= cols");
    let mut padded = DMatrix::zeros(r, r);
    padded.view_mut((0, 0), (r, c)).copy_from(a);
    padded.qr().q()
}

/// Orthonormal basis of the null space of a full-row-rank matrix, via QR of
/// its transpose.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if r == 0 {
        return DMatrix::identity(c, c);
    }
    if r >= c {
        return DMatrix::zeros(c, 0);
    }
    full_q(&a.transpose()).columns(r, c - r).into_owned()
}

/// Orthonormal basis for the column span of `a` (thin QR).
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if c == 0 {
        return DMatrix::zeros(r, 0);
    }
    a.clone().qr().q()
}

/// `max |Q^T Q - I|`.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut err: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let e = if i == j { 1.0 } else { 0.0 };
            err = err.max((g[(i, j)] - e).abs());
        }
    }
    err
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let e = m
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigendecomposition converges");
    let (s, u) = (e.S().column_vector(), e.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    (
        DVector::from_fn(n, |k, _| s[order[k]]),
        DMatrix::from_fn(n, n, |i, k| u[(i, order[k])]),
    )
}

/// Place `block` into `target` at the given rows and columns.
pub fn scatter(target: &mut DMatrix<f64>, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
    for (bi, &i) in rows.iter().enumerate() {
        for (bj, &j) in cols.iter().enumerate() {
            target[(i, j)] = block[(bi, bj)];
        }
    }
}

/// Gather the listed entries of `v`.
pub fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Linear map between coefficient spaces stored densely.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub domain: String,
    pub codomain: String,
    pub matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(domain: impl Into<String>, codomain: impl Into<String>, matrix: DMatrix<f64>) -> Self {
        Self {
            domain: domain.into(),
            codomain: codomain.into(),
            matrix,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "operator {} -> {} expects length {}, got {}",
                self.domain,
                self.codomain,
                self.matrix.ncols(),
                x.len()
            )));
        }
        Ok(&self.matrix * x)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.codomain.clone(), self.domain.clone(), self.matrix.transpose())
    }

    /// Largest entrywise asymmetry.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.matrix;
        (m - m.transpose()).abs().max()
    }
}
