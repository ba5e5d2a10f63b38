//! Matrix helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero
/// when inverting.
pub const PINV_RCOND: f64 = 1e-10;

/// Row-major matrix whose cells may be unobserved.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

impl MaskedMatrix {
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter("ragged matrix rows".into()));
        }
        Ok(MaskedMatrix {
            rows: rows.len(),
            cols,
            cells: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let cells = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| Some(m[(i, j)])))
            .collect();
        MaskedMatrix { rows, cols, cells }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.cells[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> MaskedMatrix {
        MaskedMatrix {
            rows: rows.len(),
            cols: self.cols,
            cells: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }

    pub fn columns(&self, range: std::ops::Range<usize>) -> MaskedMatrix {
        let cols = range.len();
        let cells = (0..self.rows)
            .flat_map(|i| self.row(i)[range.clone()].iter().copied())
            .collect();
        MaskedMatrix {
            rows: self.rows,
            cols,
            cells,
        }
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.is_some()).count() as f64 / self.cells.len() as f64
    }

    /// Dense copy with unobserved cells set to zero.
    pub fn zero_filled(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).unwrap_or(0.0))
    }
}

/// Thin SVD with singular values in non-increasing order.
///
/// Computed with faer: nalgebra's SVD loses accuracy on rank-deficient input.
pub(crate) fn sorted_svd(m: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return (DMatrix::zeros(r, 0), Vec::new(), DMatrix::zeros(0, c));
    }
    let a = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = a.thin_svd().expect("SVD of a finite matrix");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u_out = DMatrix::from_fn(r, k, |i, q| u[(i, order[q])]);
    let v_t = DMatrix::from_fn(k, c, |q, j| v[(j, order[q])]);
    let s = order.iter().map(|&q| s[q].max(0.0)).collect();
    (u_out, s, v_t)
}

/// Minimum-norm least-squares solution of `a · x ≈ b`, optionally ridge-regularised.
///
/// With `ridge = 0` this is the pseudo-inverse solution; singular values below
/// `PINV_RCOND · σ_max` are dropped.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return DVector::zeros(n);
    }
    let (u, s, v_t) = sorted_svd(a.clone());
    let cutoff = s.first().copied().unwrap_or(0.0) * PINV_RCOND;
    let mut x = DVector::zeros(n);
    for (k, &sigma) in s.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            break;
        }
        let coef = u.column(k).dot(b) * sigma / (sigma * sigma + ridge);
        x += v_t.row(k).transpose() * coef;
    }
    x
}
