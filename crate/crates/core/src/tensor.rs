//! Dense three-way tensors, matrices and the multilinear primitives used by
//! the decomposition code.
//!
//! Unfoldings follow the Kolda–Bader column ordering so that for a Kruskal
//! tensor `unfold(1) = A (C ⊙ B)ᵀ`, `unfold(2) = B (C ⊙ A)ᵀ` and
//! `unfold(3) = C (B ⊙ A)ᵀ` hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Row-major dense matrix of finite `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(shape_err(format!(
                "matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {}", p)));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(shape_err("ragged rows"));
        }
        Matrix::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Matrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                for b in 0..self.cols {
                    g.values[a * self.cols + b] += r[a] * r[b];
                }
            }
        }
        g
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err("hadamard operands differ in shape"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, values })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err("subtraction operands differ in shape"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, values })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(shape_err(format!("row of length {} into {} columns", row.len(), self.cols)));
        }
        self.values.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

/// Dense `I × J × K` tensor (features × locations × time), row-major in
/// `(i, j, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor3 {
    dims: (usize, usize, usize),
    values: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if i == 0 || j == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("tensor dims must be positive, got {:?}", dims)));
        }
        if values.len() != i * j * k {
            return Err(shape_err(format!("tensor {:?} needs {} values, got {}", dims, i * j * k, values.len())));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {}", p)));
        }
        Ok(DenseTensor3 { dims, values })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        DenseTensor3 { dims, values: vec![0.0; dims.0 * dims.1 * dims.2] }
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    values.push(f(i, j, k));
                }
            }
        }
        DenseTensor3 { dims, values }
    }

    /// Stacks `I × J` frontal slices along the time mode.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::InvalidArgument("no slices".into()))?;
        let (ni, nj) = first.shape();
        if slices.iter().any(|s| s.shape() != (ni, nj)) {
            return Err(shape_err("frontal slices differ in shape"));
        }
        let nk = slices.len();
        Ok(DenseTensor3::from_fn((ni, nj, nk), |i, j, k| slices[k][(i, j)]))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.values[o] = v;
    }

    /// Frontal slice `X[:, :, k]` as an `I × J` matrix.
    pub fn frontal_slice(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.dims.0, self.dims.1, |i, j| self.get(i, j, k))
    }

    /// Sub-tensor over the time range `[start, end)`.
    pub fn time_range(&self, start: usize, end: usize) -> Result<DenseTensor3> {
        if start >= end || end > self.dims.2 {
            return Err(Error::InvalidArgument(format!(
                "time range {}..{} outside 0..{}",
                start, end, self.dims.2
            )));
        }
        Ok(DenseTensor3::from_fn((self.dims.0, self.dims.1, end - start), |i, j, k| {
            self.get(i, j, start + k)
        }))
    }
}

/// Factor matrices `A (I×R)`, `B (J×R)`, `C (K×R)` of a rank-`R` CP model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KruskalFactors {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl KruskalFactors {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let r = a.cols();
        if r == 0 || b.cols() != r || c.cols() != r {
            return Err(shape_err(format!(
                "factor column counts differ: {}, {}, {}",
                a.cols(),
                b.cols(),
                c.cols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("factor {}", name)));
            }
        }
        Ok(KruskalFactors { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.rows(), self.b.rows(), self.c.rows())
    }

    pub fn factor(&self, mode: usize) -> Result<&Matrix> {
        match mode {
            1 => Ok(&self.a),
            2 => Ok(&self.b),
            3 => Ok(&self.c),
            m => Err(Error::BadMode(m)),
        }
    }

    /// Khatri–Rao product of the two factors other than `mode`, in the
    /// order matching [`unfold`].
    pub fn complement_khatri_rao(&self, mode: usize) -> Result<Matrix> {
        match mode {
            1 => khatri_rao(&self.c, &self.b),
            2 => khatri_rao(&self.c, &self.a),
            3 => khatri_rao(&self.b, &self.a),
            m => Err(Error::BadMode(m)),
        }
    }

    /// Model frontal slice `A diag(c_k) Bᵀ` for a given temporal row.
    pub fn slice_model(&self, c_row: &[f64]) -> Matrix {
        let r = self.rank();
        Matrix::from_fn(self.a.rows(), self.b.rows(), |i, j| {
            let (ai, bj) = (self.a.row(i), self.b.row(j));
            (0..r).map(|q| ai[q] * bj[q] * c_row[q]).sum()
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.a.max_abs().max(self.b.max_abs()).max(self.c.max_abs())
    }
}

/// Mode-`mode` matricization with Kolda–Bader column ordering.
pub fn unfold(t: &DenseTensor3, mode: usize) -> Result<Matrix> {
    let (ni, nj, nk) = t.dims();
    match mode {
        1 => Ok(Matrix::from_fn(ni, nj * nk, |i, col| t.get(i, col % nj, col / nj))),
        2 => Ok(Matrix::from_fn(nj, ni * nk, |j, col| t.get(col % ni, j, col / ni))),
        3 => Ok(Matrix::from_fn(nk, ni * nj, |k, col| t.get(col % ni, col / ni, k))),
        m => Err(Error::BadMode(m)),
    }
}

/// Column-wise Kronecker product `p ⊙ q`; row `a·q.rows + b` of column `r`
/// holds `p[a, r] · q[b, r]`.
pub fn khatri_rao(p: &Matrix, q: &Matrix) -> Result<Matrix> {
    if p.cols() != q.cols() {
        return Err(shape_err(format!("khatri-rao of {} and {} columns", p.cols(), q.cols())));
    }
    let qr = q.rows();
    Ok(Matrix::from_fn(p.rows() * qr, p.cols(), |row, r| p[(row / qr, r)] * q[(row % qr, r)]))
}

pub fn kruskal_reconstruct(f: &KruskalFactors) -> DenseTensor3 {
    let (ni, nj, nk) = f.dims();
    let r = f.rank();
    let mut values = Vec::with_capacity(ni * nj * nk);
    let mut ab = vec![0.0; r];
    for i in 0..ni {
        let ai = f.a.row(i);
        for j in 0..nj {
            let bj = f.b.row(j);
            for q in 0..r {
                ab[q] = ai[q] * bj[q];
            }
            for k in 0..nk {
                let ck = f.c.row(k);
                values.push(ab.iter().zip(ck).map(|(x, y)| x * y).sum());
            }
        }
    }
    DenseTensor3 { dims: (ni, nj, nk), values }
}

/// Sum of squared residuals `‖X − [[A, B, C]]‖²_F`.
pub fn squared_error(t: &DenseTensor3, f: &KruskalFactors) -> Result<f64> {
    if t.dims() != f.dims() {
        return Err(shape_err(format!("tensor {:?} vs factors {:?}", t.dims(), f.dims())));
    }
    let (ni, nj, nk) = t.dims();
    let r = f.rank();
    let mut ab = vec![0.0; r];
    let mut sum = 0.0;
    for i in 0..ni {
        let ai = f.a.row(i);
        for j in 0..nj {
            let bj = f.b.row(j);
            for q in 0..r {
                ab[q] = ai[q] * bj[q];
            }
            let base = (i * nj + j) * nk;
            for k in 0..nk {
                let model: f64 = ab.iter().zip(f.c.row(k)).map(|(x, y)| x * y).sum();
                let d = t.values[base + k] - model;
                sum += d * d;
            }
        }
    }
    Ok(sum)
}

pub fn rmse(t: &DenseTensor3, f: &KruskalFactors) -> Result<f64> {
    let (ni, nj, nk) = t.dims();
    Ok((squared_error(t, f)? / (ni * nj * nk) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn unfold_mode1_ordering() {
        let t = DenseTensor3::from_fn((2, 2, 2), |i, j, k| (i + 2 * j + 4 * k) as f64);
        let u = unfold(&t, 1).unwrap();
        assert_eq!(u, m(&[&[0., 2., 4., 6.], &[1., 3., 5., 7.]]));
    }

    #[test]
    fn unfold_rejects_mode_zero_and_four() {
        let t = DenseTensor3::zeros((1, 1, 1));
        assert!(matches!(unfold(&t, 0), Err(Error::BadMode(0))));
        assert_eq!(unfold(&t, 4).unwrap_err().code(), "bad-mode");
    }

    #[test]
    fn unfoldings_are_rearrangements() {
        let t = DenseTensor3::from_fn((3, 2, 4), |i, j, k| (i * 100 + j * 10 + k) as f64);
        let sorted = |mat: Matrix| {
            let mut v = mat.as_slice().to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let s1 = sorted(unfold(&t, 1).unwrap());
        assert_eq!(s1, sorted(unfold(&t, 2).unwrap()));
        assert_eq!(s1, sorted(unfold(&t, 3).unwrap()));
    }

    #[test]
    fn rank_one_unfold_matches_hand_expansion() {
        // a=(1,2), b=(1,0,1), c=(3,1); X[i,j,k] = a_i b_j c_k laid out by hand.
        let f = KruskalFactors::new(
            m(&[&[1.], &[2.]]),
            m(&[&[1.], &[0.], &[1.]]),
            m(&[&[3.], &[1.]]),
        )
        .unwrap();
        let t = kruskal_reconstruct(&f);
        let expected = m(&[&[3., 0., 3., 1., 0., 1.], &[6., 0., 6., 2., 0., 2.]]);
        assert_eq!(unfold(&t, 1).unwrap(), expected);
        let krp = khatri_rao(&f.c, &f.b).unwrap();
        assert_eq!(f.a.matmul(&krp.transpose()).unwrap(), expected);
    }

    #[test]
    fn khatri_rao_single_column_and_identity() {
        let k = khatri_rao(&m(&[&[1.], &[2.]]), &m(&[&[3.], &[4.]])).unwrap();
        assert_eq!(k, m(&[&[3.], &[4.], &[6.], &[8.]]));
        let id = Matrix::identity(2);
        let k = khatri_rao(&id, &id).unwrap();
        assert_eq!(k, m(&[&[1., 0.], &[0., 0.], &[0., 0.], &[0., 1.]]));
    }

    #[test]
    fn khatri_rao_column_mismatch() {
        let err = khatri_rao(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).unwrap_err();
        assert_eq!(err.code(), "shape-mismatch");
    }

    #[test]
    fn reconstruct_single_outer_product() {
        let f = KruskalFactors::new(m(&[&[1.], &[0.]]), m(&[&[1.], &[1.]]), m(&[&[2.]])).unwrap();
        let t = kruskal_reconstruct(&f);
        assert_eq!(t.dims(), (2, 2, 1));
        assert_eq!(t.values(), &[2., 2., 0., 0.]);
    }

    #[test]
    fn rmse_edge_values() {
        let f = KruskalFactors::new(Matrix::zeros(2, 1), Matrix::zeros(3, 1), Matrix::zeros(2, 1)).unwrap();
        assert_eq!(kruskal_reconstruct(&f), DenseTensor3::zeros((2, 3, 2)));
        let ones = DenseTensor3::from_fn((2, 3, 2), |_, _, _| 1.0);
        assert_eq!(rmse(&ones, &f).unwrap(), 1.0);
        let g = KruskalFactors::new(m(&[&[1.], &[2.]]), m(&[&[1.], &[0.], &[1.]]), m(&[&[3.], &[1.]])).unwrap();
        assert_eq!(rmse(&kruskal_reconstruct(&g), &g).unwrap(), 0.0);
        assert_eq!(rmse(&DenseTensor3::zeros((2, 2, 2)), &g).unwrap_err().code(), "shape-mismatch");
    }

    #[test]
    fn construction_rejects_nan_and_bad_length() {
        assert!(DenseTensor3::new((1, 1, 2), vec![1.0]).is_err());
        assert!(matches!(DenseTensor3::new((1, 1, 1), vec![f64::NAN]), Err(Error::NonFinite(_))));
        assert!(Matrix::from_vec(1, 1, vec![f64::INFINITY]).is_err());
    }
}
