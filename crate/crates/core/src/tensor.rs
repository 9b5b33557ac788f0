//! Dense row-major f64 arrays with the handful of operations the
//! networks and oracles need. Not a general tensor library.

use std::fmt;

/// Shaped array of 64-bit reals. Row-major, contiguous.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of {} elements", self.data.len());
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch {:?} vs {:?}", self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    /// In-place axpy: self += c * other.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Matrix product where `self` is `[.., m, k]` (leading dims flattened)
    /// and `rhs` is a plain `[k, n]` matrix.
    pub fn matmul(&self, rhs: &Tensor) -> Self {
        assert_eq!(rhs.rank(), 2, "matmul rhs must be rank 2, got {:?}", rhs.shape);
        assert!(self.rank() >= 1, "matmul lhs must have at least one axis");
        let k = *self.shape.last().unwrap();
        assert_eq!(k, rhs.shape[0], "matmul inner dims {:?} x {:?}", self.shape, rhs.shape);
        let n = rhs.shape[1];
        let m = self.data.len() / k;
        let mut out = vec![0.0; m * n];
        matmul_mk_kn(&self.data, &rhs.data, &mut out, m, k, n);
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        Self { shape, data: out }
    }

    /// Batched matrix product: `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn batch_matmul(&self, rhs: &Tensor) -> Self {
        assert_eq!(self.rank(), 3, "batch_matmul lhs rank");
        assert_eq!(rhs.rank(), 3, "batch_matmul rhs rank");
        let (b, m, k) = (self.shape[0], self.shape[1], self.shape[2]);
        let (b2, k2, n) = (rhs.shape[0], rhs.shape[1], rhs.shape[2]);
        assert_eq!(b, b2, "batch_matmul batch dims");
        assert_eq!(k, k2, "batch_matmul inner dims");
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            matmul_mk_kn(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Self { shape: vec![b, m, n], data: out }
    }

    /// Swap the last two axes of a rank>=2 tensor.
    pub fn transpose_last2(&self) -> Self {
        assert!(self.rank() >= 2);
        let r = self.rank();
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let batch = self.data.len() / (m * n);
        let mut out = vec![0.0; self.data.len()];
        for b in 0..batch {
            let src = &self.data[b * m * n..(b + 1) * m * n];
            let dst = &mut out[b * m * n..(b + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Self { shape, data: out }
    }
}

/// Parallelize a row loop only when the work is large enough to amortize
/// the fork. Per-row accumulation order never changes, so parallel and
/// sequential results are bitwise identical.
#[cfg(feature = "parallel")]
fn row_parallel(m: usize, flops: usize, body: impl Fn(usize, &mut [f64]) + Sync, out: &mut [f64]) {
    use rayon::prelude::*;
    let n = out.len() / m;
    // Training-step matmuls parallelize at the batch-chunk level instead;
    // only very tall products (big sampling batches) split here.
    if m >= 512 && flops >= (1 << 23) {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn row_parallel(m: usize, _flops: usize, body: impl Fn(usize, &mut [f64]) + Sync, out: &mut [f64]) {
    let n = out.len() / m;
    for (i, row) in out.chunks_mut(n).enumerate() {
        body(i, row);
    }
}

/// `out += a[m,k] * b[k,n]` is the hot loop of every forward and backward
/// pass; ikj order keeps both `b` and `out` rows contiguous.
pub fn matmul_acc_mk_kn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    row_parallel(
        m,
        m * k * n,
        |i, orow| {
            let arow = &a[i * k..(i + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        },
        out,
    );
}

fn matmul_mk_kn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    matmul_acc_mk_kn(a, b, out, m, k, n);
}

/// `out += a^T[k,m] * b[k,n]` without materializing the transpose
/// (gradient of the weight in `x * W`). Accumulation over the contraction
/// axis stays in ascending order per output element.
pub fn matmul_acc_tk_kn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    row_parallel(
        m,
        m * k * n,
        |i, orow| {
            for p in 0..k {
                let av = a[p * m + i];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        },
        out,
    );
}

/// `out += a[m,k] * b^T[n,k]` without materializing the transpose
/// (gradient of the input in `x * W`).
pub fn matmul_acc_mk_nk(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    row_parallel(
        m,
        m * k * n,
        |i, orow| {
            let arow = &a[i * k..(i + 1) * k];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&av, &bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                *o += acc;
            }
        },
        out,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_flattens_leading_dims() {
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = a.transpose_last2();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.transpose_last2(), a);
    }

    #[test]
    fn batch_matmul_matches_per_slice() {
        let a = Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let b = Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0]);
        let c = a.batch_matmul(&b);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 10.0, 12.0, 14.0, 16.0]);
    }

    #[test]
    fn transposed_accumulators_agree_with_explicit_transpose() {
        let a = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64).collect());
        // a^T * b via helper vs. explicit transpose.
        let mut out = vec![0.0; 2 * 4];
        matmul_acc_tk_kn(a.data(), b.data(), &mut out, 2, 3, 4);
        let want = a.transpose_last2().matmul(&b);
        assert_eq!(out, want.data());

        // b * a^T^T = b[3,4] x .. pick c[4,2]: a2[3,4] * b2^T[2,4].
        let a2 = b.clone();
        let b2 = Tensor::new(vec![2, 4], (0..8).map(|i| (i * i) as f64).collect());
        let mut out2 = vec![0.0; 3 * 2];
        matmul_acc_mk_nk(a2.data(), b2.data(), &mut out2, 3, 4, 2);
        let want2 = a2.matmul(&b2.transpose_last2());
        assert_eq!(out2, want2.data());
    }
}
