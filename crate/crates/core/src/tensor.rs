//! Dense f64 kernels: row-major matrices, vectors, and a seeded RNG.
//!
//! Everything above this module (layers, models, optimizers) is written
//! against these types. The public ops check shapes and return
//! [`Error::Shape`]; the `pub(crate)` slice kernels skip the checks and are
//! used on the hot training path once shapes are known to agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Ok(Self { rows, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }
}

impl From<&[f64]> for DenseVector {
    fn from(values: &[f64]) -> Self {
        Self::from(values.to_vec())
    }
}

/// Seeded random stream: ChaCha8 keystream, normals via the ziggurat sampler
/// of `rand_distr::StandardNormal`. Both are pure integer/f64 code, so a seed
/// yields the same stream on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for the same seed, e.g. one per epoch.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self, mean: f64, stddev: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + stddev * z
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

pub fn gaussian_init(rows: usize, cols: usize, mean: f64, stddev: f64, rng: &mut SeededRng) -> DenseMatrix {
    assert!(stddev >= 0.0, "stddev must be nonnegative");
    let values = (0..rows * cols).map(|_| rng.normal(mean, stddev)).collect();
    DenseMatrix { rows, cols, values }
}

pub fn gaussian_vector(len: usize, mean: f64, stddev: f64, rng: &mut SeededRng) -> DenseVector {
    DenseVector::from(gaussian_init(1, len, mean, stddev, rng).values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

pub fn elementwise(op: ElementwiseOp, a: &DenseVector, b: &DenseVector) -> Result<DenseVector> {
    check_len(a.len(), b.len(), "elementwise")?;
    let f = match op {
        ElementwiseOp::Add => |x: f64, y: f64| x + y,
        ElementwiseOp::Sub => |x: f64, y: f64| x - y,
        ElementwiseOp::Mul => |x: f64, y: f64| x * y,
    };
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f(x, y))
        .collect::<Vec<_>>()
        .into())
}

/// `w x`, with `w` of shape rows x cols and `x` of length cols.
pub fn matvec(w: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    check_len(w.cols, x.len(), "matvec")?;
    let mut out = vec![0.0; w.rows];
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot_slices(w.row(r), x.as_slice());
    }
    Ok(out.into())
}

/// `wᵀ x`, with `w` of shape rows x cols and `x` of length rows.
pub fn matvec_t(w: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    check_len(w.rows, x.len(), "matvec_t")?;
    let mut out = vec![0.0; w.cols];
    matvec_t_into(w, x.as_slice(), &mut out);
    Ok(out.into())
}

pub fn dot(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    check_len(a.len(), b.len(), "dot")?;
    Ok(dot_slices(a.as_slice(), b.as_slice()))
}

pub fn concat(a: &DenseVector, b: &DenseVector) -> DenseVector {
    let mut values = Vec::with_capacity(a.len() + b.len());
    values.extend_from_slice(a.as_slice());
    values.extend_from_slice(b.as_slice());
    values.into()
}

pub fn scale(a: &DenseVector, s: f64) -> DenseVector {
    a.values.iter().map(|x| x * s).collect::<Vec<_>>().into()
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = wᵀ x` (out is overwritten).
pub(crate) fn matvec_t_into(w: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, x.len());
    debug_assert_eq!(w.cols, out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, &xr) in x.iter().enumerate() {
        if xr != 0.0 {
            axpy(xr, w.row(r), out);
        }
    }
}

/// `out = w d` (out is overwritten).
pub(crate) fn matvec_into(w: &DenseMatrix, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, d.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot_slices(w.row(r), d);
    }
}

/// `g += x dᵀ` for a rows x cols gradient.
pub(crate) fn add_outer(g: &mut DenseMatrix, x: &[f64], d: &[f64]) {
    debug_assert_eq!(g.rows, x.len());
    debug_assert_eq!(g.cols, d.len());
    for (r, &xr) in x.iter().enumerate() {
        if xr != 0.0 {
            axpy(xr, d, g.row_mut(r));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from(xs)
    }

    #[test]
    fn elementwise_examples() {
        let a = v(&[1.0, 2.0]);
        let b = v(&[3.0, 4.0]);
        assert_eq!(elementwise(ElementwiseOp::Mul, &a, &b).unwrap(), v(&[3.0, 8.0]));
        assert_eq!(elementwise(ElementwiseOp::Add, &a, &b).unwrap(), v(&[4.0, 6.0]));
        assert_eq!(elementwise(ElementwiseOp::Sub, &a, &b).unwrap(), v(&[-2.0, -2.0]));
        let z = DenseVector::zeros(2);
        assert_eq!(elementwise(ElementwiseOp::Mul, &a, &z).unwrap(), z);
    }

    #[test]
    fn shape_errors() {
        let a = v(&[1.0, 2.0]);
        let b = v(&[1.0]);
        assert!(matches!(elementwise(ElementwiseOp::Add, &a, &b), Err(Error::Shape(_))));
        assert!(matches!(dot(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(matvec(&DenseMatrix::identity(3), &a), Err(Error::Shape(_))));
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn linear_algebra_examples() {
        let x = v(&[0.5, -1.5, 2.0]);
        assert_eq!(matvec(&DenseMatrix::identity(3), &x).unwrap(), x);
        assert_eq!(matvec_t(&DenseMatrix::identity(3), &x).unwrap(), x);
        assert_eq!(dot(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert_eq!(concat(&v(&[1.0]), &v(&[2.0, 3.0])), v(&[1.0, 2.0, 3.0]));
        assert_eq!(scale(&v(&[1.0, -2.0]), 0.5), v(&[0.5, -1.0]));

        let w = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matvec(&w, &x).unwrap(), v(&[0.5 - 3.0 + 6.0, 2.0 - 7.5 + 12.0]));
        assert_eq!(matvec_t(&w, &v(&[1.0, -1.0])).unwrap(), v(&[-3.0, -3.0, -3.0]));
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mut rng = SeededRng::new(1);
        let m = gaussian_init(4, 3, 0.25, 0.0, &mut rng);
        assert!(m.as_slice().iter().all(|&x| x == 0.25));

        let a = gaussian_init(5, 7, 0.0, 0.01, &mut SeededRng::new(42));
        let b = gaussian_init(5, 7, 0.0, 0.01, &mut SeededRng::new(42));
        assert_eq!(a, b);
        let c = gaussian_init(5, 7, 0.0, 0.01, &mut SeededRng::new(43));
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_moments() {
        let n = 100_000;
        let m = gaussian_init(1, n, 0.0, 0.01, &mut SeededRng::new(7));
        let xs = m.as_slice();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() < 0.05 * 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn inputs_are_not_modified() {
        let a = v(&[1.0, 2.0]);
        let b = v(&[3.0, 4.0]);
        let (a0, b0) = (a.clone(), b.clone());
        let _ = elementwise(ElementwiseOp::Mul, &a, &b).unwrap();
        let _ = dot(&a, &b).unwrap();
        let _ = concat(&a, &b);
        assert_eq!((a, b), (a0, b0));
    }

    fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn matvec_distributes(w in small_vec(12), x in small_vec(4), y in small_vec(4)) {
            let w = DenseMatrix::from_vec(3, 4, w).unwrap();
            let (x, y) = (DenseVector::from(x), DenseVector::from(y));
            let lhs = matvec(&w, &elementwise(ElementwiseOp::Add, &x, &y).unwrap()).unwrap();
            let rhs = elementwise(ElementwiseOp::Add, &matvec(&w, &x).unwrap(), &matvec(&w, &y).unwrap()).unwrap();
            for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }

        #[test]
        fn dot_commutes(a in small_vec(6), b in small_vec(6)) {
            let (a, b) = (DenseVector::from(a), DenseVector::from(b));
            prop_assert_eq!(dot(&a, &b).unwrap(), dot(&b, &a).unwrap());
        }
    }
}
