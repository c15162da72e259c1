use std::fmt;

use super::AutodiffError;

/// Dense row-major tensor of `f64`.
///
/// Every constructor checks that the data length matches the shape and that
/// all entries are finite.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite("tensor construction".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor whose data is already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::from_parts(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip_same(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn zip_add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_add shape mismatch");
        self.zip_same(other, |a, b| a + b)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Numpy-style right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `target`, the flat index into a tensor of `source`
/// shape broadcast onto it. `source` must be broadcast-compatible with `target`.
fn broadcast_index_map(source: &[usize], target: &[usize]) -> Vec<usize> {
    let rank = target.len();
    let offset = rank - source.len();
    let src_strides = strides(source);
    let mut eff = vec![0; rank];
    for i in 0..source.len() {
        eff[i + offset] = if source[i] == 1 { 0 } else { src_strides[i] };
    }
    let n: usize = target.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        // odometer increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += eff[d];
            if idx[d] < target[d] {
                break;
            }
            src -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn broadcast_to(t: &Tensor, target: &[usize]) -> Tensor {
    if t.shape == target {
        return t.clone();
    }
    let map = broadcast_index_map(&t.shape, target);
    Tensor::from_parts(target.to_vec(), map.into_iter().map(|i| t.data[i]).collect())
}

/// Adjoint of [`broadcast_to`]: sums `t` down to `target`.
pub(crate) fn sum_to(t: &Tensor, target: &[usize]) -> Tensor {
    if t.shape == target {
        return t.clone();
    }
    let map = broadcast_index_map(target, &t.shape);
    let mut out = vec![0.0; target.iter().product()];
    for (v, i) in t.data.iter().zip(map) {
        out[i] += v;
    }
    Tensor::from_parts(target.to_vec(), out)
}

pub(crate) fn zip_broadcast(a: &Tensor, b: &Tensor, out_shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        return a.zip_same(b, f);
    }
    let ma = broadcast_index_map(&a.shape, out_shape);
    let mb = broadcast_index_map(&b.shape, out_shape);
    let data = ma.into_iter().zip(mb).map(|(i, j)| f(a.data[i], b.data[j])).collect();
    Tensor::from_parts(out_shape.to_vec(), data)
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let m = b.shape[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

/// Sum along `axis`, keeping the reduced dimension with extent 1.
pub(crate) fn sum_axis(a: &Tensor, axis: usize) -> Tensor {
    let mut target = a.shape.clone();
    target[axis] = 1;
    sum_to(a, &target)
}

pub(crate) fn row_block(a: &Tensor) -> usize {
    a.shape[1..].iter().product()
}

pub(crate) fn index_select_rows(a: &Tensor, indices: &[usize]) -> Tensor {
    let block = row_block(a);
    let mut data = Vec::with_capacity(indices.len() * block);
    for &i in indices {
        data.extend_from_slice(&a.data[i * block..(i + 1) * block]);
    }
    let mut shape = a.shape.clone();
    shape[0] = indices.len();
    Tensor::from_parts(shape, data)
}

pub(crate) fn scatter_add_rows(a: &Tensor, indices: &[usize], rows: usize) -> Tensor {
    let block = row_block(a);
    let mut data = vec![0.0; rows * block];
    for (src, &dst) in indices.iter().enumerate() {
        for k in 0..block {
            data[dst * block + k] += a.data[src * block + k];
        }
    }
    let mut shape = a.shape.clone();
    shape[0] = rows;
    Tensor::from_parts(shape, data)
}
