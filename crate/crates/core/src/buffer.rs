//! Dense row-major f64 arrays used as tape node values.

use serde::{Deserialize, Serialize};

/// Dense multi-dimensional array of 64-bit floats, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Buffer {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "buffer: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Buffer { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Buffer {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Buffer {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Buffer {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "buffer: item() on non-scalar shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "buffer: rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "buffer: cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Buffer {
        Buffer {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Numpy-style broadcast of two shapes (align right, size-1 dims stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides, with stride 0 on broadcast (size-1) axes relative to `target`.
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let offset = target.len() - shape.len();
    let mut strides = vec![0usize; target.len()];
    let mut s = 1usize;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 && target[i + offset] != 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Materialize `a` broadcast to `target`.
pub fn broadcast_to(a: &Buffer, target: &[usize]) -> Buffer {
    if a.shape == target {
        return a.clone();
    }
    assert!(
        broadcast_shape(&a.shape, target).as_deref() == Some(target),
        "buffer: cannot broadcast {:?} to {:?}",
        a.shape,
        target
    );
    let strides = broadcast_strides(&a.shape, target);
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; target.len()];
    for slot in out.iter_mut() {
        let mut off = 0usize;
        for (k, &i) in idx.iter().enumerate() {
            off += i * strides[k];
        }
        *slot = a.data[off];
        for k in (0..target.len()).rev() {
            idx[k] += 1;
            if idx[k] < target[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Buffer::new(target.to_vec(), out)
}

/// Sum `a` down to `target` shape (inverse of broadcast_to).
pub fn reduce_to(a: &Buffer, target: &[usize]) -> Buffer {
    if a.shape == target {
        return a.clone();
    }
    assert!(
        broadcast_shape(target, &a.shape).as_deref() == Some(&a.shape[..]),
        "buffer: cannot reduce {:?} to {:?}",
        a.shape,
        target
    );
    let strides = broadcast_strides(target, &a.shape);
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; a.shape.len()];
    for &v in a.data.iter() {
        let mut off = 0usize;
        for (k, &i) in idx.iter().enumerate() {
            off += i * strides[k];
        }
        out[off] += v;
        for k in (0..a.shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < a.shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Buffer::new(target.to_vec(), out)
}

pub fn zip(a: &Buffer, b: &Buffer, f: impl Fn(f64, f64) -> f64) -> Buffer {
    assert_eq!(
        a.shape, b.shape,
        "buffer: elementwise op on mismatched shapes {:?} vs {:?}",
        a.shape, b.shape
    );
    Buffer {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    }
}

/// C = A (m x k) * B (k x n), row-major.
pub fn matmul(a: &Buffer, b: &Buffer) -> Buffer {
    assert_eq!(a.shape.len(), 2, "matmul: lhs shape {:?}", a.shape);
    assert_eq!(b.shape.len(), 2, "matmul: rhs shape {:?}", b.shape);
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(
        k, k2,
        "matmul: inner dimensions disagree, {:?} vs {:?}",
        a.shape, b.shape
    );
    let mut c = vec![0.0; m * n];
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Buffer::new(vec![m, n], c)
}

pub fn transpose(a: &Buffer) -> Buffer {
    assert_eq!(a.shape.len(), 2, "transpose: shape {:?}", a.shape);
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Buffer::new(vec![n, m], out)
}

/// Sum over one axis, removing it.
pub fn sum_axis(a: &Buffer, axis: usize) -> Buffer {
    assert!(axis < a.shape.len(), "sum_axis: axis {} of {:?}", axis, a.shape);
    let outer: usize = a.shape[..axis].iter().product();
    let mid = a.shape[axis];
    let inner: usize = a.shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for m in 0..mid {
            let base = (o * mid + m) * inner;
            for i in 0..inner {
                out[o * inner + i] += a.data[base + i];
            }
        }
    }
    let mut shape = a.shape.clone();
    shape.remove(axis);
    Buffer::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_bias_over_batch() {
        let bias = Buffer::new(vec![3], vec![1.0, 2.0, 3.0]);
        let b = broadcast_to(&bias, &[2, 3]);
        assert_eq!(b.data, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let r = reduce_to(&b, &[3]);
        assert_eq!(r.data, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn matmul_small() {
        let a = Buffer::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Buffer::new(vec![2, 1], vec![1.0, 1.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.shape, vec![2, 1]);
        assert_eq!(c.data, vec![3.0, 7.0]);
    }

    #[test]
    fn sum_axis_rows_cols() {
        let a = Buffer::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(sum_axis(&a, 0).data, vec![5.0, 7.0, 9.0]);
        assert_eq!(sum_axis(&a, 1).data, vec![6.0, 15.0]);
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_shape_mismatch() {
        let a = Buffer::new(vec![2, 2], vec![0.0; 4]);
        let b = Buffer::new(vec![3, 1], vec![0.0; 3]);
        matmul(&a, &b);
    }
}
