//! Dense row-major tensors of `f64`.
//!
//! Complex tensors store interleaved `(re, im)` pairs and carry an explicit
//! flag; `shape` always describes the logical (complex) extents.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

impl TensorError {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Contract { op, msg: msg.into() }
    }

    pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    complex: bool,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Real tensor from row-major data.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::mismatch("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            complex: false,
        })
    }

    /// Complex tensor from interleaved `(re, im)` data.
    pub fn new_complex(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if 2 * numel(&shape) != data.len() {
            return Err(TensorError::mismatch("complex tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            complex: true,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
            complex: false,
        }
    }

    pub fn complex_zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![0.0; 2 * n],
            complex: true,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
            complex: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            complex: false,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            complex: false,
        }
    }

    /// Same storage with zeros, keeping shape and complex flag.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
            complex: self.complex,
        }
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>, complex: bool) -> Self {
        debug_assert_eq!(numel(&shape) * if complex { 2 } else { 1 }, data.len());
        Tensor {
            shape,
            data,
            complex,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of logical elements (complex entries count once).
    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    /// Raw storage; interleaved for complex tensors.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element real tensor.
    pub fn item(&self) -> f64 {
        assert!(!self.complex && self.data.len() == 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(TensorError::mismatch("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            complex: self.complex,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Sum of squares of all raw entries.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Maps every flat index of `target` to the flat index of `src` under
/// one-sided broadcasting: equal rank, each `src` extent is 1 or equal.
pub(crate) fn broadcast_map(op: &'static str, target: &[usize], src: &[usize]) -> Result<Vec<usize>> {
    if target.len() != src.len()
        || target
            .iter()
            .zip(src)
            .any(|(&t, &s)| s != t && s != 1)
    {
        return Err(TensorError::mismatch(op, target, src));
    }
    let rank = target.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for ax in (0..rank).rev() {
        src_strides[ax] = if src[ax] == 1 { 0 } else { stride };
        stride *= src[ax];
    }
    let n = numel(target);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < target[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(map)
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(Tensor::new_complex(vec![2], vec![0.0; 4]).is_ok());
        assert!(Tensor::new_complex(vec![2], vec![0.0; 2]).is_err());
    }

    #[test]
    fn broadcast_map_rows_and_columns() {
        let map = broadcast_map("t", &[2, 3], &[1, 3]).unwrap();
        assert_eq!(map, vec![0, 1, 2, 0, 1, 2]);
        let map = broadcast_map("t", &[2, 3], &[2, 1]).unwrap();
        assert_eq!(map, vec![0, 0, 0, 1, 1, 1]);
        assert!(broadcast_map("t", &[2, 3], &[3]).is_err());
        assert!(broadcast_map("t", &[2, 3], &[2, 2]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(3.0);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.item(), 3.0);
    }
}
