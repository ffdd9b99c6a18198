use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a leaf tensor. Rejects length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor leaf (value {bad})")));
        }
        Ok(Self { shape, data })
    }

    /// Intermediate results may legitimately overflow; only leaves are checked.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(vec![], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![0.0; numel])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; numel])
    }

    /// 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// `n x 1` column.
    pub fn column(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len(), 1], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self::from_raw(shape, self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Output shape and per-element source offsets for a numpy-style broadcast of
/// two shapes.
#[cfg(test)]
pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut ia = Vec::new();
    let mut ib = Vec::new();
    let out = broadcast_visit(a, b, |i, j| {
        ia.push(i);
        ib.push(j);
    })?;
    Ok((out, ia, ib))
}

/// Calls `f(offset_a, offset_b)` for every output element in row-major order
/// and returns the output shape.
pub(crate) fn broadcast_visit(
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize),
) -> Result<Vec<usize>> {
    if a == b {
        for k in 0..a.iter().product() {
            f(k, k);
        }
        return Ok(a.to_vec());
    }
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out = Vec::with_capacity(rank);
    for (&da, &db) in pa.iter().zip(&pb) {
        let d = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")));
        };
        out.push(d);
    }
    let strides = |s: &[usize]| -> Vec<usize> {
        let mut st = vec![0; rank];
        let mut acc = 1;
        for k in (0..rank).rev() {
            st[k] = if s[k] == 1 { 0 } else { acc };
            acc *= s[k];
        }
        st
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    let numel: usize = out.iter().product();
    if numel == 0 {
        return Ok(out);
    }
    let last = rank - 1;
    let (inner, ia, ib) = (out[last], sa[last], sb[last]);
    let outer = numel / inner;
    let mut idx = vec![0usize; last];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(oa + j * ia, ob + j * ib);
        }
        for k in (0..last).rev() {
            idx[k] += 1;
            oa += sa[k];
            ob += sb[k];
            if idx[k] < out[k] {
                break;
            }
            oa -= sa[k] * out[k];
            ob -= sb[k] * out[k];
            idx[k] = 0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_leaves() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn broadcast_row_over_matrix() {
        let (out, ia, ib) = broadcast(&[2, 3], &[1, 3]).unwrap();
        assert_eq!(out, vec![2, 3]);
        assert_eq!(ia, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(ib, vec![0, 1, 2, 0, 1, 2]);
        let (out, _, ib) = broadcast(&[2, 3], &[]).unwrap();
        assert_eq!(out, vec![2, 3]);
        assert!(ib.iter().all(|&i| i == 0));
        assert!(broadcast(&[2, 3], &[2]).is_err());
    }
}
