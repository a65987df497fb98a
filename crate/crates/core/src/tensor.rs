//! Dense row-major `f64` tensors and the numeric kernels shared by the
//! autodiff graph and the graph-free inference path.
//!
//! Both paths call the same kernels, so a forward pass through a recorded
//! graph and a plain inference forward produce bitwise-identical values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", format!("invalid shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
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

    /// Rows and columns, treating a 1-D tensor as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.data.len()),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Gathers the given rows into a new `[indices.len() × cols]` tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::shape("select_rows", format!("row {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), c, data)
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

/// `[p×q] × [q×r] → [p×r]`, accumulating over `q` in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::shape(
            "matmul",
            format!("expected matrices, got {:?} and {:?}", a.shape, b.shape),
        ));
    }
    let (p, q) = (a.shape[0], a.shape[1]);
    let (q2, r) = (b.shape[0], b.shape[1]);
    if q != q2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {:?} × {:?}", a.shape, b.shape),
        ));
    }
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a.data[i * q + k];
            let b_row = &b.data[k * r..(k + 1) * r];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Tensor {
        shape: vec![p, r],
        data: out,
    })
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 {
        return Err(Error::shape("transpose", format!("expected matrix, got {:?}", a.shape)));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor {
        shape: vec![c, r],
        data: out,
    })
}

/// Adds `bias` (length `cols`) to every row of `a`.
pub fn add_row(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2();
    if bias.len() != c {
        return Err(Error::shape(
            "add_row",
            format!("bias length {} vs {} columns", bias.len(), c),
        ));
    }
    let mut out = a.data.clone();
    for i in 0..r {
        for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: out,
    })
}

pub fn relu(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let (r, c) = a.dims2();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &a.data[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in &mut out[i * c..(i + 1) * c] {
            *o /= sum;
        }
    }
    Tensor {
        shape: a.shape.clone(),
        data: out,
    }
}

/// Leftmost `rows × cols` block of a matrix, or the first `cols` entries of
/// a vector.
pub fn slice_leading(a: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    match a.shape.as_slice() {
        [n] => {
            if rows != 1 || cols > *n || cols == 0 {
                return Err(Error::shape("slice", format!("cannot take {cols} of {n}")));
            }
            Ok(Tensor {
                shape: vec![cols],
                data: a.data[..cols].to_vec(),
            })
        }
        [r, c] => {
            if rows > *r || cols > *c || rows == 0 || cols == 0 {
                return Err(Error::shape(
                    "slice",
                    format!("cannot take {rows}×{cols} of {r}×{c}"),
                ));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                data.extend_from_slice(&a.data[i * c..i * c + cols]);
            }
            Ok(Tensor {
                shape: vec![rows, cols],
                data,
            })
        }
        _ => Err(Error::shape("slice", format!("unsupported shape {:?}", a.shape))),
    }
}

/// Index of the largest entry in each row; ties resolve to the lowest index.
pub fn argmax_rows(a: &Tensor) -> Vec<usize> {
    let (r, c) = a.dims2();
    (0..r)
        .map(|i| {
            let row = &a.data[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
