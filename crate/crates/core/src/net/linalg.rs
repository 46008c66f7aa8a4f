//! Row-major matrix plumbing shared by every layer implementation.

use rand::Rng;

use super::NetError;

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NetError> {
        if rows.is_empty() {
            return Err(NetError::EmptySequence);
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(NetError::ShapeMismatch(format!(
                "ragged rows: expected {cols} columns, found {}",
                bad.len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Tensor2 { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Offset range of one named parameter block inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn of<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.off..self.off + self.len()]
    }

    pub fn of_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.off..self.off + self.len()]
    }
}

/// Sequentially allocates blocks from a flat vector.
pub struct BlockAllocator {
    next: usize,
}

impl BlockAllocator {
    pub fn new() -> Self {
        BlockAllocator { next: 0 }
    }

    pub fn alloc(&mut self, rows: usize, cols: usize) -> Block {
        let b = Block { off: self.next, rows, cols };
        self.next += b.len();
        b
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// out = W x for row-major `w` of shape rows x cols.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

/// out += W x.
pub fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// out += W^T y, where y has `rows` entries and out has `cols`.
pub fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (i, &yi) in y.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += yi * wij;
        }
    }
}

/// grad += dy x^T accumulated into a rows x cols block.
pub fn outer_add(grad: &mut [f64], rows: usize, cols: usize, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(grad.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for (i, &dyi) in dy.iter().enumerate() {
        let row = &mut grad[i * cols..(i + 1) * cols];
        for (g, &xj) in row.iter_mut().zip(x) {
            *g += dyi * xj;
        }
    }
}

pub fn add_assign(out: &mut [f64], x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

/// Fills a weight block with Glorot-uniform samples in layout order.
pub fn glorot_fill<R: Rng>(rng: &mut R, slice: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in slice.iter_mut() {
        *w = rng.gen_range(-limit..limit);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
