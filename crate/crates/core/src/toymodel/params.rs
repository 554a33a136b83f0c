use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += self^T * y`
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += yi * a;
            }
        }
    }

    /// `self += a ⊗ b`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai == 0.0 {
                continue;
            }
            for (r, bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub src_vocab: usize,
    /// Target vocabulary without blank; blank is index `tgt_vocab`.
    pub tgt_vocab: usize,
    pub hidden: usize,
    pub time_reduction: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            src_vocab: 16,
            tgt_vocab: 16,
            hidden: 32,
            time_reduction: 4,
        }
    }
}

impl ModelDims {
    /// Joiner output size, blank included.
    pub fn output_size(&self) -> usize {
        self.tgt_vocab + 1
    }

    pub fn blank_id(&self) -> usize {
        self.tgt_vocab
    }
}

/// All trainable tensors. Also used to hold gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub src_embed: Matrix,
    /// Target embeddings; the extra last row is the start-of-sequence input.
    pub tgt_embed: Matrix,
    pub enc_wx: Matrix,
    pub enc_wh: Matrix,
    pub enc_b: Vec<f64>,
    pub pred_wx: Matrix,
    pub pred_wh: Matrix,
    pub pred_b: Vec<f64>,
    pub join_we: Matrix,
    pub join_wp: Matrix,
    pub join_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

/// Tensor names in checkpoint order.
pub const TENSOR_NAMES: [&str; 13] = [
    "src_embed", "tgt_embed", "enc_wx", "enc_wh", "enc_b", "pred_wx", "pred_wh", "pred_b",
    "join_we", "join_wp", "join_b", "out_w", "out_b",
];

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.hidden;
        let v = dims.output_size();
        Self {
            dims,
            src_embed: Matrix::zeros(dims.src_vocab, d),
            tgt_embed: Matrix::zeros(v, d),
            enc_wx: Matrix::zeros(d, d),
            enc_wh: Matrix::zeros(d, d),
            enc_b: vec![0.0; d],
            pred_wx: Matrix::zeros(d, d),
            pred_wh: Matrix::zeros(d, d),
            pred_b: vec![0.0; d],
            join_we: Matrix::zeros(d, d),
            join_wp: Matrix::zeros(d, d),
            join_b: vec![0.0; d],
            out_w: Matrix::zeros(v, d),
            out_b: vec![0.0; v],
        }
    }

    /// Uniform(-0.1, 0.1) initialization.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        Self::init_scaled(dims, seed, 0.1)
    }

    /// Uniform(-scale, scale) initialization, tensors filled in checkpoint
    /// order.
    pub fn init_scaled(dims: ModelDims, seed: u64, scale: f64) -> Self {
        let mut params = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, tensor) in params.tensors_mut() {
            for x in tensor.iter_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
        params
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 13] {
        [
            (TENSOR_NAMES[0], &self.src_embed.data),
            (TENSOR_NAMES[1], &self.tgt_embed.data),
            (TENSOR_NAMES[2], &self.enc_wx.data),
            (TENSOR_NAMES[3], &self.enc_wh.data),
            (TENSOR_NAMES[4], &self.enc_b),
            (TENSOR_NAMES[5], &self.pred_wx.data),
            (TENSOR_NAMES[6], &self.pred_wh.data),
            (TENSOR_NAMES[7], &self.pred_b),
            (TENSOR_NAMES[8], &self.join_we.data),
            (TENSOR_NAMES[9], &self.join_wp.data),
            (TENSOR_NAMES[10], &self.join_b),
            (TENSOR_NAMES[11], &self.out_w.data),
            (TENSOR_NAMES[12], &self.out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 13] {
        [
            (TENSOR_NAMES[0], &mut self.src_embed.data),
            (TENSOR_NAMES[1], &mut self.tgt_embed.data),
            (TENSOR_NAMES[2], &mut self.enc_wx.data),
            (TENSOR_NAMES[3], &mut self.enc_wh.data),
            (TENSOR_NAMES[4], &mut self.enc_b),
            (TENSOR_NAMES[5], &mut self.pred_wx.data),
            (TENSOR_NAMES[6], &mut self.pred_wh.data),
            (TENSOR_NAMES[7], &mut self.pred_b),
            (TENSOR_NAMES[8], &mut self.join_we.data),
            (TENSOR_NAMES[9], &mut self.join_wp.data),
            (TENSOR_NAMES[10], &mut self.join_b),
            (TENSOR_NAMES[11], &mut self.out_w.data),
            (TENSOR_NAMES[12], &mut self.out_b),
        ]
    }

    /// `(rows, cols)` of every tensor in checkpoint order; vectors are `(n, 1)`.
    pub fn shapes(&self) -> [(usize, usize); 13] {
        let m = |x: &Matrix| (x.rows, x.cols);
        let v = |x: &Vec<f64>| (x.len(), 1);
        [
            m(&self.src_embed),
            m(&self.tgt_embed),
            m(&self.enc_wx),
            m(&self.enc_wh),
            v(&self.enc_b),
            m(&self.pred_wx),
            m(&self.pred_wh),
            v(&self.pred_b),
            m(&self.join_we),
            m(&self.join_wp),
            v(&self.join_b),
            m(&self.out_w),
            v(&self.out_b),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flat view index -> value, in checkpoint order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for (_, t) in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for (_, t) in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = ModelDims::default();
        let a = ModelParams::init(dims, 3);
        let b = ModelParams::init(dims, 3);
        let c = ModelParams::init(dims, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.abs() < 0.1)));
    }

    #[test]
    fn flat_indexing_spans_all_tensors() {
        let dims = ModelDims {
            src_vocab: 4,
            tgt_vocab: 4,
            hidden: 3,
            time_reduction: 2,
        };
        let mut p = ModelParams::zeros(dims);
        let n = p.num_parameters();
        p.set_flat(n - 1, 2.5);
        assert_eq!(p.out_b[4], 2.5);
        assert_eq!(p.get_flat(n - 1), 2.5);
        p.set_flat(0, 1.0);
        assert_eq!(p.src_embed.data[0], 1.0);
    }

    #[test]
    fn matrix_products() {
        let m = Matrix {
            rows: 2,
            cols: 3,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let mut out = vec![0.0; 2];
        m.matvec_add(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        m.matvec_t_add(&[1.0, 1.0], &mut out);
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
        let mut z = Matrix::zeros(2, 3);
        z.add_outer(&[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(z.data, vec![1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }
}
