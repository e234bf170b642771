use std::collections::BTreeMap;

use rand::Rng;

use super::Real;

/// One encoder tower. Matrices are row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower<T> {
    pub dim: usize,
    pub buckets: usize,
    pub token_table: Vec<T>,
    pub w_hidden: Vec<T>,
    pub b_hidden: Vec<T>,
    pub w_out: Vec<T>,
    pub b_out: Vec<T>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub features: Vec<u32>,
    pub pooled: Vec<T>,
    pub hidden: Vec<T>,
    pub output: Vec<T>,
}

/// Gradient of one tower. Token-table rows are sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrad<T> {
    pub token_rows: BTreeMap<u32, Vec<T>>,
    pub w_hidden: Vec<T>,
    pub b_hidden: Vec<T>,
    pub w_out: Vec<T>,
    pub b_out: Vec<T>,
}

fn affine<T: Real>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let dim = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * dim..(o + 1) * dim];
            row.iter()
                .zip(x)
                .fold(bias, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect()
}

/// `wᵀ g` for a square row-major matrix.
fn transpose_mul<T: Real>(w: &[T], g: &[T]) -> Vec<T> {
    let dim = g.len();
    let mut out = vec![T::zero(); dim];
    for (o, &go) in g.iter().enumerate() {
        if go == T::zero() {
            continue;
        }
        for (acc, &wi) in out.iter_mut().zip(&w[o * dim..(o + 1) * dim]) {
            *acc += wi * go;
        }
    }
    out
}

fn outer_add<T: Real>(acc: &mut [T], g: &[T], x: &[T]) {
    let dim = x.len();
    for (o, &go) in g.iter().enumerate() {
        if go == T::zero() {
            continue;
        }
        for (a, &xi) in acc[o * dim..(o + 1) * dim].iter_mut().zip(x) {
            *a += go * xi;
        }
    }
}

impl<T: Real> Tower<T> {
    pub fn zeros(buckets: usize, dim: usize) -> Self {
        Self {
            dim,
            buckets,
            token_table: vec![T::zero(); buckets * dim],
            w_hidden: vec![T::zero(); dim * dim],
            b_hidden: vec![T::zero(); dim],
            w_out: vec![T::zero(); dim * dim],
            b_out: vec![T::zero(); dim],
        }
    }

    pub fn random<R: Rng>(buckets: usize, dim: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(buckets, dim);
        let a = 1.0 / (dim as f64).sqrt();
        for v in t.token_table.iter_mut() {
            *v = T::of(rng.gen_range(-a..a));
        }
        for w in [&mut t.w_hidden, &mut t.w_out] {
            for (i, v) in w.iter_mut().enumerate() {
                let diag = if i / dim == i % dim { 1.0 } else { 0.0 };
                *v = T::of(diag + rng.gen_range(-0.01..0.01));
            }
        }
        t
    }

    pub fn row(&self, bucket: u32) -> &[T] {
        let b = bucket as usize;
        &self.token_table[b * self.dim..(b + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> [&Vec<T>; 5] {
        [
            &self.token_table,
            &self.w_hidden,
            &self.b_hidden,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 5] {
        [
            &mut self.token_table,
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn cast<U: Real>(&self) -> Tower<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect();
        Tower {
            dim: self.dim,
            buckets: self.buckets,
            token_table: c(&self.token_table),
            w_hidden: c(&self.w_hidden),
            b_hidden: c(&self.b_hidden),
            w_out: c(&self.w_out),
            b_out: c(&self.b_out),
        }
    }

    /// `output = W_out · tanh(W_hidden · mean(rows) + b_hidden) + b_out`.
    pub fn forward(&self, features: Vec<u32>) -> Trace<T> {
        let mut pooled = vec![T::zero(); self.dim];
        for &f in &features {
            for (p, &v) in pooled.iter_mut().zip(self.row(f)) {
                *p += v;
            }
        }
        if !features.is_empty() {
            let inv = T::one() / T::of(features.len() as f64);
            pooled.iter_mut().for_each(|p| *p *= inv);
        }
        let hidden: Vec<T> = affine(&self.w_hidden, &self.b_hidden, &pooled)
            .into_iter()
            .map(T::tanh)
            .collect();
        let output = affine(&self.w_out, &self.b_out, &hidden);
        Trace {
            features,
            pooled,
            hidden,
            output,
        }
    }

    /// Accumulates ∂L/∂θ into `grad` given ∂L/∂output.
    pub fn backward(&self, trace: &Trace<T>, d_output: &[T], grad: &mut TowerGrad<T>) {
        outer_add(&mut grad.w_out, d_output, &trace.hidden);
        for (b, &g) in grad.b_out.iter_mut().zip(d_output) {
            *b += g;
        }
        let d_hidden = transpose_mul(&self.w_out, d_output);
        let d_pre: Vec<T> = d_hidden
            .iter()
            .zip(&trace.hidden)
            .map(|(&g, &h)| g * (T::one() - h * h))
            .collect();
        outer_add(&mut grad.w_hidden, &d_pre, &trace.pooled);
        for (b, &g) in grad.b_hidden.iter_mut().zip(&d_pre) {
            *b += g;
        }
        if trace.features.is_empty() {
            return;
        }
        let mut d_pooled = transpose_mul(&self.w_hidden, &d_pre);
        let inv = T::one() / T::of(trace.features.len() as f64);
        d_pooled.iter_mut().for_each(|g| *g *= inv);
        for &f in &trace.features {
            let row = grad
                .token_rows
                .entry(f)
                .or_insert_with(|| vec![T::zero(); self.dim]);
            for (r, &g) in row.iter_mut().zip(&d_pooled) {
                *r += g;
            }
        }
    }
}

impl<T: Real> TowerGrad<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            token_rows: BTreeMap::new(),
            w_hidden: vec![T::zero(); dim * dim],
            b_hidden: vec![T::zero(); dim],
            w_out: vec![T::zero(); dim * dim],
            b_out: vec![T::zero(); dim],
        }
    }

    pub fn add(&mut self, other: &TowerGrad<T>) {
        for (k, row) in &other.token_rows {
            match self.token_rows.get_mut(k) {
                Some(mine) => mine.iter_mut().zip(row).for_each(|(a, &b)| *a += b),
                None => {
                    self.token_rows.insert(*k, row.clone());
                }
            }
        }
        for (a, b) in [
            (&mut self.w_hidden, &other.w_hidden),
            (&mut self.b_hidden, &other.b_hidden),
            (&mut self.w_out, &other.w_out),
            (&mut self.b_out, &other.b_out),
        ] {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for row in self.token_rows.values_mut() {
            row.iter_mut().for_each(|v| *v *= factor);
        }
        for t in [
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ] {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Dense copy of the token-table gradient for a table of `buckets` rows.
    pub fn dense_token_table(&self, buckets: usize, dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); buckets * dim];
        for (&k, row) in &self.token_rows {
            let k = k as usize;
            out[k * dim..(k + 1) * dim].copy_from_slice(row);
        }
        out
    }
}
