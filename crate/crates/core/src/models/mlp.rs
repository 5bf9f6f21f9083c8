//! Dense layer stacks over a flat parameter vector, with hand-written
//! backpropagation. Batches are row-major `rows × width` matrices.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// One affine layer `y = act(W x + b)`, `W` stored row-major `outputs × inputs`
/// at `offset`, followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub offset: usize,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.outputs * self.inputs
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.outputs * self.inputs;
        s..s + self.outputs
    }
}

/// Per-record side input added to the first layer's pre-activation through
/// its own weight matrix (`width × dim`, no bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextInput {
    pub dim: usize,
    pub offset: usize,
}

/// Context features for a batch: one row per record plus the record of
/// every batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRows {
    pub features: Vec<f64>,
    pub records: usize,
    pub row_record: Vec<usize>,
}

/// A chain of dense layers occupying `[offset, end)` of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<Dense>,
    pub context: Option<ContextInput>,
}

/// Post-activation outputs of every layer.
#[derive(Debug, Clone)]
pub struct StackCache {
    pub rows: usize,
    acts: Vec<Vec<f64>>,
}

impl StackCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("stack has layers")
    }
}

impl Stack {
    pub fn new(offset: usize, inputs: usize, layers: &[(usize, Activation)], context_dim: usize) -> Self {
        let mut out = Vec::with_capacity(layers.len());
        let mut at = offset;
        let mut width = inputs;
        for &(outputs, activation) in layers {
            let d = Dense { inputs: width, outputs, activation, offset: at };
            at += d.param_count();
            width = outputs;
            out.push(d);
        }
        let context = (context_dim > 0).then(|| ContextInput { dim: context_dim, offset: at });
        Self { layers: out, context }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn offset(&self) -> usize {
        self.layers[0].offset
    }

    pub fn param_count(&self) -> usize {
        let ctx = self.context.as_ref().map(|c| c.dim * self.layers[0].outputs).unwrap_or(0);
        self.layers.iter().map(Dense::param_count).sum::<usize>() + ctx
    }

    pub fn end(&self) -> usize {
        self.offset() + self.param_count()
    }

    /// Glorot-uniform weights, zero biases; the final layer is zeroed when
    /// `zero_last`.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, zero_last: bool) {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut params[l.weight_range()] {
                *w = if zero_last && i == last { 0.0 } else { rng.random_range(-limit..limit) };
            }
            params[l.bias_range()].iter_mut().for_each(|b| *b = 0.0);
        }
        if let Some(c) = &self.context {
            let h = self.layers[0].outputs;
            let limit = (6.0 / (c.dim + h) as f64).sqrt();
            for w in &mut params[c.offset..c.offset + c.dim * h] {
                *w = rng.random_range(-limit..limit);
            }
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64], rows: usize, ctx: Option<&ContextRows>) -> StackCache {
        assert_eq!(input.len(), rows * self.inputs(), "input shape");
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let x: &[f64] = if i == 0 { input } else { &acts[i - 1] };
            let mut z = vec![0.0; rows * l.outputs];
            let bias = &params[l.bias_range()];
            for r in 0..rows {
                z[r * l.outputs..(r + 1) * l.outputs].copy_from_slice(bias);
            }
            gemm_nt(rows, l.inputs, l.outputs, x, &params[l.weight_range()], &mut z, 1.0);
            if i == 0 {
                if let (Some(c), Some(cr)) = (&self.context, ctx) {
                    let h = l.outputs;
                    let mut proj = vec![0.0; cr.records * h];
                    gemm_nt(cr.records, c.dim, h, &cr.features, &params[c.offset..c.offset + c.dim * h], &mut proj, 0.0);
                    for (r, &rec) in cr.row_record.iter().enumerate() {
                        let src = &proj[rec * h..(rec + 1) * h];
                        z[r * h..(r + 1) * h].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
            }
            if l.activation == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        StackCache { rows, acts }
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into
    /// `grad`, returning the gradient with respect to the input when asked.
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        ctx: Option<&ContextRows>,
        cache: &StackCache,
        d_out: &[f64],
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let rows = cache.rows;
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if l.activation == Activation::Tanh {
                delta.iter_mut().zip(&cache.acts[i]).for_each(|(d, a)| *d *= 1.0 - a * a);
            }
            let x: &[f64] = if i == 0 { input } else { &cache.acts[i - 1] };
            gemm_tn(l.outputs, rows, l.inputs, &delta, x, &mut grad[l.weight_range()]);
            let gb = &mut grad[l.bias_range()];
            for r in 0..rows {
                gb.iter_mut().zip(&delta[r * l.outputs..(r + 1) * l.outputs]).for_each(|(g, d)| *g += d);
            }
            if i == 0 {
                if let (Some(c), Some(cr)) = (&self.context, ctx) {
                    let h = l.outputs;
                    let mut per_record = vec![0.0; cr.records * h];
                    for (r, &rec) in cr.row_record.iter().enumerate() {
                        per_record[rec * h..(rec + 1) * h]
                            .iter_mut()
                            .zip(&delta[r * h..(r + 1) * h])
                            .for_each(|(g, d)| *g += d);
                    }
                    gemm_tn(h, cr.records, c.dim, &per_record, &cr.features, &mut grad[c.offset..c.offset + c.dim * h]);
                }
                if !want_input_grad {
                    return None;
                }
            }
            let mut prev = vec![0.0; rows * l.inputs];
            gemm_nn(rows, l.outputs, l.inputs, &delta, &params[l.weight_range()], &mut prev);
            delta = prev;
        }
        Some(delta)
    }
}

/// `c = beta·c + a · bᵀ` with `a: m×k`, `b: n×k`, `c: m×n`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths cover every strided access for these shapes.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`, `c: m×n`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}
