use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

/// LSTM hidden and cell state, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl Memory {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.h.ncols()
    }

    /// Zeroes the rows where `reset[b]` holds.
    pub fn reset_rows(&mut self, reset: &[bool]) {
        for (b, &r) in reset.iter().enumerate() {
            if r {
                self.h.row_mut(b).fill(0.0);
                self.c.row_mut(b).fill(0.0);
            }
        }
    }

    pub fn row(&self, b: usize) -> Memory {
        Memory {
            h: self.h.slice(s![b..b + 1, ..]).to_owned(),
            c: self.c.slice(s![b..b + 1, ..]).to_owned(),
        }
    }

    /// Stacks single-row memories.
    pub fn stack(rows: &[&Memory]) -> Memory {
        let hidden = rows.first().map_or(0, |m| m.hidden());
        let mut out = Memory::zeros(rows.len(), hidden);
        for (i, m) in rows.iter().enumerate() {
            out.h.row_mut(i).assign(&m.h.row(0));
            out.c.row_mut(i).assign(&m.c.row(0));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(self.c.iter()).all(|v| v.is_finite())
    }
}

/// Gate weights with gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `(4H, in)`
    pub wx: ArrayView2<'a, f64>,
    /// `(4H, H)`
    pub wh: ArrayView2<'a, f64>,
    /// `(4H)`
    pub b: ArrayView1<'a, f64>,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Post-activation gates `(B, 4H)`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

impl LstmCache {
    /// Hidden state entering the step.
    pub fn h_prev(&self) -> &Array2<f64> {
        &self.h_prev
    }
}

/// Batches up to this size use direct row products for the recurrent
/// matrix; GEMM packing of the large `Wh` dominates at tiny batch sizes.
const SMALL_BATCH: usize = 4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `z += h Wh^T`.
fn add_recurrent(h: &Array2<f64>, wh: ArrayView2<f64>, z: &mut Array2<f64>) {
    match (h.as_slice(), wh.as_slice()) {
        (Some(hs), Some(ws)) if h.nrows() <= SMALL_BATCH => {
            let n = h.ncols();
            for (b, mut zrow) in z.rows_mut().into_iter().enumerate() {
                let hb = &hs[b * n..(b + 1) * n];
                for (k, zk) in zrow.iter_mut().enumerate() {
                    *zk += dot(&ws[k * n..(k + 1) * n], hb);
                }
            }
        }
        _ => general_mat_mul(1.0, h, &wh.t(), 1.0, z),
    }
}

/// `dz Wh`, the gradient reaching the previous hidden state.
fn backprop_recurrent(dz: &Array2<f64>, wh: ArrayView2<f64>) -> Array2<f64> {
    match (dz.as_slice(), wh.as_slice()) {
        (Some(ds), Some(ws)) if dz.nrows() <= SMALL_BATCH => {
            let (rows, n) = wh.dim();
            let mut out = Array2::zeros((dz.nrows(), n));
            for (b, mut orow) in out.rows_mut().into_iter().enumerate() {
                let o = orow.as_slice_mut().expect("fresh array");
                for k in 0..rows {
                    let d = ds[b * rows + k];
                    if d != 0.0 {
                        for (ov, wv) in o.iter_mut().zip(&ws[k * n..(k + 1) * n]) {
                            *ov += d * wv;
                        }
                    }
                }
            }
            out
        }
        _ => dz.dot(&wh),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Input part of the gate pre-activations, `x Wx^T + b`, for any number of
/// rows. Unrolls compute it for all steps at once.
pub fn lstm_input_projection(x: ArrayView2<f64>, w: &LstmWeights) -> Array2<f64> {
    let mut z = x.dot(&w.wx.t());
    z += &w.b;
    z
}

/// One batched LSTM step from its input projection `zx`:
/// `c' = sig(f) c + sig(i) tanh(g)`, `h' = sig(o) tanh(c')`.
pub fn lstm_step_projected(mut zx: Array2<f64>, mem: &Memory, w: &LstmWeights) -> (Memory, LstmCache) {
    let hidden = mem.hidden();
    add_recurrent(&mem.h, w.wh, &mut zx);
    let mut z = zx;
    for mut row in z.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = if k / hidden == 2 { v.tanh() } else { sigmoid(*v) };
        }
    }
    let i = z.slice(s![.., 0..hidden]);
    let f = z.slice(s![.., hidden..2 * hidden]);
    let g = z.slice(s![.., 2 * hidden..3 * hidden]);
    let o = z.slice(s![.., 3 * hidden..]);
    let mut c = Array2::zeros(mem.c.raw_dim());
    Zip::from(&mut c)
        .and(&i)
        .and(&f)
        .and(&g)
        .and(&mem.c)
        .for_each(|c, &i, &f, &g, &cp| *c = f * cp + i * g);
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    let cache = LstmCache {
        h_prev: mem.h.clone(),
        c_prev: mem.c.clone(),
        gates: z,
        tanh_c,
    };
    (Memory { h, c }, cache)
}

/// One batched LSTM step.
pub fn lstm_step(x: ArrayView2<f64>, mem: &Memory, w: &LstmWeights) -> (Memory, LstmCache) {
    lstm_step_projected(lstm_input_projection(x, w), mem, w)
}

/// Gradient on the gate pre-activations of one step and on the incoming
/// cell state, given gradients `dh`/`dc` on the step's outputs.
pub fn lstm_gates_backward(cache: &LstmCache, dh: ArrayView2<f64>, dc: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let hidden = cache.h_prev.ncols();
    let batch = cache.h_prev.nrows();
    let gates = &cache.gates;
    let mut dz = Array2::zeros((batch, 4 * hidden));
    let mut dc_prev = Array2::zeros((batch, hidden));
    for b in 0..batch {
        for k in 0..hidden {
            let (i, f, g, o) = (
                gates[[b, k]],
                gates[[b, hidden + k]],
                gates[[b, 2 * hidden + k]],
                gates[[b, 3 * hidden + k]],
            );
            let tc = cache.tanh_c[[b, k]];
            let dhv = dh[[b, k]];
            let dct = dc[[b, k]] + dhv * o * (1.0 - tc * tc);
            dz[[b, k]] = dct * g * i * (1.0 - i);
            dz[[b, hidden + k]] = dct * cache.c_prev[[b, k]] * f * (1.0 - f);
            dz[[b, 2 * hidden + k]] = dct * i * (1.0 - g * g);
            dz[[b, 3 * hidden + k]] = dhv * tc * o * (1.0 - o);
            dc_prev[[b, k]] = dct * f;
        }
    }
    (dz, dc_prev)
}

/// Gradient reaching the previous hidden state from gate gradients `dz`.
pub fn lstm_hidden_backprop(dz: &Array2<f64>, w: &LstmWeights) -> Array2<f64> {
    backprop_recurrent(dz, w.wh)
}

/// Backward through one step with input `x`. Returns `(dx, dh_prev,
/// dc_prev)` and accumulates weight gradients.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step_backward(
    cache: &LstmCache,
    x: ArrayView2<f64>,
    w: &LstmWeights,
    dh: ArrayView2<f64>,
    dc: ArrayView2<f64>,
    gwx: &mut ArrayViewMut2<f64>,
    gwh: &mut ArrayViewMut2<f64>,
    gb: &mut ArrayViewMut1<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (dz, dc_prev) = lstm_gates_backward(cache, dh, dc);
    general_mat_mul(1.0, &dz.t(), &x, 1.0, gwx);
    general_mat_mul(1.0, &dz.t(), &cache.h_prev, 1.0, gwh);
    *gb += &dz.sum_axis(Axis(0));
    let dx = dz.dot(&w.wx);
    let dh_prev = backprop_recurrent(&dz, w.wh);
    (dx, dh_prev, dc_prev)
}
