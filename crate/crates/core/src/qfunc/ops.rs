//! Low-level differentiable building blocks: im2col convolution, max
//! pooling, and an LSTM cell, all with hand-derived backward passes.
//!
//! Layout conventions:
//! - An image is `(channels, height, width)` flattened row-major into one
//!   `Vec<f64>` slice.
//! - A convolution/pool activation is an `Array2` with rows = spatial
//!   positions (row-major over the output grid) and columns = channels.
//! - A batch of vectors is an `Array2` with rows = samples.

use ndarray::{Array2, ArrayView2, Axis};

/// Spatial geometry of one convolution or pooling stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Geometry {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    pub fn out_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Unfolds `image` (len `in_ch * in_h * in_w`) into patch rows.
/// Row `oy * out_w + ox` holds the receptive field at that output position,
/// channel-major then row-major within the kernel.
pub fn im2col(image: &[f64], g: &Geometry) -> Array2<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = Array2::zeros((oh * ow, g.patch_len()));
    for oy in 0..oh {
        for ox in 0..ow {
            let row = oy * ow + ox;
            let (y0, x0) = (oy * g.stride, ox * g.stride);
            let mut c = 0;
            for ch in 0..g.in_ch {
                let base = ch * g.in_h * g.in_w;
                for ky in 0..g.kernel {
                    let line = base + (y0 + ky) * g.in_w + x0;
                    for kx in 0..g.kernel {
                        cols[[row, c]] = image[line + kx];
                        c += 1;
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch-row gradients back onto the
/// image gradient buffer.
pub fn col2im(dcols: &ArrayView2<f64>, g: &Geometry, dimage: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for oy in 0..oh {
        for ox in 0..ow {
            let row = oy * ow + ox;
            let (y0, x0) = (oy * g.stride, ox * g.stride);
            let mut c = 0;
            for ch in 0..g.in_ch {
                let base = ch * g.in_h * g.in_w;
                for ky in 0..g.kernel {
                    let line = base + (y0 + ky) * g.in_w + x0;
                    for kx in 0..g.kernel {
                        dimage[line + kx] += dcols[[row, c]];
                        c += 1;
                    }
                }
            }
        }
    }
}

/// In-place ReLU; returns the pre-activation mask needed for backward.
pub fn relu_forward(a: &mut Array2<f64>) -> Array2<f64> {
    let mask = a.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    a.mapv_inplace(|v| v.max(0.0));
    mask
}

pub fn relu_backward(da: &mut Array2<f64>, mask: &Array2<f64>) {
    *da *= mask;
}

/// Max pooling over a spatial-rows/channel-cols activation.
/// Returns the pooled activation and flat argmax rows for backward.
pub fn maxpool_forward(
    act: &ArrayView2<f64>,
    in_h: usize,
    in_w: usize,
    pool: usize,
) -> (Array2<f64>, Array2<usize>) {
    let channels = act.ncols();
    let (ph, pw) = (in_h / pool, in_w / pool);
    let mut out = Array2::zeros((ph * pw, channels));
    let mut arg = Array2::zeros((ph * pw, channels));
    for py in 0..ph {
        for px in 0..pw {
            let orow = py * pw + px;
            for ch in 0..channels {
                let mut best = f64::NEG_INFINITY;
                let mut best_row = 0;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let row = (py * pool + dy) * in_w + (px * pool + dx);
                        let v = act[[row, ch]];
                        if v > best {
                            best = v;
                            best_row = row;
                        }
                    }
                }
                out[[orow, ch]] = best;
                arg[[orow, ch]] = best_row;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(
    dout: &ArrayView2<f64>,
    arg: &Array2<usize>,
    in_positions: usize,
) -> Array2<f64> {
    let channels = dout.ncols();
    let mut din = Array2::zeros((in_positions, channels));
    for (orow, row) in arg.outer_iter().enumerate() {
        for ch in 0..channels {
            din[[row[ch], ch]] += dout[[orow, ch]];
        }
    }
    din
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-step LSTM activations kept for backpropagation through time.
pub struct LstmCache {
    /// Gate activations per step: i, f, g, o, each `B x H`.
    gates: Vec<[Array2<f64>; 4]>,
    /// Cell states per step, `B x H`; index 0 is the initial zero state.
    cells: Vec<Array2<f64>>,
    /// Hidden states per step, `B x H`; index 0 is the initial zero state.
    hidden: Vec<Array2<f64>>,
}

impl LstmCache {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.hidden.last().expect("at least the initial state")
    }
}

/// Runs an LSTM over `xs` (one `B x D` input per step) with zero initial
/// state. Gate order in the fused weight matrices is `[i, f, g, o]`.
pub fn lstm_forward(
    xs: &[Array2<f64>],
    wx: &ArrayView2<f64>,
    wh: &ArrayView2<f64>,
    b: &ArrayView2<f64>,
) -> LstmCache {
    let hidden_units = wh.nrows();
    let batch = xs[0].nrows();
    let mut cache = LstmCache {
        gates: Vec::with_capacity(xs.len()),
        cells: vec![Array2::zeros((batch, hidden_units))],
        hidden: vec![Array2::zeros((batch, hidden_units))],
    };
    for x in xs {
        let h_prev = cache.hidden.last().expect("init state");
        let c_prev = cache.cells.last().expect("init state");
        let z = x.dot(wx) + h_prev.dot(wh) + b;
        let h = hidden_units;
        let i = z.slice(ndarray::s![.., 0..h]).mapv(sigmoid);
        let f = z.slice(ndarray::s![.., h..2 * h]).mapv(sigmoid);
        let g = z.slice(ndarray::s![.., 2 * h..3 * h]).mapv(f64::tanh);
        let o = z.slice(ndarray::s![.., 3 * h..4 * h]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let h_new = &o * &c.mapv(f64::tanh);
        cache.gates.push([i, f, g, o]);
        cache.cells.push(c);
        cache.hidden.push(h_new);
    }
    cache
}

/// Gradients produced by [`lstm_backward`].
pub struct LstmGrads {
    pub dwx: Array2<f64>,
    pub dwh: Array2<f64>,
    pub db: Array2<f64>,
    pub dxs: Vec<Array2<f64>>,
}

/// Backpropagates a gradient on the *final* hidden state through time.
pub fn lstm_backward(
    xs: &[Array2<f64>],
    wx: &ArrayView2<f64>,
    wh: &ArrayView2<f64>,
    cache: &LstmCache,
    dh_last: &Array2<f64>,
) -> LstmGrads {
    let steps = xs.len();
    let mut dwx = Array2::zeros(wx.raw_dim());
    let mut dwh = Array2::zeros(wh.raw_dim());
    let mut db = Array2::zeros((1, wx.ncols()));
    let mut dxs = vec![Array2::zeros(xs[0].raw_dim()); steps];

    let mut dh = dh_last.clone();
    let mut dc: Array2<f64> = Array2::zeros(dh.raw_dim());
    for t in (0..steps).rev() {
        let [i, f, g, o] = &cache.gates[t];
        let c = &cache.cells[t + 1];
        let c_prev = &cache.cells[t];
        let h_prev = &cache.hidden[t];
        let tanh_c = c.mapv(f64::tanh);

        let do_ = &dh * &tanh_c;
        let dct = &dc + &(&dh * o * &tanh_c.mapv(|v| 1.0 - v * v));
        let di = &dct * g;
        let df = &dct * c_prev;
        let dg = &dct * i;
        dc = &dct * f;

        // Pre-activation gradients.
        let dzi = &di * i * &i.mapv(|v| 1.0 - v);
        let dzf = &df * f * &f.mapv(|v| 1.0 - v);
        let dzg = &dg * &g.mapv(|v| 1.0 - v * v);
        let dzo = &do_ * o * &o.mapv(|v| 1.0 - v);
        let dz = ndarray::concatenate(Axis(1), &[dzi.view(), dzf.view(), dzg.view(), dzo.view()])
            .expect("gate widths match");

        dwx += &xs[t].t().dot(&dz);
        dwh += &h_prev.t().dot(&dz);
        db += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        dxs[t] = dz.dot(&wx.t());
        dh = dz.dot(&wh.t());
    }
    LstmGrads { dwx, dwh, db, dxs }
}
