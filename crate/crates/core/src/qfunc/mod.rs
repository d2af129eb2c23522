//! From-scratch action-value networks with analytic gradients.
//!
//! Two variants share one interface:
//! - the *image* network: two strided convolutions, an optional max pool,
//!   an LSTM over the observation window, and a dense ReLU embedding;
//! - the *power* network: a small fully connected net over the standardized
//!   power window plus the serving-BS one-hot and normalized disruption
//!   counter.
//!
//! Both end in per-`(j, c, a)` linear heads: the Q-value of action `a` in a
//! state with serving BS `j` and disruption counter `c` is the inner product
//! of the head vector with the shared embedding. Heads start at zero.

mod ops;
mod params;
mod snapshot;

pub use params::{ParamSet, RmsProp, Segment};

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::env::{MdpState, Observation};
use crate::error::{Error, Result};
use ops::{
    col2im, im2col, lstm_backward, lstm_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, Geometry, LstmCache,
};

/// One strided convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture of the image (camera) Q-network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageArch {
    pub window: usize,
    pub num_bs: usize,
    /// Number of disruption-counter levels, `c_max + 1`.
    pub c_levels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    /// Max-pool side after the second convolution; 1 disables pooling.
    pub pool: usize,
    pub lstm_units: usize,
    pub embed: usize,
}

impl ImageArch {
    /// Full-size architecture: 8 4x4/2 and 16 3x3/2 convolutions, no pool,
    /// 128 LSTM units, 512-dimensional embedding.
    pub fn full(window: usize, num_bs: usize, c_levels: usize) -> Self {
        Self {
            window,
            num_bs,
            c_levels,
            height: 40,
            width: 40,
            conv1: ConvSpec {
                filters: 8,
                kernel: 4,
                stride: 2,
            },
            conv2: ConvSpec {
                filters: 16,
                kernel: 3,
                stride: 2,
            },
            pool: 1,
            lstm_units: 128,
            embed: 512,
        }
    }

    /// Smaller architecture for tight compute budgets: adds a 2x2 pool and
    /// shrinks the recurrent state.
    pub fn compact(window: usize, num_bs: usize, c_levels: usize) -> Self {
        Self {
            pool: 2,
            lstm_units: 64,
            embed: 128,
            ..Self::full(window, num_bs, c_levels)
        }
    }

    fn geo1(&self) -> Geometry {
        Geometry {
            in_ch: 1,
            in_h: self.height,
            in_w: self.width,
            kernel: self.conv1.kernel,
            stride: self.conv1.stride,
        }
    }

    fn geo2(&self) -> Geometry {
        let g1 = self.geo1();
        Geometry {
            in_ch: self.conv1.filters,
            in_h: g1.out_h(),
            in_w: g1.out_w(),
            kernel: self.conv2.kernel,
            stride: self.conv2.stride,
        }
    }

    /// Flattened feature length fed to the LSTM per frame.
    fn feature_len(&self) -> usize {
        let g2 = self.geo2();
        let (h2, w2) = (g2.out_h(), g2.out_w());
        (h2 / self.pool) * (w2 / self.pool) * self.conv2.filters
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.num_bs == 0 || self.c_levels == 0 {
            return Err(Error::InvalidParameter(
                "window, num_bs and c_levels must be >= 1".into(),
            ));
        }
        let g1 = self.geo1();
        if g1.kernel > self.height || g1.kernel > self.width || g1.stride == 0 {
            return Err(Error::InvalidParameter("conv1 does not fit input".into()));
        }
        let g2 = self.geo2();
        if g2.kernel > g2.in_h || g2.kernel > g2.in_w || g2.stride == 0 {
            return Err(Error::InvalidParameter("conv2 does not fit conv1 output".into()));
        }
        if self.pool == 0 || g2.out_h() / self.pool == 0 || g2.out_w() / self.pool == 0 {
            return Err(Error::InvalidParameter("pool too large".into()));
        }
        if self.lstm_units == 0 || self.embed == 0 {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        Ok(())
    }
}

/// Architecture of the received-power Q-network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerArch {
    pub window: usize,
    pub num_bs: usize,
    pub c_levels: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl PowerArch {
    pub fn default_for(window: usize, num_bs: usize, c_levels: usize) -> Self {
        Self {
            window,
            num_bs,
            c_levels,
            hidden: 8,
            embed: 32,
        }
    }

    /// Input width: the power window plus serving-BS one-hot plus the
    /// normalized disruption counter.
    pub fn input_len(&self) -> usize {
        self.window * self.num_bs + self.num_bs + 1
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.num_bs == 0 || self.c_levels == 0 {
            return Err(Error::InvalidParameter(
                "window, num_bs and c_levels must be >= 1".into(),
            ));
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetArch {
    Image(ImageArch),
    Power(PowerArch),
}

impl NetArch {
    pub fn window(&self) -> usize {
        match self {
            NetArch::Image(a) => a.window,
            NetArch::Power(a) => a.window,
        }
    }

    pub fn num_bs(&self) -> usize {
        match self {
            NetArch::Image(a) => a.num_bs,
            NetArch::Power(a) => a.num_bs,
        }
    }

    pub fn c_levels(&self) -> usize {
        match self {
            NetArch::Image(a) => a.c_levels,
            NetArch::Power(a) => a.c_levels,
        }
    }

    pub fn embed(&self) -> usize {
        match self {
            NetArch::Image(a) => a.embed,
            NetArch::Power(a) => a.embed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NetArch::Image(a) => a.validate(),
            NetArch::Power(a) => a.validate(),
        }
    }
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardPass {
    /// Q-values, one row per state, one column per action.
    pub q: Array2<f64>,
    cache: Cache,
}

enum Cache {
    Image(ImageCache),
    Power(PowerCache),
}

struct ImageCache {
    cols1: Array2<f64>,
    mask1: Array2<f64>,
    cols2: Array2<f64>,
    mask2: Array2<f64>,
    /// Per-image argmax maps when pooling is enabled.
    pool_args: Vec<Array2<usize>>,
    xs: Vec<Array2<f64>>,
    lstm: LstmCache,
    mask_e: Array2<f64>,
    embed: Array2<f64>,
    head_rows: Vec<usize>,
}

struct PowerCache {
    x: Array2<f64>,
    mask1: Array2<f64>,
    a1: Array2<f64>,
    mask_e: Array2<f64>,
    embed: Array2<f64>,
    head_rows: Vec<usize>,
}

/// An action-value network: architecture plus parameters.
#[derive(Debug, Clone)]
pub struct QNetwork {
    arch: NetArch,
    pub params: ParamSet,
}

fn he_normal<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn xavier_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new(-limit, limit);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl QNetwork {
    pub fn new<R: Rng>(arch: NetArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut p = ParamSet::new();
        let head_rows = arch.num_bs() * arch.c_levels() * arch.num_bs();
        match &arch {
            NetArch::Image(a) => {
                let (g1, g2) = (a.geo1(), a.geo2());
                p.push(
                    "conv1.w",
                    he_normal(g1.patch_len(), a.conv1.filters, g1.patch_len(), rng),
                    true,
                );
                p.push("conv1.b", Array2::zeros((1, a.conv1.filters)), true);
                p.push(
                    "conv2.w",
                    he_normal(g2.patch_len(), a.conv2.filters, g2.patch_len(), rng),
                    true,
                );
                p.push("conv2.b", Array2::zeros((1, a.conv2.filters)), true);
                let d = a.feature_len();
                p.push("lstm.wx", xavier_uniform(d, 4 * a.lstm_units, rng), true);
                p.push(
                    "lstm.wh",
                    xavier_uniform(a.lstm_units, 4 * a.lstm_units, rng),
                    true,
                );
                let mut b = Array2::zeros((1, 4 * a.lstm_units));
                // Forget-gate bias starts at 1 so early memories survive.
                b.slice_mut(s![.., a.lstm_units..2 * a.lstm_units]).fill(1.0);
                p.push("lstm.b", b, true);
                p.push(
                    "dense.w",
                    he_normal(a.lstm_units, a.embed, a.lstm_units, rng),
                    true,
                );
                p.push("dense.b", Array2::zeros((1, a.embed)), true);
                p.push("heads", Array2::zeros((head_rows, a.embed)), true);
            }
            NetArch::Power(a) => {
                let d = a.input_len();
                p.push("fc1.w", he_normal(d, a.hidden, d, rng), true);
                p.push("fc1.b", Array2::zeros((1, a.hidden)), true);
                p.push("fc2.w", he_normal(a.hidden, a.embed, a.hidden, rng), true);
                p.push("fc2.b", Array2::zeros((1, a.embed)), true);
                p.push("heads", Array2::zeros((head_rows, a.embed)), true);
                // Standardization of the power inputs: [mean, std] in dBm.
                p.push("norm", ndarray::array![[-90.0, 15.0]], false);
            }
        }
        Ok(Self { arch, params: p })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn num_actions(&self) -> usize {
        self.arch.num_bs()
    }

    /// Row in the head matrix for the `(j, c, a)` triple (1-based j and a).
    pub fn head_index(&self, serving_bs: usize, disruption: u32, action: usize) -> Result<usize> {
        let (nb, cl) = (self.arch.num_bs(), self.arch.c_levels());
        let c = disruption as usize;
        if serving_bs == 0 || serving_bs > nb || action == 0 || action > nb || c >= cl {
            return Err(Error::ContractViolation(format!(
                "(j = {serving_bs}, c = {disruption}, a = {action}) outside J = {nb}, C = {cl}"
            )));
        }
        Ok(((serving_bs - 1) * cl + c) * nb + (action - 1))
    }

    /// Sets the input standardization of the power variant.
    pub fn set_power_norm(&mut self, mean_dbm: f64, std_dbm: f64) -> Result<()> {
        if !matches!(self.arch, NetArch::Power(_)) {
            return Err(Error::ContractViolation(
                "input normalization only applies to the power variant".into(),
            ));
        }
        if !(std_dbm > 0.0) || !mean_dbm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bad normalization ({mean_dbm}, {std_dbm})"
            )));
        }
        let n = self.params.expect_mut("norm");
        n[[0, 0]] = mean_dbm;
        n[[0, 1]] = std_dbm;
        Ok(())
    }

    /// Replaces the zero head initialization with small random values; used
    /// by gradient checks so that gradients reach the embedding layers.
    pub fn randomize_heads<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        let dist = Normal::new(0.0, scale).expect("positive scale");
        self.params
            .expect_mut("heads")
            .mapv_inplace(|_| dist.sample(rng));
    }

    pub fn forward(&self, states: &[&MdpState]) -> Result<ForwardPass> {
        if states.is_empty() {
            return Err(Error::ContractViolation("empty batch".into()));
        }
        for st in states {
            if st.window.len() != self.arch.window() {
                return Err(Error::ContractViolation(format!(
                    "state window of {} != architecture window {}",
                    st.window.len(),
                    self.arch.window()
                )));
            }
        }
        match &self.arch {
            NetArch::Image(a) => self.forward_image(a, states),
            NetArch::Power(a) => self.forward_power(a, states),
        }
    }

    /// Convenience single-state evaluation.
    pub fn q_values(&self, state: &MdpState) -> Result<Vec<f64>> {
        let fwd = self.forward(&[state])?;
        Ok(fwd.q.row(0).to_vec())
    }

    fn head_rows_for(&self, states: &[&MdpState]) -> Result<Vec<usize>> {
        states
            .iter()
            .map(|st| self.head_index(st.serving_bs, st.disruption_left, 1))
            .collect()
    }

    fn apply_heads(&self, embed: &Array2<f64>, head_rows: &[usize]) -> Array2<f64> {
        let heads = self.params.expect("heads");
        let actions = self.num_actions();
        let mut q = Array2::zeros((embed.nrows(), actions));
        for (b, &row0) in head_rows.iter().enumerate() {
            let e = embed.row(b);
            for a in 0..actions {
                q[[b, a]] = heads.row(row0 + a).dot(&e);
            }
        }
        q
    }

    fn forward_image(&self, a: &ImageArch, states: &[&MdpState]) -> Result<ForwardPass> {
        let (batch, steps) = (states.len(), a.window);
        let (g1, g2) = (a.geo1(), a.geo2());
        let (p1, p2) = (g1.out_positions(), g2.out_positions());
        let n_images = batch * steps;

        // Stage 1: im2col every frame (pixel / 255 normalization).
        let mut cols1 = Array2::zeros((n_images * p1, g1.patch_len()));
        let mut buf = vec![0.0f64; a.height * a.width];
        for (b, st) in states.iter().enumerate() {
            for (t, obs) in st.window.iter().enumerate() {
                let frame = match obs {
                    Observation::Image(f) => f,
                    Observation::Power(_) => {
                        return Err(Error::ContractViolation(
                            "image network fed a power observation".into(),
                        ))
                    }
                };
                if frame.height as usize != a.height || frame.width as usize != a.width {
                    return Err(Error::ContractViolation(format!(
                        "frame {}x{} != architecture {}x{}",
                        frame.width, frame.height, a.width, a.height
                    )));
                }
                for (dst, &px) in buf.iter_mut().zip(&frame.pixels) {
                    *dst = px as f64 / 255.0;
                }
                let i = b * steps + t;
                cols1
                    .slice_mut(s![i * p1..(i + 1) * p1, ..])
                    .assign(&im2col(&buf, &g1));
            }
        }
        let mut a1 = cols1.dot(self.params.expect("conv1.w"));
        a1 += self.params.expect("conv1.b");
        let mask1 = relu_forward(&mut a1);

        // Stage 2: second convolution on channel-major re-layouts.
        let mut cols2 = Array2::zeros((n_images * p2, g2.patch_len()));
        let mut chan_major = vec![0.0f64; a.conv1.filters * p1];
        for i in 0..n_images {
            let chunk = a1.slice(s![i * p1..(i + 1) * p1, ..]);
            for ch in 0..a.conv1.filters {
                for pos in 0..p1 {
                    chan_major[ch * p1 + pos] = chunk[[pos, ch]];
                }
            }
            cols2
                .slice_mut(s![i * p2..(i + 1) * p2, ..])
                .assign(&im2col(&chan_major, &g2));
        }
        let mut a2 = cols2.dot(self.params.expect("conv2.w"));
        a2 += self.params.expect("conv2.b");
        let mask2 = relu_forward(&mut a2);

        // Optional pool, then flatten per frame and regroup by timestep.
        let d = a.feature_len();
        let mut xs = vec![Array2::zeros((batch, d)); steps];
        let mut pool_args = Vec::new();
        for i in 0..n_images {
            let chunk = a2.slice(s![i * p2..(i + 1) * p2, ..]);
            let flat: Vec<f64> = if a.pool > 1 {
                let (pooled, args) = maxpool_forward(&chunk, g2.out_h(), g2.out_w(), a.pool);
                pool_args.push(args);
                pooled.iter().copied().collect()
            } else {
                chunk.iter().copied().collect()
            };
            let (b, t) = (i / steps, i % steps);
            xs[t].row_mut(b).assign(&ndarray::ArrayView1::from(&flat));
        }

        let lstm = lstm_forward(
            &xs,
            &self.params.expect("lstm.wx").view(),
            &self.params.expect("lstm.wh").view(),
            &self.params.expect("lstm.b").view(),
        );
        let mut e = lstm.last_hidden().dot(self.params.expect("dense.w"));
        e += self.params.expect("dense.b");
        let mask_e = relu_forward(&mut e);

        let head_rows = self.head_rows_for(states)?;
        let q = self.apply_heads(&e, &head_rows);
        Ok(ForwardPass {
            q,
            cache: Cache::Image(ImageCache {
                cols1,
                mask1,
                cols2,
                mask2,
                pool_args,
                xs,
                lstm,
                mask_e,
                embed: e,
                head_rows,
            }),
        })
    }

    fn forward_power(&self, a: &PowerArch, states: &[&MdpState]) -> Result<ForwardPass> {
        let norm = self.params.expect("norm");
        let (mean, std) = (norm[[0, 0]], norm[[0, 1]]);
        let d = a.input_len();
        let mut x = Array2::zeros((states.len(), d));
        for (b, st) in states.iter().enumerate() {
            let mut col = 0;
            for obs in &st.window {
                let powers = match obs {
                    Observation::Power(p) => p,
                    Observation::Image(_) => {
                        return Err(Error::ContractViolation(
                            "power network fed an image observation".into(),
                        ))
                    }
                };
                if powers.len() != a.num_bs {
                    return Err(Error::ContractViolation(format!(
                        "{} powers per epoch != num_bs {}",
                        powers.len(),
                        a.num_bs
                    )));
                }
                for &p in powers {
                    x[[b, col]] = (p - mean) / std;
                    col += 1;
                }
            }
            x[[b, col + st.serving_bs - 1]] = 1.0;
            col += a.num_bs;
            x[[b, col]] = st.disruption_left as f64 / (a.c_levels.max(2) - 1) as f64;
        }
        let mut a1 = x.dot(self.params.expect("fc1.w"));
        a1 += self.params.expect("fc1.b");
        let mask1 = relu_forward(&mut a1);
        let mut e = a1.dot(self.params.expect("fc2.w"));
        e += self.params.expect("fc2.b");
        let mask_e = relu_forward(&mut e);
        let head_rows = self.head_rows_for(states)?;
        let q = self.apply_heads(&e, &head_rows);
        Ok(ForwardPass {
            q,
            cache: Cache::Power(PowerCache {
                x,
                mask1,
                a1,
                mask_e,
                embed: e,
                head_rows,
            }),
        })
    }

    /// Gradients of a scalar loss w.r.t. all parameters, given `dq` =
    /// dL/dQ with the same shape as the forward Q matrix.
    pub fn backward(&self, fwd: &ForwardPass, dq: &Array2<f64>) -> Result<ParamSet> {
        if dq.raw_dim() != fwd.q.raw_dim() {
            return Err(Error::ContractViolation(format!(
                "dq shape {:?} != q shape {:?}",
                dq.shape(),
                fwd.q.shape()
            )));
        }
        let mut grads = self.params.zeros_like();
        let (embed, mask_e, head_rows) = match &fwd.cache {
            Cache::Image(c) => (&c.embed, &c.mask_e, &c.head_rows),
            Cache::Power(c) => (&c.embed, &c.mask_e, &c.head_rows),
        };
        // Heads and embedding gradient.
        let heads = self.params.expect("heads");
        let actions = self.num_actions();
        let mut de = Array2::zeros(embed.raw_dim());
        {
            let dheads = grads.expect_mut("heads");
            for (b, &row0) in head_rows.iter().enumerate() {
                for a in 0..actions {
                    let g = dq[[b, a]];
                    if g == 0.0 {
                        continue;
                    }
                    let mut hrow = dheads.row_mut(row0 + a);
                    hrow += &embed.row(b).mapv(|v| v * g);
                    let mut erow = de.row_mut(b);
                    erow += &heads.row(row0 + a).mapv(|v| v * g);
                }
            }
        }
        relu_backward(&mut de, mask_e);
        match &fwd.cache {
            Cache::Image(c) => self.backward_image(c, de, &mut grads),
            Cache::Power(c) => self.backward_power(c, de, &mut grads),
        }
        Ok(grads)
    }

    fn backward_image(&self, c: &ImageCache, de: Array2<f64>, grads: &mut ParamSet) {
        let a = match &self.arch {
            NetArch::Image(a) => a,
            NetArch::Power(_) => unreachable!("cache variant matches arch"),
        };
        let hd = c.lstm.last_hidden();
        grads
            .expect_mut("dense.w")
            .assign(&hd.t().dot(&de));
        grads
            .expect_mut("dense.b")
            .assign(&de.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dh = de.dot(&self.params.expect("dense.w").t());

        let lg = lstm_backward(
            &c.xs,
            &self.params.expect("lstm.wx").view(),
            &self.params.expect("lstm.wh").view(),
            &c.lstm,
            &dh,
        );
        grads.expect_mut("lstm.wx").assign(&lg.dwx);
        grads.expect_mut("lstm.wh").assign(&lg.dwh);
        grads.expect_mut("lstm.b").assign(&lg.db);

        let (g1, g2) = (a.geo1(), a.geo2());
        let (p1, p2) = (g1.out_positions(), g2.out_positions());
        let (batch, steps) = (lg.dxs[0].nrows(), a.window);
        let n_images = batch * steps;

        // Un-flatten, un-pool, and mask back to conv2 pre-activations.
        let mut da2 = Array2::zeros((n_images * p2, a.conv2.filters));
        for i in 0..n_images {
            let (b, t) = (i / steps, i % steps);
            let dfeat = lg.dxs[t].row(b);
            if a.pool > 1 {
                let rows = dfeat
                    .to_shape(((g2.out_h() / a.pool) * (g2.out_w() / a.pool), a.conv2.filters))
                    .expect("feature length matches pooled grid");
                let din = maxpool_backward(&rows.view(), &c.pool_args[i], p2);
                da2.slice_mut(s![i * p2..(i + 1) * p2, ..]).assign(&din);
            } else {
                let rows = dfeat
                    .to_shape((p2, a.conv2.filters))
                    .expect("feature length matches conv2 grid");
                da2.slice_mut(s![i * p2..(i + 1) * p2, ..]).assign(&rows);
            }
        }
        relu_backward(&mut da2, &c.mask2);
        grads.expect_mut("conv2.w").assign(&c.cols2.t().dot(&da2));
        grads
            .expect_mut("conv2.b")
            .assign(&da2.sum_axis(Axis(0)).insert_axis(Axis(0)));

        // Through im2col back onto conv1 activations.
        let dcols2 = da2.dot(&self.params.expect("conv2.w").t());
        let mut da1 = Array2::zeros((n_images * p1, a.conv1.filters));
        let mut chan_major = vec![0.0f64; a.conv1.filters * p1];
        for i in 0..n_images {
            chan_major.iter_mut().for_each(|v| *v = 0.0);
            col2im(
                &dcols2.slice(s![i * p2..(i + 1) * p2, ..]),
                &g2,
                &mut chan_major,
            );
            let mut chunk = da1.slice_mut(s![i * p1..(i + 1) * p1, ..]);
            for ch in 0..a.conv1.filters {
                for pos in 0..p1 {
                    chunk[[pos, ch]] = chan_major[ch * p1 + pos];
                }
            }
        }
        relu_backward(&mut da1, &c.mask1);
        grads.expect_mut("conv1.w").assign(&c.cols1.t().dot(&da1));
        grads
            .expect_mut("conv1.b")
            .assign(&da1.sum_axis(Axis(0)).insert_axis(Axis(0)));
    }

    fn backward_power(&self, c: &PowerCache, de: Array2<f64>, grads: &mut ParamSet) {
        grads.expect_mut("fc2.w").assign(&c.a1.t().dot(&de));
        grads
            .expect_mut("fc2.b")
            .assign(&de.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let mut da1 = de.dot(&self.params.expect("fc2.w").t());
        relu_backward(&mut da1, &c.mask1);
        grads.expect_mut("fc1.w").assign(&c.x.t().dot(&da1));
        grads
            .expect_mut("fc1.b")
            .assign(&da1.sum_axis(Axis(0)).insert_axis(Axis(0)));
    }
}

/// Mean-squared TD loss over selected actions and its parameter gradients.
///
/// `actions` are 1-based; `targets` are the regression targets for the
/// chosen action of each state.
pub fn mse_loss_and_grads(
    net: &QNetwork,
    states: &[&MdpState],
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, ParamSet)> {
    if states.len() != actions.len() || states.len() != targets.len() {
        return Err(Error::ContractViolation(format!(
            "batch sizes differ: {} states, {} actions, {} targets",
            states.len(),
            actions.len(),
            targets.len()
        )));
    }
    let fwd = net.forward(states)?;
    let batch = states.len() as f64;
    let mut loss = 0.0;
    let mut dq = Array2::zeros(fwd.q.raw_dim());
    for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        if a == 0 || a > net.num_actions() {
            return Err(Error::ContractViolation(format!(
                "action {a} out of range 1..={}",
                net.num_actions()
            )));
        }
        let err = fwd.q[[b, a - 1]] - y;
        loss += err * err / batch;
        dq[[b, a - 1]] = 2.0 * err / batch;
    }
    let grads = net.backward(&fwd, &dq)?;
    Ok((loss, grads))
}

/// One RMSProp step on the mean-squared TD loss. Returns the pre-update
/// loss; a non-finite loss aborts with [`Error::TrainingDiverged`] before
/// touching the parameters.
pub fn train_step(
    net: &mut QNetwork,
    opt: &mut RmsProp,
    states: &[&MdpState],
    actions: &[usize],
    targets: &[f64],
) -> Result<f64> {
    let (loss, grads) = mse_loss_and_grads(net, states, actions, targets)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::TrainingDiverged { batch_index: 0 });
    }
    opt.step(&mut net.params, &grads)?;
    Ok(loss)
}

/// Compares analytic gradients against central finite differences on up to
/// `samples` randomly chosen trainable parameters. Returns the largest
/// relative error observed.
pub fn grad_check<R: Rng>(
    net: &QNetwork,
    states: &[&MdpState],
    actions: &[usize],
    targets: &[f64],
    samples: usize,
    eps: f64,
    rng: &mut R,
) -> Result<f64> {
    let (_, analytic) = mse_loss_and_grads(net, states, actions, targets)?;
    // Enumerate trainable scalar coordinates as (segment index, flat index).
    let mut coords = Vec::new();
    for (si, seg) in net.params.segments().iter().enumerate() {
        if seg.trainable {
            for k in 0..seg.values.len() {
                coords.push((si, k));
            }
        }
    }
    // Sample without replacement via partial shuffle.
    let n = samples.min(coords.len());
    for i in 0..n {
        let j = rng.gen_range(i..coords.len());
        coords.swap(i, j);
    }
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for &(si, k) in &coords[..n] {
        let orig = probe.params.segments()[si].values.as_slice().unwrap()[k];
        let mut loss_at = |v: f64| -> Result<f64> {
            probe.params.segments_mut()[si].values.as_slice_mut().unwrap()[k] = v;
            let fwd = probe.forward(states)?;
            let batch = states.len() as f64;
            let mut loss = 0.0;
            for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
                let err = fwd.q[[b, a - 1]] - y;
                loss += err * err / batch;
            }
            Ok(loss)
        };
        let up = loss_at(orig + eps)?;
        let down = loss_at(orig - eps)?;
        probe.params.segments_mut()[si].values.as_slice_mut().unwrap()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.segments()[si].values.as_slice().unwrap()[k];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(((a - numeric) / denom).abs());
    }
    Ok(worst)
}
