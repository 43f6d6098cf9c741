//! Neural building blocks on top of [`crate::tensor`].
//!
//! Layers are descriptors: they register their weights in a
//! [`ParameterSet`] at construction and read them back from a [`Bound`]
//! binding on each forward pass. All activations are row-major with the batch
//! on axis 0.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{xavier_uniform, Bound, ConvSpec, Graph, ParameterSet, Tensor, Var};

fn check_width(op: &'static str, g: &Graph, x: Var, want: usize) -> Result<usize> {
    match *g.shape(x) {
        [rows, w] if w == want => Ok(rows),
        ref s => Err(Error::shape(op, format!("expected [batch, {want}] input, got {s:?}"))),
    }
}

/// Affine map `x·W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Dense {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(set: &mut ParameterSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = format!("{name}.w");
        let b = format!("{name}.b");
        set.insert(&w, xavier_uniform(vec![in_dim, out_dim], in_dim, out_dim, rng))?;
        set.insert(&b, Tensor::zeros(vec![out_dim]))?;
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    pub fn bias_name(&self) -> &str {
        &self.b
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        check_width("dense", g, x, self.in_dim)?;
        let xw = g.matmul(x, p.get(&self.w)?)?;
        g.add(xw, p.get(&self.b)?)
    }
}

/// `tanh(W x + b)`. One instance per input modality is shared by every
/// position that embeds that modality.
#[derive(Clone, Debug)]
pub struct Embedding {
    dense: Dense,
}

impl Embedding {
    pub fn new(set: &mut ParameterSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self { dense: Dense::new(set, name, in_dim, out_dim, rng)? })
    }

    pub fn in_dim(&self) -> usize {
        self.dense.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.dense.out_dim
    }

    pub fn weight_name(&self) -> &str {
        self.dense.weight_name()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let z = self.dense.forward(g, p, x)?;
        Ok(g.tanh(z))
    }

    /// Embedding of one-hot inputs given by their hot index: the product with
    /// a one-hot vector selects a single row of `W`.
    pub fn lookup(&self, g: &mut Graph, p: &Bound, hot: &[usize]) -> Result<Var> {
        if let Some(&bad) = hot.iter().find(|&&i| i >= self.dense.in_dim) {
            return Err(Error::shape("embedding", format!("one-hot index {bad} >= input dim {}", self.dense.in_dim)));
        }
        let rows = g.gather(p.get(&self.dense.w)?, hot)?;
        let z = g.add(rows, p.get(&self.dense.b)?)?;
        Ok(g.tanh(z))
    }
}

/// Gated recurrent unit:
/// `z = σ(x W_z + h U_z)`, `r = σ(x W_r + h U_r)`,
/// `ĥ = tanh(x W + (r ⊙ h) U)`, `h' = (1 − z) ⊙ h + z ⊙ ĥ`.
#[derive(Clone, Debug)]
pub struct Gru {
    names: [String; 6],
    pub input_size: usize,
    pub hidden_size: usize,
}

impl Gru {
    pub const PARTS: [&'static str; 6] = ["w_z", "u_z", "w_r", "u_r", "w", "u"];

    pub fn new(set: &mut ParameterSet, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let names = Self::PARTS.map(|part| format!("{name}.{part}"));
        for (i, n) in names.iter().enumerate() {
            let rows = if i % 2 == 0 { input_size } else { hidden_size };
            set.insert(n, xavier_uniform(vec![rows, hidden_size], rows, hidden_size, rng))?;
        }
        Ok(Self { names, input_size, hidden_size })
    }

    pub fn param_name(&self, part: &str) -> Option<&str> {
        Self::PARTS.iter().position(|p| *p == part).map(|i| self.names[i].as_str())
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let rows = check_width("gru", g, x, self.input_size)?;
        let h_rows = check_width("gru", g, h, self.hidden_size)?;
        if rows != h_rows {
            return Err(Error::shape("gru", format!("input batch {rows} vs hidden batch {h_rows}")));
        }
        let [wz, uz, wr, ur, w, u] = [0, 1, 2, 3, 4, 5].map(|i| p.get(&self.names[i]));
        let (wz, uz, wr, ur, w, u) = (wz?, uz?, wr?, ur?, w?, u?);

        let gate = |g: &mut Graph, wi: Var, ui: Var| -> Result<Var> {
            let a = g.matmul(x, wi)?;
            let b = g.matmul(h, ui)?;
            let s = g.add(a, b)?;
            Ok(g.sigmoid(s))
        };
        let z = gate(g, wz, uz)?;
        let r = gate(g, wr, ur)?;
        let rh = g.mul(r, h)?;
        let xw = g.matmul(x, w)?;
        let rhu = g.matmul(rh, u)?;
        let pre = g.add(xw, rhu)?;
        let cand = g.tanh(pre);
        let one = g.constant(Tensor::scalar(1.0));
        let keep = g.sub(one, z)?;
        let old = g.mul(keep, h)?;
        let new = g.mul(z, cand)?;
        g.add(old, new)
    }
}

/// Location-based attention: scores `exp(h_t W_α + b_α)` normalised over
/// the sequence, pooled as `Σ_t α_t h_t`.
#[derive(Clone, Debug)]
pub struct Attention {
    w: String,
    b: String,
    pub hidden_size: usize,
}

impl Attention {
    pub fn new(set: &mut ParameterSet, name: &str, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = format!("{name}.w");
        let b = format!("{name}.b");
        set.insert(&w, xavier_uniform(vec![hidden_size, 1], hidden_size, 1, rng))?;
        set.insert(&b, Tensor::zeros(vec![1]))?;
        Ok(Self { w, b, hidden_size })
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    /// Attention weights `[batch, T]`. `mask`, when given, is `[batch, T]`
    /// with 1 for real steps and 0 for padding; every row needs a real step.
    pub fn weights(&self, g: &mut Graph, p: &Bound, hiddens: &[Var], mask: Option<&Tensor>) -> Result<Var> {
        if hiddens.is_empty() {
            return Err(Error::Empty("attention sequence"));
        }
        let (w, b) = (p.get(&self.w)?, p.get(&self.b)?);
        let mut scores = Vec::with_capacity(hiddens.len());
        for &h in hiddens {
            check_width("attention", g, h, self.hidden_size)?;
            let s = g.matmul(h, w)?;
            scores.push(g.add(s, b)?);
        }
        let mut all = g.concat(&scores, 1)?;
        if let Some(mask) = mask {
            if mask.shape() != g.shape(all) {
                return Err(Error::shape("attention", format!("mask {:?} vs scores {:?}", mask.shape(), g.shape(all))));
            }
            let penalty = mask.data().iter().map(|&m| if m > 0.0 { 0.0 } else { f64::NEG_INFINITY }).collect();
            let penalty = g.constant(Tensor::new(mask.shape().to_vec(), penalty)?);
            all = g.add(all, penalty)?;
        }
        g.softmax(all)
    }

    pub fn pool(&self, g: &mut Graph, p: &Bound, hiddens: &[Var], mask: Option<&Tensor>) -> Result<Var> {
        let alpha = self.weights(g, p, hiddens, mask)?;
        let mut acc: Option<Var> = None;
        for (t, &h) in hiddens.iter().enumerate() {
            let a_t = g.slice(alpha, 1, t, 1)?;
            let term = g.mul(a_t, h)?;
            acc = Some(match acc {
                Some(prev) => g.add(prev, term)?,
                None => term,
            });
        }
        Ok(acc.expect("non-empty sequence"))
    }
}

/// One convolution layer of a page stack: `kh × kw` window, `channels` outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kh: usize,
    pub kw: usize,
    pub channels: usize,
}

/// Convolution stack over an `rows × cols × in_channels` page grid followed by
/// one dense layer to `out_dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PageConvConfig {
    pub rows: usize,
    pub cols: usize,
    pub in_channels: usize,
    pub layers: Vec<ConvLayerSpec>,
    pub out_dim: usize,
}

impl PageConvConfig {
    /// Two layers, 2×2 then 2×1 windows, 32 then 16 channels, dense to `out_dim`.
    pub fn standard(rows: usize, cols: usize, in_channels: usize, out_dim: usize) -> Self {
        Self {
            rows,
            cols,
            in_channels,
            layers: vec![
                ConvLayerSpec { kh: 2, kw: 2, channels: 32 },
                ConvLayerSpec { kh: 2, kw: 1, channels: 16 },
            ],
            out_dim,
        }
    }

    /// Spatial extent and channel count after every layer, input first.
    pub fn grid_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes = vec![(self.rows, self.cols, self.in_channels)];
        for l in &self.layers {
            let &(h, w, _) = shapes.last().expect("non-empty");
            let (Some(oh), Some(ow)) = (ConvSpec::UNIT.conv_out(h, l.kh), ConvSpec::UNIT.conv_out(w, l.kw)) else {
                return Err(Error::Config(format!("{}x{} window does not fit a {h}x{w} grid", l.kh, l.kw)));
            };
            shapes.push((oh, ow, l.channels));
        }
        Ok(shapes)
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let &(h, w, c) = self.grid_shapes()?.last().expect("non-empty");
        Ok(h * w * c)
    }
}

/// 2-D CNN summarising a page grid into a dense vector (tanh throughout).
#[derive(Clone, Debug)]
pub struct PageConv {
    config: PageConvConfig,
    kernels: Vec<(String, String)>,
    head: Dense,
}

impl PageConv {
    pub fn new(set: &mut ParameterSet, name: &str, config: PageConvConfig, rng: &mut impl Rng) -> Result<Self> {
        let shapes = config.grid_shapes()?;
        let mut kernels = Vec::new();
        for (i, l) in config.layers.iter().enumerate() {
            let c_in = shapes[i].2;
            let (k, b) = (format!("{name}.k{i}"), format!("{name}.kb{i}"));
            let fan = l.kh * l.kw;
            set.insert(&k, xavier_uniform(vec![l.kh, l.kw, c_in, l.channels], fan * c_in, fan * l.channels, rng))?;
            set.insert(&b, Tensor::zeros(vec![l.channels]))?;
            kernels.push((k, b));
        }
        let head = Dense::new(set, &format!("{name}.fc"), config.flat_dim()?, config.out_dim, rng)?;
        Ok(Self { config, kernels, head })
    }

    pub fn config(&self) -> &PageConvConfig {
        &self.config
    }

    pub fn kernel_name(&self, layer: usize) -> Option<&str> {
        self.kernels.get(layer).map(|(k, _)| k.as_str())
    }

    /// `[batch, rows, cols, in_channels]` pages to `[batch, out_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, pages: Var) -> Result<Var> {
        let c = &self.config;
        let batch = match *g.shape(pages) {
            [n, r, w, ch] if r == c.rows && w == c.cols && ch == c.in_channels => n,
            ref s => {
                return Err(Error::shape(
                    "page_conv",
                    format!("expected [batch, {}, {}, {}] pages, got {s:?}", c.rows, c.cols, c.in_channels),
                ))
            }
        };
        let mut x = pages;
        for (k, b) in &self.kernels {
            let y = g.conv2d(x, p.get(k)?, ConvSpec::UNIT)?;
            let y = g.add(y, p.get(b)?)?;
            x = g.tanh(y);
        }
        let flat = g.reshape(x, vec![batch, c.flat_dim()?])?;
        let out = self.head.forward(g, p, flat)?;
        Ok(g.tanh(out))
    }
}

/// Mirror of [`PageConv`]: dense layer, then transposed convolutions in
/// reverse order, restoring an `rows × cols × out_channels` grid.
#[derive(Clone, Debug)]
pub struct PageDeconv {
    conv: PageConvConfig,
    out_channels: usize,
    head: Dense,
    kernels: Vec<(String, String)>,
}

impl PageDeconv {
    /// `mirror` describes the forward convolution being inverted; its input
    /// channel count is replaced by `out_channels`.
    pub fn new(set: &mut ParameterSet, name: &str, mirror: &PageConvConfig, in_dim: usize, out_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let conv = PageConvConfig { in_channels: out_channels, out_dim: in_dim, ..mirror.clone() };
        let shapes = conv.grid_shapes()?;
        let head = Dense::new(set, &format!("{name}.fc"), in_dim, conv.flat_dim()?, rng)?;
        let mut kernels = Vec::new();
        for (i, l) in conv.layers.iter().enumerate().rev() {
            let c_out = shapes[i].2;
            let (k, b) = (format!("{name}.k{i}"), format!("{name}.kb{i}"));
            let fan = l.kh * l.kw;
            set.insert(&k, xavier_uniform(vec![l.kh, l.kw, c_out, l.channels], fan * l.channels, fan * c_out, rng))?;
            set.insert(&b, Tensor::zeros(vec![c_out]))?;
            kernels.push((k, b));
        }
        Ok(Self { conv, out_channels, head, kernels })
    }

    pub fn in_dim(&self) -> usize {
        self.head.in_dim
    }

    /// Output grid `(rows, cols, channels)`.
    pub fn out_shape(&self) -> (usize, usize, usize) {
        (self.conv.rows, self.conv.cols, self.out_channels)
    }

    /// `[batch, in_dim]` to `[batch, rows, cols, out_channels]`, tanh-bounded.
    pub fn forward(&self, g: &mut Graph, p: &Bound, s: Var) -> Result<Var> {
        let batch = check_width("page_deconv", g, s, self.head.in_dim)?;
        let shapes = self.conv.grid_shapes()?;
        let &(h, w, c) = shapes.last().expect("non-empty");
        let z = self.head.forward(g, p, s)?;
        let z = g.tanh(z);
        let mut x = g.reshape(z, vec![batch, h, w, c])?;
        for (k, b) in &self.kernels {
            let y = g.deconv2d(x, p.get(k)?, ConvSpec::UNIT)?;
            let y = g.add(y, p.get(b)?)?;
            x = g.tanh(y);
        }
        Ok(x)
    }
}
