//! Tape-based reverse-mode differentiation. Nodes are appended in evaluation
//! order, so a reverse sweep over the tape is a valid topological order.

use std::collections::HashMap;

use super::{NnError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample2x(Var),
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        istd: Vec<f64>,
    },
    SoftArgmax {
        x: Var,
        probs: Vec<f64>,
    },
    GaussianMaps {
        kp: Var,
        sigma: f64,
    },
    ScaleChannels(Var, Var),
    ConcatChannels(Vec<Var>),
    SpatialDiff(Var, usize),
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    Mse(Var, Var),
    BceWithLogits(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(..) => "upsample2x",
            Op::ChannelNorm { .. } => "channel_norm",
            Op::SoftArgmax { .. } => "spatial_softargmax",
            Op::GaussianMaps { .. } => "gaussian_maps",
            Op::ScaleChannels(..) => "scale_channels",
            Op::ConcatChannels(..) => "concat_channels",
            Op::SpatialDiff(..) => "spatial_diff",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumSq(..) => "sum_sq",
            Op::Mse(..) => "mse",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// One forward evaluation plus its gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    nonfinite: Option<&'static str>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Source taps for bilinear 2× upsampling (half-pixel centres, edge clamp).
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let f = src - i0 as f64;
            (i0, i1, 1.0 - f, f)
        })
        .collect()
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(op.name());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Errors naming the first op that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), NnError> {
        match self.nonfinite {
            Some(op) => Err(NnError::NonFinite { op: op.to_string() }),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf holding the current value of a stored parameter; repeated calls
    /// with the same name share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(self.push(Tensor::new(&[m, n], out), Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        self.same_shape(op.name(), a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a[m, n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NnError> {
        let n = self.value(a).cols();
        if self.value(bias).len() != n {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", self.shape(a), self.shape(bias)),
            ));
        }
        let bd = self.data(bias).to_vec();
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bd).map(|(x, b)| x + b).collect::<Vec<_>>())
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data), Op::AddRow(a, bias)))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, data), op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    /// Concatenates 2D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let m = self.shape(parts[0])[0];
        if parts.iter().any(|&p| self.shape(p).len() != 2 || self.shape(p)[0] != m) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p)[1]).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(&[m, total], out), Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks 2D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let n = self.shape(parts[0])[1];
        if parts.iter().any(|&p| self.shape(p).len() != 2 || self.shape(p)[1] != n) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let m = out.len() / n;
        Ok(self.push(Tensor::new(&[m, n], out), Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end` of a 2D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(shape_err("slice_cols", format!("{s:?}[{start}..{end}]")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(s[0] * w);
        for i in 0..s[0] {
            out.extend_from_slice(&self.data(a)[i * s[1] + start..i * s[1] + end]);
        }
        Ok(self.push(Tensor::new(&[s[0], w], out), Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || idx.iter().any(|&i| i >= s[0]) {
            return Err(shape_err("gather_rows", format!("{s:?} with index out of range")));
        }
        let n = s[1];
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&self.data(a)[i * n..(i + 1) * n]);
        }
        Ok(self.push(
            Tensor::new(&[idx.len(), n], out),
            Op::GatherRows(a, idx.to_vec()),
        ))
    }

    /// `out[idx[i]] += a[i]` into `rows` zero-initialized rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var, NnError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(shape_err("scatter_add_rows", format!("{s:?} into {rows} rows")));
        }
        let n = s[1];
        let mut out = vec![0.0; rows * n];
        for (r, &i) in idx.iter().enumerate() {
            let src = &self.nodes[a.0].value.data[r * n..(r + 1) * n];
            for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(src) {
                *o += v;
            }
        }
        Ok(self.push(
            Tensor::new(&[rows, n], out),
            Op::ScatterAddRows(a, idx.to_vec()),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let data = self.data(a).to_vec();
        Ok(self.push(Tensor::new(shape, data), Op::Reshape(a)))
    }

    /// Cross-correlation of `x[B,C,H,W]` with `w[O,C,KH,KW]`, optional bias
    /// `[O]`, square stride and zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NnError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let bad = || shape_err("conv2d", format!("input {sx:?}, kernel {sw:?}"));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            return Err(bad());
        }
        if let Some(b) = b {
            if self.value(b).len() != sw[0] {
                return Err(bad());
            }
        }
        let (bn, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        let oh = conv_out(h, kh, stride, pad).ok_or_else(bad)?;
        let ow = conv_out(wd, kw, stride, pad).ok_or_else(bad)?;
        let geo = ConvGeometry {
            bn,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        };
        let mut out = vec![0.0; bn * o * oh * ow];
        geo.forward(self.data(x), self.data(w), &mut out);
        if let Some(b) = b {
            let bd = self.data(b);
            for (i, chunk) in out.chunks_mut(oh * ow).enumerate() {
                let bv = bd[i % o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok(self.push(
            Tensor::new(&[bn, o, oh, ow], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Bilinear 2× upsampling of `[B,C,H,W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("upsample2x", format!("{s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let (ty, tx) = (upsample_taps(h), upsample_taps(w));
        let src = self.data(x);
        let mut out = vec![0.0; s[0] * s[1] * 4 * h * w];
        for (plane, dst) in src.chunks(h * w).zip(out.chunks_mut(4 * h * w)) {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    dst[oy * 2 * w + ox] = wy0 * (wx0 * plane[y0 * w + x0] + wx1 * plane[y0 * w + x1])
                        + wy1 * (wx0 * plane[y1 * w + x0] + wx1 * plane[y1 * w + x1]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out),
            Op::Upsample2x(x),
        ))
    }

    /// `gamma_c · (x − mean_c) · istd_c + beta_c` with fixed statistics.
    pub fn channel_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        istd: &[f64],
    ) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        let c = s.get(1).copied().unwrap_or(0);
        if s.len() != 4
            || self.value(gamma).len() != c
            || self.value(beta).len() != c
            || mean.len() != c
            || istd.len() != c
        {
            return Err(shape_err("channel_norm", format!("{s:?}")));
        }
        let hw = s[2] * s[3];
        let (g, b) = (self.data(gamma).to_vec(), self.data(beta).to_vec());
        let data = self
            .data(x)
            .chunks(hw)
            .enumerate()
            .flat_map(|(i, plane)| {
                let ch = i % c;
                plane
                    .iter()
                    .map(|&v| g[ch] * (v - mean[ch]) * istd[ch] + b[ch])
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(self.push(
            Tensor::new(&s, data),
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                istd: istd.to_vec(),
            },
        ))
    }

    /// Softmax over each `H×W` plane of `[B,K,H,W]`, then the expected pixel
    /// centre `(x, y)`; output `[B,K,2]` in [0,1].
    pub fn spatial_softargmax(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("spatial_softargmax", format!("{s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let mut probs = Vec::with_capacity(self.value(x).len());
        let mut out = Vec::with_capacity(s[0] * s[1] * 2);
        for plane in self.data(x).chunks(h * w) {
            let m = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut z = 0.0;
            for &v in plane {
                let e = (v - m).exp();
                z += e;
                probs.push(e);
            }
            let (mut ex, mut ey) = (0.0, 0.0);
            for (i, p) in probs[start..].iter_mut().enumerate() {
                *p /= z;
                ex += *p * ((i % w) as f64 + 0.5) / w as f64;
                ey += *p * ((i / w) as f64 + 0.5) / h as f64;
            }
            out.push(ex);
            out.push(ey);
        }
        Ok(self.push(
            Tensor::new(&[s[0], s[1], 2], out),
            Op::SoftArgmax { x, probs },
        ))
    }

    /// `exp(−‖p − k‖² / σ²)` maps `[B,K,H,W]` from keypoints `[B,K,2]`.
    pub fn gaussian_maps(&mut self, kp: Var, sigma: f64, h: usize, w: usize) -> Result<Var, NnError> {
        let s = self.shape(kp).to_vec();
        if s.len() != 3 || s[2] != 2 {
            return Err(shape_err("gaussian_maps", format!("{s:?}")));
        }
        let s2 = sigma * sigma;
        let mut out = Vec::with_capacity(s[0] * s[1] * h * w);
        for k in self.data(kp).chunks(2) {
            for r in 0..h {
                let dy = (r as f64 + 0.5) / h as f64 - k[1];
                for c in 0..w {
                    let dx = (c as f64 + 0.5) / w as f64 - k[0];
                    out.push((-(dx * dx + dy * dy) / s2).exp());
                }
            }
        }
        Ok(self.push(
            Tensor::new(&[s[0], s[1], h, w], out),
            Op::GaussianMaps { kp, sigma },
        ))
    }

    /// Multiplies each `[H,W]` plane of `x[B,C,H,W]` by `s[B,C]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || self.value(s).len() != sx[0] * sx[1] {
            return Err(shape_err(
                "scale_channels",
                format!("{sx:?} by {:?}", self.shape(s)),
            ));
        }
        let hw = sx[2] * sx[3];
        let sd = self.data(s).to_vec();
        let data = self
            .data(x)
            .chunks(hw)
            .zip(&sd)
            .flat_map(|(plane, &f)| plane.iter().map(|v| v * f).collect::<Vec<_>>())
            .collect();
        Ok(self.push(Tensor::new(&sx, data), Op::ScaleChannels(x, s)))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let s0 = self.shape(parts[0]).to_vec();
        if parts.iter().any(|&p| {
            let s = self.shape(p);
            s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]
        }) {
            return Err(shape_err("concat_channels", "shapes differ".into()));
        }
        let hw = s0[2] * s0[3];
        let cs: Vec<usize> = parts.iter().map(|&p| self.shape(p)[1]).collect();
        let total: usize = cs.iter().sum();
        let mut out = Vec::with_capacity(s0[0] * total * hw);
        for b in 0..s0[0] {
            for (&p, &c) in parts.iter().zip(&cs) {
                out.extend_from_slice(&self.data(p)[b * c * hw..(b + 1) * c * hw]);
            }
        }
        Ok(self.push(
            Tensor::new(&[s0[0], total, s0[2], s0[3]], out),
            Op::ConcatChannels(parts.to_vec()),
        ))
    }

    /// Forward differences along the last (`axis = 3`) or second to last
    /// (`axis = 2`) axis of a 4D tensor.
    pub fn spatial_diff(&mut self, x: Var, axis: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || !(axis == 2 || axis == 3) || s[axis] < 2 {
            return Err(shape_err("spatial_diff", format!("{s:?} axis {axis}")));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = if axis == 3 { (h, w - 1) } else { (h - 1, w) };
        let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
        for plane in self.data(x).chunks(h * w) {
            for r in 0..oh {
                for c in 0..ow {
                    let next = if axis == 3 { r * w + c + 1 } else { (r + 1) * w + c };
                    out.push(plane[next] - plane[r * w + c]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(&[s[0], s[1], oh, ow], out),
            Op::SpatialDiff(x, axis),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.data(a).iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let v = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(v), Op::Mean(a))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = self.data(a).iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(v), Op::SumSq(a))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mse", a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let v = ad.iter().zip(bd).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ad.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b)))
    }

    /// Mean binary cross-entropy of logits against fixed 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NnError> {
        if self.value(logits).len() != targets.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{:?} vs {} targets", self.shape(logits), targets.len()),
            ));
        }
        let n = targets.len() as f64;
        let v = self
            .data(logits)
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(v),
            Op::BceWithLogits(logits, targets.to_vec()),
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        self.check_finite()?;
        if self.value(loss).len() != 1 {
            return Err(NnError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                op: "backward".into(),
            });
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter leaf touched by the forward pass.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.param_order
            .iter()
            .map(|(name, v)| {
                let g = self
                    .grad(*v)
                    .map_or_else(|| vec![0.0; self.value(*v).len()], <[f64]>::to_vec);
                (name.clone(), g)
            })
            .collect()
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value.data;
        let val = |v: Var| &self.nodes[v.0].value;
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&val(*a).shape, &val(*b).shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (&val(*a).data, &val(*b).data);
                let ga = acc!(*a);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                let gb = acc!(*b);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av = ad[r * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc!(*a), g);
                add_into(acc!(*b), g);
            }
            Op::Sub(a, b) => {
                add_into(acc!(*a), g);
                let gb = acc!(*b);
                gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data.clone(), val(*b).data.clone());
                let ga = acc!(*a);
                for ((o, gv), bv) in ga.iter_mut().zip(g).zip(&bd) {
                    *o += gv * bv;
                }
                let gb = acc!(*b);
                for ((o, gv), av) in gb.iter_mut().zip(g).zip(&ad) {
                    *o += gv * av;
                }
            }
            Op::AddRow(a, b) => {
                add_into(acc!(*a), g);
                let gb = acc!(*b);
                let n = gb.len();
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::Scale(a, s) => {
                let ga = acc!(*a);
                ga.iter_mut().zip(g).for_each(|(o, v)| *o += s * v);
            }
            Op::AddScalar(a) | Op::Reshape(a) => add_into(acc!(*a), g),
            Op::Relu(a) => {
                let ga = acc!(*a);
                for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    if *yv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc!(*a);
                for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(a) => {
                let ga = acc!(*a);
                for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::Softplus(a) => {
                let xd = &val(*a).data;
                let ga = acc!(*a);
                for ((o, gv), xv) in ga.iter_mut().zip(g).zip(xd) {
                    *o += gv * sigmoid(*xv);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).shape[1];
                    let gp = acc!(p);
                    for (r, row) in g.chunks(total).enumerate() {
                        add_into(&mut gp[r * w..(r + 1) * w], &row[off..off + w]);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    add_into(acc!(p), &g[off..off + len]);
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                let n = val(*a).shape[1];
                let w = node.value.cols();
                let ga = acc!(*a);
                for (r, row) in g.chunks(w).enumerate() {
                    add_into(&mut ga[r * n + start..r * n + start + w], row);
                }
            }
            Op::GatherRows(a, idx) => {
                let n = node.value.cols();
                let ga = acc!(*a);
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut ga[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::ScatterAddRows(a, idx) => {
                let n = node.value.cols();
                let ga = acc!(*a);
                for (r, &dst) in idx.iter().enumerate() {
                    add_into(&mut ga[r * n..(r + 1) * n], &g[dst * n..(dst + 1) * n]);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (sx, sw) = (&val(*x).shape, &val(*w).shape);
                let s = &node.value.shape;
                let geo = ConvGeometry {
                    bn: sx[0],
                    c: sx[1],
                    h: sx[2],
                    w: sx[3],
                    o: sw[0],
                    kh: sw[2],
                    kw: sw[3],
                    oh: s[2],
                    ow: s[3],
                    stride: *stride,
                    pad: *pad,
                };
                let (xd, wd) = (&val(*x).data, &val(*w).data);
                geo.backward_input(g, wd, acc!(*x));
                geo.backward_kernel(g, xd, acc!(*w));
                if let Some(b) = b {
                    let gb = acc!(*b);
                    let plane = geo.oh * geo.ow;
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        gb[i % geo.o] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Upsample2x(x) => {
                let s = &val(*x).shape;
                let (h, w) = (s[2], s[3]);
                let (ty, tx) = (upsample_taps(h), upsample_taps(w));
                let gx = acc!(*x);
                for (gp, dst) in g.chunks(4 * h * w).zip(gx.chunks_mut(h * w)) {
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let v = gp[oy * 2 * w + ox];
                            dst[y0 * w + x0] += v * wy0 * wx0;
                            dst[y0 * w + x1] += v * wy0 * wx1;
                            dst[y1 * w + x0] += v * wy1 * wx0;
                            dst[y1 * w + x1] += v * wy1 * wx1;
                        }
                    }
                }
            }
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                mean,
                istd,
            } => {
                let s = &val(*x).shape;
                let (c, hw) = (s[1], s[2] * s[3]);
                let xd = &val(*x).data;
                let gd = val(*gamma).data.clone();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let gx = acc!(*x);
                for (i, (gp, xp)) in g.chunks(hw).zip(xd.chunks(hw)).enumerate() {
                    let ch = i % c;
                    let k = gd[ch] * istd[ch];
                    for ((o, gv), xv) in gx[i * hw..(i + 1) * hw].iter_mut().zip(gp).zip(xp) {
                        *o += gv * k;
                        dgamma[ch] += gv * (xv - mean[ch]) * istd[ch];
                        dbeta[ch] += gv;
                    }
                }
                add_into(acc!(*gamma), &dgamma);
                add_into(acc!(*beta), &dbeta);
            }
            Op::SoftArgmax { x, probs } => {
                let s = &val(*x).shape;
                let (h, w) = (s[2], s[3]);
                let gx = acc!(*x);
                for (k, (pp, dst)) in probs.chunks(h * w).zip(gx.chunks_mut(h * w)).enumerate() {
                    let (ex, ey) = (y[2 * k], y[2 * k + 1]);
                    let (gxv, gyv) = (g[2 * k], g[2 * k + 1]);
                    for (i, (p, o)) in pp.iter().zip(dst.iter_mut()).enumerate() {
                        let cx = ((i % w) as f64 + 0.5) / w as f64;
                        let cy = ((i / w) as f64 + 0.5) / h as f64;
                        *o += p * (gxv * (cx - ex) + gyv * (cy - ey));
                    }
                }
            }
            Op::GaussianMaps { kp, sigma } => {
                let s = &node.value.shape;
                let (h, w) = (s[2], s[3]);
                let kd = val(*kp).data.clone();
                let s2 = sigma * sigma;
                let gk = acc!(*kp);
                for (k, (gp, yp)) in g.chunks(h * w).zip(y.chunks(h * w)).enumerate() {
                    let (kx, ky) = (kd[2 * k], kd[2 * k + 1]);
                    let (mut dx, mut dy) = (0.0, 0.0);
                    for r in 0..h {
                        let cy = (r as f64 + 0.5) / h as f64;
                        for c in 0..w {
                            let cx = (c as f64 + 0.5) / w as f64;
                            let t = gp[r * w + c] * yp[r * w + c] * 2.0 / s2;
                            dx += t * (cx - kx);
                            dy += t * (cy - ky);
                        }
                    }
                    gk[2 * k] += dx;
                    gk[2 * k + 1] += dy;
                }
            }
            Op::ScaleChannels(x, s) => {
                let sx = &val(*x).shape;
                let hw = sx[2] * sx[3];
                let (xd, sd) = (val(*x).data.clone(), val(*s).data.clone());
                let gx = acc!(*x);
                for (i, f) in sd.iter().enumerate() {
                    for (o, gv) in gx[i * hw..(i + 1) * hw].iter_mut().zip(&g[i * hw..(i + 1) * hw]) {
                        *o += gv * f;
                    }
                }
                let gs = acc!(*s);
                for (i, o) in gs.iter_mut().enumerate() {
                    *o += g[i * hw..(i + 1) * hw]
                        .iter()
                        .zip(&xd[i * hw..(i + 1) * hw])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
            Op::ConcatChannels(parts) => {
                let s = &node.value.shape;
                let (total, hw) = (s[1], s[2] * s[3]);
                let mut off = 0;
                for &p in parts {
                    let c = val(p).shape[1];
                    let gp = acc!(p);
                    for b in 0..s[0] {
                        let src = &g[(b * total + off) * hw..(b * total + off + c) * hw];
                        add_into(&mut gp[b * c * hw..(b + 1) * c * hw], src);
                    }
                    off += c;
                }
            }
            Op::SpatialDiff(x, axis) => {
                let s = &val(*x).shape;
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (node.value.shape[2], node.value.shape[3]);
                let gx = acc!(*x);
                for (gp, dst) in g.chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                    for r in 0..oh {
                        for c in 0..ow {
                            let v = gp[r * ow + c];
                            let next = if *axis == 3 { r * w + c + 1 } else { (r + 1) * w + c };
                            dst[next] += v;
                            dst[r * w + c] -= v;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let ga = acc!(*a);
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean(a) => {
                let ga = acc!(*a);
                let f = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|o| *o += f);
            }
            Op::SumSq(a) => {
                let ad = &val(*a).data;
                let ga = acc!(*a);
                for (o, v) in ga.iter_mut().zip(ad) {
                    *o += 2.0 * v * g[0];
                }
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (&val(*a).data, &val(*b).data);
                let f = 2.0 * g[0] / ad.len() as f64;
                let diff: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| f * (x - y)).collect();
                add_into(acc!(*a), &diff);
                let gb = acc!(*b);
                gb.iter_mut().zip(&diff).for_each(|(o, d)| *o -= d);
            }
            Op::BceWithLogits(a, t) => {
                let ad = &val(*a).data;
                let f = g[0] / t.len() as f64;
                let ga = acc!(*a);
                for ((o, x), tv) in ga.iter_mut().zip(ad).zip(t) {
                    *o += f * (sigmoid(*x) - tv);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

struct ConvGeometry {
    bn: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    /// Output columns `ox` whose input column `ox*stride + k - pad` is in
    /// range, as a half-open interval.
    fn valid(&self, k: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let k = k as isize;
        // ox*s + k - p >= 0  and  ox*s + k - p < n_in
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = ((n_in as isize - 1 - k + p).div_euclid(s) + 1).clamp(0, n_out as isize);
        (lo.min(n_out as isize) as usize, hi.max(lo) as usize)
    }

    fn forward(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (hw, ohw) = (self.h * self.w, self.oh * self.ow);
        for b in 0..self.bn {
            for o in 0..self.o {
                let dst = &mut out[(b * self.o + o) * ohw..(b * self.o + o + 1) * ohw];
                for c in 0..self.c {
                    let src = &x[(b * self.c + c) * hw..(b * self.c + c + 1) * hw];
                    for ky in 0..self.kh {
                        let (y0, y1) = self.valid(ky, self.h, self.oh);
                        for kx in 0..self.kw {
                            let wv = w[((o * self.c + c) * self.kh + ky) * self.kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let (x0, x1) = self.valid(kx, self.w, self.ow);
                            for oy in y0..y1 {
                                let iy = oy * self.stride + ky - self.pad;
                                let row = &src[iy * self.w..(iy + 1) * self.w];
                                let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                                if self.stride == 1 {
                                    let ix0 = x0 + kx - self.pad;
                                    for (d, s) in drow[x0..x1].iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                                        *d += wv * s;
                                    }
                                } else {
                                    for ox in x0..x1 {
                                        drow[ox] += wv * row[ox * self.stride + kx - self.pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_input(&self, g: &[f64], w: &[f64], gx: &mut [f64]) {
        let (hw, ohw) = (self.h * self.w, self.oh * self.ow);
        for b in 0..self.bn {
            for o in 0..self.o {
                let gp = &g[(b * self.o + o) * ohw..(b * self.o + o + 1) * ohw];
                for c in 0..self.c {
                    let dst = &mut gx[(b * self.c + c) * hw..(b * self.c + c + 1) * hw];
                    for ky in 0..self.kh {
                        let (y0, y1) = self.valid(ky, self.h, self.oh);
                        for kx in 0..self.kw {
                            let wv = w[((o * self.c + c) * self.kh + ky) * self.kw + kx];
                            let (x0, x1) = self.valid(kx, self.w, self.ow);
                            for oy in y0..y1 {
                                let iy = oy * self.stride + ky - self.pad;
                                let grow = &gp[oy * self.ow..(oy + 1) * self.ow];
                                let drow = &mut dst[iy * self.w..(iy + 1) * self.w];
                                for ox in x0..x1 {
                                    drow[ox * self.stride + kx - self.pad] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel(&self, g: &[f64], x: &[f64], gw: &mut [f64]) {
        let (hw, ohw) = (self.h * self.w, self.oh * self.ow);
        for b in 0..self.bn {
            for o in 0..self.o {
                let gp = &g[(b * self.o + o) * ohw..(b * self.o + o + 1) * ohw];
                for c in 0..self.c {
                    let src = &x[(b * self.c + c) * hw..(b * self.c + c + 1) * hw];
                    for ky in 0..self.kh {
                        let (y0, y1) = self.valid(ky, self.h, self.oh);
                        for kx in 0..self.kw {
                            let (x0, x1) = self.valid(kx, self.w, self.ow);
                            let mut acc = 0.0;
                            for oy in y0..y1 {
                                let iy = oy * self.stride + ky - self.pad;
                                let row = &src[iy * self.w..(iy + 1) * self.w];
                                let grow = &gp[oy * self.ow..(oy + 1) * self.ow];
                                for ox in x0..x1 {
                                    acc += grow[ox] * row[ox * self.stride + kx - self.pad];
                                }
                            }
                            gw[((o * self.c + c) * self.kh + ky) * self.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
}
