use serde::{Deserialize, Serialize};

use super::{Graph, NnError, ParamStore, Tensor, Var};
use crate::rng::Rng;

fn glorot(din: usize, dout: usize) -> f64 {
    (6.0 / (din + dout) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Dense {
    pub fn new(name: &str, din: usize, dout: usize) -> Dense {
        Dense {
            name: name.to_string(),
            din,
            dout,
        }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        store.insert_uniform(&self.w(), &[self.din, self.dout], glorot(self.din, self.dout), rng);
        store.insert(&self.b(), Tensor::zeros(&[self.dout]), true);
    }

    /// Zero weights and bias, so the layer outputs 0 until trained.
    pub fn init_zero(&self, store: &mut ParamStore) {
        store.insert(&self.w(), Tensor::zeros(&[self.din, self.dout]), true);
        store.insert(&self.b(), Tensor::zeros(&[self.dout]), true);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, &self.w())?;
        let b = g.param(store, &self.b())?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Dense layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(name: &str, dims: &[usize]) -> Mlp {
        Mlp {
            layers: dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| Dense::new(&format!("{name}.{i}"), w[0], w[1]))
                .collect(),
        }
    }

    pub fn din(&self) -> usize {
        self.layers[0].din
    }

    pub fn dout(&self) -> usize {
        self.layers.last().expect("non-empty mlp").dout
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        Conv {
            name: name.to_string(),
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let fan_in = self.cin * self.k * self.k;
        let scale = (6.0 / fan_in as f64).sqrt();
        store.insert_uniform(
            &format!("{}.w", self.name),
            &[self.cout, self.cin, self.k, self.k],
            scale,
            rng,
        );
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.cout]), true);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, &format!("{}.w", self.name))?;
        let b = g.param(store, &format!("{}.b", self.name))?;
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Statistics gathered while calibrating frozen normalization layers.
#[derive(Debug, Default)]
pub struct Calibration {
    pub stats: Vec<(String, Tensor)>,
}

impl Calibration {
    pub fn apply(self, store: &mut ParamStore) -> Result<(), NnError> {
        for (name, t) in self.stats {
            store.set(&name, t)?;
        }
        Ok(())
    }
}

/// Convolution, per-channel normalization with frozen statistics and a
/// learned affine, then ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv,
}

impl ConvBlock {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvBlock {
        ConvBlock {
            conv: Conv::new(name, cin, cout, k, stride),
        }
    }

    fn key(&self, what: &str) -> String {
        format!("{}.{what}", self.conv.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.conv.init(store, rng);
        let c = self.conv.cout;
        store.insert(&self.key("gamma"), Tensor::filled(&[c], 1.0), true);
        store.insert(&self.key("beta"), Tensor::zeros(&[c]), true);
        store.insert(&self.key("mean"), Tensor::zeros(&[c]), false);
        store.insert(&self.key("istd"), Tensor::filled(&[c], 1.0), false);
    }

    /// With `calib`, statistics are measured on this batch, used, and
    /// recorded for the caller to freeze.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        calib: Option<&mut Calibration>,
    ) -> Result<Var, NnError> {
        let y = self.conv.forward(g, store, x)?;
        let (mean, istd) = match calib {
            Some(cal) => {
                let (mean, istd) = channel_stats(g.value(y));
                let c = mean.len();
                cal.stats.push((self.key("mean"), Tensor::new(&[c], mean.clone())));
                cal.stats.push((self.key("istd"), Tensor::new(&[c], istd.clone())));
                (mean, istd)
            }
            None => {
                let get = |k: &str| {
                    store
                        .get(&self.key(k))
                        .map(|t| t.data.clone())
                        .ok_or_else(|| NnError::UnknownParam(self.key(k)))
                };
                (get("mean")?, get("istd")?)
            }
        };
        let gamma = g.param(store, &self.key("gamma"))?;
        let beta = g.param(store, &self.key("beta"))?;
        let n = g.channel_norm(y, gamma, beta, &mean, &istd)?;
        Ok(g.relu(n))
    }
}

/// Per-channel mean and inverse standard deviation of `[B,C,H,W]`.
pub fn channel_stats(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (b, c, hw) = (t.shape[0], t.shape[1], t.shape[2] * t.shape[3]);
    let n = (b * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for (i, plane) in t.data.chunks(hw).enumerate() {
        for &v in plane {
            mean[i % c] += v;
            sq[i % c] += v * v;
        }
    }
    let istd = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, s)| {
            *m /= n;
            let var = (s / n - *m * *m).max(0.0);
            1.0 / (var + 1e-5).sqrt()
        })
        .collect();
    (mean, istd)
}

/// Gated recurrent unit: `u = σ(xW_u + hU_u + b_u)`,
/// `r = σ(xW_r + hU_r + b_r)`, `h̃ = tanh(xW_h + (r⊙h)U_h + b_h)`,
/// `h' = (1 − u)⊙h + u⊙h̃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub name: String,
    pub din: usize,
    pub dh: usize,
}

impl GruCell {
    pub fn new(name: &str, din: usize, dh: usize) -> GruCell {
        GruCell {
            name: name.to_string(),
            din,
            dh,
        }
    }

    fn key(&self, what: &str) -> String {
        format!("{}.{what}", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let sx = glorot(self.din, self.dh);
        let sh = glorot(self.dh, self.dh);
        for gate in ["u", "r", "h"] {
            store.insert_uniform(&self.key(&format!("w{gate}")), &[self.din, self.dh], sx, rng);
            store.insert_uniform(&self.key(&format!("u{gate}")), &[self.dh, self.dh], sh, rng);
            store.insert(&self.key(&format!("b{gate}")), Tensor::zeros(&[self.dh]), true);
        }
    }

    fn affine(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        gate: &str,
        x: Var,
        h: Var,
    ) -> Result<Var, NnError> {
        let w = g.param(store, &self.key(&format!("w{gate}")))?;
        let u = g.param(store, &self.key(&format!("u{gate}")))?;
        let b = g.param(store, &self.key(&format!("b{gate}")))?;
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h, u)?;
        let s = g.add(xw, hu)?;
        g.add_row(s, b)
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var, NnError> {
        let pre_u = self.affine(g, store, "u", x, h)?;
        let u = g.sigmoid(pre_u);
        let pre_r = self.affine(g, store, "r", x, h)?;
        let r = g.sigmoid(pre_r);
        let rh = g.mul(r, h)?;
        let pre_c = self.affine(g, store, "h", x, rh)?;
        let cand = g.tanh(pre_c);
        let diff = g.sub(cand, h)?;
        let step = g.mul(u, diff)?;
        g.add(h, step)
    }
}

/// Stacked GRU cells; layer `i + 1` consumes the new state of layer `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub cells: Vec<GruCell>,
}

impl Gru {
    pub fn new(name: &str, din: usize, dh: usize, layers: usize) -> Gru {
        Gru {
            cells: (0..layers)
                .map(|i| GruCell::new(&format!("{name}.{i}"), if i == 0 { din } else { dh }, dh))
                .collect(),
        }
    }

    pub fn dh(&self) -> usize {
        self.cells[0].dh
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for c in &self.cells {
            c.init(store, rng);
        }
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> Vec<Var> {
        self.cells
            .iter()
            .map(|c| g.input(Tensor::zeros(&[rows, c.dh])))
            .collect()
    }

    /// Advances every layer one step; returns the top layer's output.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        state: &mut [Var],
    ) -> Result<Var, NnError> {
        let mut input = x;
        for (cell, h) in self.cells.iter().zip(state.iter_mut()) {
            *h = cell.step(g, store, input, *h)?;
            input = *h;
        }
        Ok(input)
    }
}

/// Fully connected message passing over `K` nodes per graph:
/// `ê_k = g(x_k, Σ_{i≠k} f(x_i, x_k))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNet {
    pub f: Mlp,
    pub g: Mlp,
}

/// Sender/receiver row indices for fully connected graphs of `k` nodes,
/// `batch` graphs stacked row-wise.
pub fn pair_indices(batch: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut send = Vec::with_capacity(batch * k * k.saturating_sub(1));
    let mut recv = Vec::with_capacity(send.capacity());
    for b in 0..batch {
        for dst in 0..k {
            for src in 0..k {
                if src != dst {
                    send.push(b * k + src);
                    recv.push(b * k + dst);
                }
            }
        }
    }
    (send, recv)
}

impl GraphNet {
    /// `f: [2d] → hidden.. → dm`, `g: [d + dm] → hidden.. → dout`.
    pub fn new(name: &str, d: usize, hidden: &[usize], dm: usize, dout: usize) -> GraphNet {
        let mut fd = vec![2 * d];
        fd.extend_from_slice(hidden);
        fd.push(dm);
        let mut gd = vec![d + dm];
        gd.extend_from_slice(hidden);
        gd.push(dout);
        GraphNet {
            f: Mlp::new(&format!("{name}.f"), &fd),
            g: Mlp::new(&format!("{name}.g"), &gd),
        }
    }

    pub fn dout(&self) -> usize {
        self.g.dout()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.f.init(store, rng);
        self.g.init(store, rng);
    }

    /// `x` is `[batch · k, d]`, graph-major.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, k: usize) -> Result<Var, NnError> {
        let rows = g.shape(x)[0];
        if k == 0 || rows % k != 0 {
            return Err(NnError::Shape {
                op: "graphnet",
                detail: format!("{rows} rows for {k} nodes per graph"),
            });
        }
        let (send, recv) = pair_indices(rows / k, k);
        let xs = g.gather_rows(x, &send)?;
        let xr = g.gather_rows(x, &recv)?;
        let pair = g.concat_cols(&[xs, xr])?;
        let msg = self.f.forward(g, store, pair)?;
        let agg = g.scatter_add_rows(msg, &recv, rows)?;
        let joined = g.concat_cols(&[x, agg])?;
        self.g.forward(g, store, joined)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn mlp_rows(mlp: &Mlp, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(&[1, x.len()], x.to_vec()));
        let y = mlp.forward(&mut g, store, xv).unwrap();
        g.value(y).data.clone()
    }

    #[test]
    fn graphnet_matches_double_loop() {
        let mut rng = seeded(4);
        let gn = GraphNet::new("gn", 3, &[8], 5, 4);
        let mut store = ParamStore::new();
        gn.init(&mut store, &mut rng);
        let x = random(&[3, 3], &mut rng);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = gn.forward(&mut g, &store, xv, 3).unwrap();
        for k in 0..3 {
            let mut agg = vec![0.0; 5];
            for i in 0..3 {
                if i == k {
                    continue;
                }
                let mut pair = x.row(i).to_vec();
                pair.extend_from_slice(x.row(k));
                for (a, m) in agg.iter_mut().zip(mlp_rows(&gn.f, &store, &pair)) {
                    *a += m;
                }
            }
            let mut joined = x.row(k).to_vec();
            joined.extend_from_slice(&agg);
            let expected = mlp_rows(&gn.g, &store, &joined);
            for (a, b) in g.value(out).row(k).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graphnet_single_node_sees_zero_aggregate() {
        let mut rng = seeded(5);
        let gn = GraphNet::new("gn", 2, &[6], 3, 2);
        let mut store = ParamStore::new();
        gn.init(&mut store, &mut rng);
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(&[1, 2], vec![0.3, -0.7]));
        let out = gn.forward(&mut g, &store, xv, 1).unwrap();
        let expected = mlp_rows(&gn.g, &store, &[0.3, -0.7, 0.0, 0.0, 0.0]);
        assert_eq!(g.value(out).data, expected);
        let mut g = Graph::new();
        let xv = g.input(Tensor::zeros(&[2, 2]));
        assert!(gn.forward(&mut g, &store, xv, 0).is_err());
    }

    #[test]
    fn gru_gate_semantics() {
        let cell = GruCell::new("c", 2, 3);
        let mut store = ParamStore::new();
        cell.init(&mut store, &mut seeded(6));
        for name in store.names().map(String::from).collect::<Vec<_>>() {
            let shape = store.get(&name).unwrap().shape.clone();
            store.set(&name, Tensor::zeros(&shape)).unwrap();
        }
        let hprev = vec![0.4, -0.8, 1.0];
        let run = |store: &ParamStore| {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(&[1, 2], vec![0.5, -0.5]));
            let h = g.input(Tensor::new(&[1, 3], hprev.clone()));
            let y = cell.step(&mut g, store, x, h).unwrap();
            g.value(y).data.clone()
        };
        // all-zero parameters: u = r = 0.5 and a zero candidate
        for (y, h) in run(&store).iter().zip(&hprev) {
            assert!((y - 0.5 * h).abs() < 1e-15);
        }
        // update gate pinned shut keeps the state
        store.set("c.bu", Tensor::filled(&[3], -50.0)).unwrap();
        store.insert_uniform("c.wh", &[2, 3], 1.0, &mut seeded(7));
        for (y, h) in run(&store).iter().zip(&hprev) {
            assert!((y - h).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_stats_normalize() {
        let t = Tensor::new(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let (m, s) = channel_stats(&t);
        assert_eq!(m, vec![4.0]);
        assert!((s[0] - 1.0 / (5.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }
}
