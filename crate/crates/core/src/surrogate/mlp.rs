//! Fully-connected network with exact input derivatives.
//!
//! Points are stored as rows. Directional derivatives are propagated as
//! forward jets `(ȧ, ä)` through each layer; parameter gradients of any
//! weighted combination of values, first and second directional derivatives
//! come from a reverse sweep through those jets.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stochastics::{KeyedRng, StreamTag};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Mish,
    LeakyRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

/// Value and first three derivatives of an activation at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActDerivs {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Activation {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Mish => {
                if x > 20.0 {
                    return x;
                }
                let e = x.exp();
                let n = e * (e + 2.0);
                x * (n / (n + 2.0))
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Value and first derivative.
    pub fn value_d1(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Mish => {
                if x > 20.0 {
                    return (x, 1.0);
                }
                let e = x.exp();
                let n = e * (e + 2.0);
                let tt = n / (n + 2.0);
                let s = e / (1.0 + e);
                let q = (4.0 * n + 4.0) / ((n + 2.0) * (n + 2.0)) * s;
                (x * tt, tt + x * q)
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (LEAKY_SLOPE * x, LEAKY_SLOPE)
                }
            }
        }
    }

    pub fn derivs(self, x: f64) -> ActDerivs {
        match self {
            Activation::Mish => {
                if x > 20.0 {
                    return ActDerivs { f: x, d1: 1.0, d2: 0.0, d3: 0.0 };
                }
                // tanh(softplus x) = n / (n + 2) with n = eˣ(eˣ + 2)
                let e = x.exp();
                let n = e * (e + 2.0);
                let tt = n / (n + 2.0);
                let s = e / (1.0 + e);
                let one_minus_t2 = (4.0 * n + 4.0) / ((n + 2.0) * (n + 2.0));
                let q = one_minus_t2 * s;
                let r = (1.0 - s) - 2.0 * tt * s;
                let q1 = q * r;
                let r1 = -s * (1.0 - s) - 2.0 * (q * s + tt * s * (1.0 - s));
                let q2 = q1 * r + q * r1;
                ActDerivs {
                    f: x * tt,
                    d1: tt + x * q,
                    d2: 2.0 * q + x * q1,
                    d3: 3.0 * q1 + x * q2,
                }
            }
            Activation::LeakyRelu => {
                let (f, d1) = if x > 0.0 { (x, 1.0) } else { (LEAKY_SLOPE * x, LEAKY_SLOPE) };
                ActDerivs { f, d1, d2: 0.0, d3: 0.0 }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    /// `d + 1`: time followed by space.
    pub input_dim: usize,
    pub init_seed: u64,
    pub precision: Precision,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 || self.input_dim < 2 {
            return Err(invalid("network needs hidden_layers >= 1, width >= 1 and input_dim >= 2"));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            shapes.push((self.width, fan_in));
            fan_in = self.width;
        }
        shapes.push((1, fan_in));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: NetworkConfig,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Intermediate quantities of one forward pass over a block of points.
pub(crate) struct Tape {
    /// `h[0]` is the input, `h[l]` the output of hidden layer `l`.
    h: Vec<Array2<f64>>,
    d1: Vec<Array2<f64>>,
    d2: Vec<Array2<f64>>,
    d3: Vec<Array2<f64>>,
    pub value: Array1<f64>,
}

/// A directional derivative inside an objective: the contribution is
/// `Σ_p w1[p] Du_p[dir_p] + w2[p] D²u_p[dir_p, dir_p]`.
pub(crate) struct Jet {
    pub dir: Array2<f64>,
    pub w1: Option<Array1<f64>>,
    pub w2: Option<Array1<f64>>,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl Mlp {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let rng = KeyedRng::new(config.init_seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, (out, inp)) in config.layer_shapes().into_iter().enumerate() {
            let mut stream = rng.stream(StreamTag::Init, [l as u64, 0, 0]);
            let limit = (6.0 / (out + inp) as f64).sqrt();
            weights.push(Array2::from_shape_fn((out, inp), |_| stream.gen_range(-limit..limit)));
            biases.push(Array1::zeros(out));
        }
        let mut net = Mlp { config, weights, biases };
        net.apply_precision();
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.config.n_params()
    }

    fn apply_precision(&mut self) {
        if self.config.precision == Precision::F32 {
            for w in &mut self.weights {
                w.mapv_inplace(round_f32);
            }
            for b in &mut self.biases {
                b.mapv_inplace(round_f32);
            }
        }
    }

    /// Sets the final affine layer to zero, making the network identically 0.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.len() - 1;
        self.weights[last].fill(0.0);
        self.biases[last].fill(0.0);
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        crate::error::check_dim(self.n_params(), params.len())?;
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = params[k];
                k += 1;
            }
            for v in b.iter_mut() {
                *v = params[k];
                k += 1;
            }
        }
        self.apply_precision();
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.config.hidden_layers
    }

    fn w_out(&self) -> ArrayView1<'_, f64> {
        self.weights[self.hidden()].row(0)
    }

    /// Values only.
    pub fn forward_values(&self, z: &Array2<f64>) -> Array1<f64> {
        let act = self.config.activation;
        let mut h = z.clone();
        for l in 0..self.hidden() {
            let mut a = h.dot(&self.weights[l].t());
            a += &self.biases[l];
            a.mapv_inplace(|x| act.value(x));
            h = a;
        }
        h.dot(&self.w_out()) + self.biases[self.hidden()][0]
    }

    /// Forward pass keeping activation derivatives up to `order` (1 to 3).
    pub(crate) fn forward_tape(&self, z: &Array2<f64>, order: usize) -> Tape {
        let act = self.config.activation;
        let mut tape = Tape {
            h: vec![z.clone()],
            d1: Vec::new(),
            d2: Vec::new(),
            d3: Vec::new(),
            value: Array1::zeros(z.nrows()),
        };
        for l in 0..self.hidden() {
            let mut a = tape.h[l].dot(&self.weights[l].t());
            a += &self.biases[l];
            let shape = a.raw_dim();
            let (mut f, mut d1) = (Array2::zeros(shape), Array2::zeros(shape));
            if order <= 1 {
                Zip::from(&a).and(&mut f).and(&mut d1).for_each(|&x, f, d1| {
                    (*f, *d1) = act.value_d1(x);
                });
            } else {
                let (mut d2, mut d3) = (Array2::zeros(shape), Array2::zeros(shape));
                Zip::from(&a)
                    .and(&mut f)
                    .and(&mut d1)
                    .and(&mut d2)
                    .and(&mut d3)
                    .for_each(|&x, f, d1, d2, d3| {
                        let r = act.derivs(x);
                        *f = r.f;
                        *d1 = r.d1;
                        *d2 = r.d2;
                        *d3 = r.d3;
                    });
                tape.d2.push(d2);
                if order >= 3 {
                    tape.d3.push(d3);
                }
            }
            tape.h.push(f);
            tape.d1.push(d1);
        }
        tape.value = tape.h[self.hidden()].dot(&self.w_out()) + self.biases[self.hidden()][0];
        tape
    }

    /// Gradient with respect to the full input `(t, x)`, one row per point.
    pub(crate) fn input_gradient(&self, tape: &Tape) -> Array2<f64> {
        let p = tape.value.len();
        let l_top = self.hidden();
        let mut adj = Array2::from_shape_fn((p, self.config.width), |(_, j)| self.w_out()[j]);
        for l in (0..l_top).rev() {
            adj *= &tape.d1[l];
            adj = adj.dot(&self.weights[l]);
        }
        adj
    }

    /// First and second derivatives along `dir` (one direction per row).
    pub(crate) fn directional(&self, tape: &Tape, dir: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let mut adot = dir.dot(&self.weights[0].t());
        let mut addot: Option<Array2<f64>> = None;
        let l_top = self.hidden();
        let mut hdot = Array2::zeros((0, 0));
        let mut hddot = Array2::zeros((0, 0));
        for l in 0..l_top {
            hdot = &tape.d1[l] * &adot;
            hddot = &tape.d2[l] * &adot * &adot;
            if let Some(add) = &addot {
                hddot = hddot + &tape.d1[l] * add;
            }
            if l + 1 < l_top {
                adot = hdot.dot(&self.weights[l + 1].t());
                addot = Some(hddot.dot(&self.weights[l + 1].t()));
            }
        }
        (hdot.dot(&self.w_out()), hddot.dot(&self.w_out()))
    }

    /// Gradient, flattened like [`Mlp::params`], of
    /// `Σ_p ubar[p] u_p + Σ_jets (w1 Du[dir] + w2 D²u[dir, dir])`.
    pub(crate) fn backprop(&self, tape: &Tape, ubar: &Array1<f64>, jets: &[Jet]) -> Vec<f64> {
        let l_top = self.hidden();
        let p = ubar.len();
        let mut gw: Vec<Array2<f64>> = self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let mut gb: Vec<Array1<f64>> = self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
        let mut acc: Vec<Array2<f64>> = (0..l_top).map(|_| Array2::zeros((p, self.config.width))).collect();
        let w_out = self.w_out();

        for jet in jets {
            let second = jet.w2.is_some();
            let mut adots = Vec::with_capacity(l_top);
            let mut hdots = Vec::with_capacity(l_top);
            let mut addots: Vec<Option<Array2<f64>>> = Vec::with_capacity(l_top);
            let mut hddots: Vec<Array2<f64>> = Vec::with_capacity(l_top);
            let mut adot = jet.dir.dot(&self.weights[0].t());
            let mut addot: Option<Array2<f64>> = None;
            for l in 0..l_top {
                let hdot = &tape.d1[l] * &adot;
                if second {
                    let mut hdd = &tape.d2[l] * &adot * &adot;
                    if let Some(add) = &addot {
                        hdd = hdd + &tape.d1[l] * add;
                    }
                    if l + 1 < l_top {
                        let next_add = hdd.dot(&self.weights[l + 1].t());
                        addots.push(addot.take());
                        addot = Some(next_add);
                    } else {
                        addots.push(addot.take());
                    }
                    hddots.push(hdd);
                }
                let next_adot = (l + 1 < l_top).then(|| hdot.dot(&self.weights[l + 1].t()));
                adots.push(adot);
                hdots.push(hdot);
                if let Some(n) = next_adot {
                    adot = n;
                } else {
                    adot = Array2::zeros((0, 0));
                }
            }

            // output layer
            let mut hd_adj: Array2<f64>;
            let mut hdd_adj: Option<Array2<f64>> = None;
            let w1 = jet.w1.clone().unwrap_or_else(|| Array1::zeros(p));
            {
                let g = gw[l_top].row_mut(0);
                let contrib = hdots[l_top - 1].t().dot(&w1);
                let mut g = g;
                g += &contrib;
                if let Some(w2) = &jet.w2 {
                    g += &hddots[l_top - 1].t().dot(w2);
                }
            }
            hd_adj = outer(&w1, &w_out);
            if let Some(w2) = &jet.w2 {
                hdd_adj = Some(outer(w2, &w_out));
            }

            for l in (0..l_top).rev() {
                let d1 = &tape.d1[l];
                let d2 = &tape.d2[l];
                let adot = &adots[l];
                // contribution to the value adjoint of the pre-activation
                let mut c = d2 * adot * &hd_adj;
                let mut adot_adj = d1 * &hd_adj;
                let mut addot_adj: Option<Array2<f64>> = None;
                if let Some(hdd) = &hdd_adj {
                    let mut curv = &tape.d3[l] * adot * adot;
                    if let Some(add) = &addots[l] {
                        curv = curv + d2 * add;
                    }
                    c = c + curv * hdd;
                    adot_adj = adot_adj + d2 * adot * hdd * 2.0;
                    addot_adj = Some(d1 * hdd);
                }
                acc[l] += &c;
                let prev_hdot = if l == 0 { &jet.dir } else { &hdots[l - 1] };
                gw[l] += &adot_adj.t().dot(prev_hdot);
                if let Some(aa) = &addot_adj {
                    if l > 0 {
                        gw[l] += &aa.t().dot(&hddots[l - 1]);
                    }
                }
                if l > 0 {
                    hd_adj = adot_adj.dot(&self.weights[l]);
                    hdd_adj = addot_adj.map(|aa| aa.dot(&self.weights[l]));
                }
            }
        }

        // value chain
        {
            let mut g = gw[l_top].row_mut(0);
            g += &tape.h[l_top].t().dot(ubar);
        }
        gb[l_top][0] += ubar.sum();
        let mut h_adj = outer(ubar, &w_out);
        for l in (0..l_top).rev() {
            let a_adj = &tape.d1[l] * &h_adj + &acc[l];
            gw[l] += &a_adj.t().dot(&tape.h[l]);
            gb[l] += &a_adj.sum_axis(Axis(0));
            if l > 0 {
                h_adj = a_adj.dot(&self.weights[l]);
            }
        }

        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in gw.iter().zip(&gb) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn outer(a: &Array1<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
