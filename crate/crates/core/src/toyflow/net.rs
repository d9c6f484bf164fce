//! The velocity network: a two-hidden-layer SiLU MLP with a gated state skip.
//!
//! ```text
//! input  = [x (D) | t, sin 2πt, cos 2πt | embedding (E)]
//! h1     = silu(input · W1 + b1)
//! h2     = silu(h1 · W2 + b2)
//! [y, g] = h2 · W3 + b3            (D + 1 outputs)
//! v      = y + g · x
//! ```
//!
//! The scalar gate lets the field carry a multiple of the state through the
//! width bottleneck, which a straight-line transport velocity needs.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

pub const TIME_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    pub state_dim: usize,
    pub embed_dim: usize,
    pub width: usize,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

struct Activations {
    input: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let w = std::f64::consts::TAU * t;
    [t, w.sin(), w.cos()]
}

impl VelocityNet {
    pub fn input_dim(&self) -> usize {
        self.state_dim + TIME_FEATURES + self.embed_dim
    }

    /// He-style normal init for hidden layers, small output layer.
    pub fn init(state_dim: usize, embed_dim: usize, width: usize, rng: &mut Rng) -> Self {
        let input_dim = state_dim + TIME_FEATURES + embed_dim;
        let mut normal = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                let v: f64 = StandardNormal.sample(rng);
                v * scale
            })
        };
        let w1 = normal(input_dim, width, (2.0 / input_dim as f64).sqrt());
        let w2 = normal(width, width, (2.0 / width as f64).sqrt());
        let w3 = normal(width, state_dim + 1, 0.1 / (width as f64).sqrt());
        Self {
            state_dim,
            embed_dim,
            width,
            w1,
            b1: Array1::zeros(width),
            w2,
            b2: Array1::zeros(width),
            w3,
            b3: Array1::zeros(state_dim + 1),
        }
    }

    pub fn zeroed(state_dim: usize, embed_dim: usize, width: usize) -> Self {
        let input_dim = state_dim + TIME_FEATURES + embed_dim;
        Self {
            state_dim,
            embed_dim,
            width,
            w1: Array2::zeros((input_dim, width)),
            b1: Array1::zeros(width),
            w2: Array2::zeros((width, width)),
            b2: Array1::zeros(width),
            w3: Array2::zeros((width, state_dim + 1)),
            b3: Array1::zeros(state_dim + 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// All parameters in a fixed order: w1, b1, w2, b2, w3, b3 (row-major).
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(&self.b3)
            .copied()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
            .chain(self.w3.iter_mut())
            .chain(self.b3.iter_mut())
    }

    fn assemble_input(&self, states: ArrayView2<f64>, times: &[f64], embeds: ArrayView2<f64>) -> Array2<f64> {
        let batch = states.nrows();
        assert_eq!(states.ncols(), self.state_dim, "state dimension");
        assert_eq!(embeds.ncols(), self.embed_dim, "embedding dimension");
        assert_eq!(times.len(), batch);
        assert_eq!(embeds.nrows(), batch);
        let mut input = Array2::zeros((batch, self.input_dim()));
        input.slice_mut(s![.., ..self.state_dim]).assign(&states);
        for (r, &t) in times.iter().enumerate() {
            for (k, f) in time_features(t).into_iter().enumerate() {
                input[[r, self.state_dim + k]] = f;
            }
        }
        input
            .slice_mut(s![.., self.state_dim + TIME_FEATURES..])
            .assign(&embeds);
        input
    }

    fn forward_full(&self, states: ArrayView2<f64>, times: &[f64], embeds: ArrayView2<f64>) -> (Array2<f64>, Activations) {
        let input = self.assemble_input(states, times, embeds);
        let z1 = input.dot(&self.w1) + &self.b1;
        let h1 = z1.mapv(silu);
        let z2 = h1.dot(&self.w2) + &self.b2;
        let h2 = z2.mapv(silu);
        let out = h2.dot(&self.w3) + &self.b3;
        let d = self.state_dim;
        let mut v = out.slice(s![.., ..d]).to_owned();
        for ((mut row, x), g) in v.outer_iter_mut().zip(states.outer_iter()).zip(out.column(d)) {
            row.scaled_add(*g, &x);
        }
        (
            v,
            Activations {
                input,
                z1,
                h1,
                z2,
                h2,
            },
        )
    }

    /// Batched velocity: one row per sample.
    pub fn forward(&self, states: ArrayView2<f64>, times: &[f64], embeds: ArrayView2<f64>) -> Array2<f64> {
        self.forward_full(states, times, embeds).0
    }

    /// Velocity for a single state.
    pub fn velocity(&self, state: &[f64], t: f64, embed: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("state row");
        let e = ArrayView2::from_shape((1, embed.len()), embed).expect("embed row");
        self.forward(x, &[t], e).into_raw_vec_and_offset().0
    }

    /// Mean squared error against `targets` and its parameter gradient.
    pub fn loss_and_grad(
        &self,
        states: ArrayView2<f64>,
        times: &[f64],
        embeds: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> (f64, Grads) {
        let (v, act) = self.forward_full(states, times, embeds);
        let n = v.len() as f64;
        let resid = &v - &targets;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let dv = resid * (2.0 / n);

        let d = self.state_dim;
        let mut dout = Array2::zeros((v.nrows(), d + 1));
        dout.slice_mut(s![.., ..d]).assign(&dv);
        for (r, (dv_row, x_row)) in dv.outer_iter().zip(states.outer_iter()).enumerate() {
            dout[[r, d]] = dv_row.dot(&x_row);
        }

        let gw3 = act.h2.t().dot(&dout);
        let gb3 = dout.sum_axis(Axis(0));
        let mut dz2 = dout.dot(&self.w3.t());
        dz2.zip_mut_with(&act.z2, |g, &z| *g *= silu_grad(z));
        let gw2 = act.h1.t().dot(&dz2);
        let gb2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&self.w2.t());
        dz1.zip_mut_with(&act.z1, |g, &z| *g *= silu_grad(z));
        let gw1 = act.input.t().dot(&dz1);
        let gb1 = dz1.sum_axis(Axis(0));
        (
            loss,
            Grads {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
                w3: gw3,
                b3: gb3,
            },
        )
    }
}

impl Grads {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(&self.b3)
            .copied()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut VelocityNet, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grads.values())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Plain gradient descent step.
pub fn sgd_step(net: &mut VelocityNet, grads: &Grads, lr: f64) {
    for (p, g) in net.params_mut().zip(grads.values()) {
        *p -= lr * g;
    }
}
