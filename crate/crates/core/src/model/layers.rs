//! Parameter groups and the forward context shared by every block.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Graph, Mat, ParamId, ParamStore, Var};

/// Allocates named parameters with a seeded initializer.
pub(crate) struct Init<'s> {
    pub store: &'s mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        self.store.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store.add(name, Mat::filled(rows, cols, value))
    }

    /// Xavier-uniform weight with zero bias.
    pub fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: self.matrix(&format!("{name}.weight"), input, output, bound),
            bias: Some(self.constant(&format!("{name}.bias"), 1, output, 0.0)),
        }
    }

    pub fn linear_zero(&mut self, name: &str, input: usize, output: usize) -> Linear {
        Linear {
            weight: self.constant(&format!("{name}.weight"), input, output, 0.0),
            bias: Some(self.constant(&format!("{name}.bias"), 1, output, 0.0)),
        }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gain: self.constant(&format!("{name}.gain"), 1, dim, 1.0),
            bias: self.constant(&format!("{name}.bias"), 1, dim, 0.0),
        }
    }

    pub fn mlp(&mut self, name: &str, input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp {
            hidden: self.linear(&format!("{name}.0"), input, hidden),
            out: self.linear(&format!("{name}.1"), hidden, output),
        }
    }

    /// Two-layer map whose output layer starts at zero.
    pub fn mlp_zero_out(&mut self, name: &str, input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp {
            hidden: self.linear(&format!("{name}.0"), input, hidden),
            out: self.linear_zero(&format!("{name}.1"), hidden, output),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// `out(gelu(hidden(x)))`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.hidden.ids();
        v.extend(self.out.ids());
        v
    }
}

/// Test-only switches that patch the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Probe {
    /// Replace every video-encoder attention map with the uniform distribution.
    pub uniform_encoder_attention: bool,
}

struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

/// One forward pass: the tape, read access to parameters, and the
/// train/eval switch.
pub struct Forward<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    dropout: Option<Dropout>,
    pub probe: Probe,
}

impl<'a> Forward<'a> {
    /// Deterministic forward with dropout disabled.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self { graph: Graph::new(), store, dropout: None, probe: Probe::default() }
    }

    /// Training forward; dropout masks come from `rng`.
    pub fn train(store: &'a ParamStore, rate: f64, rng: ChaCha8Rng) -> Self {
        let dropout = (rate > 0.0).then_some(Dropout { rate, rng });
        Self { graph: Graph::new(), store, dropout, probe: Probe::default() }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.graph.constant(m)
    }

    pub fn linear(&mut self, layer: &Linear, x: Var) -> Var {
        let w = self.param(layer.weight);
        let y = self.graph.matmul(x, w);
        match layer.bias {
            Some(b) => {
                let b = self.param(b);
                self.graph.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn norm(&mut self, layer: &Norm, x: Var) -> Var {
        let n = self.graph.layer_norm(x);
        let gain = self.param(layer.gain);
        let bias = self.param(layer.bias);
        let n = self.graph.mul_row(n, gain);
        self.graph.add_row(n, bias)
    }

    pub fn mlp(&mut self, layer: &Mlp, x: Var) -> Var {
        let h = self.linear(&layer.hidden, x);
        let h = self.graph.gelu(h);
        self.linear(&layer.out, h)
    }

    /// Inverted dropout; identity in evaluation mode.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some(d) = self.dropout.as_mut() else { return x };
        let (rows, cols) = self.graph.shape(x);
        let keep = 1.0 / (1.0 - d.rate);
        let mask: Vec<f64> =
            (0..rows * cols).map(|_| if d.rng.random::<f64>() < d.rate { 0.0 } else { keep }).collect();
        let mask = self.graph.constant(Mat::from_vec(rows, cols, mask));
        self.graph.mul(x, mask)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// Scores of head `h` are `Σ_pairs q_h · k_hᵀ`, times `scale`; each pair
    /// is split into `heads` equal column blocks. Summing pairs is the same
    /// as attending with the per-head concatenation of the pair members.
    /// Returns the concatenated head outputs and the head-averaged weights.
    pub fn attention(
        &mut self,
        pairs: &[(Var, Var)],
        values: Var,
        heads: usize,
        scale: f64,
        uniform: bool,
    ) -> (Var, Var) {
        let (rows, _) = self.graph.shape(pairs[0].0);
        let (keys, vdim) = self.graph.shape(values);
        let dv = vdim / heads;
        let mut outs = Vec::with_capacity(heads);
        let mut maps = Vec::with_capacity(heads);
        for h in 0..heads {
            let weights = if uniform {
                self.graph.constant(Mat::filled(rows, keys, 1.0 / keys as f64))
            } else {
                let mut terms = Vec::with_capacity(pairs.len());
                for &(q, k) in pairs {
                    let dq = self.graph.shape(q).1 / heads;
                    let qh = self.graph.slice_cols(q, h * dq, dq);
                    let kh = self.graph.slice_cols(k, h * dq, dq);
                    terms.push(self.graph.matmul_bt(qh, kh));
                }
                let s = self.graph.add_all(&terms);
                let s = self.graph.scale(s, scale);
                self.graph.softmax_rows(s)
            };
            let vh = self.graph.slice_cols(values, h * dv, dv);
            outs.push(self.graph.matmul(weights, vh));
            maps.push(weights);
        }
        let out = if heads == 1 { outs[0] } else { self.graph.concat_cols(&outs) };
        let avg = if heads == 1 {
            maps[0]
        } else {
            let s = self.graph.add_all(&maps);
            self.graph.scale(s, 1.0 / heads as f64)
        };
        (out, avg)
    }

    /// Sinusoidal embedding of an `R x 1` column of positions, laid out like
    /// [`crate::interval::sinusoidal_embedding`] but differentiable.
    pub fn sinusoid(&mut self, positions: Var, dim: usize) -> Var {
        let freqs: Vec<f64> = (0..dim)
            .map(|j| {
                let k = j / 2;
                crate::interval::PE_SCALE
                    / crate::interval::PE_TEMPERATURE.powf(2.0 * k as f64 / dim as f64)
            })
            .collect();
        let freqs = self.graph.constant(Mat::row_vector(&freqs));
        let angles = self.graph.matmul(positions, freqs);
        self.graph.sin_cos(angles)
    }
}
