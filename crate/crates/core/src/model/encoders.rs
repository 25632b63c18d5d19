//! Sentence, query and video encoders.

use crate::dataset::{EmbeddingTable, Sentence};
use crate::interval::{clip_centers, sinusoidal_embedding};
use crate::tensor::{Mat, ParamId, Var};

use super::layers::{Forward, Init, Linear, Mlp, Norm};

/// Gated recurrent cell; gate blocks are ordered reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub size: usize,
}

impl GruCell {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, input: usize, size: usize) -> Self {
        let bound = 1.0 / (size as f64).sqrt();
        let mut lin = |suffix: &str, rows: usize| Linear {
            weight: init.matrix(&format!("{name}.{suffix}.weight"), rows, 3 * size, bound),
            bias: Some(init.matrix(&format!("{name}.{suffix}.bias"), 1, 3 * size, bound)),
        };
        let input = lin("input", input);
        let hidden = lin("hidden", size);
        Self { input, hidden, size }
    }

    /// Runs the cell over a batch of sequences in lockstep. `steps[t]` holds
    /// the inputs at step `t` (one row per sequence) and `masks[t]` is 1 for
    /// rows still inside their sequence.
    fn run(&self, fw: &mut Forward<'_>, steps: &[Mat], masks: &[Mat]) -> Var {
        let n = steps[0].rows();
        let hs = self.size;
        let mut h = fw.constant(Mat::zeros(n, hs));
        for (x, m) in steps.iter().zip(masks) {
            let x = fw.constant(x.clone());
            let gx = fw.linear(&self.input, x);
            let gh = fw.linear(&self.hidden, h);
            let g = &mut fw.graph;
            let (xr, xz, xn) = (g.slice_cols(gx, 0, hs), g.slice_cols(gx, hs, hs), g.slice_cols(gx, 2 * hs, hs));
            let (hr, hz, hn) = (g.slice_cols(gh, 0, hs), g.slice_cols(gh, hs, hs), g.slice_cols(gh, 2 * hs, hs));
            let r = g.add(xr, hr);
            let r = g.sigmoid(r);
            let z = g.add(xz, hz);
            let z = g.sigmoid(z);
            let rn = g.mul(r, hn);
            let cand = g.add(xn, rn);
            let cand = g.tanh(cand);
            // h' = cand + z ⊙ (h − cand), then held fixed past the sequence end.
            let diff = g.sub(h, cand);
            let zd = g.mul(z, diff);
            let next = g.add(cand, zd);
            let step = g.sub(next, h);
            let mask = g.constant(m.clone());
            let step = g.mul_col(step, mask);
            h = g.add(h, step);
        }
        h
    }
}

/// Encodes each sentence as the projected concatenation of the final
/// forward and backward recurrent states. Returns `N x D`.
pub fn encode_sentences(
    fw: &mut Forward<'_>,
    fwd: &GruCell,
    bwd: &GruCell,
    proj: &Linear,
    sentences: &[Sentence],
    table: &EmbeddingTable,
) -> Var {
    let n = sentences.len();
    let max_len = sentences.iter().map(|s| s.tokens.len()).max().unwrap_or(1);
    let dim = table.dim();
    let vectors: Vec<Mat> = sentences.iter().map(|s| table.lookup(&s.tokens)).collect();
    let mut fwd_steps = Vec::with_capacity(max_len);
    let mut bwd_steps = Vec::with_capacity(max_len);
    let mut masks = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let mut xf = Mat::zeros(n, dim);
        let mut xb = Mat::zeros(n, dim);
        let mut m = Mat::zeros(n, 1);
        for (i, v) in vectors.iter().enumerate() {
            let len = v.rows();
            if t < len {
                xf.row_mut(i).copy_from_slice(v.row(t));
                xb.row_mut(i).copy_from_slice(v.row(len - 1 - t));
                m.set(i, 0, 1.0);
            }
        }
        fwd_steps.push(xf);
        bwd_steps.push(xb);
        masks.push(m);
    }
    let hf = fwd.run(fw, &fwd_steps, &masks);
    let hb = bwd.run(fw, &bwd_steps, &masks);
    let h = fw.graph.concat_cols(&[hf, hb]);
    fw.linear(proj, h)
}

/// Query/key/value/output projections of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionProj {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl AttentionProj {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Self {
        Self {
            query: init.linear(&format!("{name}.query"), dim, dim),
            key: init.linear(&format!("{name}.key"), dim, dim),
            value: init.linear(&format!("{name}.value"), dim, dim),
            out: init.linear(&format!("{name}.out"), dim, dim),
        }
    }
}

/// Pre-norm self-attention + feed-forward block.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attn_norm: Norm,
    pub attn: AttentionProj,
    pub ffn_norm: Norm,
    pub ffn: Mlp,
    /// Positional gate; present on video layers only.
    pub gate: Option<Mlp>,
}

impl EncoderLayer {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, dim: usize, ffn: usize, gated: bool) -> Self {
        Self {
            attn_norm: init.norm(&format!("{name}.attn_norm"), dim),
            attn: AttentionProj::new(init, &format!("{name}.attn"), dim),
            ffn_norm: init.norm(&format!("{name}.ffn_norm"), dim),
            ffn: init.mlp(&format!("{name}.ffn"), dim, ffn, dim),
            gate: gated.then(|| init.mlp(&format!("{name}.gate"), dim, dim, dim)),
        }
    }

    /// One block. The position term (the gated `pe` on video layers) is
    /// added to the query/key inputs only; the values always see the
    /// unmodified features.
    fn forward(&self, fw: &mut Forward<'_>, x: Var, pe: Option<Var>, heads: usize, uniform: bool) -> Var {
        let h = fw.norm(&self.attn_norm, x);
        let pos = match (pe, &self.gate) {
            (Some(pe), Some(gate)) => Some(modulated_positional_encoding(fw, gate, h, pe)),
            (pe, None) => pe,
            (None, Some(_)) => None,
        };
        let qk_in = match pos {
            Some(p) => fw.graph.add(h, p),
            None => h,
        };
        let q = fw.linear(&self.attn.query, qk_in);
        let k = fw.linear(&self.attn.key, qk_in);
        let v = fw.linear(&self.attn.value, h);
        let dh = fw.graph.shape(q).1 / heads;
        let (a, _) = fw.attention(&[(q, k)], v, heads, 1.0 / (dh as f64).sqrt(), uniform);
        let a = fw.linear(&self.attn.out, a);
        let a = fw.dropout(a);
        let x = fw.graph.add(x, a);
        let h = fw.norm(&self.ffn_norm, x);
        let f = fw.mlp(&self.ffn, h);
        let f = fw.dropout(f);
        fw.graph.add(x, f)
    }
}

/// `σ(MLP(x)) ⊙ PE`: the sinusoidal table gated elementwise by the features.
pub fn modulated_positional_encoding(fw: &mut Forward<'_>, gate: &Mlp, x: Var, pe: Var) -> Var {
    let g = fw.mlp(gate, x);
    let g = fw.graph.sigmoid(g);
    fw.graph.mul(g, pe)
}

/// Video encoder: input projection, gated-position layers, final norm.
#[derive(Clone, Debug)]
pub struct VideoEncoder {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub norm: Norm,
}

impl VideoEncoder {
    pub fn forward(&self, fw: &mut Forward<'_>, features: &Mat, heads: usize) -> Var {
        let x = fw.constant(features.clone());
        let mut x = fw.linear(&self.input, x);
        let (len, dim) = fw.graph.shape(x);
        let pe = fw.constant(clip_position_table(len, dim));
        let uniform = fw.probe.uniform_encoder_attention;
        for layer in &self.layers {
            x = layer.forward(fw, x, Some(pe), heads, uniform);
        }
        fw.norm(&self.norm, x)
    }
}

/// Sinusoidal table over clip centers.
pub fn clip_position_table(len: usize, dim: usize) -> Mat {
    sinusoidal_embedding(&clip_centers(len), dim).expect("model dim is validated even")
}

/// Normalized positions of the paragraph token (0) and the sentences.
pub fn query_positions(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Query encoder over `[paragraph token; sentence features]`.
#[derive(Clone, Debug)]
pub struct QueryEncoder {
    pub paragraph_token: ParamId,
    pub input_norm: Norm,
    pub layers: Vec<EncoderLayer>,
    pub norm: Norm,
}

impl QueryEncoder {
    /// `(N+1) x D` encoded queries; row 0 is the paragraph.
    pub fn forward(&self, fw: &mut Forward<'_>, sentence_feats: Var, heads: usize) -> Var {
        let (n, dim) = fw.graph.shape(sentence_feats);
        let token = fw.param(self.paragraph_token);
        let x = fw.graph.concat_rows(&[token, sentence_feats]);
        let x = fw.norm(&self.input_norm, x);
        let pe = sinusoidal_embedding(&query_positions(n), dim).expect("model dim is validated even");
        let pe = fw.constant(pe);
        let mut x = fw.graph.add(x, pe);
        for layer in &self.layers {
            x = layer.forward(fw, x, None, heads, false);
        }
        fw.norm(&self.norm, x)
    }
}
