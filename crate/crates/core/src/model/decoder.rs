//! Dynamic-anchor query decoder and boundary heads.

use serde::{Deserialize, Serialize};

use crate::interval::{box_to_interval, CenterWidthBox, Interval};
use crate::tensor::{Graph, Mat, Var};

use super::layers::{Forward, Init, Linear, Mlp, Norm};

/// One decoder layer's parameters.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    /// Projects the anchor embedding to the self-attention position term.
    pub anchor_proj: Mlp,
    pub self_norm: Norm,
    pub self_query: Linear,
    pub self_key: Linear,
    pub self_query_pos: Linear,
    pub self_key_pos: Linear,
    pub self_value: Linear,
    pub self_out: Linear,
    pub cross_norm: Norm,
    pub cross_query: Linear,
    pub cross_query_pos: Linear,
    pub cross_key: Linear,
    pub cross_key_pos: Linear,
    pub cross_value: Linear,
    pub cross_value_pos: Linear,
    pub cross_out: Linear,
    pub ffn_norm: Norm,
    pub ffn: Mlp,
    /// Seed head on the first layer, offset head on the others.
    pub anchor_head: Mlp,
}

impl DecoderLayer {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, dim: usize, ffn: usize) -> Self {
        let mut lin = |s: &str| init.linear(&format!("{name}.{s}"), dim, dim);
        let anchor_proj_hidden = lin("anchor_proj.0");
        let anchor_proj_out = lin("anchor_proj.1");
        let self_query = lin("self_query");
        let self_key = lin("self_key");
        let self_query_pos = lin("self_query_pos");
        let self_key_pos = lin("self_key_pos");
        let self_value = lin("self_value");
        let self_out = lin("self_out");
        let cross_query = lin("cross_query");
        let cross_query_pos = lin("cross_query_pos");
        let cross_key = lin("cross_key");
        let cross_key_pos = lin("cross_key_pos");
        let cross_value = lin("cross_value");
        let cross_value_pos = lin("cross_value_pos");
        let cross_out = lin("cross_out");
        Self {
            anchor_proj: Mlp { hidden: anchor_proj_hidden, out: anchor_proj_out },
            self_norm: init.norm(&format!("{name}.self_norm"), dim),
            self_query,
            self_key,
            self_query_pos,
            self_key_pos,
            self_value,
            self_out,
            cross_norm: init.norm(&format!("{name}.cross_norm"), dim),
            cross_query,
            cross_query_pos,
            cross_key,
            cross_key_pos,
            cross_value,
            cross_value_pos,
            cross_out,
            ffn_norm: init.norm(&format!("{name}.ffn_norm"), dim),
            ffn: init.mlp(&format!("{name}.ffn"), dim, ffn, dim),
            anchor_head: init.mlp_zero_out(&format!("{name}.anchor_head"), dim, dim, 2),
        }
    }
}

/// Decoder stack plus the shared output norm and refinement head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub norm: Norm,
    pub refine_head: Mlp,
}

/// Tape handles for one decoder layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerState {
    /// Normalized output features, `(N+1) x D`.
    pub query: Var,
    /// Anchors after this layer's update, `(N+1) x 2` logits (center, width).
    pub anchors: Var,
    /// Head-averaged cross-attention, `(N+1) x T`.
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    pub layers: Vec<LayerState>,
    /// Final boxes `A_last + head(Q_last)` in logit space.
    pub boxes: Var,
    /// `(N+1) x 2` matrix of `[start, end]` rows.
    pub intervals: Var,
}

impl DecoderState {
    pub fn last(&self) -> &LayerState {
        self.layers.last().expect("decoder has at least one layer")
    }

    /// Value snapshot for inspection and value-level metrics.
    pub fn trace(&self, g: &Graph) -> DecoderTrace {
        DecoderTrace {
            layers: self
                .layers
                .iter()
                .map(|l| LayerTrace {
                    query: g.value(l.query).clone(),
                    anchors: g.value(l.anchors).clone(),
                    attention: g.value(l.attention).clone(),
                })
                .collect(),
            intervals: g.value(self.intervals).clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub query: Mat,
    pub anchors: Mat,
    pub attention: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTrace {
    pub layers: Vec<LayerTrace>,
    pub intervals: Mat,
}

impl DecoderTrace {
    pub fn last_attention(&self) -> &Mat {
        &self.layers.last().expect("decoder has at least one layer").attention
    }

    pub fn anchor_boxes(&self, layer: usize) -> Vec<CenterWidthBox> {
        let a = &self.layers[layer].anchors;
        (0..a.rows()).map(|r| CenterWidthBox::new(a.get(r, 0), a.get(r, 1))).collect()
    }

    pub fn prediction(&self) -> GroundingPrediction {
        GroundingPrediction::from_rows(&self.intervals)
    }
}

/// Paragraph interval plus one interval per sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrediction {
    pub paragraph: Interval,
    pub sentences: Vec<Interval>,
}

impl GroundingPrediction {
    /// From a `(N+1) x 2` matrix of `[start, end]` rows.
    pub fn from_rows(m: &Mat) -> Self {
        let iv = |r: usize| Interval::clamped(m.get(r, 0), m.get(r, 1));
        Self { paragraph: iv(0), sentences: (1..m.rows()).map(iv).collect() }
    }
}

/// Sum of `attention[row]` over clips whose centers lie in `interval`.
pub fn attention_sum(attention: &Mat, interval: &Interval, row: usize) -> f64 {
    let t = attention.cols();
    attention
        .row(row)
        .iter()
        .enumerate()
        .filter(|(j, _)| interval.contains((*j as f64 + 0.5) / t as f64))
        .map(|(_, a)| a)
        .sum()
}

/// Expected clip index `Σ_{t=1..T} t · α(t)` of one attention row.
pub fn attention_centroid(attention: &Mat, row: usize) -> f64 {
    attention.row(row).iter().enumerate().map(|(j, a)| (j + 1) as f64 * a).sum()
}

/// Differentiable `[start, end]` rows from logit-space boxes.
pub fn boxes_to_intervals(g: &mut Graph, boxes: Var) -> Var {
    let b = g.sigmoid(boxes);
    let c = g.slice_cols(b, 0, 1);
    let w = g.slice_cols(b, 1, 1);
    let half = g.scale(w, 0.5);
    let s = g.sub(c, half);
    let e = g.add(c, half);
    let iv = g.concat_cols(&[s, e]);
    g.clamp(iv, 0.0, 1.0)
}

/// Value-level counterpart of [`boxes_to_intervals`].
pub fn box_rows_to_intervals(boxes: &Mat) -> Vec<Interval> {
    (0..boxes.rows()).map(|r| box_to_interval(&CenterWidthBox::new(boxes.get(r, 0), boxes.get(r, 1)))).collect()
}

impl Decoder {
    /// Runs every layer. `memory` is `T x D`, `queries` is `(N+1) x D`.
    pub fn forward(&self, fw: &mut Forward<'_>, memory: Var, queries: Var, memory_pos: Var, heads: usize) -> DecoderState {
        let (rows, dim) = fw.graph.shape(queries);
        let half = dim / 2;
        let dh = dim / heads;
        let mut q = queries;
        let mut anchors = fw.constant(Mat::zeros(rows, 2));
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            // Anchor embedding: sinusoids of center and width, side by side.
            let unit = fw.graph.sigmoid(anchors);
            let c = fw.graph.slice_cols(unit, 0, 1);
            let w = fw.graph.slice_cols(unit, 1, 1);
            let ec = fw.sinusoid(c, half);
            let ew = fw.sinusoid(w, half);
            let anchor_emb = fw.graph.concat_cols(&[ec, ew]);
            let anchor_pos = fw.mlp(&layer.anchor_proj, anchor_emb);

            // Self-attention: content plus anchor position on queries and keys.
            let h = fw.norm(&layer.self_norm, q);
            let qc = fw.linear(&layer.self_query, h);
            let qp = fw.linear(&layer.self_query_pos, anchor_pos);
            let kc = fw.linear(&layer.self_key, h);
            let kp = fw.linear(&layer.self_key_pos, anchor_pos);
            let sq = fw.graph.add(qc, qp);
            let sk = fw.graph.add(kc, kp);
            let sv = fw.linear(&layer.self_value, h);
            let (a, _) = fw.attention(&[(sq, sk)], sv, heads, 1.0 / (dh as f64).sqrt(), false);
            let a = fw.linear(&layer.self_out, a);
            let a = fw.dropout(a);
            q = fw.graph.add(q, a);

            // Cross-attention: per-head concatenation of content and position.
            let h = fw.norm(&layer.cross_norm, q);
            let qc = fw.linear(&layer.cross_query, h);
            let qp = fw.linear(&layer.cross_query_pos, anchor_emb);
            let kc = fw.linear(&layer.cross_key, memory);
            let kp = fw.linear(&layer.cross_key_pos, memory_pos);
            let vc = fw.linear(&layer.cross_value, memory);
            let vp = fw.linear(&layer.cross_value_pos, memory_pos);
            let v = fw.graph.add(vc, vp);
            let (a, attention) = fw.attention(&[(qc, kc), (qp, kp)], v, heads, 1.0 / (2.0 * dh as f64).sqrt(), false);
            let a = fw.linear(&layer.cross_out, a);
            let a = fw.dropout(a);
            q = fw.graph.add(q, a);

            let h = fw.norm(&layer.ffn_norm, q);
            let f = fw.mlp(&layer.ffn, h);
            let f = fw.dropout(f);
            q = fw.graph.add(q, f);

            let out = fw.norm(&self.norm, q);
            let step = fw.mlp(&layer.anchor_head, out);
            anchors = if i == 0 { step } else { fw.graph.add(anchors, step) };
            layers.push(LayerState { query: out, anchors, attention });
        }
        let last = *layers.last().expect("decoder has at least one layer");
        let refine = fw.mlp(&self.refine_head, last.query);
        let boxes = fw.graph.add(last.anchors, refine);
        let intervals = boxes_to_intervals(&mut fw.graph, boxes);
        DecoderState { layers, boxes, intervals }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_sum_examples() {
        let t = 10;
        let uniform = Mat::filled(1, t, 0.1);
        assert!((attention_sum(&uniform, &Interval::FULL, 0) - 1.0).abs() < 1e-12);
        let half = Interval::new(0.0, 0.5).unwrap();
        assert!((attention_sum(&uniform, &half, 0) - 0.5).abs() <= 1.0 / t as f64);
        let empty = Interval::new(0.42, 0.42).unwrap();
        assert_eq!(attention_sum(&uniform, &empty, 0), 0.0);
    }

    #[test]
    fn centroid_examples() {
        let mut point = Mat::zeros(1, 8);
        point.set(0, 4, 1.0);
        assert_eq!(attention_centroid(&point, 0), 5.0);
        let uniform = Mat::filled(1, 8, 1.0 / 8.0);
        assert!((attention_centroid(&uniform, 0) - 4.5).abs() < 1e-12);
    }
}
