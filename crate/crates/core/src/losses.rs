//! Training objectives, built on the tape so they can be differentiated.
//!
//! Intervals enter as `R x 2` tape nodes of `[start, end]` rows and
//! attention maps as row-stochastic `R x T` nodes. Row 0 is always the
//! paragraph query; rows `1..=N` are the sentences.

use serde::{Deserialize, Serialize};

use crate::compose::attention_mask;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::model::{attention_sum, boxes_to_intervals, DecoderState};
use crate::tensor::{Graph, Mat, Var};

/// Floor applied to in-mask attention mass before the logarithm.
pub const MASS_FLOOR: f64 = 1e-8;
const DIV_EPS: f64 = 1e-9;
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub screg: f64,
    pub oga: f64,
    pub csc: f64,
    pub cb: f64,
    pub ar: f64,
    pub pa: f64,
    /// Attention-mass gate of the self-consistent regression.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { screg: 2.0, oga: 1.0, csc: 10.0, cb: 1.0, ar: 1.0, pa: 1.0, beta: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.screg, self.oga, self.csc, self.cb, self.ar, self.pa];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Mat::scalar(0.0))
}

/// `L1 + (1 − GIoU)` between a `1 x 2` predicted row and a fixed target.
pub fn interval_regression(g: &mut Graph, pred: Var, target: &Interval) -> Var {
    let s = g.slice_cols(pred, 0, 1);
    let e = g.slice_cols(pred, 1, 1);
    let ts = g.constant(Mat::scalar(target.start()));
    let te = g.constant(Mat::scalar(target.end()));

    let ds = g.sub(s, ts);
    let ds = g.abs(ds);
    let de = g.sub(e, te);
    let de = g.abs(de);
    let l1 = g.add(ds, de);

    let lo = g.maximum(s, ts);
    let hi = g.minimum(e, te);
    let inter = g.sub(hi, lo);
    let inter = g.relu(inter);
    let len = g.sub(e, s);
    let len = g.offset(len, target.length());
    let union = g.sub(len, inter);
    let hull_lo = g.minimum(s, ts);
    let hull_hi = g.maximum(e, te);
    let hull = g.sub(hull_hi, hull_lo);
    let eps = g.constant(Mat::scalar(DIV_EPS));
    let union_safe = g.maximum(union, eps);
    let hull_safe = g.maximum(hull, eps);
    let iou = g.div(inter, union_safe);
    let gap = g.sub(hull, union);
    let penalty = g.div(gap, hull_safe);
    let giou = g.sub(iou, penalty);
    // 1 − giou
    let neg = g.neg(giou);
    let one_minus = g.offset(neg, 1.0);
    g.add(l1, one_minus)
}

/// Regression on the paragraph row, active only when `s_att > beta`.
/// The gate is a plain number and carries no gradient.
pub fn self_consistent_regression(g: &mut Graph, pred: Var, target: &Interval, s_att: f64, beta: f64) -> Var {
    if s_att > beta {
        interval_regression(g, pred, target)
    } else {
        zero(g)
    }
}

/// `R x 1` column of `Σ_{t=1..T} t · α(t)` for each attention row.
pub fn centroids(g: &mut Graph, attention: Var) -> Var {
    let t = g.shape(attention).1;
    let idx: Vec<f64> = (1..=t).map(|i| i as f64).collect();
    let idx = g.constant(Mat::col_vector(&idx));
    g.matmul(attention, idx)
}

/// `Σ_j max(0, margin + x_j − x_{j+1})` over a column of sentence values.
fn ordering_hinge(g: &mut Graph, column: Var, margin: f64) -> Var {
    let n = g.shape(column).0;
    if n < 2 {
        return zero(g);
    }
    let prev = g.slice_rows(column, 0, n - 1);
    let next = g.slice_rows(column, 1, n - 1);
    let d = g.sub(prev, next);
    let d = g.offset(d, margin);
    let d = g.relu(d);
    g.sum(d)
}

/// Hinge on adjacent sentence attention centroids with margin `Δm · T`.
pub fn order_guided_attention(g: &mut Graph, attention: Var, delta_m: f64) -> Var {
    let (rows, t) = g.shape(attention);
    let c = centroids(g, attention);
    let sentences = g.slice_rows(c, 1, rows - 1);
    ordering_hinge(g, sentences, delta_m * t as f64)
}

/// Mean binary cross-entropy of the paragraph row plus the sentence rows'
/// mean, from logits. `labels` is `(N+1) x K`.
pub fn concept_loss(g: &mut Graph, logits: Var, labels: &Mat) -> Var {
    let (rows, k) = g.shape(logits);
    assert_eq!(labels.shape(), (rows, k), "concept label shape mismatch");
    let y = g.constant(labels.clone());
    let sp = g.softplus(logits);
    let yx = g.mul(y, logits);
    let bce = g.sub(sp, yx);
    let para = g.slice_rows(bce, 0, 1);
    let para = g.sum(para);
    let para = g.scale(para, 1.0 / k as f64);
    let sent = g.slice_rows(bce, 1, rows - 1);
    let sent = g.sum(sent);
    let sent = g.scale(sent, 1.0 / ((rows - 1) * k) as f64);
    g.add(para, sent)
}

/// Row-wise cosine similarity, `R x 1`.
fn row_cosine(g: &mut Graph, a: Var, b: Var) -> Var {
    let ab = g.mul(a, b);
    let dot = g.sum_rows(ab);
    let aa = g.square(a);
    let na = g.sum_rows(aa);
    let na = g.offset(na, NORM_EPS);
    let na = g.sqrt(na);
    let bb = g.square(b);
    let nb = g.sum_rows(bb);
    let nb = g.offset(nb, NORM_EPS);
    let nb = g.sqrt(nb);
    let den = g.mul(na, nb);
    g.div(dot, den)
}

/// Cosine consistency between the branches' decoder outputs. Sentence rows
/// pull the augmentation branch towards a frozen inference branch; the
/// paragraph row pulls the inference branch towards a frozen augmentation
/// branch.
pub fn cross_branch(g: &mut Graph, aug: Var, inf: Var) -> Var {
    let rows = g.shape(aug).0;
    let n = rows - 1;
    let aug_s = g.slice_rows(aug, 1, n);
    let inf_s = g.slice_rows(inf, 1, n);
    let inf_s = g.stop_gradient(inf_s);
    let cos_s = row_cosine(g, aug_s, inf_s);
    let sum_s = g.sum(cos_s);
    let mean_s = g.scale(sum_s, -1.0 / n as f64);
    let term_s = g.offset(mean_s, 1.0);

    let aug_p = g.slice_rows(aug, 0, 1);
    let aug_p = g.stop_gradient(aug_p);
    let inf_p = g.slice_rows(inf, 0, 1);
    let cos_p = row_cosine(g, aug_p, inf_p);
    let neg = g.neg(cos_p);
    let term_p = g.offset(neg, 1.0);
    g.add(term_s, term_p)
}

/// Hinge on adjacent sentence anchor centers with margin `d`. `anchors`
/// holds logit-space boxes, `(N+1) x 2`.
pub fn anchor_ranking(g: &mut Graph, anchors: Var, d: f64) -> Var {
    let rows = g.shape(anchors).0;
    let iv = boxes_to_intervals(g, anchors);
    let sum = g.sum_rows(iv);
    let centers = g.scale(sum, 0.5);
    let sentences = g.slice_rows(centers, 1, rows - 1);
    ordering_hinge(g, sentences, d)
}

/// `−(1/K) Σ_layers ln max(Σ_t m(t) α(row, t), floor)`.
pub fn pseudo_attention(g: &mut Graph, attentions: &[Var], row: usize, mask: &[f64]) -> Var {
    let m = g.constant(Mat::col_vector(mask));
    let floor = g.constant(Mat::scalar(MASS_FLOOR));
    let mut logs = Vec::with_capacity(attentions.len());
    for &a in attentions {
        let r = g.row(a, row);
        let mass = g.matmul(r, m);
        let mass = g.maximum(mass, floor);
        logs.push(g.ln(mass));
    }
    let total = g.add_all(&logs);
    g.scale(total, -1.0 / attentions.len() as f64)
}

/// Sentence-level regression plus attention localization against timestamps.
pub fn fully_supervised(g: &mut Graph, intervals: Var, attentions: &[Var], gt: &[Interval]) -> Var {
    let rows = g.shape(intervals).0;
    assert_eq!(rows, gt.len() + 1, "one gt interval per sentence row");
    let t = g.shape(attentions[0]).1;
    let mut terms = Vec::with_capacity(2 * gt.len());
    for (j, target) in gt.iter().enumerate() {
        let pred = g.row(intervals, j + 1);
        terms.push(interval_regression(g, pred, target));
        let mask = attention_mask(target, t);
        terms.push(pseudo_attention(g, attentions, j + 1, &mask));
    }
    g.add_all(&terms)
}

/// Scalar values of every component, for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub screg: f64,
    pub oga: f64,
    pub csc: f64,
    pub cb: f64,
    pub ar: f64,
    pub pa: f64,
    pub fs: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.screg, self.oga, self.csc, self.cb, self.ar, self.pa, self.fs, self.total].iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &LossBreakdown) {
        self.screg += other.screg;
        self.oga += other.oga;
        self.csc += other.csc;
        self.cb += other.cb;
        self.ar += other.ar;
        self.pa += other.pa;
        self.fs += other.fs;
        self.total += other.total;
    }

    pub fn scale(&mut self, s: f64) {
        for x in [
            &mut self.screg,
            &mut self.oga,
            &mut self.csc,
            &mut self.cb,
            &mut self.ar,
            &mut self.pa,
            &mut self.fs,
            &mut self.total,
        ] {
            *x *= s;
        }
    }
}

/// Tape handles of the unweighted components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub screg: Var,
    pub oga: Var,
    pub csc: Var,
    pub cb: Var,
    pub ar: Var,
    pub pa: Var,
    pub fs: Option<Var>,
}

impl LossTerms {
    /// Weighted total; `fs` enters with unit weight.
    pub fn total(&self, g: &mut Graph, w: &LossWeights) -> Var {
        let parts = [
            (self.screg, w.screg),
            (self.oga, w.oga),
            (self.csc, w.csc),
            (self.cb, w.cb),
            (self.ar, w.ar),
            (self.pa, w.pa),
        ];
        let mut terms: Vec<Var> = parts.iter().map(|&(v, s)| g.scale(v, s)).collect();
        terms.extend(self.fs);
        g.add_all(&terms)
    }

    pub fn breakdown(&self, g: &Graph, total: Var) -> LossBreakdown {
        LossBreakdown {
            screg: g.item(self.screg),
            oga: g.item(self.oga),
            csc: g.item(self.csc),
            cb: g.item(self.cb),
            ar: g.item(self.ar),
            pa: g.item(self.pa),
            fs: self.fs.map_or(0.0, |v| g.item(v)),
            total: g.item(total),
        }
    }
}

/// Inputs of the weakly-supervised objective for one sample.
pub struct WeakInputs<'a> {
    pub aug: &'a DecoderState,
    pub inf: &'a DecoderState,
    pub concept_logits: Var,
    pub concept_labels: &'a Mat,
    pub pseudo_interval: &'a Interval,
    /// Clip count of the pseudo video.
    pub pseudo_len: usize,
}

/// All weakly-supervised components for one sample.
pub fn weakly_supervised_terms(g: &mut Graph, x: &WeakInputs<'_>, w: &LossWeights) -> LossTerms {
    let aug_last = *x.aug.last();
    let inf_last = *x.inf.last();
    let n = g.shape(inf_last.query).0 - 1;

    let s_att = attention_sum(g.value(aug_last.attention), x.pseudo_interval, 0);
    let para = g.row(x.aug.intervals, 0);
    let screg = self_consistent_regression(g, para, x.pseudo_interval, s_att, w.beta);

    let oga_inf = order_guided_attention(g, inf_last.attention, 1.0 / (2.0 * n as f64));
    let oga_aug = order_guided_attention(g, aug_last.attention, 1.0 / (4.0 * n as f64));
    let oga = g.add(oga_inf, oga_aug);

    let csc = concept_loss(g, x.concept_logits, x.concept_labels);
    let cb = cross_branch(g, aug_last.query, inf_last.query);
    let ar = anchor_ranking(g, inf_last.anchors, 1.0 / (2.0 * n as f64));

    let mask = attention_mask(x.pseudo_interval, x.pseudo_len);
    let maps: Vec<Var> = x.aug.layers.iter().map(|l| l.attention).collect();
    let pa = pseudo_attention(g, &maps, 0, &mask);
    LossTerms { screg, oga, csc, cb, ar, pa, fs: None }
}

/// `λ_screg·L_screg + λ_oga·L_oga + λ_csc·L_csc + λ_cb·L_cb + λ_ar·L_ar + λ_pa·L_pa`.
pub fn compose_weakly_supervised(g: &mut Graph, x: &WeakInputs<'_>, w: &LossWeights) -> (Var, LossTerms) {
    let terms = weakly_supervised_terms(g, x, w);
    (terms.total(g, w), terms)
}
