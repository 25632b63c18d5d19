//! Pseudo-video composition.
//!
//! A foreground video is re-sampled with a random stride, inserted into a
//! background video at a random index, and the result is re-sampled to a
//! fixed length `T`. The foreground's extent, optionally shrunk by random
//! boundary offsets, is the paragraph-level pseudo label.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSequence;
use crate::error::{Error, Result};
use crate::interval::Interval;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeConfig {
    /// Output length of every pseudo video, in clips.
    pub t: usize,
    /// Foreground stride range `[lo, hi]`.
    pub rrs_stride_range: [f64; 2],
    /// Boundary-shift fraction `p`; offsets are drawn from `U[0, p · rL]`.
    pub rbs_fraction: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self { t: 64, rrs_stride_range: [1.0, 3.0], rbs_fraction: 0.1 }
    }
}

impl ComposeConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.rrs_stride_range;
        if self.t < 2 {
            return Err(Error::Config(format!("compose.t must be at least 2, got {}", self.t)));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid rrs_stride_range [{lo}, {hi}]")));
        }
        if !(0.0..0.5).contains(&self.rbs_fraction) {
            return Err(Error::Config(format!(
                "rbs_fraction must lie in [0, 0.5) so shifted boundaries cannot cross, got {}",
                self.rbs_fraction
            )));
        }
        Ok(())
    }
}

/// A feature sequence tagged with its video id.
#[derive(Clone, Copy, Debug)]
pub struct VideoRef<'a> {
    pub id: &'a str,
    pub features: &'a FeatureSequence,
}

/// How a pseudo video was assembled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub fg_video_id: String,
    pub bg_video_id: String,
    /// Insertion index into the background, in `0..=L_bg`.
    pub insert_index: usize,
    pub stride: f64,
    /// `r = rL / L`.
    pub rescale: f64,
    pub fg_len: usize,
    pub fg_rescaled_len: usize,
    pub bg_len: usize,
    pub offset_start: f64,
    pub offset_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoComposition {
    pub features: FeatureSequence,
    pub pseudo_interval: Interval,
    pub provenance: Provenance,
}

/// Strided nearest-index re-sampling with a given stride.
pub fn rrs_with_stride(fg: &FeatureSequence, stride: f64) -> (FeatureSequence, f64) {
    let len = fg.len();
    let out_len = ((len as f64 / stride).ceil() as usize).max(1);
    let mut values = Vec::with_capacity(out_len * fg.dim());
    for k in 0..out_len {
        let src = ((k as f64 * stride).round() as usize).min(len - 1);
        values.extend_from_slice(fg.row(src));
    }
    let seq = FeatureSequence::new(out_len, fg.dim(), values).expect("non-empty re-sample");
    (seq, out_len as f64 / len as f64)
}

/// Random re-sampling: stride `s ~ U[lo, hi]`, see [`rrs_with_stride`].
pub fn rrs<R: Rng + ?Sized>(fg: &FeatureSequence, stride_range: [f64; 2], rng: &mut R) -> (FeatureSequence, f64, f64) {
    let [lo, hi] = stride_range;
    let s = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let (seq, r) = rrs_with_stride(fg, s);
    (seq, r, s)
}

/// Linear re-sampling to `t` clips.
///
/// Output clip `j` reads the source at continuous index
/// `(j + 0.5) · L / t − 0.5`, so clip centers map onto clip centers and an
/// input of length `t` is returned unchanged.
pub fn nrs(seq: &FeatureSequence, t: usize) -> FeatureSequence {
    let len = seq.len();
    let dim = seq.dim();
    let mut values = Vec::with_capacity(t * dim);
    for j in 0..t {
        let x = ((j as f64 + 0.5) * len as f64 / t as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        let w = x - i0 as f64;
        if w == 0.0 {
            values.extend_from_slice(seq.row(i0));
        } else {
            let (a, b) = (seq.row(i0), seq.row(i1));
            values.extend(a.iter().zip(b).map(|(&p, &q)| ((1.0 - w) * f64::from(p) + w * f64::from(q)) as f32));
        }
    }
    FeatureSequence::new(t, dim, values).expect("finite interpolation")
}

/// Composes a pseudo video from a foreground and a background.
pub fn compose<R: Rng + ?Sized>(
    fg: VideoRef<'_>,
    bg: VideoRef<'_>,
    config: &ComposeConfig,
    rng: &mut R,
) -> Result<PseudoComposition> {
    config.validate()?;
    if fg.id == bg.id {
        return Err(Error::InvalidArgument(format!("foreground and background are both `{}`", fg.id)));
    }
    if fg.features.dim() != bg.features.dim() {
        return Err(Error::InvalidArgument("foreground and background feature widths differ".into()));
    }
    let (scaled, r, stride) = rrs(fg.features, config.rrs_stride_range, rng);
    let bg_len = bg.features.len();
    let insert = rng.random_range(0..=bg_len);
    let rl = scaled.len() as f64;
    let max_shift = config.rbs_fraction * rl;
    let mut shift = || if max_shift > 0.0 { rng.random_range(0.0..=max_shift) } else { 0.0 };
    let (d_st, d_ed) = (shift(), shift());

    let mut values = Vec::with_capacity((bg_len + scaled.len()) * bg.features.dim());
    values.extend_from_slice(bg.features.rows_range(0, insert));
    values.extend_from_slice(scaled.values());
    values.extend_from_slice(bg.features.rows_range(insert, bg_len));
    let joined = FeatureSequence::new(bg_len + scaled.len(), bg.features.dim(), values)?;
    let features = nrs(&joined, config.t);

    let total = rl + bg_len as f64;
    let st = (insert as f64 + d_st) / total;
    let ed = (insert as f64 + rl - d_ed) / total;
    let pseudo_interval = Interval::new(st.clamp(0.0, 1.0), ed.clamp(0.0, 1.0))?;
    Ok(PseudoComposition {
        features,
        pseudo_interval,
        provenance: Provenance {
            fg_video_id: fg.id.to_string(),
            bg_video_id: bg.id.to_string(),
            insert_index: insert,
            stride,
            rescale: r,
            fg_len: fg.features.len(),
            fg_rescaled_len: scaled.len(),
            bg_len,
            offset_start: d_st,
            offset_end: d_ed,
        },
    })
}

/// `m(t) = 1` iff clip center `(t + 0.5) / T` lies inside `interval`.
pub fn attention_mask(interval: &Interval, t: usize) -> Vec<f64> {
    (0..t).map(|i| f64::from(u8::from(interval.contains((i as f64 + 0.5) / t as f64)))).collect()
}

/// Uniform background index over `0..pool_len`, excluding `fg_index`.
pub fn pick_background<R: Rng + ?Sized>(pool_len: usize, fg_index: usize, rng: &mut R) -> Option<usize> {
    if pool_len < 2 {
        return None;
    }
    let k = rng.random_range(0..pool_len - 1);
    Some(if k >= fg_index { k + 1 } else { k })
}

/// Composer with a call counter, used by the trainer.
#[derive(Debug, Default)]
pub struct PseudoComposer {
    pub config: ComposeConfig,
    calls: AtomicUsize,
}

impl PseudoComposer {
    pub fn new(config: ComposeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, calls: AtomicUsize::new(0) })
    }

    pub fn compose<R: Rng + ?Sized>(&self, fg: VideoRef<'_>, bg: VideoRef<'_>, rng: &mut R) -> Result<PseudoComposition> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        compose(fg, bg, &self.config, rng)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
