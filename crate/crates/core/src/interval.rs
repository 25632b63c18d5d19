//! Normalized temporal intervals, overlap measures, anchor boxes and
//! sinusoidal position embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Mat};

/// A span `[start, end]` of normalized time, `0 <= start <= end <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    start: f64,
    end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end > 1.0 || start > end {
            return Err(Error::InvalidInterval { start, end });
        }
        Ok(Self { start, end })
    }

    /// Clamps both ends into `[0, 1]` and orders them.
    pub fn clamped(a: f64, b: f64) -> Self {
        let a = a.clamp(0.0, 1.0);
        let b = b.clamp(0.0, 1.0);
        Self { start: a.min(b), end: a.max(b) }
    }

    pub const FULL: Interval = Interval { start: 0.0, end: 1.0 };

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.end
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn intersection_len(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Smallest interval enclosing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { start: self.start.min(other.start), end: self.end.max(other.end) }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou − |hull \ union| / |hull|`.
pub fn giou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.length() + b.length() - inter;
    let hull = a.hull(b).length();
    let base = if union <= 0.0 { 0.0 } else { inter / union };
    if hull <= 0.0 {
        base
    } else {
        base - (hull - union) / hull
    }
}

/// Angular scale applied to normalized positions before the frequency ladder.
pub const PE_SCALE: f64 = 16.0 * std::f64::consts::PI;
/// Ratio between the highest and lowest embedding frequency.
pub const PE_TEMPERATURE: f64 = 64.0;

/// Sinusoidal embedding of normalized positions.
///
/// Row `i`, column `2k` holds `sin(p_i · s / τ^(2k/dim))` and column `2k+1`
/// the matching cosine, with `s = PE_SCALE` and `τ = PE_TEMPERATURE`.
pub fn sinusoidal_embedding(positions: &[f64], dim: usize) -> Result<Mat> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("embedding dim must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> =
        (0..half).map(|k| PE_SCALE / PE_TEMPERATURE.powf(2.0 * k as f64 / dim as f64)).collect();
    let mut out = Mat::zeros(positions.len(), dim);
    for (i, &p) in positions.iter().enumerate() {
        let row = out.row_mut(i);
        for (k, f) in freqs.iter().enumerate() {
            let (s, c) = (p * f).sin_cos();
            row[2 * k] = s;
            row[2 * k + 1] = c;
        }
    }
    Ok(out)
}

/// Normalized centers `(t + 0.5) / len` of `len` clips.
pub fn clip_centers(len: usize) -> Vec<f64> {
    (0..len).map(|t| (t as f64 + 0.5) / len as f64).collect()
}

/// Anchor box in logit space: `center` and `width` are pre-logistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterWidthBox {
    pub center: f64,
    pub width: f64,
}

impl CenterWidthBox {
    pub fn new(center: f64, width: f64) -> Self {
        Self { center, width }
    }

    pub fn to_interval(&self) -> Interval {
        box_to_interval(self)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn box_to_interval(b: &CenterWidthBox) -> Interval {
    let c = sigmoid(b.center);
    let w = sigmoid(b.width);
    Interval::clamped(c - 0.5 * w, c + 0.5 * w)
}

pub fn interval_to_box(iv: &Interval) -> Result<CenterWidthBox> {
    let c = iv.center();
    let w = iv.length();
    if !(w > 0.0 && w < 1.0 && c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "interval [{}, {}] has no logit-space box",
            iv.start(),
            iv.end()
        )));
    }
    Ok(CenterWidthBox { center: logit(c), width: logit(w) })
}
