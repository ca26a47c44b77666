//! Mask representation and the region (J) / boundary (F) evaluation metrics.

mod mask;

pub use mask::BinaryMask;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// One mask per video frame, all with the same dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BinaryMask>", into = "Vec<BinaryMask>")]
pub struct MaskSequence(Vec<BinaryMask>);

impl TryFrom<Vec<BinaryMask>> for MaskSequence {
    type Error = MetricsError;

    fn try_from(masks: Vec<BinaryMask>) -> Result<Self, Self::Error> {
        MaskSequence::new(masks)
    }
}

impl From<MaskSequence> for Vec<BinaryMask> {
    fn from(seq: MaskSequence) -> Self {
        seq.0
    }
}

impl MaskSequence {
    pub fn new(masks: Vec<BinaryMask>) -> Result<Self, MetricsError> {
        if let Some(first) = masks.first() {
            for (i, m) in masks.iter().enumerate() {
                if m.width() != first.width() || m.height() != first.height() {
                    return Err(MetricsError::Shape(format!(
                        "frame {i} is {}x{}, frame 0 is {}x{}",
                        m.width(),
                        m.height(),
                        first.width(),
                        first.height()
                    )));
                }
            }
        }
        Ok(MaskSequence(masks))
    }

    /// `len` all-background masks.
    pub fn empty(width: u32, height: u32, len: usize) -> Self {
        MaskSequence(vec![BinaryMask::empty(width, height); len])
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_masks(self) -> Vec<BinaryMask> {
        self.0
    }
}

/// Sequence-level scores. `jf` is always the mean of `j_mean` and `f_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf: f64,
}

impl EvalScores {
    pub fn new(j_mean: f64, f_mean: f64) -> Self {
        EvalScores {
            j_mean,
            f_mean,
            jf: (j_mean + f_mean) / 2.0,
        }
    }

    pub fn zero() -> Self {
        EvalScores::new(0.0, 0.0)
    }
}

/// Region similarity |a∩b| / |a∪b|. Two empty masks score 1.0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Boundary matching radius in pixels for a frame of the given size.
pub fn boundary_tolerance(width: u32, height: u32) -> i64 {
    let diag = (f64::from(width).powi(2) + f64::from(height).powi(2)).sqrt();
    (0.008 * diag).ceil() as i64
}

/// Foreground pixels with at least one 4-neighbour that is background or
/// outside the frame.
pub fn boundary_map(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let px = mask.decode();
    let mut out = vec![false; px.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !px[i] {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !px[i - 1]
                || !px[i + 1]
                || !px[i - w]
                || !px[i + w];
            out[i] = edge;
        }
    }
    out
}

/// Fraction of `src` boundary pixels that lie within `radius` (Euclidean,
/// pixel centres) of some `dst` boundary pixel, plus the source count.
fn matched_fraction(src: &[bool], dst: &[bool], w: usize, h: usize, radius: i64) -> (usize, usize) {
    let offsets: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= radius * radius)
        .collect();
    let (wi, hi) = (w as i64, h as i64);
    let mut total = 0;
    let mut matched = 0;
    for (i, _) in src.iter().enumerate().filter(|(_, &b)| b) {
        total += 1;
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let hit = offsets.iter().any(|&(dx, dy)| {
            let (xx, yy) = (x + dx, y + dy);
            xx >= 0 && yy >= 0 && xx < wi && yy < hi && dst[(yy * wi + xx) as usize]
        });
        if hit {
            matched += 1;
        }
    }
    (matched, total)
}

/// Boundary F-measure with tolerance `ceil(0.008 * diagonal)`.
pub fn boundary_f(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    a.check_shape(b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    let ba = boundary_map(a);
    let bb = boundary_map(b);
    let a_has = ba.iter().any(|&v| v);
    let b_has = bb.iter().any(|&v| v);
    match (a_has, b_has) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let r = boundary_tolerance(a.width(), a.height());
    let (pm, pt) = matched_fraction(&ba, &bb, w, h, r);
    let (rm, rt) = matched_fraction(&bb, &ba, w, h, r);
    let precision = pm as f64 / pt as f64;
    let recall = rm as f64 / rt as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-frame means of J and F over two aligned sequences.
pub fn sequence_scores(pred: &MaskSequence, gt: &MaskSequence) -> Result<EvalScores, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Shape(format!(
            "sequence lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(MetricsError::Parameter("empty sequences".into()));
    }
    let mut j_sum = 0.0;
    let mut f_sum = 0.0;
    for (p, g) in pred.masks().iter().zip(gt.masks()) {
        j_sum += iou(p, g)?;
        f_sum += boundary_f(p, g)?;
    }
    let n = gt.len() as f64;
    Ok(EvalScores::new(j_sum / n, f_sum / n))
}

/// Mean of per-sample region similarity.
pub fn aggregate_miou(per_sample_j: &[f64]) -> Result<f64, MetricsError> {
    if per_sample_j.is_empty() {
        return Err(MetricsError::Parameter(
            "cannot aggregate an empty list".into(),
        ));
    }
    Ok(per_sample_j.iter().sum::<f64>() / per_sample_j.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(w: u32, h: u32, filled: std::ops::Range<u32>) -> BinaryMask {
        let px: Vec<bool> = (0..w * h).map(|i| filled.contains(&(i / w))).collect();
        BinaryMask::encode(w, h, &px).unwrap()
    }

    fn boxed(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        let px: Vec<bool> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                x >= x0 && x <= x1 && y >= y0 && y <= y1
            })
            .collect();
        BinaryMask::encode(w, h, &px).unwrap()
    }

    #[test]
    fn iou_identity_and_overlap() {
        let a = rows(4, 4, 0..2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = rows(4, 4, 1..3);
        // 4 shared pixels over 12 in the union
        assert!((iou(&a, &b).unwrap() - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn empty_conventions() {
        let e = BinaryMask::empty(4, 4);
        let a = rows(4, 4, 0..1);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &a).unwrap(), 0.0);
        assert_eq!(boundary_f(&e, &e).unwrap(), 1.0);
        assert_eq!(boundary_f(&e, &a).unwrap(), 0.0);
        assert_eq!(boundary_f(&a, &e).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = BinaryMask::empty(4, 4);
        let b = BinaryMask::empty(4, 5);
        assert!(matches!(iou(&a, &b), Err(MetricsError::Shape(_))));
        assert!(matches!(boundary_f(&a, &b), Err(MetricsError::Shape(_))));
    }

    #[test]
    fn tolerance_on_common_sizes() {
        assert_eq!(boundary_tolerance(64, 64), 1);
        assert_eq!(boundary_tolerance(854, 480), 8);
        assert_eq!(boundary_tolerance(8, 8), 1);
    }

    #[test]
    fn shifted_box_boundary() {
        // 64x64: r = 1, so a one pixel shift keeps every boundary pixel matched
        let a = boxed(64, 64, 10, 10, 30, 30);
        let b = boxed(64, 64, 11, 10, 31, 30);
        assert_eq!(boundary_f(&a, &a).unwrap(), 1.0);
        assert_eq!(boundary_f(&a, &b).unwrap(), 1.0);
        // a three pixel shift leaves only the horizontal edges matched
        let c = boxed(64, 64, 13, 10, 33, 30);
        let f = boundary_f(&a, &c).unwrap();
        assert!(f > 0.0 && f < 1.0);
    }

    #[test]
    fn sequence_means() {
        let a = rows(4, 4, 0..2);
        let b = rows(4, 4, 2..4);
        let pred = MaskSequence::new(vec![a.clone(), a.clone()]).unwrap();
        let gt = MaskSequence::new(vec![a.clone(), b]).unwrap();
        let s = sequence_scores(&pred, &gt).unwrap();
        assert_eq!(s.j_mean, 0.5);
        assert_eq!(s.jf, (s.j_mean + s.f_mean) / 2.0);
        let same = sequence_scores(&gt, &gt).unwrap();
        assert_eq!(same, EvalScores::new(1.0, 1.0));
        let short = MaskSequence::new(vec![a]).unwrap();
        assert!(matches!(
            sequence_scores(&short, &gt),
            Err(MetricsError::Shape(_))
        ));
    }

    #[test]
    fn miou_aggregation() {
        assert_eq!(aggregate_miou(&[0.5, 1.0]).unwrap(), 0.75);
        assert_eq!(aggregate_miou(&[0.3]).unwrap(), 0.3);
        assert!(matches!(
            aggregate_miou(&[]),
            Err(MetricsError::Parameter(_))
        ));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let r = MaskSequence::new(vec![BinaryMask::empty(4, 4), BinaryMask::empty(5, 4)]);
        assert!(matches!(r, Err(MetricsError::Shape(_))));
    }
}
