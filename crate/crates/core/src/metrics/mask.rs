use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Binary segmentation mask stored as row-major run lengths.
///
/// Runs alternate background/foreground starting with background. The
/// representation is canonical: only the leading run may be zero, so every
/// pixel grid has exactly one encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

#[derive(Deserialize)]
struct RawMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl TryFrom<RawMask> for BinaryMask {
    type Error = MetricsError;

    fn try_from(raw: RawMask) -> Result<Self, Self::Error> {
        BinaryMask::from_runs(raw.width, raw.height, raw.runs)
    }
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            runs: vec![width * height],
        }
    }

    /// Validates a run list and wraps it.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, MetricsError> {
        if width == 0 || height == 0 {
            return Err(MetricsError::Codec(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        let expected = u64::from(width) * u64::from(height);
        if total != expected {
            return Err(MetricsError::Codec(format!(
                "runs sum to {total}, expected {expected}"
            )));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(MetricsError::Codec(format!(
                "zero-length run at index {} (only the leading run may be zero)",
                pos + 1
            )));
        }
        Ok(BinaryMask { width, height, runs })
    }

    /// Canonical run-length encoding of a row-major pixel grid.
    pub fn encode(width: u32, height: u32, pixels: &[bool]) -> Result<Self, MetricsError> {
        if width == 0 || height == 0 {
            return Err(MetricsError::Codec(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        let n = width as usize * height as usize;
        if pixels.len() != n {
            return Err(MetricsError::Codec(format!(
                "pixel buffer has {} entries, expected {n}",
                pixels.len()
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &p in pixels {
            if p != current {
                runs.push(count);
                count = 0;
                current = p;
            }
            count += 1;
        }
        runs.push(count);
        Ok(BinaryMask { width, height, runs })
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.pixel_count());
        let mut value = false;
        for &r in &self.runs {
            out.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() == 1
    }

    /// Foreground intervals as half-open `[start, end)` pixel offsets.
    fn foreground_intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += u64::from(r);
            (i % 2 == 1).then_some((start, pos))
        })
    }

    /// Foreground overlap computed directly on the run representation.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64, MetricsError> {
        self.check_shape(other)?;
        let a: Vec<(u64, u64)> = self.foreground_intervals().collect();
        let b: Vec<(u64, u64)> = other.foreground_intervals().collect();
        let (mut i, mut j, mut acc) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                acc += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(acc)
    }

    pub(crate) fn check_shape(&self, other: &BinaryMask) -> Result<(), MetricsError> {
        if self.width != other.width || self.height != other.height {
            return Err(MetricsError::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Tight bounding box `(x_min, y_min, x_max, y_max)` of the foreground.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        if self.is_empty() {
            return None;
        }
        let w = u64::from(self.width);
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for (start, end) in self.foreground_intervals() {
            let first_row = (start / w) as u32;
            let last_row = ((end - 1) / w) as u32;
            y0 = y0.min(first_row);
            y1 = y1.max(last_row);
            if first_row == last_row {
                x0 = x0.min((start % w) as u32);
                x1 = x1.max(((end - 1) % w) as u32);
            } else {
                // wraps a row boundary: the tail of one row meets the head of the next
                x0 = 0;
                x1 = self.width - 1;
            }
        }
        Some((x0, y0, x1, y1))
    }

    /// Morphological erosion with a square structuring element of the given
    /// radius. Pixels outside the frame count as background.
    pub fn erode(&self, radius: u32) -> BinaryMask {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let src = self.decode();
        let r = radius as i64;
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                if !src[(y * w + x) as usize] {
                    continue;
                }
                let keep = (y - r..=y + r).all(|yy| {
                    (x - r..=x + r).all(|xx| {
                        xx >= 0 && yy >= 0 && xx < w && yy < h && src[(yy * w + xx) as usize]
                    })
                });
                out[(y * w + x) as usize] = keep;
            }
        }
        BinaryMask::encode(self.width, self.height, &out).expect("dimensions preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_grid_is_single_background_run() {
        let m = BinaryMask::encode(2, 2, &[false; 4]).unwrap();
        assert_eq!(m.runs(), &[4]);
        assert!(m.is_empty());
    }

    #[test]
    fn all_one_grid_has_leading_zero() {
        let m = BinaryMask::encode(2, 2, &[true; 4]).unwrap();
        assert_eq!(m.runs(), &[0, 4]);
        assert_eq!(m.area(), 4);
    }

    #[test]
    fn bad_runs_rejected() {
        assert!(matches!(
            BinaryMask::from_runs(2, 2, vec![1, 2]),
            Err(MetricsError::Codec(_))
        ));
        assert!(matches!(
            BinaryMask::from_runs(2, 2, vec![2, 0, 2]),
            Err(MetricsError::Codec(_))
        ));
        assert!(BinaryMask::from_runs(2, 2, vec![0, 2, 2]).is_ok());
    }

    #[test]
    fn deserialization_enforces_canonical_form() {
        let bad = r#"{"width":2,"height":2,"runs":[3]}"#;
        assert!(serde_json::from_str::<BinaryMask>(bad).is_err());
        let good = r#"{"width":2,"height":2,"runs":[1,2,1]}"#;
        let m: BinaryMask = serde_json::from_str(good).unwrap();
        assert_eq!(m.decode(), vec![false, true, true, false]);
    }

    #[test]
    fn bbox_of_wrapping_intervals() {
        // 4x3 grid, foreground covers the end of row 0 and the start of row 1
        let mut px = vec![false; 12];
        px[3] = true;
        px[4] = true;
        let m = BinaryMask::encode(4, 3, &px).unwrap();
        assert_eq!(m.bbox(), Some((0, 0, 3, 1)));

        let mut px = vec![false; 12];
        px[5] = true;
        px[6] = true;
        px[9] = true;
        let m = BinaryMask::encode(4, 3, &px).unwrap();
        assert_eq!(m.bbox(), Some((1, 1, 2, 2)));
    }

    #[test]
    fn erode_square() {
        let mut px = vec![false; 64];
        for y in 1..6 {
            for x in 1..6 {
                px[y * 8 + x] = true;
            }
        }
        let m = BinaryMask::encode(8, 8, &px).unwrap();
        let e = m.erode(1);
        assert_eq!(e.area(), 9);
        assert_eq!(e.bbox(), Some((2, 2, 4, 4)));
    }
}
