use super::{Keyframe, ObjectSpec, ScenarioError, Shape, VideoSpec};
use crate::metrics::BinaryMask;

/// Interpolated object geometry at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
}

impl From<&Keyframe> for Geometry {
    fn from(k: &Keyframe) -> Self {
        Geometry {
            cx: k.cx,
            cy: k.cy,
            half_w: k.half_w,
            half_h: k.half_h,
        }
    }
}

/// Piecewise-linear interpolation of the trajectory; held constant before the
/// first and after the last keyframe.
pub fn object_geometry(obj: &ObjectSpec, frame: u32) -> Geometry {
    let traj = &obj.trajectory;
    let first = &traj[0];
    if frame <= first.frame {
        return first.into();
    }
    let last = &traj[traj.len() - 1];
    if frame >= last.frame {
        return last.into();
    }
    let i = traj.partition_point(|k| k.frame <= frame);
    let (a, b) = (&traj[i - 1], &traj[i]);
    let t = f64::from(frame - a.frame) / f64::from(b.frame - a.frame);
    let lerp = |x: f64, y: f64| x + (y - x) * t;
    Geometry {
        cx: lerp(a.cx, b.cx),
        cy: lerp(a.cy, b.cy),
        half_w: lerp(a.half_w, b.half_w),
        half_h: lerp(a.half_h, b.half_h),
    }
}

// Normalized squared offset; a zero semi-axis only admits the exact centre.
fn axis_term(offset: f64, half: f64) -> f64 {
    if half > 0.0 {
        (offset / half).powi(2)
    } else if offset == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Ground-truth mask of an object at a frame. Pixel `(x, y)` has its centre at
/// integer coordinates `(x, y)`.
pub fn rasterize_object(
    obj: &ObjectSpec,
    frame: u32,
    video: &VideoSpec,
) -> Result<BinaryMask, ScenarioError> {
    if frame >= video.num_frames {
        return Err(ScenarioError::Range {
            frame,
            num_frames: video.num_frames,
        });
    }
    let (w, h) = (video.width, video.height);
    if !obj.is_visible(frame) {
        return Ok(BinaryMask::empty(w, h));
    }
    let g = object_geometry(obj, frame);
    let mut px = vec![false; w as usize * h as usize];
    let x_lo = (g.cx - g.half_w).ceil().max(0.0);
    let x_hi = (g.cx + g.half_w).floor().min(f64::from(w) - 1.0);
    let y_lo = (g.cy - g.half_h).ceil().max(0.0);
    let y_hi = (g.cy + g.half_h).floor().min(f64::from(h) - 1.0);
    if x_lo <= x_hi && y_lo <= y_hi {
        for y in y_lo as u32..=y_hi as u32 {
            for x in x_lo as u32..=x_hi as u32 {
                let dx = f64::from(x) - g.cx;
                let dy = f64::from(y) - g.cy;
                let inside = match obj.shape {
                    Shape::Rectangle => dx.abs() <= g.half_w && dy.abs() <= g.half_h,
                    Shape::Ellipse => axis_term(dx, g.half_w) + axis_term(dy, g.half_h) <= 1.0,
                };
                if inside {
                    px[(y * w + x) as usize] = true;
                }
            }
        }
    }
    Ok(BinaryMask::encode(w, h, &px).expect("buffer sized to the frame"))
}
