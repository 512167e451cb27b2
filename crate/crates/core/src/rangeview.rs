//! Spherical projection of LiDAR point clouds to range-view images and back.
//!
//! Pixel mapping: u = ⌊(0.5·(1 − atan2(y,x)/π))·W⌋, v = ⌊(1 − (elev −
//! fov_down)/(fov_up − fov_down))·H⌋ with elev = asin(z/range); both clamped
//! to the grid. Points outside the vertical field of view are skipped. When
//! points collide in a pixel the nearest one wins.

use crate::tensor::Tensor;
use crate::{scalar, HyldaError, Result, Scalar};

pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_Z: usize = 2;
pub const CH_RANGE: usize = 3;
pub const CH_REMISSION: usize = 4;
pub const CHANNELS: usize = 5;

/// Raw LiDAR frame: N points of (x, y, z, remission) with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S: Scalar> {
    pub frame_id: String,
    pub points: Vec<[S; 4]>,
    pub labels: Option<Vec<u8>>,
}

impl<S: Scalar> PointCloud<S> {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(HyldaError::Shape("empty input".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()) {
                return Err(HyldaError::Shape(format!("non-finite coordinate at point {i}")));
            }
            if p[3] < S::zero() || p[3] > S::one() {
                return Err(HyldaError::Shape(format!("remission out of [0,1] at point {i}")));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.points.len() {
                return Err(HyldaError::Shape(format!(
                    "{} labels for {} points",
                    l.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }
}

/// Sensor geometry and capture noise. Projection uses beams/width/fov; the
/// noise, dropout and range-limit fields drive synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub beams: usize,
    pub width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
    pub dropout_prob: f64,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.fov_up_deg <= self.fov_down_deg {
            return Err(HyldaError::Config("fov_up must exceed fov_down".into()));
        }
        if self.beams < 2 || self.width < 4 {
            return Err(HyldaError::Config("need beams >= 2 and width >= 4".into()));
        }
        if self.max_range <= 0.0 {
            return Err(HyldaError::Config("max_range must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(HyldaError::Config("dropout_prob must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Projected frame: [5,H,W] channels (x, y, z, range, remission) plus a
/// validity mask. Invalid pixels hold 0 before normalization and −1 after.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage<S: Scalar> {
    pub channels: Tensor<S>,
    pub valid: Vec<bool>,
    pub normalized: bool,
}

impl<S: Scalar> RangeImage<S> {
    pub fn h(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.channels.shape()[2]
    }
}

/// Per-pixel semantic class ids; 0 is background/void.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub ids: Vec<u8>,
}

/// Per-channel clipping bounds for normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats<S: Scalar> {
    pub low: [S; CHANNELS],
    pub high: [S; CHANNELS],
}

/// Projection record: the per-pixel winning point index (−1 when empty) and
/// the pixel every point projected to (None when outside the field of view).
/// The per-point side is what lets occluded points be labeled on
/// backprojection.
#[derive(Debug, Clone)]
pub struct ProjectionIndex {
    pub h: usize,
    pub w: usize,
    pub winner: Vec<i32>,
    pub pixel_of_point: Vec<Option<(u16, u16)>>,
}

/// Projects a cloud onto the sensor grid. Nearest point wins each pixel;
/// all points outside the field of view yield an all-false mask, not an
/// error.
pub fn project<S: Scalar>(
    cloud: &PointCloud<S>,
    sensor: &SensorModel,
) -> Result<(RangeImage<S>, LabelMap, ProjectionIndex)> {
    cloud.validate()?;
    sensor.validate()?;
    let (h, w) = (sensor.beams, sensor.width);
    let fov_up = sensor.fov_up_deg.to_radians();
    let fov_down = sensor.fov_down_deg.to_radians();
    let fov_span = fov_up - fov_down;

    let mut channels = Tensor::<S>::zeros(&[CHANNELS, h, w]);
    let mut valid = vec![false; h * w];
    let mut ids = vec![0u8; h * w];
    let mut winner = vec![-1i32; h * w];
    let mut pixel_of_point = vec![None; cloud.points.len()];
    let mut best_range = vec![f64::INFINITY; h * w];

    for (i, p) in cloud.points.iter().enumerate() {
        let (x, y, z) = (p[0].to_f64().unwrap(), p[1].to_f64().unwrap(), p[2].to_f64().unwrap());
        let range = (x * x + y * y + z * z).sqrt();
        if range < 1e-9 {
            continue;
        }
        let elev = (z / range).clamp(-1.0, 1.0).asin();
        if elev < fov_down || elev > fov_up {
            continue;
        }
        let uf = 0.5 * (1.0 - y.atan2(x) / std::f64::consts::PI) * w as f64;
        let u = (uf.floor() as i64).clamp(0, w as i64 - 1) as usize;
        let vf = (1.0 - (elev - fov_down) / fov_span) * h as f64;
        let v = (vf.floor() as i64).clamp(0, h as i64 - 1) as usize;
        pixel_of_point[i] = Some((v as u16, u as u16));
        let pix = v * w + u;
        if range < best_range[pix] {
            best_range[pix] = range;
            winner[pix] = i as i32;
            channels.set3(CH_X, v, u, p[0]);
            channels.set3(CH_Y, v, u, p[1]);
            channels.set3(CH_Z, v, u, p[2]);
            channels.set3(CH_RANGE, v, u, scalar(range));
            channels.set3(CH_REMISSION, v, u, p[3]);
            ids[pix] = cloud.labels.as_ref().map(|l| l[i]).unwrap_or(0);
            valid[pix] = true;
        }
    }

    Ok((
        RangeImage { channels, valid, normalized: false },
        LabelMap { h, w, ids },
        ProjectionIndex { h, w, winner, pixel_of_point },
    ))
}

/// Labels each point with the label of the pixel it projected to; points
/// outside the field of view get background (0).
pub fn backproject(labels: &LabelMap, index: &ProjectionIndex, n_points: usize) -> Result<Vec<u8>> {
    if index.pixel_of_point.len() != n_points {
        return Err(HyldaError::Shape(format!(
            "index covers {} points, expected {}",
            index.pixel_of_point.len(),
            n_points
        )));
    }
    if labels.h != index.h || labels.w != index.w {
        return Err(HyldaError::Shape("label map and index shapes differ".into()));
    }
    for &wi in &index.winner {
        if wi >= 0 && wi as usize >= n_points {
            return Err(HyldaError::Shape(format!("winner index {wi} out of bounds")));
        }
    }
    Ok(index
        .pixel_of_point
        .iter()
        .map(|px| match px {
            Some((v, u)) => labels.ids[*v as usize * labels.w + *u as usize],
            None => 0,
        })
        .collect())
}

/// Exact percentile of a sorted slice with linear interpolation at rank
/// p·(n−1), p in [0,1].
fn percentile<S: Scalar>(sorted: &[S], p: f64) -> S {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = scalar::<S>(rank - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-channel 1st/99th percentile bounds over the valid pixels of all
/// frames. Degenerate bounds are widened by ε=1e-6.
pub fn compute_norm_stats<S: Scalar>(frames: &[RangeImage<S>]) -> Result<NormStats<S>> {
    if frames.is_empty() {
        return Err(HyldaError::Shape("no frames".into()));
    }
    let mut low = [S::zero(); CHANNELS];
    let mut high = [S::zero(); CHANNELS];
    let mut values: Vec<S> = Vec::new();
    for c in 0..CHANNELS {
        values.clear();
        for f in frames {
            if f.normalized {
                return Err(HyldaError::Shape("norm stats run on un-normalized frames".into()));
            }
            let (h, w) = (f.h(), f.w());
            for y in 0..h {
                for x in 0..w {
                    if f.valid[y * w + x] {
                        values.push(f.channels.at3(c, y, x));
                    }
                }
            }
        }
        if values.is_empty() {
            return Err(HyldaError::Shape("no valid pixels in any frame".into()));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite channel values"));
        low[c] = percentile(&values, 0.01);
        high[c] = percentile(&values, 0.99);
        if high[c] <= low[c] {
            let eps = scalar::<S>(1e-6);
            low[c] = low[c] - eps;
            high[c] = high[c] + eps;
        }
    }
    Ok(NormStats { low, high })
}

/// Affinely maps each channel so [low, high] → [−1, 1], clips, and fills
/// invalid pixels with −1.
pub fn normalize<S: Scalar>(img: &RangeImage<S>, stats: &NormStats<S>) -> Result<RangeImage<S>> {
    if img.normalized {
        return Err(HyldaError::Shape("double normalization".into()));
    }
    let (h, w) = (img.h(), img.w());
    let mut channels = Tensor::<S>::zeros(&[CHANNELS, h, w]);
    let one = S::one();
    let two = scalar::<S>(2.0);
    for c in 0..CHANNELS {
        let span = stats.high[c] - stats.low[c];
        for y in 0..h {
            for x in 0..w {
                let v = if img.valid[y * w + x] {
                    let t = (img.channels.at3(c, y, x) - stats.low[c]) / span * two - one;
                    t.min(one).max(-one)
                } else {
                    -one
                };
                channels.set3(c, y, x, v);
            }
        }
    }
    Ok(RangeImage { channels, valid: img.valid.clone(), normalized: true })
}
