//! Synthetic scenes and an analytic raycaster. Two sensor presets with
//! different beam counts, fields of view, noise and remission gain produce
//! a controlled domain gap from the same primitive vocabulary.

use std::path::Path;

use crate::datasets::nested_subset_ids;
use crate::formats::{write_hyl1, write_hyll, write_manifest, ManifestEntry};
use crate::rangeview::{project, SensorModel};
use crate::rng::{derive_seed, splitmix64, Stream};
use crate::{HyldaError, PointCloud, Result};

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_GROUND: u8 = 1;
pub const CLASS_VEHICLE: u8 = 2;
pub const CLASS_PEDESTRIAN: u8 = 3;
pub const CLASS_BUILDING: u8 = 4;
pub const CLASS_POLE: u8 = 5;
pub const CLASS_VEGETATION: u8 = 6;
pub const NUM_CLASSES: usize = 6;

/// Sensor origin above ground, metres.
pub const SENSOR_HEIGHT: f64 = 1.8;

/// Base reflectivity per class id, before jitter and sensor gain.
const REMISSION_BASE: [f64; 7] = [0.0, 0.25, 0.55, 0.40, 0.35, 0.70, 0.50];

const RAY_EPS: f64 = 1e-6;

/// Beams whose elevation sits exactly on a projection cell boundary would
/// straddle two rows on float round-off. This sub-microdegree bias keeps
/// every ray strictly inside a cell without visibly moving it.
const BEAM_TIE_BREAK: f64 = 1e-6;

/// How many of each primitive a scene draws, and where.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub extent: f64,
    pub n_ground: usize,
    pub n_vehicles: usize,
    pub n_pedestrians: usize,
    pub n_buildings: usize,
    pub n_poles: usize,
    pub n_vegetation: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 4.0) {
            return Err(HyldaError::Config(format!("scene extent {} too small", self.extent)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Ground plane z = 0 limited to |x|,|y| <= extent.
    PlaneZ0 { extent: f64 },
    Aabb { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder from z = 0 to z = h, no caps.
    CylinderZ { cx: f64, cy: f64, r: f64, h: f64 },
    Sphere { c: [f64; 3], r: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<(Shape, u8)>,
}

fn sample_xy(s: &mut Stream, extent: f64) -> (f64, f64) {
    let r = s.uniform_in(3.0, extent * 0.9);
    let a = s.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
    (r * a.cos(), r * a.sin())
}

/// Box footprint centred at (cx, cy), standing on the ground.
fn footprint_box(cx: f64, cy: f64, l: f64, w: f64, h: f64, swap: bool) -> Shape {
    let (hx, hy) = if swap { (w / 2.0, l / 2.0) } else { (l / 2.0, w / 2.0) };
    Shape::Aabb { min: [cx - hx, cy - hy, 0.0], max: [cx + hx, cy + hy, h] }
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Scene {
    let mut s = Stream::new(splitmix64(spec.seed) ^ seed, "scene");
    let mut prims = Vec::new();
    for _ in 0..spec.n_ground {
        prims.push((Shape::PlaneZ0 { extent: spec.extent }, CLASS_GROUND));
    }
    for _ in 0..spec.n_vehicles {
        let (cx, cy) = sample_xy(&mut s, spec.extent);
        let l = s.uniform_in(3.5, 5.0);
        let w = s.uniform_in(1.6, 2.1);
        let h = s.uniform_in(1.3, 1.8);
        let swap = s.bool(0.5);
        prims.push((footprint_box(cx, cy, l, w, h, swap), CLASS_VEHICLE));
    }
    for _ in 0..spec.n_pedestrians {
        let (cx, cy) = sample_xy(&mut s, spec.extent);
        let r = s.uniform_in(0.25, 0.4);
        let h = s.uniform_in(1.5, 1.9);
        prims.push((Shape::CylinderZ { cx, cy, r, h }, CLASS_PEDESTRIAN));
    }
    for _ in 0..spec.n_buildings {
        let (cx, cy) = sample_xy(&mut s, spec.extent);
        let l = s.uniform_in(8.0, 16.0);
        let w = s.uniform_in(0.3, 0.6);
        let h = s.uniform_in(4.0, 8.0);
        let swap = s.bool(0.5);
        prims.push((footprint_box(cx, cy, l, w, h, swap), CLASS_BUILDING));
    }
    for _ in 0..spec.n_poles {
        let (cx, cy) = sample_xy(&mut s, spec.extent);
        let r = s.uniform_in(0.05, 0.15);
        let h = s.uniform_in(3.0, 6.0);
        prims.push((Shape::CylinderZ { cx, cy, r, h }, CLASS_POLE));
    }
    for _ in 0..spec.n_vegetation {
        let (cx, cy) = sample_xy(&mut s, spec.extent);
        let r = s.uniform_in(0.8, 2.0);
        let cz = r * s.uniform_in(1.0, 1.6);
        prims.push((Shape::Sphere { c: [cx, cy, cz], r }, CLASS_VEGETATION));
    }
    Scene { primitives: prims }
}

fn hit_plane_z0(o: [f64; 3], d: [f64; 3], extent: f64) -> Option<f64> {
    if d[2].abs() < 1e-12 {
        return None;
    }
    let t = -o[2] / d[2];
    if t <= RAY_EPS {
        return None;
    }
    let x = o[0] + t * d[0];
    let y = o[1] + t * d[1];
    if x.abs() <= extent && y.abs() <= extent {
        Some(t)
    } else {
        None
    }
}

fn hit_aabb(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<f64> {
    let mut t0 = RAY_EPS;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
        } else {
            let inv = 1.0 / d[k];
            let mut a = (min[k] - o[k]) * inv;
            let mut b = (max[k] - o[k]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
    }
    if t0 > RAY_EPS {
        Some(t0)
    } else {
        None
    }
}

fn hit_cylinder_z(o: [f64; 3], d: [f64; 3], cx: f64, cy: f64, r: f64, h: f64) -> Option<f64> {
    let ox = o[0] - cx;
    let oy = o[1] - cy;
    let a = d[0] * d[0] + d[1] * d[1];
    if a < 1e-18 {
        return None;
    }
    let b = 2.0 * (ox * d[0] + oy * d[1]);
    let c = ox * ox + oy * oy - r * r;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
        if t > RAY_EPS {
            let z = o[2] + t * d[2];
            if (0.0..=h).contains(&z) {
                return Some(t);
            }
        }
    }
    None
}

fn hit_sphere(o: [f64; 3], d: [f64; 3], c: [f64; 3], r: f64) -> Option<f64> {
    let oc = [o[0] - c[0], o[1] - c[1], o[2] - c[2]];
    let b = 2.0 * (oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2]);
    let cc = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - r * r;
    let disc = b * b - 4.0 * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for t in [(-b - sq) / 2.0, (-b + sq) / 2.0] {
        if t > RAY_EPS {
            return Some(t);
        }
    }
    None
}

fn hit_shape(shape: &Shape, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    match *shape {
        Shape::PlaneZ0 { extent } => hit_plane_z0(o, d, extent),
        Shape::Aabb { min, max } => hit_aabb(o, d, min, max),
        Shape::CylinderZ { cx, cy, r, h } => hit_cylinder_z(o, d, cx, cy, r, h),
        Shape::Sphere { c, r } => hit_sphere(o, d, c, r),
    }
}

fn nearest_hit(scene: &Scene, o: [f64; 3], d: [f64; 3], max_range: f64) -> Option<(f64, u8)> {
    let mut best: Option<(f64, u8)> = None;
    for (shape, class) in &scene.primitives {
        if let Some(t) = hit_shape(shape, o, d) {
            if t <= max_range && best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, *class));
            }
        }
    }
    best
}

/// Casts the sensor's beam pattern through the scene. Points come back in
/// the sensor frame, so the range channel equals the noisy ray length and
/// the elevation recovers the beam exactly.
pub fn raycast(
    scene: &Scene,
    sensor: &SensorModel,
    remission_gain: f64,
    frame_id: &str,
    seed: u64,
) -> Result<PointCloud<f64>> {
    sensor.validate()?;
    if remission_gain <= 0.0 {
        return Err(HyldaError::Config(format!("remission gain {remission_gain} must be > 0")));
    }
    let mut s = Stream::new(seed, "raycast");
    let o = [0.0, 0.0, SENSOR_HEIGHT];
    let fov_up = sensor.fov_up_deg.to_radians();
    let fov_down = sensor.fov_down_deg.to_radians();
    let span = fov_up - fov_down;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..sensor.beams {
        let elev = fov_up - (i as f64 + 0.5) * span / sensor.beams as f64 - span * BEAM_TIE_BREAK;
        let (se, ce) = (elev.sin(), elev.cos());
        for j in 0..sensor.width {
            let az = std::f64::consts::PI
                * (1.0 - (2 * j + 1) as f64 / sensor.width as f64 - 2.0 * BEAM_TIE_BREAK);
            let dropped = s.bool(sensor.dropout_prob);
            if dropped {
                continue;
            }
            let d = [ce * az.cos(), ce * az.sin(), se];
            if let Some((t, class)) = nearest_hit(scene, o, d, sensor.max_range) {
                let mut r = t;
                if sensor.noise_sigma > 0.0 {
                    r += s.normal_scaled(0.0, sensor.noise_sigma);
                }
                r = r.max(0.01);
                let rem = (REMISSION_BASE[class as usize] + s.normal_scaled(0.0, 0.05)).clamp(0.0, 1.0);
                let rem = (rem * remission_gain).clamp(0.0, 1.0);
                points.push([r * d[0], r * d[1], r * d[2], rem]);
                labels.push(class);
            }
        }
    }
    Ok(PointCloud { frame_id: frame_id.to_string(), points, labels: Some(labels) })
}

/// Everything that differs between the two domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub sensor: SensorModel,
    pub scene: SceneSpec,
    pub remission_gain: f64,
    pub n_train: usize,
    pub n_val: usize,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.scene.validate()?;
        if self.remission_gain <= 0.0 {
            return Err(HyldaError::Config("remission gain must be > 0".into()));
        }
        if self.n_train < 1 || self.n_val < 1 {
            return Err(HyldaError::Config("need at least one train and one val frame".into()));
        }
        Ok(())
    }
}

pub fn default_source_spec() -> DomainSpec {
    DomainSpec {
        sensor: SensorModel {
            beams: 16,
            width: 128,
            fov_up_deg: 15.0,
            fov_down_deg: -15.0,
            max_range: 80.0,
            noise_sigma: 0.02,
            dropout_prob: 0.01,
        },
        scene: SceneSpec {
            extent: 40.0,
            n_ground: 1,
            n_vehicles: 6,
            n_pedestrians: 2,
            n_buildings: 3,
            n_poles: 2,
            n_vegetation: 4,
            seed: 1,
        },
        remission_gain: 1.0,
        n_train: 24,
        n_val: 8,
    }
}

pub fn default_target_spec() -> DomainSpec {
    DomainSpec {
        sensor: SensorModel {
            beams: 8,
            width: 128,
            fov_up_deg: 15.0,
            fov_down_deg: -25.0,
            max_range: 80.0,
            noise_sigma: 0.05,
            dropout_prob: 0.01,
        },
        scene: SceneSpec {
            extent: 40.0,
            n_ground: 1,
            n_vehicles: 3,
            n_pedestrians: 5,
            n_buildings: 3,
            n_poles: 2,
            n_vegetation: 4,
            seed: 2,
        },
        remission_gain: 0.6,
        n_train: 24,
        n_val: 8,
    }
}

/// Both domains project onto one grid so row profiles are comparable; only
/// the capture rays differ. Capture noise lives in the point coordinates,
/// so the projection itself is clean.
pub fn projection_sensor(domain: &SensorModel, grid_h: usize, grid_w: usize) -> SensorModel {
    SensorModel {
        beams: grid_h,
        width: grid_w,
        fov_up_deg: domain.fov_up_deg,
        fov_down_deg: domain.fov_down_deg,
        max_range: domain.max_range,
        noise_sigma: 0.0,
        dropout_prob: 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub seed: u64,
    pub subset_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub source_frames: usize,
    pub target_frames: usize,
    pub subsets: Vec<(usize, usize)>,
}

/// Generates both domains under `out_dir` as `source/` and `target/`, each
/// with train/val frames, a manifest, and (target only) nested labeled
/// subsets. Target train frames carry labeled=1 iff they are in the largest
/// subset; target val frames carry labeled=0.
pub fn build_domain_pair(
    source: &DomainSpec,
    target: &DomainSpec,
    cfg: &GenConfig,
    out_dir: &Path,
) -> Result<GenSummary> {
    source.validate()?;
    target.validate()?;
    if cfg.grid_h < 1 || cfg.grid_w < 1 {
        return Err(HyldaError::Config("grid dimensions must be positive".into()));
    }
    let subset_sel = nested_subset_ids(target.n_train, &cfg.subset_sizes, cfg.seed)?;
    let largest: Vec<usize> = subset_sel.last().cloned().unwrap_or_default();

    let mut summary = GenSummary { source_frames: 0, target_frames: 0, subsets: Vec::new() };
    for (tag, spec) in [("source", source), ("target", target)] {
        let proj = projection_sensor(&spec.sensor, cfg.grid_h, cfg.grid_w);
        let mut entries = Vec::new();
        for (split, n) in [("train", spec.n_train), ("val", spec.n_val)] {
            for k in 0..n {
                let frame_id = format!("{tag}_{split}_{k:03}");
                let fseed = derive_seed(cfg.seed, &frame_id);
                let scene = generate_scene(&spec.scene, fseed);
                let cloud = raycast(&scene, &spec.sensor, spec.remission_gain, &frame_id, fseed)?;
                let (img, labels, _) = project(&cloud, &proj)?;
                let frame_rel = format!("{split}/frame_{k:03}.hyl1");
                let label_rel = format!("{split}/frame_{k:03}.hyll");
                write_hyl1(&out_dir.join(tag).join(&frame_rel), &img)?;
                write_hyll(&out_dir.join(tag).join(&label_rel), &labels)?;
                let labeled = match (tag, split) {
                    ("source", _) => true,
                    ("target", "train") => largest.contains(&k),
                    _ => false,
                };
                entries.push(ManifestEntry {
                    frame_id,
                    split: split.to_string(),
                    frame_path: frame_rel,
                    label_path: label_rel,
                    seed: fseed,
                    labeled,
                });
            }
        }
        write_manifest(&out_dir.join(tag).join("manifest.tsv"), &entries)?;
        match tag {
            "source" => summary.source_frames = entries.len(),
            _ => summary.target_frames = entries.len(),
        }
    }

    for (size, sel) in cfg.subset_sizes.iter().zip(&subset_sel) {
        let mut text = String::new();
        for &k in sel {
            text.push_str(&format!("target_train_{k:03}\n"));
        }
        let p = out_dir.join("target").join("subsets").join(format!("subset_{size:03}.txt"));
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| HyldaError::io(parent, e))?;
        }
        std::fs::write(&p, text).map_err(|e| HyldaError::io(&p, e))?;
        summary.subsets.push((*size, sel.len()));
    }
    Ok(summary)
}
