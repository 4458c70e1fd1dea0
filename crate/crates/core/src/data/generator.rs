use rand::{seq::index::sample, Rng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::types::{FlowField, PointCloud, RigidTransform, SceneSample, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Box,
    SphereShell,
    CylinderShell,
    PlanePatch,
}

/// Ranges are inclusive `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub object_count: [usize; 2],
    pub kinds: Vec<ObjectKind>,
    pub points_per_object: [usize; 2],
    /// Distance from an object's center to its farthest surface point.
    pub object_radius: [f64; 2],
    pub translation: [f64; 2],
    pub rotation: [f64; 2],
    /// Side of the square XY region holding object centers.
    pub extent: f64,
    pub occlusion_fraction: f64,
    pub noise_sigma: f64,
    pub include_ground: bool,
    pub ground_points: usize,
    /// Resample each frame to exactly this many points.
    pub points_per_frame: Option<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            object_count: [2, 4],
            kinds: vec![
                ObjectKind::Box,
                ObjectKind::SphereShell,
                ObjectKind::CylinderShell,
                ObjectKind::PlanePatch,
            ],
            points_per_object: [100, 200],
            object_radius: [0.6, 1.5],
            translation: [0.1, 0.8],
            rotation: [0.0, 0.25],
            extent: 8.0,
            occlusion_fraction: 0.1,
            noise_sigma: 0.005,
            include_ground: false,
            ground_points: 200,
            points_per_frame: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let range_ok = |r: [f64; 2]| r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite();
        if self.object_count[0] > self.object_count[1] || self.object_count[1] == 0 {
            return bad("object_count must be a non-empty range with max ≥ 1");
        }
        if self.points_per_object[0] > self.points_per_object[1] || self.points_per_object[0] == 0 {
            return bad("points_per_object must be a range with min ≥ 1");
        }
        if self.kinds.is_empty() {
            return bad("kinds must not be empty");
        }
        if !range_ok(self.object_radius) || self.object_radius[0] <= 0.0 {
            return bad("object_radius must be a positive range");
        }
        if !range_ok(self.translation) || !range_ok(self.rotation) {
            return bad("translation and rotation ranges must be non-negative");
        }
        if self.rotation[1] > std::f64::consts::PI {
            return bad("rotation must not exceed π");
        }
        if !(self.extent > 0.0) {
            return bad("extent must be > 0");
        }
        if !(0.0..1.0).contains(&self.occlusion_fraction) {
            return bad("occlusion_fraction must be in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be ≥ 0");
        }
        if self.points_per_frame == Some(0) {
            return bad("points_per_frame must be ≥ 1");
        }
        Ok(())
    }

    /// Upper bound on any ground-truth flow magnitude under this config.
    pub fn flow_bound(&self) -> f64 {
        self.translation[1] + 2.0 * (self.rotation[1] / 2.0).sin() * self.object_radius[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInfo {
    pub kind: ObjectKind,
    pub center: Vec3,
    pub radius: f64,
    /// Motion from frame 1 to frame 2.
    pub motion: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub sample: SceneSample,
    /// Per frame-1 point: object index, or `objects.len()` for ground.
    pub labels1: Vec<usize>,
    pub labels2: Vec<usize>,
    pub objects: Vec<ObjectInfo>,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Surface shape in its local frame (centered at the origin).
#[derive(Debug, Clone, Copy)]
enum Shape {
    Box(Vec3),
    Sphere(f64),
    Cylinder { radius: f64, half_height: f64 },
    Patch(f64),
}

impl Shape {
    fn new(kind: ObjectKind, radius: f64, rng: &mut ChaCha8Rng) -> Shape {
        match kind {
            ObjectKind::Box => {
                let h = Vec3::new(
                    rng.random_range(0.4..=1.0),
                    rng.random_range(0.4..=1.0),
                    rng.random_range(0.4..=1.0),
                );
                Shape::Box(h * (radius / h.norm()))
            }
            ObjectKind::SphereShell => Shape::Sphere(radius),
            ObjectKind::CylinderShell => {
                let a: f64 = rng.random_range(0.3..=1.2);
                Shape::Cylinder {
                    radius: radius * a.cos(),
                    half_height: radius * a.sin(),
                }
            }
            ObjectKind::PlanePatch => Shape::Patch(radius / std::f64::consts::SQRT_2),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match *self {
            Shape::Box(h) => {
                let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (k, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vec3::new(
                    rng.random_range(-h.x..=h.x),
                    rng.random_range(-h.y..=h.y),
                    rng.random_range(-h.z..=h.z),
                );
                p[axis] = sign * h[axis];
                p
            }
            Shape::Sphere(r) => unit_vector(rng) * r,
            Shape::Cylinder { radius, half_height } => {
                let side = 4.0 * half_height * radius;
                let cap = radius * radius;
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if pick < side {
                    Vec3::new(radius * theta.cos(), radius * theta.sin(), rng.random_range(-half_height..=half_height))
                } else {
                    let rr = radius * rng.random::<f64>().sqrt();
                    let z = if pick < side + cap { half_height } else { -half_height };
                    Vec3::new(rr * theta.cos(), rr * theta.sin(), z)
                }
            }
            Shape::Patch(s) => Vec3::new(rng.random_range(-s..=s), rng.random_range(-s..=s), 0.0),
        }
    }
}

struct Placed {
    shape: Shape,
    pose: RigidTransform,
    info: ObjectInfo,
}

impl Placed {
    fn surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        (0..n).map(|_| self.pose.apply(&self.shape.sample(rng))).collect()
    }
}

fn place_objects(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Placed> {
    let count = rng.random_range(cfg.object_count[0].max(1)..=cfg.object_count[1]);
    let mut placed: Vec<Placed> = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
        let radius = uniform(rng, cfg.object_radius);
        let half = (cfg.extent / 2.0 - radius).max(0.0);
        let mut center = Vec3::zeros();
        for _ in 0..200 {
            center = Vec3::new(
                uniform(rng, [-half, half]),
                uniform(rng, [-half, half]),
                radius + rng.random_range(0.0..0.5),
            );
            let clear = placed
                .iter()
                .all(|o| (o.info.center - center).norm() > o.info.radius + radius + 0.2);
            if clear {
                break;
            }
        }
        let shape = Shape::new(kind, radius, rng);
        let orient = RigidTransform::from_axis_angle(&unit_vector(rng), rng.random_range(0.0..std::f64::consts::PI), center);
        let t = unit_vector(rng) * uniform(rng, cfg.translation);
        let angle = uniform(rng, cfg.rotation);
        let axis = unit_vector(rng);
        let rot = RigidTransform::from_axis_angle(&axis, angle, Vec3::zeros()).rotation;
        let motion = RigidTransform::about_center(rot, &center, &t);
        placed.push(Placed {
            shape,
            pose: orient,
            info: ObjectInfo {
                kind,
                center,
                radius,
                motion,
            },
        });
    }
    placed
}

struct Frames {
    p1: Vec<Vec3>,
    l1: Vec<usize>,
    flow: Vec<Vec3>,
    mask: Vec<bool>,
    p2: Vec<Vec3>,
    l2: Vec<usize>,
}

fn sample_frames(cfg: &SceneConfig, objects: &[Placed], counts: &[usize], ground: usize, rng: &mut ChaCha8Rng) -> Frames {
    let mut f = Frames {
        p1: Vec::new(),
        l1: Vec::new(),
        flow: Vec::new(),
        mask: Vec::new(),
        p2: Vec::new(),
        l2: Vec::new(),
    };
    for (k, (obj, &n)) in objects.iter().zip(counts).enumerate() {
        let m = &obj.info.motion;
        let occluder = (cfg.occlusion_fraction > 0.0).then(|| {
            let u = unit_vector(rng);
            let c2 = m.apply(&obj.info.center);
            (u, c2, obj.info.radius * (1.0 - 2.0 * cfg.occlusion_fraction))
        });
        let hidden = |p: &Vec3| occluder.is_some_and(|(u, c, s)| (p - c).dot(&u) > s);
        for x in obj.surface(n, rng) {
            let d = m.apply(&x) - x;
            f.mask.push(!hidden(&(x + d)));
            f.p1.push(x);
            f.flow.push(d);
            f.l1.push(k);
        }
        for y in obj.surface(n, rng) {
            let y = m.apply(&y);
            if !hidden(&y) {
                f.p2.push(y);
                f.l2.push(k);
            }
        }
    }
    if cfg.include_ground {
        let h = cfg.extent / 2.0;
        let g = objects.len();
        for _ in 0..ground {
            f.p1.push(Vec3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), 0.0));
            f.flow.push(Vec3::zeros());
            f.mask.push(true);
            f.l1.push(g);
        }
        for _ in 0..ground {
            f.p2.push(Vec3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), 0.0));
            f.l2.push(g);
        }
    }
    f
}

/// Random rigid objects moving independently. Frame 2 is sampled afresh on
/// the moved surfaces, so no point of frame 1 has an exact counterpart.
/// Ground truth for frame-1 point x of an object with motion (R, t) about
/// its center c is `R(x − c) + c + t − x`; the ground plane is static.
/// Frame-1 points whose destination falls in an object's occluded cap are
/// masked out, and frame-2 points in that cap are removed.
pub fn generate_scene(cfg: &SceneConfig, seed: Seed) -> Result<GeneratedScene> {
    cfg.validate()?;
    let mut rng = seed.rng();
    let objects = place_objects(cfg, &mut rng);
    let mut counts: Vec<usize> = objects
        .iter()
        .map(|_| rng.random_range(cfg.points_per_object[0]..=cfg.points_per_object[1]))
        .collect();
    let mut ground = if cfg.include_ground { cfg.ground_points } else { 0 };
    let mut frames = sample_frames(cfg, &objects, &counts, ground, &mut rng);
    if let Some(target) = cfg.points_per_frame {
        let mut tries = 0;
        while (frames.p1.len() < target || frames.p2.len() < target) && tries < 8 {
            let have = frames.p1.len().min(frames.p2.len()).max(1);
            let scale = (target as f64 * 1.25 / have as f64).max(1.5);
            counts.iter_mut().for_each(|c| *c = ((*c as f64) * scale).ceil() as usize);
            ground = ((ground as f64) * scale).ceil() as usize;
            frames = sample_frames(cfg, &objects, &counts, ground, &mut rng);
            tries += 1;
        }
        if frames.p1.len() < target || frames.p2.len() < target {
            return Err(Error::InvalidConfig(format!(
                "could not reach {target} points per frame"
            )));
        }
        let mut keep1 = sample(&mut rng, frames.p1.len(), target).into_vec();
        keep1.sort_unstable();
        let mut keep2 = sample(&mut rng, frames.p2.len(), target).into_vec();
        keep2.sort_unstable();
        let pick = |v: &[Vec3], k: &[usize]| k.iter().map(|&i| v[i]).collect::<Vec<_>>();
        frames = Frames {
            p1: pick(&frames.p1, &keep1),
            l1: keep1.iter().map(|&i| frames.l1[i]).collect(),
            flow: pick(&frames.flow, &keep1),
            mask: keep1.iter().map(|&i| frames.mask[i]).collect(),
            p2: pick(&frames.p2, &keep2),
            l2: keep2.iter().map(|&i| frames.l2[i]).collect(),
        };
    }
    if frames.p2.is_empty() {
        return Err(Error::InvalidConfig("frame 2 is empty after occlusion".into()));
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma ≥ 0");
        for p in frames.p1.iter_mut().chain(frames.p2.iter_mut()) {
            *p += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(GeneratedScene {
        sample: SceneSample {
            frame1: PointCloud::new(frames.p1),
            frame2: PointCloud::new(frames.p2),
            gt_flow: Some(FlowField::new(frames.flow)),
            mask: Some(frames.mask),
        },
        labels1: frames.l1,
        labels2: frames.l2,
        objects: objects.into_iter().map(|o| o.info).collect(),
    })
}
