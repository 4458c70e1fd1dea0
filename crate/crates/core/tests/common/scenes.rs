//! Scene builders for the application-level checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sceneflow::data::{generate_scene, ObjectKind, SceneConfig};
use sceneflow::{FlowField, PointCloud, RigidTransform, SceneSample, Seed, Vec3};

use super::rng;

/// Box surface sample with its outward face normal, in the box frame.
fn box_point(g: &mut impl Rng, h: &Vec3) -> (Vec3, Vec3) {
    let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
    let total: f64 = areas.iter().sum();
    let mut pick = g.random_range(0.0..total);
    let mut axis = 2;
    for (k, a) in areas.iter().enumerate() {
        if pick < *a {
            axis = k;
            break;
        }
        pick -= a;
    }
    let sign = if g.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut p = Vec3::new(g.random_range(-h.x..=h.x), g.random_range(-h.y..=h.y), g.random_range(-h.z..=h.z));
    p[axis] = sign * h[axis];
    let mut n = Vec3::zeros();
    n[axis] = sign;
    (p, n)
}

struct SceneBox {
    half: Vec3,
    pose: RigidTransform,
}

/// Points on the faces visible from `camera`, after moving every box by
/// `motion`. Draws until `n` points are collected.
fn visible_scan(g: &mut impl Rng, boxes: &[SceneBox], motion: &RigidTransform, camera: &Vec3, n: usize) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let b = &boxes[g.random_range(0..boxes.len())];
        let (p, normal) = box_point(g, &b.half);
        let world = motion.compose(&b.pose);
        let x = world.apply(&p);
        let nn = world.rotation * normal;
        if nn.dot(&(camera - x)) > 0.0 {
            out.push(x);
        }
    }
    out
}

/// Two boxes seen from one side; the second scan sees the scene after a
/// rotation by `angle` about the vertical axis through the scene center
/// plus a small translation, so each scan covers a different half.
pub fn partial_scan_pair(seed: u64, angle: f64, n: usize) -> (SceneSample, RigidTransform) {
    let mut g = rng(seed);
    let mut boxes = Vec::new();
    for k in 0..2 {
        let half = Vec3::new(g.random_range(0.3..0.7), g.random_range(0.3..0.7), g.random_range(0.3..0.7));
        let side = if k == 0 { -1.0 } else { 1.0 };
        let center = Vec3::new(side * g.random_range(0.8..1.4), g.random_range(-0.6..0.6), half.z);
        let pose = RigidTransform::from_axis_angle(&Vec3::z(), g.random_range(0.0..std::f64::consts::PI), center);
        boxes.push(SceneBox { half, pose });
    }
    let sign = if g.random_bool(0.5) { 1.0 } else { -1.0 };
    let t = Vec3::new(g.random_range(-0.2..0.2), g.random_range(-0.2..0.2), 0.0);
    let motion = RigidTransform::from_axis_angle(&Vec3::z(), sign * angle, t);
    let camera = Vec3::new(g.random_range(-1.0..1.0), -6.0, 2.0);
    let p1 = visible_scan(&mut g, &boxes, &RigidTransform::identity(), &camera, n);
    let p2 = visible_scan(&mut g, &boxes, &motion, &camera, n);
    let flow: Vec<Vec3> = p1.iter().map(|p| motion.apply(p) - p).collect();
    let sample = SceneSample {
        frame1: PointCloud::new(p1),
        frame2: PointCloud::new(p2),
        gt_flow: Some(FlowField::new(flow)),
        mask: None,
    };
    (sample, motion)
}

/// Mean distance between `warped` and the true destinations of `frame1`.
pub fn warping_epe(frame1: &[Vec3], warped: &[Vec3], truth: &RigidTransform) -> f64 {
    frame1.iter().zip(warped).map(|(p, w)| (truth.apply(p) - w).norm()).sum::<f64>() / frame1.len() as f64
}

/// A single box moved by 5° about a random axis and 0.1 m, with frame 2 the
/// exact image of frame 1.
pub fn icp_pair(seed: u64) -> (PointCloud, PointCloud, RigidTransform) {
    let angle = 5f64.to_radians();
    let cfg = SceneConfig {
        object_count: [1, 1],
        kinds: vec![ObjectKind::Box],
        points_per_object: [1000, 1000],
        translation: [0.1, 0.1],
        rotation: [angle, angle],
        occlusion_fraction: 0.0,
        noise_sigma: 0.0,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, Seed(seed)).unwrap();
    let motion = scene.objects[0].motion;
    let f1 = scene.sample.frame1;
    let f2 = f1.transformed(&motion);
    (f1, f2, motion)
}

pub struct GroundScene {
    pub cloud: PointCloud,
    pub is_ground: Vec<bool>,
    pub normal: Vec3,
}

/// A noisy plane tilted up to 10° from horizontal under a few objects.
pub fn tilted_ground(seed: u64) -> GroundScene {
    let mut g = rng(seed);
    let cfg = SceneConfig {
        occlusion_fraction: 0.0,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, Seed(seed)).unwrap();
    let tilt = g.random_range(0.0..10f64.to_radians());
    let az = g.random_range(0.0..std::f64::consts::TAU);
    let axis = Vec3::new(az.cos(), az.sin(), 0.0);
    let rot = RigidTransform::from_axis_angle(&axis, tilt, Vec3::new(0.0, 0.0, g.random_range(-0.5..0.5)));
    let normal = rot.rotation * Vec3::z();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut pts: Vec<Vec3> = scene.sample.frame1.positions.iter().map(|p| rot.apply(&(p + Vec3::z() * 0.3))).collect();
    let mut is_ground = vec![false; pts.len()];
    let h = cfg.extent / 2.0 + 1.0;
    for _ in 0..1500 {
        let p = Vec3::new(g.random_range(-h..h), g.random_range(-h..h), noise.sample(&mut g));
        pts.push(rot.apply(&p));
        is_ground.push(true);
    }
    GroundScene {
        cloud: PointCloud::new(pts),
        is_ground,
        normal,
    }
}
