//! Symmetry checks on random model and layer instances.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use sceneflow::layers::{flow_embedding_forward, Context, LayerSpec, Mixing};
use sceneflow::model::{FlowNet, ModelSpec};
use sceneflow::nn::{set_pool, Mlp, PoolMode};
use sceneflow::{PointCloud, Seed, Vec3};

use super::*;

#[derive(Debug, Clone, Copy, Default)]
pub struct InvarianceReport {
    pub instances: usize,
    pub failures: usize,
    /// Largest deviation seen where exact equality is not expected.
    pub max_dev: f64,
}

/// Multiples of 2⁻¹⁰ within ±`half`: sums and differences of such values
/// (and of translations on the same grid) are exact in f64, so a correct
/// translation-invariant pipeline must reproduce its output bit for bit.
pub fn dyadic_points(g: &mut impl Rng, n: usize, half: f64) -> Vec<Vec3> {
    let k = (half * 1024.0) as i64;
    (0..n)
        .map(|_| {
            Vec3::new(
                g.random_range(-k..=k) as f64 / 1024.0,
                g.random_range(-k..=k) as f64 / 1024.0,
                g.random_range(-k..=k) as f64 / 1024.0,
            )
        })
        .collect()
}

fn shifted(pts: &[Vec3], t: &Vec3) -> PointCloud {
    PointCloud::new(pts.iter().map(|p| p + t).collect())
}

/// Joint translation of both frames leaves the predicted flow unchanged,
/// in both training and inference mode, with the same seed.
pub fn translation(instances: usize) -> InvarianceReport {
    let mut rep = InvarianceReport::default();
    let spec = ModelSpec::table1().scaled_widths(0.25).scaled_radii(0.5);
    for inst in 0..instances as u64 {
        let mut g = rng(70_000 + inst);
        let net = FlowNet::init(&spec, Seed(inst)).unwrap();
        let p = dyadic_points(&mut g, 256, 2.0);
        let q: Vec<Vec3> = p.iter().map(|x| x + Vec3::new(0.125, -0.0625, 0.03125)).collect();
        let t = dyadic_points(&mut g, 1, 64.0)[0];
        let seed = Seed(inst ^ 0xabc);
        let mut ok = true;
        for ctx in [Context::train(), Context::infer()] {
            let (a, ia, _) = net.forward(&PointCloud::new(p.clone()), &PointCloud::new(q.clone()), seed, &ctx).unwrap();
            let (b, ib, _) = net.forward(&shifted(&p, &t), &shifted(&q, &t), seed, &ctx).unwrap();
            ok &= a == b && ia == ib;
        }
        rep.instances += 1;
        rep.failures += !ok as usize;
    }
    rep
}

/// Reordering frame 2 (positions with their features) leaves the flow
/// embedding unchanged: exactly under max pooling, to round-off under
/// average pooling.
pub fn frame2_permutation(instances: usize) -> InvarianceReport {
    let mut rep = InvarianceReport::default();
    let ctx = Context::infer();
    for inst in 0..instances as u64 {
        let mut g = rng(80_000 + inst);
        let mut spec = LayerSpec::flow_embedding(0.9, vec![8, 6]);
        spec.mixing = [Mixing::Learned, Mixing::Cosine, Mixing::Dot][inst as usize % 3];
        spec.pooling = if inst % 2 == 0 { PoolMode::Max } else { PoolMode::Avg };
        let (n1, n2, c) = (40, 50, 4);
        let f1 = PointCloud::with_features(random_points(&mut g, n1, 1.0), random_matrix(&mut g, n1, c));
        let p2 = random_points(&mut g, n2, 1.0);
        let g2 = random_matrix(&mut g, n2, c);
        let mlp = Mlp::init(&spec.mlp_spec(true), spec.mlp_in_width(c), Seed(inst)).unwrap();
        let mut perm: Vec<usize> = (0..n2).collect();
        perm.shuffle(&mut g);
        let pp: Vec<Vec3> = perm.iter().map(|&i| p2[i]).collect();
        let gp = Array2::from_shape_fn((n2, c), |(r, k)| g2[(perm[r], k)]);
        let seed = Seed(inst);
        let (a, _) = flow_embedding_forward(&spec, &mlp, &f1, &PointCloud::with_features(p2, g2), seed, &ctx).unwrap();
        let (b, _) = flow_embedding_forward(&spec, &mlp, &f1, &PointCloud::with_features(pp, gp), seed, &ctx).unwrap();
        let (fa, fb) = (a.cloud.features.unwrap(), b.cloud.features.unwrap());
        let dev = (&fa - &fb).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ok = a.isolated == b.isolated
            && match spec.pooling {
                PoolMode::Max => fa == fb,
                PoolMode::Avg => dev <= 1e-12,
            };
        rep.instances += 1;
        rep.failures += !ok as usize;
        rep.max_dev = rep.max_dev.max(dev);
    }
    rep
}

/// Max pooling is exactly invariant to row order inside each group.
pub fn pooling_permutation(instances: usize) -> InvarianceReport {
    let mut rep = InvarianceReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(90_000 + inst);
        let offsets = [0, 5, 6, 14, 20];
        let x = random_matrix(&mut g, 20, 6);
        let mut order: Vec<usize> = Vec::new();
        for w in offsets.windows(2) {
            let mut grp: Vec<usize> = (w[0]..w[1]).collect();
            grp.shuffle(&mut g);
            order.extend(grp);
        }
        let xp = Array2::from_shape_fn((20, 6), |(r, k)| x[(order[r], k)]);
        let (a, _) = set_pool(x.view(), &offsets, PoolMode::Max).unwrap();
        let (b, _) = set_pool(xp.view(), &offsets, PoolMode::Max).unwrap();
        let (c, _) = set_pool(x.view(), &offsets, PoolMode::Avg).unwrap();
        let (d, _) = set_pool(xp.view(), &offsets, PoolMode::Avg).unwrap();
        let dev = (&c - &d).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rep.instances += 1;
        rep.failures += !(a == b && dev <= 1e-12) as usize;
        rep.max_dev = rep.max_dev.max(dev);
    }
    rep
}
