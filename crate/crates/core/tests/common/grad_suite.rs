//! Finite-difference checks for every differentiable operation. Each suite
//! returns a merged report over `instances` random problems.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use sceneflow::layers::{
    flow_embedding_backward, flow_embedding_forward, set_conv_backward, set_conv_forward, set_upconv_backward,
    set_upconv_forward, three_interp, Context, LayerSpec, Mixing,
};
use sceneflow::model::{FlowNet, ModelSpec};
use sceneflow::nn::{huber, set_pool, Activation, Mlp, MlpGrad, MlpSpec, PoolMode};
use sceneflow::train::{scene_flow_loss, TrainConfig};
use sceneflow::{FlowField, PointCloud, SceneSample, Seed, Vec3};

use super::*;

pub fn mlp_flat(m: &Mlp) -> Vec<f64> {
    let mut v = Vec::new();
    m.visit("", &mut |_, _, s| v.extend_from_slice(s));
    v
}

pub fn mlp_set_flat(m: &mut Mlp, x: &[f64]) {
    let mut pos = 0;
    m.visit_mut("", &mut |_, s| {
        s.copy_from_slice(&x[pos..pos + s.len()]);
        pos += s.len();
    });
}

pub fn grad_flat(g: &MlpGrad) -> Vec<f64> {
    let mut v = Vec::new();
    g.visit(&mut |s| v.extend_from_slice(s));
    v
}

fn dot(a: ArrayView2<f64>, b: &Array2<f64>) -> f64 {
    (&a * b).sum()
}

fn mat_flat(m: &Array2<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

fn mat_from(x: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), x.to_vec()).unwrap()
}

fn pos_dot(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Checks `f` over the parameters, features and positions of a problem in
/// three independent sweeps.
struct Sweep<'a> {
    report: &'a mut FdReport,
}

impl Sweep<'_> {
    fn run(&mut self, x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> (f64, u64)) {
        assert_eq!(x.len(), analytic.len());
        self.report.merge(fd_check(x, analytic, 0..x.len(), f));
    }
}

pub fn mlp(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    let ctx = Context::train();
    for inst in 0..instances as u64 {
        let mut g = rng(1000 + inst);
        let bn = inst % 2 == 0;
        let spec = MlpSpec::new(vec![5, 3], bn, if inst % 3 == 0 { Activation::Relu } else { Activation::None });
        let net = Mlp::init(&spec, 4, Seed(inst)).unwrap();
        let x = random_matrix(&mut g, 12, 4);
        let r = random_matrix(&mut g, 12, 3);
        let (_, tape) = net.forward(x.view(), ctx.mode, &ctx.bn).unwrap();
        let (gx, gp) = net.backward(&tape, r.view()).unwrap();
        let eval = |m: &Mlp, x: &Array2<f64>| {
            let (y, t) = m.forward(x.view(), ctx.mode, &ctx.bn).unwrap();
            (dot(y.view(), &r), hash_of(|h| t.hash_structure(h)))
        };
        let mut s = Sweep { report: &mut rep };
        let mut probe = net.clone();
        s.run(&mlp_flat(&net), &grad_flat(&gp), |w| {
            mlp_set_flat(&mut probe, w);
            eval(&probe, &x)
        });
        s.run(&mat_flat(&x), &mat_flat(&gx), |v| eval(&net, &mat_from(v, 12, 4)));
    }
    rep
}

pub fn pooling(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(2000 + inst);
        let mode = if inst % 2 == 0 { PoolMode::Max } else { PoolMode::Avg };
        let x = random_matrix(&mut g, 10, 3);
        let offsets = [0, 3, 4, 10];
        let r = random_matrix(&mut g, 3, 3);
        let (_, tape) = set_pool(x.view(), &offsets, mode).unwrap();
        let gx = tape.backward(r.view()).unwrap();
        rep.merge(fd_check(&mat_flat(&x), &mat_flat(&gx), 0..30, |v| {
            let (y, t) = set_pool(mat_from(v, 10, 3).view(), &offsets, mode).unwrap();
            (dot(y.view(), &r), hash_of(|h| t.hash_structure(h)))
        }));
    }
    rep
}

pub fn huber_loss(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(3000 + inst);
        let delta = g.random_range(0.2..1.5);
        let res = Vec3::new(g.random_range(-1.5..1.5), g.random_range(-1.5..1.5), g.random_range(-1.5..1.5));
        let (_, grad) = huber(&res, delta);
        rep.merge(fd_check(&flatten(&[res]), &flatten(&[grad]), 0..3, |v| {
            let r = Vec3::new(v[0], v[1], v[2]);
            (huber(&r, delta).0, (r.norm() <= delta) as u64)
        }));
    }
    rep
}

pub fn set_conv(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    let ctx = Context::train();
    for inst in 0..instances as u64 {
        let mut g = rng(4000 + inst);
        let mut spec = LayerSpec::set_conv(0.6, 0.5, vec![5, 4]);
        if inst % 2 == 1 {
            spec.pooling = PoolMode::Avg;
        }
        let n = 24;
        let pos = random_points(&mut g, n, 0.5);
        let feat = random_matrix(&mut g, n, 3);
        let mlp = Mlp::init(&spec.mlp_spec(inst % 3 != 2), spec.mlp_in_width(3), Seed(inst)).unwrap();
        let seed = Seed(77 + inst);
        let m = spec.sample_count(n);
        let rf = random_matrix(&mut g, m, 4);
        let rp = random_points(&mut g, m, 1.0);
        let eval = |mlp: &Mlp, pos: &[Vec3], feat: &Array2<f64>| {
            let cloud = PointCloud::with_features(pos.to_vec(), feat.clone());
            let (out, t) = set_conv_forward(&spec, mlp, &cloud, seed, &ctx).unwrap();
            let v = dot(out.features.as_ref().unwrap().view(), &rf) + pos_dot(&out.positions, &rp);
            (v, hash_of(|h| t.hash_structure(h)))
        };
        let cloud = PointCloud::with_features(pos.clone(), feat.clone());
        let (_, tape) = set_conv_forward(&spec, &mlp, &cloud, seed, &ctx).unwrap();
        let gr = set_conv_backward(&mlp, &tape, rf.view(), Some(&rp)).unwrap();
        let mut s = Sweep { report: &mut rep };
        let mut probe = mlp.clone();
        s.run(&mlp_flat(&mlp), &grad_flat(&gr.params), |w| {
            mlp_set_flat(&mut probe, w);
            eval(&probe, &pos, &feat)
        });
        s.run(&mat_flat(&feat), &mat_flat(&gr.features), |v| eval(&mlp, &pos, &mat_from(v, n, 3)));
        s.run(&flatten(&pos), &flatten(&gr.positions), |v| eval(&mlp, &unflatten(v), &feat));
    }
    rep
}

pub fn flow_embedding(mixing: Mixing, instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    let ctx = Context::train();
    for inst in 0..instances as u64 {
        let mut g = rng(5000 + 100 * mixing as u64 + inst);
        let mut spec = LayerSpec::flow_embedding(0.8, vec![5, 4]);
        spec.mixing = mixing;
        if inst % 2 == 1 {
            spec.pooling = PoolMode::Avg;
        }
        let (n1, n2, c) = (16, 14, 3);
        let p1 = random_points(&mut g, n1, 0.5);
        let p2 = random_points(&mut g, n2, 0.5);
        let f1 = random_matrix(&mut g, n1, c);
        let f2 = random_matrix(&mut g, n2, c);
        let mlp = Mlp::init(&spec.mlp_spec(inst % 3 != 2), spec.mlp_in_width(c), Seed(inst)).unwrap();
        let seed = Seed(91 + inst);
        let r = random_matrix(&mut g, n1, 4);
        let eval = |mlp: &Mlp, p1: &[Vec3], f1: &Array2<f64>, p2: &[Vec3], f2: &Array2<f64>| {
            let a = PointCloud::with_features(p1.to_vec(), f1.clone());
            let b = PointCloud::with_features(p2.to_vec(), f2.clone());
            let (out, t) = flow_embedding_forward(&spec, mlp, &a, &b, seed, &ctx).unwrap();
            (dot(out.cloud.features.as_ref().unwrap().view(), &r), hash_of(|h| t.hash_structure(h)))
        };
        let a = PointCloud::with_features(p1.clone(), f1.clone());
        let b = PointCloud::with_features(p2.clone(), f2.clone());
        let (_, tape) = flow_embedding_forward(&spec, &mlp, &a, &b, seed, &ctx).unwrap();
        let gr = flow_embedding_backward(&mlp, &tape, r.view()).unwrap();
        let mut s = Sweep { report: &mut rep };
        let mut probe = mlp.clone();
        s.run(&mlp_flat(&mlp), &grad_flat(&gr.params), |w| {
            mlp_set_flat(&mut probe, w);
            eval(&probe, &p1, &f1, &p2, &f2)
        });
        s.run(&mat_flat(&f1), &mat_flat(&gr.frame1_features), |v| {
            eval(&mlp, &p1, &mat_from(v, n1, c), &p2, &f2)
        });
        s.run(&mat_flat(&f2), &mat_flat(&gr.frame2_features), |v| {
            eval(&mlp, &p1, &f1, &p2, &mat_from(v, n2, c))
        });
        s.run(&flatten(&p1), &flatten(&gr.frame1_positions), |v| eval(&mlp, &unflatten(v), &f1, &p2, &f2));
        s.run(&flatten(&p2), &flatten(&gr.frame2_positions), |v| eval(&mlp, &p1, &f1, &unflatten(v), &f2));
    }
    rep
}

pub fn set_upconv(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    let ctx = Context::train();
    for inst in 0..instances as u64 {
        let mut g = rng(6000 + inst);
        let mut spec = LayerSpec::set_upconv(0.7, 2.0, vec![5, 4]);
        if inst % 2 == 1 {
            spec.pooling = PoolMode::Avg;
        }
        let (ns, nt, c, cs) = (10, 16, 3, 2);
        let ps = random_points(&mut g, ns, 0.5);
        let fs = random_matrix(&mut g, ns, c);
        let pt = random_points(&mut g, nt, 0.5);
        let skip = random_matrix(&mut g, nt, cs);
        let mlp = Mlp::init(&spec.mlp_spec(inst % 3 != 2), spec.mlp_in_width(c), Seed(inst)).unwrap();
        let seed = Seed(5 + inst);
        let r = random_matrix(&mut g, nt, 4 + cs);
        let eval = |mlp: &Mlp, ps: &[Vec3], fs: &Array2<f64>, pt: &[Vec3], skip: &Array2<f64>| {
            let src = PointCloud::with_features(ps.to_vec(), fs.clone());
            let (out, t) = set_upconv_forward(&spec, mlp, &src, pt, Some(skip.view()), seed, &ctx).unwrap();
            (dot(out.features.view(), &r), hash_of(|h| t.hash_structure(h)))
        };
        let src = PointCloud::with_features(ps.clone(), fs.clone());
        let (_, tape) = set_upconv_forward(&spec, &mlp, &src, &pt, Some(skip.view()), seed, &ctx).unwrap();
        let gr = set_upconv_backward(&mlp, &tape, r.view()).unwrap();
        let mut s = Sweep { report: &mut rep };
        let mut probe = mlp.clone();
        s.run(&mlp_flat(&mlp), &grad_flat(&gr.params), |w| {
            mlp_set_flat(&mut probe, w);
            eval(&probe, &ps, &fs, &pt, &skip)
        });
        s.run(&mat_flat(&fs), &mat_flat(&gr.source_features), |v| {
            eval(&mlp, &ps, &mat_from(v, ns, c), &pt, &skip)
        });
        s.run(&flatten(&ps), &flatten(&gr.source_positions), |v| eval(&mlp, &unflatten(v), &fs, &pt, &skip));
        s.run(&flatten(&pt), &flatten(&gr.target_positions), |v| eval(&mlp, &ps, &fs, &unflatten(v), &skip));
        s.run(&mat_flat(&skip), &mat_flat(gr.skip_features.as_ref().unwrap()), |v| {
            eval(&mlp, &ps, &fs, &pt, &mat_from(v, nt, cs))
        });
    }
    rep
}

pub fn interp(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(7000 + inst);
        let (ns, nt, c) = (9, 12, 3);
        let ps = random_points(&mut g, ns, 1.0);
        let fs = random_matrix(&mut g, ns, c);
        let pt = random_points(&mut g, nt, 1.0);
        let r = random_matrix(&mut g, nt, c);
        let eval = |ps: &[Vec3], fs: &Array2<f64>, pt: &[Vec3]| {
            let src = PointCloud::with_features(ps.to_vec(), fs.clone());
            let (out, _) = three_interp(&src, pt).unwrap();
            let nn = brute_knn(ps, pt, 3);
            (dot(out.view(), &r), hash_of(|h| std::hash::Hash::hash(&nn, h)))
        };
        let src = PointCloud::with_features(ps.clone(), fs.clone());
        let (_, tape) = three_interp(&src, &pt).unwrap();
        let gr = tape.backward(r.view()).unwrap();
        let mut s = Sweep { report: &mut rep };
        s.run(&mat_flat(&fs), &mat_flat(&gr.source_features), |v| eval(&ps, &mat_from(v, ns, c), &pt));
        s.run(&flatten(&ps), &flatten(&gr.source_positions), |v| eval(&unflatten(v), &fs, &pt));
        s.run(&flatten(&pt), &flatten(&gr.target_positions), |v| eval(&ps, &fs, &unflatten(v)));
    }
    rep
}

/// Full training objective including the cycle term, over all parameters
/// of a tiny model.
pub fn scene_loss(instances: usize) -> FdReport {
    let mut rep = FdReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(8000 + inst);
        let p = random_points(&mut g, 16, 0.5);
        let q = random_points(&mut g, 14, 0.5);
        let gt: Vec<Vec3> = random_points(&mut g, 16, 0.3);
        let mask: Vec<bool> = (0..16).map(|_| g.random_bool(0.85)).collect();
        let sample = SceneSample {
            frame1: PointCloud::new(p),
            frame2: PointCloud::new(q),
            gt_flow: Some(FlowField::new(gt)),
            mask: Some(mask),
        };
        let cfg = TrainConfig {
            use_cycle: true,
            lambda_cycle: 0.3,
            huber_delta: if inst % 2 == 0 { 1.0 } else { 0.15 },
            stop_cycle_gradient: inst % 4 == 3,
            ..TrainConfig::default()
        };
        let net = FlowNet::init(&ModelSpec::tiny(), Seed(inst)).unwrap();
        let seed = Seed(300 + inst);
        let out = scene_flow_loss(&net, &sample, &cfg, seed).unwrap();
        assert!(out.cycle > 0.0);
        let mut probe = net.clone();
        let stop = cfg.stop_cycle_gradient;
        rep.merge(fd_check(&net.to_flat(), &out.grad.to_flat(), 0..net.param_count(), |w| {
            probe.set_flat(w).unwrap();
            if stop {
                // With the stop, the objective is the one whose cycle-pass
                // input is held at the unperturbed prediction.
                return stopped_objective(&probe, &net, &sample, &cfg, seed);
            }
            let o = scene_flow_loss(&probe, &sample, &cfg, seed).unwrap();
            (o.loss, o.structure)
        }));
    }
    rep
}

/// Loss with the cycle pass fed from `frozen`'s forward flow for the
/// shifted input, while the residual uses `net`'s own predictions.
fn stopped_objective(net: &FlowNet, frozen: &FlowNet, s: &SceneSample, cfg: &TrainConfig, seed: Seed) -> (f64, u64) {
    let ctx = Context::train();
    let p = &s.frame1;
    let gt = s.gt_flow.as_ref().unwrap();
    let (d, iso, t1) = net.forward(p, &s.frame2, seed.derive(0), &ctx).unwrap();
    let (d0, _, _) = frozen.forward(p, &s.frame2, seed.derive(0), &ctx).unwrap();
    let shifted = PointCloud::new(p.positions.iter().zip(&d0.vectors).map(|(x, v)| x + v).collect());
    let (back, iso2, t2) = net.forward(&shifted, p, seed.derive(1), &ctx).unwrap();
    let sup: Vec<usize> = (0..p.len()).filter(|&i| s.mask.as_ref().unwrap()[i] && !iso[i]).collect();
    let inv = 1.0 / sup.len() as f64;
    let mut l = 0.0;
    for &i in &sup {
        l += huber(&(d.vectors[i] - gt.vectors[i]), cfg.huber_delta).0 * inv;
        if !iso2[i] {
            l += cfg.lambda_cycle * huber(&(back.vectors[i] + d.vectors[i]), cfg.huber_delta).0 * inv;
        }
    }
    (l, hash_of(|h| {
        t1.hash_structure(h);
        t2.hash_structure(h);
    }))
}
