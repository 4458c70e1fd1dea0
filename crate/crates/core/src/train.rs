//! Supervised training with the cycle-consistency term.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Context;
use crate::model::{FlowNet, FlowNetGrad, ModelSpec, ModelTape};
use crate::nn::{point_loss, BatchNormConfig, LossVariant};
use crate::seed::Seed;
use crate::types::{FlowField, PointCloud, SceneSample, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

/// Every field can be set from a flat JSON object with these exact keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_cycle: f64,
    pub use_cycle: bool,
    /// Treat P' = P + D as a constant in the cycle pass.
    pub stop_cycle_gradient: bool,
    pub loss_variant: LossVariant,
    pub huber_delta: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every_epochs: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps (0 = no limit).
    pub max_steps: usize,
    pub seed: u64,
    /// Fraction of the dataset held out for per-epoch evaluation.
    pub eval_fraction: f64,
    /// Write a checkpoint every this many steps (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Random rotation about the up axis applied jointly to each training
    /// sample (radians, uniform in ±value; 0 disables).
    pub augment_rotation: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_cycle: 0.3,
            use_cycle: true,
            stop_cycle_gradient: false,
            loss_variant: LossVariant::HuberNorm,
            huber_delta: 1.0,
            lr: 1e-3,
            lr_decay: 0.7,
            decay_every_epochs: 10,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            batch_size: 4,
            epochs: 10,
            max_steps: 0,
            seed: 0,
            eval_fraction: 0.1,
            checkpoint_every: 0,
            checkpoint_dir: None,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            augment_rotation: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda_cycle >= 0.0) {
            return bad("lambda_cycle must be ≥ 0");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be ≥ 0");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad("eval_fraction must be in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        Ok(())
    }

    fn context(&self) -> Context {
        Context {
            mode: crate::nn::Mode::Train,
            bn: BatchNormConfig {
                momentum: self.bn_momentum,
                eps: self.bn_eps,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub supervised: f64,
    pub cycle: f64,
    pub grad: FlowNetGrad,
    /// Mean EPE of the forward prediction over supervised points.
    pub epe: f64,
    pub supervised_count: usize,
    pub flow: FlowField,
    /// Train-mode tape of the forward pass (source of BN statistics).
    pub tape: ModelTape,
    /// Hash of the discrete choices made by both passes.
    pub structure: u64,
}

/// Per-sample objective: mean over supervised points of
/// `ρ(d_i − d*_i) + λ·ρ(d'_i + d_i)`, with d' predicted from (P + D, P).
/// Supervised points are those with mask set and not isolated in the
/// forward pass; the cycle term also skips points isolated in the cycle
/// pass. Gradients pass through both forward evaluations.
pub fn scene_flow_loss(net: &FlowNet, sample: &SceneSample, cfg: &TrainConfig, seed: Seed) -> Result<LossOutput> {
    let gt = sample.gt_flow.as_ref().ok_or(Error::NoGroundTruth)?;
    sample.validate()?;
    let ctx = cfg.context();
    let p = PointCloud::new(sample.frame1.positions.clone());
    let q = PointCloud::new(sample.frame2.positions.clone());
    let (flow, iso, tape) = net.forward(&p, &q, seed.derive(0), &ctx)?;
    let n = p.len();
    let supervised: Vec<bool> = (0..n)
        .map(|i| sample.mask.as_ref().is_none_or(|m| m[i]) && !iso[i])
        .collect();
    let count = supervised.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(Error::AllPointsMasked);
    }
    let inv = 1.0 / count as f64;
    let mut grad_d = vec![Vec3::zeros(); n];
    let (mut sup, mut epe) = (0.0, 0.0);
    for i in (0..n).filter(|&i| supervised[i]) {
        let r = flow.vectors[i] - gt.vectors[i];
        let (l, g) = point_loss(cfg.loss_variant, &r, cfg.huber_delta);
        sup += l * inv;
        epe += r.norm() * inv;
        grad_d[i] += g * inv;
    }
    let mut cyc = 0.0;
    let mut grad = net.zero_grad();
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    tape.hash_structure(&mut hasher);
    let lambda = cfg.lambda_cycle;
    if cfg.use_cycle && lambda > 0.0 {
        let shifted = PointCloud::new(p.positions.iter().zip(&flow.vectors).map(|(x, d)| x + d).collect());
        let (back, iso2, tape2) = net.forward(&shifted, &p, seed.derive(1), &ctx)?;
        let mut grad_back = vec![Vec3::zeros(); n];
        for i in (0..n).filter(|&i| supervised[i] && !iso2[i]) {
            let r = back.vectors[i] + flow.vectors[i];
            let (l, g) = point_loss(cfg.loss_variant, &r, cfg.huber_delta);
            cyc += lambda * l * inv;
            let g = g * (lambda * inv);
            grad_back[i] = g;
            grad_d[i] += g;
        }
        tape2.hash_structure(&mut hasher);
        let g2 = net.backward(&tape2, &grad_back)?;
        grad.add_assign(&g2.params);
        if !cfg.stop_cycle_gradient {
            for (gd, gp) in grad_d.iter_mut().zip(&g2.frame1_positions) {
                *gd += gp;
            }
        }
    }
    let g1 = net.backward(&tape, &grad_d)?;
    grad.add_assign(&g1.params);
    Ok(LossOutput {
        loss: sup + cyc,
        supervised: sup,
        cycle: cyc,
        grad,
        epe,
        supervised_count: count,
        flow,
        tape,
        structure: std::hash::Hasher::finish(&hasher),
    })
}

/// First-order optimizer state over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    momentum: f64,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, n: usize) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            momentum: cfg.momentum,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let b1t = 1.0 - self.beta1.powi(self.t as i32);
                let b2t = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                    let mh = self.m[i] / b1t;
                    let vh = self.v[i] / b2t;
                    params[i] -= lr * mh / (vh.sqrt() + self.eps);
                }
            }
            OptimizerKind::SgdMomentum => {
                for i in 0..params.len() {
                    self.m[i] = self.momentum * self.m[i] + grad[i];
                    params[i] -= lr * self.m[i];
                }
            }
        }
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub epe: f64,
    pub lr: f64,
}

impl StepRecord {
    /// `step loss epe lr`, space separated.
    pub fn log_line(&self) -> String {
        format!("{} {} {} {}", self.step, self.loss, self.epe, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FlowNet,
    pub log: Vec<StepRecord>,
    /// (epoch, mean held-out EPE) after each epoch, when a split exists.
    pub eval: Vec<(usize, f64)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&r.log_line());
            s.push('\n');
        }
        s
    }
}

fn rotate_sample(sample: &SceneSample, angle: f64) -> SceneSample {
    let tf = crate::types::RigidTransform::from_axis_angle(&Vec3::z(), angle, Vec3::zeros());
    let rot = |c: &PointCloud| PointCloud::new(c.positions.iter().map(|p| tf.apply(p)).collect());
    SceneSample {
        frame1: rot(&sample.frame1),
        frame2: rot(&sample.frame2),
        gt_flow: sample
            .gt_flow
            .as_ref()
            .map(|f| FlowField::new(f.vectors.iter().map(|d| tf.rotation * d).collect())),
        mask: sample.mask.clone(),
    }
}

/// Mean inference-mode EPE over samples, on mask-selected points.
pub fn evaluate(net: &FlowNet, samples: &[SceneSample], seed: Seed) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let gt = s.gt_flow.as_ref().ok_or(Error::NoGroundTruth)?;
        let (flow, _) = net.predict(&s.frame1, &s.frame2, seed.derive(k as u64))?;
        total += crate::eval::epe(&flow, gt, s.mask.as_deref())?;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(spec: &ModelSpec, dataset: &[SceneSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = FlowNet::init(spec, Seed(cfg.seed).derive(0x1417))?;
    train_from(net, dataset, cfg)
}

/// Trains starting from the given weights.
pub fn train_from(mut net: FlowNet, dataset: &[SceneSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seed = Seed(cfg.seed);
    let n_eval = (dataset.len() as f64 * cfg.eval_fraction).floor() as usize;
    let n_eval = if n_eval >= dataset.len() { 0 } else { n_eval };
    let (train_set, eval_set) = dataset.split_at(dataset.len() - n_eval);
    let mut opt = Optimizer::new(cfg, net.param_count());
    let mut params = net.to_flat();
    let mut log = Vec::new();
    let mut eval = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi((epoch / cfg.decay_every_epochs.max(1)) as i32);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seed.derive(0x5eed).derive(epoch as u64).rng());
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
            let step_seed = seed.derive(0xf00d).derive(step as u64);
            let mut grad_acc: Option<FlowNetGrad> = None;
            let (mut loss, mut epe) = (0.0, 0.0);
            let mut tapes = Vec::with_capacity(batch.len());
            for (k, &idx) in batch.iter().enumerate() {
                let s_seed = step_seed.derive(k as u64);
                let sample = if cfg.augment_rotation > 0.0 {
                    use rand::Rng;
                    let a = s_seed
                        .derive(7)
                        .rng()
                        .random_range(-cfg.augment_rotation..=cfg.augment_rotation);
                    rotate_sample(&train_set[idx], a)
                } else {
                    train_set[idx].clone()
                };
                let out = scene_flow_loss(&net, &sample, cfg, s_seed)?;
                loss += out.loss;
                epe += out.epe;
                match grad_acc.as_mut() {
                    Some(g) => g.add_assign(&out.grad),
                    None => grad_acc = Some(out.grad),
                }
                tapes.push(out.tape);
            }
            let b = batch.len() as f64;
            let mut grad = grad_acc.expect("non-empty batch").to_flat();
            grad.iter_mut().for_each(|g| *g /= b);
            clip_global_norm(&mut grad, cfg.clip_norm);
            opt.step(&mut params, &grad, lr);
            net.set_flat(&params)?;
            for t in &tapes {
                net.update_running_stats_with(t, cfg.bn_momentum);
            }
            step += 1;
            log.push(StepRecord {
                step,
                loss: loss / b,
                epe: epe / b,
                lr,
            });
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                if let Some(dir) = &cfg.checkpoint_dir {
                    let path = dir.join(format!("step_{step:06}.fn3c"));
                    crate::data::write_checkpoint(&path, &net)?;
                    checkpoints.push(path);
                }
            }
        }
        if !eval_set.is_empty() {
            eval.push((epoch, evaluate(&net, eval_set, seed.derive(0xe7a1))?));
        }
    }
    Ok(TrainOutcome {
        net,
        log,
        eval,
        checkpoints,
    })
}
