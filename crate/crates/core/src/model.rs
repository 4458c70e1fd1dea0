//! The full two-frame flow network: shared set conv encoders, a flow
//! embedding, further set convs on the frame-1 side, set upconvs with skip
//! connections back to the input points, and a linear regression head.

use std::hash::Hasher;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    flow_embedding_backward, flow_embedding_forward, set_conv_backward, set_conv_forward,
    set_upconv_backward, set_upconv_forward, Context, FlowEmbeddingTape, LayerKind, LayerSpec,
    Mixing, SetConvTape, SetUpconvTape,
};
use crate::nn::{Mlp, MlpGrad, MlpSpec, MlpTape, PoolMode};
use crate::seed::Seed;
use crate::types::{validate_cloud, FlowField, PointCloud, Vec3};

/// Initial head weights are the usual uniform draw times this factor, so an
/// untrained network predicts flows of a few centimeters rather than meters.
pub const HEAD_INIT_SCALE: f64 = 0.1;

/// Layer stack. `encoder` runs on both frames, `flow_embedding` mixes them,
/// `middle` continues on the frame-1 side, and `decoder` walks back up the
/// levels (it must hold `encoder.len() + middle.len()` upconvs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: Vec<LayerSpec>,
    pub flow_embedding: LayerSpec,
    pub middle: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub use_batchnorm: bool,
    pub share_frame_encoders: bool,
}

impl ModelSpec {
    /// The reference architecture.
    pub fn table1() -> Self {
        ModelSpec {
            encoder: vec![
                LayerSpec::set_conv(0.5, 0.5, vec![32, 32, 64]),
                LayerSpec::set_conv(1.0, 0.25, vec![64, 64, 128]),
            ],
            flow_embedding: LayerSpec::flow_embedding(5.0, vec![128, 128, 128]),
            middle: vec![
                LayerSpec::set_conv(2.0, 0.25, vec![128, 128, 256]),
                LayerSpec::set_conv(4.0, 0.25, vec![256, 256, 512]),
            ],
            decoder: vec![
                LayerSpec::set_upconv(4.0, 4.0, vec![128, 128, 256]),
                LayerSpec::set_upconv(2.0, 4.0, vec![128, 128, 256]),
                LayerSpec::set_upconv(1.0, 4.0, vec![128, 128, 128]),
                LayerSpec::set_upconv(0.5, 2.0, vec![128, 128, 128]),
            ],
            use_batchnorm: true,
            share_frame_encoders: true,
        }
    }

    /// A very small network for gradient checks on ~16-point clouds spread
    /// over a unit-sized region.
    pub fn tiny() -> Self {
        ModelSpec {
            encoder: vec![LayerSpec::set_conv(0.6, 0.5, vec![4, 4])],
            flow_embedding: LayerSpec::flow_embedding(1.2, vec![4, 4]),
            middle: vec![LayerSpec::set_conv(1.0, 0.5, vec![4, 4])],
            decoder: vec![
                LayerSpec::set_upconv(1.2, 2.0, vec![4, 4]),
                LayerSpec::set_upconv(0.8, 2.0, vec![4, 4]),
            ],
            use_batchnorm: true,
            share_frame_encoders: true,
        }
    }

    /// Every MLP width multiplied by `factor` (rounded, at least 1).
    pub fn scaled_widths(mut self, factor: f64) -> Self {
        for l in self.layers_mut() {
            for w in &mut l.mlp_widths {
                *w = ((*w as f64 * factor).round() as usize).max(1);
            }
        }
        self
    }

    /// Every radius multiplied by `factor`.
    pub fn scaled_radii(mut self, factor: f64) -> Self {
        for l in self.layers_mut() {
            l.radius *= factor;
        }
        self
    }

    pub fn with_pooling(mut self, pooling: PoolMode) -> Self {
        for l in self.layers_mut() {
            l.pooling = pooling;
        }
        self
    }

    pub fn with_mixing(mut self, mixing: Mixing) -> Self {
        self.flow_embedding.mixing = mixing;
        self
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.flow_embedding))
            .chain(&self.middle)
            .chain(&self.decoder)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerSpec> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.flow_embedding))
            .chain(&mut self.middle)
            .chain(&mut self.decoder)
    }

    pub fn validate(&self) -> Result<()> {
        for l in self.layers() {
            l.validate()?;
        }
        let kinds_ok = self.encoder.iter().all(|l| l.kind == LayerKind::SetConv)
            && self.middle.iter().all(|l| l.kind == LayerKind::SetConv)
            && self.decoder.iter().all(|l| l.kind == LayerKind::SetUpconv)
            && self.flow_embedding.kind == LayerKind::FlowEmbedding;
        if !kinds_ok {
            return Err(Error::InvalidSpec("layer kinds out of order".into()));
        }
        if self.encoder.is_empty() || self.middle.is_empty() {
            return Err(Error::InvalidSpec(
                "need at least one set conv before and after the flow embedding".into(),
            ));
        }
        if self.decoder.len() != self.encoder.len() + self.middle.len() {
            return Err(Error::InvalidSpec(format!(
                "{} upconvs cannot mirror {} set convs",
                self.decoder.len(),
                self.encoder.len() + self.middle.len()
            )));
        }
        Ok(())
    }

    fn depth(&self) -> (usize, usize) {
        (self.encoder.len(), self.middle.len())
    }

    /// Feature widths `F_l` of the frame-1 levels, with `E` (the embedding
    /// width) at the flow-embedding level reported separately.
    fn level_widths(&self) -> (Vec<usize>, usize) {
        let (a, b) = self.depth();
        let mut w = vec![0; a + b + 1];
        for k in 0..a {
            w[k + 1] = self.encoder[k].out_width();
        }
        for k in 0..b {
            w[a + k + 1] = self.middle[k].out_width();
        }
        (w, self.flow_embedding.out_width())
    }

    fn skip_width(&self, level: usize) -> usize {
        let (a, _) = self.depth();
        let (w, e) = self.level_widths();
        match level {
            0 => 0,
            l if l == a => w[a] + e,
            l => w[l],
        }
    }

    /// Smallest frame-1 size for which every sampling stage keeps at least
    /// one point without clamping.
    pub fn min_points(&self) -> usize {
        let rate: f64 = self
            .encoder
            .iter()
            .chain(&self.middle)
            .map(|l| l.sample_rate)
            .product();
        (1.0 / rate).ceil() as usize
    }
}

/// All trainable weights (and BN running statistics) of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNet {
    pub spec: ModelSpec,
    pub encoder: Vec<Mlp>,
    /// Frame-2 encoder when frames do not share weights.
    pub encoder2: Option<Vec<Mlp>>,
    pub flow_embedding: Mlp,
    pub middle: Vec<Mlp>,
    pub decoder: Vec<Mlp>,
    pub head: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetGrad {
    pub encoder: Vec<MlpGrad>,
    pub encoder2: Option<Vec<MlpGrad>>,
    pub flow_embedding: MlpGrad,
    pub middle: Vec<MlpGrad>,
    pub decoder: Vec<MlpGrad>,
    pub head: MlpGrad,
}

impl FlowNetGrad {
    fn mlps(&self) -> impl Iterator<Item = &MlpGrad> {
        self.encoder
            .iter()
            .chain(self.encoder2.iter().flatten())
            .chain(std::iter::once(&self.flow_embedding))
            .chain(&self.middle)
            .chain(&self.decoder)
            .chain(std::iter::once(&self.head))
    }

    fn mlps_mut(&mut self) -> impl Iterator<Item = &mut MlpGrad> {
        self.encoder
            .iter_mut()
            .chain(self.encoder2.iter_mut().flatten())
            .chain(std::iter::once(&mut self.flow_embedding))
            .chain(&mut self.middle)
            .chain(&mut self.decoder)
            .chain(std::iter::once(&mut self.head))
    }

    pub fn add_assign(&mut self, other: &FlowNetGrad) {
        for (a, b) in self.mlps_mut().zip(other.mlps()) {
            a.add_assign(b);
        }
    }

    /// Flattened in the same order as [`FlowNet::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.mlps() {
            g.visit(&mut |s| out.extend_from_slice(s));
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.mlps_mut() {
            g.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v *= k));
        }
    }
}

impl FlowNet {
    pub fn init(spec: &ModelSpec, seed: Seed) -> Result<FlowNet> {
        spec.validate()?;
        let bn = spec.use_batchnorm;
        let (a, b) = spec.depth();
        let encoder_at = |tag: u64| -> Result<Vec<Mlp>> {
            let mut c = 0;
            let mut out = Vec::new();
            for (k, l) in spec.encoder.iter().enumerate() {
                out.push(Mlp::init(&l.mlp_spec(bn), l.mlp_in_width(c), seed.derive(tag + k as u64))?);
                c = l.out_width();
            }
            Ok(out)
        };
        let encoder = encoder_at(0)?;
        let encoder2 = if spec.share_frame_encoders {
            None
        } else {
            Some(encoder_at(100)?)
        };
        let (widths, e) = spec.level_widths();
        let fe = &spec.flow_embedding;
        let flow_embedding = Mlp::init(&fe.mlp_spec(bn), fe.mlp_in_width(widths[a]), seed.derive(200))?;
        let mut middle = Vec::new();
        let mut c = e;
        for (k, l) in spec.middle.iter().enumerate() {
            middle.push(Mlp::init(&l.mlp_spec(bn), l.mlp_in_width(c), seed.derive(300 + k as u64))?);
            c = l.out_width();
        }
        let mut decoder = Vec::new();
        for (k, l) in spec.decoder.iter().enumerate() {
            decoder.push(Mlp::init(&l.mlp_spec(bn), l.mlp_in_width(c), seed.derive(400 + k as u64))?);
            c = l.out_width() + spec.skip_width(a + b - 1 - k);
        }
        let mut head = Mlp::init(&MlpSpec::linear(3), c, seed.derive(500))?;
        head.layers[0].weight *= HEAD_INIT_SCALE;
        Ok(FlowNet {
            spec: spec.clone(),
            encoder,
            encoder2,
            flow_embedding,
            middle,
            decoder,
            head,
        })
    }

    fn named_mlps(&self) -> Vec<(String, &Mlp)> {
        let mut out = Vec::new();
        for (k, m) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{k}"), m));
        }
        for (k, m) in self.encoder2.iter().flatten().enumerate() {
            out.push((format!("encoder2.{k}"), m));
        }
        out.push(("flow_embedding".to_string(), &self.flow_embedding));
        for (k, m) in self.middle.iter().enumerate() {
            out.push((format!("middle.{k}"), m));
        }
        for (k, m) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{k}"), m));
        }
        out.push(("head".to_string(), &self.head));
        out
    }

    fn mlps_mut(&mut self) -> Vec<(String, &mut Mlp)> {
        let mut out = Vec::new();
        for (k, m) in self.encoder.iter_mut().enumerate() {
            out.push((format!("encoder.{k}"), m));
        }
        for (k, m) in self.encoder2.iter_mut().flatten().enumerate() {
            out.push((format!("encoder2.{k}"), m));
        }
        out.push(("flow_embedding".to_string(), &mut self.flow_embedding));
        for (k, m) in self.middle.iter_mut().enumerate() {
            out.push((format!("middle.{k}"), m));
        }
        for (k, m) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.{k}"), m));
        }
        out.push(("head".to_string(), &mut self.head));
        out
    }

    /// Trainable tensors with stable names, in flattening order.
    pub fn visit(&self, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        for (name, m) in self.named_mlps() {
            m.visit(&name, f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut [f64])) {
        for (name, m) in self.mlps_mut() {
            m.visit_mut(&name, f);
        }
    }

    /// BN running statistics, named like the trainables.
    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(String, &mut [f64])) {
        for (name, m) in self.mlps_mut() {
            m.visit_stats_mut(&name, f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, s| n += s.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, s| out.extend_from_slice(s));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::LengthMismatch(flat.len(), n));
        }
        let mut pos = 0;
        self.visit_mut(&mut |_, s| {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        });
        Ok(())
    }

    pub fn zero_grad(&self) -> FlowNetGrad {
        FlowNetGrad {
            encoder: self.encoder.iter().map(Mlp::zero_grad).collect(),
            encoder2: self
                .encoder2
                .as_ref()
                .map(|e| e.iter().map(Mlp::zero_grad).collect()),
            flow_embedding: self.flow_embedding.zero_grad(),
            middle: self.middle.iter().map(Mlp::zero_grad).collect(),
            decoder: self.decoder.iter().map(Mlp::zero_grad).collect(),
            head: self.head.zero_grad(),
        }
    }

    fn frame2_encoder(&self) -> &[Mlp] {
        self.encoder2.as_deref().unwrap_or(&self.encoder)
    }

    /// Predicts flow for every frame-1 point. Positions only; any features on
    /// the input clouds are ignored.
    pub fn forward(
        &self,
        frame1: &PointCloud,
        frame2: &PointCloud,
        seed: Seed,
        ctx: &Context,
    ) -> Result<(FlowField, Vec<bool>, ModelTape)> {
        validate_cloud(frame1)?;
        validate_cloud(frame2)?;
        let spec = &self.spec;
        let (a, b) = spec.depth();
        let mut levels = vec![frame1.positions.clone()];
        let mut feats: Vec<Option<Array2<f64>>> = vec![None];

        let mut enc1 = Vec::with_capacity(a);
        let mut cloud = PointCloud::new(frame1.positions.clone());
        for k in 0..a {
            let (out, t) = set_conv_forward(&spec.encoder[k], &self.encoder[k], &cloud, seed.derive(10 + k as u64), ctx)?;
            levels.push(out.positions.clone());
            feats.push(out.features.clone());
            enc1.push(t);
            cloud = out;
        }
        let mut enc2 = Vec::with_capacity(a);
        let mut cloud2 = PointCloud::new(frame2.positions.clone());
        for k in 0..a {
            let (out, t) = set_conv_forward(
                &spec.encoder[k],
                &self.frame2_encoder()[k],
                &cloud2,
                seed.derive(20 + k as u64),
                ctx,
            )?;
            enc2.push(t);
            cloud2 = out;
        }
        let (emb, fe_tape) = flow_embedding_forward(
            &spec.flow_embedding,
            &self.flow_embedding,
            &cloud,
            &cloud2,
            seed.derive(30),
            ctx,
        )?;
        let embedding = emb.cloud.features.clone().expect("embedding features");

        let mut mid = Vec::with_capacity(b);
        let mut cur = emb.cloud;
        for k in 0..b {
            let (out, t) = set_conv_forward(&spec.middle[k], &self.middle[k], &cur, seed.derive(40 + k as u64), ctx)?;
            levels.push(out.positions.clone());
            feats.push(out.features.clone());
            mid.push(t);
            cur = out;
        }

        let mut dec = Vec::with_capacity(a + b);
        let mut isolated = Vec::new();
        for k in 0..a + b {
            let target = a + b - 1 - k;
            let skip = match target {
                0 => None,
                l if l == a => Some(
                    ndarray::concatenate(
                        Axis(1),
                        &[feats[a].as_ref().expect("level features").view(), embedding.view()],
                    )
                    .expect("same row count"),
                ),
                l => feats[l].clone(),
            };
            let (out, t) = set_upconv_forward(
                &spec.decoder[k],
                &self.decoder[k],
                &cur,
                &levels[target],
                skip.as_ref().map(|s| s.view()),
                seed.derive(50 + k as u64),
                ctx,
            )?;
            dec.push(t);
            isolated = out.isolated;
            cur = PointCloud::with_features(levels[target].clone(), out.features);
        }
        let head_in = cur.features.expect("decoder features");
        let (flow, head_tape) = self.head.forward(head_in.view(), ctx.mode, &ctx.bn)?;
        let vectors = flow
            .rows()
            .into_iter()
            .map(|r| Vec3::new(r[0], r[1], r[2]))
            .collect();
        Ok((
            FlowField::new(vectors),
            isolated,
            ModelTape {
                enc1,
                enc2,
                fe: fe_tape,
                mid,
                dec,
                head: head_tape,
                level_sizes: levels.iter().map(Vec::len).collect(),
                n2: frame2.len(),
            },
        ))
    }

    /// Forward in inference mode, discarding the tape.
    pub fn predict(&self, frame1: &PointCloud, frame2: &PointCloud, seed: Seed) -> Result<(FlowField, Vec<bool>)> {
        let (flow, iso, _) = self.forward(frame1, frame2, seed, &Context::infer())?;
        Ok((flow, iso))
    }

    /// Exact gradients of `Σ grad_flow ⊙ flow` with respect to every
    /// parameter and to both frames' input positions.
    pub fn backward(&self, tape: &ModelTape, grad_flow: &[Vec3]) -> Result<ModelGrad> {
        let (a, b) = self.spec.depth();
        let n1 = tape.level_sizes[0];
        if grad_flow.len() != n1 {
            return Err(Error::LengthMismatch(grad_flow.len(), n1));
        }
        let mut params = self.zero_grad();
        let mut g = Array2::zeros((n1, 3));
        for (i, v) in grad_flow.iter().enumerate() {
            g[(i, 0)] = v.x;
            g[(i, 1)] = v.y;
            g[(i, 2)] = v.z;
        }
        let (mut grad, hg) = self.head.backward(&tape.head, g.view())?;
        params.head = hg;

        let (widths, _) = self.spec.level_widths();
        let mut gpos: Vec<Vec<Vec3>> = tape.level_sizes.iter().map(|&n| vec![Vec3::zeros(); n]).collect();
        let mut gfeat: Vec<Array2<f64>> = tape
            .level_sizes
            .iter()
            .zip(&widths)
            .map(|(&n, &w)| Array2::zeros((n, w)))
            .collect();
        let mut gemb: Array2<f64> = Array2::zeros((tape.level_sizes[a], self.spec.flow_embedding.out_width()));

        for k in (0..a + b).rev() {
            let target = a + b - 1 - k;
            let ug = set_upconv_backward(&self.decoder[k], &tape.dec[k], grad.view())?;
            params.decoder[k] = ug.params;
            add_vecs(&mut gpos[target + 1], &ug.source_positions);
            add_vecs(&mut gpos[target], &ug.target_positions);
            if let Some(sk) = ug.skip_features {
                if target == a {
                    let wa = widths[a];
                    gfeat[a] += &sk.slice(s![.., ..wa]);
                    gemb += &sk.slice(s![.., wa..]);
                } else {
                    gfeat[target] += &sk;
                }
            }
            grad = ug.source_features;
        }
        // `grad` now holds the gradient on the deepest middle-level features.
        gfeat[a + b] += &grad;

        for k in (0..b).rev() {
            let lvl = a + k + 1;
            let cg = set_conv_backward(&self.middle[k], &tape.mid[k], gfeat[lvl].view(), Some(&gpos[lvl]))?;
            params.middle[k] = cg.params;
            add_vecs(&mut gpos[lvl - 1], &cg.positions);
            if k == 0 {
                gemb += &cg.features;
            } else {
                gfeat[lvl - 1] += &cg.features;
            }
        }

        let fg = flow_embedding_backward(&self.flow_embedding, &tape.fe, gemb.view())?;
        params.flow_embedding = fg.params;
        gfeat[a] += &fg.frame1_features;
        add_vecs(&mut gpos[a], &fg.frame1_positions);

        // Frame 1 encoder.
        let mut enc_grads = Vec::with_capacity(a);
        for k in (0..a).rev() {
            let cg = set_conv_backward(&self.encoder[k], &tape.enc1[k], gfeat[k + 1].view(), Some(&gpos[k + 1]))?;
            add_vecs(&mut gpos[k], &cg.positions);
            if k > 0 {
                gfeat[k] += &cg.features;
            }
            enc_grads.push(cg.params);
        }
        enc_grads.reverse();

        // Frame 2 encoder, starting from the embedding's frame-2 gradients.
        let mut g2f = fg.frame2_features;
        let mut g2p = fg.frame2_positions;
        let mut enc2_grads = Vec::with_capacity(a);
        for k in (0..a).rev() {
            let cg = set_conv_backward(&self.frame2_encoder()[k], &tape.enc2[k], g2f.view(), Some(&g2p))?;
            g2f = cg.features;
            g2p = cg.positions;
            enc2_grads.push(cg.params);
        }
        enc2_grads.reverse();

        if self.encoder2.is_some() {
            params.encoder = enc_grads;
            params.encoder2 = Some(enc2_grads);
        } else {
            for (e, e2) in enc_grads.iter_mut().zip(&enc2_grads) {
                e.add_assign(e2);
            }
            params.encoder = enc_grads;
        }
        let _ = tape.n2;
        Ok(ModelGrad {
            params,
            frame1_positions: std::mem::take(&mut gpos[0]),
            frame2_positions: g2p,
        })
    }

    /// Applies the BN running-statistics update recorded in a train-mode tape.
    pub fn update_running_stats(&mut self, tape: &ModelTape) {
        let m = crate::nn::BatchNormConfig::default().momentum;
        self.update_running_stats_with(tape, m);
    }

    pub fn update_running_stats_with(&mut self, tape: &ModelTape, momentum: f64) {
        let shared = self.encoder2.is_none();
        for (k, t) in tape.enc1.iter().enumerate() {
            if let Some(mt) = t.mlp_tape() {
                self.encoder[k].update_running_stats(mt, momentum);
            }
        }
        for (k, t) in tape.enc2.iter().enumerate() {
            if let Some(mt) = t.mlp_tape() {
                if shared {
                    self.encoder[k].update_running_stats(mt, momentum);
                } else if let Some(e2) = self.encoder2.as_mut() {
                    e2[k].update_running_stats(mt, momentum);
                }
            }
        }
        if let Some(mt) = tape.fe.mlp_tape() {
            self.flow_embedding.update_running_stats(mt, momentum);
        }
        for (k, t) in tape.mid.iter().enumerate() {
            if let Some(mt) = t.mlp_tape() {
                self.middle[k].update_running_stats(mt, momentum);
            }
        }
        for (k, t) in tape.dec.iter().enumerate() {
            if let Some(mt) = t.mlp_tape() {
                self.decoder[k].update_running_stats(mt, momentum);
            }
        }
    }
}

fn add_vecs(dst: &mut [Vec3], src: &[Vec3]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Debug, Clone)]
pub struct ModelTape {
    enc1: Vec<SetConvTape>,
    enc2: Vec<SetConvTape>,
    fe: FlowEmbeddingTape,
    mid: Vec<SetConvTape>,
    dec: Vec<SetUpconvTape>,
    head: MlpTape,
    level_sizes: Vec<usize>,
    n2: usize,
}

impl ModelTape {
    /// Hash of every discrete choice made in the forward pass (sampled
    /// centers, neighbor lists, ReLU masks, pooling winners).
    pub fn hash_structure(&self, h: &mut impl Hasher) {
        for t in self.enc1.iter().chain(&self.enc2).chain(&self.mid) {
            t.hash_structure(h);
        }
        self.fe.hash_structure(h);
        for t in &self.dec {
            t.hash_structure(h);
        }
        self.head.hash_structure(h);
    }

    pub fn structure_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.hash_structure(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub params: FlowNetGrad,
    pub frame1_positions: Vec<Vec3>,
    pub frame2_positions: Vec<Vec3>,
}

/// Convenience: flow vectors as an `n × 3` array.
pub fn flow_matrix(flow: &FlowField) -> Array2<f64> {
    let mut m = Array2::zeros((flow.len(), 3));
    for (i, v) in flow.vectors.iter().enumerate() {
        m[(i, 0)] = v.x;
        m[(i, 1)] = v.y;
        m[(i, 2)] = v.z;
    }
    m
}

pub fn flow_from_matrix(m: ArrayView2<f64>) -> FlowField {
    FlowField::new(m.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
}
