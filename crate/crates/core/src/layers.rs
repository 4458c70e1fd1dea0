//! Learnable point-set layers: set conv, flow embedding and set upconv,
//! plus inverse-distance three-point interpolation. Every layer has an
//! exact backward pass covering parameters, features and positions.

use std::hash::Hasher;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    set_pool, Activation, BatchNormConfig, Mlp, MlpGrad, MlpSpec, MlpTape, Mode, PoolMode,
    PoolTape,
};
use crate::seed::Seed;
use crate::spatial::{self, NeighborList};
use crate::types::{validate_cloud, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    SetConv,
    FlowEmbedding,
    SetUpconv,
}

/// How the flow embedding relates frame-1 and frame-2 features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    #[default]
    Learned,
    Cosine,
    Dot,
}

pub const SET_CONV_CAP: usize = 16;
pub const FLOW_EMBEDDING_CAP: usize = 64;
const COSINE_NORM_EPS: f64 = 1e-12;
const INTERP_DIST_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub radius: f64,
    pub sample_rate: f64,
    pub mlp_widths: Vec<usize>,
    pub neighbor_cap: usize,
    #[serde(default)]
    pub pooling: PoolMode,
    #[serde(default)]
    pub mixing: Mixing,
}

impl LayerSpec {
    pub fn set_conv(radius: f64, sample_rate: f64, mlp_widths: Vec<usize>) -> Self {
        LayerSpec {
            kind: LayerKind::SetConv,
            radius,
            sample_rate,
            mlp_widths,
            neighbor_cap: SET_CONV_CAP,
            pooling: PoolMode::Max,
            mixing: Mixing::Learned,
        }
    }

    pub fn flow_embedding(radius: f64, mlp_widths: Vec<usize>) -> Self {
        LayerSpec {
            kind: LayerKind::FlowEmbedding,
            radius,
            sample_rate: 1.0,
            mlp_widths,
            neighbor_cap: FLOW_EMBEDDING_CAP,
            pooling: PoolMode::Max,
            mixing: Mixing::Learned,
        }
    }

    pub fn set_upconv(radius: f64, sample_rate: f64, mlp_widths: Vec<usize>) -> Self {
        LayerSpec {
            kind: LayerKind::SetUpconv,
            radius,
            sample_rate,
            mlp_widths,
            neighbor_cap: SET_CONV_CAP,
            pooling: PoolMode::Max,
            mixing: Mixing::Learned,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidSpec(format!("radius must be > 0, got {}", self.radius)));
        }
        if self.mlp_widths.is_empty() || self.mlp_widths.contains(&0) {
            return Err(Error::InvalidSpec("mlp widths must be non-empty and ≥ 1".into()));
        }
        if self.neighbor_cap == 0 {
            return Err(Error::InvalidSpec("neighbor cap must be ≥ 1".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidSpec("sample rate must be > 0".into()));
        }
        if self.kind == LayerKind::SetConv && self.sample_rate > 1.0 {
            return Err(Error::InvalidSpec("set conv sample rate must be ≤ 1".into()));
        }
        Ok(())
    }

    pub fn mlp_spec(&self, use_batchnorm: bool) -> MlpSpec {
        MlpSpec::new(self.mlp_widths.clone(), use_batchnorm, Activation::Relu)
    }

    /// MLP input width given the incoming feature width `c`.
    pub fn mlp_in_width(&self, c: usize) -> usize {
        match (self.kind, self.mixing) {
            (LayerKind::FlowEmbedding, Mixing::Learned) => 2 * c + 3,
            (LayerKind::FlowEmbedding, _) => 4,
            _ => c + 3,
        }
    }

    pub fn out_width(&self) -> usize {
        *self.mlp_widths.last().unwrap_or(&0)
    }

    /// Number of centers kept from `n` input points.
    pub fn sample_count(&self, n: usize) -> usize {
        ((self.sample_rate * n as f64).round() as usize).clamp(1, n.max(1))
    }

    fn expect(&self, kind: LayerKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(Error::InvalidSpec(format!("expected {kind:?}, got {:?}", self.kind)));
        }
        Ok(())
    }
}

/// Settings shared by every layer call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Context {
    pub mode: Mode,
    pub bn: BatchNormConfig,
}

impl Context {
    pub fn train() -> Self {
        Context {
            mode: Mode::Train,
            bn: BatchNormConfig::default(),
        }
    }

    pub fn infer() -> Self {
        Context {
            mode: Mode::Infer,
            bn: BatchNormConfig::default(),
        }
    }
}

fn feature_view(cloud: &PointCloud) -> Option<ArrayView2<'_, f64>> {
    cloud.features.as_ref().map(|f| f.view())
}

/// MLP over grouped rows followed by pooling. Groups with no members
/// produce zero rows and an isolation flag.
#[derive(Debug, Clone)]
struct GroupedTape {
    neighbors: NeighborList,
    nonempty: Vec<usize>,
    mlp: Option<MlpTape>,
    pool: Option<PoolTape>,
    feature_width: usize,
    n_source: usize,
    out_width: usize,
}

impl GroupedTape {
    fn hash_structure(&self, h: &mut impl Hasher) {
        for l in self.neighbors.iter() {
            h.write_usize(l.len());
            for &i in l {
                h.write_usize(i);
            }
        }
        if let Some(t) = &self.mlp {
            t.hash_structure(h);
        }
        if let Some(t) = &self.pool {
            t.hash_structure(h);
        }
    }
}

struct GroupedGrad {
    params: MlpGrad,
    features: Array2<f64>,
    positions: Vec<Vec3>,
    centers: Vec<Vec3>,
}

#[allow(clippy::too_many_arguments)]
fn grouped_forward(
    mlp: &Mlp,
    pooling: PoolMode,
    positions: &[Vec3],
    features: Option<ArrayView2<f64>>,
    centers: &[Vec3],
    neighbors: NeighborList,
    ctx: &Context,
) -> Result<(Array2<f64>, Vec<bool>, GroupedTape)> {
    let c = features.as_ref().map_or(0, |f| f.ncols());
    if mlp.in_width != c + 3 {
        return Err(Error::ShapeMismatch(format!(
            "layer mlp takes {} inputs, features give {}",
            mlp.in_width,
            c + 3
        )));
    }
    let out_width = mlp.out_width();
    let nonempty: Vec<usize> = (0..centers.len())
        .filter(|&j| !neighbors.get(j).is_empty())
        .collect();
    let isolated: Vec<bool> = (0..centers.len())
        .map(|j| neighbors.get(j).is_empty())
        .collect();
    let mut out = Array2::zeros((centers.len(), out_width));
    let (mut mlp_tape, mut pool_tape) = (None, None);
    if !nonempty.is_empty() {
        let total = neighbors.total();
        let mut rows = Array2::zeros((total, c + 3));
        let mut offsets = Vec::with_capacity(nonempty.len() + 1);
        offsets.push(0);
        let mut r = 0;
        for &j in &nonempty {
            let center = centers[j];
            for &i in neighbors.get(j) {
                let mut row = rows.row_mut(r);
                if let Some(f) = &features {
                    row.slice_mut(s![..c]).assign(&f.row(i));
                }
                let d = positions[i] - center;
                row[c] = d.x;
                row[c + 1] = d.y;
                row[c + 2] = d.z;
                r += 1;
            }
            offsets.push(r);
        }
        let (h, mt) = mlp.forward(rows.view(), ctx.mode, &ctx.bn)?;
        let (pooled, pt) = set_pool(h.view(), &offsets, pooling)?;
        for (k, &j) in nonempty.iter().enumerate() {
            out.row_mut(j).assign(&pooled.row(k));
        }
        mlp_tape = Some(mt);
        pool_tape = Some(pt);
    }
    Ok((
        out,
        isolated,
        GroupedTape {
            neighbors,
            nonempty,
            mlp: mlp_tape,
            pool: pool_tape,
            feature_width: c,
            n_source: positions.len(),
            out_width,
        },
    ))
}

fn grouped_backward(mlp: &Mlp, tape: &GroupedTape, grad: ArrayView2<f64>) -> Result<GroupedGrad> {
    let c = tape.feature_width;
    let n_centers = tape.neighbors.query_count();
    if grad.dim() != (n_centers, tape.out_width) {
        return Err(Error::ShapeMismatch(format!(
            "grouped grad {:?}, expected {:?}",
            grad.dim(),
            (n_centers, tape.out_width)
        )));
    }
    let mut out = GroupedGrad {
        params: mlp.zero_grad(),
        features: Array2::zeros((tape.n_source, c)),
        positions: vec![Vec3::zeros(); tape.n_source],
        centers: vec![Vec3::zeros(); n_centers],
    };
    let (Some(mt), Some(pt)) = (&tape.mlp, &tape.pool) else {
        return Ok(out);
    };
    let pooled_grad = grad.select(Axis(0), &tape.nonempty);
    let gh = pt.backward(pooled_grad.view())?;
    let (grows, params) = mlp.backward(mt, gh.view())?;
    out.params = params;
    let mut r = 0;
    for &j in &tape.nonempty {
        for &i in tape.neighbors.get(j) {
            let row = grows.row(r);
            if c > 0 {
                let mut fi = out.features.row_mut(i);
                fi += &row.slice(s![..c]);
            }
            let d = Vec3::new(row[c], row[c + 1], row[c + 2]);
            out.positions[i] += d;
            out.centers[j] -= d;
            r += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- set conv

#[derive(Debug, Clone)]
pub struct SetConvTape {
    grouped: GroupedTape,
    indices: Vec<usize>,
}

impl SetConvTape {
    pub fn center_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mlp_tape(&self) -> Option<&MlpTape> {
        self.grouped.mlp.as_ref()
    }

    pub fn hash_structure(&self, h: &mut impl Hasher) {
        for &i in &self.indices {
            h.write_usize(i);
        }
        self.grouped.hash_structure(h);
    }
}

#[derive(Debug, Clone)]
pub struct SetConvGrad {
    pub params: MlpGrad,
    /// `n × c` (zero columns when the input had no features).
    pub features: Array2<f64>,
    pub positions: Vec<Vec3>,
}

/// Farthest-point centers, r-ball grouping, shared MLP on
/// `(f_i, x_i − x'_j)`, pooling. The output cloud carries the centers and
/// their new features; `center_indices` maps them back to the input.
pub fn set_conv_forward(
    spec: &LayerSpec,
    mlp: &Mlp,
    cloud: &PointCloud,
    seed: Seed,
    ctx: &Context,
) -> Result<(PointCloud, SetConvTape)> {
    spec.expect(LayerKind::SetConv)?;
    validate_cloud(cloud)?;
    let m = spec.sample_count(cloud.len());
    let indices = spatial::farthest_point_sample(&cloud.positions, m, seed.derive(0))?;
    let centers: Vec<Vec3> = indices.iter().map(|&i| cloud.positions[i]).collect();
    let neighbors = spatial::radius_neighbors(
        &cloud.positions,
        &centers,
        spec.radius,
        Some(spec.neighbor_cap),
        seed.derive(1),
    )?;
    let (features, _isolated, grouped) = grouped_forward(
        mlp,
        spec.pooling,
        &cloud.positions,
        feature_view(cloud),
        &centers,
        neighbors,
        ctx,
    )?;
    Ok((
        PointCloud::with_features(centers, features),
        SetConvTape { grouped, indices },
    ))
}

/// `grad_positions`, when given, is the gradient arriving at the output
/// center positions (e.g. from later layers that use them).
pub fn set_conv_backward(
    mlp: &Mlp,
    tape: &SetConvTape,
    grad_features: ArrayView2<f64>,
    grad_positions: Option<&[Vec3]>,
) -> Result<SetConvGrad> {
    let g = grouped_backward(mlp, &tape.grouped, grad_features)?;
    let mut positions = g.positions;
    for (k, &i) in tape.indices.iter().enumerate() {
        positions[i] += g.centers[k];
        if let Some(gp) = grad_positions {
            positions[i] += gp[k];
        }
    }
    Ok(SetConvGrad {
        params: g.params,
        features: g.features,
        positions,
    })
}

// ---------------------------------------------------------- flow embedding

#[derive(Debug, Clone)]
pub struct FlowEmbeddingTape {
    neighbors: NeighborList,
    nonempty: Vec<usize>,
    mlp: Option<MlpTape>,
    pool: Option<PoolTape>,
    mixing: Mixing,
    f1: Array2<f64>,
    f2: Array2<f64>,
    n1: usize,
    n2: usize,
    out_width: usize,
}

impl FlowEmbeddingTape {
    pub fn mlp_tape(&self) -> Option<&MlpTape> {
        self.mlp.as_ref()
    }

    pub fn hash_structure(&self, h: &mut impl Hasher) {
        for l in self.neighbors.iter() {
            h.write_usize(l.len());
            for &i in l {
                h.write_usize(i);
            }
        }
        if let Some(t) = &self.mlp {
            t.hash_structure(h);
        }
        if let Some(t) = &self.pool {
            t.hash_structure(h);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowEmbedding {
    /// Frame-1 positions with embeddings as features.
    pub cloud: PointCloud,
    /// Frame-1 points with no frame-2 point within the radius.
    pub isolated: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FlowEmbeddingGrad {
    pub params: MlpGrad,
    pub frame1_features: Array2<f64>,
    pub frame2_features: Array2<f64>,
    pub frame1_positions: Vec<Vec3>,
    pub frame2_positions: Vec<Vec3>,
}

fn norm_eps(v: ndarray::ArrayView1<f64>) -> (f64, f64) {
    let n = v.dot(&v).sqrt();
    (n, n + COSINE_NORM_EPS)
}

/// Feature similarity used by the cosine/dot mixing variants.
pub fn feature_similarity(mixing: Mixing, f: ndarray::ArrayView1<f64>, g: ndarray::ArrayView1<f64>) -> f64 {
    let dot = f.dot(&g);
    match mixing {
        Mixing::Cosine => dot / (norm_eps(f).1 * norm_eps(g).1),
        _ => dot,
    }
}

/// For every frame-1 point, pools a shared MLP over its frame-2
/// neighbors q_j within the radius, fed `(f_i, g_j, y_j − x_i)` (learned
/// mixing) or `(sim(f_i, g_j), y_j − x_i)` (cosine / dot).
pub fn flow_embedding_forward(
    spec: &LayerSpec,
    mlp: &Mlp,
    frame1: &PointCloud,
    frame2: &PointCloud,
    seed: Seed,
    ctx: &Context,
) -> Result<(FlowEmbedding, FlowEmbeddingTape)> {
    spec.expect(LayerKind::FlowEmbedding)?;
    validate_cloud(frame1)?;
    validate_cloud(frame2)?;
    let (c1, c2) = (frame1.feature_width(), frame2.feature_width());
    if c1 != c2 {
        return Err(Error::FeatureWidthMismatch(c1, c2));
    }
    let c = c1;
    let in_width = spec.mlp_in_width(c);
    if mlp.in_width != in_width {
        return Err(Error::ShapeMismatch(format!(
            "flow embedding mlp takes {} inputs, expected {in_width}",
            mlp.in_width
        )));
    }
    let f1 = frame1
        .features
        .clone()
        .unwrap_or_else(|| Array2::zeros((frame1.len(), 0)));
    let f2 = frame2
        .features
        .clone()
        .unwrap_or_else(|| Array2::zeros((frame2.len(), 0)));
    let neighbors = spatial::radius_neighbors(
        &frame2.positions,
        &frame1.positions,
        spec.radius,
        Some(spec.neighbor_cap),
        seed.derive(1),
    )?;
    let n1 = frame1.len();
    let out_width = mlp.out_width();
    let nonempty: Vec<usize> = (0..n1).filter(|&i| !neighbors.get(i).is_empty()).collect();
    let isolated: Vec<bool> = (0..n1).map(|i| neighbors.get(i).is_empty()).collect();
    let mut emb = Array2::zeros((n1, out_width));
    let (mut mlp_tape, mut pool_tape) = (None, None);
    if !nonempty.is_empty() {
        let mut rows = Array2::zeros((neighbors.total(), in_width));
        let mut offsets = vec![0];
        let mut r = 0;
        for &i in &nonempty {
            let x = frame1.positions[i];
            for &j in neighbors.get(i) {
                let mut row = rows.row_mut(r);
                let k = match spec.mixing {
                    Mixing::Learned => {
                        row.slice_mut(s![..c]).assign(&f1.row(i));
                        row.slice_mut(s![c..2 * c]).assign(&f2.row(j));
                        2 * c
                    }
                    m => {
                        row[0] = feature_similarity(m, f1.row(i), f2.row(j));
                        1
                    }
                };
                let d = frame2.positions[j] - x;
                row[k] = d.x;
                row[k + 1] = d.y;
                row[k + 2] = d.z;
                r += 1;
            }
            offsets.push(r);
        }
        let (h, mt) = mlp.forward(rows.view(), ctx.mode, &ctx.bn)?;
        let (pooled, pt) = set_pool(h.view(), &offsets, spec.pooling)?;
        for (k, &i) in nonempty.iter().enumerate() {
            emb.row_mut(i).assign(&pooled.row(k));
        }
        mlp_tape = Some(mt);
        pool_tape = Some(pt);
    }
    Ok((
        FlowEmbedding {
            cloud: PointCloud::with_features(frame1.positions.clone(), emb),
            isolated,
        },
        FlowEmbeddingTape {
            neighbors,
            nonempty,
            mlp: mlp_tape,
            pool: pool_tape,
            mixing: spec.mixing,
            f1,
            f2,
            n1,
            n2: frame2.len(),
            out_width,
        },
    ))
}

pub fn flow_embedding_backward(
    mlp: &Mlp,
    tape: &FlowEmbeddingTape,
    grad: ArrayView2<f64>,
) -> Result<FlowEmbeddingGrad> {
    if grad.dim() != (tape.n1, tape.out_width) {
        return Err(Error::ShapeMismatch(format!(
            "flow embedding grad {:?}, expected {:?}",
            grad.dim(),
            (tape.n1, tape.out_width)
        )));
    }
    let c = tape.f1.ncols();
    let mut out = FlowEmbeddingGrad {
        params: mlp.zero_grad(),
        frame1_features: Array2::zeros((tape.n1, c)),
        frame2_features: Array2::zeros((tape.n2, c)),
        frame1_positions: vec![Vec3::zeros(); tape.n1],
        frame2_positions: vec![Vec3::zeros(); tape.n2],
    };
    let (Some(mt), Some(pt)) = (&tape.mlp, &tape.pool) else {
        return Ok(out);
    };
    let gh = pt.backward(grad.select(Axis(0), &tape.nonempty).view())?;
    let (grows, params) = mlp.backward(mt, gh.view())?;
    out.params = params;
    let mut r = 0;
    for &i in &tape.nonempty {
        for &j in tape.neighbors.get(i) {
            let row = grows.row(r);
            let k = match tape.mixing {
                Mixing::Learned => {
                    let mut a = out.frame1_features.row_mut(i);
                    a += &row.slice(s![..c]);
                    let mut b = out.frame2_features.row_mut(j);
                    b += &row.slice(s![c..2 * c]);
                    2 * c
                }
                Mixing::Dot => {
                    let ds = row[0];
                    let mut a = out.frame1_features.row_mut(i);
                    a.scaled_add(ds, &tape.f2.row(j));
                    let mut b = out.frame2_features.row_mut(j);
                    b.scaled_add(ds, &tape.f1.row(i));
                    1
                }
                Mixing::Cosine => {
                    let ds = row[0];
                    let (f, g) = (tape.f1.row(i), tape.f2.row(j));
                    let (nf_raw, nf) = norm_eps(f);
                    let (ng_raw, ng) = norm_eps(g);
                    let sim = f.dot(&g) / (nf * ng);
                    let mut a = out.frame1_features.row_mut(i);
                    a.scaled_add(ds / (nf * ng), &g);
                    if nf_raw > 0.0 {
                        a.scaled_add(-ds * sim / (nf * nf_raw), &f);
                    }
                    let mut b = out.frame2_features.row_mut(j);
                    b.scaled_add(ds / (nf * ng), &f);
                    if ng_raw > 0.0 {
                        b.scaled_add(-ds * sim / (ng * ng_raw), &g);
                    }
                    1
                }
            };
            let d = Vec3::new(row[k], row[k + 1], row[k + 2]);
            out.frame2_positions[j] += d;
            out.frame1_positions[i] -= d;
            r += 1;
        }
    }
    Ok(out)
}

// ------------------------------------------------------------- set upconv

#[derive(Debug, Clone)]
pub struct SetUpconvTape {
    grouped: GroupedTape,
    skip_width: usize,
}

impl SetUpconvTape {
    pub fn mlp_tape(&self) -> Option<&MlpTape> {
        self.grouped.mlp.as_ref()
    }

    pub fn hash_structure(&self, h: &mut impl Hasher) {
        self.grouped.hash_structure(h);
    }
}

#[derive(Debug, Clone)]
pub struct SetUpconv {
    /// `targets × (mlp_out + skip_width)`
    pub features: Array2<f64>,
    pub isolated: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SetUpconvGrad {
    pub params: MlpGrad,
    pub source_features: Array2<f64>,
    pub source_positions: Vec<Vec3>,
    pub target_positions: Vec<Vec3>,
    pub skip_features: Option<Array2<f64>>,
}

/// Set conv evaluated at the given target locations. Targets with no
/// source point within the radius get a zero feature and are flagged.
/// Skip features, when given, are concatenated after the pooled output.
pub fn set_upconv_forward(
    spec: &LayerSpec,
    mlp: &Mlp,
    source: &PointCloud,
    targets: &[Vec3],
    skip: Option<ArrayView2<f64>>,
    seed: Seed,
    ctx: &Context,
) -> Result<(SetUpconv, SetUpconvTape)> {
    spec.expect(LayerKind::SetUpconv)?;
    validate_cloud(source)?;
    if let Some(sk) = &skip {
        if sk.nrows() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} skip rows for {} targets",
                sk.nrows(),
                targets.len()
            )));
        }
    }
    let neighbors = spatial::radius_neighbors(
        &source.positions,
        targets,
        spec.radius,
        Some(spec.neighbor_cap),
        seed.derive(1),
    )?;
    let (pooled, isolated, grouped) = grouped_forward(
        mlp,
        spec.pooling,
        &source.positions,
        feature_view(source),
        targets,
        neighbors,
        ctx,
    )?;
    let skip_width = skip.as_ref().map_or(0, |s| s.ncols());
    let features = match skip {
        Some(sk) => ndarray::concatenate(Axis(1), &[pooled.view(), sk]).expect("row counts match"),
        None => pooled,
    };
    Ok((
        SetUpconv { features, isolated },
        SetUpconvTape {
            grouped,
            skip_width,
        },
    ))
}

pub fn set_upconv_backward(
    mlp: &Mlp,
    tape: &SetUpconvTape,
    grad: ArrayView2<f64>,
) -> Result<SetUpconvGrad> {
    let w = tape.grouped.out_width;
    if grad.ncols() != w + tape.skip_width {
        return Err(Error::ShapeMismatch(format!(
            "upconv grad has {} columns, expected {}",
            grad.ncols(),
            w + tape.skip_width
        )));
    }
    let g = grouped_backward(mlp, &tape.grouped, grad.slice(s![.., ..w]))?;
    let skip_features = (tape.skip_width > 0).then(|| grad.slice(s![.., w..]).to_owned());
    Ok(SetUpconvGrad {
        params: g.params,
        source_features: g.features,
        source_positions: g.positions,
        target_positions: g.centers,
        skip_features,
    })
}

// ------------------------------------------------- three-point interpolation

#[derive(Debug, Clone)]
pub struct InterpTape {
    nn: Vec<[usize; 3]>,
    weights: Vec<[f64; 3]>,
    /// Unnormalized inverse distances and their sum.
    inv: Vec<[f64; 3]>,
    inv_sum: Vec<f64>,
    dist: Vec<[f64; 3]>,
    dirs: Vec<[Vec3; 3]>,
    source_features: Array2<f64>,
    output: Array2<f64>,
    n_source: usize,
}

#[derive(Debug, Clone)]
pub struct InterpGrad {
    pub source_features: Array2<f64>,
    pub source_positions: Vec<Vec3>,
    pub target_positions: Vec<Vec3>,
}

/// Normalized inverse-distance interpolation from the three nearest source
/// points: `w_i ∝ 1 / max(d_i, 1e-10)`.
pub fn three_interp(source: &PointCloud, targets: &[Vec3]) -> Result<(Array2<f64>, InterpTape)> {
    validate_cloud(source)?;
    if source.len() < 3 {
        return Err(Error::TooFewSourcePoints(source.len()));
    }
    let feats = source
        .features
        .clone()
        .unwrap_or_else(|| Array2::zeros((source.len(), 0)));
    let c = feats.ncols();
    let nn = spatial::knn(&source.positions, targets, 3)?;
    let mut out = Array2::zeros((targets.len(), c));
    let mut tape = InterpTape {
        nn: Vec::with_capacity(targets.len()),
        weights: Vec::with_capacity(targets.len()),
        inv: Vec::with_capacity(targets.len()),
        inv_sum: Vec::with_capacity(targets.len()),
        dist: Vec::with_capacity(targets.len()),
        dirs: Vec::with_capacity(targets.len()),
        source_features: Array2::zeros((0, 0)),
        output: Array2::zeros((0, 0)),
        n_source: source.len(),
    };
    for (j, (t, idx)) in targets.iter().zip(&nn).enumerate() {
        let idx = [idx[0], idx[1], idx[2]];
        let mut inv = [0.0; 3];
        let mut dist = [0.0; 3];
        let mut dirs = [Vec3::zeros(); 3];
        for k in 0..3 {
            let diff = source.positions[idx[k]] - t;
            let d = diff.norm();
            dist[k] = d;
            dirs[k] = if d > 0.0 { diff / d } else { Vec3::zeros() };
            inv[k] = 1.0 / d.max(INTERP_DIST_FLOOR);
        }
        let sum = inv[0] + inv[1] + inv[2];
        let w = [inv[0] / sum, inv[1] / sum, inv[2] / sum];
        let mut row = out.row_mut(j);
        for k in 0..3 {
            row.scaled_add(w[k], &feats.row(idx[k]));
        }
        tape.nn.push(idx);
        tape.weights.push(w);
        tape.inv.push(inv);
        tape.inv_sum.push(sum);
        tape.dist.push(dist);
        tape.dirs.push(dirs);
    }
    tape.source_features = feats;
    tape.output = out.clone();
    Ok((out, tape))
}

impl InterpTape {
    pub fn backward(&self, grad: ArrayView2<f64>) -> Result<InterpGrad> {
        if grad.dim() != self.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "interp grad {:?}, expected {:?}",
                grad.dim(),
                self.output.dim()
            )));
        }
        let c = self.source_features.ncols();
        let mut out = InterpGrad {
            source_features: Array2::zeros((self.n_source, c)),
            source_positions: vec![Vec3::zeros(); self.n_source],
            target_positions: vec![Vec3::zeros(); self.nn.len()],
        };
        for j in 0..self.nn.len() {
            let g = grad.row(j);
            let fj = self.output.row(j);
            for k in 0..3 {
                let i = self.nn[j][k];
                let mut gf = out.source_features.row_mut(i);
                gf.scaled_add(self.weights[j][k], &g);
                let d = self.dist[j][k];
                if d > INTERP_DIST_FLOOR {
                    // ∂out/∂u_k = (f_k − out) / U, ∂u_k/∂d_k = −1/d², ∂d/∂x = dir
                    let diff = &self.source_features.row(i) - &fj;
                    let du = g.dot(&diff) / self.inv_sum[j];
                    let dd = -du / (d * d);
                    let gx = self.dirs[j][k] * dd;
                    out.source_positions[i] += gx;
                    out.target_positions[j] -= gx;
                }
            }
        }
        Ok(out)
    }
}
