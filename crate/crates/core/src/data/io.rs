//! Little-endian binary formats: scene samples (`FN3D`), checkpoints
//! (`FN3C`) and flow predictions (`FN3F`). Readers load the whole file and
//! either return a complete value or an error.

use std::collections::HashMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{FlowNet, ModelSpec};
use crate::seed::Seed;
use crate::types::{FlowField, PointCloud, SceneSample, Vec3};

pub const SAMPLE_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
const SAMPLE_MAGIC: &[u8; 4] = b"FN3D";
const CHECKPOINT_MAGIC: &[u8; 4] = b"FN3C";
const FLOW_MAGIC: &[u8; 4] = b"FN3F";
const FLAG_FLOW: u32 = 1;
const FLAG_MASK: u32 = 2;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(r: &mut Cursor<&[u8]>, magic: &[u8; 4], name: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    if r.read_exact(&mut m).is_err() || &m != magic {
        return Err(Error::BadMagic { expected: name });
    }
    Ok(())
}

fn u32_at(r: &mut Cursor<&[u8]>, what: &'static str) -> Result<u32> {
    r.read_u32::<LE>().map_err(|_| Error::TruncatedFile(what))
}

fn put_vecs(out: &mut Vec<u8>, v: &[Vec3]) {
    for p in v {
        for c in [p.x, p.y, p.z] {
            out.write_f32::<LE>(c as f32).expect("vec write");
        }
    }
}

fn get_vecs(r: &mut Cursor<&[u8]>, n: usize, what: &'static str) -> Result<Vec<Vec3>> {
    let total = r.get_ref().len() as u64;
    if total.saturating_sub(r.position()) < n as u64 * 12 {
        return Err(Error::TruncatedFile(what));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c = [0.0f64; 3];
        for v in &mut c {
            *v = r.read_f32::<LE>().map_err(|_| Error::TruncatedFile(what))? as f64;
        }
        out.push(Vec3::new(c[0], c[1], c[2]));
    }
    Ok(out)
}

fn ensure_consumed(r: &Cursor<&[u8]>) -> Result<()> {
    let extra = r.get_ref().len() as u64 - r.position();
    if extra > 0 {
        return Err(Error::Malformed(format!("{extra} trailing bytes")));
    }
    Ok(())
}

pub fn write_sample(path: impl AsRef<Path>, sample: &SceneSample) -> Result<()> {
    sample.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(SAMPLE_MAGIC);
    let flags = sample.gt_flow.as_ref().map_or(0, |_| FLAG_FLOW) | sample.mask.as_ref().map_or(0, |_| FLAG_MASK);
    for v in [SAMPLE_VERSION, flags, sample.frame1.len() as u32, sample.frame2.len() as u32] {
        out.write_u32::<LE>(v).expect("header write");
    }
    put_vecs(&mut out, &sample.frame1.positions);
    put_vecs(&mut out, &sample.frame2.positions);
    if let Some(f) = &sample.gt_flow {
        put_vecs(&mut out, &f.vectors);
    }
    if let Some(m) = &sample.mask {
        out.extend(m.iter().map(|&b| b as u8));
    }
    write_file(path.as_ref(), &out)
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<SceneSample> {
    let bytes = read_file(path.as_ref())?;
    let mut r = Cursor::new(bytes.as_slice());
    check_magic(&mut r, SAMPLE_MAGIC, "FN3D")?;
    let version = u32_at(&mut r, "header")?;
    if version != SAMPLE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SAMPLE_VERSION,
        });
    }
    let flags = u32_at(&mut r, "header")?;
    if flags & !(FLAG_FLOW | FLAG_MASK) != 0 {
        return Err(Error::Malformed(format!("unknown flags {flags:#x}")));
    }
    let n1 = u32_at(&mut r, "header")? as usize;
    let n2 = u32_at(&mut r, "header")? as usize;
    let p1 = get_vecs(&mut r, n1, "frame1 positions")?;
    let p2 = get_vecs(&mut r, n2, "frame2 positions")?;
    let flow = if flags & FLAG_FLOW != 0 {
        Some(FlowField::new(get_vecs(&mut r, n1, "flow")?))
    } else {
        None
    };
    let mask = if flags & FLAG_MASK != 0 {
        let mut m = vec![0u8; n1];
        r.read_exact(&mut m).map_err(|_| Error::TruncatedFile("mask"))?;
        if m.iter().any(|&b| b > 1) {
            return Err(Error::Malformed("mask bytes must be 0 or 1".into()));
        }
        Some(m.into_iter().map(|b| b == 1).collect())
    } else {
        None
    };
    ensure_consumed(&r)?;
    Ok(SceneSample {
        frame1: PointCloud::new(p1),
        frame2: PointCloud::new(p2),
        gt_flow: flow,
        mask,
    })
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(FLOW_MAGIC);
    out.write_u32::<LE>(flow.len() as u32).expect("header write");
    put_vecs(&mut out, &flow.vectors);
    write_file(path.as_ref(), &out)
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let bytes = read_file(path.as_ref())?;
    let mut r = Cursor::new(bytes.as_slice());
    check_magic(&mut r, FLOW_MAGIC, "FN3F")?;
    let n = u32_at(&mut r, "header")? as usize;
    let v = get_vecs(&mut r, n, "flow")?;
    ensure_consumed(&r)?;
    Ok(FlowField::new(v))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).expect("len write");
    out.extend_from_slice(s.as_bytes());
}

fn get_str(r: &mut Cursor<&[u8]>, what: &'static str) -> Result<String> {
    let n = u32_at(r, what)? as usize;
    let rest = r.get_ref().len() as u64 - r.position();
    if rest < n as u64 {
        return Err(Error::TruncatedFile(what));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| Error::TruncatedFile(what))?;
    String::from_utf8(buf).map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
}

type Tensors = Vec<(String, Vec<usize>, Vec<f64>)>;

fn collect_tensors(net: &FlowNet) -> Tensors {
    let mut out = Vec::new();
    net.visit(&mut |name, dims, data| out.push((name, dims.to_vec(), data.to_vec())));
    let mut copy = net.clone();
    copy.visit_stats_mut(&mut |name, data| out.push((name, vec![data.len()], data.to_vec())));
    out
}

/// Spec (as JSON) followed by every trainable tensor and BN running
/// statistic, stored as f32.
pub fn write_checkpoint(path: impl AsRef<Path>, net: &FlowNet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u32::<LE>(CHECKPOINT_VERSION).expect("header write");
    let spec = serde_json::to_string(&net.spec).map_err(|e| Error::Malformed(e.to_string()))?;
    put_str(&mut out, &spec);
    let tensors = collect_tensors(net);
    out.write_u32::<LE>(tensors.len() as u32).expect("count write");
    for (name, dims, data) in &tensors {
        put_str(&mut out, name);
        out.write_u32::<LE>(dims.len() as u32).expect("rank write");
        for &d in dims {
            out.write_u32::<LE>(d as u32).expect("dim write");
        }
        for &v in data {
            out.write_f32::<LE>(v as f32).expect("payload write");
        }
    }
    write_file(path.as_ref(), &out)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<FlowNet> {
    let bytes = read_file(path.as_ref())?;
    let mut r = Cursor::new(bytes.as_slice());
    check_magic(&mut r, CHECKPOINT_MAGIC, "FN3C")?;
    let version = u32_at(&mut r, "header")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let spec: ModelSpec = serde_json::from_str(&get_str(&mut r, "spec")?)
        .map_err(|e| Error::Malformed(format!("spec: {e}")))?;
    let count = u32_at(&mut r, "tensor count")? as usize;
    let mut stored: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..count {
        let name = get_str(&mut r, "tensor name")?;
        let rank = u32_at(&mut r, "tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32_at(&mut r, "tensor dims")? as usize);
        }
        let len: usize = dims.iter().product();
        if (r.get_ref().len() as u64 - r.position()) < len as u64 * 4 {
            return Err(Error::TruncatedFile("tensor payload"));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f32::<LE>().map_err(|_| Error::TruncatedFile("tensor payload"))? as f64);
        }
        stored.insert(name, (dims, data));
    }
    ensure_consumed(&r)?;
    let mut net = FlowNet::init(&spec, Seed(0))?;
    load_into(&mut net, stored)?;
    Ok(net)
}

fn load_into(net: &mut FlowNet, mut stored: HashMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
    let expected = collect_tensors(net);
    for (name, dims, _) in &expected {
        match stored.get(name) {
            Some((d, _)) if d == dims => {}
            Some((d, _)) => {
                return Err(Error::ShapeMismatch(format!("{name}: stored {d:?}, expected {dims:?}")));
            }
            None => return Err(Error::ShapeMismatch(format!("missing tensor {name}"))),
        }
    }
    if stored.len() != expected.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} stored tensors, spec has {}",
            stored.len(),
            expected.len()
        )));
    }
    let mut fill = |name: String, dst: &mut [f64]| {
        if let Some((_, data)) = stored.remove(&name) {
            dst.copy_from_slice(&data);
        }
    };
    net.visit_mut(&mut fill);
    net.visit_stats_mut(&mut fill);
    Ok(())
}

/// Reads a checkpoint and checks it was written for `spec`.
pub fn read_checkpoint_expecting(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<FlowNet> {
    let net = read_checkpoint(path)?;
    let want = FlowNet::init(spec, Seed(0))?;
    let a = collect_tensors(&net);
    let b = collect_tensors(&want);
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} tensors, expected {}", a.len(), b.len())));
    }
    for ((na, da, _), (nb, db, _)) in a.iter().zip(&b) {
        if na != nb || da != db {
            return Err(Error::ShapeMismatch(format!("{na} {da:?} vs {nb} {db:?}")));
        }
    }
    if &net.spec != spec {
        return Err(Error::ShapeMismatch("layer hyperparameters differ from the expected spec".into()));
    }
    Ok(net)
}
