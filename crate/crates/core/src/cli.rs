//! Command-line interface. [`run`] returns the process exit code: 0 on
//! success, 1 for usage or configuration errors, 2 for data errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::apps::{bench, motion_segment, register_scans, SegmentConfig};
use crate::data::{read_checkpoint, read_flow, read_sample, write_checkpoint, write_flow, write_sample, SceneConfig};
use crate::error::Error;
use crate::eval::{icp, remove_ground_ransac, MetricReport};
use crate::infer::{predict_chunked, predict_resampled, ChunkSpec};
use crate::model::{FlowNet, ModelSpec};
use crate::seed::Seed;
use crate::train::{train, TrainConfig};
use crate::types::{FlowField, PointCloud, SceneSample};

#[derive(Debug, Parser)]
#[command(name = "sceneflow", version, about = "Scene flow estimation on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpecPreset {
    /// Reference layer table.
    Table1,
    /// Reference layers with half the MLP widths.
    Half,
    /// Very small network.
    Tiny,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scene samples.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SceneConfig as flat JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Points per frame (overrides the config).
        #[arg(long)]
        points: Option<usize>,
    },
    /// Train a model on a directory of samples.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// TrainConfig as flat JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum, default_value_t = SpecPreset::Half)]
        spec: SpecPreset,
        /// Drop every batch normalization layer from the preset.
        #[arg(long)]
        no_batchnorm: bool,
        /// Per-step metrics log (`step loss epe lr`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict flow for one sample.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        resamples: usize,
        #[arg(long)]
        chunked: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// ChunkSpec as flat JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write `x y z dx dy dz` lines for every frame-1 point.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Score a prediction against a sample's ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        /// Restrict to points whose mask is set.
        #[arg(long)]
        use_mask: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Global ICP baseline.
    Icp {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rigid registration from predicted flow.
    Register {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, default_value_t = 2)]
        passes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Motion segmentation from positions and flow.
    Segment {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        /// Write one cluster id per line.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SegmentConfig as flat JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// RANSAC ground plane removal on frame 1.
    Ground {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0.05)]
        inlier_dist: f64,
        /// Write 1/0 ground flags, one per line.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time forward passes at several sizes.
    Bench {
        /// Checkpoint to time; defaults to a freshly initialized reference net.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated `points` or `points x batch` entries, e.g. `1024,2048x2`.
        #[arg(long, default_value = "1024,2048")]
        sizes: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidSpec(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> std::result::Result<T, Failure> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("--config {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("--config {}: {e}", p.display())))
}

fn preset(p: SpecPreset) -> ModelSpec {
    match p {
        SpecPreset::Table1 => ModelSpec::table1(),
        SpecPreset::Half => ModelSpec::table1().scaled_widths(0.5),
        SpecPreset::Tiny => ModelSpec::tiny(),
    }
}

fn sample_files(dir: &Path) -> std::result::Result<Vec<PathBuf>, Failure> {
    let rd = std::fs::read_dir(dir).map_err(|e| Failure::Data(Error::io(dir, e)))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "fn3d"))
        .collect();
    files.sort();
    Ok(files)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Failure::Data(Error::io(d, e)))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Data(Error::io(path, e)))
}

fn parse_sizes(s: &str) -> std::result::Result<Vec<(usize, usize)>, Failure> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let mut parts = t.trim().split('x');
            let n = parts.next().and_then(|v| v.parse().ok());
            let b = parts.next().map_or(Some(1), |v| v.parse().ok());
            match (n, b, parts.next()) {
                (Some(n), Some(b), None) => Ok((n, b)),
                _ => Err(Failure::Usage(format!("--sizes: cannot parse {t:?}"))),
            }
        })
        .collect()
}

fn flow_lines(cloud: &PointCloud, flow: &FlowField) -> String {
    let mut s = String::new();
    for (p, d) in cloud.positions.iter().zip(&flow.vectors) {
        s.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, d.x, d.y, d.z));
    }
    s
}

fn execute(cmd: Command, out: &mut dyn Write) -> CliResult {
    let io = |e: std::io::Error| Failure::Data(Error::io("<stdout>", e));
    match cmd {
        Command::Gen {
            count,
            out: dir,
            seed,
            config,
            points,
        } => {
            let mut cfg: SceneConfig = load_config(config.as_deref())?;
            if points.is_some() {
                cfg.points_per_frame = points;
            }
            cfg.validate()?;
            for i in 0..count {
                let scene = crate::data::generate_scene(&cfg, Seed(seed).derive(i as u64))?;
                write_sample(dir.join(format!("sample_{i:05}.fn3d")), &scene.sample)?;
            }
            writeln!(out, "wrote {count} samples to {}", dir.display()).map_err(io)?;
        }
        Command::Train {
            data,
            out: path,
            seed,
            config,
            epochs,
            spec,
            no_batchnorm,
            log,
        } => {
            let mut cfg: TrainConfig = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let files = sample_files(&data)?;
            if files.is_empty() {
                return Err(Failure::Data(Error::EmptyDataset));
            }
            let samples: Vec<SceneSample> = files.iter().map(read_sample).collect::<crate::Result<_>>()?;
            let mut spec = preset(spec);
            spec.use_batchnorm &= !no_batchnorm;
            let outcome = train(&spec, &samples, &cfg)?;
            write_checkpoint(&path, &outcome.net)?;
            if let Some(l) = log {
                write_text(&l, &outcome.log_text())?;
            }
            let last = outcome.log.last().copied();
            writeln!(
                out,
                "steps={}\nfinal_loss={}\nfinal_epe={}",
                outcome.log.len(),
                last.map_or(f64::NAN, |r| r.loss),
                last.map_or(f64::NAN, |r| r.epe)
            )
            .map_err(io)?;
            for (epoch, e) in &outcome.eval {
                writeln!(out, "epoch_{epoch}_eval_epe={e}").map_err(io)?;
            }
        }
        Command::Infer {
            model,
            sample,
            out: path,
            resamples,
            chunked,
            seed,
            config,
            plot,
        } => {
            let chunk: ChunkSpec = load_config(config.as_deref())?;
            if resamples == 0 {
                return Err(Failure::Usage("--resamples must be ≥ 1".into()));
            }
            let net = read_checkpoint(&model)?;
            let s = read_sample(&sample)?;
            let (flow, isolated) = if chunked {
                let p = predict_chunked(&net, &s.frame1, &s.frame2, &chunk, resamples, Seed(seed))?;
                (p.flow, p.isolated)
            } else {
                let p = predict_resampled(&net, &s.frame1, &s.frame2, resamples, Seed(seed))?;
                (p.flow, p.isolated)
            };
            write_flow(&path, &flow)?;
            if let Some(p) = plot {
                write_text(&p, &flow_lines(&s.frame1, &flow))?;
            }
            writeln!(
                out,
                "points={}\nisolated={}\nmean_flow={}",
                flow.len(),
                isolated.iter().filter(|&&b| b).count(),
                flow.mean_magnitude()
            )
            .map_err(io)?;
        }
        Command::Eval {
            pred,
            sample,
            use_mask,
            ..
        } => {
            let p = read_flow(&pred)?;
            let s = read_sample(&sample)?;
            let gt = s.gt_flow.as_ref().ok_or(Failure::Data(Error::NoGroundTruth))?;
            let mask = if use_mask { s.mask.as_deref() } else { None };
            let report = MetricReport::compute(&p, gt, mask)?;
            write!(out, "{}", report.to_lines()).map_err(io)?;
        }
        Command::Icp {
            sample,
            out: path,
            max_iters,
            tol,
            ..
        } => {
            let s = read_sample(&sample)?;
            let r = icp(&s.frame1, &s.frame2, max_iters, tol)?;
            if let Some(p) = path {
                write_flow(&p, &r.flow)?;
            }
            let t = r.transform.translation;
            writeln!(
                out,
                "iterations={}\nrms={}\nangle={}\ntranslation={} {} {}",
                r.iterations,
                r.history.last().copied().unwrap_or(f64::NAN),
                r.transform.angle(),
                t.x,
                t.y,
                t.z
            )
            .map_err(io)?;
            if let Some(gt) = &s.gt_flow {
                write!(out, "{}", MetricReport::compute(&r.flow, gt, None)?.to_lines()).map_err(io)?;
            }
        }
        Command::Register {
            model,
            sample,
            passes,
            seed,
            ..
        } => {
            let net = read_checkpoint(&model)?;
            let s = read_sample(&sample)?;
            let r = register_scans(&net, &s.frame1, &s.frame2, passes, Seed(seed))?;
            let t = r.transform.translation;
            writeln!(out, "angle={}\ntranslation={} {} {}", r.transform.angle(), t.x, t.y, t.z).map_err(io)?;
            let m = r.transform.rotation;
            for row in 0..3 {
                writeln!(out, "rotation_row{row}={} {} {}", m[(row, 0)], m[(row, 1)], m[(row, 2)]).map_err(io)?;
            }
        }
        Command::Segment {
            sample,
            flow,
            out: path,
            config,
            ..
        } => {
            let cfg: SegmentConfig = load_config(config.as_deref())?;
            let s = read_sample(&sample)?;
            let f = read_flow(&flow)?;
            let r = motion_segment(&s.frame1, &f, &cfg)?;
            if let Some(p) = path {
                let text: String = r.ids.iter().map(|i| format!("{i}\n")).collect();
                write_text(&p, &text)?;
            }
            let unclustered = r.ids.iter().filter(|&&i| i < 0).count();
            writeln!(out, "clusters={}\nunclustered={unclustered}", r.count).map_err(io)?;
        }
        Command::Ground {
            sample,
            iters,
            inlier_dist,
            out: path,
            seed,
            ..
        } => {
            let s = read_sample(&sample)?;
            let r = remove_ground_ransac(&s.frame1, iters, inlier_dist, Seed(seed))?;
            if let Some(p) = path {
                let text: String = r.mask.iter().map(|&b| if b { "1\n" } else { "0\n" }).collect();
                write_text(&p, &text)?;
            }
            let [a, b, c, d] = r.plane;
            writeln!(out, "plane={a} {b} {c} {d}\ninlier_fraction={}", r.inlier_fraction).map_err(io)?;
        }
        Command::Bench {
            model,
            sizes,
            repeats,
            seed,
            ..
        } => {
            let sizes = parse_sizes(&sizes)?;
            let net = match model {
                Some(p) => read_checkpoint(&p)?,
                None => FlowNet::init(&ModelSpec::table1(), Seed(seed))?,
            };
            writeln!(out, "points batch ms").map_err(io)?;
            for row in bench(&net, &sizes, repeats, Seed(seed))? {
                writeln!(out, "{}", row.line()).map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "usage error: {m}");
            1
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}
