use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use holodet::assignment::{assign_to_layers, assign_to_windows, DropReason};
use holodet::eval::{LengthBin, LengthBins};
use holodet::formats;
use holodet::fusion::{align, fuse_pyramid, DipFeatures, MixWeights};
use holodet::geometry::Point;
use holodet::merge::{merge_detections, MergeMode};
use holodet::pyramid::{plan_pyramid, PyramidTiling};
use holodet::ssrw::batch_weights;
use holodet::synth::SceneSpec;
use holodet::synth::{generate_scene, perturb_detector, substream_seed};
use holodet::{evaluate, GroundTruth, ImageData, PipelineConfig};

const WORKERS_ENV: &str = "HOLODET_WORKERS";

#[derive(Parser)]
#[command(
    name = "holodet",
    version,
    about = "Pyramid tiling, merging and evaluation for oriented detection in large images"
)]
struct Cli {
    /// TOML configuration file; unset keys take their defaults.
    #[arg(long, global = true, env = "HOLODET_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ImageSize {
    #[arg(long)]
    height: u32,
    #[arg(long)]
    width: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Nms,
    ExclusiveBands,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Print the pyramid layer sizes for an image.
    Plan(ImageSize),
    /// List the sliding windows of every layer.
    Tile(ImageSize),
    /// Assign annotated boxes to layers and windows.
    Assign {
        #[command(flatten)]
        size: ImageSize,
        /// Annotation file (8 corner coordinates, class, optional difficulty).
        annotations: PathBuf,
        /// Directory for per-layer annotation files (layer frame) and the drop report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sample regression weights as CSV.
    Ssrw {
        /// `gt cx cy w h theta` lines followed by `sample x y` lines.
        input: PathBuf,
    },
    /// Fuse a synthetic feature pyramid and report the candidate sets.
    FuseDemo {
        #[arg(long, default_value_t = 1024)]
        size: u32,
        #[arg(long, default_value_t = 256)]
        window: u32,
        #[arg(long, default_value_t = 64)]
        overlap: u32,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        min_level: u32,
        #[arg(long, default_value_t = 5)]
        max_level: u32,
    },
    /// Scale-filter and merge original-frame detections.
    Merge {
        detections: PathBuf,
        /// Number of pyramid layers (bounds the exclusive bands).
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        no_scale_filter: bool,
        #[arg(long)]
        nms_iou: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate detections against annotations (pairs of files, one per image).
    Eval {
        #[arg(long = "gt", required = true)]
        gts: Vec<PathBuf>,
        #[arg(long = "det", required = true)]
        dets: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
        /// Comma-separated length bin edges, e.g. `0,50,200,800,16384`.
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<f64>>,
    },
    /// Generate a synthetic scene and, optionally, simulated detections.
    Synth {
        /// Scene description (TOML); defaults to the `[scene]` table of the config.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for `annotations.txt` (and `detections.txt`).
        #[arg(long)]
        out: PathBuf,
        /// Also write detections simulated with the configured jitter.
        #[arg(long)]
        detections: bool,
    },
    /// Run the whole chain on a synthetic scene and print a report.
    Pipeline {
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
}

fn usage(msg: String) -> anyhow::Error {
    holodet::Error::InvalidArgument(msg).into()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn tiling(cfg: &PipelineConfig, size: &ImageSize) -> Result<PyramidTiling> {
    let plan = plan_pyramid(
        size.height,
        size.width,
        cfg.sigma,
        cfg.window_height,
        cfg.window_width,
    )?;
    Ok(PyramidTiling::new(plan, cfg.overlap)?)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Plan(size) => {
            let t = tiling(&cfg, size)?;
            let mut s = format!("layers {}\n", t.plan.n());
            for (m, l) in (1..).zip(&t.plan.layers) {
                let (lo, hi) = cfg.thresholds.band(m);
                let _ = writeln!(
                    s,
                    "layer {m}  scale {}  size {}x{}  windows {}  band [{lo}, {hi})",
                    t.plan.scale(m),
                    l.width,
                    l.height,
                    t.layers[m - 1].len()
                );
            }
            print!("{s}");
        }
        Command::Tile(size) => {
            let t = tiling(&cfg, size)?;
            let mut s = String::from("layer,index,x0,y0,width,height\n");
            for w in t.layers.iter().flatten() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    w.layer, w.index, w.x0, w.y0, w.width, w.height
                );
            }
            print!("{s}");
        }
        Command::Assign {
            size,
            annotations,
            out,
        } => {
            let gts = formats::parse_annotations(&read(annotations)?)
                .with_context(|| format!("parsing {}", annotations.display()))?;
            let t = tiling(&cfg, size)?;
            let boxes: Vec<_> = gts.iter().map(|g| g.bbox).collect();
            let a = assign_to_layers(&boxes, &t.plan, &cfg.thresholds);
            let mut s = String::new();
            for (m, group) in (1..).zip(&a.groups) {
                let per_window = assign_to_windows(group, &t.layers[m - 1]);
                let _ = writeln!(s, "layer {m}: {} labels", group.len());
                for (w, labels) in t.layers[m - 1].iter().zip(&per_window) {
                    if labels.is_empty() {
                        continue;
                    }
                    let ids: Vec<String> = labels.iter().map(|l| l.source.to_string()).collect();
                    let _ = writeln!(
                        s,
                        "  window {} ({}, {}): {}",
                        w.index,
                        w.x0,
                        w.y0,
                        ids.join(" ")
                    );
                }
            }
            for d in &a.dropped {
                let why = match d.reason {
                    DropReason::TooShort => "too short",
                    DropReason::TooLong => "too long",
                };
                let _ = writeln!(s, "dropped {} (length {}): {why}", d.source, d.length);
            }
            if let Some(dir) = out {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                for (m, group) in (1..).zip(&a.groups) {
                    let layer_gts: Vec<GroundTruth> = group
                        .iter()
                        .map(|l| GroundTruth {
                            bbox: l.bbox,
                            ..gts[l.source].clone()
                        })
                        .collect();
                    emit(
                        Some(&dir.join(format!("layer_{m}.txt"))),
                        &formats::write_annotations(&layer_gts),
                    )?;
                }
                let mut report = String::from("index,length,reason\n");
                for d in &a.dropped {
                    let why = match d.reason {
                        DropReason::TooShort => "too-short",
                        DropReason::TooLong => "too-long",
                    };
                    let _ = writeln!(report, "{},{},{why}", d.source, d.length);
                }
                emit(Some(&dir.join("dropped.csv")), &report)?;
            }
            print!("{s}");
        }
        Command::Ssrw { input } => {
            let batch = formats::parse_sample_file(&read(input)?)
                .with_context(|| format!("parsing {}", input.display()))?;
            print!(
                "{}",
                formats::write_sample_records(&batch_weights(&batch, cfg.mu)?)
            );
        }
        Command::FuseDemo {
            size,
            window,
            overlap,
            channels,
            min_level,
            max_level,
        } => {
            if min_level > max_level {
                return Err(usage("min-level must not exceed max-level".into()));
            }
            let plan = plan_pyramid(*size, *size, cfg.sigma, *window, *window)?;
            let t = PyramidTiling::new(plan, *overlap)?;
            let seed = substream_seed(cfg.seed, &[2]);
            let phase = |c: usize| (substream_seed(seed, &[c as u64]) % 1000) as f64 / 1000.0;
            let dip = DipFeatures::synthetic(
                &t,
                cfg.sigma,
                *min_level..=*max_level,
                *channels,
                |_, _, c, p| (p.x / 97.0 + phase(c) * 6.0).sin() * (p.y / 131.0).cos(),
            );
            let n_in = 3 * channels;
            let data: Vec<f64> = (0..channels * n_in)
                .map(|k| (substream_seed(seed, &[100, k as u64]) % 2001) as f64 / 1000.0 - 1.0)
                .collect();
            let weights = MixWeights::new(*channels, n_in, data)?;
            let (fused, sel) = fuse_pyramid(&dip, &weights)?;
            let mut s = format!("layers {}  candidate sets {}\n", t.plan.n(), sel.sets.len());
            for set in &sel.sets {
                let map = &fused.tiles(set.layer, set.level).expect("fused level")[0];
                let mean = map.values().iter().sum::<f64>() / map.values().len() as f64;
                let (ul, ui) = set.upper();
                let (ll, li) = set.lower();
                let triple = align(&dip, set)?;
                // probe points spread over the frame; every aligned member must
                // put each point into the same cell
                let fr = set.frame;
                let probes = 100u64;
                let agree = (0..probes)
                    .filter(|&k| {
                        let u = |salt: u64| {
                            (substream_seed(seed, &[200, k, salt]) % 10_000) as f64 / 10_000.0
                        };
                        let p = Point::new(
                            fr.origin.x + u(0) * fr.width as f64 * fr.ratio,
                            fr.origin.y + u(1) * fr.height as f64 * fr.ratio,
                        );
                        let c = triple.mid.cell_of(p);
                        c.is_some() && triple.upper.cell_of(p) == c && triple.lower.cell_of(p) == c
                    })
                    .count();
                let _ = writeln!(
                    s,
                    "set layer {} level {}  upper ({ul}, {ui})  lower ({ll}, {li})  grid {}x{}x{}  cell {} px  consistent {agree}/{probes}  mean {mean:.6}",
                    set.layer, set.level, map.channels, map.height, map.width, fr.ratio
                );
            }
            let _ = writeln!(s, "pass-through {}", sel.pass_through.len());
            print!("{s}");
        }
        Command::Merge {
            detections,
            layers,
            mode,
            no_scale_filter,
            nms_iou,
            output,
        } => {
            let dets = formats::parse_detections(&read(detections)?)
                .with_context(|| format!("parsing {}", detections.display()))?;
            let mode = match mode {
                Some(Mode::Nms) => MergeMode::Nms,
                Some(Mode::ExclusiveBands) => MergeMode::ExclusiveBands,
                None => cfg.merge_mode,
            };
            let n = layers.unwrap_or_else(|| dets.iter().map(|d| d.layer).max().unwrap_or(1));
            let thr = nms_iou.unwrap_or(cfg.nms_iou);
            if !(thr > 0.0 && thr <= 1.0) {
                return Err(usage(format!("nms-iou must lie in (0, 1], got {thr}")));
            }
            let merged = merge_detections(
                &dets,
                &cfg.thresholds,
                n,
                thr,
                cfg.scale_filter && !no_scale_filter,
                mode,
            );
            emit(output.as_deref(), &formats::write_detections(&merged))?;
        }
        Command::Eval {
            gts,
            dets,
            format,
            bins,
        } => {
            let mut eval_cfg = cfg.eval.clone();
            if let Some(edges) = bins {
                eval_cfg.bins = bins_from_edges(edges)?;
            }
            if gts.len() != dets.len() {
                return Err(usage(format!(
                    "got {} --gt files but {} --det files",
                    gts.len(),
                    dets.len()
                )));
            }
            let images = gts
                .iter()
                .zip(dets)
                .map(|(g, d)| {
                    Ok(ImageData {
                        gts: formats::parse_annotations(&read(g)?)
                            .with_context(|| format!("parsing {}", g.display()))?,
                        dets: formats::parse_detections(&read(d)?)
                            .with_context(|| format!("parsing {}", d.display()))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate(&images, &eval_cfg);
            match format {
                ReportFormat::Text => print!("{report}"),
                ReportFormat::Csv => print!("{}", report.to_delimited()),
            }
        }
        Command::Synth {
            spec,
            out,
            detections,
        } => {
            let mut scene = match spec {
                Some(p) => SceneSpec::from_toml(&read(p)?)
                    .with_context(|| format!("loading {}", p.display()))?,
                None => cfg.scene.clone(),
            };
            scene.seed = substream_seed(cfg.seed, &[0]);
            let gts = generate_scene(&scene)?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            emit(
                Some(&out.join("annotations.txt")),
                &formats::write_annotations(&gts),
            )?;
            if *detections {
                let bounds = (f64::from(scene.width), f64::from(scene.height));
                let dets =
                    perturb_detector(&gts, &cfg.jitter, bounds, substream_seed(cfg.seed, &[1]))?;
                emit(
                    Some(&out.join("detections.txt")),
                    &formats::write_detections(&dets),
                )?;
            }
        }
        Command::Pipeline { format } => {
            let run = holodet::run_pipeline(&cfg)?;
            match format {
                ReportFormat::Text => print!("{run}"),
                ReportFormat::Csv => print!("{}", run.report.to_delimited()),
            }
        }
    }
    Ok(())
}

fn bins_from_edges(edges: &[f64]) -> Result<LengthBins> {
    const NAMES: [&str; 4] = ["short", "middle", "large", "huge"];
    if edges.len() < 2 {
        return Err(usage("--bins needs at least two edges".into()));
    }
    let n = edges.len() - 1;
    let bins = LengthBins {
        bins: edges
            .windows(2)
            .enumerate()
            .map(|(k, e)| LengthBin {
                name: if n == NAMES.len() {
                    NAMES[k].to_string()
                } else {
                    format!("bin{}", k + 1)
                },
                lo: e[0],
                hi: e[1],
            })
            .collect(),
    };
    if !bins.is_contiguous() {
        return Err(usage(format!(
            "--bins edges must increase strictly, got {edges:?}"
        )));
    }
    Ok(bins)
}

fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

/// Exit status 2 for bad input or configuration, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use holodet::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Parse { .. } | E::Config(_) | E::InvalidArgument(_) | E::InvalidBox(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_workers().and_then(|()| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
