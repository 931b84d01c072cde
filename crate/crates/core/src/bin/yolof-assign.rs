use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use yolof_assign::encoder::{measured_extent, rf_profile, scale_coverage, RFProfile, ScaleCoverage};
use yolof_assign::flops::{encoder_decoder_flops, DecoderSpec};
use yolof_assign::geometry::{generate_multilevel_anchors, random_shift, AnchorConfig, ImageSize};
use yolof_assign::io::{
    image_seed, load_corpus, load_detections, run_match_stats, write_atomic, AnnotationCorpus, AnnotationRecord, DataError,
    RunConfig,
};
use yolof_assign::parallel::{init_thread_pool, Execution};
use yolof_assign::postprocess::{nms_with, score_filter, Detection};

#[derive(Parser)]
#[command(name = "yolof-assign", version, about = "Anchor matching, receptive-field and FLOPs studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML), or `default` for built-in defaults.
    #[arg(long, default_value = "default")]
    config: PathBuf,
    /// Write here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Count the anchors paved over an image.
    Anchors {
        #[command(flatten)]
        common: Common,
        /// Image as HEIGHTxWIDTH.
        #[arg(long, default_value = "800x1280")]
        image: ImageSize,
        /// Use the five-level P3-P7 pyramid with nine anchors per position.
        #[arg(long)]
        pyramid: bool,
    },
    /// Match every image of a COCO corpus and report positives per size bucket.
    MatchStats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Receptive-field extents of the dilated encoder.
    Rf {
        #[command(flatten)]
        common: Common,
        /// Comma-separated block dilations; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        dilations: Option<Vec<usize>>,
        #[arg(long)]
        no_shortcut: bool,
        /// Feature stride used for the scale-coverage bands.
        #[arg(long, default_value_t = 32)]
        stride: usize,
        /// Also measure the impulse footprint numerically on a grid this wide.
        #[arg(long)]
        verify_grid: Option<usize>,
    },
    /// Encoder and decoder multiply-accumulate counts.
    Flops {
        #[command(flatten)]
        common: Common,
        /// mimo, simo, miso, siso, dilated or custom.
        #[arg(long)]
        topology: Option<String>,
        #[arg(long)]
        channels: Option<u64>,
        #[arg(long)]
        image: Option<ImageSize>,
        /// Head preset: retinanet or yolof.
        #[arg(long)]
        decoder: Option<String>,
        #[arg(long)]
        backbone_macs: Option<u64>,
    },
    /// Score filter and class-wise NMS over a detection list.
    Nms {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        min_score: Option<f64>,
        #[arg(long)]
        max_keep: Option<usize>,
    },
    /// Randomly shift every image's annotations and write the shifted corpus.
    Shift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        max_shift: Option<u32>,
    },
}

enum Failure {
    Usage(String),
    Data(DataError),
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_thread_pool();
    let (common, result) = dispatch(cli.command);
    let text = match result {
        Ok(text) => text,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match &common.output {
        Some(path) => match write_atomic(path, text.as_bytes()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        None => {
            print!("{text}");
            ExitCode::SUCCESS
        }
    }
}

fn dispatch(command: Command) -> (Common, Outcome) {
    match command {
        Command::Anchors { common, image, pyramid } => {
            let r = anchors(&common, image, pyramid);
            (common, r)
        }
        Command::MatchStats { common, input } => {
            let r = match_stats(&common, &input);
            (common, r)
        }
        Command::Rf {
            common,
            dilations,
            no_shortcut,
            stride,
            verify_grid,
        } => {
            let r = rf(&common, dilations, no_shortcut, stride, verify_grid);
            (common, r)
        }
        Command::Flops {
            common,
            topology,
            channels,
            image,
            decoder,
            backbone_macs,
        } => {
            let r = flops(&common, topology, channels, image, decoder, backbone_macs);
            (common, r)
        }
        Command::Nms {
            common,
            input,
            iou,
            min_score,
            max_keep,
        } => {
            let r = nms(&common, &input, iou, min_score, max_keep);
            (common, r)
        }
        Command::Shift {
            common,
            input,
            max_shift,
        } => {
            let r = shift(&common, &input, max_shift);
            (common, r)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn exec(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[derive(Serialize)]
struct LevelCount {
    stride: u32,
    grid_h: usize,
    grid_w: usize,
    anchors_per_position: usize,
    count: usize,
}

#[derive(Serialize)]
struct AnchorReport {
    image: ImageSize,
    levels: Vec<LevelCount>,
    count: usize,
}

fn anchors(common: &Common, image: ImageSize, pyramid: bool) -> Outcome {
    let cfg = load_config(common)?;
    let configs = if pyramid {
        AnchorConfig::retinanet_pyramid()
    } else {
        vec![cfg.anchors.clone()]
    };
    let grids = generate_multilevel_anchors(&configs, image)
        .map_err(|e| DataError::Config(format!("anchors: {e}")))?;
    let levels: Vec<LevelCount> = grids
        .iter()
        .map(|g| LevelCount {
            stride: g.config.stride,
            grid_h: g.grid_h,
            grid_w: g.grid_w,
            anchors_per_position: g.config.anchors_per_position(),
            count: g.len(),
        })
        .collect();
    let report = AnchorReport {
        image,
        count: levels.iter().map(|l| l.count).sum(),
        levels,
    };
    Ok(match common.format {
        Format::Json => json(&report),
        Format::Csv => csv_table(
            &["stride", "grid_h", "grid_w", "anchors_per_position", "count"],
            &report
                .levels
                .iter()
                .map(|l| {
                    vec![
                        l.stride.to_string(),
                        l.grid_h.to_string(),
                        l.grid_w.to_string(),
                        l.anchors_per_position.to_string(),
                        l.count.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    })
}

fn match_stats(common: &Common, input: &Path) -> Outcome {
    let cfg = load_config(common)?;
    let corpus = load_corpus(input)?;
    if corpus.dropped > 0 {
        log::warn!("{} annotation(s) dropped while loading", corpus.dropped);
    }
    let report = run_match_stats(&corpus, &cfg, exec(common))?;
    Ok(match common.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    })
}

#[derive(Serialize)]
struct RfReport {
    dilations: Vec<usize>,
    shortcuts: bool,
    num_extents: usize,
    profile: RFProfile,
    stride: usize,
    pixel_extents: Vec<usize>,
    coverage: ScaleCoverage,
    measured_extent: Option<usize>,
}

fn rf(
    common: &Common,
    dilations: Option<Vec<usize>>,
    no_shortcut: bool,
    stride: usize,
    verify_grid: Option<usize>,
) -> Outcome {
    let cfg = load_config(common)?;
    let mut spec = cfg.encoder;
    if let Some(d) = dilations {
        spec.dilations = d;
    }
    if no_shortcut {
        spec.shortcuts = false;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if stride == 0 {
        return Err(Failure::Usage("--stride must be positive".into()));
    }
    let profile = rf_profile(&spec);
    let measured = verify_grid
        .map(|g| measured_extent(&spec, g, exec(common)))
        .transpose()
        .map_err(|e| Failure::Usage(format!("--verify-grid: {e}")))?;
    let report = RfReport {
        dilations: spec.dilations.clone(),
        shortcuts: spec.shortcuts,
        num_extents: profile.extents.len(),
        pixel_extents: profile.pixel_extents(stride),
        coverage: scale_coverage(&profile, stride),
        profile,
        stride,
        measured_extent: measured,
    };
    Ok(match common.format {
        Format::Json => json(&report),
        Format::Csv => csv_table(
            &["extent", "pixels"],
            &report
                .profile
                .extents
                .iter()
                .zip(&report.pixel_extents)
                .map(|(e, p)| vec![e.to_string(), p.to_string()])
                .collect::<Vec<_>>(),
        ),
    })
}

fn flops(
    common: &Common,
    topology: Option<String>,
    channels: Option<u64>,
    image: Option<ImageSize>,
    decoder: Option<String>,
    backbone_macs: Option<u64>,
) -> Outcome {
    let cfg = load_config(common)?;
    let mut settings = cfg.flops.clone();
    if let Some(t) = topology {
        settings.topology = t;
    }
    if let Some(c) = channels {
        settings.channels = c;
        settings.decoder.channels = c;
    }
    if let Some(b) = backbone_macs {
        settings.backbone_macs = Some(b);
    }
    if let Some(d) = decoder {
        settings.decoder = match d.to_ascii_lowercase().as_str() {
            "retinanet" => DecoderSpec::retinanet(settings.channels),
            "yolof" => DecoderSpec::yolof(settings.channels),
            other => return Err(Failure::Usage(format!("unknown decoder {other:?} (expected retinanet or yolof)"))),
        };
    }
    let image = match image {
        Some(i) => i,
        None => settings.image_size()?,
    };
    let topo = settings.topology(&cfg.encoder)?;
    let mut report = encoder_decoder_flops(&topo, &settings.decoder, image)
        .map_err(|e| DataError::Config(e.to_string()))?;
    if let Some(b) = settings.backbone_macs {
        report = report.with_backbone(b);
    }
    Ok(match common.format {
        Format::Json => json(&report),
        Format::Csv => csv_table(
            &["component", "name", "level", "in_channels", "out_channels", "kernel", "height", "width", "macs"],
            &report
                .layers
                .iter()
                .map(|l| {
                    vec![
                        serde_json::to_value(l.component)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                        l.name.clone(),
                        l.level.to_string(),
                        l.in_channels.to_string(),
                        l.out_channels.to_string(),
                        l.kernel.to_string(),
                        l.height.to_string(),
                        l.width.to_string(),
                        l.macs.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    })
}

#[derive(Serialize)]
struct NmsReport {
    iou_threshold: f64,
    input: usize,
    after_score_filter: usize,
    kept: Vec<Detection>,
}

fn nms(
    common: &Common,
    input: &Path,
    iou: Option<f64>,
    min_score: Option<f64>,
    max_keep: Option<usize>,
) -> Outcome {
    let cfg = load_config(common)?;
    let iou = iou.unwrap_or(cfg.nms.iou);
    if !(0.0..=1.0).contains(&iou) {
        return Err(Failure::Usage(format!("--iou {iou} is not in [0, 1]")));
    }
    let dets = load_detections(input)?;
    let filtered = score_filter(
        &dets,
        min_score.unwrap_or(cfg.nms.min_score),
        max_keep.unwrap_or(cfg.nms.max_keep),
    );
    let kept: Vec<Detection> = nms_with(&filtered, iou, exec(common))
        .into_iter()
        .map(|i| filtered[i])
        .collect();
    let report = NmsReport {
        iou_threshold: iou,
        input: dets.len(),
        after_score_filter: filtered.len(),
        kept,
    };
    Ok(match common.format {
        Format::Json => json(&report),
        Format::Csv => csv_table(
            &["x1", "y1", "x2", "y2", "score", "category_id"],
            &report
                .kept
                .iter()
                .map(|d| {
                    let b = d.bbox;
                    vec![
                        b.x1.to_string(),
                        b.y1.to_string(),
                        b.x2.to_string(),
                        b.y2.to_string(),
                        d.score.to_string(),
                        d.class_id.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    })
}

fn shift(common: &Common, input: &Path, max_shift: Option<u32>) -> Outcome {
    if common.format == Format::Csv {
        return Err(Failure::Usage("shift writes a COCO corpus; only --format json is supported".into()));
    }
    let cfg = load_config(common)?;
    let max_shift = max_shift.unwrap_or(cfg.shift.max_shift);
    let corpus = load_corpus(input)?;
    let mut annotations = Vec::with_capacity(corpus.num_annotations());
    for image in &corpus.images {
        let anns = corpus.annotations_of(image.id);
        let boxes: Vec<_> = anns.iter().map(|a| a.bbox).collect();
        let seed = image_seed(cfg.seed, image.id);
        let out = random_shift(&boxes, image.size, max_shift, seed);
        for (b, &i) in out.boxes.iter().zip(&out.kept) {
            let a = &anns[i];
            annotations.push(AnnotationRecord::new(a.id, a.image_id, *b, a.category_id));
        }
    }
    let shifted = AnnotationCorpus::from_parts(corpus.images.clone(), annotations, corpus.categories.clone())?;
    let mut text = shifted.to_json();
    text.push('\n');
    Ok(text)
}
