//! Command-line driver: oracle checks, the swap benchmark, toy training,
//! evaluation, ablations, inference rendering, and score calibration.

mod ablation_grid;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maskgrid::bench;
use maskgrid::error::Result;
use maskgrid::infer::ap::MatchKind;
use maskgrid::infer::calibrate;
use maskgrid::net::checkpoint;
use maskgrid::rle::{DetectionJson, DetectionsJson, RleMask};
use maskgrid::synth::train::{evaluate, infer_scene, train, validation_scenes, ExperimentConfig};
use maskgrid::synth::{generate_scene, run_ablation, scene_seed};
use maskgrid::tensor::{read_tensor, write_tensor};
use maskgrid::transforms::oracle;

#[derive(Parser)]
#[command(name = "maskgrid", about = "Dense sliding-window instance masks on structured 4D tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run oracle equivalence suites and print a pass/fail table.
    Check {
        #[command(subcommand)]
        what: CheckTarget,
    },
    /// Wall-clock benchmarks.
    Bench {
        #[command(subcommand)]
        what: BenchTarget,
    },
    /// Train a model and write a checkpoint plus the loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on freshly generated validation scenes.
    Eval(EvalArgs),
    /// Run the ablation grid and print CSV of AP per configuration.
    Ablate(AblateArgs),
    /// Run inference on synthetic scenes; optionally render masks as PGM.
    Infer(InferArgs),
    /// Fit per-category score calibration on a validation split.
    Calibrate(CalibrateArgs),
}

#[derive(Subcommand)]
enum CheckTarget {
    /// The transform oracle suite.
    Transforms {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Directory for binary tensor fixtures: written when absent,
        /// verified against when present.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchTarget {
    /// Fused swap kernel vs the naive three-op path.
    Swap {
        #[arg(long, default_value_t = 15)]
        vu: usize,
        #[arg(long, default_value_t = 64)]
        hw: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8])]
        lambdas: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Also run the f32 kernel variant (needs the `bench-f32` feature).
        #[arg(long, default_value_t = false)]
        f32: bool,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the effective configuration to this path and continue.
    #[arg(long)]
    dump_config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str(&text)
                    .map_err(|e| maskgrid::Error::Format(format!("config: {e}")))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.dump_config {
            let text = toml::to_string_pretty(&cfg)
                .map_err(|e| maskgrid::Error::Format(format!("config: {e}")))?;
            std::fs::write(path, text)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Where to write the checkpoint.
    #[arg(long, default_value = "maskgrid.ckpt")]
    checkpoint: PathBuf,
    /// Where to write the per-epoch loss curve CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Seeds to average over.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
    seeds: Vec<u64>,
    /// Smaller grid for a quick smoke run.
    #[arg(long, default_value_t = false)]
    quick: bool,
    /// Write the CSV here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene seeds to run on.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0])]
    scenes: Vec<u64>,
    /// Directory for PGM renders and detection JSON.
    #[arg(long)]
    render: Option<PathBuf>,
    /// Apply a calibration table (JSON from `calibrate`).
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Drop detections below this calibrated score when a calibration is
    /// applied.
    #[arg(long, default_value_t = 0.6)]
    calibrated_thresh: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output JSON path for the per-category score tables.
    #[arg(long, default_value = "calibration.json")]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Check {
            what: CheckTarget::Transforms { seed, fixtures },
        } => check_transforms(seed, fixtures.as_deref()),
        Command::Bench {
            what:
                BenchTarget::Swap {
                    vu,
                    hw,
                    lambdas,
                    repeats,
                    f32: run_f32,
                },
        } => bench_swap(vu, hw, &lambdas, repeats, run_f32),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

fn check_transforms(seed: u64, fixtures: Option<&Path>) -> Result<ExitCode> {
    let outcomes = oracle::run_transform_checks(seed);
    let mut all_ok = true;
    println!("{:<55} {:<6} detail", "check", "status");
    for o in &outcomes {
        all_ok &= o.passed;
        println!(
            "{:<55} {:<6} {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if let Some(dir) = fixtures {
        all_ok &= run_fixture_exchange(dir, seed)?;
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Write (or verify) binary tensor dumps of a fixed swap example, so two
/// builds can exchange and cross-check fixtures.
fn run_fixture_exchange(dir: &Path, seed: u64) -> Result<bool> {
    use maskgrid::rng::SplitMix64;
    use maskgrid::tensor::{Repr, Shape4, StructuredTensor, Units};
    use maskgrid::transforms::{swap_align2nat, TransformConfig};

    std::fs::create_dir_all(dir)?;
    let mut rng = SplitMix64::new(seed);
    let input = StructuredTensor::from_fn(
        Shape4::new(3, 3, 8, 8)?,
        Units::new(2.0, 1.0)?,
        Repr::Aligned,
        |_, _, _, _| rng.next_range(-1.0, 1.0),
    );
    let output = swap_align2nat(&input, &TransformConfig::new(2))?;
    let in_path = dir.join("swap_input.bin");
    let out_path = dir.join("swap_output.bin");
    if in_path.exists() && out_path.exists() {
        let stored_in = read_tensor(&mut std::fs::File::open(&in_path)?)?;
        let stored_out = read_tensor(&mut std::fs::File::open(&out_path)?)?;
        let recomputed = swap_align2nat(&stored_in, &TransformConfig::new(2))?;
        let ok = recomputed == stored_out;
        println!(
            "{:<55} {:<6} fixtures at {}",
            "binary fixture exchange",
            if ok { "PASS" } else { "FAIL" },
            dir.display()
        );
        Ok(ok)
    } else {
        write_tensor(&mut std::fs::File::create(&in_path)?, &input)?;
        write_tensor(&mut std::fs::File::create(&out_path)?, &output)?;
        println!(
            "{:<55} {:<6} wrote fixtures to {}",
            "binary fixture exchange", "PASS", dir.display()
        );
        Ok(true)
    }
}

fn bench_swap(
    vu: usize,
    hw: usize,
    lambdas: &[usize],
    repeats: usize,
    run_f32: bool,
) -> Result<ExitCode> {
    println!("{}", bench::BenchRow::csv_header());
    for row in bench::bench_swap(vu, hw, lambdas, repeats)? {
        println!("{}", row.to_csv());
    }
    if run_f32 {
        #[cfg(feature = "bench-f32")]
        {
            println!("# f32 variant");
            for row in bench::bench_swap_f32(vu, hw, lambdas, repeats)? {
                println!("{}", row.to_csv());
            }
        }
        #[cfg(not(feature = "bench-f32"))]
        eprintln!("note: rebuild with --features maskgrid/bench-f32 for the f32 variant");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let out = train(&cfg)?;
    let mut model = out.model;
    checkpoint::save(&args.checkpoint, &mut model)?;
    println!(
        "trained `{}` for {} epochs; loss {:.4} -> {:.4}; checkpoint: {}",
        cfg.name,
        cfg.epochs,
        out.loss_curve.first().unwrap_or(&f64::NAN),
        out.loss_curve.last().unwrap_or(&f64::NAN),
        args.checkpoint.display()
    );
    if let Some(path) = args.loss_csv {
        let mut text = String::from("epoch,loss\n");
        for (i, l) in out.loss_curve.iter().enumerate() {
            text.push_str(&format!("{i},{l:.6}\n"));
        }
        std::fs::write(path, text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<maskgrid::net::Model> {
    let mut model = maskgrid::net::Model::new(cfg.model.clone())?;
    checkpoint::load(path, &mut model)?;
    Ok(model)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let scenes = validation_scenes(&cfg);
    let (ap, dets) = evaluate(&model, &scenes, &cfg, &[0.5, 0.75])?;
    let total: usize = dets.iter().map(Vec::len).sum();
    println!(
        "scenes: {}   detections: {}   AP@0.5: {:.4}   AP@0.75: {:.4}",
        scenes.len(),
        total,
        ap.at(0.5).unwrap_or(0.0),
        ap.at(0.75).unwrap_or(0.0)
    );
    for (t, rows) in ap.iou_thresholds.iter().zip(&ap.per_threshold) {
        for (cat, val) in rows {
            println!("  iou {t:.2} category {cat}: AP {val:.4}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs) -> Result<ExitCode> {
    let grid = ablation_grid::build_grid(&args.seeds, args.quick);
    let rows = run_ablation(&grid)?;
    let mut text = String::from(maskgrid::synth::AblationRow::csv_header());
    text.push('\n');
    for row in &rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = args.out {
        std::fs::write(path, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(args: InferArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let calibration: Option<maskgrid::infer::Calibration> = match &args.calibration {
        Some(path) => Some(render::read_calibration(path)?),
        None => None,
    };
    for &seed in &args.scenes {
        let scene = generate_scene(&cfg.scene, scene_seed(cfg.seed ^ 0x696e_6665, seed as usize));
        let mut dets = infer_scene(&model, &scene, &cfg)?;
        if let Some(cal) = &calibration {
            cal.apply_all(&mut dets);
            dets.retain(|d| d.calibrated.unwrap_or(0.0) >= args.calibrated_thresh);
        }
        println!("scene {seed}: {} detections", dets.len());
        for d in &dets {
            println!(
                "  cat {} score {:.3}{} box ({:.1}, {:.1})-({:.1}, {:.1})",
                d.category,
                d.score,
                d.calibrated
                    .map(|c| format!(" calibrated {c:.3}"))
                    .unwrap_or_default(),
                d.box_px.y0,
                d.box_px.x0,
                d.box_px.y1,
                d.box_px.x1
            );
        }
        if let Some(dir) = &args.render {
            render::render_scene(dir, seed, &scene, &dets)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let scenes = validation_scenes(&cfg);
    let mut dets_per_image = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        dets_per_image.push(infer_scene(&model, scene, &cfg)?);
    }
    let gts: Vec<_> = scenes.iter().map(|s| s.instances.clone()).collect();
    let cal = calibrate(&dets_per_image, &gts, 0.5, MatchKind::Mask);
    render::write_calibration(&args.out, &cal)?;
    println!(
        "calibrated {} categories on {} scenes -> {}",
        cal.categories().count(),
        scenes.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(dead_code)]
fn detections_to_json(
    scene_h: usize,
    scene_w: usize,
    dets: &[maskgrid::infer::Detection],
) -> DetectionsJson {
    DetectionsJson {
        height: scene_h,
        width: scene_w,
        detections: dets
            .iter()
            .map(|d| DetectionJson {
                category: d.category,
                score: d.score,
                calibrated: d.calibrated,
                bbox: [d.box_px.y0, d.box_px.x0, d.box_px.y1, d.box_px.x1],
                mask: d
                    .binary_mask
                    .as_ref()
                    .map(RleMask::from_mask)
                    .unwrap_or(RleMask {
                        size: [scene_h, scene_w],
                        counts: vec![(scene_h * scene_w) as u32],
                    }),
            })
            .collect(),
    }
}
