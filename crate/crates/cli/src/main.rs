use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use reloc_core::dataset::{SyntheticSceneConfig, Trajectory};
use reloc_core::losses::{LossConfig, Variant};
use reloc_core::frustum::DEFAULT_STRIDE;
use reloc_core::mining::{MiningConfig, DEFAULT_MIN_OVERLAP};
use reloc_core::model::EncoderConfig;
use reloc_core::train::{Phase, TrainSchedule};
use reloc_core::workflow::{self, MineOptions, TrainRequest};
use reloc_core::RelocError;

const INDEX_FILE: &str = "index.rfix";

#[derive(Parser, Debug)]
#[command(name = "reloc", version, about = "Retrieval-based camera relocalization")]
struct Cli {
    /// Worker threads; 1 runs the sequential reference path.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene to disk.
    Synth(SynthArgs),
    /// Mine overlap pairs and difficulty-tiered quadruplets from the train split.
    Mine(MineArgs),
    /// Pretrain or fine-tune the encoder.
    Train(TrainArgs),
    /// Embed the database frames into a retrieval index.
    Index(IndexArgs),
    /// Evaluate retrieval-only and full-pipeline errors on the test split.
    Eval(EvalArgs),
    /// Localize a single frame and print the result.
    Localize(LocalizeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Database (train split) frames.
    #[arg(long, default_value_t = 500)]
    frames: usize,
    /// Query (test split) frames.
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, value_enum, default_value_t = TrajectoryArg::Scatter)]
    trajectory: TrajectoryArg,
    #[arg(long, default_value = "synthetic")]
    name: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrajectoryArg {
    Scatter,
    Orbit,
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum bilateral overlap for pretraining pairs.
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    min_overlap: f64,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Scaled-down schedule for synthetic scenes.
    Desk,
    /// Full-length schedule with the large encoder.
    Full,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    /// `pairs.jsonl` for pretraining, `quadruplets.jsonl` for fine-tuning.
    #[arg(long, alias = "records")]
    pairs: PathBuf,
    /// Directory receiving `<phase>.rfck` and its metadata.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    phase: PhaseArg,
    #[arg(long, default_value_t = Variant::PL)]
    variant: Variant,
    /// Checkpoint to start from; required for fine-tuning.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
    /// Add the medium-vs-hard term to the frustum triplet loss.
    #[arg(long)]
    dual_triplet: bool,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Frame id, e.g. `seq-02/frame-000007`.
    #[arg(long)]
    frame: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

/// Exit codes by error class. Clap itself exits with 2 on usage errors.
fn exit_code(err: &RelocError) -> u8 {
    match err {
        RelocError::Io { .. } => 3,
        RelocError::Parse { .. }
        | RelocError::Format { .. }
        | RelocError::UnsupportedFormat(_)
        | RelocError::Json(_)
        | RelocError::NonOrthonormalRotation(_) => 4,
        RelocError::Domain(_)
        | RelocError::UnknownVariant(_)
        | RelocError::ShapeMismatch { .. }
        | RelocError::DimensionMismatch { .. }
        | RelocError::DuplicateId(_) => 5,
        RelocError::NonPositiveDepth(_)
        | RelocError::NoValidPixels
        | RelocError::DegenerateQuaternion(_)
        | RelocError::EmptyIndex => 6,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(5);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> reloc_core::Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train(a),
        Command::Index(a) => {
            let index = workflow::index(&a.scene, &a.checkpoint, &a.out.join(INDEX_FILE))?;
            println!("indexed {} frames, dim {}", index.len(), index.dim());
            Ok(())
        }
        Command::Eval(a) => {
            let out = workflow::eval(&a.scene, &a.checkpoint, &a.index, &a.out)?;
            print!("{}", out.report.render_text());
            info!("{:.3} ms per query", 1e3 * out.seconds_per_query);
            Ok(())
        }
        Command::Localize(a) => localize(a),
    }
}

fn synth(a: SynthArgs) -> reloc_core::Result<()> {
    let config = SyntheticSceneConfig {
        seed: a.seed,
        scene: a.name,
        n_database: a.frames,
        n_query: a.queries,
        trajectory: match a.trajectory {
            TrajectoryArg::Scatter => Trajectory::Scatter,
            TrajectoryArg::Orbit => Trajectory::Orbit,
        },
        ..Default::default()
    };
    let n = workflow::synth(&config, &a.out)?;
    println!("wrote {n} frames to {}", a.out.display());
    Ok(())
}

fn mine(a: MineArgs) -> reloc_core::Result<()> {
    let opts = MineOptions {
        mining: MiningConfig {
            stride: a.stride,
            seed: a.seed,
            ..Default::default()
        },
        min_overlap: a.min_overlap,
    };
    let s = workflow::mine(&a.scene, &a.out, &opts)?;
    println!(
        "{} frames: {} pairs, {} quadruplets",
        s.frames, s.pairs, s.quadruplets
    );
    Ok(())
}

fn checkpoint_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Pretrain => "pretrain.rfck",
        Phase::Finetune => "finetune.rfck",
    }
}

fn train(a: TrainArgs) -> reloc_core::Result<()> {
    let mut schedule = match (a.phase, a.preset) {
        (PhaseArg::Pretrain, Preset::Desk) => TrainSchedule::desk_pretrain(),
        (PhaseArg::Pretrain, Preset::Full) => TrainSchedule::full_pretrain(),
        (PhaseArg::Finetune, Preset::Desk) => TrainSchedule::desk_finetune(),
        (PhaseArg::Finetune, Preset::Full) => TrainSchedule::full_finetune(),
    };
    schedule.seed = a.seed;
    if let Some(e) = a.epochs {
        schedule.epochs = e;
    }
    if let Some(lr) = a.lr {
        schedule.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        schedule.batch_size = b;
    }
    let encoder = match a.preset {
        Preset::Desk => EncoderConfig::desk(),
        Preset::Full => EncoderConfig::resnet_analog(EncoderConfig::desk().input_dim),
    };
    let loss = LossConfig {
        beta: a.beta,
        margin: a.margin,
        variant: a.variant,
        dual_triplet: a.dual_triplet,
    };
    loss.validate()?;
    let out_checkpoint = a.out.join(checkpoint_name(schedule.phase));
    let req = TrainRequest {
        scene: a.scene,
        records: a.pairs,
        schedule,
        loss,
        encoder: EncoderConfig {
            seed: a.seed,
            ..encoder
        },
        init_checkpoint: a.init,
        out_checkpoint,
    };
    let (_, meta) = workflow::train(&req)?;
    if let (Some(first), Some(last)) = (meta.loss_curve.first(), meta.loss_curve.last()) {
        println!(
            "{} epochs on {} samples, loss {first:.4} -> {last:.4}",
            meta.loss_curve.len(),
            meta.samples
        );
    }
    println!("checkpoint {}", display(&req.out_checkpoint));
    Ok(())
}

fn localize(a: LocalizeArgs) -> reloc_core::Result<()> {
    let out = workflow::localize(&a.scene, &a.checkpoint, &a.index, &a.frame, a.k)?;
    let l = &out.localization;
    let fmt = |p: &reloc_core::Pose| {
        let q = p.q.to_array();
        format!(
            "t [{:.4}, {:.4}, {:.4}] q [{:.5}, {:.5}, {:.5}, {:.5}]",
            p.t[0], p.t[1], p.t[2], q[0], q[1], q[2], q[3]
        )
    };
    println!("frame      {}", a.frame);
    for (id, d) in &out.neighbors {
        println!("neighbor   {id}  distance {d:.5}");
    }
    println!("retrieved  {}", fmt(&l.neighbor_pose));
    println!("estimate   {}", fmt(&l.pose));
    println!("truth      {}", fmt(&out.ground_truth));
    println!(
        "error      retrieval {:.3} m / {:.2} deg, estimate {:.3} m / {:.2} deg",
        l.neighbor_pose.translation_error(&out.ground_truth),
        l.neighbor_pose.rotation_error_degrees(&out.ground_truth),
        l.pose.translation_error(&out.ground_truth),
        l.pose.rotation_error_degrees(&out.ground_truth),
    );
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
