//! `specpost`: data preparation, training, inference, evaluation and plots
//! for the mel-spectrogram post-filter.

mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use specpost::dataio::{build_manifest, materialize_pairs, read_mel, write_mel, CorpusManifest, MaterializeOptions};
use specpost::dsp::{MelBasis, MelNorm};
use specpost::imaging::{image_to_mel, mel_to_image};
use specpost::losses::AdversarialForm;
use specpost::metrics::{evaluate_corpus, synthesize_gl, EvalOptions};
use specpost::model::generator_forward;
use specpost::training::{fit_corpus, load_model, FitOptions};
use specpost::{audio, ErrorClass};

use config::{echo, RunConfig};

pub const MANIFEST: &str = "manifest.tsv";
pub const PAIRS_DIR: &str = "pairs";

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }
}

impl From<specpost::Error> for Failure {
    fn from(e: specpost::Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Runtime => 3,
        };
        Self { code, msg: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "specpost", version, about = "Mel-spectrogram post-filter: prepare data, train, infer, evaluate, plot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the train/test manifest and write coarse/original pair records.
    Prepare(PrepareArgs),
    /// Train the generator and discriminators on prepared pairs.
    Train(TrainArgs),
    /// Map a coarse mel to a predicted mel (optionally also a Griffin-Lim wav).
    Infer(InferArgs),
    /// SSIM and STOI of coarse, predicted and original on the test split.
    Evaluate(EvaluateArgs),
    /// Render two or three mels as stacked panels in a PNG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct DspArgs {
    #[arg(long, default_value_t = 1024)]
    n_fft: usize,
    #[arg(long, default_value_t = 1024)]
    win_length: usize,
    #[arg(long, default_value_t = 256)]
    hop_length: usize,
    #[arg(long, default_value_t = 80)]
    n_mels: usize,
    #[arg(long, default_value_t = 0.0)]
    fmin: f64,
    /// Upper mel edge in Hz [default: Nyquist]
    #[arg(long)]
    fmax: Option<f64>,
    /// Griffin-Lim iterations of the coarse round trip.
    #[arg(long, default_value_t = 60)]
    griffin_lim_iters: usize,
    #[arg(long, default_value = "1e-5")]
    log_floor: f64,
    #[arg(long, value_enum, default_value = "slaney")]
    mel_norm: MelNormArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum MelNormArg {
    Slaney,
    Peak,
}

impl From<MelNormArg> for MelNorm {
    fn from(v: MelNormArg) -> Self {
        match v {
            MelNormArg::Slaney => MelNorm::Slaney,
            MelNormArg::Peak => MelNorm::Peak,
        }
    }
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Directory of mono wav clips at one sample rate.
    #[arg(long)]
    audio_dir: PathBuf,
    /// Output directory for the manifest and pair records.
    #[arg(long)]
    out: PathBuf,
    /// TOML config; flags given explicitly override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 13000)]
    train_count: usize,
    #[arg(long, default_value_t = 100)]
    test_count: usize,
    /// Seed of the train/test shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trim leading/trailing audio quieter than this many dB below peak [default: no trimming]
    #[arg(long)]
    trim_db: Option<f64>,
    #[command(flatten)]
    dsp: DspArgs,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum AdversarialArg {
    LeastSquares,
    Log,
}

impl From<AdversarialArg> for AdversarialForm {
    fn from(v: AdversarialArg) -> Self {
        match v {
            AdversarialArg::LeastSquares => AdversarialForm::LeastSquares,
            AdversarialArg::Log => AdversarialForm::Log,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Output directory of `prepare`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for logs and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// TOML config; flags given explicitly override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint, appending to the run directory's logs.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this epoch (the schedule still spans --epochs).
    #[arg(long)]
    stop_after_epoch: Option<usize>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Accumulate gradients over micro-batches of this size.
    #[arg(long)]
    micro_batch: Option<usize>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Initial learning rate.
    #[arg(long, default_value = "2e-4")]
    lr: f64,
    /// First epoch of the linear decay to zero.
    #[arg(long, default_value_t = 40)]
    decay_start_epoch: usize,
    #[arg(long, default_value_t = 0.5)]
    adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    adam_beta2: f64,
    #[arg(long, default_value = "1e-6")]
    adam_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Discriminator image scales.
    #[arg(long, default_value_t = 4)]
    scales: usize,
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    /// Held-out images scored after every epoch.
    #[arg(long, default_value_t = 8)]
    eval_count: usize,
    /// Weight of the adversarial group against the SSIM+MSE group.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    fm_weight: f64,
    #[arg(long, default_value_t = 11)]
    ssim_window: usize,
    #[arg(long, value_enum, default_value = "least-squares")]
    adversarial: AdversarialArg,
    /// Square image side.
    #[arg(long, default_value_t = 512)]
    image_size: usize,
    /// Pad every mel to this many frames before resizing [default: resize full length]
    #[arg(long)]
    frame_budget: Option<usize>,
    /// Generator channels at full resolution.
    #[arg(long, default_value_t = 64)]
    base_width: usize,
    /// Generator resolution levels.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    d_base_width: usize,
    /// Stride-2 layers per discriminator.
    #[arg(long, default_value_t = 3)]
    d_layers: usize,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Coarse mel (`.mel`) or pair record (`.melpair`, coarse half is used).
    #[arg(long)]
    input: PathBuf,
    /// Predicted mel output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a Griffin-Lim waveform of the prediction here.
    #[arg(long)]
    wav: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Output directory of `prepare`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML config; flags given explicitly override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip the Griffin-Lim STOI columns.
    #[arg(long)]
    no_stoi: bool,
    /// Shell command synthesising `{wav_out}` from the mel file `{mel_in}`.
    #[arg(long)]
    external_vocoder: Option<String>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Mel or pair files, top to bottom (usually coarse, predicted, original).
    #[arg(required = true, num_args = 2..=3)]
    mels: Vec<PathBuf>,
    /// PNG output path.
    #[arg(long)]
    out: PathBuf,
    /// Pixels per mel cell.
    #[arg(long, default_value_t = 2)]
    zoom: usize,
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let res = match cli.command {
        Command::Prepare(a) => prepare(&a, sub),
        Command::Train(a) => train(&a, sub),
        Command::Infer(a) => infer(&a),
        Command::Evaluate(a) => evaluate(&a, sub),
        Command::Plot(a) => plot_cmd(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn apply_prepare(cfg: &mut RunConfig, a: &PrepareArgs, m: &ArgMatches) {
    overlay!(m;
        "train_count": cfg.prepare.train_count => a.train_count;
        "test_count": cfg.prepare.test_count => a.test_count;
        "seed": cfg.prepare.seed => a.seed;
        "trim_db": cfg.prepare.trim_db => a.trim_db;
        "n_fft": cfg.dsp.n_fft => a.dsp.n_fft;
        "win_length": cfg.dsp.win_length => a.dsp.win_length;
        "hop_length": cfg.dsp.hop_length => a.dsp.hop_length;
        "n_mels": cfg.dsp.n_mels => a.dsp.n_mels;
        "fmin": cfg.dsp.fmin => a.dsp.fmin;
        "fmax": cfg.dsp.fmax => a.dsp.fmax;
        "griffin_lim_iters": cfg.dsp.griffin_lim_iters => a.dsp.griffin_lim_iters;
        "log_floor": cfg.dsp.log_floor => a.dsp.log_floor;
        "mel_norm": cfg.dsp.mel_norm => a.dsp.mel_norm.into();
    );
}

fn prepare(a: &PrepareArgs, m: &ArgMatches) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    apply_prepare(&mut cfg, a, m);
    if !a.audio_dir.is_dir() {
        return Err(Failure::data(format!("{} is not a directory", a.audio_dir.display())));
    }
    let p = &cfg.prepare;
    let mut manifest = build_manifest(&a.audio_dir, p.train_count, p.test_count, p.seed)?;
    let params = cfg.dsp.resolve(manifest.sample_rate);
    params.validate()?;
    manifest.stamp(&params);
    echo(
        &a.out,
        &json!({
            "command": "prepare",
            "audio_dir": a.audio_dir,
            "config": cfg,
            "dsp_params": params,
        }),
    )?;
    manifest.write(&a.out.join(MANIFEST))?;
    let opts = MaterializeOptions { trim_db: p.trim_db };
    let summary = materialize_pairs(&manifest, &params, &a.out.join(PAIRS_DIR), &opts)?;
    println!(
        "manifest: {} train, {} test clips at {} Hz",
        p.train_count, p.test_count, manifest.sample_rate
    );
    println!("pairs written: {}", summary.written);
    if summary.is_complete() {
        return Ok(());
    }
    for (id, err) in &summary.failures {
        eprintln!("  failed {id}: {err}");
    }
    Err(Failure::data(format!(
        "{} of {} clips failed",
        summary.failures.len(),
        manifest.entries.len()
    )))
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs, m: &ArgMatches) {
    let t = &mut cfg.train;
    overlay!(m;
        "batch_size": t.batch_size => a.batch_size;
        "micro_batch": t.micro_batch => a.micro_batch;
        "epochs": t.epochs => a.epochs;
        "lr": t.lr0 => a.lr;
        "decay_start_epoch": t.decay_start_epoch => a.decay_start_epoch;
        "adam_beta1": t.adam_beta1 => a.adam_beta1;
        "adam_beta2": t.adam_beta2 => a.adam_beta2;
        "adam_eps": t.adam_eps => a.adam_eps;
        "seed": t.seed => a.seed;
        "scales": t.scales => a.scales;
        "checkpoint_every": t.checkpoint_every => a.checkpoint_every;
        "eval_count": t.eval_count => a.eval_count;
        "alpha": t.loss.alpha => a.alpha;
        "fm_weight": t.loss.fm_weight => a.fm_weight;
        "ssim_window": t.loss.ssim_window => a.ssim_window;
        "adversarial": t.loss.adversarial => a.adversarial.into();
        "image_size": t.codec.target_size => (a.image_size, a.image_size);
        "frame_budget": t.codec.frame_budget => a.frame_budget;
        "base_width": t.generator.base_width => a.base_width;
        "depth": t.generator.depth => a.depth;
        "d_base_width": t.discriminator.base_width => a.d_base_width;
        "d_layers": t.discriminator.n_layers => a.d_layers;
    );
}

fn read_manifest(data: &Path) -> Result<CorpusManifest, Failure> {
    let path = data.join(MANIFEST);
    if !path.is_file() {
        return Err(Failure::data(format!("no {MANIFEST} in {}; run `specpost prepare` first", data.display())));
    }
    Ok(CorpusManifest::read(&path)?)
}

fn train(a: &TrainArgs, m: &ArgMatches) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    apply_train(&mut cfg, a, m);
    cfg.train.validate()?;
    let manifest = read_manifest(&a.data)?;
    echo(
        &a.out,
        &json!({
            "command": "train",
            "data": a.data,
            "resume": a.resume,
            "stop_after_epoch": a.stop_after_epoch,
            "config": cfg,
        }),
    )?;
    let opts = FitOptions {
        resume_from: a.resume.clone(),
        stop_after_epoch: a.stop_after_epoch,
    };
    let out = fit_corpus(&manifest, &a.data.join(PAIRS_DIR), &cfg.train, &a.out, &opts)?;
    println!("epochs completed: {} ({} steps)", out.epochs_completed, out.steps);
    if let Some(e) = out.final_eval {
        println!(
            "epoch {} {} SSIM: coarse {:.4}, predicted {:.4} (n = {})",
            e.epoch, e.split, e.ssim_coarse, e.ssim_pred, e.n
        );
    }
    println!("checkpoint: {}", out.final_checkpoint.display());
    Ok(())
}

fn infer(a: &InferArgs) -> CmdResult {
    let (generator, cfg) = load_model(&a.checkpoint)?;
    let coarse = read_mel(&a.input)?;
    let img = mel_to_image(&coarse, &cfg.codec)?;
    let pred = image_to_mel(&generator_forward(&generator, &img)?)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    echo(
        dir,
        &json!({
            "command": "infer",
            "checkpoint": a.checkpoint,
            "input": a.input,
            "out": a.out,
            "wav": a.wav,
            "train_config": cfg,
        }),
    )?;
    write_mel(&a.out, &pred)?;
    println!("predicted mel {}x{} -> {}", pred.shape().0, pred.shape().1, a.out.display());
    if let Some(wav) = &a.wav {
        let id = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
        let basis = MelBasis::new(&pred.params)?;
        let w = synthesize_gl(&pred, &basis, id)?;
        audio::write_wav(wav, &w)?;
        println!("griffin-lim audio -> {}", wav.display());
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs, m: &ArgMatches) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    overlay!(m;
        "no_stoi": cfg.evaluate.stoi => !a.no_stoi;
        "external_vocoder": cfg.evaluate.external_vocoder => a.external_vocoder.clone();
    );
    let manifest = read_manifest(&a.data)?;
    echo(
        &a.out,
        &json!({
            "command": "evaluate",
            "data": a.data,
            "checkpoint": a.checkpoint,
            "config": cfg,
        }),
    )?;
    let opts = EvalOptions {
        stoi: cfg.evaluate.stoi,
        external_vocoder: cfg.evaluate.external_vocoder.clone(),
        work_dir: Some(a.out.join("vocoder_work")),
    };
    let report = evaluate_corpus(&manifest, &a.data.join(PAIRS_DIR), &a.checkpoint, &opts)?;
    let write = |name: &str, text: String| {
        let p = a.out.join(name);
        std::fs::write(&p, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", p.display())))
    };
    write("report.tsv", report.to_tsv())?;
    let summary = report.summary();
    write("summary.txt", summary.clone())?;
    print!("{summary}");
    let failed = report.rows.iter().filter(|r| !r.is_complete()).count();
    if failed > 0 {
        return Err(Failure::runtime(format!(
            "{failed} of {} clips have missing columns; see report.tsv",
            report.rows.len()
        )));
    }
    Ok(())
}

fn plot_cmd(a: &PlotArgs) -> CmdResult {
    if a.zoom == 0 {
        return Err(Failure::usage("--zoom must be positive"));
    }
    let mels = a.mels.iter().map(|p| read_mel(p)).collect::<Result<Vec<_>, _>>()?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    echo(
        dir,
        &json!({ "command": "plot", "mels": a.mels, "out": a.out, "zoom": a.zoom }),
    )?;
    let (w, h) = plot::render(&mels, a.zoom, &a.out)?;
    println!("{} panels, {w}x{h} px -> {}", mels.len(), a.out.display());
    Ok(())
}
