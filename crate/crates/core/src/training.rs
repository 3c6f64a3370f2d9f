//! Alternating discriminator/generator optimisation.
//!
//! Each step first updates the discriminator bank on its own objective with
//! the generator frozen, then updates the generator on the weighted sum of
//! adversarial, feature-matching, SSIM and MSE terms with the bank frozen.
//! A batch may be split into micro-batches whose gradients are accumulated.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::dataio::{load_pairs, CorpusManifest, PairedExample, Split};
use crate::error::{Error, Result};
use crate::imaging::{mel_to_image, ImageCodecParams, SpectrogramImage};
use crate::losses::{
    adv_d_graph, adv_g_graph, feature_matching_graph, mse_graph, ssim_loss_graph, ssim_mean, LossReport, LossWeights,
};
use crate::model::{
    image_to_tensor, load_checkpoint, save_checkpoint, DiscriminatorBank, DiscriminatorConfig, GeneratorConfig,
    GeneratorNet, OptimizerState, ScaleOutput,
};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Split each batch into chunks of this size and accumulate gradients.
    pub micro_batch: Option<usize>,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_start_epoch: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Discriminator pyramid depth; overrides `discriminator.scales`.
    pub scales: usize,
    pub checkpoint_every: usize,
    /// Images used for the per-epoch SSIM evaluation.
    pub eval_count: usize,
    pub loss: LossWeights,
    pub codec: ImageCodecParams,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            micro_batch: None,
            epochs: 100,
            lr0: 2e-4,
            decay_start_epoch: 40,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            seed: 0,
            scales: 4,
            checkpoint_every: 10,
            eval_count: 8,
            loss: LossWeights::default(),
            codec: ImageCodecParams::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.micro_batch == Some(0) {
            return bad("micro_batch must be positive".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be finite and >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.scales == 0 || self.checkpoint_every == 0 {
            return bad("scales and checkpoint_every must be positive".into());
        }
        if self.generator.value_range != self.codec.value_range {
            return bad(format!(
                "generator range {:?} differs from image range {:?}",
                self.generator.value_range, self.codec.value_range
            ));
        }
        self.loss.validate()?;
        self.codec.validate()?;
        self.generator.validate()?;
        self.discriminator_config().validate()?;
        let (h, w) = self.codec.target_size;
        let m = self.generator.size_multiple().max(1 << (self.scales - 1));
        if h % m != 0 || w % m != 0 {
            return bad(format!("image size {h}x{w} must be a multiple of {m}"));
        }
        Ok(())
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            scales: self.scales,
            ..self.discriminator.clone()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Learning rate for `epoch`: `lr0` before `decay_start_epoch`, then linear
/// decay reaching 0 at `epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::InvalidParam(format!("epoch {epoch} beyond {} epochs", cfg.epochs)));
    }
    if epoch < cfg.decay_start_epoch {
        return Ok(cfg.lr0);
    }
    let span = cfg.epochs.saturating_sub(cfg.decay_start_epoch);
    if span == 0 {
        return Ok(0.0);
    }
    Ok(cfg.lr0 * (cfg.epochs - epoch) as f64 / span as f64)
}

/// Coarse/original images of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub clip_id: String,
    pub coarse: SpectrogramImage,
    pub original: SpectrogramImage,
}

/// Encode mel pairs as images, each with its own dynamic-range scaling.
pub fn encode_pairs(pairs: &[PairedExample], codec: &ImageCodecParams) -> Result<Vec<ImagePair>> {
    par::map_slice(pairs, |p| {
        Ok(ImagePair {
            clip_id: p.clip_id.clone(),
            coarse: mel_to_image(&p.coarse, codec)?,
            original: mel_to_image(&p.original, codec)?,
        })
    })
    .into_iter()
    .collect()
}

fn stack(images: &[&SpectrogramImage]) -> Tensor {
    let items: Vec<Tensor> = images.iter().map(|i| image_to_tensor(i)).collect();
    Tensor::stack(&items)
}

fn slice_batch(t: &Tensor, start: usize, len: usize) -> Tensor {
    let l = t.item_len();
    let [_, c, h, w] = t.shape;
    Tensor::from_vec([len, c, h, w], t.data[start * l..(start + len) * l].to_vec())
}

fn logits(outs: &[ScaleOutput]) -> Vec<Var> {
    outs.iter().map(ScaleOutput::logits).collect()
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, mut grads: Vec<Tensor>, weight: f64) {
    grads.iter_mut().for_each(|g| g.scale(weight));
    match acc {
        None => *acc = Some(grads),
        Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
    }
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.to_string() })
    }
}

/// Generator, discriminator bank and their optimisers, plus progress counters.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: GeneratorNet,
    pub bank: DiscriminatorBank,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimisation steps.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    step: u64,
    wall_time: f64,
    train_config: TrainConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = GeneratorNet::new(config.generator.clone(), config.seed)?;
        let bank = DiscriminatorBank::new(config.discriminator_config(), config.seed.wrapping_add(1))?;
        let optimizer = OptimizerState {
            generator: Adam::new(config.adam(), &generator.params),
            discriminators: bank.scales.iter().map(|d| Adam::new(config.adam(), &d.params)).collect(),
        };
        Ok(Self {
            config,
            generator,
            bank,
            optimizer,
            epoch: 0,
            step: 0,
        })
    }

    /// Restore a trainer; returns it with the wall time recorded so far.
    pub fn load(path: &Path) -> Result<(Self, f64)> {
        let ck = load_checkpoint(path)?;
        let meta: CheckpointMeta = serde_json::from_value(ck.meta)
            .map_err(|e| Error::CorruptCheckpoint(format!("training metadata: {e}")))?;
        let optimizer = ck
            .optimizer
            .ok_or_else(|| Error::CorruptCheckpoint("no optimiser state to resume from".into()))?;
        Ok((
            Self {
                config: meta.train_config,
                generator: ck.generator,
                bank: ck.bank,
                optimizer,
                epoch: meta.epoch,
                step: meta.step,
            },
            meta.wall_time,
        ))
    }

    pub fn save(&self, path: &Path, wall_time: f64) -> Result<()> {
        let meta = CheckpointMeta {
            epoch: self.epoch,
            step: self.step,
            wall_time,
            train_config: self.config.clone(),
        };
        let meta = serde_json::to_value(meta).expect("metadata serializes");
        save_checkpoint(path, &self.generator, &self.bank, Some(&self.optimizer), &meta)
    }

    fn chunks(&self, n: usize) -> Vec<(usize, usize)> {
        let m = self.config.micro_batch.unwrap_or(n).max(1);
        (0..n).step_by(m).map(|s| (s, m.min(n - s))).collect()
    }

    fn discriminator_pass(&self, coarse: &Tensor, original: &Tensor) -> Result<(f64, Vec<Vec<Tensor>>)> {
        let n = coarse.n();
        let form = self.config.loss.adversarial;
        let mut value = 0.0;
        let mut acc: Vec<Option<Vec<Tensor>>> = vec![None; self.bank.scales.len()];
        for (start, len) in self.chunks(n) {
            let weight = len as f64 / n as f64;
            let mut g = Graph::new();
            let gp = self.generator.params.bind(&mut g, false);
            let x = g.constant(slice_batch(coarse, start, len));
            let y = g.constant(slice_batch(original, start, len));
            let fake = self.generator.forward(&mut g, &gp, x);
            let dp = self.bank.bind(&mut g, true);
            let real = self.bank.forward(&mut g, &dp, x, y);
            let fake = self.bank.forward(&mut g, &dp, x, fake);
            let d = adv_d_graph(&mut g, &logits(&real), &logits(&fake), form);
            value += weight * finite("adv_d", g.scalar(d))?;
            let mut grads = g.backward(d);
            for (k, disc) in self.bank.scales.iter().enumerate() {
                accumulate(&mut acc[k], disc.params.collect_grads(&mut grads, &dp[k]), weight);
            }
        }
        Ok((value, acc.into_iter().map(|a| a.expect("nonempty batch")).collect()))
    }

    fn generator_pass(&self, coarse: &Tensor, original: &Tensor) -> Result<(LossReport, Vec<Tensor>)> {
        let n = coarse.n();
        let w = &self.config.loss;
        let mut report = LossReport::default();
        let mut acc = None;
        for (start, len) in self.chunks(n) {
            let weight = len as f64 / n as f64;
            let mut g = Graph::new();
            let gp = self.generator.params.bind(&mut g, true);
            let x = g.constant(slice_batch(coarse, start, len));
            let y = g.constant(slice_batch(original, start, len));
            let fake = self.generator.forward(&mut g, &gp, x);
            let dp = self.bank.bind(&mut g, false);
            let real_out = self.bank.forward(&mut g, &dp, x, y);
            let fake_out = self.bank.forward(&mut g, &dp, x, fake);
            let adv = adv_g_graph(&mut g, &logits(&fake_out), w.adversarial);
            let rf: Vec<Vec<Var>> = real_out.iter().map(|o| o.features.clone()).collect();
            let ff: Vec<Vec<Var>> = fake_out.iter().map(|o| o.features.clone()).collect();
            let fm = feature_matching_graph(&mut g, &rf, &ff)?;
            let ssim = ssim_loss_graph(&mut g, fake, y, w)?;
            let mse = mse_graph(&mut g, fake, y)?;

            let fm_w = g.scale(fm, w.fm_weight);
            let adv_group = g.add(adv, fm_w);
            let adv_group = g.scale(adv_group, w.alpha);
            let rec_group = g.add(ssim, mse);
            let rec_group = g.scale(rec_group, 1.0 - w.alpha);
            let total = g.add(adv_group, rec_group);

            report.adv_g += weight * finite("adv_g", g.scalar(adv))?;
            report.fm += weight * finite("fm", g.scalar(fm))?;
            report.ssim += weight * finite("ssim", g.scalar(ssim))?;
            report.mse += weight * finite("mse", g.scalar(mse))?;
            report.total_g += weight * finite("total_g", g.scalar(total))?;
            let mut grads = g.backward(total);
            accumulate(&mut acc, self.generator.params.collect_grads(&mut grads, &gp), weight);
        }
        Ok((report, acc.expect("nonempty batch")))
    }

    /// One discriminator update followed by one generator update.
    ///
    /// The returned report holds the values computed inside the step: the
    /// discriminator term before its update and the generator terms after
    /// the discriminator update, before the generator update.
    pub fn train_step(&mut self, coarse: &Tensor, original: &Tensor, lr: f64) -> Result<LossReport> {
        if coarse.n() == 0 {
            return Err(Error::EmptyInput("training batch"));
        }
        if coarse.shape != original.shape {
            return Err(Error::Shape(format!("coarse {:?} vs original {:?}", coarse.shape, original.shape)));
        }
        self.generator.check_input(coarse.shape)?;
        self.bank.check_inputs(coarse.shape, original.shape)?;

        let (adv_d, d_grads) = self.discriminator_pass(coarse, original)?;
        for ((disc, opt), grads) in self.bank.scales.iter_mut().zip(&mut self.optimizer.discriminators).zip(&d_grads) {
            opt.step(&mut disc.params, grads, lr);
        }
        if !self.bank.scales.iter().all(|d| d.params.all_finite()) {
            return Err(Error::NonFinite {
                term: "discriminator parameters".into(),
            });
        }

        let (mut report, g_grads) = self.generator_pass(coarse, original)?;
        report.adv_d = adv_d;
        self.optimizer.generator.step(&mut self.generator.params, &g_grads, lr);
        if !self.generator.params.all_finite() {
            return Err(Error::NonFinite {
                term: "generator parameters".into(),
            });
        }
        self.step += 1;
        Ok(report)
    }

    /// Mean SSIM of coarse and of predicted images against the originals.
    pub fn evaluate(&self, pairs: &[ImagePair]) -> Result<(f64, f64)> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("evaluation pairs"));
        }
        let w = &self.config.loss;
        let (mut sc, mut sp) = (0.0, 0.0);
        for chunk in pairs.chunks(self.config.batch_size) {
            let coarse = stack(&chunk.iter().map(|p| &p.coarse).collect::<Vec<_>>());
            let pred = self.generator.infer(&coarse)?;
            for (i, p) in chunk.iter().enumerate() {
                let o = image_to_tensor(&p.original);
                sc += ssim_mean(&coarse.select(i), &o, w)?;
                sp += ssim_mean(&pred.select(i), &o, w)?;
            }
        }
        let n = pairs.len() as f64;
        Ok((sc / n, sp / n))
    }
}

/// Generator and training configuration from any checkpoint written by
/// [`Trainer::save`]; optimiser state is not required.
pub fn load_model(path: &Path) -> Result<(GeneratorNet, TrainConfig)> {
    let ck = load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ck.meta)
        .map_err(|e| Error::CorruptCheckpoint(format!("training metadata: {e}")))?;
    Ok((ck.generator, meta.train_config))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub fm: f64,
    pub ssim: f64,
    pub mse: f64,
    pub total_g: f64,
    pub wall_time: f64,
}

impl StepRecord {
    pub fn report(&self) -> LossReport {
        LossReport {
            adv_g: self.adv_g,
            adv_d: self.adv_d,
            fm: self.fm,
            ssim: self.ssim,
            mse: self.mse,
            total_g: self.total_g,
        }
    }
}

/// One line of the evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub step: u64,
    pub split: String,
    pub n: usize,
    pub ssim_coarse: f64,
    pub ssim_pred: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub resume_from: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many epochs are complete.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub eval_log: PathBuf,
    pub epochs_completed: usize,
    pub steps: u64,
    pub final_eval: Option<EvalRecord>,
}

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const EVAL_LOG: &str = "eval_log.jsonl";
pub const CONFIG_FILE: &str = "train_config.json";

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
}

/// Read a JSON-lines log.
pub fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Open a log for appending, dropping records from epochs at or after `from_epoch`.
fn open_log(path: &Path, from_epoch: usize) -> Result<BufWriter<fs::File>> {
    let io = |e| Error::io(path, e);
    if from_epoch == 0 || !path.exists() {
        return Ok(BufWriter::new(fs::File::create(path).map_err(io)?));
    }
    let kept: Vec<String> = fs::read_to_string(path)
        .map_err(io)?
        .lines()
        .filter(|l| {
            serde_json::from_str::<serde_json::Value>(l)
                .ok()
                .and_then(|v| v.get("epoch").and_then(|e| e.as_u64()))
                .is_some_and(|e| (e as usize) < from_epoch)
        })
        .map(str::to_string)
        .collect();
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for l in kept {
        writeln!(w, "{l}").map_err(io)?;
    }
    Ok(w)
}

fn write_record<T: Serialize>(w: &mut BufWriter<fs::File>, path: &Path, rec: &T) -> Result<()> {
    let line = serde_json::to_string(rec).expect("record serializes");
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    idx.shuffle(&mut rng);
    idx
}

fn config_differs_beyond_schedule(a: &TrainConfig, b: &TrainConfig) -> bool {
    let norm = |c: &TrainConfig| TrainConfig {
        epochs: 0,
        checkpoint_every: 0,
        eval_count: 0,
        ..c.clone()
    };
    norm(a) != norm(b)
}

/// Train on `train`, evaluating on `held_out` (or on the first training
/// pairs when nothing is held out) after every epoch.
///
/// Writes `train_config.json`, `train_log.jsonl`, `eval_log.jsonl` and
/// `checkpoints/epoch_NNNN.ckpt` under `out_dir`.
pub fn fit(
    train: &[ImagePair],
    held_out: &[ImagePair],
    cfg: &TrainConfig,
    out_dir: &Path,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Missing("training pairs".into()));
    }
    let (th, tw) = cfg.codec.target_size;
    for p in train.iter().chain(held_out) {
        if p.coarse.shape() != (th, tw) || p.original.shape() != (th, tw) {
            return Err(Error::Shape(format!(
                "clip {} is not encoded at {th}x{tw}",
                p.clip_id
            )));
        }
    }
    fs::create_dir_all(out_dir.join("checkpoints")).map_err(|e| Error::io(out_dir, e))?;

    let (mut trainer, wall_offset) = match &opts.resume_from {
        Some(path) => {
            let (mut t, wall) = Trainer::load(path)?;
            if config_differs_beyond_schedule(&t.config, cfg) {
                return Err(Error::InvalidParam(
                    "resume configuration differs from the checkpoint's beyond epochs/checkpoint_every/eval_count".into(),
                ));
            }
            t.config = cfg.clone();
            (t, wall)
        }
        None => (Trainer::new(cfg.clone())?, 0.0),
    };
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, serde_json::to_string_pretty(cfg).expect("config serializes"))
        .map_err(|e| Error::io(&config_path, e))?;

    let train_log = out_dir.join(TRAIN_LOG);
    let eval_log = out_dir.join(EVAL_LOG);
    let mut tlog = open_log(&train_log, trainer.epoch)?;
    let mut elog = open_log(&eval_log, trainer.epoch)?;

    let (eval_set, eval_split) = if held_out.is_empty() {
        (&train[..cfg.eval_count.min(train.len())], "train")
    } else {
        (&held_out[..cfg.eval_count.min(held_out.len())], "test")
    };

    let start = Instant::now();
    let stop = opts.stop_after_epoch.unwrap_or(cfg.epochs).min(cfg.epochs);
    let mut last_ckpt = None;
    let mut final_eval = None;
    while trainer.epoch < stop {
        let epoch = trainer.epoch;
        let lr = lr_at(epoch, cfg)?;
        let order = epoch_order(train.len(), cfg.seed, epoch);
        for batch in order.chunks(cfg.batch_size) {
            let coarse = stack(&batch.iter().map(|&i| &train[i].coarse).collect::<Vec<_>>());
            let original = stack(&batch.iter().map(|&i| &train[i].original).collect::<Vec<_>>());
            let r = trainer.train_step(&coarse, &original, lr)?;
            let rec = StepRecord {
                epoch,
                step: trainer.step,
                lr,
                adv_g: r.adv_g,
                adv_d: r.adv_d,
                fm: r.fm,
                ssim: r.ssim,
                mse: r.mse,
                total_g: r.total_g,
                wall_time: wall_offset + start.elapsed().as_secs_f64(),
            };
            write_record(&mut tlog, &train_log, &rec)?;
        }
        trainer.epoch += 1;

        if !eval_set.is_empty() {
            let (ssim_coarse, ssim_pred) = trainer.evaluate(eval_set)?;
            let rec = EvalRecord {
                epoch,
                step: trainer.step,
                split: eval_split.into(),
                n: eval_set.len(),
                ssim_coarse,
                ssim_pred,
            };
            write_record(&mut elog, &eval_log, &rec)?;
            final_eval = Some(rec);
        }
        tlog.flush().map_err(|e| Error::io(&train_log, e))?;
        elog.flush().map_err(|e| Error::io(&eval_log, e))?;

        if trainer.epoch % cfg.checkpoint_every == 0 || trainer.epoch == stop {
            let path = checkpoint_path(out_dir, trainer.epoch);
            trainer.save(&path, wall_offset + start.elapsed().as_secs_f64())?;
            last_ckpt = Some(path);
        }
    }

    let final_checkpoint = match last_ckpt {
        Some(p) => p,
        None => {
            // nothing left to train: make sure a checkpoint for the current state exists
            let path = checkpoint_path(out_dir, trainer.epoch);
            if !path.exists() {
                trainer.save(&path, wall_offset)?;
            }
            path
        }
    };
    Ok(FitOutcome {
        final_checkpoint,
        train_log,
        eval_log,
        epochs_completed: trainer.epoch,
        steps: trainer.step,
        final_eval,
    })
}

/// [`fit`] on the pair records of a manifest: the train split trains, the
/// test split supplies the held-out evaluation images.
pub fn fit_corpus(
    manifest: &CorpusManifest,
    pairs_dir: &Path,
    cfg: &TrainConfig,
    out_dir: &Path,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let train = load_pairs(manifest, pairs_dir, Split::Train)?;
    let test = load_pairs(manifest, pairs_dir, Split::Test)?;
    for p in train.iter().chain(&test) {
        let fp = p.original.params.fingerprint();
        if fp != manifest.created_with {
            return Err(Error::InvalidParam(format!(
                "pair {} was extracted with parameters {fp}, manifest records {}",
                p.clip_id, manifest.created_with
            )));
        }
    }
    let train = encode_pairs(&train, &cfg.codec)?;
    let test = encode_pairs(&test, &cfg.codec)?;
    fit(&train, &test, cfg, out_dir, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{DspParams, MelSpectrogram};
    use crate::matrix::Matrix;

    #[test]
    fn schedule_matches_defaults() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c).unwrap(), 2e-4);
        assert_eq!(lr_at(39, &c).unwrap(), 2e-4);
        assert_eq!(lr_at(40, &c).unwrap(), 2e-4);
        assert!((lr_at(70, &c).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(lr_at(100, &c).unwrap(), 0.0);
        assert!(lr_at(101, &c).is_err());
    }

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 3,
            scales: 2,
            eval_count: 2,
            codec: ImageCodecParams {
                target_size: (16, 16),
                ..Default::default()
            },
            generator: GeneratorConfig {
                base_width: 4,
                depth: 2,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                base_width: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub(crate) fn toy_pairs(n: usize) -> Vec<ImagePair> {
        let p = DspParams {
            n_mels: 12,
            ..DspParams::for_rate(8000)
        };
        let codec = tiny_config().codec;
        (0..n)
            .map(|i| {
                let f = 0.3 + 0.1 * i as f64;
                let orig = Matrix::from_fn(12, 20, |r, c| ((r as f64 * f).sin() * (c as f64 * 0.4).cos()) * 3.0 - 5.0);
                let coarse = orig.map(|v| 0.7 * v - 1.5);
                let pe = PairedExample::new(
                    format!("p{i}"),
                    MelSpectrogram::new(coarse, p.clone()).unwrap(),
                    MelSpectrogram::new(orig, p.clone()).unwrap(),
                )
                .unwrap();
                encode_pairs(&[pe], &codec).unwrap().pop().unwrap()
            })
            .collect()
    }

    #[test]
    fn micro_batches_match_full_batch() {
        let pairs = toy_pairs(4);
        let coarse = stack(&pairs.iter().map(|p| &p.coarse).collect::<Vec<_>>());
        let orig = stack(&pairs.iter().map(|p| &p.original).collect::<Vec<_>>());
        let mut a = Trainer::new(TrainConfig {
            batch_size: 4,
            ..tiny_config()
        })
        .unwrap();
        let mut b = Trainer::new(TrainConfig {
            batch_size: 4,
            micro_batch: Some(1),
            ..tiny_config()
        })
        .unwrap();
        let ra = a.train_step(&coarse, &orig, 1e-3).unwrap();
        let rb = b.train_step(&coarse, &orig, 1e-3).unwrap();
        for ((_, x), (_, y)) in ra.terms().iter().zip(rb.terms().iter()) {
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "{ra:?} vs {rb:?}");
        }
    }

    #[test]
    fn step_rejects_bad_batches() {
        let mut t = Trainer::new(tiny_config()).unwrap();
        let a = Tensor::zeros([1, 1, 16, 16]);
        assert!(t.train_step(&a, &Tensor::zeros([1, 1, 16, 8]), 1e-3).is_err());
        assert!(t.train_step(&Tensor::zeros([0, 1, 16, 16]), &Tensor::zeros([0, 1, 16, 16]), 1e-3).is_err());
    }

    #[test]
    fn nan_input_names_term() {
        let mut t = Trainer::new(tiny_config()).unwrap();
        let mut x = Tensor::zeros([1, 1, 16, 16]);
        x.data[3] = f64::NAN;
        match t.train_step(&x, &Tensor::zeros([1, 1, 16, 16]), 1e-3) {
            Err(Error::NonFinite { term }) => assert!(!term.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_logs_every_step_and_checkpoints() {
        let pairs = toy_pairs(3);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_every: 2,
            ..tiny_config()
        };
        let out = fit(&pairs, &[], &cfg, dir.path(), &FitOptions::default()).unwrap();
        let log: Vec<StepRecord> = read_log(&out.train_log).unwrap();
        assert_eq!(log.len(), 2 * 3);
        assert!(log.iter().all(|r| r.lr == lr_at(r.epoch, &cfg).unwrap()));
        let ev: Vec<EvalRecord> = read_log(&out.eval_log).unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[0].split, "train");
        assert!(checkpoint_path(dir.path(), 2).is_file());
        assert_eq!(out.final_checkpoint, checkpoint_path(dir.path(), 3));
        assert!(dir.path().join(CONFIG_FILE).is_file());
    }
}
