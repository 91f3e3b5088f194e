//! Joint optimization of the segmentation network and style classifier,
//! with validation-based checkpoint selection, resume support, and the two
//! baselines (relaxed winner-take-all, single-mask training).
//!
//! The sampling unit is the (image, mask) pair: a sample with K masks
//! appears K times per epoch, each time with its own ground truth. Batch
//! items are processed independently (in parallel under the `parallel`
//! feature) and their gradients reduced in index order, so a run is a pure
//! function of its seed.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{AnnotatedSample, Corpus, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::{self, LossConfig, SelectionRule};
use crate::models::nn::Adam;
use crate::models::{ClsModelConfig, SegModel, SegModelConfig, StyleClassifier};
use crate::rng::Rng;
use crate::util::{fmt_f64, fnv1a64};

/// Which objective drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// M-headed model + style classifier under l1 + l2 + l3.
    StyleSeg,
    /// M-headed model under the relaxed winner-take-all Dice loss.
    Mhp,
    /// Single-mask Dice training (M = 1).
    Naive,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::StyleSeg => "styleseg",
            TrainMode::Mhp => "mhp",
            TrainMode::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub m: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weights of (l1, l2, l3).
    pub loss_weights: [f64; 3],
    pub mhp_eps: f64,
    pub smooth: f64,
    pub selection: SelectionRule,
    /// Epochs of generic warm-up before the mode objective takes over:
    /// every channel trains on the same mean Dice loss and the classifier
    /// stays untouched. With randomly initialized trunks this is the stand-in
    /// for starting from a pretrained backbone; without it, one head wins the
    /// early winner-take-all race on generic skill alone and the losing heads
    /// starve before styles can form.
    #[serde(default)]
    pub warmup_epochs: usize,
    pub resolution: usize,
    pub base_width: usize,
    pub n_stages: usize,
    pub cls_base_width: usize,
    pub cls_n_stages: usize,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("optim.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optim.batch_size", "must be at least 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("optim.learning_rate", "must be positive"));
        }
        match self.mode {
            TrainMode::Naive => {
                if self.m != 1 {
                    return Err(Error::config(
                        "model.m",
                        format!("mode=naive forces m=1, got {}", self.m),
                    ));
                }
            }
            TrainMode::StyleSeg | TrainMode::Mhp => {
                if self.m < 2 {
                    return Err(Error::config(
                        "model.m",
                        format!("mode={} requires m>=2, got {}", self.mode.as_str(), self.m),
                    ));
                }
            }
        }
        if !(0.0..1.0).contains(&self.mhp_eps) {
            return Err(Error::config("loss.mhp_eps", "must be in [0,1)"));
        }
        if self.smooth < 0.0 {
            return Err(Error::config("loss.smooth", "must be non-negative"));
        }
        self.seg_config().validate()?;
        if self.mode == TrainMode::StyleSeg {
            self.cls_config().validate()?;
        }
        Ok(())
    }

    pub fn seg_config(&self) -> SegModelConfig {
        SegModelConfig {
            m: self.m,
            base_width: self.base_width,
            n_stages: self.n_stages,
            resolution: self.resolution,
        }
    }

    pub fn cls_config(&self) -> ClsModelConfig {
        ClsModelConfig {
            m: self.m,
            base_width: self.cls_base_width,
            n_stages: self.cls_n_stages,
            resolution: self.resolution,
        }
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            smooth: self.smooth,
            weights: self.loss_weights,
            selection: self.selection,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_l1: f64,
    pub train_l2: f64,
    pub train_l3: f64,
    pub train_total: f64,
    pub val_total: f64,
    /// Mean entropy (nats) of the classifier distribution over the
    /// validation pairs; zero for modes without a classifier.
    pub val_p_entropy: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub wall_time_secs: f64,
    pub parallel: bool,
    pub threads: usize,
}

impl RunLog {
    /// Rebuilds the loss history from a runlog.csv (entropy and timing
    /// columns are not part of the file schema and come back as zero).
    pub fn parse_csv(text: &str) -> Result<RunLog> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("runlog.csv", "empty file"))?;
        if header != "epoch,l1,l2,l3,total,val_total" {
            return Err(Error::format("runlog.csv", "unexpected header"));
        }
        let mut log = RunLog::default();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(Error::format(
                    "runlog.csv",
                    format!("line {}: expected 6 fields", i + 2),
                ));
            }
            let bad = || Error::format("runlog.csv", format!("line {}: bad number", i + 2));
            log.epochs.push(EpochStats {
                epoch: cols[0].parse().map_err(|_| bad())?,
                train_l1: cols[1].parse().map_err(|_| bad())?,
                train_l2: cols[2].parse().map_err(|_| bad())?,
                train_l3: cols[3].parse().map_err(|_| bad())?,
                train_total: cols[4].parse().map_err(|_| bad())?,
                val_total: cols[5].parse().map_err(|_| bad())?,
                val_p_entropy: 0.0,
            });
        }
        log.best_epoch = BestTracker::from_log(&log).epoch;
        Ok(log)
    }

    /// runlog.csv: epoch,l1,l2,l3,total,val_total
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l1,l2,l3,total,val_total\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch,
                fmt_f64(e.train_l1),
                fmt_f64(e.train_l2),
                fmt_f64(e.train_l3),
                fmt_f64(e.train_total),
                fmt_f64(e.val_total)
            ));
        }
        out
    }
}

/// Trained state: both models plus everything needed to resume.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seg: SegModel,
    pub cls: Option<StyleClassifier>,
    pub epoch: usize,
    pub val_total: f64,
    seg_adam: Adam,
    cls_adam: Option<Adam>,
}

impl Checkpoint {
    /// Adopts the run-level knobs of `requested` (epoch target, learning
    /// rate, checkpoint directory) after verifying structural compatibility.
    pub fn prepare_resume(&mut self, requested: &TrainConfig) -> Result<()> {
        check_resume_compat(self, requested)?;
        self.config.epochs = requested.epochs;
        self.config.checkpoint_dir = requested.checkpoint_dir.clone();
        self.config.learning_rate = requested.learning_rate;
        self.seg_adam.lr = requested.learning_rate;
        if let Some(adam) = self.cls_adam.as_mut() {
            adam.lr = requested.learning_rate;
        }
        Ok(())
    }
}

/// One (sample index, mask index) training unit.
type Pair = (usize, usize);

fn split_pairs(samples: &[&AnnotatedSample]) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for k in 0..s.mask_count() {
            pairs.push((i, k));
        }
    }
    pairs
}

/// Per-pair forward/backward output.
struct PairGrad {
    seg: Vec<f32>,
    cls: Option<Vec<f32>>,
    l1: f64,
    l2: f64,
    l3: f64,
    total: f64,
}

fn pair_grad(
    seg: &SegModel,
    cls: Option<&StyleClassifier>,
    sample: &AnnotatedSample,
    mask_idx: usize,
    cfg: &TrainConfig,
    warming_up: bool,
) -> Result<PairGrad> {
    let image = sample.image.pixels();
    let gt = &sample.masks[mask_idx];
    let (stack, seg_cache) = seg.forward_cached(image)?;
    if warming_up && cfg.m > 1 {
        // Mean per-channel Dice loss == maximally relaxed winner-take-all.
        let eps = (cfg.m - 1) as f64 / cfg.m as f64;
        let (loss, _, d_preds) = losses::grad_mhp(gt, &stack, eps, cfg.smooth)?;
        let d_preds: Vec<f32> = d_preds.iter().map(|&v| v as f32).collect();
        let seg_grads = seg.backward(&seg_cache, &d_preds);
        return Ok(PairGrad {
            seg: seg_grads,
            cls: None,
            l1: loss,
            l2: 0.0,
            l3: 0.0,
            total: loss,
        });
    }
    match cfg.mode {
        TrainMode::StyleSeg => {
            let cls = cls.expect("styleseg mode carries a classifier");
            let (p, cls_cache) = cls.forward_cached(image, gt)?;
            let tg = losses::grad_total(gt, &stack, &p, &cfg.loss_config())?;
            let d_preds: Vec<f32> = tg.d_preds.iter().map(|&v| v as f32).collect();
            let seg_grads = seg.backward(&seg_cache, &d_preds);
            let cls_grads = cls.backward(&cls_cache, &tg.d_p);
            Ok(PairGrad {
                seg: seg_grads,
                cls: Some(cls_grads),
                l1: tg.breakdown.l1,
                l2: tg.breakdown.l2,
                l3: tg.breakdown.l3,
                total: tg.breakdown.total,
            })
        }
        TrainMode::Mhp => {
            let (loss, _, d_preds) = losses::grad_mhp(gt, &stack, cfg.mhp_eps, cfg.smooth)?;
            let d_preds: Vec<f32> = d_preds.iter().map(|&v| v as f32).collect();
            let seg_grads = seg.backward(&seg_cache, &d_preds);
            Ok(PairGrad {
                seg: seg_grads,
                cls: None,
                l1: loss,
                l2: 0.0,
                l3: 0.0,
                total: loss,
            })
        }
        TrainMode::Naive => {
            let (loss, _, d_preds) = losses::grad_l1(gt, &stack, cfg.smooth)?;
            let d_preds: Vec<f32> = d_preds.iter().map(|&v| v as f32).collect();
            let seg_grads = seg.backward(&seg_cache, &d_preds);
            Ok(PairGrad {
                seg: seg_grads,
                cls: None,
                l1: loss,
                l2: 0.0,
                l3: 0.0,
                total: loss,
            })
        }
    }
}

/// Validation loss (and classifier entropy) without any parameter updates.
fn validation_pass(
    seg: &SegModel,
    cls: Option<&StyleClassifier>,
    samples: &[&AnnotatedSample],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let pairs = split_pairs(samples);
    let results = exec::map_slice(&pairs, |&(i, k)| -> Result<(f64, f64)> {
        let sample = samples[i];
        let gt = &sample.masks[k];
        let stack = seg.forward(sample.image.pixels())?;
        match cfg.mode {
            TrainMode::StyleSeg => {
                let p = cls
                    .expect("styleseg mode carries a classifier")
                    .forward(sample.image.pixels(), gt)?;
                let bd = losses::total_loss(gt, &stack, &p, &cfg.loss_config())?;
                Ok((bd.total, p.entropy()))
            }
            TrainMode::Mhp => Ok((losses::mhp_loss(gt, &stack, cfg.mhp_eps, cfg.smooth)?, 0.0)),
            TrainMode::Naive => Ok((losses::loss_l1(gt, &stack, cfg.smooth)?, 0.0)),
        }
    });
    let mut total = 0.0;
    let mut entropy = 0.0;
    let n = results.len();
    for r in results {
        let (t, e) = r?;
        total += t;
        entropy += e;
    }
    Ok((total / n as f64, entropy / n as f64))
}

/// Trains from scratch. See [`resume`] for continuing a checkpoint.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<(Checkpoint, RunLog)> {
    cfg.validate()?;
    let seg = SegModel::init(cfg.seg_config(), Rng::derived(cfg.seed, 1).next_u64())?;
    let cls = if cfg.mode == TrainMode::StyleSeg {
        Some(StyleClassifier::init(
            cfg.cls_config(),
            Rng::derived(cfg.seed, 2).next_u64(),
        )?)
    } else {
        None
    };
    let seg_adam = Adam::new(cfg.learning_rate, SegModel::param_count(&cfg.seg_config()));
    let cls_adam = cls
        .as_ref()
        .map(|_| Adam::new(cfg.learning_rate, StyleClassifier::param_count(&cfg.cls_config())));
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        seg,
        cls,
        epoch: 0,
        val_total: f64::INFINITY,
        seg_adam,
        cls_adam,
    };
    run_epochs(corpus, checkpoint, RunLog::default())
}

/// Continues a checkpoint to `checkpoint.config.epochs`. The optimizer state
/// and epoch counter resume where they stopped; with the same seed the
/// trajectory replays an uninterrupted run.
pub fn resume(
    corpus: &Corpus,
    checkpoint: Checkpoint,
    log: RunLog,
) -> Result<(Checkpoint, RunLog)> {
    run_epochs(corpus, checkpoint, log)
}

fn run_epochs(
    corpus: &Corpus,
    mut state: Checkpoint,
    mut log: RunLog,
) -> Result<(Checkpoint, RunLog)> {
    let cfg = state.config.clone();
    let started = std::time::Instant::now();

    let train_samples = corpus.split_samples(Split::Train);
    let val_samples = corpus.split_samples(Split::Val);
    if train_samples.is_empty() {
        return Err(Error::config("corpus", "train split is empty"));
    }
    if val_samples.is_empty() {
        return Err(Error::config("corpus", "val split is empty"));
    }

    let pairs = split_pairs(&train_samples);
    let mut best = BestTracker::from_log(&log);

    for epoch in state.epoch + 1..=cfg.epochs {
        // Epoch order is a pure function of (seed, epoch) so resumed runs
        // replay the same batches.
        let mut order = pairs.clone();
        Rng::derived(cfg.seed, 1000 + epoch as u64).shuffle(&mut order);

        let warming_up = epoch <= cfg.warmup_epochs;
        let mut sums = [0.0f64; 4];
        let mut n_pairs = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let grads = exec::map_slice(batch, |&(i, k)| {
                pair_grad(
                    &state.seg,
                    state.cls.as_ref(),
                    train_samples[i],
                    k,
                    &cfg,
                    warming_up,
                )
            });

            // Ordered reduction: identical results at any thread count.
            let mut seg_acc = vec![0.0f32; state.seg.params_flat().len()];
            let mut cls_acc = state
                .cls
                .as_ref()
                .map(|c| vec![0.0f32; c.params_flat().len()]);
            let scale = 1.0 / batch.len() as f32;
            for g in grads {
                let g = g?;
                if !g.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        term: format!("l1={} l2={} l3={}", g.l1, g.l2, g.l3),
                    });
                }
                for (a, v) in seg_acc.iter_mut().zip(&g.seg) {
                    *a += scale * v;
                }
                if let (Some(acc), Some(cg)) = (cls_acc.as_mut(), g.cls.as_ref()) {
                    for (a, v) in acc.iter_mut().zip(cg) {
                        *a += scale * v;
                    }
                }
                sums[0] += g.l1;
                sums[1] += g.l2;
                sums[2] += g.l3;
                sums[3] += g.total;
                n_pairs += 1;
            }

            let mut seg_params = state.seg.params_flat();
            state.seg_adam.step(&mut seg_params, &seg_acc);
            state.seg.set_params_flat(&seg_params)?;
            if !warming_up {
                if let (Some(cls), Some(adam), Some(acc)) =
                    (state.cls.as_mut(), state.cls_adam.as_mut(), cls_acc.as_ref())
                {
                    let mut cls_params = cls.params_flat();
                    adam.step(&mut cls_params, acc);
                    cls.set_params_flat(&cls_params)?;
                }
            }
        }

        let (val_total, val_p_entropy) =
            validation_pass(&state.seg, state.cls.as_ref(), &val_samples, &cfg)?;
        let n = n_pairs as f64;
        let stats = EpochStats {
            epoch,
            train_l1: sums[0] / n,
            train_l2: sums[1] / n,
            train_l3: sums[2] / n,
            train_total: sums[3] / n,
            val_total,
            val_p_entropy,
        };
        best.observe(&stats);
        log.epochs.push(stats);
        state.epoch = epoch;
        state.val_total = val_total;

        if !cfg.checkpoint_dir.as_os_str().is_empty() {
            save_checkpoint(&state, &cfg.checkpoint_dir.join(format!("epoch_{epoch}")))?;
        }
    }

    log.best_epoch = best.epoch;
    log.wall_time_secs += started.elapsed().as_secs_f64();
    log.parallel = exec::parallel_enabled();
    log.threads = exec::thread_count();

    if !cfg.checkpoint_dir.as_os_str().is_empty() {
        std::fs::write(
            cfg.checkpoint_dir.join("best.txt"),
            format!("{}\n", best.epoch),
        )
        .map_err(|e| Error::io("writing best.txt", e))?;
        std::fs::write(cfg.checkpoint_dir.join("runlog.csv"), log.to_csv())
            .map_err(|e| Error::io("writing runlog.csv", e))?;
    }
    Ok((state, log))
}

struct BestTracker {
    epoch: usize,
    val: f64,
}

impl BestTracker {
    fn from_log(log: &RunLog) -> Self {
        let mut t = BestTracker {
            epoch: 0,
            val: f64::INFINITY,
        };
        for e in &log.epochs {
            t.observe(e);
        }
        t
    }

    fn observe(&mut self, stats: &EpochStats) {
        if stats.val_total < self.val {
            self.val = stats.val_total;
            self.epoch = stats.epoch;
        }
    }
}

/// Highest `epoch_<n>` subdirectory of a checkpoint directory, if any.
pub fn latest_epoch_dir(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(format!("reading {}", dir.display()), e)),
    };
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        let name = entry.file_name();
        let Some(n) = name
            .to_str()
            .and_then(|s| s.strip_prefix("epoch_"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().map(|(b, _)| n > *b).unwrap_or(true) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best)
}

/// Loads the epoch named by `best.txt` under a checkpoint directory.
pub fn load_best(dir: &Path) -> Result<Checkpoint> {
    let best_path = dir.join("best.txt");
    let text = std::fs::read_to_string(&best_path)
        .map_err(|e| Error::io(format!("reading {}", best_path.display()), e))?;
    let epoch: usize = text
        .trim()
        .parse()
        .map_err(|_| Error::format(best_path.display().to_string(), "expected an epoch number"))?;
    load_checkpoint(&dir.join(format!("epoch_{epoch}")))
}

// --- checkpoint container -------------------------------------------------
//
// <dir>/model.bin        magic, version, JSON header, f32 LE blobs
// <dir>/checkpoint.json  config echo + metrics, for cross-language inspection

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    epoch: usize,
    val_total: f64,
    adam_t_seg: u64,
    adam_t_cls: u64,
    blob_lens: Vec<usize>,
}

#[derive(serde::Serialize)]
struct SidecarJson<'a> {
    config: &'a TrainConfig,
    epoch: usize,
    val_total: f64,
    seg_param_count: usize,
    cls_param_count: usize,
    fusion_resize: &'static str,
}

pub fn save_checkpoint(state: &Checkpoint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let mut blobs: Vec<Vec<f32>> = vec![
        state.seg.params_flat(),
        state.seg_adam.m.clone(),
        state.seg_adam.v.clone(),
    ];
    if let (Some(cls), Some(adam)) = (&state.cls, &state.cls_adam) {
        blobs.push(cls.params_flat());
        blobs.push(adam.m.clone());
        blobs.push(adam.v.clone());
    }

    let header = CheckpointHeader {
        config: state.config.clone(),
        epoch: state.epoch,
        val_total: state.val_total,
        adam_t_seg: state.seg_adam.t,
        adam_t_cls: state.cls_adam.as_ref().map(|a| a.t).unwrap_or(0),
        blob_lens: blobs.iter().map(|b| b.len()).collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::format("checkpoint header", e.to_string()))?;

    let path = dir.join("model.bin");
    let file = std::fs::File::create(&path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    write_all(&mut w, MAGIC, &path)?;
    write_all(&mut w, &VERSION.to_le_bytes(), &path)?;
    write_all(&mut w, &(header_json.len() as u64).to_le_bytes(), &path)?;
    write_all(&mut w, &header_json, &path)?;
    for blob in &blobs {
        for v in blob {
            write_all(&mut w, &v.to_le_bytes(), &path)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    let sidecar = SidecarJson {
        config: &state.config,
        epoch: state.epoch,
        val_total: state.val_total,
        seg_param_count: SegModel::param_count(&state.config.seg_config()),
        cls_param_count: if state.cls.is_some() {
            StyleClassifier::param_count(&state.config.cls_config())
        } else {
            0
        },
        fusion_resize: "bilinear",
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format("checkpoint sidecar", e.to_string()))?;
    std::fs::write(dir.join("checkpoint.json"), json)
        .map_err(|e| Error::io("writing checkpoint.json", e))?;
    Ok(())
}

fn write_all(w: &mut impl std::io::Write, bytes: &[u8], path: &Path) -> Result<()> {
    w.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("model.bin");
    let bytes = std::fs::read(&path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let fail = |msg: String| Error::format(path.display().to_string(), msg);
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(fail("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| fail(format!("bad header: {e}")))?;

    let mut off = 16 + header_len;
    let mut blobs: Vec<Vec<f32>> = Vec::with_capacity(header.blob_lens.len());
    for &len in &header.blob_lens {
        let nbytes = len * 4;
        if bytes.len() < off + nbytes {
            return Err(fail("truncated parameter blob".into()));
        }
        let blob = bytes[off..off + nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blobs.push(blob);
        off += nbytes;
    }

    let cfg = header.config;
    let has_cls = cfg.mode == TrainMode::StyleSeg;
    let expected_blobs = if has_cls { 6 } else { 3 };
    if blobs.len() != expected_blobs {
        return Err(fail(format!(
            "expected {expected_blobs} blobs, found {}",
            blobs.len()
        )));
    }

    let mut seg = SegModel::init(cfg.seg_config(), 0)?;
    seg.set_params_flat(&blobs[0])?;
    let mut seg_adam = Adam::new(cfg.learning_rate, blobs[0].len());
    seg_adam.t = header.adam_t_seg;
    seg_adam.m = blobs[1].clone();
    seg_adam.v = blobs[2].clone();

    let (cls, cls_adam) = if has_cls {
        let mut cls = StyleClassifier::init(cfg.cls_config(), 0)?;
        cls.set_params_flat(&blobs[3])?;
        let mut adam = Adam::new(cfg.learning_rate, blobs[3].len());
        adam.t = header.adam_t_cls;
        adam.m = blobs[4].clone();
        adam.v = blobs[5].clone();
        (Some(cls), Some(adam))
    } else {
        (None, None)
    };

    Ok(Checkpoint {
        config: cfg,
        seg,
        cls,
        epoch: header.epoch,
        val_total: header.val_total,
        seg_adam,
        cls_adam,
    })
}

/// Checks that a checkpoint can continue under `requested`, listing every
/// structural mismatch. Differences in learning rate are allowed with a
/// warning (the optimizer keeps its momentum history).
pub fn check_resume_compat(checkpoint: &Checkpoint, requested: &TrainConfig) -> Result<()> {
    let old = &checkpoint.config;
    let mut fields = Vec::new();
    if old.mode != requested.mode {
        fields.push("mode".to_string());
    }
    if old.m != requested.m {
        fields.push("m".to_string());
    }
    if old.resolution != requested.resolution {
        fields.push("resolution".to_string());
    }
    if old.base_width != requested.base_width || old.n_stages != requested.n_stages {
        fields.push("model shape".to_string());
    }
    if old.cls_base_width != requested.cls_base_width || old.cls_n_stages != requested.cls_n_stages
    {
        fields.push("classifier shape".to_string());
    }
    if !fields.is_empty() {
        return Err(Error::IncompatibleCheckpoint { fields });
    }
    if (old.learning_rate - requested.learning_rate).abs() > f64::EPSILON {
        eprintln!(
            "warning: resuming with learning_rate {} (checkpoint used {})",
            requested.learning_rate, old.learning_rate
        );
    }
    Ok(())
}

/// FNV hash of the segmentation parameters; used to verify that validation
/// and evaluation never mutate the model.
pub fn param_hash(seg: &SegModel) -> u64 {
    let flat = seg.params_flat();
    let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
    fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_annotated_sample, StyleParams, SynthConfig};

    fn tiny_synth_cfg(n: usize, resolution: usize) -> SynthConfig {
        SynthConfig {
            n_images: n,
            resolution,
            master_seed: 42,
            styles: vec![
                StyleParams {
                    margin: 3,
                    ..StyleParams::identity()
                },
                StyleParams {
                    margin: -3,
                    ..StyleParams::identity()
                },
            ],
            coverage_p: 1.0,
            per_style_coverage: None,
            split_fractions: [0.5, 0.25, 0.25],
            noise_sigma: 0.05,
        }
    }

    /// In-memory corpus without touching disk.
    pub(crate) fn memory_corpus(n: usize, resolution: usize) -> Corpus {
        let cfg = tiny_synth_cfg(n, resolution);
        let samples: Vec<_> = (0..n).map(|i| generate_annotated_sample(&cfg, i)).collect();
        Corpus {
            samples,
            manifest: Default::default(),
            warnings: Vec::new(),
            root: PathBuf::new(),
        }
    }

    pub(crate) fn tiny_train_cfg(mode: TrainMode, m: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            mode,
            m,
            epochs,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 7,
            loss_weights: [1.0, 1.0, 1.0],
            mhp_eps: 0.05,
            smooth: 1.0,
            selection: SelectionRule::Soft,
            warmup_epochs: 0,
            resolution: 32,
            base_width: 4,
            n_stages: 3,
            cls_base_width: 4,
            cls_n_stages: 2,
            checkpoint_dir: PathBuf::new(),
        }
    }

    #[test]
    fn mode_m_rules_enforced() {
        let mut cfg = tiny_train_cfg(TrainMode::Naive, 3, 1);
        assert!(cfg.validate().is_err());
        cfg.m = 1;
        assert!(cfg.validate().is_ok());
        let mut cfg = tiny_train_cfg(TrainMode::StyleSeg, 1, 1);
        assert!(cfg.validate().is_err());
        cfg.m = 2;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn naive_training_yields_single_channel_model() {
        let corpus = memory_corpus(8, 32);
        let cfg = tiny_train_cfg(TrainMode::Naive, 1, 1);
        let (ckpt, log) = train(&corpus, &cfg).unwrap();
        assert_eq!(ckpt.seg.cfg.m, 1);
        assert!(ckpt.cls.is_none());
        assert_eq!(log.epochs.len(), 1);
        let out = ckpt.seg.forward(corpus.samples[0].image.pixels()).unwrap();
        assert_eq!(out.style_count(), 1);
    }

    #[test]
    fn same_seed_same_runlog() {
        let corpus = memory_corpus(8, 32);
        let cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 2);
        let (_, log_a) = train(&corpus, &cfg).unwrap();
        let (_, log_b) = train(&corpus, &cfg).unwrap();
        assert_eq!(log_a.epochs, log_b.epochs);
    }

    #[test]
    fn validation_does_not_mutate_parameters() {
        let corpus = memory_corpus(8, 32);
        let cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 1);
        let (ckpt, _) = train(&corpus, &cfg).unwrap();
        let before = param_hash(&ckpt.seg);
        let val = corpus.split_samples(Split::Val);
        validation_pass(&ckpt.seg, ckpt.cls.as_ref(), &val, &cfg).unwrap();
        assert_eq!(param_hash(&ckpt.seg), before);
    }

    #[test]
    fn optimizer_step_changes_parameters() {
        let corpus = memory_corpus(4, 32);
        let cfg = tiny_train_cfg(TrainMode::Naive, 1, 1);
        let seg = SegModel::init(cfg.seg_config(), Rng::derived(cfg.seed, 1).next_u64()).unwrap();
        let before = seg.params_flat();
        let (ckpt, _) = train(&corpus, &cfg).unwrap();
        assert_ne!(ckpt.seg.params_flat(), before);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let corpus = memory_corpus(6, 32);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 2);
        cfg.checkpoint_dir = dir.path().to_path_buf();
        let (ckpt, _) = train(&corpus, &cfg).unwrap();
        let loaded = load_checkpoint(&dir.path().join("epoch_2")).unwrap();
        assert_eq!(loaded.epoch, 2);
        assert_eq!(loaded.seg.params_flat(), ckpt.seg.params_flat());
        assert_eq!(
            loaded.cls.as_ref().unwrap().params_flat(),
            ckpt.cls.as_ref().unwrap().params_flat()
        );
        assert_eq!(loaded.seg_adam.m, ckpt.seg_adam.m);
        assert_eq!(loaded.seg_adam.t, ckpt.seg_adam.t);
        assert!(dir.path().join("epoch_2/checkpoint.json").exists());
        assert!(dir.path().join("best.txt").exists());
        assert!(dir.path().join("runlog.csv").exists());

        let best = load_best(dir.path()).unwrap();
        assert!(best.epoch >= 1 && best.epoch <= 2);
    }

    #[test]
    fn resume_replays_straight_run() {
        let corpus = memory_corpus(8, 32);
        let cfg4 = tiny_train_cfg(TrainMode::StyleSeg, 2, 4);
        let (straight, log4) = train(&corpus, &cfg4).unwrap();

        let cfg2 = TrainConfig {
            epochs: 2,
            ..cfg4.clone()
        };
        let (half, log2) = train(&corpus, &cfg2).unwrap();
        let mut resumed_state = half;
        resumed_state.config.epochs = 4;
        let (resumed, log_resumed) = resume(&corpus, resumed_state, log2).unwrap();

        assert_eq!(resumed.seg.params_flat(), straight.seg.params_flat());
        assert_eq!(log_resumed.epochs.len(), 4);
        for (a, b) in log_resumed.epochs.iter().zip(&log4.epochs) {
            assert!((a.val_total - b.val_total).abs() < 1e-5);
        }
    }

    #[test]
    fn resume_rejects_mismatched_m() {
        let corpus = memory_corpus(6, 32);
        let cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 1);
        let (ckpt, _) = train(&corpus, &cfg).unwrap();
        let requested = TrainConfig { m: 3, ..cfg };
        let err = check_resume_compat(&ckpt, &requested).unwrap_err();
        assert!(err.to_string().contains('m'), "{err}");
    }

    #[test]
    fn resume_allows_new_learning_rate() {
        let corpus = memory_corpus(6, 32);
        let cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 1);
        let (ckpt, _) = train(&corpus, &cfg).unwrap();
        let requested = TrainConfig {
            learning_rate: 5e-4,
            ..cfg
        };
        assert!(check_resume_compat(&ckpt, &requested).is_ok());
    }

    #[test]
    fn empty_split_is_config_error() {
        let mut corpus = memory_corpus(4, 32);
        for s in corpus.samples.iter_mut() {
            s.split = Split::Train;
        }
        let cfg = tiny_train_cfg(TrainMode::Naive, 1, 1);
        let err = train(&corpus, &cfg).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn warmup_epochs_train_all_channels_and_freeze_classifier() {
        let corpus = memory_corpus(8, 32);
        let mut cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 3);
        cfg.warmup_epochs = 2;
        let (ckpt, log) = train(&corpus, &cfg).unwrap();

        // Warm-up epochs report only the shared dice term.
        for e in &log.epochs[..2] {
            assert_eq!(e.train_l2, 0.0);
            assert_eq!(e.train_l3, 0.0);
            assert_eq!(e.train_l1, e.train_total);
        }
        // The mode objective takes over afterwards.
        assert!(log.epochs[2].train_l3 > 0.0);

        // Classifier untouched during warm-up: retrain with zero epochs past
        // warm-up and compare to a fresh init.
        let mut cfg2 = cfg.clone();
        cfg2.epochs = 2;
        let (warm_only, _) = train(&corpus, &cfg2).unwrap();
        let fresh = StyleClassifier::init(
            cfg.cls_config(),
            Rng::derived(cfg.seed, 2).next_u64(),
        )
        .unwrap();
        assert_eq!(
            warm_only.cls.as_ref().unwrap().params_flat(),
            fresh.params_flat()
        );
        // Segmentation parameters did move.
        assert_ne!(ckpt.seg.params_flat(), warm_only.seg.params_flat());
    }

    #[test]
    fn resume_replays_across_warmup_boundary() {
        let corpus = memory_corpus(8, 32);
        let mut cfg = tiny_train_cfg(TrainMode::StyleSeg, 2, 5);
        cfg.warmup_epochs = 3;
        let (straight, log5) = train(&corpus, &cfg).unwrap();

        let mut cfg2 = cfg.clone();
        cfg2.epochs = 2; // stop inside the warm-up phase
        let (half, log2) = train(&corpus, &cfg2).unwrap();
        let mut resumed = half;
        resumed.config.epochs = 5;
        let (resumed, log_r) = resume(&corpus, resumed, log2).unwrap();
        assert_eq!(resumed.seg.params_flat(), straight.seg.params_flat());
        for (a, b) in log_r.epochs.iter().zip(&log5.epochs) {
            assert_eq!(a.val_total, b.val_total);
        }
    }

    #[test]
    fn runlog_csv_schema() {
        let log = RunLog {
            epochs: vec![EpochStats {
                epoch: 1,
                train_l1: 0.5,
                train_l2: 0.25,
                train_l3: 1.0,
                train_total: 1.75,
                val_total: 1.5,
                val_p_entropy: 0.6,
            }],
            best_epoch: 1,
            wall_time_secs: 0.0,
            parallel: false,
            threads: 1,
        };
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,l1,l2,l3,total,val_total");
        assert_eq!(
            lines.next().unwrap(),
            "1,0.500000,0.250000,1.000000,1.750000,1.500000"
        );
    }
}
