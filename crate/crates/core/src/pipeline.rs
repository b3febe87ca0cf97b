//! Run configuration and the file-based commands behind the CLI.
//!
//! Every command that writes outputs also writes the effective configuration
//! (defaults merged, seed propagated) as `config.json` next to them, so the
//! run can be repeated from that file alone.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{generate_dataset, labels_to_pgm, list_stems, load_dataset, normalize_percentile, read_labels, save_dataset, write_labels, write_pgm, write_tensor, Dataset, LabelMask, SceneSpec};
use crate::loss::LossConfig;
use crate::metrics::{format_report, seg_dataset, threshold_sweep, Aggregation, SweepRow};
use crate::net::{load_checkpoint, save_checkpoint, EpochStats, ModelConfig, ModelParams, TrainConfig, Trainer};
use crate::segment::{infer, instances, predict_full, search_prepared, Inference, SearchMetric, SearchResult, SegmenterConfig};
use crate::tensor::Tensor;
use crate::theory::{format_theory_report, run_theory, TheoryConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ocea";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneSpec,
    pub train_images: usize,
    pub eval_images: usize,
    /// Leading training images whose labels drive the bandwidth search.
    pub validation_images: usize,
    /// Percentile-normalize images before training and inference.
    pub normalize: bool,
    pub bandwidths: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub aggregation: Aggregation,
    pub search_metric: SearchMetric,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            train_images: 40,
            eval_images: 10,
            validation_images: 10,
            normalize: true,
            bandwidths: vec![2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0],
            thresholds: (1..10).map(|k| k as f64 / 10.0).collect(),
            aggregation: Aggregation::Dataset,
            search_metric: SearchMetric::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overrides the scene and training seeds.
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub segment: SegmenterConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    /// Desk-scale run: 40 training and 10 evaluation scenes, 15 epochs of a
    /// narrow network.
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig {
                base_fmaps: 16,
                ..Default::default()
            },
            loss: LossConfig::default(),
            train: TrainConfig {
                epochs: 15,
                steps_per_epoch: Some(20),
                schedule: crate::net::LrSchedule {
                    base: 1e-3,
                    ..Default::default()
                },
                ..Default::default()
            },
            segment: SegmenterConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    /// A few seconds end to end; for plumbing tests.
    pub fn smoke() -> Self {
        let d = Self::default();
        Self {
            model: ModelConfig { base_fmaps: 4, ..d.model },
            train: TrainConfig {
                epochs: 2,
                batch: 2,
                crop: 68,
                steps_per_epoch: Some(2),
                ..d.train
            },
            segment: SegmenterConfig { noise_rounds: 2, ..d.segment },
            data: DataConfig {
                scene: SceneSpec {
                    height: 72,
                    width: 80,
                    objects: 4,
                    ..Default::default()
                },
                train_images: 3,
                eval_images: 2,
                validation_images: 2,
                bandwidths: vec![4.0, 8.0],
                thresholds: vec![0.5],
                ..d.data
            },
            ..d
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults merged and the master seed copied into every section.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.data.scene.seed = c.seed;
        c.train.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.segment.validate()?;
        self.data.scene.validate()?;
        let d = &self.data;
        if d.validation_images > d.train_images {
            return Err(Error::Config(format!(
                "validation_images {} exceeds train_images {}",
                d.validation_images, d.train_images
            )));
        }
        if d.train_images == 0 || d.bandwidths.is_empty() || d.thresholds.is_empty() {
            return Err(Error::Config("need training images, bandwidth candidates and thresholds".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(CONFIG_FILE), &self.effective().to_json())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn prepare(images: &[Tensor<f32>], normalize: bool) -> Result<Vec<Tensor<f32>>> {
    if normalize {
        images.iter().map(normalize_percentile).collect()
    } else {
        Ok(images.to_vec())
    }
}

/// Masks from `dir/labels` if it exists, else from `dir` itself, keyed by stem.
pub fn load_masks(dir: impl AsRef<Path>) -> Result<(Vec<String>, Vec<LabelMask>)> {
    let dir = dir.as_ref();
    let dir = if dir.join("labels").is_dir() { dir.join("labels") } else { dir.to_path_buf() };
    let stems = list_stems(&dir)?;
    let masks = stems.iter().map(|s| read_labels(dir.join(format!("{s}.ocet")))).collect::<Result<Vec<_>>>()?;
    Ok((stems, masks))
}

pub fn synth_command(cfg: &RunConfig, images: usize, out: &Path) -> Result<Dataset> {
    let cfg = cfg.effective();
    let data = generate_dataset(&cfg.data.scene, images)?;
    save_dataset(out, &data)?;
    cfg.echo(out)?;
    Ok(data)
}

fn format_train_log(stats: &[EpochStats]) -> String {
    let mut s = String::new();
    for e in stats {
        let _ = writeln!(s, "{}\t{:e}\t{:.8}", e.epoch, e.lr, e.mean_loss);
    }
    s
}

/// Trains on `data/images`, checkpointing into `out` after every epoch. With
/// `resume`, continues from that checkpoint and appends to the log.
pub fn train_command(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<Vec<EpochStats>> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let set = load_dataset(data)?;
    let images = prepare(&set.images, cfg.data.normalize)?;
    train_images(&cfg, &images, out, resume)
}

fn train_images(cfg: &RunConfig, images: &[Tensor<f32>], out: &Path, resume: Option<&Path>) -> Result<Vec<EpochStats>> {
    if images.is_empty() {
        return Err(Error::precondition("train", "empty dataset"));
    }
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    cfg.echo(out)?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(load_checkpoint(path)?, cfg.train.clone(), cfg.loss)?,
        None => Trainer::new(&cfg.model, cfg.train.clone(), cfg.loss)?,
    };
    let log = out.join(TRAIN_LOG_FILE);
    let mut text = match resume {
        Some(_) => fs::read_to_string(&log).unwrap_or_default(),
        None => String::new(),
    };
    let mut stats = Vec::new();
    while trainer.epoch(images.len()) < cfg.train.epochs {
        let e = trainer.run_epoch(images)?;
        text += &format_train_log(std::slice::from_ref(&e));
        save_checkpoint(out.join(CHECKPOINT_FILE), trainer.params(), trainer.adam())?;
        write_text(&log, &text)?;
        stats.push(e);
    }
    Ok(stats)
}

fn load_params(checkpoint: &Path) -> Result<ModelParams> {
    Ok(load_checkpoint(checkpoint)?.params)
}

/// Dense fields for every image of `data`, one `<stem>.ocet` per image.
pub fn predict_command(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let params = load_params(checkpoint)?;
    let set = load_dataset(data)?;
    let images = prepare(&set.images, cfg.data.normalize)?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    for (stem, img) in set.stems.iter().zip(&images) {
        write_tensor(out.join(format!("{stem}.ocet")), &predict_full(&params, img)?)?;
    }
    cfg.echo(out)
}

fn infer_all(cfg: &RunConfig, params: &ModelParams, images: &[Tensor<f32>]) -> Result<Vec<Inference>> {
    images.iter().map(|img| infer(params, img, &cfg.segment, cfg.seed)).collect()
}

fn write_masks(out: &Path, stems: &[String], masks: &[LabelMask], pgm: bool) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    for (stem, m) in stems.iter().zip(masks) {
        write_labels(out.join(format!("{stem}.ocet")), m)?;
        if pgm {
            write_pgm(out.join(format!("{stem}.pgm")), &labels_to_pgm(m)?)?;
        }
    }
    Ok(())
}

/// Instance masks for every image of `data` with the configured segmenter.
pub fn segment_command(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path, pgm: bool) -> Result<Vec<LabelMask>> {
    let cfg = cfg.effective();
    cfg.segment.validate()?;
    let params = load_params(checkpoint)?;
    let set = load_dataset(data)?;
    let images = prepare(&set.images, cfg.data.normalize)?;
    let masks = infer_all(&cfg, &params, &images)?
        .iter()
        .map(|inf| instances(inf, &cfg.segment))
        .collect::<Result<Vec<_>>>()?;
    write_masks(out, &set.stems, &masks, pgm)?;
    cfg.echo(out)?;
    Ok(masks)
}

/// Metric table for predicted masks against ground truth, matched by stem.
pub fn eval_command(gt: &Path, pred: &Path, thresholds: &[f64], mode: Aggregation) -> Result<(Vec<SweepRow>, f64)> {
    let (gs, gts) = load_masks(gt)?;
    let (ps, preds) = load_masks(pred)?;
    if gs != ps {
        return Err(Error::Malformed(format!(
            "ground truth and predictions differ in file names ({} vs {} masks)",
            gs.len(),
            ps.len()
        )));
    }
    Ok((threshold_sweep(&gts, &preds, thresholds, mode)?, seg_dataset(&gts, &preds)?))
}

pub fn format_search(result: &SearchResult) -> String {
    let mut s = String::from("bandwidth\tshrink\tscore\n");
    for p in &result.table {
        let _ = writeln!(s, "{}\t{}\t{:.6}", p.bandwidth, p.shrink, p.score);
    }
    let _ = writeln!(s, "# best\t{}\t{}\t{:.6}", result.bandwidth, result.shrink, result.score);
    s
}

/// Bandwidth x shrink search on a labeled dataset.
pub fn sweep_command(cfg: &RunConfig, checkpoint: &Path, data: &Path) -> Result<SearchResult> {
    let cfg = cfg.effective();
    let params = load_params(checkpoint)?;
    let set = load_dataset(data)?;
    let gts = set.labels.clone().ok_or_else(|| Error::precondition("sweep", "dataset has no labels"))?;
    let images = prepare(&set.images, cfg.data.normalize)?;
    let infs = infer_all(&cfg, &params, &images)?;
    search_prepared(&infs, &gts, &cfg.data.bandwidths, &cfg.segment, cfg.data.search_metric)
}

pub fn theory_command(cfg: &TheoryConfig, seed: u64) -> Result<String> {
    Ok(format_theory_report(&run_theory(cfg, seed)?))
}

/// Outcome of [`chain`]. Only `seconds` is not written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub final_loss: f64,
    /// Pooled over evaluation images.
    pub foreground_iou: f64,
    /// Mean noise variance over true background and true foreground pixels.
    pub background_variance: f64,
    pub foreground_variance: f64,
    pub bandwidth: f64,
    pub shrink: usize,
    pub f1: f64,
    pub seg: f64,
    /// F1 at the chosen bandwidth without shrinkage.
    pub f1_no_shrink: f64,
    #[serde(skip)]
    pub seconds: f64,
}

pub fn foreground_iou(infs: &[Inference], gts: &[LabelMask]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (inf, gt) in infs.iter().zip(gts) {
        for (&f, &g) in inf.foreground.iter().zip(gt.data()) {
            inter += usize::from(f && g != 0);
            union += usize::from(f || g != 0);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean variance over true background and true foreground pixels, pooled.
pub fn variance_by_class(infs: &[Inference], gts: &[LabelMask]) -> (f64, f64) {
    let mut sums = [(0.0, 0usize); 2];
    for (inf, gt) in infs.iter().zip(gts) {
        for (&v, &g) in inf.variance.iter().zip(gt.data()) {
            let s = &mut sums[usize::from(g != 0)];
            s.0 += v;
            s.1 += 1;
        }
    }
    let mean = |(t, n): (f64, usize)| if n == 0 { f64::NAN } else { t / n as f64 };
    (mean(sums[0]), mean(sums[1]))
}

/// synth -> train -> sweep -> segment -> eval, all under `out`:
/// `data/{train,eval}`, `model.ocea`, `train_log.tsv`, `sweep.tsv`,
/// `masks/`, `metrics.tsv`, `report.json`, `config.json`.
pub fn chain(cfg: &RunConfig, out: &Path) -> Result<ChainReport> {
    let start = Instant::now();
    let cfg = cfg.effective();
    cfg.validate()?;
    let d = &cfg.data;
    let all = generate_dataset(&d.scene, d.train_images + d.eval_images)?;
    let train_set = all.slice(0..d.train_images);
    let eval_set = all.slice(d.train_images..all.len());
    save_dataset(out.join("data/train"), &train_set)?;
    save_dataset(out.join("data/eval"), &eval_set)?;
    cfg.echo(out)?;

    let train_imgs = prepare(&train_set.images, d.normalize)?;
    let stats = train_images(&cfg, &train_imgs, out, None)?;
    let params = load_params(&out.join(CHECKPOINT_FILE))?;

    let val_gts = &train_set.labels.as_ref().expect("synthetic labels")[..d.validation_images];
    let val_infs = infer_all(&cfg, &params, &train_imgs[..d.validation_images])?;
    let search = search_prepared(&val_infs, val_gts, &d.bandwidths, &cfg.segment, d.search_metric)?;
    write_text(&out.join("sweep.tsv"), &format_search(&search))?;

    let eval_gts = eval_set.labels.clone().expect("synthetic labels");
    let eval_infs = infer_all(&cfg, &params, &prepare(&eval_set.images, d.normalize)?)?;
    let best = SegmenterConfig {
        bandwidth: search.bandwidth,
        shrink: search.shrink as f64,
        ..cfg.segment.clone()
    };
    let masks = eval_infs.iter().map(|inf| instances(inf, &best)).collect::<Result<Vec<_>>>()?;
    write_masks(&out.join("masks"), &eval_set.stems, &masks, true)?;
    let rows = threshold_sweep(&eval_gts, &masks, &d.thresholds, d.aggregation)?;
    let seg = seg_dataset(&eval_gts, &masks)?;
    write_text(&out.join("metrics.tsv"), &format_report(&rows, Some(seg)))?;

    let no_shrink = SegmenterConfig { shrink: 0.0, ..best };
    let plain = eval_infs.iter().map(|inf| instances(inf, &no_shrink)).collect::<Result<Vec<_>>>()?;
    let f1_at = |m: &[LabelMask]| -> Result<f64> { Ok(threshold_sweep(&eval_gts, m, &[0.5], d.aggregation)?[0].scores.f1) };
    let (background_variance, foreground_variance) = variance_by_class(&eval_infs, &eval_gts);
    let report = ChainReport {
        final_loss: stats.last().map_or(f64::NAN, |s| s.mean_loss),
        foreground_iou: foreground_iou(&eval_infs, &eval_gts),
        background_variance,
        foreground_variance,
        bandwidth: search.bandwidth,
        shrink: search.shrink,
        f1: f1_at(&masks)?,
        seg,
        f1_no_shrink: f1_at(&plain)?,
        seconds: 0.0,
    };
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    Ok(ChainReport {
        seconds: start.elapsed().as_secs_f64(),
        ..report
    })
}
