//! The end-to-end augmentation pipeline behind the `panicle-synth` CLI:
//! prepare → fit-sampler → sample → train → generate → merge → evaluate,
//! plus an `experiment` command that runs the real-vs-augmented
//! comparison in one shot.
//!
//! Every command reads one [`PipelineConfig`] and writes into a fixed
//! layout under `out_root`:
//!
//! ```text
//! out_root/
//!   prepared/            tiles/ + train.json + test.json
//!   sampler/             distribution.json
//!   sampled/             sampled label maps + manifest.json
//!   train/<model>/       checkpoints + train_log.jsonl
//!   synthetic/<model>/   generated tiles + manifest.json
//!   merged/<model>.json  real + synthetic training manifest
//!   eval/                detections.json + report.json
//!   experiment/          per-arm reports + report.json
//! ```
//!
//! Commands are deterministic in (config, seed): rerunning one with the
//! same inputs rewrites byte-identical outputs. A command whose primary
//! output already exists refuses to run unless `force` is set, in which
//! case the old output is removed first.
//!
//! One root seed drives everything: the split shuffle, the sampler, and
//! training each derive their own ChaCha8 stream from it, so no stage
//! perturbs another.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    crop_tiles, load_annotations, DataError, DatasetManifest, ImageTile, LabelMap, ManifestEntry,
    Split, DEFAULT_KEEP_FRACTION, DEFAULT_TILE_SIZE,
};
use crate::eval::{
    evaluate_detections, ground_truth_from_manifest, load_detections, save_detections, Detection,
    EvalError, EvalOptions, EvalReport, ReferenceResults, StubDetector, FULL_SCALE_REFERENCE,
};
use crate::nn::NnError;
use crate::rng::{seeded, streams};
use crate::sampler::{fit_distribution, generate_random_manifest, BoxDistribution, SamplerConfig, SamplerError};
use crate::trainer::{
    self, merge_for_augmentation, ModelKind, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad pipeline config: {0}")]
    Config(String),

    #[error("{what} not found at {path} (run the producing command first?)")]
    MissingInput { what: &'static str, path: PathBuf },

    #[error("output {path} already exists; pass --force to overwrite")]
    OutputExists { path: PathBuf },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Sampler(#[from] SamplerError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("{context} {path}: {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("experiment arms failed: {}; partial report at {}", failed.join(", "), report.display())]
    ArmsFailed { failed: Vec<String>, report: PathBuf },
}

impl PipelineError {
    /// Process exit code: 1 for user errors (bad config, bad or missing
    /// inputs, refusing to overwrite), 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingInput { .. }
            | PipelineError::OutputExists { .. }
            | PipelineError::Data(_)
            | PipelineError::Sampler(_)
            | PipelineError::Eval(_) => 1,
            PipelineError::Train(e) => match e {
                TrainError::Nn(_) | TrainError::NonFinite { .. } | TrainError::Io { .. } => 2,
                _ => 1,
            },
            PipelineError::Nn(_) | PipelineError::Io { .. } | PipelineError::ArmsFailed { .. } => 2,
        }
    }
}

/// Where detections come from during evaluation.
///
/// By default the built-in intensity-threshold detector runs on every
/// test tile. For real detectors, `external` maps an evaluation key to a
/// detections JSON file produced offline: key `"default"` serves
/// `evaluate`, and keys `"real_only"`, `"pix2pixhd"`, `"spade"` serve the
/// experiment arms (train your detector on each arm's merged manifest,
/// dump its test-set detections, and point the key at the file).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorChoice {
    pub stub: StubDetector,
    pub external: BTreeMap<String, PathBuf>,
}

impl DetectorChoice {
    fn describe(&self) -> String {
        if self.external.is_empty() {
            format!(
                "stub(threshold={}, min_area={})",
                self.stub.threshold, self.stub.min_area
            )
        } else {
            let keys: Vec<&str> = self.external.keys().map(String::as_str).collect();
            format!("external files for [{}], stub otherwise", keys.join(", "))
        }
    }
}

/// One config drives every stage. Relative paths in the file resolve
/// against the file's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// All outputs land under here.
    pub out_root: PathBuf,
    /// Root seed; propagated to the split shuffle, sampler, and trainer.
    pub seed: u64,
    /// Annotation file naming rasters and their boxes (prepare input).
    pub annotations: PathBuf,
    pub tile_size: u32,
    /// Minimum fraction of a box's area that must survive tile clipping.
    pub keep_fraction: f64,
    /// Fraction of tiles assigned to the training split.
    pub split_ratio: f64,
    /// Label maps to sample, and hence synthetic tiles per model.
    pub n_synthetic: usize,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalOptions,
    pub detector: DetectorChoice,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_root: PathBuf::from("panicle-out"),
            seed: 0,
            annotations: PathBuf::new(),
            tile_size: DEFAULT_TILE_SIZE,
            keep_fraction: DEFAULT_KEEP_FRACTION,
            split_ratio: 0.8,
            n_synthetic: 1000,
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalOptions::default(),
            detector: DetectorChoice::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a config file, resolving its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for p in [&mut cfg.out_root, &mut cfg.annotations] {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.tile_size < 8 {
            return Err(PipelineError::Config(format!(
                "tile size {} is too small to train on",
                self.tile_size
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(PipelineError::Config(format!(
                "split ratio {} must be in (0, 1]",
                self.split_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            return Err(PipelineError::Config(format!(
                "keep fraction {} must be in [0, 1]",
                self.keep_fraction
            )));
        }
        if self.n_synthetic == 0 {
            return Err(PipelineError::Config(
                "n_synthetic must be at least 1".into(),
            ));
        }
        self.train.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    /// The config as the commands actually run it: the root seed funneled
    /// into the sampler and trainer, and the training resolution pinned
    /// to the tile size. Module-level seed fields in the file are
    /// deliberately overridden — one seed reproduces the whole pipeline.
    pub fn effective(&self) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.train.seed = cfg.seed;
        cfg.train.resolution = cfg.tile_size as usize;
        cfg.sampler.seed = cfg.seed;
        cfg
    }
}

/// Output-path schema under `out_root`.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn new(root: &Path) -> Layout {
        Layout {
            root: root.to_path_buf(),
        }
    }
    fn prepared_dir(&self) -> PathBuf {
        self.root.join("prepared")
    }
    fn tiles_dir(&self) -> PathBuf {
        self.prepared_dir().join("tiles")
    }
    fn train_manifest(&self) -> PathBuf {
        self.prepared_dir().join("train.json")
    }
    fn test_manifest(&self) -> PathBuf {
        self.prepared_dir().join("test.json")
    }
    fn distribution(&self) -> PathBuf {
        self.root.join("sampler").join("distribution.json")
    }
    fn sampled_dir(&self) -> PathBuf {
        self.root.join("sampled")
    }
    fn sampled_manifest(&self) -> PathBuf {
        self.sampled_dir().join("manifest.json")
    }
    fn train_dir(&self, model: ModelKind) -> PathBuf {
        self.root.join("train").join(model.to_string())
    }
    fn checkpoint(&self, model: ModelKind) -> PathBuf {
        self.train_dir(model).join("model.ckpt")
    }
    fn synthetic_dir(&self, model: ModelKind) -> PathBuf {
        self.root.join("synthetic").join(model.to_string())
    }
    fn synthetic_manifest(&self, model: ModelKind) -> PathBuf {
        self.synthetic_dir(model).join("manifest.json")
    }
    fn merged_manifest(&self, model: ModelKind) -> PathBuf {
        self.root.join("merged").join(format!("{model}.json"))
    }
    fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    fn experiment_dir(&self) -> PathBuf {
        self.root.join("experiment")
    }
    fn experiment_report(&self) -> PathBuf {
        self.experiment_dir().join("report.json")
    }
    fn arm_dir(&self, arm: &str) -> PathBuf {
        self.experiment_dir().join(arm)
    }
}

/// Claims a primary output location: errors if it exists without
/// `force`, removes it first when forced.
fn claim_output(path: &Path, force: bool) -> Result<(), PipelineError> {
    if !path.exists() {
        return Ok(());
    }
    if !force {
        return Err(PipelineError::OutputExists {
            path: path.to_path_buf(),
        });
    }
    let removal = if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else {
        std::fs::remove_file(path)
    };
    removal.map_err(|source| PipelineError::Io {
        context: "removing previous output",
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(|source| PipelineError::Io {
        context: "creating directory",
        path: path.to_path_buf(),
        source,
    })
}

fn require_file(path: &Path, what: &'static str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// What `prepare` produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub n_tiles: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// Cuts every annotated raster into tiles, rasterizes each tile's boxes
/// into a label map, and writes train/test manifests split by a seeded
/// shuffle at `split_ratio`. A ratio of 1.0 yields an empty test
/// manifest and a warning.
pub fn cmd_prepare(cfg: &PipelineConfig, force: bool) -> Result<PrepareSummary, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    if cfg.annotations.as_os_str().is_empty() {
        return Err(PipelineError::Config(
            "no annotation file configured (set `annotations`)".into(),
        ));
    }
    require_file(&cfg.annotations, "annotation file")?;
    let layout = Layout::new(&cfg.out_root);
    claim_output(&layout.prepared_dir(), force)?;
    create_dir(&layout.tiles_dir())?;

    let mut tiles = Vec::new();
    for entry in load_annotations(&cfg.annotations)? {
        require_file(&entry.image, "raster image")?;
        let img = image::open(&entry.image)
            .map_err(|source| DataError::Image {
                context: "reading raster",
                path: entry.image.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let raster =
            ndarray::Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw())
                .expect("RgbImage buffer matches its dimensions");
        let source = entry
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "raster".to_owned());
        tiles.extend(crop_tiles(
            &raster,
            &entry.boxes,
            cfg.tile_size,
            cfg.keep_fraction,
            &source,
        )?);
    }
    if tiles.is_empty() {
        return Err(PipelineError::Config(
            "annotated rasters produced no tiles (raster smaller than the tile size?)".into(),
        ));
    }

    // Seeded shuffle, then the first `ratio` fraction trains.
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut seeded(cfg.seed, streams::SPLIT));
    let n_train = ((tiles.len() as f64) * cfg.split_ratio).round() as usize;
    let n_train = n_train.clamp(1, tiles.len());
    if n_train == tiles.len() {
        log::warn!(
            "split ratio {} leaves the test manifest empty; evaluation will have nothing to score",
            cfg.split_ratio
        );
    }

    let mut manifests = [
        DatasetManifest::new(Split::Train),
        DatasetManifest::new(Split::Test),
    ];
    for (rank, &idx) in order.iter().enumerate() {
        let t = &tiles[idx];
        let image_file = format!("{}.png", t.tile.id);
        let label_file = format!("{}_label.png", t.tile.id);
        t.tile.save_png(&layout.tiles_dir().join(&image_file))?;
        LabelMap::from_boxes(&t.boxes, cfg.tile_size, cfg.tile_size)?
            .save_png(&layout.tiles_dir().join(&label_file))?;
        let entry = ManifestEntry {
            id: t.tile.id.clone(),
            image: Some(PathBuf::from("tiles").join(image_file)),
            labelmap: Some(PathBuf::from("tiles").join(label_file)),
            boxes: t.boxes.clone(),
            provenance: Some("real".to_owned()),
        };
        manifests[usize::from(rank >= n_train)].push(entry)?;
    }
    let [mut train, mut test] = manifests;
    train.save(&layout.train_manifest())?;
    test.save(&layout.test_manifest())?;
    Ok(PrepareSummary {
        train_manifest: layout.train_manifest(),
        test_manifest: layout.test_manifest(),
        n_tiles: tiles.len(),
        n_train,
        n_test: tiles.len() - n_train,
    })
}

/// Fits the box count/size distribution on the prepared training split.
pub fn cmd_fit_sampler(cfg: &PipelineConfig, force: bool) -> Result<PathBuf, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    require_file(&layout.train_manifest(), "training manifest")?;
    let out = layout.distribution();
    claim_output(&out, force)?;
    create_dir(out.parent().expect("distribution path has a parent"))?;
    let manifest = DatasetManifest::load(&layout.train_manifest())?;
    let dist = fit_distribution(&manifest, cfg.tile_size)?;
    dist.save(&out)?;
    Ok(out)
}

/// Samples `n_synthetic` label maps from the fitted distribution.
pub fn cmd_sample(cfg: &PipelineConfig, force: bool) -> Result<PathBuf, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    require_file(&layout.distribution(), "fitted distribution")?;
    claim_output(&layout.sampled_dir(), force)?;
    let dist = BoxDistribution::load(&layout.distribution())?;
    generate_random_manifest(&dist, &cfg.sampler, cfg.n_synthetic, &layout.sampled_dir())?;
    Ok(layout.sampled_manifest())
}

/// Trains one model on the prepared training split; returns the final
/// checkpoint path.
pub fn cmd_train(
    cfg: &PipelineConfig,
    model: ModelKind,
    force: bool,
) -> Result<PathBuf, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    require_file(&layout.train_manifest(), "training manifest")?;
    claim_output(&layout.train_dir(model), force)?;
    let manifest = DatasetManifest::load(&layout.train_manifest())?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.model = model;
    trainer::train(&manifest, &train_cfg, &layout.train_dir(model))?;
    Ok(layout.checkpoint(model))
}

/// Renders one synthetic tile per sampled label map from a trained
/// checkpoint; returns the synthetic manifest path.
pub fn cmd_generate(
    cfg: &PipelineConfig,
    model: ModelKind,
    force: bool,
) -> Result<PathBuf, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    require_file(&layout.checkpoint(model), "model checkpoint")?;
    require_file(&layout.sampled_manifest(), "sampled label-map manifest")?;
    claim_output(&layout.synthetic_dir(model), force)?;
    let masks = DatasetManifest::load(&layout.sampled_manifest())?;
    trainer::generate_from_checkpoint(
        &layout.checkpoint(model),
        &masks,
        &layout.synthetic_dir(model),
    )?;
    Ok(layout.synthetic_manifest(model))
}

/// Concatenates the real training split with one model's synthetic set.
pub fn cmd_merge(
    cfg: &PipelineConfig,
    model: ModelKind,
    force: bool,
) -> Result<PathBuf, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    require_file(&layout.train_manifest(), "training manifest")?;
    require_file(&layout.synthetic_manifest(model), "synthetic manifest")?;
    let out = layout.merged_manifest(model);
    claim_output(&out, force)?;
    create_dir(out.parent().expect("merged path has a parent"))?;
    let real = DatasetManifest::load(&layout.train_manifest())?;
    let synthetic = DatasetManifest::load(&layout.synthetic_manifest(model))?;
    let mut merged = merge_for_augmentation(&real, &synthetic)?;
    merged.save(&out)?;
    Ok(out)
}

/// Produces detections for a manifest, either from a configured external
/// detections file (keyed) or by running the stub detector on each tile.
fn detections_for(
    cfg: &PipelineConfig,
    key: &str,
    manifest: &DatasetManifest,
) -> Result<Vec<Detection>, PipelineError> {
    if let Some(path) = cfg.detector.external.get(key) {
        require_file(path, "external detections file")?;
        return Ok(load_detections(path)?);
    }
    let mut detections = Vec::new();
    for entry in &manifest.entries {
        let stored = entry
            .image
            .as_ref()
            .ok_or(PipelineError::Config(format!(
                "manifest entry `{}` has no image to run the detector on",
                entry.id
            )))?;
        let tile = ImageTile::load_png(&manifest.resolve(stored), &entry.id, "eval")?;
        detections.extend(cfg.detector.stub.detect(&tile));
    }
    Ok(detections)
}

/// Scores detections on the prepared test split and writes
/// `eval/report.json` plus the detections that produced it.
pub fn cmd_evaluate(cfg: &PipelineConfig, force: bool) -> Result<EvalReport, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    require_file(&layout.test_manifest(), "test manifest")?;
    claim_output(&layout.eval_dir(), force)?;
    create_dir(&layout.eval_dir())?;
    let manifest = DatasetManifest::load(&layout.test_manifest())?;
    if manifest.entries.is_empty() {
        return Err(PipelineError::Config(
            "test manifest is empty; re-prepare with a split ratio below 1".into(),
        ));
    }
    let detections = detections_for(&cfg, "default", &manifest)?;
    save_detections(&detections, &layout.eval_dir().join("detections.json"))?;
    let report = evaluate_detections(
        &detections,
        &ground_truth_from_manifest(&manifest),
        &cfg.eval,
    )?;
    report.save(&layout.eval_dir().join("report.json"))?;
    Ok(report)
}

/// One experiment arm: the training set it assembles and how its
/// evaluation went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub arm: String,
    pub status: ArmStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmStatus {
    Ok,
    Failed,
}

/// The full comparison: one entry per arm, the shared test set, the
/// detector used, the config that ran, and the published full-scale
/// numbers as context (metadata, not targets — desk-scale runs are not
/// expected to approach them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub detector: String,
    pub test_manifest: PathBuf,
    pub n_test: usize,
    pub arms: Vec<ArmOutcome>,
    pub reference_full_scale: ReferenceResults,
    pub config: PipelineConfig,
}

fn run_arm(
    cfg: &PipelineConfig,
    layout: &Layout,
    arm: &str,
    model: Option<ModelKind>,
    test: &DatasetManifest,
    force: bool,
) -> Result<ArmOutcome, PipelineError> {
    let train_manifest = match model {
        None => layout.train_manifest(),
        Some(m) => {
            cmd_train(cfg, m, force)?;
            cmd_generate(cfg, m, force)?;
            cmd_merge(cfg, m, force)?
        }
    };
    let train_size = DatasetManifest::load(&train_manifest)?.entries.len();

    let arm_dir = layout.arm_dir(arm);
    create_dir(&arm_dir)?;
    let detections = detections_for(cfg, arm, test)?;
    save_detections(&detections, &arm_dir.join("detections.json"))?;
    let report = evaluate_detections(&detections, &ground_truth_from_manifest(test), &cfg.eval)?;
    report.save(&arm_dir.join("report.json"))?;
    Ok(ArmOutcome {
        arm: arm.to_owned(),
        status: ArmStatus::Ok,
        train_manifest: Some(train_manifest),
        train_size: Some(train_size),
        report: Some(report),
        error: None,
    })
}

/// Runs the whole comparison: prepares the data, fits and samples the
/// label-map distribution, then per arm (real-only, +pix2pixhd, +spade)
/// assembles the training set and evaluates detections on the shared
/// test split. The report is written even when arms fail; any failure
/// is returned as [`PipelineError::ArmsFailed`] after writing.
///
/// With the stub detector the three arms score identically — it has no
/// trainable parameters, so augmenting its (nonexistent) training set
/// cannot move its numbers. The arm structure still exercises the full
/// data path, and external per-arm detections slot in via
/// [`DetectorChoice::external`].
pub fn cmd_experiment(
    cfg: &PipelineConfig,
    force: bool,
) -> Result<ExperimentReport, PipelineError> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_root);
    claim_output(&layout.experiment_dir(), force)?;

    cmd_prepare(&cfg, force)?;
    let test = DatasetManifest::load(&layout.test_manifest())?;
    if test.entries.is_empty() {
        return Err(PipelineError::Config(
            "experiment needs a non-empty test split; lower `split_ratio`".into(),
        ));
    }
    cmd_fit_sampler(&cfg, force)?;
    cmd_sample(&cfg, force)?;

    let arms: [(&str, Option<ModelKind>); 3] = [
        ("real_only", None),
        ("pix2pixhd", Some(ModelKind::Pix2PixHD)),
        ("spade", Some(ModelKind::Spade)),
    ];
    let mut outcomes = Vec::with_capacity(arms.len());
    let mut failed = Vec::new();
    for (arm, model) in arms {
        match run_arm(&cfg, &layout, arm, model, &test, force) {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                log::error!("arm {arm} failed: {e}");
                failed.push(arm.to_owned());
                outcomes.push(ArmOutcome {
                    arm: arm.to_owned(),
                    status: ArmStatus::Failed,
                    train_manifest: None,
                    train_size: None,
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let report = ExperimentReport {
        detector: cfg.detector.describe(),
        test_manifest: layout.test_manifest(),
        n_test: test.entries.len(),
        arms: outcomes,
        reference_full_scale: FULL_SCALE_REFERENCE,
        config: cfg.clone(),
    };
    create_dir(&layout.experiment_dir())?;
    let report_path = layout.experiment_report();
    let text = serde_json::to_string_pretty(&report).expect("report serialization is total");
    std::fs::write(&report_path, text.as_bytes()).map_err(|source| PipelineError::Io {
        context: "writing experiment report",
        path: report_path.clone(),
        source,
    })?;

    if failed.is_empty() {
        Ok(report)
    } else {
        Err(PipelineError::ArmsFailed {
            failed,
            report: report_path,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{Pix2PixHDGenConfig, SpadeGenConfig};
    use crate::nn::discriminator::MultiScaleDiscConfig;
    use crate::toydata::{generate_toy_raster, ToyConfig};

    /// A tiny but complete config over a 2x3-cell toy raster at 16 px.
    fn toy_pipeline(dir: &Path, seed: u64) -> PipelineConfig {
        let toy = ToyConfig {
            tile_size: 16,
            min_boxes: 1,
            max_boxes: 2,
            min_box: 4,
            max_box: 7,
            seed,
        };
        let (_, annotations) = generate_toy_raster(&toy, 2, 3, &dir.join("input")).unwrap();
        PipelineConfig {
            out_root: dir.join("out"),
            seed,
            annotations,
            tile_size: 16,
            keep_fraction: 0.25,
            split_ratio: 2.0 / 3.0,
            n_synthetic: 2,
            train: TrainConfig {
                epochs: 2,
                checkpoint_every: 0,
                pix2pixhd: Pix2PixHDGenConfig {
                    base_channels: 2,
                    n_downsamples_global: 1,
                    n_resblocks_global: 1,
                    n_resblocks_local: 1,
                    output_resolution: 16,
                },
                spade: SpadeGenConfig {
                    num_spade_blocks: 1,
                    base_channels: 2,
                    latent_dim: 4,
                    use_image_encoder: false,
                    output_resolution: 16,
                },
                discriminator: MultiScaleDiscConfig {
                    num_scales: 1,
                    layers_per_disc: 1,
                    base_channels: 4,
                },
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn prepare_splits_deterministically_and_honors_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_pipeline(dir.path(), 5);
        let summary = cmd_prepare(&cfg, false).unwrap();
        assert_eq!((summary.n_tiles, summary.n_train, summary.n_test), (6, 4, 2));
        let train_bytes = std::fs::read(&summary.train_manifest).unwrap();
        let test_bytes = std::fs::read(&summary.test_manifest).unwrap();

        // Identical rerun (forced) rewrites identical bytes.
        cmd_prepare(&cfg, true).unwrap();
        assert_eq!(std::fs::read(&summary.train_manifest).unwrap(), train_bytes);
        assert_eq!(std::fs::read(&summary.test_manifest).unwrap(), test_bytes);

        // A different seed assigns a different split.
        let mut other = cfg.clone();
        other.seed = 6;
        cmd_prepare(&other, true).unwrap();
        assert_ne!(std::fs::read(&summary.train_manifest).unwrap(), train_bytes);

        // Every prepared tile is annotated and loadable.
        let train = DatasetManifest::load(&summary.train_manifest).unwrap();
        for e in &train.entries {
            assert!(!e.boxes.is_empty());
            assert_eq!(e.provenance.as_deref(), Some("real"));
        }
    }

    #[test]
    fn prepare_with_ratio_one_leaves_test_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_pipeline(dir.path(), 1);
        cfg.split_ratio = 1.0;
        let summary = cmd_prepare(&cfg, false).unwrap();
        assert_eq!(summary.n_test, 0);
        let test = DatasetManifest::load(&summary.test_manifest).unwrap();
        assert!(test.entries.is_empty());
    }

    #[test]
    fn outputs_are_guarded_by_force() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_pipeline(dir.path(), 2);
        cmd_prepare(&cfg, false).unwrap();
        let err = cmd_prepare(&cfg, false).unwrap_err();
        assert!(matches!(err, PipelineError::OutputExists { .. }));
        assert_eq!(err.exit_code(), 1);
        cmd_prepare(&cfg, true).unwrap();
    }

    #[test]
    fn missing_upstream_outputs_are_user_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_pipeline(dir.path(), 3);
        // No prepare has run: everything downstream refuses cleanly.
        for err in [
            cmd_fit_sampler(&cfg, false).unwrap_err(),
            cmd_sample(&cfg, false).unwrap_err(),
            cmd_train(&cfg, ModelKind::Spade, false).unwrap_err(),
            cmd_generate(&cfg, ModelKind::Spade, false).unwrap_err(),
            cmd_merge(&cfg, ModelKind::Spade, false).unwrap_err(),
            cmd_evaluate(&cfg, false).unwrap_err(),
        ] {
            assert!(matches!(err, PipelineError::MissingInput { .. }), "{err}");
            assert_eq!(err.exit_code(), 1);
        }
    }

    #[test]
    fn evaluate_prefers_external_detections() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_pipeline(dir.path(), 4);
        cmd_prepare(&cfg, false).unwrap();
        let test = DatasetManifest::load(&Layout::new(&cfg.out_root).test_manifest()).unwrap();

        // A perfect external detector: every ground-truth box, score 0.9.
        let perfect: Vec<Detection> = test
            .entries
            .iter()
            .flat_map(|e| {
                e.boxes
                    .iter()
                    .map(|&b| Detection::new(&e.id, b, 0.9).unwrap())
            })
            .collect();
        let det_path = dir.path().join("perfect.json");
        save_detections(&perfect, &det_path).unwrap();
        cfg.detector
            .external
            .insert("default".to_owned(), det_path);

        let report = cmd_evaluate(&cfg, false).unwrap();
        assert_eq!(report.map_50_95, 100.0);
        assert_eq!((report.mape, report.mae, report.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn config_file_round_trips_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        std::fs::write(
            &cfg_path,
            br#"{ "out_root": "out", "annotations": "boxes.json", "seed": 9 }"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.out_root, dir.path().join("out"));
        assert_eq!(cfg.annotations, dir.path().join("boxes.json"));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tile_size, DEFAULT_TILE_SIZE);

        // Effective config funnels the root seed everywhere.
        let eff = cfg.effective();
        assert_eq!(eff.train.seed, 9);
        assert_eq!(eff.sampler.seed, 9);
        assert_eq!(eff.train.resolution, cfg.tile_size as usize);
    }

    #[test]
    fn bad_configs_are_rejected_with_exit_code_one() {
        let base = PipelineConfig {
            annotations: PathBuf::from("x.json"),
            ..PipelineConfig::default()
        };
        for cfg in [
            PipelineConfig {
                split_ratio: 0.0,
                ..base.clone()
            },
            PipelineConfig {
                split_ratio: 1.5,
                ..base.clone()
            },
            PipelineConfig {
                n_synthetic: 0,
                ..base.clone()
            },
            PipelineConfig {
                tile_size: 4,
                ..base.clone()
            },
        ] {
            let err = cfg.validate().unwrap_err();
            assert!(matches!(err, PipelineError::Config(_)), "{err}");
            assert_eq!(err.exit_code(), 1);
        }
    }

    #[test]
    fn internal_errors_map_to_exit_code_two() {
        let io = PipelineError::Io {
            context: "writing",
            path: PathBuf::from("x"),
            source: std::io::Error::other("disk fell off"),
        };
        assert_eq!(io.exit_code(), 2);
        let arms = PipelineError::ArmsFailed {
            failed: vec!["spade".into()],
            report: PathBuf::from("r.json"),
        };
        assert_eq!(arms.exit_code(), 2);
        let nan = PipelineError::Train(TrainError::NonFinite {
            step: 0,
            epoch: 0,
            context: "the generator update",
            gan_d: f64::NAN,
            gan_g: f64::NAN,
            fm: f64::NAN,
            checkpoint: PathBuf::from("d.ckpt"),
        });
        assert_eq!(nan.exit_code(), 2);
        // ...while a refused overwrite or bad input stays a user error.
        assert_eq!(
            PipelineError::Train(TrainError::EmptyDataset).exit_code(),
            1
        );
    }

    #[test]
    fn experiment_runs_all_arms_and_shares_the_test_set() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_pipeline(dir.path(), 11);
        let report = cmd_experiment(&cfg, false).unwrap();

        assert_eq!(report.arms.len(), 3);
        let names: Vec<&str> = report.arms.iter().map(|a| a.arm.as_str()).collect();
        assert_eq!(names, ["real_only", "pix2pixhd", "spade"]);
        let mut id_lists = Vec::new();
        for arm in &report.arms {
            assert_eq!(arm.status, ArmStatus::Ok, "{:?}", arm.error);
            let eval = arm.report.as_ref().unwrap();
            for v in [eval.map_50_95, eval.mape, eval.mae, eval.rmse] {
                assert!(v.is_finite());
            }
            id_lists.push(
                eval.per_image
                    .iter()
                    .map(|p| p.id.clone())
                    .collect::<Vec<_>>(),
            );
        }
        assert_eq!(id_lists[0], id_lists[1]);
        assert_eq!(id_lists[0], id_lists[2]);

        // Augmented arms train on real + synthetic.
        assert_eq!(report.arms[0].train_size, Some(4));
        assert_eq!(report.arms[1].train_size, Some(4 + cfg.n_synthetic));
        assert_eq!(report.arms[2].train_size, Some(4 + cfg.n_synthetic));

        // The report is on disk and echoes the effective config.
        let on_disk: ExperimentReport = serde_json::from_str(
            &std::fs::read_to_string(Layout::new(&cfg.out_root).experiment_report()).unwrap(),
        )
        .unwrap();
        assert_eq!(on_disk.config.seed, 11);
        assert_eq!(on_disk.config.train.seed, 11);
        assert_eq!(on_disk, report);
    }

    #[test]
    fn experiment_failure_writes_partial_report_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_pipeline(dir.path(), 12);
        // Plant an unreadable external detections file for one arm only.
        cfg.detector.external.insert(
            "spade".to_owned(),
            dir.path().join("missing_detections.json"),
        );
        let err = cmd_experiment(&cfg, false).unwrap_err();
        let PipelineError::ArmsFailed { failed, report } = &err else {
            panic!("expected ArmsFailed, got {err}");
        };
        assert_eq!(failed, &vec!["spade".to_owned()]);
        assert_eq!(err.exit_code(), 2);

        let on_disk: ExperimentReport =
            serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        assert_eq!(on_disk.arms[2].status, ArmStatus::Failed);
        assert!(on_disk.arms[2].error.as_ref().unwrap().contains("missing_detections"));
        // The healthy arms still carry full reports.
        assert_eq!(on_disk.arms[0].status, ArmStatus::Ok);
        assert_eq!(on_disk.arms[1].status, ArmStatus::Ok);
    }
}
