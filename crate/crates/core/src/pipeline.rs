//! End-to-end orchestration: dataset scan and split, filtering, descriptor
//! extraction, feature selection, CNN training and per-video evaluation.
//!
//! Each stage reads the previous stage's artifacts from the output
//! directory and writes its own, so running the stages one by one produces
//! the same files as [`run_pipeline`]. All randomness comes from the three
//! seeds in [`Seeds`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::{prepare_input, train, CnnModel, Geometry, Tensor3, TrainConfig};
use crate::cpwt::{extract, CpwtConfig, FeatureVector, PatternImage, N_BINS};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frameio::{load_frame, save_pgm, save_pgm_bytes, scan_dataset, split_dataset, DatasetManifest, Split, VideoEntry};
use crate::gwo::{select_features, FeatureMask, GwoParams};
use crate::metrics::{confusion, report_named, roc_one_vs_rest, MetricsReport};
use crate::preprocess::{ca_filter_with, LaplacianMask, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub root: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub split: u64,
    pub gwo: u64,
    pub cnn: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { split: 1, gwo: 2, cnn: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GwoSection {
    pub wolves: usize,
    pub iterations: usize,
}

impl Default for GwoSection {
    fn default() -> Self {
        let p = GwoParams::default();
        GwoSection { wolves: p.wolves, iterations: p.iterations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub input_size: usize,
}

impl Default for CnnSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        CnnSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            input_size: t.input_size,
        }
    }
}

/// How frame predictions become one label per video.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Vote,
    MeanProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default)]
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub cpwt: CpwtConfig,
    #[serde(default)]
    pub gwo: GwoSection,
    #[serde(default)]
    pub cnn: CnnSection,
    pub output: OutputConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl PipelineConfig {
    pub fn new(dataset_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            dataset: DatasetConfig {
                root: dataset_root.into(),
                train_fraction: default_train_fraction(),
            },
            seeds: Seeds::default(),
            preprocess: PreprocessConfig::default(),
            cpwt: CpwtConfig::default(),
            gwo: GwoSection::default(),
            cnn: CnnSection::default(),
            output: OutputConfig {
                dir: output_dir.into(),
                aggregation: Aggregation::default(),
            },
            execution: Execution::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.root, &mut cfg.output.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.dataset.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train_fraction {f} outside (0, 1)")));
        }
        LaplacianMask::new(*self.preprocess.laplacian_mask.entries())?;
        crate::cpwt::ConvolutionMask5::new(*self.cpwt.convolution_mask.entries())?;
        if self.gwo.wolves < crate::gwo::MIN_WOLVES || self.gwo.iterations == 0 {
            return Err(Error::Config("gwo needs at least 4 wolves and 1 iteration".into()));
        }
        let c = &self.cnn;
        if !(c.learning_rate >= 0.0 && c.learning_rate.is_finite()) || c.batch_size == 0 || c.input_size < 10 {
            return Err(Error::Config("cnn needs a finite non-negative learning rate, batch >= 1 and input_size >= 10".into()));
        }
        Ok(())
    }

    pub fn gwo_params(&self) -> GwoParams {
        GwoParams {
            wolves: self.gwo.wolves,
            iterations: self.gwo.iterations,
            seed: self.seeds.gwo,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.cnn.learning_rate,
            epochs: self.cnn.epochs,
            batch_size: self.cnn.batch_size,
            seed: self.seeds.cnn,
            input_size: self.cnn.input_size,
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts { dir: self.output.dir.clone() }
    }
}

/// File layout of the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
    pub fn features(&self) -> PathBuf {
        self.dir.join("features.csv")
    }
    pub fn mask(&self) -> PathBuf {
        self.dir.join("mask.json")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }
    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_losses.csv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("report.csv")
    }
    pub fn confusion_csv(&self) -> PathBuf {
        self.dir.join("confusion.csv")
    }
    pub fn roc_csv(&self) -> PathBuf {
        self.dir.join("roc.csv")
    }
    pub fn run_record(&self) -> PathBuf {
        self.dir.join("run.json")
    }

    fn frame_file(&self, kind: &str, video: &VideoEntry, k: usize) -> PathBuf {
        let stem = video.frames[k]
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("frame_{k:05}"));
        self.dir.join(kind).join(&video.id).join(format!("{stem}.pgm"))
    }

    pub fn filtered(&self, video: &VideoEntry, k: usize) -> PathBuf {
        self.frame_file("filtered", video, k)
    }

    pub fn pattern(&self, video: &VideoEntry, k: usize) -> PathBuf {
        self.frame_file("patterns", video, k)
    }

    fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, stage })
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Every (video index, frame index) pair in manifest order.
fn frame_jobs(manifest: &DatasetManifest, split: Option<Split>) -> Vec<(usize, usize)> {
    manifest
        .videos
        .iter()
        .enumerate()
        .filter(|(_, v)| split.is_none() || v.split == split)
        .flat_map(|(i, v)| (0..v.frames.len()).map(move |k| (i, k)))
        .collect()
}

/// Scan, split, and CA-filter every frame into `filtered/`.
pub fn preprocess_stage(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let art = cfg.artifacts();
    let manifest = split_dataset(&scan_dataset(&cfg.dataset.root)?, cfg.dataset.train_fraction, cfg.seeds.split)?;
    let mask = cfg.preprocess.laplacian_mask;
    cfg.execution.try_map(&frame_jobs(&manifest, None), |&(v, k)| {
        let video = &manifest.videos[v];
        let frame = load_frame(&video.frames[k])?;
        let filtered = ca_filter_with(&frame, &mask)?;
        save_pgm(&filtered, art.filtered(video, k))
    })?;
    write_file(&art.manifest(), manifest.to_json())?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub video_id: String,
    pub frame_index: usize,
    pub label: usize,
    pub feature: FeatureVector,
}

pub fn features_to_csv(rows: &[FeatureRow]) -> String {
    let mut out = String::from("video_id,frame_index,label");
    for b in 0..N_BINS {
        write!(out, ",b{b}").unwrap();
    }
    out.push('\n');
    for row in rows {
        write!(out, "{},{},{}", row.video_id, row.frame_index, row.label).unwrap();
        for v in &row.feature.bins {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> std::result::Result<Vec<FeatureRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty feature file")?;
    if header.split(',').count() != 3 + N_BINS || !header.starts_with("video_id,frame_index,label,b0") {
        return Err("unexpected feature header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 + N_BINS {
                return Err(format!("row {}: expected {} columns, got {}", i + 1, 3 + N_BINS, cols.len()));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| format!("row {}: {e}", i + 1));
            let bins = cols[3..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(FeatureRow {
                video_id: cols[0].to_string(),
                frame_index: num(cols[1])?,
                label: num(cols[2])?,
                feature: FeatureVector { bins, normalized: true },
            })
        })
        .collect()
}

/// Runs the descriptor on every filtered frame; writes `features.csv` and
/// `patterns/`.
pub fn extract_stage(cfg: &PipelineConfig) -> Result<Vec<FeatureRow>> {
    let art = cfg.artifacts();
    let manifest = DatasetManifest::load(art.require(art.manifest(), "preprocess")?)?;
    let rows = cfg.execution.try_map(&frame_jobs(&manifest, None), |&(v, k)| {
        let video = &manifest.videos[v];
        let filtered = load_frame(art.require(art.filtered(video, k), "preprocess")?)?;
        let ex = extract(&filtered, &cfg.cpwt)?;
        save_pgm_bytes(ex.pattern.codes(), ex.pattern.width(), ex.pattern.height(), art.pattern(video, k))?;
        Ok(FeatureRow {
            video_id: video.id.clone(),
            frame_index: k,
            label: video.class,
            feature: ex.feature,
        })
    })?;
    write_file(&art.features(), features_to_csv(&rows))?;
    Ok(rows)
}

/// Grey wolf bin selection on the training-split features; writes `mask.json`.
pub fn select_stage(cfg: &PipelineConfig) -> Result<FeatureMask> {
    let art = cfg.artifacts();
    let manifest = DatasetManifest::load(art.require(art.manifest(), "preprocess")?)?;
    let path = art.require(art.features(), "extract")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows = features_from_csv(&text).map_err(|e| Error::artifact(&path, e))?;
    let train_ids: std::collections::HashSet<&str> = manifest.videos_in(Split::Train).map(|v| v.id.as_str()).collect();
    let (features, labels): (Vec<FeatureVector>, Vec<usize>) = rows
        .into_iter()
        .filter(|r| train_ids.contains(r.video_id.as_str()))
        .map(|r| (r.feature, r.label))
        .unzip();
    let selection = select_features(&features, &labels, &cfg.gwo_params(), cfg.execution)?;
    log::info!(
        "selected {} of {} bins, validation accuracy {:.4}",
        selection.mask.count(),
        selection.mask.dim,
        selection.validation_accuracy
    );
    selection.mask.save(art.mask())?;
    Ok(selection.mask)
}

fn load_pattern(path: PathBuf) -> Result<PatternImage> {
    PatternImage::from_frame(&load_frame(path)?)
}

/// Frame jobs in manifest order and their network inputs.
type NetworkInputs = (Vec<(usize, usize)>, Vec<Tensor3>);

fn network_inputs(cfg: &PipelineConfig, manifest: &DatasetManifest, mask: &FeatureMask, split: Split) -> Result<NetworkInputs> {
    let art = cfg.artifacts();
    let jobs = frame_jobs(manifest, Some(split));
    let inputs = cfg.execution.try_map(&jobs, |&(v, k)| {
        let pattern = load_pattern(art.require(art.pattern(&manifest.videos[v], k), "extract")?)?;
        prepare_input(&pattern, mask, cfg.cnn.input_size)
    })?;
    Ok((jobs, inputs))
}

/// Trains the standard network on masked training patterns; writes
/// `model.json` and `train_losses.csv`.
pub fn train_stage(cfg: &PipelineConfig) -> Result<CnnModel> {
    let art = cfg.artifacts();
    let manifest = DatasetManifest::load(art.require(art.manifest(), "preprocess")?)?;
    let mask = FeatureMask::load(art.require(art.mask(), "select")?)?;
    let (jobs, inputs) = network_inputs(cfg, &manifest, &mask, Split::Train)?;
    let labels: Vec<usize> = jobs.iter().map(|&(v, _)| manifest.videos[v].class).collect();
    let size = cfg.cnn.input_size;
    let model = CnnModel::standard(Geometry::new(1, size, size), manifest.classes.clone(), cfg.train_config())?;
    let trained = train(model, &inputs, &labels, cfg.execution)?;
    let mut log_csv = String::from("epoch,loss\n");
    for (e, l) in trained.epoch_losses.iter().enumerate() {
        writeln!(log_csv, "{e},{l}").unwrap();
    }
    write_file(&art.train_log(), log_csv)?;
    trained.model.save(art.model())?;
    Ok(trained.model)
}

/// Modal label; ties go to the lowest class index.
pub fn vote(labels: &[usize]) -> Result<usize> {
    let max = labels.iter().max().ok_or_else(|| Error::InvalidInput("cannot vote on zero frames".into()))?;
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (label, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = label;
        }
    }
    Ok(best)
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    out.iter_mut().for_each(|v| *v /= rows.len() as f64);
    out
}

/// Predicts every test frame, aggregates per video and writes the report
/// files.
pub fn eval_stage(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let art = cfg.artifacts();
    let manifest = DatasetManifest::load(art.require(art.manifest(), "preprocess")?)?;
    let model = CnnModel::load(art.require(art.model(), "train")?)?;
    let mask = FeatureMask::load(art.require(art.mask(), "select")?)?;
    if model.classes != manifest.classes {
        return Err(Error::artifact(art.model(), "model classes differ from the manifest"));
    }
    let (jobs, inputs) = network_inputs(cfg, &manifest, &mask, Split::Test)?;
    let predictions = cfg.execution.try_map(&inputs, |x| model.predict(x))?;

    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    let mut video_probs = Vec::new();
    let mut csv = String::from("video_id,actual,predicted,frames");
    for name in &manifest.classes {
        write!(csv, ",p_{name}").unwrap();
    }
    csv.push('\n');
    let mut start = 0;
    while start < jobs.len() {
        let v = jobs[start].0;
        let end = start + jobs[start..].iter().take_while(|j| j.0 == v).count();
        let frames = &predictions[start..end];
        let labels: Vec<usize> = frames.iter().map(|p| p.0).collect();
        let probs: Vec<Vec<f64>> = frames.iter().map(|p| p.1.clone()).collect();
        let mean = mean_rows(&probs);
        let label = match cfg.output.aggregation {
            Aggregation::Vote => vote(&labels)?,
            Aggregation::MeanProbability => crate::cnn::argmax(&mean),
        };
        let video = &manifest.videos[v];
        write!(csv, "{},{},{},{}", video.id, video.class, label, end - start).unwrap();
        for p in &mean {
            write!(csv, ",{p}").unwrap();
        }
        csv.push('\n');
        actual.push(video.class);
        predicted.push(label);
        video_probs.push(mean);
        start = end;
    }
    let cm = confusion(&actual, &predicted, manifest.n_classes())?;
    let report = report_named(&cm, &manifest.classes)?;
    write_file(&art.predictions(), csv)?;
    write_file(&art.report_json(), report.to_json())?;
    write_file(&art.report_csv(), report.to_csv())?;
    write_file(&art.confusion_csv(), cm.to_csv(&manifest.classes))?;
    let roc_text = match roc_one_vs_rest(&video_probs, &actual, manifest.n_classes()) {
        Ok(r) => r.to_csv(),
        Err(_) => String::from("class,threshold,fpr,tpr\n"),
    };
    write_file(&art.roc_csv(), roc_text)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    /// Seconds since the run started.
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stages: Vec<StageTiming>,
    /// Wall-clock seconds of preprocessing, extraction, selection and training.
    pub train_seconds: f64,
    /// Wall-clock seconds of evaluation.
    pub test_seconds: f64,
    pub artifacts: Vec<ArtifactRecord>,
    pub config: PipelineConfig,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Runs every stage in order and records timings and artifact checksums.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(RunRecord, MetricsReport)> {
    cfg.validate()?;
    let art = cfg.artifacts();
    fs::create_dir_all(&art.dir).map_err(|e| Error::io(&art.dir, e))?;
    let t0 = Instant::now();
    let mut stages = Vec::new();
    let mut timed = |name: &'static str, f: &dyn Fn() -> Result<()>| -> Result<()> {
        let start = t0.elapsed().as_secs_f64();
        f().map_err(|e| e.in_stage(name))?;
        stages.push(StageTiming {
            stage: name.into(),
            start,
            end: t0.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    timed("preprocess", &|| preprocess_stage(cfg).map(drop))?;
    timed("extract", &|| extract_stage(cfg).map(drop))?;
    timed("select", &|| select_stage(cfg).map(drop))?;
    timed("train", &|| train_stage(cfg).map(drop))?;
    timed("eval", &|| eval_stage(cfg).map(drop))?;
    let report_path = art.report_json();
    let report = MetricsReport::from_json(&fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?)?;

    let mut files = Vec::new();
    collect_files(&art.dir, &mut files)?;
    let artifacts = files
        .into_iter()
        .filter(|p| *p != art.run_record())
        .map(|p| {
            Ok(ArtifactRecord {
                sha256: sha256_file(&p)?,
                path: p.strip_prefix(&art.dir).map(Path::to_path_buf).unwrap_or(p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let train_end = stages.iter().find(|s| s.stage == "train").map_or(0.0, |s| s.end);
    let eval = stages.iter().find(|s| s.stage == "eval").expect("eval ran");
    let record = RunRecord {
        train_seconds: train_end,
        test_seconds: eval.end - eval.start,
        stages,
        artifacts,
        config: cfg.clone(),
    };
    write_file(&art.run_record(), serde_json::to_string_pretty(&record).expect("record serializes"))?;
    Ok((record, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_examples() {
        assert_eq!(vote(&[2, 2, 1]).unwrap(), 2);
        assert_eq!(vote(&[1, 2]).unwrap(), 1);
        assert_eq!(vote(&[4]).unwrap(), 4);
        assert!(vote(&[]).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = PipelineConfig::from_toml("[dataset]\nroot = \"d\"\n[output]\ndir = \"o\"\n").unwrap();
        assert_eq!(cfg.dataset.train_fraction, 0.7);
        assert_eq!(cfg.seeds, Seeds::default());
        assert_eq!(cfg.output.aggregation, Aggregation::Vote);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

        let bad = "[dataset]\nroot = \"d\"\ntrain_fraction = 1.5\n[output]\ndir = \"o\"\n";
        assert!(matches!(PipelineConfig::from_toml(bad), Err(Error::Config(_))));
        let bad_mask = "[dataset]\nroot = \"d\"\n[preprocess]\nlaplacian_mask = [1,1,1,1,1,1,1,1,1]\n[output]\ndir = \"o\"\n";
        assert!(matches!(PipelineConfig::from_toml(bad_mask), Err(Error::Config(_))));
        let agg = "[dataset]\nroot = \"d\"\n[output]\ndir = \"o\"\naggregation = \"mean_probability\"\n";
        assert_eq!(PipelineConfig::from_toml(agg).unwrap().output.aggregation, Aggregation::MeanProbability);
    }

    #[test]
    fn feature_csv_round_trip() {
        let mut bins = vec![0.0; N_BINS];
        bins[0] = 0.75;
        bins[9] = 0.25;
        let rows = vec![FeatureRow {
            video_id: "a/v1".into(),
            frame_index: 3,
            label: 1,
            feature: FeatureVector { bins, normalized: true },
        }];
        let text = features_to_csv(&rows);
        assert!(text.lines().nth(1).unwrap().starts_with("a/v1,3,1,0.75,0,"));
        assert_eq!(features_from_csv(&text).unwrap(), rows);
        assert!(features_from_csv("x,y\n").is_err());
    }

    #[test]
    fn stages_report_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::new(dir.path().join("data"), dir.path().join("out"));
        assert!(matches!(eval_stage(&cfg), Err(Error::MissingArtifact { .. })));
        assert!(matches!(extract_stage(&cfg), Err(Error::MissingArtifact { stage: "preprocess", .. })));
    }
}
