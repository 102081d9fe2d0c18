use std::fs;
use std::path::{Path, PathBuf};

use cpwt_core::pipeline::{
    eval_stage, extract_stage, preprocess_stage, run_pipeline, select_stage, train_stage, Aggregation, PipelineConfig,
};
use cpwt_core::synth::{write_dataset, SynthSpec};
use cpwt_core::{Error, ErrorKind, Execution};

fn small_spec() -> SynthSpec {
    SynthSpec {
        videos_per_class: 4,
        frames_per_video: 3,
        size: 32,
        ..SynthSpec::default()
    }
}

fn small_config(data: &Path, out: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(data, out);
    cfg.gwo.wolves = 6;
    cfg.gwo.iterations = 5;
    cfg.cnn.epochs = 2;
    cfg.cnn.input_size = 16;
    cfg
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (fa, fb): (Vec<_>, Vec<_>) = (
        files(a).into_iter().filter(|p| p != Path::new("run.json")).collect(),
        files(b).into_iter().filter(|p| p != Path::new("run.json")).collect(),
    );
    assert_eq!(fa, fb);
    for f in fa {
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn stages_compose_to_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &small_spec()).unwrap();

    let staged = small_config(&data, dir.path().join("staged"));
    preprocess_stage(&staged).unwrap();
    extract_stage(&staged).unwrap();
    select_stage(&staged).unwrap();
    train_stage(&staged).unwrap();
    let report = eval_stage(&staged).unwrap();

    let full = small_config(&data, dir.path().join("full"));
    let (record, full_report) = run_pipeline(&full).unwrap();
    assert_eq!(report, full_report);
    assert_same_outputs(&dir.path().join("staged"), &dir.path().join("full"));

    let names: Vec<&str> = record.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["preprocess", "extract", "select", "train", "eval"]);
    assert!(record.stages.iter().all(|s| s.end >= s.start && s.start >= 0.0));
    assert!(record.artifacts.iter().any(|a| a.path == Path::new("report.json") && a.sha256.len() == 64));
    // 4 videos per class with a 0.7 train fraction leaves one test video each
    assert_eq!(report.total, 5);
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &small_spec()).unwrap();
    let mut seq = small_config(&data, dir.path().join("seq"));
    seq.execution = Execution::Sequential;
    let mut par = small_config(&data, dir.path().join("par"));
    par.execution = Execution::default();
    run_pipeline(&seq).unwrap();
    run_par(&par);
    assert_same_outputs(&dir.path().join("seq"), &dir.path().join("par"));
}

#[cfg(feature = "parallel")]
fn run_par(cfg: &PipelineConfig) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    pool.install(|| run_pipeline(cfg)).unwrap();
}

#[cfg(not(feature = "parallel"))]
fn run_par(cfg: &PipelineConfig) {
    run_pipeline(cfg).unwrap();
}

#[test]
fn mean_probability_aggregation_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &small_spec()).unwrap();
    let mut cfg = small_config(&data, dir.path().join("out"));
    cfg.output.aggregation = Aggregation::MeanProbability;
    let (_, report) = run_pipeline(&cfg).unwrap();
    assert_eq!(report.n_classes, 5);
    let roc = fs::read_to_string(dir.path().join("out/roc.csv")).unwrap();
    assert!(roc.starts_with("class,threshold,fpr,tpr"));
    let predictions = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + report.total as usize);
}

#[test]
fn later_stages_need_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &small_spec()).unwrap();
    let cfg = small_config(&data, dir.path().join("out"));
    preprocess_stage(&cfg).unwrap();
    match train_stage(&cfg) {
        Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "select"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    match select_stage(&cfg) {
        Err(e @ Error::MissingArtifact { .. }) => assert_eq!(e.kind(), ErrorKind::Data),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
}

#[test]
fn single_class_dataset_stops_at_selection() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &small_spec()).unwrap();
    for name in ["stripes_011", "stripes_056", "stripes_101", "stripes_146"] {
        fs::remove_dir_all(data.join(name)).unwrap();
    }
    let cfg = small_config(&data, dir.path().join("out"));
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "select");
            assert!(matches!(*source, Error::SingleClass(1)));
        }
        other => panic!("expected a selection failure, got {other:?}"),
    }
}

#[test]
fn corrupt_frame_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &small_spec()).unwrap();
    fs::write(data.join("checker/video_00/frame_00001.pgm"), b"P5\n32 32\n255\nshort").unwrap();
    let err = run_pipeline(&small_config(&data, dir.path().join("out"))).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(matches!(err, Error::Stage { stage: "preprocess", .. }));
}

#[test]
fn config_file_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg/run.toml");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(
        &path,
        "[dataset]\nroot = \"data\"\ntrain_fraction = 0.6\n[seeds]\ncnn = 99\n[gwo]\nwolves = 8\n[output]\ndir = \"/abs/out\"\n",
    )
    .unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.dataset.root, dir.path().join("cfg/data"));
    assert_eq!(cfg.output.dir, PathBuf::from("/abs/out"));
    assert_eq!(cfg.seeds.cnn, 99);
    assert_eq!(cfg.gwo.wolves, 8);
    assert_eq!(cfg.dataset.train_fraction, 0.6);

    fs::write(&path, "[dataset]\nroot = \"data\"\n").unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap_err().kind(), ErrorKind::Config);
}
