use std::fs::{self, File};
use std::path::Path;

use idslab::{analyze, generate, run, sweep, Analysis, AnalyzeOptions, ExperimentConfig, SourceConfig};
use idslab_core::analysis::rank_correlation;
use idslab_core::harness::read_candidates_csv;
use idslab_core::scoring::ClassPrototypes;
use idslab_core::stream::{Dataset, Example, SyntheticSpec};
use idslab_core::{AcquisitionMethod, IdsConfig, LinearSoftmax};

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { validation_size: 60, test_size: 60, seed, ..SyntheticSpec::new(4, 6, 500) }
}

fn small_config(method: AcquisitionMethod) -> ExperimentConfig {
    ExperimentConfig {
        source: SourceConfig::Synthetic(small_spec(3)),
        ids: IdsConfig { batch_size: 8, ..IdsConfig::new(method, 80, 20, 40) },
        sweep: Default::default(),
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "meta.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generated_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(5);
    let expected = spec.build().unwrap();

    let files = generate(&spec, &dir.path().join("data")).unwrap();
    assert_eq!(files.len(), 3);
    let pool = Dataset::load(&files[0]).unwrap();
    assert_eq!(pool.len(), expected.pool.len());
    assert_eq!((pool.num_classes, pool.feature_dim), (4, 6));
    let labels = |d: &Dataset| d.examples.iter().map(|e| e.label).collect::<Vec<_>>();
    assert_eq!(labels(&pool), labels(&expected.pool));

    let single = dir.path().join("all.pkem");
    generate(&spec, &single).unwrap();
    assert_eq!(Dataset::load(&single).unwrap().len(), 620);

    let again = dir.path().join("again.pkem");
    generate(&spec, &again).unwrap();
    assert_eq!(fs::read(&single).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn file_sources_match_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(AcquisitionMethod::PeaksV);
    let SourceConfig::Synthetic(spec) = &cfg.source else { unreachable!() };
    generate(spec, &dir.path().join("data")).unwrap();
    let on_files = ExperimentConfig {
        source: SourceConfig::Files {
            pool: dir.path().join("data/pool.pkem"),
            validation: dir.path().join("data/validation.pkem"),
            test: dir.path().join("data/test.pkem"),
        },
        ..cfg.clone()
    };
    let a = run(&cfg, &dir.path().join("a")).unwrap();
    let b = run(&on_files, &dir.path().join("b")).unwrap();
    assert_eq!(a.selected_ids, b.selected_ids);
    assert_eq!(a.final_test_accuracy, b.final_test_accuracy);
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let summary = run(&small_config(AcquisitionMethod::Peaks), &out).unwrap();
    assert!(summary.complete);
    assert_eq!(summary.selected_ids.len(), 80);
    for f in [
        "config.json",
        "result.json",
        "meta.json",
        "candidates.csv",
        "accuracy.csv",
        "selected.csv",
        "usage.csv",
        "model_init.pkwt",
        "model_final.pkwt",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let header = fs::read_to_string(out.join("candidates.csv")).unwrap();
    assert!(header.starts_with("step,id,score,percentile,accepted"));

    let reloaded = ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(reloaded, small_config(AcquisitionMethod::Peaks));
}

#[test]
fn exhausted_run_fails_but_keeps_partial_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(AcquisitionMethod::Random);
    cfg.source = SourceConfig::Synthetic(SyntheticSpec { pool_size: 60, ..small_spec(3) });
    cfg.ids.selection_rate = 100.0;
    let out = dir.path().join("run");
    let err = run(&cfg, &out).unwrap_err();
    assert!(format!("{err:#}").contains("exhausted"), "{err:#}");
    let selected = fs::read_to_string(out.join("selected.csv")).unwrap();
    assert_eq!(selected.lines().count(), 61);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(summary["complete"], false);
}

fn sweep_config() -> ExperimentConfig {
    let mut cfg = small_config(AcquisitionMethod::Peaks);
    cfg.sweep.methods = vec![AcquisitionMethod::Random, AcquisitionMethod::Peaks];
    cfg.sweep.budgets = vec![60, 80];
    cfg.sweep.seeds = vec![1, 2];
    cfg
}

#[test]
fn sweep_covers_the_grid_regardless_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let (serial, parallel) = (dir.path().join("serial"), dir.path().join("parallel"));
    let cells = sweep(&sweep_config(), &serial, 1).unwrap();
    sweep(&sweep_config(), &parallel, 4).unwrap();

    let runs = fs::read_dir(&serial).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 8);
    assert!(serial.join("random_k60_s1/result.json").is_file());
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|c| c.runs == 2 && c.completed == 2));
    let summary = fs::read_to_string(serial.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);

    assert_eq!(tree(&serial), tree(&parallel));
}

#[test]
fn overlap_of_one_run_is_a_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run(&small_config(AcquisitionMethod::Peaks), &out).unwrap();
    let written = analyze(&out, Analysis::Overlap, &dir.path().join("a"), &AnalyzeOptions::default()).unwrap();
    let acquired = fs::read_to_string(&written[0]).unwrap();
    let rows: Vec<&str> = acquired.lines().collect();
    assert_eq!(rows, vec!["run,run", "run,1"]);
}

#[test]
fn traces_tolerate_an_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run(&small_config(AcquisitionMethod::Peaks), &out).unwrap();
    fs::write(out.join("candidates.csv"), "step,id,score,percentile,accepted,label,raw_score\n").unwrap();
    let written = analyze(&out, Analysis::Traces, &dir.path().join("a"), &AnalyzeOptions::default()).unwrap();
    assert_eq!(written.len(), 2);
    assert_eq!(fs::read_to_string(&written[0]).unwrap(), "index,score\n");
    assert_eq!(fs::read_to_string(&written[1]).unwrap(), "index,rate\n");
}

#[test]
fn rankcorr_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(AcquisitionMethod::Peaks);
    let summary = run(&cfg, &out).unwrap();
    let opts = AnalyzeOptions { sample: 200, ..Default::default() };
    let written = analyze(&out, Analysis::Rankcorr, &dir.path().join("a"), &opts).unwrap();

    let splits = cfg.source.build().unwrap();
    let model = LinearSoftmax::read_checkpoint(File::open(out.join("model_init.pkwt")).unwrap()).unwrap();
    let sample: Vec<&Example> =
        splits.pool.examples.iter().filter(|e| !summary.initial_ids.contains(&e.id)).take(200).collect();
    let rc = rank_correlation(&model, &sample, &ClassPrototypes::compute(&splits.validation)).unwrap();

    let mut r = csv::Reader::from_path(&written[0]).unwrap();
    for (row, expected) in r.records().zip(&rc.matrix) {
        let row = row.unwrap();
        for (cell, want) in row.iter().skip(1).zip(expected) {
            assert_eq!(cell.parse::<f64>().ok(), *want);
        }
    }
    assert_eq!(rc.matrix[0][1], Some(1.0));
}

#[test]
fn usage_and_noise_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = small_config(AcquisitionMethod::Peaks);
    cfg.source = SourceConfig::Synthetic(SyntheticSpec { label_noise: 0.3, ..small_spec(3) });
    run(&cfg, &out).unwrap();
    let a = dir.path().join("a");
    analyze(&out, Analysis::Usage, &a, &AnalyzeOptions::default()).unwrap();
    assert!(fs::read_to_string(a.join("usage_summary.csv")).unwrap().starts_with("run,examples,mean,variance,std\n"));
    analyze(&out, Analysis::Noise, &a, &AnalyzeOptions::default()).unwrap();
    let noise = fs::read_to_string(a.join("noise.csv")).unwrap();
    assert_eq!(noise.lines().count(), 3);

    let cands = read_candidates_csv(File::open(out.join("candidates.csv")).unwrap()).unwrap();
    assert!(!cands.is_empty());
}

#[test]
fn shipped_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/longtail.json");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.methods().len(), 4);
    assert_eq!(cfg.ids.delta(), 5);
}
