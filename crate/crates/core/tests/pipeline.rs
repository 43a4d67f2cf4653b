mod common;

use std::collections::BTreeMap;

use common::{small_synth, tiny_experiment, tiny_unet};
use meltpool::geometry::{contour_to_sdf, GridSpec, MeltPoolContour, Point, SdfGrid};
use meltpool::ingest::{DatasetManifest, Domain, ProcessParams, TrackManifest};
use meltpool::metrics::{r_squared, Intersection};
use meltpool::model::Checkpoint;
use meltpool::pipeline::{
    export_embeddings, finetune_experiment, generate_hatch_dataset, hatch_analyze, init_model, mean_loss,
    score_predictions, sequence_length_sweep, split_by_params, split_combos, train_experiment, train_model, Combo,
    Dataset, EpochLog, ExperimentConfig, HatchManifest, HatchSynthConfig, PreparedTrack,
};
use meltpool::synthdata::generate_grid_dataset;
use meltpool::Error;
use proptest::prelude::*;

fn track(id: usize, p: f64, v: f64) -> TrackManifest {
    TrackManifest {
        track_id: format!("t{id}"),
        power_w: p,
        velocity_m_s: v,
        exposure_us: 20.0,
        frame_rate_fps: 22500.0,
        frame_paths: vec![],
        contour_paths: vec![],
        hatch_spacing_um: None,
        pixel_pitch_um: 5.6,
        format: Default::default(),
        sdf_path: None,
    }
}

#[test]
fn forty_combos_split_thirty_ten() {
    let tracks = (0..40)
        .map(|i| track(i, 130.0 + 30.0 * (i / 5) as f64, 0.3 + 0.2 * (i % 5) as f64))
        .collect();
    let m = DatasetManifest::new(Domain::Clean, GridSpec::default(), tracks);
    let s = split_by_params(&m, 0.75, 11).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (30, 10));
    assert!(split_by_params(&m, 1.0, 11).unwrap().test.is_empty());
}

fn fake_dataset(combos: &[(f64, f64)], frames: usize) -> Dataset {
    let grid = GridSpec::default();
    let contour = MeltPoolContour::new(vec![Point::new(-40.0, 0.0), Point::new(0.0, 50.0), Point::new(40.0, 0.0)]).unwrap();
    let target = contour_to_sdf(&contour, &grid, 100.0).unwrap();
    let tracks = combos
        .iter()
        .enumerate()
        .map(|(i, &(p, v))| PreparedTrack {
            track_id: format!("t{i}"),
            params: ProcessParams::new(p, v, 20.0).unwrap(),
            frames: vec![vec![0.0; 64 * 64]; frames],
            target: target.clone(),
            contour: contour.clone(),
        })
        .collect();
    Dataset {
        tracks,
        grid,
        truncation_um: 100.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every window lies on exactly one side, whatever the number of tracks
    /// per combination.
    #[test]
    fn windows_never_straddle_the_split(
        picks in prop::collection::vec((0usize..4, 0usize..3, 3usize..9), 6..30),
        fraction in 0.3f64..1.0,
        seed in any::<u64>(),
        m in 1usize..4,
    ) {
        let combos: Vec<(f64, f64)> = picks.iter().map(|&(a, b, _)| (100.0 + 50.0 * a as f64, 0.5 + 0.3 * b as f64)).collect();
        let distinct: std::collections::BTreeSet<_> = combos.iter().map(|c| (c.0.to_bits(), c.1.to_bits())).collect();
        prop_assume!(distinct.len() >= 4);
        let mut data = fake_dataset(&combos, 1);
        for (t, &(_, _, n)) in data.tracks.iter_mut().zip(&picks) {
            t.frames = vec![vec![0.0; 64 * 64]; n];
        }
        let split = split_combos(&data.combos(), fraction, seed).unwrap();
        let train = data.windows(&data.tracks_of(&split.train), m, 1);
        let test = data.windows(&data.tracks_of(&split.test), m, 1);
        let all = data.windows(&(0..data.tracks.len()).collect::<Vec<_>>(), m, 1);
        prop_assert_eq!(train.len() + test.len(), all.len());
        for w in &train {
            prop_assert!(!test.contains(w));
            let c = data.tracks[w.track].combo();
            prop_assert!(!split.test.contains(&c));
        }
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let data = fake_dataset(&[(200.0, 1.0), (300.0, 1.0), (300.0, 0.5)], 3);
    let windows = data.windows(&[0, 1, 2], 2, 1);
    let preds: Vec<SdfGrid> = windows.iter().map(|w| data.tracks[w.track].target.clone()).collect();
    let r = score_predictions(&data, &windows, &preds).unwrap();
    assert_eq!(r.windows.samples.len(), 6);
    assert_eq!(r.combos.samples.len(), 3);
    assert_eq!(r.windows.aggregates.mean_iou, 1.0);
    // Contours traced back from the raster agree to within one pixel diagonal.
    let diag = data.grid.diagonal_um();
    assert!(r.windows.aggregates.mean_hausdorff_um.unwrap() <= diag);
    assert!(r.windows.aggregates.mean_contour_mae_um.unwrap() <= diag);
}

fn generated(domain: Domain, np: usize, nv: usize, frames: usize) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    generate_grid_dataset(&small_synth(domain, np, nv, frames, 5), dir.path()).unwrap();
    let data = Dataset::load_path(&dir.path().join("manifest.json"), 0).unwrap();
    (dir, data)
}

#[test]
fn one_epoch_reduces_loss_and_is_reproducible() {
    let (_dir, data) = generated(Domain::Clean, 2, 1, 2);
    let cfg = ExperimentConfig {
        epochs: 1,
        batch_size: 1,
        learning_rate: 3e-3,
        ..tiny_experiment(2, 1)
    };
    let windows = data.windows(&[0, 1], 2, 1);
    let model = init_model(&cfg).unwrap();
    let before = mean_loss(&model, &data, &windows, 2, 2).unwrap();
    let run = |model| train_model(model, &data, &windows, &windows, &cfg, 1, &mut |_: &EpochLog| {}).unwrap();
    let a = run(model.clone());
    let after = mean_loss(&a.model, &data, &windows, 2, 2).unwrap();
    assert!(after < before, "{after} !< {before}");
    let b = run(model);
    assert_eq!(a.history.len(), 1);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!((x.train_mse - y.train_mse).abs() <= 1e-6);
        assert!((x.val_mse.unwrap() - y.val_mse.unwrap()).abs() <= 1e-6);
    }
}

#[test]
fn zero_learning_rate_leaves_weights_bitwise() {
    let (_dir, data) = generated(Domain::Clean, 2, 1, 2);
    let cfg = ExperimentConfig {
        learning_rate: 0.0,
        weight_decay: 1e-3,
        dropout: 0.1,
        ..tiny_experiment(2, 2)
    };
    let model = init_model(&cfg).unwrap();
    let windows = data.windows(&[0, 1], 2, 1);
    let out = train_model(model.clone(), &data, &windows, &[], &cfg, 2, &mut |_| {}).unwrap();
    for ((_, a), (_, b)) in model.params().iter().zip(out.model.params().iter()) {
        let (a, b): (Vec<u32>, Vec<u32>) = (a.data().iter().map(|v| v.to_bits()).collect(), b.data().iter().map(|v| v.to_bits()).collect());
        assert_eq!(a, b);
    }
}

#[test]
fn diverging_training_reports_numerical_failure() {
    let (_dir, data) = generated(Domain::Clean, 2, 1, 2);
    let cfg = ExperimentConfig {
        learning_rate: 1e30,
        epochs: 4,
        batch_size: 1,
        ..tiny_experiment(2, 3)
    };
    let windows = data.windows(&[0, 1], 2, 1);
    let err = train_model(init_model(&cfg).unwrap(), &data, &windows, &[], &cfg, 4, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn experiment_report_matches_its_samples() {
    let (dir, data) = generated(Domain::Noisy, 2, 2, 3);
    let cfg = ExperimentConfig {
        epochs: 2,
        split_fraction: 0.5,
        ..tiny_experiment(2, 4)
    };
    let e = train_experiment(&cfg, &data, &mut |_| {}).unwrap();
    assert_eq!(e.outcome.history.len(), 2);
    let report = e.report.clone().unwrap();
    // Two test combinations, two windows each.
    assert_eq!(report.windows.samples.len(), 4);
    assert_eq!(report.combos.samples.len(), 2);

    let out = dir.path().join("run");
    e.save(&out, &data, cfg.seed, None).unwrap();
    let mut rd = csv::Reader::from_path(out.join("eval/samples.csv")).unwrap();
    let hdr = rd.headers().unwrap().clone();
    let col = |name: &str| hdr.iter().position(|h| h == name).unwrap();
    let (ga, pa) = (col("gt_area_um2"), col("pred_area_um2"));
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    let gt: Vec<f64> = rows.iter().map(|r| r[ga].parse().unwrap()).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r[pa].parse().unwrap()).collect();
    match (r_squared(&gt, &pred), report.windows.aggregates.pearson_r2_area) {
        (Ok(a), Some(b)) => assert!((a - b).abs() < 1e-9),
        (Err(_), None) => {}
        other => panic!("mismatch {other:?}"),
    }

    let ckpt = Checkpoint::load(&out.join("checkpoint.mpck")).unwrap();
    assert_eq!(ckpt.meta.grid, Some(data.grid));
    assert_eq!(ckpt.meta.loss_history.len(), 2);

    // Fine-tuning starts from the checkpoint; a different layout is refused.
    let ft = ExperimentConfig {
        finetune_fraction: 0.5,
        ..cfg.clone()
    };
    let tuned = finetune_experiment(&ft, &data, &ckpt, 1, &mut |_| {}).unwrap();
    assert_eq!(tuned.trained_on.len(), 1);
    assert_eq!(tuned.trained_on, finetune_experiment(&ft, &data, &ckpt, 1, &mut |_| {}).unwrap().trained_on);
    let other = ExperimentConfig {
        model: tiny_unet(64),
        ..cfg.clone()
    };
    assert!(matches!(
        finetune_experiment(&other, &data, &ckpt, 1, &mut |_| {}),
        Err(Error::Checkpoint(_))
    ));

    // Embeddings: one row per window, identical across exports.
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let n = export_embeddings(&e.outcome.model, &data, Some(&e.split), 2, 1, 3, &a).unwrap();
    export_embeddings(&e.outcome.model, &data, Some(&e.split), 2, 1, 3, &b).unwrap();
    assert_eq!(n, 8);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().next().unwrap().starts_with("track_id,window_start,side,power_w,velocity_m_s,energy_density_j_m,t0,"));
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn identical_windows_embed_identically() {
    let (dir, data) = generated(Domain::Clean, 2, 2, 3);
    let cfg = tiny_experiment(2, 6);
    let path = dir.path().join("e.csv");
    export_embeddings(&init_model(&cfg).unwrap(), &data, None, 2, 1, 4, &path).unwrap();
    let mut by_track: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in std::fs::read_to_string(&path).unwrap().lines().skip(1) {
        let (id, rest) = line.split_once(',').unwrap();
        let tokens = rest.splitn(6, ',').nth(5).unwrap().to_string();
        by_track.entry(id.to_string()).or_default().push(tokens);
    }
    for rows in by_track.values() {
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], rows[1]);
    }
}

#[test]
fn sweep_emits_one_row_per_length() {
    let (_dir, data) = generated(Domain::Clean, 2, 2, 3);
    let mut cfg = tiny_experiment(1, 7);
    cfg.split_fraction = 0.5;
    cfg.sweep.lengths = vec![1, 3];
    let rows = sequence_length_sweep(&cfg, &data, &mut |_| {}).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![1.0, 3.0]);
    assert!(rows.iter().all(|r| r.contour_mae_um.is_some() || r.mean_iou >= 0.0));
    assert_eq!(rows, sequence_length_sweep(&cfg, &data, &mut |_| {}).unwrap());
}

#[test]
fn hatch_ground_truth_overlap_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(Domain::Clean, 1, 1, 2, 8);
    let hatch = HatchSynthConfig {
        combos: vec![[250.0, 0.8]],
        spacing_factors: vec![0.01, 2.0],
        hatches: 3,
    };
    let grid = GridSpec {
        rows: 64,
        cols: 64,
        pitch_x_um: 4.0,
        pitch_d_um: 2.0,
    };
    let manifest = generate_hatch_dataset(&synth, &hatch, grid, dir.path()).unwrap();
    assert!(matches!(
        generate_hatch_dataset(&synth, &hatch, grid, dir.path()),
        Err(Error::PathCollision(_))
    ));
    let loaded = HatchManifest::load(&dir.path().join("hatch_manifest.json")).unwrap();
    assert_eq!(loaded.groups, manifest.groups);

    let model = init_model(&tiny_experiment(2, 9)).unwrap();
    let report = hatch_analyze(&model, &loaded, 2, 0, 4).unwrap();
    assert_eq!(report.pairs.len(), 4);
    for p in &report.pairs[..2] {
        let d = p.ground_truth.unwrap().distance_um().unwrap();
        assert!(d < 1.0, "near-coincident hatches overlap almost fully, got {d}");
    }
    for p in &report.pairs[2..] {
        assert_eq!(p.ground_truth, Some(Intersection::NoOverlap));
    }

    let mut single = loaded.clone();
    single.groups[0].tracks.truncate(1);
    assert!(matches!(hatch_analyze(&model, &single, 2, 0, 4), Err(Error::Validation(_))));
}

#[test]
fn combos_are_distinct_and_sorted() {
    let data = fake_dataset(&[(300.0, 1.0), (200.0, 1.0), (300.0, 1.0), (200.0, 0.5)], 1);
    let c = data.combos();
    assert_eq!(
        c,
        vec![
            Combo { power_w: 200.0, velocity_m_s: 0.5 },
            Combo { power_w: 200.0, velocity_m_s: 1.0 },
            Combo { power_w: 300.0, velocity_m_s: 1.0 },
        ]
    );
    assert_eq!(data.tracks_of(&c[2..]), vec![0, 2]);
}
