use std::path::Path;

use reloc_core::dataset::{Scene, Split, SyntheticSceneConfig};
use reloc_core::frustum::{bilateral_frustum_distances, FrustumDistances, frustum_overlap, CameraIntrinsics, DepthFrame};
use reloc_core::index::RetrievalIndex;
use reloc_core::losses::LossConfig;
use reloc_core::mining::{read_jsonl, MiningConfig, OverlapPair, Quadruplet};
use reloc_core::model::EncoderConfig;
use reloc_core::pose::{angular_distance, Pose, UnitQuaternion};
use reloc_core::train::{EvalReport, TrainSchedule};
use reloc_core::workflow::{self, MineOptions, TrainRequest};

#[test]
fn sideways_shift_over_a_flat_wall_matches_column_count() {
    let k = CameraIntrinsics::new(30.0, 30.0, 15.5, 11.5, 32, 24).unwrap();
    let z = 2.0;
    let wall = DepthFrame::from_depth(k, vec![z; 32 * 24]).unwrap();
    for dx in [0.0, 0.05, 0.35, 0.4, 1.0, -0.7, 2.2, 2.5] {
        let b = Pose::new([dx, 0.0, 0.0], UnitQuaternion::IDENTITY).unwrap();
        // Pixel column u lands on column u − fx·dx/z in the shifted camera.
        let shift = k.fx * dx / z;
        let cols = (0..32)
            .filter(|&u| {
                let up = u as f64 - shift;
                up >= -1e-9 && up < 32.0
            })
            .count();
        let got = frustum_overlap(&wall, &Pose::IDENTITY, &b, 1).unwrap();
        assert_eq!(got, cols as f64 / 32.0, "dx = {dx}");
    }
}

fn small_scene(root: &Path) -> std::path::PathBuf {
    let scene = root.join("scene");
    let config = SyntheticSceneConfig {
        seed: 21,
        n_database: 80,
        n_query: 12,
        ..Default::default()
    };
    assert_eq!(workflow::synth(&config, &scene).unwrap(), 92);
    scene
}

#[test]
fn mined_records_survive_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = small_scene(dir.path());
    let opts = MineOptions { mining: MiningConfig::default(), min_overlap: 0.3 };
    let summary = workflow::mine(&scene_dir, &dir.path().join("mined"), &opts).unwrap();
    assert_eq!(summary.frames, 80);

    let scene = Scene::load(&scene_dir).unwrap();
    let frame = |id: &str| scene.find(id).unwrap().frame.clone();
    let depth = |id: &str| scene.load_depth(&frame(id)).unwrap();
    let stride = opts.mining.stride;

    let (header, pairs) = read_jsonl::<OverlapPair>(&dir.path().join("mined").join(workflow::PAIRS_FILE)).unwrap();
    assert_eq!(header.unwrap().min_overlap, 0.3);
    assert_eq!(pairs.len(), summary.pairs);
    for p in pairs.iter().step_by(7) {
        let (a, b) = (frame(&p.db), frame(&p.query));
        let FrustumDistances { d1, d2 } = bilateral_frustum_distances(&depth(&p.db), &a.pose, &depth(&p.query), &b.pose, stride).unwrap();
        let overlap = (1.0 - d1).min(1.0 - d2);
        assert!(overlap >= 0.3, "{p:?}");
        assert!((overlap - p.overlap).abs() < 1e-12);
    }

    let (_, quads) = read_jsonl::<Quadruplet>(&dir.path().join("mined").join(workflow::QUADRUPLETS_FILE)).unwrap();
    assert_eq!(quads.len(), summary.quadruplets);
    for q in &quads {
        let a = frame(&q.anchor);
        for (other, stats) in [(&q.easy, q.stats.easy), (&q.medium, q.stats.medium), (&q.hard, q.stats.hard)] {
            let b = frame(other);
            let FrustumDistances { d1, d2 } = bilateral_frustum_distances(&depth(&q.anchor), &a.pose, &depth(other), &b.pose, stride).unwrap();
            assert_eq!((d1, d2), (stats.d1, stats.d2));
            assert_eq!(angular_distance(&a.pose.q, &b.pose.q), stats.alpha);
        }
    }
}

#[test]
fn train_index_eval_artifacts_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let scene_dir = small_scene(root);
    let opts = MineOptions { mining: MiningConfig::default(), min_overlap: 0.3 };
    workflow::mine(&scene_dir, &root.join("mined"), &opts).unwrap();
    let req = TrainRequest {
        scene: scene_dir.clone(),
        records: root.join("mined").join(workflow::PAIRS_FILE),
        schedule: TrainSchedule { epochs: 2, max_samples: Some(100), ..TrainSchedule::desk_pretrain() },
        loss: LossConfig::default(),
        encoder: EncoderConfig::desk(),
        init_checkpoint: None,
        out_checkpoint: root.join("ckpt").join("pre.rfck"),
    };
    let (params, meta) = workflow::train(&req).unwrap();
    assert_eq!(meta.loss_curve.len(), 2);
    assert!(meta.samples > 100);
    assert_eq!(meta.schedule.max_samples, Some(100));
    let meta_text = std::fs::read_to_string(workflow::metadata_path(&req.out_checkpoint)).unwrap();
    let reread: workflow::RunMetadata = serde_json::from_str(&meta_text).unwrap();
    assert_eq!(reread, meta);
    assert_eq!(meta.full_model_params, params.full_model_params());

    let index_path = root.join("idx").join("index.rfix");
    let index = workflow::index(&scene_dir, &req.out_checkpoint, &index_path).unwrap();
    assert_eq!(index.len(), 80);
    assert_eq!(index.dim(), 64);
    assert_eq!(RetrievalIndex::load(&index_path).unwrap(), index);
    let scene = Scene::load(&scene_dir).unwrap();
    assert!(index.entries().iter().all(|e| scene.find(&e.frame_id).unwrap().split == Split::Train));

    let out = workflow::eval(&scene_dir, &req.out_checkpoint, &index_path, &root.join("eval")).unwrap();
    let json = std::fs::read_to_string(root.join("eval").join(workflow::REPORT_JSON_FILE)).unwrap();
    let text = std::fs::read_to_string(root.join("eval").join(workflow::REPORT_TEXT_FILE)).unwrap();
    let parsed: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, out.report);
    assert_eq!(text, parsed.render_text());
    assert_eq!(parsed.scenes[0].queries, 12);

    let loc = workflow::localize(&scene_dir, &req.out_checkpoint, &index_path, "seq-02/frame-000003", 4).unwrap();
    assert_eq!(loc.neighbors.len(), 4);
    assert_eq!(loc.neighbors[0].0, loc.localization.neighbor_id);
    assert!(loc.neighbors.windows(2).all(|w| w[0].1 <= w[1].1));
}
