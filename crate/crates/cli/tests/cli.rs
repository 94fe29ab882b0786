use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reloc_core::model::{load_checkpoint, ParamGroup};

fn reloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reloc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = reloc(args);
    assert!(
        out.status.success(),
        "reloc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path → file bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct Prepared {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Prepared {
    fn scene(&self) -> PathBuf {
        self.root.join("scene")
    }
    fn mined(&self, file: &str) -> PathBuf {
        self.root.join("mined").join(file)
    }
}

fn prepare(seed: &str) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let scene = root.join("scene");
    ok(&["synth", "--out", s(&scene), "--seed", seed, "--frames", "60", "--queries", "8"]);
    ok(&["mine", "--scene", s(&scene), "--out", s(&root.join("mined")), "--seed", seed]);
    Prepared { _dir: dir, root }
}

fn pretrain(p: &Prepared, extra: &[&str]) -> PathBuf {
    let out = p.root.join("pre");
    let pairs = p.mined("pairs.jsonl");
    let scene = p.scene();
    let mut args = vec![
        "train", "--scene", s(&scene), "--pairs", s(&pairs), "--out", s(&out),
        "--phase", "pretrain", "--epochs", "2",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("pretrain.rfck")
}

#[test]
fn synth_is_deterministic_and_honors_frame_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let stdout = ok(&["synth", "--out", s(d.path()), "--seed", "11", "--frames", "12", "--queries", "3"]);
        assert!(stdout.contains("15 frames"), "{stdout}");
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta, tb);
    let poses = ta.keys().filter(|p| p.to_string_lossy().ends_with(".pose.txt")).count();
    assert_eq!(poses, 15);

    let c = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", s(c.path()), "--seed", "12", "--frames", "12", "--queries", "3"]);
    assert_ne!(ta, tree(c.path()));
}

#[test]
fn mining_is_idempotent_and_echoes_thresholds() {
    let p = prepare("3");
    let first = tree(&p.root.join("mined"));
    ok(&["mine", "--scene", s(&p.scene()), "--out", s(&p.root.join("mined")), "--seed", "3"]);
    assert_eq!(first, tree(&p.root.join("mined")));
    let quads = std::fs::read_to_string(p.mined("quadruplets.jsonl")).unwrap();
    let header = quads.lines().next().unwrap();
    for key in ["0.4", "0.3", "0.6", "0.05", "0.25"] {
        assert!(header.contains(key), "{header}");
    }
}

#[test]
fn full_pipeline_masks_later_blocks() {
    let p = prepare("5");
    let pre = pretrain(&p, &["--seed", "5"]);
    let ft_dir = p.root.join("ft");
    ok(&[
        "train", "--scene", s(&p.scene()), "--pairs", s(&p.mined("quadruplets.jsonl")),
        "--out", s(&ft_dir), "--phase", "finetune", "--variant", "PL+PA+H",
        "--init", s(&pre), "--epochs", "2", "--seed", "5",
    ]);
    let ft = ft_dir.join("finetune.rfck");
    let (a, b) = (load_checkpoint(&pre).unwrap(), load_checkpoint(&ft).unwrap());
    let mut first_block_moved = false;
    for ((g, x), (_, y)) in a.tensors().into_iter().zip(b.tensors()) {
        match g {
            ParamGroup::Stage(k) | ParamGroup::PoseHead(k) if k > 0 => assert_eq!(x, y, "{g:?}"),
            ParamGroup::Stage(0) => first_block_moved |= x != y,
            _ => {}
        }
    }
    assert!(first_block_moved);

    let idx_dir = p.root.join("idx");
    let stdout = ok(&["index", "--scene", s(&p.scene()), "--checkpoint", s(&ft), "--out", s(&idx_dir)]);
    assert!(stdout.contains("indexed 60 frames, dim 64"), "{stdout}");
    let index = idx_dir.join("index.rfix");

    let eval_dir = p.root.join("eval");
    let report = ok(&["eval", "--scene", s(&p.scene()), "--checkpoint", s(&ft), "--index", s(&index), "--out", s(&eval_dir)]);
    assert!(eval_dir.join("report.json").is_file());
    assert_eq!(report, std::fs::read_to_string(eval_dir.join("report.txt")).unwrap());

    let loc = ok(&[
        "localize", "--scene", s(&p.scene()), "--checkpoint", s(&ft), "--index", s(&index),
        "--frame", "seq-02/frame-000000", "--k", "3",
    ]);
    assert_eq!(loc.lines().filter(|l| l.starts_with("neighbor")).count(), 3);
}

#[test]
fn zero_learning_rate_leaves_checkpoint_unchanged() {
    let p = prepare("7");
    let pre = pretrain(&p, &[]);
    let out = p.root.join("ft0");
    ok(&[
        "train", "--scene", s(&p.scene()), "--pairs", s(&p.mined("quadruplets.jsonl")),
        "--out", s(&out), "--phase", "finetune", "--variant", "PL+FTL",
        "--init", s(&pre), "--epochs", "2", "--lr", "0",
    ]);
    assert_eq!(
        std::fs::read(&pre).unwrap(),
        std::fs::read(out.join("finetune.rfck")).unwrap()
    );
}

#[test]
fn training_is_repeatable_across_thread_counts() {
    let p = prepare("9");
    let a = pretrain(&p, &["--seed", "9", "--threads", "1"]);
    let bytes_a = std::fs::read(&a).unwrap();
    let b = pretrain(&p, &["--seed", "9"]);
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
}

#[test]
fn unknown_variant_is_rejected() {
    let out = reloc(&[
        "train", "--scene", "x", "--pairs", "y", "--out", "z", "--phase", "finetune",
        "--variant", "PL+XX",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("PL+XX"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = reloc(&["mine", "--scene", s(&missing), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));

    let p = prepare("4");
    let out = reloc(&[
        "train", "--scene", s(&p.scene()), "--pairs", s(&p.mined("quadruplets.jsonl")),
        "--out", s(&p.root.join("ft")), "--phase", "finetune",
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrained checkpoint"));

    let out = reloc(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
}
