use std::path::Path;

use dnq::codec::{compression_ratio, load_packed, unpack};
use dnq::net::{accuracy, load_checkpoint};
use dnq::pipeline::{
    cmd_eval, cmd_export, cmd_quantize, cmd_search, cmd_train, dataset, uniform_plan, PipelineConfig, RunManifest,
    SequenceFile,
};
use dnq::quant::BitWidth;

const TINY: &str = r#"
seed = 11

[data]
num_classes = 3
n_train = 120
n_eval = 60
input_shape = [2, 4, 4]
separation = 0.8

[model]
layers = [
    { kind = "conv2d", out_channels = 4, kernel = 3, padding = 1 },
    { kind = "conv2d", out_channels = 4, kernel = 3, stride = 2, padding = 1 },
    { kind = "dense", units = 8 },
    { kind = "dense", units = 3 },
]

[train]
steps = 150
lr = 0.05
batch_size = 20

[controller]
iterations = 15
batch = 3

[controller.reward]
mc_samples = 2
eval_samples = 60

[quantizer]
distance_clusters = 4

[quantizer.retrain]
steps = 20
lr = 0.05
batch_size = 20
"#;

fn tiny(dir: &Path, extra: &[&str]) -> PipelineConfig {
    let mut overrides = vec![format!("paths.dir={}", dir.display())];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    PipelineConfig::from_toml_str(TINY, &overrides).unwrap()
}

fn bw(b: u8) -> BitWidth {
    BitWidth::new(b).unwrap()
}

#[test]
fn train_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&tiny(a.path(), &[])).unwrap();
    cmd_train(&tiny(b.path(), &[])).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "float.dnq"), read(b.path(), "float.dnq"));
    assert_eq!(read(a.path(), "train_report.json"), read(b.path(), "train_report.json"));
}

#[test]
fn separable_two_class_baseline_is_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &["data.num_classes=2", "data.separation=2.0", "model.layers=[{kind=\"dense\",units=6},{kind=\"dense\",units=2}]"]);
    let s = cmd_train(&cfg).unwrap();
    assert!(s.eval_accuracy >= 0.95, "{}", s.eval_accuracy);
}

#[test]
fn missing_seed_is_rejected_with_message() {
    let text = TINY.replace("seed = 11", "");
    let err = PipelineConfig::from_toml_str(&text, &[]).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
}

#[test]
fn search_writes_a_full_valid_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    cmd_train(&cfg).unwrap();
    let s = cmd_search(&cfg, &cfg.paths.checkpoint()).unwrap();
    let model = load_checkpoint(&cfg.paths.checkpoint()).unwrap();
    let file = SequenceFile::load(&s.sequence_file).unwrap();
    // FC layers are fixed, so only the two convs are searched
    assert_eq!(file.sequence.0.len(), 2);
    assert_eq!(file.layers.len(), model.quantizable_layers().len());
    assert!(file.layers.iter().all(|e| (2..=8).contains(&e.bits.get())));
    assert!(file.layers.iter().filter(|e| !e.searched).all(|e| e.bits.get() == 3));
    assert_eq!(file.plan_for(&model).unwrap().len(), 4);
    let log = std::fs::read_to_string(cfg.paths.search_log()).unwrap();
    assert_eq!(log.lines().count(), 1 + 15);
}

#[test]
fn uniform_quantize_without_search_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    cmd_train(&cfg).unwrap();
    let model = load_checkpoint(&cfg.paths.checkpoint()).unwrap();
    let s = cmd_quantize(&cfg, &cfg.paths.checkpoint(), &uniform_plan(&model, bw(3))).unwrap();
    assert!(!cfg.paths.sequence().exists());
    assert_eq!(s.bits, vec![Some(3); 4]);

    let bytes = std::fs::read(&s.packed).unwrap();
    let p = unpack(&bytes).unwrap();
    assert_eq!(compression_ratio(&p.compression_spec().unwrap()), s.ratio);
    let data = dataset(&cfg).unwrap();
    assert_eq!(accuracy(&p.model, &data.eval).unwrap(), s.eval_accuracy);
    for layer in p.model.layers() {
        let mut distinct = layer.weight.data().to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert!(distinct.len() <= 5);
    }

    let r = cmd_eval(&cfg, &s.packed).unwrap();
    assert_eq!(r.accuracy, s.eval_accuracy);
    assert_eq!(r.ratio, s.ratio);

    let metrics = std::fs::read_to_string(cfg.paths.quant_metrics()).unwrap();
    let last = metrics.lines().last().unwrap();
    assert!(last.contains(",1.000000,"), "{last}");

    let out = dir.path().join("deq.dnq");
    cmd_export(&cfg, &s.packed, &out).unwrap();
    assert_eq!(load_checkpoint(&out).unwrap(), load_packed(&s.packed).unwrap().model);

    let m = RunManifest::load(&cfg.paths.manifest()).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    for stage in ["train", "quantize", "eval", "export"] {
        assert!(m.stages.contains_key(stage), "{stage}");
    }
}

#[test]
fn sequence_for_another_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    cmd_train(&cfg).unwrap();
    let mut plan = uniform_plan(&load_checkpoint(&cfg.paths.checkpoint()).unwrap(), bw(4));
    plan.layers.pop();
    assert!(cmd_quantize(&cfg, &cfg.paths.checkpoint(), &plan).is_err());
    assert!(!cfg.paths.packed().exists());
}

#[test]
fn corrupted_packed_file_leaves_no_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    cmd_train(&cfg).unwrap();
    let model = load_checkpoint(&cfg.paths.checkpoint()).unwrap();
    let s = cmd_quantize(&cfg, &cfg.paths.checkpoint(), &uniform_plan(&model, bw(4))).unwrap();
    let mut bytes = std::fs::read(&s.packed).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = dir.path().join("bad.dnqp");
    std::fs::write(&bad, &bytes).unwrap();
    assert!(cmd_eval(&cfg, &bad).is_err());
    assert!(!cfg.paths.eval_report().exists());
}

#[test]
fn full_pipeline_is_byte_deterministic() {
    let run = |dir: &Path| {
        let cfg = tiny(dir, &[]);
        cmd_train(&cfg).unwrap();
        let s = cmd_search(&cfg, &cfg.paths.checkpoint()).unwrap();
        let plan = SequenceFile::load(&s.sequence_file).unwrap();
        let q = cmd_quantize(&cfg, &cfg.paths.checkpoint(), &plan).unwrap();
        cmd_eval(&cfg, &q.packed).unwrap();
        cfg
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (run(a.path()), run(b.path()));
    for f in [
        "float.dnq",
        "train_report.json",
        "sequence.json",
        "search_log.csv",
        "model.dnqp",
        "quant_metrics.csv",
        "eval_report.json",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    // digests agree stage by stage once paths are made relative to the run directory
    let (ma, mb) = (
        RunManifest::load(&ca.paths.manifest()).unwrap(),
        RunManifest::load(&cb.paths.manifest()).unwrap(),
    );
    assert_eq!(ma.stages.keys().collect::<Vec<_>>(), mb.stages.keys().collect::<Vec<_>>());
    for (sa, sb) in ma.stages.values().zip(mb.stages.values()) {
        let da: Vec<_> = sa.outputs.values().collect();
        let db: Vec<_> = sb.outputs.values().collect();
        assert_eq!(da, db);
    }
}
