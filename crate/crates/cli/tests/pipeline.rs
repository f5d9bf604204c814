use std::fs;
use std::path::Path;
use std::process::Command;

use gdiff_cli::commands::{
    cmd_eval, cmd_sample, cmd_stream, cmd_synth, cmd_train, TrainFlags, CHECKPOINT_FILE, LOSS_FILE, MODEL_FILE,
};
use gdiff_cli::config::RunConfig;
use gdiff_cli::{run, EXIT_DATA, EXIT_USAGE};
use gdiff_core::io::{read_clips, MotionFile, MANIFEST};
use gdiff_core::net::SEED_FRAMES;
use gdiff_core::params::ParamStore;

const TINY: &str = "seed=5
template=CHAIN(4)
frames=16
n_clips=20
n_styles=2
period_min=4
period_max=6
hidden=8
blocks=2
style_dim=4
time_dim=4
steps=6
batch_size=2
lr=1e-3
enc_hidden=8
enc_latent=4
vae_steps=5
sample_steps=3
log_every=1
n_stream=3
";

fn tiny(dir: &Path) -> RunConfig {
    RunConfig::parse(TINY).unwrap().with("data", dir.join("data").display()).with("out", dir.join("data").display())
}

fn synth(dir: &Path) -> RunConfig {
    let cfg = tiny(dir);
    cmd_synth(&cfg).unwrap();
    cfg.with("out", dir.join("run").display())
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn synth_is_idempotent_and_rereadable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let m = cmd_synth(&cfg).unwrap();
    assert_eq!(m.rows.len(), 20);
    let data = dir.path().join("data");
    let first: Vec<Vec<u8>> = m.rows.iter().map(|r| fs::read(data.join(format!("{}.gdmo", r.name))).unwrap()).collect();
    let manifest = fs::read(data.join(MANIFEST)).unwrap();
    cmd_synth(&cfg).unwrap();
    assert_eq!(fs::read(data.join(MANIFEST)).unwrap(), manifest);
    for (r, bytes) in m.rows.iter().zip(&first) {
        assert_eq!(&fs::read(data.join(format!("{}.gdmo", r.name))).unwrap(), bytes);
        let f = MotionFile::from_bytes(bytes).unwrap();
        assert_eq!(f.motion.channels(), 4 * 6 + 3);
        assert_eq!(&f.to_bytes(), bytes);
    }
}

#[test]
fn ablation_flags_zero_their_terms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let flags = TrainFlags { no_lj: true, no_ls: true, no_lm: true, ..TrainFlags::default() };
    cmd_train(&cfg, flags).unwrap();
    let rows = read_csv(&dir.path().join("run").join(LOSS_FILE));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        // step,simple,pos,j,s,m,total
        assert_eq!((r[3], r[4], r[5]), (0.0, 0.0, 0.0));
        assert!(r[1] > 0.0 && r[2] > 0.0);
        assert!((r[6] - r[1] - r[2]).abs() < 1e-12);
    }
    cmd_train(&cfg, TrainFlags::default()).unwrap();
    let rows = read_csv(&dir.path().join("run").join(LOSS_FILE));
    assert!(rows.iter().all(|r| r[3] > 0.0 && r[4] > 0.0 && r[5] > 0.0));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let full = cfg.clone().with("out", dir.path().join("full").display());
    cmd_train(&full, TrainFlags::default()).unwrap();
    let split = cfg.clone().with("out", dir.path().join("split").display());
    cmd_train(&split.clone().with("steps", 3), TrainFlags::default()).unwrap();
    cmd_train(&split, TrainFlags { resume: true, ..TrainFlags::default() }).unwrap();
    for file in [MODEL_FILE, CHECKPOINT_FILE, LOSS_FILE] {
        let a = fs::read(dir.path().join("full").join(file)).unwrap();
        let b = fs::read(dir.path().join("split").join(file)).unwrap();
        assert!(a == b, "{file} differs after resume");
    }
}

#[test]
fn sample_stream_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    cmd_train(&cfg, TrainFlags::default()).unwrap();
    let model = dir.path().join("run").join(MODEL_FILE);
    let params = ParamStore::load(&model).unwrap();
    assert_eq!(ParamStore::from_bytes(&params.to_bytes()).unwrap().to_bytes(), fs::read(&model).unwrap());

    let sampling = cfg.clone().with("model", model.display());
    let a = sampling.clone().with("out", dir.path().join("a").display());
    let b = sampling.clone().with("out", dir.path().join("b").display());
    let names = cmd_sample(&a).unwrap();
    cmd_sample(&b).unwrap();
    assert_eq!(names.len(), 2);
    for n in &names {
        let f = format!("{n}.gdmo");
        assert_eq!(fs::read(dir.path().join("a").join(&f)).unwrap(), fs::read(dir.path().join("b").join(&f)).unwrap());
    }
    let other = cmd_sample(&sampling.clone().with("seed", 6).with("out", dir.path().join("c").display())).unwrap();
    assert_eq!(other.len(), 2);
    assert_ne!(
        fs::read(dir.path().join("a").join("sample_00000.gdmo")).unwrap(),
        fs::read(dir.path().join("c").join("sample_00000.gdmo")).unwrap()
    );

    let out = dir.path().join("stream.gdmo");
    let s = cmd_stream(&sampling.clone().with("out", out.display())).unwrap();
    assert_eq!(s.frames(), 3 * (16 - SEED_FRAMES) + SEED_FRAMES);
    assert_eq!(MotionFile::load(&out).unwrap().motion, s);

    let data = dir.path().join("data");
    let same = sampling
        .clone()
        .with("gen", data.display())
        .with("gt", data.display())
        .with("out", dir.path().join("same.csv").display());
    let rows = cmd_eval(&same).unwrap();
    let get = |rows: &[(String, f64)], k: &str| rows.iter().find(|r| r.0 == k).unwrap().1;
    assert!(get(&rows, "fgd").abs() < 1e-6);
    assert_eq!(get(&rows, "beat_align"), get(&rows, "beat_align_gt"));
    assert_eq!(get(&rows, "diversity_gap"), 0.0);

    let csv = dir.path().join("metrics.csv");
    let gen =
        sampling.with("gen", dir.path().join("a").display()).with("gt", data.display()).with("out", csv.display());
    let rows = cmd_eval(&gen).unwrap();
    assert!(get(&rows, "fgd") > 0.0);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("metric,value\nfgd,"));
    assert_eq!(read_clips(&dir.path().join("a")).unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let code =
        run(["gdiff", "eval", "--seed", "1", "--gen", missing.to_str().unwrap(), "--gt", missing.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
    assert_eq!(run(["gdiff", "fkdemo", "--depth", "1"]), EXIT_USAGE);
    assert_eq!(run(["gdiff", "train", "--bogus", "1"]), EXIT_USAGE);
    assert_eq!(run(["gdiff", "synth", "--out", dir.path().join("x").to_str().unwrap()]), EXIT_USAGE);
    assert_eq!(run(["gdiff", "skeleton-gen", "--template", "OCTOPUS"]), EXIT_USAGE);

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed=1\nunknown_key=3\n").unwrap();
    assert_eq!(run(["gdiff", "synth", "--config", cfg.to_str().unwrap()]), EXIT_USAGE);

    let skel = dir.path().join("skel.txt");
    assert_eq!(run(["gdiff", "skeleton-gen", "--template", "chain(3)", "--out", skel.to_str().unwrap()]), 0);
    assert_eq!(fs::read_to_string(&skel).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn binary_reports_fkdemo_and_missing_dirs() {
    let bin = env!("CARGO_BIN_EXE_gdiff");
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fk.csv");
    let out =
        Command::new(bin).args(["fkdemo", "--depth", "10", "--epsilon", "0", "--out"]).arg(&csv).output().unwrap();
    assert!(out.status.success());
    let rows = read_csv(&csv);
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[1] == 0.0 && r[2] == 0.0));

    let out = Command::new(bin)
        .args(["eval", "--seed", "1", "--gen"])
        .arg(dir.path().join("missing"))
        .arg("--gt")
        .arg(dir.path())
        .env("GDIFF_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));

    let out = Command::new(bin).args(["fkdemo"]).env("GDIFF_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}
