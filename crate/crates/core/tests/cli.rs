use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ramap_forge::dataset::{DatasetManifest, Split};
use ramap_forge::diffusion::checkpoint::{decode_checkpoint, encode_checkpoint};
use ramap_forge::diffusion::{AdamState, Denoiser, DenoiserSpec};
use ramap_forge::eval::parse_report_csv;
use ramap_forge::io::{read_confmap, read_ramap};
use ramap_forge::{RadarGeometry, SeededRng};

const BIN: &str = env!("CARGO_BIN_EXE_ramap-forge");

fn small_config(dir: &Path) -> PathBuf {
    let g = RadarGeometry::new(32, 32, 50.0, 60f64.to_radians()).unwrap();
    let path = dir.join("run.json");
    let text = format!(
        "{{\"seed\": 9, \"geometry\": {}, \"optimizer\": {{\"lr\": 0.001}}}}",
        serde_json::to_string(&g).unwrap()
    );
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn simulate(cfg: &Path, out: &Path, frames: usize) {
    ok(run(cfg, &["simulate", "--frames", &frames.to_string(), "--out", s(out)]));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"sed\": 1}").unwrap();
    assert_eq!(run(&bad, &["simulate", "--out", s(tmp.path())]).status.code(), Some(2));

    let cfg = small_config(tmp.path());
    assert_eq!(run(&cfg, &["simulate"]).status.code(), Some(2), "missing --out");
    assert_eq!(run(&cfg, &["no-such-command"]).status.code(), Some(2));
    let missing = tmp.path().join("nope.csv");
    let out = run(&cfg, &["train", "--manifest", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn stdout_reports_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = ok(run(&cfg, &["simulate", "--frames", "0", "--out", s(tmp.path())]));
    let text = String::from_utf8(out.stdout).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("config_hash=") && first.ends_with("seed=9"), "{first}");
}

#[test]
fn simulate_zero_frames_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("data");
    simulate(&cfg, &out, 0);
    let m = DatasetManifest::load(out.join("manifest.csv")).unwrap();
    assert!(m.is_empty());
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&cfg, &a, 16);
    simulate(&cfg, &b, 16);
    let (fa, fb) = (files(&a), files(&b));
    // config.json records the output directory
    let strip = |m: BTreeMap<PathBuf, Vec<u8>>| {
        m.into_iter().filter(|(k, _)| k != Path::new("config.json")).collect::<BTreeMap<_, _>>()
    };
    assert_eq!(strip(fa), strip(fb));
    let m = DatasetManifest::load(a.join("manifest.csv")).unwrap();
    assert_eq!(m.len(), 16);
    assert_eq!(m.split(Split::Test).count(), 3);
}

#[test]
fn confmap_from_annotation_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "frame_id,range_m,azimuth_rad,class_name\n").unwrap();
    let out = tmp.path().join("c1");
    ok(run(&cfg, &["confmap", "--annotations", s(&empty), "--frames", "f0", "--out", s(&out)]));
    let c = read_confmap(out.join("f0.cnfm")).unwrap();
    assert!(c.channels().iter().all(|ch| ch.max_value() == 0.0));

    let scene = tmp.path().join("scene.csv");
    fs::write(
        &scene,
        "frame_id,x_m,y_m,class_name\nf1,-2.0,8.0,pedestrian\nf1,6.0,25.0,car\n",
    )
    .unwrap();
    let out = tmp.path().join("c2");
    ok(run(&cfg, &["confmap", "--annotations", s(&scene), "--out", s(&out)]));
    let c = read_confmap(out.join("f1.cnfm")).unwrap();
    assert_eq!(c.nonzero_channels(), vec![0, 2]);
    let first = fs::read(out.join("f1.cnfm")).unwrap();
    ok(run(&cfg, &["confmap", "--annotations", s(&scene), "--out", s(&out)]));
    assert_eq!(fs::read(out.join("f1.cnfm")).unwrap(), first);
}

#[test]
fn train_zero_epochs_saves_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&cfg, &data, 8);
    let ckpt = tmp.path().join("m/init.dnsr");
    ok(run(&cfg, &["train", "--manifest", s(&data.join("manifest.csv")), "--checkpoint", s(&ckpt), "--epochs", "0"]));
    let net = Denoiser::new(DenoiserSpec::default(), &mut SeededRng::derive(9, &[2])).unwrap();
    let expect = encode_checkpoint(&net, &AdamState::new(net.param_count()));
    assert_eq!(fs::read(&ckpt).unwrap(), expect);
    let loss = fs::read_to_string(tmp.path().join("m/loss.csv")).unwrap();
    assert_eq!(loss, "step,total,mse,tcr\n");
}

#[test]
fn train_synth_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&cfg, &data, 12);
    let manifest = data.join("manifest.csv");
    let model = tmp.path().join("model");
    ok(run(&cfg, &["train", "--manifest", s(&manifest), "--max-steps", "7", "--out", s(&model)]));
    let loss = fs::read_to_string(model.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 7);
    let (_, state) = decode_checkpoint(&fs::read(model.join("checkpoint.dnsr")).unwrap()).unwrap();
    assert_eq!(state.step, 7);

    let ckpt = model.join("checkpoint.dnsr");
    let (p1, p2) = (tmp.path().join("p1"), tmp.path().join("p2"));
    let conf_dir = data.join("confmap");
    ok(run(&cfg, &["synth", "--checkpoint", s(&ckpt), "--confmaps", s(&conf_dir), "--out", s(&p1)]));
    ok(run(&cfg, &["synth", "--checkpoint", s(&ckpt), "--confmaps", s(&conf_dir), "--out", s(&p2)]));
    let (f1, f2) = (files(&p1), files(&p2));
    assert_eq!(f1.len(), 12);
    assert_eq!(f1, f2);
    let sample = read_ramap(p1.join("campus_road_00000.ramap")).unwrap();
    assert_eq!(sample.grid().shape(), (32, 32));

    let report = tmp.path().join("r/report.csv");
    ok(run(&cfg, &["eval", "--pred", s(&p1), "--manifest", s(&manifest), "--report", s(&report)]));
    let parsed = parse_report_csv(&fs::read_to_string(&report).unwrap()).unwrap();
    let mean = parsed[&("overall".into(), "psnr".into(), "mean".into())].unwrap();
    assert!(mean.is_finite() && mean > 0.0);
    assert!(tmp.path().join("r/report.txt").exists());
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&cfg, &data, 12);
    let manifest_path = data.join("manifest.csv");
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    let mut dets = String::from("frame_id,range_m,azimuth_rad,class_name\n");
    for e in manifest.split(Split::Test) {
        fs::copy(&e.ramap_path, pred.join(format!("{}.ramap", e.frame_id))).unwrap();
        let text = fs::read_to_string(&e.annotation_path).unwrap();
        dets.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
    }
    fs::write(pred.join("detections.csv"), dets).unwrap();
    let report = tmp.path().join("report.csv");
    let out = ok(run(&cfg, &["eval", "--pred", s(&pred), "--manifest", s(&manifest_path), "--report", s(&report)]));
    assert!(String::from_utf8(out.stdout).unwrap().contains("overall"));
    let parsed = parse_report_csv(&fs::read_to_string(&report).unwrap()).unwrap();
    let key = |a: &str, b: &str| ("overall".to_string(), a.to_string(), b.to_string());
    assert_eq!(parsed[&key("all", "mAP")], Some(1.0));
    assert_eq!(parsed[&key("psnr", "mean")], Some(f64::INFINITY));
}

#[test]
fn render_picks_format_from_magic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&cfg, &data, 4);
    let id = "parking_lot_00000";
    let pgm = tmp.path().join("map.pgm");
    let ppm = tmp.path().join("conf.ppm");
    ok(run(&cfg, &["render", s(&data.join(format!("ramap/{id}.ramap"))), s(&pgm)]));
    ok(run(&cfg, &["render", s(&data.join(format!("confmap/{id}.cnfm"))), s(&ppm)]));
    assert!(fs::read(&pgm).unwrap().starts_with(b"P5\n32 32\n255\n"));
    assert!(fs::read(&ppm).unwrap().starts_with(b"P6\n32 32\n255\n"));
    let junk = tmp.path().join("junk.bin");
    fs::write(&junk, b"not a map").unwrap();
    assert_eq!(run(&cfg, &["render", s(&junk), s(&pgm)]).status.code(), Some(3));
}
