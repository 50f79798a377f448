use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use handfit::imaging::ColorImage;
use handfit::io::ParamsFile;
use handfit::model::toy::{toy_model, TOY_SEED};
use handfit::synth::synthetic_scene;
use serde_json::{json, Value};
use tempfile::TempDir;

const ITERS: usize = 5;

fn handfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handfit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// A 64x64 synthetic scene, its inputs and a short-schedule config.
    fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model(TOY_SEED);
        let scene = synthetic_scene(&model, seed, 64).unwrap();
        scene.image.save_png(dir.path().join("a.png")).unwrap();
        let flat: Vec<f64> = scene.keypoints.points.iter().flat_map(|p| [p[0], p[1], 1.0]).collect();
        write_json(&dir.path().join("a.json"), &json!({"people": [{"hand_right_keypoints_2d": flat}]}));
        write_json(&dir.path().join("k.json"), &serde_json::to_value(scene.intrinsics).unwrap());
        ParamsFile::from_state(&scene.truth).save(dir.path().join("gt.json")).unwrap();
        std::fs::write(dir.path().join("c.toml"), config("")).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn fit(&self, out: &str, extra: &[&str]) -> Output {
        let (img, kp, k, c, o) = (self.path("a.png"), self.path("a.json"), self.path("k.json"), self.path("c.toml"), self.path(out));
        let mut args = vec!["fit", "--image", p(&img), "--keypoints", p(&kp), "--intrinsics", p(&k), "--config", p(&c), "--out", p(&o)];
        args.extend_from_slice(extra);
        handfit(&args)
    }
}

fn config(extra: &str) -> String {
    format!(
        "schema = 1\nrender_size = 0\n{extra}\n[schedule.stage_a]\niterations = {ITERS}\n[schedule.stage_b]\niterations = {ITERS}\n[schedule.stage_c]\niterations = {ITERS}\n"
    )
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_artifacts_and_reproduces_params() {
    let f = Fixture::new(3);
    let o = f.fit("out1", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = f.path("out1");
    for name in ["params.json", "mesh.obj", "render.png", "silhouette.png", "energy_trace.csv", "report.json", "manifest.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }

    let trace = std::fs::read_to_string(out.join("energy_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert!(lines[0].starts_with("stage,iteration,lr,objective,loc,"));
    assert_eq!(lines.len(), 1 + 3 * ITERS);
    assert_eq!(lines[0].split(',').count(), 4 + 16);

    let report = read_json(&out.join("report.json"));
    assert_eq!(report["iterations"], 3 * ITERS);
    assert_eq!(report["width"], 64);
    assert!(report["final_objective"].as_f64().unwrap().is_finite());

    let obj = std::fs::read_to_string(out.join("mesh.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 778);

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["inputs"]["model"], "builtin");
    assert_eq!(manifest["inputs"]["image"]["sha256"].as_str().unwrap().len(), 64);

    let o = f.fit("out2", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = std::fs::read(out.join("params.json")).unwrap();
    let b = std::fs::read(f.path("out2").join("params.json")).unwrap();
    assert_eq!(a, b, "params.json differs between identical runs");
    let ma = read_json(&out.join("manifest.json"));
    let mb = read_json(&f.path("out2").join("manifest.json"));
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    assert_eq!(ma["inputs"], mb["inputs"]);
}

#[test]
fn render_and_evaluate_from_params() {
    let f = Fixture::new(4);
    let (gt, k, out) = (f.path("gt.json"), f.path("k.json"), f.path("rendered"));
    let o = handfit(&["render", "--params", p(&gt), "--intrinsics", p(&k), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["render.png", "silhouette.png", "mesh.obj"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    // The truth renders to the fixture image up to 8-bit quantization.
    let a = ColorImage::load(out.join("render.png")).unwrap();
    let b = ColorImage::load(f.path("a.png")).unwrap();
    assert_eq!(a, b);

    let report = f.path("eval/report.json");
    let o = handfit(&["evaluate", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&report);
    assert!(r["mpjpe_cm"].as_f64().unwrap() < 1e-6, "{r}");
    assert!(r["mpvpe_cm"].as_f64().unwrap() < 1e-6);
    assert_eq!(r["aligned"], true);
    assert_eq!(r["f5"], 1.0);

    // Joints-only ground truth, shifted by 1 cm along x.
    let model = toy_model(TOY_SEED);
    let truth = ParamsFile::load(&gt).unwrap().to_state().unwrap();
    let joints = handfit::model::decode(&model, &truth.params).unwrap().joints21;
    let shifted: Vec<[f64; 3]> = joints.iter().map(|j| [j.x + 0.01, j.y, j.z]).collect();
    let joints_file = f.path("joints.json");
    write_json(&joints_file, &json!({ "joints": shifted }));
    let o = handfit(&["evaluate", "--pred", p(&gt), "--gt", p(&joints_file), "--no-align", "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&report);
    assert!((r["mpjpe_cm"].as_f64().unwrap() - 1.0).abs() < 1e-9, "{r}");
    assert_eq!(r["mpvpe_cm"], Value::Null);
    let o = handfit(&["evaluate", "--pred", p(&gt), "--gt", p(&joints_file), "--out", p(&report)]);
    assert_eq!(code(&o), 0);
    assert!(read_json(&report)["mpjpe_cm"].as_f64().unwrap() < 1e-6);
}

#[test]
fn gradcheck_on_builtin_fixture_passes() {
    let o = handfit(&["gradcheck", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().next().unwrap().contains("rel_err"));
    assert!(!table.contains("FAIL"));
    for term in ["loc", "ori", "pixel", "ssim", "skel", "joints3d"] {
        assert!(table.lines().any(|l| l.starts_with(term)), "{term} missing");
    }
}

#[test]
fn bad_inputs_exit_2() {
    let f = Fixture::new(5);

    let short: Vec<f64> = (0..20 * 3).map(|i| i as f64).collect();
    write_json(&f.path("a.json"), &json!({"people": [{"hand_right_keypoints_2d": short}]}));
    let o = f.fit("out", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("a.json") && stderr(&o).contains("20"), "{}", stderr(&o));

    let f = Fixture::new(5);
    std::fs::write(f.path("c.toml"), config("bogus_key = 1")).unwrap();
    let o = f.fit("out", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));

    let f = Fixture::new(5);
    std::fs::remove_file(f.path("k.json")).unwrap();
    assert_eq!(code(&f.fit("out", &[])), 2);

    let f = Fixture::new(5);
    let o = f.fit("out", &["--bbox", "0,0,100,100"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(code(&f.fit("out", &["--joint-order", "weird"])), 2);

    let missing = f.path("nope.json");
    let o = handfit(&["evaluate", "--pred", p(&missing), "--gt", p(&missing)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn numerical_failure_exits_3_and_names_the_cause() {
    let f = Fixture::new(6);
    // Starting behind the camera makes every projection degenerate.
    std::fs::write(f.path("c.toml"), config("[init]\ntrans = [0.0, 0.0, -0.5]")).unwrap();
    let o = f.fit("out", &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("depth"), "{}", stderr(&o));
}

#[test]
fn bbox_crops_and_rescales() {
    let f = Fixture::new(7);
    std::fs::write(f.path("c.toml"), config("").replace("render_size = 0", "render_size = 32")).unwrap();
    let o = f.fit("out", &["--bbox", "8,8,48,48"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&f.path("out/report.json"));
    assert_eq!((r["width"].as_u64(), r["height"].as_u64()), (Some(32), Some(32)));
    let m = read_json(&f.path("out/manifest.json"));
    assert_eq!(m["bbox"]["w"], 48);
}

#[test]
fn directory_mode_fits_each_image() {
    let a = Fixture::new(8);
    let b = Fixture::new(9);
    let (imgs, kps, out) = (a.path("imgs"), a.path("kps"), a.path("batch"));
    std::fs::create_dir_all(&imgs).unwrap();
    std::fs::create_dir_all(&kps).unwrap();
    for (name, f) in [("first", &a), ("second", &b)] {
        std::fs::copy(f.path("a.png"), imgs.join(format!("{name}.png"))).unwrap();
        std::fs::copy(f.path("a.json"), kps.join(format!("{name}.json"))).unwrap();
    }
    let (k, c) = (a.path("k.json"), a.path("c.toml"));
    let o = handfit(&[
        "fit", "--image", p(&imgs), "--keypoints", p(&kps), "--intrinsics", p(&k), "--config", p(&c), "--out", p(&out), "--jobs", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["first", "second"] {
        assert!(out.join(name).join("params.json").is_file());
    }
    let single = a.fit("single", &[]);
    assert_eq!(code(&single), 0);
    assert_eq!(
        std::fs::read(out.join("first/params.json")).unwrap(),
        std::fs::read(a.path("single/params.json")).unwrap()
    );
}

#[test]
fn toy_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    assert_eq!(code(&handfit(&["toy-model", "--out", p(&path)])), 0);
    let loaded = handfit::model::load_model(&path).unwrap();
    let m = toy_model(TOY_SEED);
    assert_eq!(loaded.faces, m.faces);
    for (a, b) in loaded.template_vertices.iter().zip(&m.template_vertices) {
        assert!((a - b).norm() < 1e-6);
    }
}
