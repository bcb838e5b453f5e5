use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_streetforge"));
    c.env_remove("STREETFORGE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small scene with its virtual views at +1 m.
fn small_scene(dir: &Path) {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"width":24,"height":24,"frames":4,"lidar_rays":600}"#).unwrap();
    ok(run(&[
        "gen",
        "--spec",
        p(&spec),
        "--out",
        p(&dir.join("scene")),
        "--virtual-shift",
        "1",
        "--virtual-out",
        p(&dir.join("virtual")),
    ]));
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_scene(d);
    let scene = d.join("scene");
    assert!(scene.join("manifest.json").exists());
    assert!(d.join("virtual/views.json").exists());

    ok(run(&["fuse", "--scene", p(&scene), "--out", p(&d.join("fused.bin"))]));
    assert!(d.join("fused.bin").metadata().unwrap().len() > 0);

    let nvs = d.join("nvs");
    ok(run(&["nvs", "--scene", p(&scene), "--shift", "1", "--steps", "5", "--out", p(&nvs)]));
    assert!(nvs.join("views.json").exists());

    // The exact virtual views score themselves perfectly.
    let report = d.join("self.json");
    let stdout = ok(run(&["eval", "--pred", p(&d.join("virtual")), "--gt", p(&d.join("virtual")), "--report", p(&report)]));
    assert!(stdout.contains("\"psnr\":99"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mean"]["miou"], 1.0);

    let gs = d.join("gs");
    ok(run(&[
        "train-gs",
        "--scene",
        p(&scene),
        "--virtual",
        p(&d.join("virtual")),
        "--iters",
        "20",
        "--densify-every",
        "0",
        "--out",
        p(&gs),
    ]));
    for f in ["scene.gs", "report.json", "loss.csv", "renders/views.json"] {
        assert!(gs.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(gs.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn edit_validates_object_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_scene(d);
    let scene = d.join("scene");
    let edited = d.join("edited");
    assert_eq!(code(&run(&["edit", "--scene", p(&scene), "--remove-object", "42", "--out", p(&edited)])), 1);
    assert!(!edited.exists());
    ok(run(&["edit", "--scene", p(&scene), "--remove-object", "1", "--out", p(&edited)]));
    let manifest = std::fs::read_to_string(edited.join("manifest.json")).unwrap();
    assert!(manifest.contains("removed_objects"));
    // Exactly one of the two edit kinds is required.
    assert_eq!(code(&run(&["edit", "--scene", p(&scene)])), 1);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["fuse", "--scene", "/nonexistent/scene", "--out", "/tmp/x.bin"])), 1);

    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_scene(d);
    let out = d.join("model.bin");
    let o = run(&["train-denoiser", "--scene", p(&d.join("scene")), "--out", p(&out), "--steps", "5", "--width", "4", "--clip-len", "2", "--lr", "1e200"]);
    assert_eq!(code(&o), 2, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerical abort"));
}

#[test]
fn thread_cap_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, r#"{"width":16,"height":16,"frames":2,"lidar_rays":100}"#).unwrap();
    let gen = |threads: &str, out: &str| {
        bin()
            .env("STREETFORGE_THREADS", threads)
            .args(["gen", "--spec", p(&spec), "--out", p(&tmp.path().join(out))])
            .output()
            .unwrap()
    };
    assert_eq!(code(&gen("0", "a")), 1);
    assert_eq!(code(&gen("many", "b")), 1);
    ok(gen("1", "one"));
    ok(gen("3", "three"));
    // Thread count does not change the output.
    for f in ["manifest.json", "frames/0001_color.png", "lidar/0001.bin"] {
        let a = std::fs::read(tmp.path().join("one").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("three").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
