use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qdm_core::scene::parse_scene;

fn qdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdm"))
        .current_dir(dir)
        .env_remove("QDM_OUT_ROOT")
        .args(args)
        .output()
        .expect("spawn qdm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

#[test]
fn empty_scene_gives_zero_maps() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("empty.scene"),
        "units = si\nprobe_height = 20nm\nfov = 100nm\n",
    )
    .unwrap();
    let o = qdm(
        tmp.path(),
        &["scan", "--scene", "empty.scene", "--grid", "2x2", "--out", "runs"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = tmp.path().join(stdout(&o));
    for name in [
        "field.csv",
        "gamma.csv",
        "combined.csv",
        "pixels.csv",
        "field.pgm",
        "gamma.pgm",
        "manifest.txt",
    ] {
        assert!(run.join(name).exists(), "{name}");
    }
    let field = fs::read_to_string(run.join("field.csv")).unwrap();
    let rows: Vec<&str> = field.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn missing_scene_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qdm(tmp.path(), &["scan", "--scene", "nope.scene"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scene not found"));
}

#[test]
fn scene_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("bad.scene"),
        "units = si\nprobe_height = 20nm\nspin x=1nm y=0nm\n",
    )
    .unwrap();
    let o = qdm(tmp.path(), &["scan", "--scene", "bad.scene"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(qdm(tmp.path(), &["generate-scene", "example3"]).status.code(), Some(1));
    assert_eq!(qdm(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(qdm(tmp.path(), &["scan", "--pipeline", "magic"]).status.code(), Some(1));
    assert_eq!(qdm(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn generate_scene_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = qdm(tmp.path(), &["generate-scene", "example1", "--seed", "4"]);
    let b = qdm(tmp.path(), &["generate-scene", "example1", "--seed", "4"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);

    let e2 = parse_scene(&String::from_utf8(qdm(tmp.path(), &["generate-scene", "example2"]).stdout).unwrap()).unwrap();
    let mut m0: Vec<f64> = e2.env.spins.iter().map(|s| s.m0).collect();
    m0.sort_by(f64::total_cmp);
    assert_eq!(m0, [50.0, 70.0, 100.0, 200.0]);
    assert!((e2.fov.0 - 100e-9).abs() < 1e-20);

    let o = qdm(
        tmp.path(),
        &[
            "generate-scene",
            "custom-random",
            "--density",
            "300",
            "--fov",
            "0.5",
            "--out",
            "r.scene",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let r = parse_scene(&fs::read_to_string(tmp.path().join("r.scene")).unwrap()).unwrap();
    assert_eq!(r.env.bath.unwrap().len(), 75);
    // refuses to overwrite
    let again = qdm(tmp.path(), &["generate-scene", "example2", "--out", "r.scene"]);
    assert_eq!(again.status.code(), Some(3));
}

#[test]
fn runs_never_overwrite_and_manifest_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = qdm(tmp.path(), &["generate-scene", "example2", "--out", "e2.scene"]);
    assert_eq!(gen.status.code(), Some(0));
    let args = [
        "scan", "--scene", "e2.scene", "--grid", "12x9", "--dwell", "200us", "--seed", "8", "--out", "runs",
    ];
    let a = qdm(tmp.path(), &args);
    let b = qdm(tmp.path(), &args);
    let (ra, rb) = (tmp.path().join(stdout(&a)), tmp.path().join(stdout(&b)));
    assert_ne!(ra, rb);
    for f in ["field.csv", "gamma.csv", "combined.csv", "pixels.csv", "color.pgm"] {
        assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(ra.join("manifest.txt")).unwrap();
    for key in [
        "seed = 8",
        "grid = 12x9",
        "dwell = 2e-4",
        "pipeline = closed_form",
        "scene_sha256 = ",
        "version = ",
    ] {
        assert!(manifest.contains(key), "{key} missing:\n{manifest}");
    }
    assert_eq!(
        fs::read_to_string(ra.join("scene.txt")).unwrap(),
        fs::read_to_string(tmp.path().join("e2.scene")).unwrap()
    );
}

#[test]
fn config_file_and_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    qdm(tmp.path(), &["generate-scene", "example2", "--out", "e2.scene"]);
    fs::write(
        tmp.path().join("run.cfg"),
        "scene = e2.scene\ngrid = 5x4\nheight = 25nm\nrabi = 12MHz\ndwell = 20ms\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qdm"))
        .current_dir(tmp.path())
        .env("QDM_OUT_ROOT", tmp.path().join("envroot"))
        .args(["scan", "--config", "run.cfg", "--grid", "3x3"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = Path::new(&stdout(&o)).to_path_buf();
    assert!(run.starts_with(tmp.path().join("envroot")));
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("grid = 3x3"));
    assert!(manifest.contains("height = 2.5e-8"));
    assert!(manifest.contains("acquisition_time = 1.8e-1"), "{manifest}");

    fs::write(tmp.path().join("bad.cfg"), "scene = e2.scene\nheight = 25\n").unwrap();
    let o = qdm(tmp.path(), &["scan", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing unit suffix"), "{}", stderr(&o));
    fs::write(tmp.path().join("bad2.cfg"), "scene = e2.scene\nwidth = 3\n").unwrap();
    let o = qdm(tmp.path(), &["scan", "--config", "bad2.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn noise_sweep_table() {
    let tmp = tempfile::tempdir().unwrap();
    qdm(tmp.path(), &["generate-scene", "example2", "--out", "e2.scene"]);
    let o = qdm(
        tmp.path(),
        &[
            "noise-sweep",
            "--scene",
            "e2.scene",
            "--grid",
            "40",
            "--dwell",
            "2us,200us",
            "--out",
            "runs",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = tmp.path().join(stdout(&o));
    let table = fs::read_to_string(run.join("variance.csv")).unwrap();
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!((r[2] / r[1] - 1.0).abs() < 0.1, "{r:?}");
    }
    assert!(run.join("dwell-2e-6s-field.pgm").exists());
    assert_eq!(
        qdm(tmp.path(), &["noise-sweep", "--scene", "e2.scene"]).status.code(),
        Some(2)
    );
}

#[test]
fn spectrum_dump() {
    let tmp = tempfile::tempdir().unwrap();
    qdm(tmp.path(), &["generate-scene", "example2", "--out", "e2.scene"]);
    let o = qdm(
        tmp.path(),
        &[
            "spectrum",
            "--scene",
            "e2.scene",
            "--at=-28nm,28nm",
            "--steps",
            "400000",
            "--max-lag",
            "2048",
            "--out",
            "runs",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = tmp.path().join(stdout(&o));
    let spec = fs::read_to_string(run.join("spectrum.csv")).unwrap();
    assert!(spec.starts_with("omega,power\n"));
    assert_eq!(
        fs::read_to_string(run.join("autocorrelation.csv"))
            .unwrap()
            .lines()
            .count(),
        2050
    );
    assert!(fs::read_to_string(run.join("manifest.txt"))
        .unwrap()
        .contains("peak_frequencies = "));
}
