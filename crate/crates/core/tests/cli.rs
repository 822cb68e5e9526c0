use std::path::Path;
use std::process::Command;

fn run(ws: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hoisynth")).arg("--out").arg(ws).args(args).env("RUST_LOG", "warn").output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned() + &String::from_utf8_lossy(&out.stdout))
}

const TINY: &str = "[data]\nper_cell = 24\npoints = 64\n[stage1]\nsteps = 10\nbatch = 8\n[stage2]\nsteps = 10\nbatch = 8\n\
[stage3]\nsteps = 10\nbatch = 8\n[stage4]\nsteps = 10\nbatch = 8\n[extractor]\nsteps = 10\n[eval]\nrepeats = 2\n";

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();

    assert_eq!(run(&ws, &["--config", "/nonexistent.toml", "gen-data"]).0, 2);
    assert_eq!(run(&ws, &["--config", c, "ablate", "--flags", "no-contact,real-contact"]).0, 2);
    assert_eq!(run(&ws, &["plot"]).0, 3);
    assert_eq!(run(&ws, &["--config", c, "train", "--stage", "1"]).0, 3);

    assert_eq!(run(&ws, &["--config", c, "gen-data"]).0, 0);
    assert_eq!(run(&ws, &["--config", c, "train", "--stage", "2"]).0, 3);
    for stage in ["1", "2", "3", "4"] {
        let (code, msg) = run(&ws, &["--config", c, "train", "--stage", stage]);
        assert_eq!(code, 0, "{msg}");
    }
    assert_eq!(run(&ws, &["--config", c, "evaluate"]).0, 3);
    assert_eq!(run(&ws, &["--config", c, "train", "--extractor"]).0, 0);
    let (code, msg) = run(&ws, &["--config", c, "evaluate"]);
    assert_eq!(code, 0, "{msg}");
    assert!(ws.join("reports/evaluate.txt").exists());
    assert_eq!(run(&ws, &["--config", c, "ablate", "--flags", "direct-body"]).0, 3);
    assert_eq!(run(&ws, &["--config", c, "ablate", "--flags", "optimizer=none", "--flags", "real-canonical"]).0, 0);

    let (code, msg) = run(&ws, &["--config", c, "sample", "--text", "a person lifts the box", "--object", "box", "--seed", "4"]);
    assert_eq!(code, 0, "{msg}");
    assert_eq!(run(&ws, &["--config", c, "sample", "--text", "a person lifts the box", "--object", "teapot"]).0, 2);
    for format in ["container", "obj-sequence", "csv-trace"] {
        let (code, msg) = run(&ws, &["--config", c, "export", "--format", format, "--text", "a person pushes the sphere", "--object", "sphere"]);
        assert_eq!(code, 0, "{format}: {msg}");
    }
    assert_eq!(run(&ws, &["--config", c, "plot"]).0, 0);
    assert!(ws.join("reports/losses.svg").exists());

    std::fs::write(ws.join("data/manifest.json"), "{ not json").unwrap();
    assert_eq!(run(&ws, &["--config", c, "evaluate"]).0, 4);
}
