use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: [&str; 7] = ["curate", "synth", "dtw_oracle", "perceiver", "mam", "train", "eval"];

fn example_path(name: &str) -> PathBuf {
    // target/<profile>/deps/<this test> -> target/<profile>/examples/<name>
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().unwrap().parent().unwrap().join("examples");
    dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

#[test]
fn every_example_runs_cleanly() {
    for name in EXAMPLES {
        let path = example_path(name);
        assert!(path.exists(), "{} not built; run through `cargo test`", path.display());
        let out = Command::new(&path).output().unwrap();
        assert!(
            out.status.success(),
            "example {name} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stdout.is_empty(), "example {name} printed nothing");
    }
}
