use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qdgate(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdgate"))
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qdgate"))
        .arg("default-config")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("qdgate.run/1"));
    let path = dir.path().join("run.toml");
    fs::write(&path, &text).unwrap();
    // Parses and validates: the missing-artifact exit shows loading got past the config.
    let o = qdgate(&path, &dir.path().join("out"), &["spectra"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `solve` first"));
}

#[test]
fn shipped_sample_config_is_valid() {
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = qdgate(&sample, dir.path(), &["gate"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "schema = \"qdgate.run/1\"\n[materal]\n",
        "schema = \"qdgate.run/0\"\n",
        "schema = \"qdgate.run/1\"\n[material]\nelectron_mass_m0 = -1.0\n",
        "not toml at all = = =",
    ];
    for (i, body) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.toml"));
        fs::write(&path, body).unwrap();
        let o = qdgate(&path, &dir.path().join("out"), &["solve"]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "case {i}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = qdgate(&dir.path().join("absent.toml"), dir.path(), &["solve"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn unidentifiable_spectrum_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.toml");
    fs::write(
        &path,
        "schema = \"qdgate.run/1\"\n[basis]\nelectron_states = 1\nhole_states = 1\n",
    )
    .unwrap();
    let o = qdgate(&path, &dir.path().join("out"), &["solve"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn solve_then_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "schema = \"qdgate.run/1\"\n[basis]\nelectron_states = 6\nhole_states = 6\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = qdgate(
        &path,
        &out,
        &["--cache", dir.path().join("cache").to_str().unwrap(), "solve"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("Delta   ="));
    let o = qdgate(
        &path,
        &out,
        &["--cache", dir.path().join("cache").to_str().unwrap(), "spectra"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("spectra/conditional_table.txt").exists());
}
