mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gcn2cl"))
}

fn stage(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, support::corpus_file(name)).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn writes_next_to_input_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "copy.asm");
    let o = run(bin().arg(&input));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("copy.cl")).unwrap();
    assert!(text.contains("__kernel void"));
}

#[test]
fn output_flag_chooses_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "vecadd.asm");
    let out = dir.path().join("elsewhere.cl");
    let o = run(bin().arg(&input).arg("-o").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.exists());
    assert!(!dir.path().join("vecadd.cl").exists());
}

#[test]
fn kernel_flag_selects_one_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "multi.asm");
    let o = run(bin().arg(&input).args(["--kernel", "second"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("multi.cl")).unwrap();
    assert!(text.contains("void second("));
    assert!(!text.contains("void first("));
}

#[test]
fn unknown_kernel_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "multi.asm");
    let o = run(bin().arg(&input).args(["--kernel", "third"]));
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("gcn2cl: error:"), "{err}");
    assert!(err.contains("third"), "{err}");
    assert!(!dir.path().join("multi.cl").exists());
}

#[test]
fn missing_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg(dir.path().join("absent.asm")));
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("gcn2cl: error:"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn malformed_input_leaves_existing_output_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.asm");
    fs::write(&input, "this is not a listing\n").unwrap();
    let out = dir.path().join("bad.cl");
    fs::write(&out, "previous").unwrap();
    let o = run(bin().arg(&input));
    assert!(!o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), "previous");
    // No stray temporary files either.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn dump_cfg_prints_dot() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "ifelse_form1.asm");
    let o = run(bin().arg(&input).arg("--dump-cfg"));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("digraph"), "{out}");
    assert!(out.contains("->"), "{out}");
}

#[test]
fn dump_regions_prints_the_region_tree() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "nested_ifelse.asm");
    let o = run(bin().arg(&input).arg("--dump-regions"));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("// region tree of"), "{out}");
    assert!(out.matches("digraph").count() >= 2, "{out}");
}

#[test]
fn output_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = stage(dir.path(), "saxpy.asm");
    let o = run(bin().arg(&input));
    assert!(o.status.success(), "{}", stderr(&o));
    let lib = gcn2cl::pipeline::decompile_to_string(
        &support::corpus_file("saxpy.asm"),
        &gcn2cl::pipeline::Options::default(),
    )
    .unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("saxpy.cl")).unwrap(), lib);
}
