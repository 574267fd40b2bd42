use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thermalab::output::Manifest;
use thermalab_core::export::Table;

const SMALL_MODEL: &str = r#"
observable = "position_site_1"

[model]
kind = "oscillator_chain"
n_sites = 3
spin_cutoff = 2
h_x = 0.7
j = 0.8
"#;

fn trajectories_config(seed: u64) -> String {
    format!(
        r#"experiment = "trajectories"
seed = {seed}
{SMALL_MODEL}
[trajectories]
dt_list = [0.5, 2.0]
n_meas = 30
n_real = 40
single_record = 200
records_written = 2

[trajectories.reference]
t_max = 60.0
n_times = 300
"#
    )
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_thermalab"));
    c.env_remove("THERMALAB_OUT");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn verify(config: &Path, out: &Path) -> Output {
    bin().arg("verify").arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_key_is_a_config_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let body = trajectories_config(1).replace("n_real = 40", "n_real = 40\nn_realizations = 40");
    let cfg = write_config(tmp.path(), "bad.toml", &body);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn missing_or_foreign_sections_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let no_section = write_config(tmp.path(), "a.toml", &format!("experiment = \"evolve\"\n{SMALL_MODEL}"));
    assert_eq!(run(&no_section, &out, &[]).status.code(), Some(2));
    let foreign = write_config(
        tmp.path(),
        "b.toml",
        "experiment = \"ou\"\n[entropy]\nd_s = 3\n[ou]\nn_paths = 10\n[ou.params]\nk = 1.0\ngamma_friction = 1.0\ndiffusion = 1.0\ndt_step = 0.01\nt_final = 1.0\n",
    );
    assert_eq!(run(&foreign, &out, &[]).status.code(), Some(2));
    let unstable = write_config(
        tmp.path(),
        "c.toml",
        "experiment = \"ou\"\n[ou]\nn_paths = 10\n[ou.params]\nk = 1.0\ngamma_friction = 1.0\ndiffusion = 1.0\ndt_step = 0.5\nt_final = 1.0\n",
    );
    assert_eq!(run(&unstable, &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn pipeline_failure_leaves_failed_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        "experiment = \"evolve\"\nstate = {{ rule = \"index\", alpha = 100000 }}\n{SMALL_MODEL}\n[evolve.times]\nt_max = 10.0\nn_times = 10\n"
    );
    let cfg = write_config(tmp.path(), "idx.toml", &body);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(out.join("FAILED").is_file());
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn verify_on_empty_dir_lists_missing_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &trajectories_config(1));
    let out = tmp.path().join("empty");
    fs::create_dir_all(&out).unwrap();
    let o = verify(&cfg, &out);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.json"));
}

#[test]
fn manifest_covers_every_output_and_tampering_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &trajectories_config(3));
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.experiment, "trajectories");
    assert_eq!(m.seed, 3);
    let mut listed: Vec<String> = m.outputs.iter().map(|o| o.path.clone()).collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut on_disk: Vec<String> =
        fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for f in ["gamma_qj.csv", "traj_dt2_summary.csv", "traj_dt2_transitions.csv", "traj_dt0.5_record1.csv"] {
        assert!(m.output(f).is_some(), "{f} not in manifest");
    }

    let before = verify(&cfg, &out);
    assert!(stdout(&before).contains("PASS integrity.outputs"));

    // zero the Gamma_QJ column
    let path = out.join("gamma_qj.csv");
    let mut t = Table::read(&path).unwrap();
    let col = t.column_index("gamma_qj").unwrap();
    for row in &mut t.rows {
        row[col] = "0".into();
    }
    t.write(&path).unwrap();
    let after = verify(&cfg, &out);
    let text = stdout(&after);
    assert_eq!(after.status.code(), Some(4), "{text}");
    assert!(text.contains("FAIL integrity.outputs"), "{text}");
    assert!(text.contains("FAIL gamma.ratio[dt=2]"), "{text}");
    assert!(text.contains("FAIL gamma.consistency[dt=2]"), "{text}");
}

#[test]
fn equal_seeds_give_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &trajectories_config(9));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &[]).status.success());
    assert!(run(&cfg, &c, &["--seed", "10"]).status.success());
    let (fa, fb, fc) = (csv_files(&a), csv_files(&b), csv_files(&c));
    assert!(fa.len() > 5);
    assert_eq!(fa, fb);
    let record = |f: &[(String, Vec<u8>)]| f.iter().find(|(n, _)| n == "traj_dt2_record0.csv").unwrap().1.clone();
    assert_ne!(record(&fa), record(&fc));
    assert_eq!(Manifest::load(&c).unwrap().seed, 10);
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "oracle.toml",
        "experiment = \"entropy\"\n[entropy]\nd_s = 4\nn_draws = 5\nn_ck = 2\nn_times = 50\n",
    );
    let root = tmp.path().join("root");
    let o = bin().env("THERMALAB_OUT", &root).arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert!(o.status.success());
    assert!(root.join("oracle").join("manifest.json").is_file());
    assert!(root.join("oracle").join("kernel.csv").is_file());
}

#[test]
fn list_models_and_dump_matrix() {
    let o = bin().arg("list-models").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    for k in ["oscillator_chain", "blbq_chain", "spin_half_chain", "sz_global"] {
        assert!(text.contains(k));
    }
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &trajectories_config(1));
    let out = tmp.path().join("dump");
    let o = bin().arg("dump-matrix").arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Table::read(&out.join("hamiltonian.csv")).unwrap();
    assert_eq!(t.len(), 125);
    assert_eq!(t.header.len(), 125);
    for i in 0..125 {
        for j in 0..i {
            assert_eq!(t.rows[i][j], t.rows[j][i]);
        }
    }
}
