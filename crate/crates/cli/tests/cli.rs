use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mffilter"));
    c.env_remove("MFFILTER_OUTPUT_DIR");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

const SMALL_REDUCTION: &str = r#"
experiment = "reduction"
seed = 17
[grid]
horizon = 0.5
dt = 1e-3
[model]
name = "single"
kernel = "none"
efficiency = 0.7
[ensemble]
samples = 150
record_trajectories = 3
"#;

#[test]
fn list_names_every_experiment_and_model() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["reduction", "stabilization", "chaos-scaling", "lemma1-sweep", "picard-vs-particles"] {
        assert!(text.contains(name), "missing {name}");
    }
    for model in ["single", "nparticle", "meanfield", "meanfield-bloch", "lindblad-mean", "nqubit"] {
        assert!(text.contains(model), "missing {model}");
    }
    assert!(text.contains("keys:"));
}

#[test]
fn config_errors_name_the_field_and_exit_2() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("experiment = \"reduction\"\n", "seed"),
        ("experiment = \"reduction\"\nseed = 1\n[grid]\ndt = 0.0\n", "grid.dt"),
        ("experiment = \"reduction\"\nseed = 1\n[grid]\ndt = \"fast\"\n", "grid.dt"),
        ("experiment = \"reduction\"\nseed = 1\n[model]\nefficiency = 1.5\n", "model.efficiency"),
        (
            "experiment = \"reduction\"\nseed = 1\n[model]\nmeasurement = [[[1, 0]]]\nhamiltonian = \"sigma_z\"\n",
            "model",
        ),
        (
            "experiment = \"reduction\"\nseed = 1\n[model]\nkernel = { entries = [[1, 1, 1, 2, 0.0, 1.0]] }\n",
            "model.kernel",
        ),
        ("experiment = \"stabilization\"\nseed = 1\n[control]\ntype = \"zero\"\n", "control.type"),
        ("experiment = \"stabilization\"\nseed = 1\n[control]\nc1 = -1.0\n", "control.c1"),
        ("experiment = \"lemma1-sweep\"\nseed = 1\n[lemma]\ndims = [0]\n", "lemma.dims"),
        ("experiment = \"reduction\"\nseed = 1\nbogus = 3\n", "bogus"),
    ];
    for (i, (text, field)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("c{i}.toml"), text);
        for cmd in ["validate", "run"] {
            let mut c = bin();
            c.arg(cmd).arg(&cfg);
            if cmd == "run" {
                c.arg("--out").arg(dir.path().join("o"));
            }
            let out = c.output().unwrap();
            assert_eq!(out.status.code(), Some(2), "{cmd} case {i}");
            let err = stderr_json(&out);
            assert_eq!(err["error"], "config_invalid", "case {i}: {err}");
            assert_eq!(err["field"], *field, "case {i}: {err}");
        }
    }
    assert!(!dir.path().join("o").exists(), "config errors must not create output");
}

#[test]
fn identical_seeds_give_identical_bytes_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "r.toml", SMALL_REDUCTION);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(bin().args(["--threads", "1", "run"]).arg(&cfg).arg("--out").arg(&a).status().unwrap().success());
    assert!(bin().args(["--threads", "3", "run"]).arg(&cfg).arg("--out").arg(&b).status().unwrap().success());
    let files = sorted_files(&a);
    assert_eq!(files, sorted_files(&b));
    assert!(files.contains(&"reduction_17_0.csv".to_string()));
    assert!(files.contains(&"reduction_17_2.csv".to_string()));
    assert!(!files.contains(&"reduction_17_3.csv".to_string()));
    for f in files.iter().filter(|f| f.ends_with(".csv")) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |p: PathBuf| -> String {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("generated_unix"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(a.join("manifest.toml")), strip(b.join("manifest.toml")));
}

#[test]
fn manifest_reruns_the_same_experiment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "r.toml", SMALL_REDUCTION);
    let a = dir.path().join("a");
    assert!(bin().arg("run").arg(&cfg).arg("--out").arg(&a).status().unwrap().success());
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("generated_unix = ")).count(), 1);
    assert!(manifest.contains("config_sha256 = "));
    assert!(manifest.contains("[config]"));
    let b = dir.path().join("b");
    assert!(bin().arg("run").arg(a.join("manifest.toml")).arg("--out").arg(&b).status().unwrap().success());
    for f in sorted_files(&a).iter().filter(|f| f.ends_with(".csv")) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_and_output_directory_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "experiment = \"lemma1-sweep\"\nseed = 4\n[lemma]\ndims = [2]\nn_triples = 200\n",
    );
    let base = dir.path().join("env");
    let out = bin()
        .env("MFFILTER_OUTPUT_DIR", &base)
        .args(["run", "--seed", "99"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(base.join("lemma1-sweep_99").join("lemma1-sweep_99_summary.csv").exists());

    let explicit = dir.path().join("explicit");
    let out = bin()
        .env("MFFILTER_OUTPUT_DIR", &base)
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&explicit)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(explicit.join("lemma1-sweep_4_summary.csv").exists());
    assert!(!base.join("lemma1-sweep_4").exists());

    let from_config = dir.path().join("from_config");
    let text = format!("output_dir = {:?}\n{}", from_config.display().to_string(), fs::read_to_string(&cfg).unwrap());
    let cfg2 = write(dir.path(), "l2.toml", &text);
    assert!(bin().env("MFFILTER_OUTPUT_DIR", &base).arg("run").arg(&cfg2).status().unwrap().success());
    assert!(from_config.join("lemma1-sweep_4_summary.csv").exists());
}

#[test]
fn experiment_failures_exit_1_with_json() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "p.toml",
        "experiment = \"picard-vs-particles\"\nseed = 2\n[grid]\nhorizon = 0.2\n[picard]\nn_paths = 50\nmax_iter = 1\ntol = 1e-9\nparticles = 50\n",
    );
    let out_dir = dir.path().join("p");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "experiment_failed");
    assert_eq!(err["experiment"], "picard-vs-particles");
    assert!(out_dir.join("picard-vs-particles_2_picard_log.csv").exists(), "diagnostics are kept");

    let out = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config_unreadable");
}

#[test]
fn every_example_config_validates() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = bin().arg("validate").arg(&path).output().unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn csv_layouts() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "experiment = \"stabilization\"\nseed = 8\nrecord_every = 50\n[grid]\nhorizon = 1.0\n[model]\nname = \"meanfield-bloch\"\n[ensemble]\nsamples = 10\nrecord_trajectories = 2\n",
    );
    let out_dir = dir.path().join("s");
    assert!(bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap().success());
    let fid = fs::read_to_string(out_dir.join("stabilization_8_fidelity.csv")).unwrap();
    let mut lines = fid.lines();
    assert_eq!(lines.next().unwrap(), "time,mean_fidelity,std_error,fidelity_0,fidelity_1");
    assert_eq!(fid.lines().count(), 1 + 21);
    let traj = fs::read_to_string(out_dir.join("stabilization_8_0.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "time,x,y,z,u,dW,dY,trace_error,min_eigenvalue,purity");
    let mean = fs::read_to_string(out_dir.join("stabilization_8_mean.csv")).unwrap();
    assert_eq!(mean.lines().next().unwrap(), "time,x,y,z,fidelity,se_x,se_y,se_z,se_fidelity");
    // fidelity to rho_e is (1 - z) / 2
    for line in mean.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[4] - (1.0 - v[3]) / 2.0).abs() < 1e-12);
    }
}
