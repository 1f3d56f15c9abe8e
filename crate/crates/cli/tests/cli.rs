use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCALAR: &str = "[model]\na_max = 2.0\nn_age = 32\nlength = 2.0\nn_space = 1\ndiffusion_disabled = true\n\
birth = { preset = \"constant\", value = 1.0 }\n";

const SMALL_POSITIVE: &str = "[model]\na_max = 1.0\nn_age = 8\nn_space = 4\n\
diffusion = { preset = \"constant\", value = 0.05 }\n\
birth = { preset = \"separable\", scale = 20.0, age = { shape = \"bump\", lo = 0.2, hi = 0.8 }, space = { shape = \"constant\", value = 1.0 } }\n\n\
[perturbation.kernel]\nkind = \"age_kernel\"\nm = { shape = \"gaussian\", center = 0.5, width = 0.3 }\n\
k = { shape = \"gaussian\", width = 0.25 }\npositive = true\n\n\
[numerics]\nsubsteps = 8\nrefinements = [[4, 2], [8, 4]]\n";

struct Dir {
    tmp: tempfile::TempDir,
}

impl Dir {
    fn new(config: &str) -> Dir {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("run.toml"), config).unwrap();
        Dir { tmp }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        run_with(&self.path("run.toml"), &self.path("out"), args)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path("out").join(name)).unwrap()
    }

    fn json(&self, name: &str) -> serde_json::Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

fn run_with(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agediff"))
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn error_record(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let last = stderr.lines().last().expect("diagnostic line");
    serde_json::from_str(last).expect("single-line JSON record")
}

#[test]
fn minimal_config_is_echoed_with_defaults() {
    let d = Dir::new(SCALAR);
    assert!(d.run(&["spectral-bound"]).status.success());
    let echo = d.read("effective_config.toml");
    assert!(echo.contains("substeps = 4"), "{echo}");
    assert!(echo.contains("bc = \"dirichlet\""), "{echo}");
    assert!(echo.contains("positivity_mode = true"), "{echo}");

    // Re-running from the echo reproduces it exactly.
    std::fs::write(d.path("echo.toml"), &echo).unwrap();
    let out2 = d.path("out2");
    assert!(run_with(&d.path("echo.toml"), &out2, &["spectral-bound"]).status.success());
    assert_eq!(std::fs::read_to_string(out2.join("effective_config.toml")).unwrap(), echo);
}

#[test]
fn zero_age_intervals_exit_with_validation_code() {
    let d = Dir::new(&SCALAR.replace("n_age = 32", "n_age = 0"));
    let o = d.run(&["spectral-bound"]);
    assert_eq!(o.status.code(), Some(3));
    let rec = error_record(&o);
    assert_eq!(rec["field"], "model.n_age");
    assert_eq!(rec["exit_code"], 3);
}

#[test]
fn unknown_preset_lists_available_presets() {
    let d = Dir::new(&SCALAR.replace("\"constant\"", "\"logistic\""));
    let o = d.run(&["spectral-bound"]);
    assert_eq!(o.status.code(), Some(3));
    let msg = error_record(&o)["message"].as_str().unwrap().to_string();
    for p in ["constant", "gaussian-bump", "separable"] {
        assert!(msg.contains(p), "{msg}");
    }
}

#[test]
fn resolvent_at_spectral_bound_exits_near_spectrum() {
    let d = Dir::new(SCALAR);
    assert!(d.run(&["spectral-bound"]).status.success());
    let s = d.json("spectral_bound.json")["bound"]["s_bound"].as_f64().unwrap();
    let o = d.run(&["resolvent", "--lambda", &s.to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_record(&o)["error"], "near_spectrum");
}

#[test]
fn resolvent_at_dense_eigenvalue_exits_near_spectrum() {
    let d = Dir::new(SMALL_POSITIVE);
    assert!(d.run(&["spectrum"]).status.success());
    let eig = d.json("spectral_report.json")["eigenvalues"][0][0].as_f64().unwrap();
    let o = d.run(&["resolvent", "--lambda", &eig.to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn misaligned_final_time_exits_with_validation_code() {
    let d = Dir::new(SCALAR);
    let o = d.run(&["simulate", "--t-final", "0.3"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["error"], "alignment");
}

#[test]
fn simulate_writes_versioned_csv() {
    let d = Dir::new(SCALAR);
    assert!(d.run(&["simulate", "--t-final", "0.5"]).status.success());
    let traj = d.read("trajectory.csv");
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("# agediff trajectory v1"));
    assert_eq!(lines.next(), Some("t,a,x_index,value"));
    // 9 time samples, 33 age nodes, one spatial point.
    assert_eq!(lines.count(), 9 * 33);
    let births = d.read("births.csv");
    assert!(births.starts_with("# agediff birth-history v1\nt,x_index,value\n"));
    assert_eq!(d.json("simulate.json")["steps"], 8);
}

#[test]
fn resolvent_profile_round_trips_through_input() {
    let d = Dir::new(SMALL_POSITIVE);
    let out = d.path("psi.csv");
    let o = d.run(&["resolvent", "--lambda", "9", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# agediff age-profile v1\nage_index,x_index,value\n"));
    assert!(d.json("resolvent.json")["certified"].as_bool().unwrap());

    let o = d.run(&["resolvent", "--lambda", "9", "--input", out.to_str().unwrap()]);
    assert!(o.status.success());
    let bad = d.path("bad.csv");
    std::fs::write(&bad, "# agediff age-profile v1\nage_index,x_index,value\n0,0,1\n").unwrap();
    let o = d.run(&["resolvent", "--lambda", "9", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let d = Dir::new(SMALL_POSITIVE);
    for cmd in [&["spectral-bound"][..], &["spectrum"], &["compare-perturbed"], &["compactness"]] {
        assert!(d.run(cmd).status.success(), "{cmd:?}");
        let first = d.read("spectral_report.json");
        assert!(d.run(cmd).status.success());
        assert_eq!(first, d.read("spectral_report.json"), "{cmd:?}");
    }
    assert!(d.run(&["verify"]).status.success());
    let first = d.read("verify.json");
    assert!(d.run(&["verify"]).status.success());
    assert_eq!(first, d.read("verify.json"));
}

#[test]
fn verify_on_scalar_preset_passes() {
    let d = Dir::new(SCALAR);
    let o = d.run(&["verify"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.starts_with("PASS")), "{stdout}");
    assert_eq!(d.json("verify.json")["failed"], 0);
}

#[test]
fn compare_perturbed_reports_positive_margins() {
    let d = Dir::new(SMALL_POSITIVE);
    let o = d.run(&["compare-perturbed", "--perturbed", "kernel"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = d.json("spectral_report.json");
    let cmp = rep["comparisons"].as_array().unwrap();
    assert_eq!(cmp.len(), 8);
    assert!(cmp.iter().all(|c| c["passed"].as_bool().unwrap()), "{rep}");
    assert!(rep["s_perturbed"].as_f64().unwrap() > rep["s_bound"].as_f64().unwrap());
    assert!(d.read("effective_config.toml").contains("[perturbation.kernel]"));
}

#[test]
fn unknown_perturbation_section_is_a_validation_error() {
    let d = Dir::new(SMALL_POSITIVE);
    let o = d.run(&["compare-perturbed", "--perturbed", "missing"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["field"], "perturbation.missing");
}

#[test]
fn char_values_csv_is_plot_ready() {
    let d = Dir::new(SCALAR);
    assert!(d.run(&["spectral-bound"]).status.success());
    let cv = d.read("char_values.csv");
    let mut lines = cv.lines();
    assert_eq!(lines.next(), Some("# agediff char-values v1"));
    assert_eq!(lines.next(), Some("lambda,radius"));
    let radii: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(radii.windows(2).all(|w| w[1] <= w[0]), "{radii:?}");
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_agediff")).arg("spectrum").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["error"], "usage");
}
