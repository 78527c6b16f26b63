use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(mode: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iga-price"))
        .arg(mode)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV after the hash comment and the header.
fn csv_rows(path: PathBuf) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config sha256 "));
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

const MERTON_P3: &str = "preset = \"merton-ex41\"\n[discretization]\np = 3\nn_s = 9\n";

#[test]
fn price1d_reproduces_merton_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MERTON_P3);
    let out = dir.path().join("out");
    let res = run("price1d", &cfg, &out, &[]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let summary = read_json(out.join("price1d.json"));
    let err = summary["mean_l2_error"].as_f64().unwrap();
    assert!(err > 0.001599 / 2.0 && err < 0.001599 * 2.0, "{err}");
    assert_eq!(summary["config_sha256"].as_str().unwrap().len(), 64);

    let (header, rows) = csv_rows(out.join("price1d_samples.csv"));
    assert_eq!(header, "s,price,reference,error");
    assert_eq!(rows.len(), 301);
    let (_, coefs) = csv_rows(out.join("price1d_coefficients.csv"));
    assert_eq!(coefs.len(), 101);
}

#[test]
fn identical_inputs_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MERTON_P3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("price1d", &cfg, &a, &[]).status.success());
    assert!(run("price1d", &cfg, &b, &[]).status.success());
    for name in [
        "price1d.json",
        "price1d_samples.csv",
        "price1d_coefficients.csv",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap()
        );
    }
}

#[test]
fn monte_carlo_reference_depends_only_on_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "r.toml",
        "preset = \"svjd-ex42\"\n[reference]\nn_paths = 4000\nn_steps = 50\n",
    );
    let value = |out: &str, seed: &str| {
        let out = dir.path().join(out);
        assert!(run("reference", &cfg, &out, &["--seed", seed])
            .status
            .success());
        fs::read_to_string(out.join("reference.json")).unwrap()
    };
    let (a, b, c) = (value("a", "5"), value("b", "5"), value("c", "6"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let json: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(json["method"], "monte-carlo");
    assert!(json["stderr"].as_f64().unwrap() > 0.0);
}

#[test]
fn json_and_toml_configs_are_interchangeable() {
    let dir = TempDir::new().unwrap();
    let toml = write_config(&dir, "c.toml", MERTON_P3);
    let json = write_config(
        &dir,
        "c.json",
        r#"{"preset": "merton-ex41", "discretization": {"p": 3, "n_s": 9}}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("reference", &toml, &a, &[]).status.success());
    assert!(run("reference", &json, &b, &[]).status.success());
    let (ja, jb) = (
        read_json(a.join("reference.json")),
        read_json(b.join("reference.json")),
    );
    assert_eq!(ja, jb);
    assert_eq!(ja["method"], "merton-series");
}

#[test]
fn table_has_one_row_per_mesh_and_one_column_per_degree() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "t.toml",
        "preset = \"merton-ex41\"\n[discretization]\np = [1, 3]\nn_s = [9, 18]\n",
    );
    let out = dir.path().join("out");
    assert!(run("table", &cfg, &out, &[]).status.success());
    let (header, rows) = csv_rows(out.join("table_errors.csv"));
    assert_eq!(header, "n_s,p=1,p=3");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], 9.0);
    // p = 3 at n_s = 9 sits within a factor 2 of 0.001599
    assert!(rows[0][2] > 0.0008 && rows[0][2] < 0.0032, "{:?}", rows[0]);
    assert!(rows[1][1] < rows[0][1]);
    let (theader, times) = csv_rows(out.join("table_timings.csv"));
    assert_eq!(theader, header);
    assert!(times.iter().flatten().all(|t| t.is_finite()));
}

#[test]
fn empty_degree_list_is_rejected_before_any_work() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "t.toml",
        "preset = \"merton-ex41\"\n[discretization]\np = []\n",
    );
    let out = dir.path().join("out");
    let res = run("table", &cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cases = [
        ("[fit]\ntarget = \"sine\"\n", "fit"),
        ("preset = \"nope\"\n", "reference"),
        ("mode = \"table\"\npreset = \"merton-ex41\"\n", "reference"),
        ("preset = \"merton-ex41\"\n", "price2d"),
        (
            "preset = \"merton-ex41\"\n[model]\nsigmaa = 0.2\n",
            "reference",
        ),
        ("preset = \"merton-ex41\"\n", "price1d"),
    ];
    for (k, (text, mode)) in cases.iter().enumerate() {
        let cfg = write_config(&dir, &format!("c{k}.toml"), text);
        let res = run(mode, &cfg, &out, &[]);
        assert_eq!(res.status.code(), Some(2), "case {k}: {text}");
    }
    let missing = dir.path().join("missing.toml");
    assert_eq!(run("reference", &missing, &out, &[]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_three() {
    // at a vanishing maturity the characteristic function never decays
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "h.toml",
        "[model]\nmodel = \"heston\"\nr = 0.05\nK = 100.0\nT = 1e-9\nsigma = 0.3\n\
         kappa = 1.0\ntheta = 0.04\nrho = -0.5\nv0 = 0.04\n",
    );
    let res = run("reference", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn merton_curve_fit_errors_are_in_expected_range() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "f.toml",
        "preset = \"merton-ex41\"\n[fit]\ntarget = \"merton\"\n",
    );
    let out = dir.path().join("out");
    assert!(run("fit", &cfg, &out, &[]).status.success());
    let fit = read_json(out.join("fit.json"));
    assert_eq!(fit["knots"].as_array().unwrap().len(), 21);
    let eps_bs = fit["eps_bs"].as_f64().unwrap();
    assert!(
        eps_bs > 4.0837e-05 / 2.0 && eps_bs < 4.0837e-05 * 2.0,
        "{eps_bs}"
    );
    let eps_nrb = fit["eps_nrb"].as_f64().unwrap();
    assert!(
        eps_nrb > 4.3813e-06 / 10.0 && eps_nrb < 4.3813e-06 * 10.0,
        "{eps_nrb}"
    );
    assert_eq!(fit["weights"].as_array().unwrap().len(), 17);
    let (header, _) = csv_rows(out.join("fit_samples.csv"));
    assert_eq!(header, "xi,f,f_bs,f_nrb");
}

#[test]
fn svjd_curve_fit_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "f.toml",
        "preset = \"svjd-ex25\"\n[fit]\ntarget = \"svjd\"\nnurbs = false\n",
    );
    let out = dir.path().join("out");
    assert!(run("fit", &cfg, &out, &[]).status.success());
    let fit = read_json(out.join("fit.json"));
    let eps_bs = fit["eps_bs"].as_f64().unwrap();
    assert!(eps_bs > 0.0 && eps_bs < 1e-3, "{eps_bs}");
    assert!(fit.get("eps_nrb").is_none());
}

#[test]
fn price2d_writes_surface_and_slice() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "s.toml",
        "preset = \"svjd-ex42\"\n[discretization]\np = 2\nn_s = 6\nn_tau = 20\n\
         [output]\nsamples_s = 31\nsamples_v = 4\n",
    );
    let out = dir.path().join("out");
    let res = run("price2d", &cfg, &out, &[]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let (header, surface) = csv_rows(out.join("price2d_surface.csv"));
    assert_eq!(header, "s,v,price");
    assert_eq!(surface.len(), 31 * 4);
    let (_, slice) = csv_rows(out.join("price2d_slice_v0.csv"));
    assert_eq!(slice.len(), 31);
    let summary = read_json(out.join("price2d.json"));
    assert_eq!(summary["v"].as_f64(), Some(0.1));
    assert!(summary["mean_l2_error"].as_f64().unwrap().is_finite());
}
