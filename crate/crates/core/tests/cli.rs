use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_gle-krylov");

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn toy2_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for stage in ["moments", "reduce", "fdt-check", "kernel"] {
        let (code, err) = run(&["--out", out, stage]);
        assert_eq!(code, 0, "{stage}: {err}");
    }
    let moments = csv_rows(&dir.path().join("moments.csv"));
    assert_eq!(moments[0], ["moment", "M_1_1"]);
    let value = |label: &str| -> f64 {
        moments.iter().find(|r| r[0] == label).unwrap()[1]
            .parse()
            .unwrap()
    };
    assert!((value("inf") - 1.0 / 9.0).abs() < 1e-15);
    assert!((value("0") - 1.0 / 3.0).abs() < 1e-15);
    assert!((value("2") + 1.0).abs() < 1e-14);

    let fdt = json(&dir.path().join("fdt-check.json"));
    assert_eq!(fdt["result"]["report"]["fdt_pass"], true);
    let hash = fdt["config_sha256"].as_str().unwrap().to_string();
    for f in ["moments.csv", "mhat.txt", "kernel.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with(&format!("# config_sha256: {hash}")), "{f}");
    }

    // order two reproduces the toy2 kernel exactly
    let kernel = csv_rows(&dir.path().join("kernel.csv"));
    assert_eq!(kernel[0], ["t", "reduced_1_1", "exact_1_1"]);
    for row in &kernel[1..] {
        let (a, b): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cond_table_grows_on_stiff_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("stiff.toml");
    fs::write(
        &cfg,
        "seed = 7\n[system]\nkind = \"synthetic\"\nd = 40\nm = 1\ngamma = 1.0\nlambda_min = 1.0\nlambda_max = 1e4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, err) = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "cond-table",
    ]);
    assert_eq!(code, 0, "{err}");
    let rows = csv_rows(&out.join("cond_table.csv"));
    let conds: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(conds.len(), 6);
    assert!(conds.windows(2).all(|w| w[1] > w[0]), "{conds:?}");
}

#[test]
fn matrix_damping_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[system]\nkind = \"files\"\na = \"A.txt\"\nphi = \"Phi.txt\"\ngamma = [[1.0, 0.0], [0.0, 2.0]]\n",
    )
    .unwrap();
    let (code, err) = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "moments",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("scalar damping"), "{err}");
}

#[test]
fn fdt_failure_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("inverse.toml");
    fs::write(
        &cfg,
        "seed = 2\n[system]\nkind = \"synthetic\"\nd = 12\nm = 2\ngamma = 1.0\nlambda_min = 1.0\nlambda_max = 9.0\n[reduction]\norder = 2\nsubspace = \"inverse\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, err) = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "fdt-check",
    ]);
    assert_eq!(code, 4, "{err}");
    assert!(err.starts_with("error: fdt-check:"));
    assert_eq!(
        json(&out.join("fdt-check.json"))["result"]["report"]["fdt_pass"],
        false
    );
    let (code, _) = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "simulate",
    ]);
    assert_eq!(code, 4);
}

#[test]
fn files_source_matches_generated_system() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.toml");
    fs::write(
        &synth,
        "seed = 9\n[system]\nkind = \"synthetic\"\nd = 10\nm = 2\ngamma = 1.5\nlambda_min = 1.0\nlambda_max = 6.0\n",
    )
    .unwrap();
    let gen = dir.path().join("gen");
    assert_eq!(
        run(&[
            "--config",
            synth.to_str().unwrap(),
            "--out",
            gen.to_str().unwrap(),
            "generate"
        ])
        .0,
        0
    );
    assert_eq!(
        run(&[
            "--config",
            synth.to_str().unwrap(),
            "--out",
            gen.to_str().unwrap(),
            "moments"
        ])
        .0,
        0
    );
    let files = dir.path().join("files.toml");
    fs::write(
        &files,
        "[system]\nkind = \"files\"\na = \"gen/A.txt\"\nphi = \"gen/Phi.txt\"\ngamma = 1.5\n",
    )
    .unwrap();
    let from_files = dir.path().join("from_files");
    let (code, err) = run(&[
        "--config",
        files.to_str().unwrap(),
        "--out",
        from_files.to_str().unwrap(),
        "moments",
    ]);
    assert_eq!(code, 0, "{err}");
    let a = csv_rows(&gen.join("moments.csv"));
    let b = csv_rows(&from_files.join("moments.csv"));
    for (ra, rb) in a[1..].iter().zip(&b[1..]) {
        for (x, y) in ra[1..].iter().zip(&rb[1..]) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
