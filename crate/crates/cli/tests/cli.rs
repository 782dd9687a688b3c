//! End-to-end tests of the `sindy` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sindy(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sindy"))
        .args(args)
        .env("SINDY_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_writes_clean_and_noisy_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let o = sindy(
        &[
            "simulate",
            "--system",
            "lorenz",
            "--ic",
            "-8,8,27",
            "--duration",
            "10",
            "--dt",
            "0.002",
            "--noise",
            "50",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let clean = dir.path().join("lorenz_clean.csv");
    let noisy = dir.path().join("lorenz_noisy.csv");
    assert_eq!(data_rows(&clean), 5001);
    assert_eq!(data_rows(&noisy), 5001);
    assert_ne!(
        std::fs::read(&clean).unwrap(),
        std::fs::read(&noisy).unwrap()
    );
}

#[test]
fn zero_noise_copies_clean_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = sindy(
        &[
            "simulate",
            "--system",
            "harm_linear",
            "--duration",
            "2",
            "--noise",
            "0",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dir.path().join("harm_linear_clean.csv")).unwrap(),
        std::fs::read(dir.path().join("harm_linear_noisy.csv")).unwrap()
    );
}

#[test]
fn unknown_system_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sindy(&["simulate", "--system", "rossler"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).trim().is_empty());
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = sindy(&["fit"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn missing_config_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[pipeline]\nseed = 1\n", "data"),
        ("[data]\nsystem = \"lorenz\"\n", "data.noise"),
        ("[data]\nnoise = 10.0\n", "data.system"),
        (
            "[data]\nsystem = \"lorenz\"\nnoise = 1.0\n[cull]\nbalance_limit = \"off\"\n",
            "balance_limit",
        ),
        (
            "[data]\nsystem = \"lorenz\"\nnoise = 1.0\n[pipeline]\nmax_degre = 3\n",
            "max_degre",
        ),
    ];
    for (k, (text, key)) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("c{k}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let o = sindy(&["fit", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(stderr(&o).contains(key), "{text}: {}", stderr(&o));
    }
}

fn parse_coefficients(printed: &str, model: usize) -> Vec<Vec<(String, f64)>> {
    let block = printed.split(&format!("model {model}:\n")).nth(1).unwrap();
    block
        .lines()
        .take(3)
        .map(|line| {
            let rhs = line.split(" = ").nth(1).unwrap().replace(" - ", " + -");
            rhs.split(" + ")
                .map(|t| {
                    let (c, name) = t.trim().split_once(' ').unwrap();
                    (name.to_string(), c.parse::<f64>().unwrap())
                })
                .collect()
        })
        .collect()
}

#[test]
fn fit_noise_free_lorenz_and_rerender() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fit.toml");
    std::fs::write(
        &cfg,
        "[data]\nsystem = \"lorenz\"\nnoise = 0.0\n\n[smoothing]\nwindow = 5\n\n[pipeline]\nseed = 1\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = sindy(
        &[
            "fit",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = stdout(&o);
    let truth = [
        vec![("x", -10.0), ("y", 10.0)],
        vec![("x", 28.0), ("y", -1.0), ("x*z", -1.0)],
        vec![("z", -8.0 / 3.0), ("x*y", 1.0)],
    ];
    for k in 0..3 {
        let got = parse_coefficients(&printed, k);
        for (eq, want) in got.iter().zip(&truth) {
            assert_eq!(eq.len(), want.len(), "{printed}");
            for ((name, c), (wn, wc)) in eq.iter().zip(want) {
                assert_eq!(name, wn);
                assert!((c - wc).abs() <= 0.01 * wc.abs(), "{printed}");
            }
        }
    }
    for name in [
        "iterations.jsonl",
        "report.txt",
        "summary.json",
        "final_model_0.txt",
        "overlay_home0.svg",
        "overlay_home0_traj0.csv",
        "models_pass1_home0.txt",
        "mosaic_pass1_home0.svg",
        "mosaic_pass2_home2.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("raw coefficient errors"), "{report}");

    // model file round trip is byte-stable
    let dump = std::fs::read_to_string(out.join("final_model_0.txt")).unwrap();
    let again = sindy_core::model::SparseModel::parse_model_file(&dump)
        .unwrap()
        .to_model_file();
    assert_eq!(dump, again);

    // the log alone regenerates dumps and mosaics byte for byte
    let rerender = dir.path().join("rerender");
    let log = out.join("iterations.jsonl");
    let o = sindy(
        &[
            "report",
            "--log",
            log.to_str().unwrap(),
            "--out",
            rerender.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut compared = 0;
    for entry in std::fs::read_dir(&rerender).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap();
        assert_eq!(
            std::fs::read(&p).unwrap(),
            std::fs::read(out.join(name)).unwrap(),
            "{name:?}"
        );
        compared += 1;
    }
    assert_eq!(compared, 18);
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fit.toml");
    std::fs::write(
        &cfg,
        "[data]\nsystem = \"harm_linear\"\nnoise = 30.0\nduration = 6.0\n\n[pipeline]\nseed = 7\n",
    )
    .unwrap();
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = sindy(
            &[
                "fit",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(std::fs::read(out.join("iterations.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert!(!logs[0].is_empty());
}

const TABLE1_MODEL0: &str = "# sparse model dim=3 max_degree=2 constant=true
x' = -10.13 x + 10.16 y
y' = 24.39 x - 0.93 x*z
z' = -2.67 z + 1 x*y
";

#[test]
fn assess_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = sindy(
        &[
            "simulate",
            "--system",
            "lorenz",
            "--duration",
            "10",
            "--noise",
            "50",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = dir.path().join("lorenz_noisy.csv");
    let traj = traj.to_str().unwrap();

    let truth = dir.path().join("truth.txt");
    std::fs::write(
        &truth,
        "# sparse model dim=3 max_degree=2 constant=true\nx' = -10 x + 10 y\ny' = 28 x - 1 y - 1 x*z\nz' = -2.6666666666666665 z + 1 x*y\n",
    )
    .unwrap();
    let o = sindy(
        &[
            "assess",
            "--model",
            truth.to_str().unwrap(),
            "--reference",
            "lorenz",
            "--trajectory",
            traj,
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("(0, 0)") && text.contains("(0, 0, 0)"),
        "{text}"
    );

    let model0 = dir.path().join("model0.txt");
    std::fs::write(&model0, TABLE1_MODEL0).unwrap();
    let o = sindy(
        &[
            "assess",
            "--model",
            model0.to_str().unwrap(),
            "--reference",
            "lorenz",
            "--trajectory",
            traj,
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("y' = 24.39 x - 0.93 x*z    (13, inf, 7)"),
        "{text}"
    );
    assert!(text.contains("closest-to-true transform"), "{text}");
    assert!(dir.path().join("assessment.txt").exists());
    assert!(dir.path().join("assessment.json").exists());

    let cubic = dir.path().join("cubic.txt");
    std::fs::write(
        &cubic,
        "# sparse model dim=3 max_degree=3 constant=true\nx' = 1 x\ny' = 1 y\nz' = 1 z\n",
    )
    .unwrap();
    let o = sindy(
        &[
            "assess",
            "--model",
            model0.to_str().unwrap(),
            "--reference",
            cubic.to_str().unwrap(),
            "--trajectory",
            traj,
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different libraries"), "{}", stderr(&o));
}

#[test]
fn fit_from_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    for (name, ic, seed) in [("a", "2,0", "1"), ("b", "0,1.5", "2")] {
        let o = sindy(
            &[
                "simulate",
                "--system",
                "harm_linear",
                "--ic",
                ic,
                "--duration",
                "6",
                "--noise",
                "20",
                "--seed",
                seed,
                "--name",
                name,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let cfg = dir.path().join("fit.toml");
    std::fs::write(
        &cfg,
        "[data]\ntrain = [\"a_noisy.csv\"]\nvalidation = [\"b_noisy.csv\"]\nreference = \"harm_linear\"\n\n[output]\ndir = \"ignored\"\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = sindy(
        &[
            "fit",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("model 0:"), "{}", stdout(&o));
    assert!(out.join("overlay_home0_traj1.csv").exists());
    assert!(!dir.path().join("ignored").exists());
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("raw coefficient errors"), "{report}");
}
