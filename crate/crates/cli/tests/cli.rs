//! End-to-end runs of the `lineqgp` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(train: &str, config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.csv"), train).unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lineqgp"))
            .args(args)
            .args(["--config", "run.toml", "--out", "out", "--quiet"])
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }

    fn csv(&self, name: &str) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut reader = csv::Reader::from_path(self.out(name)).unwrap();
        let header = reader.headers().unwrap().iter().map(str::to_owned).collect();
        let rows = reader
            .records()
            .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
            .collect();
        (header, rows)
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

fn sigmoid_train(xs: &[f64]) -> String {
    let mut s = String::from("x,y\n");
    for &x in xs {
        let y = 1.0 / (1.0 + (-(x - 5.0)).exp());
        s.push_str(&format!("{x},{y}\n"));
    }
    s
}

const CONFIG_1D: &str = r#"
seed = 3
[data]
train = "train.csv"
[domain]
lower = [0.0]
upper = [10.0]
[kernel]
family = "matern52"
variance = 1.0
lengthscales = [0.25]
[knots]
m = [25]
[[constraints]]
type = "bounds"
lower = 0.0
upper = 1.0
[[constraints]]
type = "monotone"
[sampler]
kind = "hmc"
n_samples = 300
burn_in = 100
[prediction]
n = [41]
"#;

#[test]
fn fit_sample_predict_pipeline_respects_constraints_and_data() {
    let xs = [0.5, 2.0, 4.5, 6.0, 9.0];
    let ws = Workspace::new(&sigmoid_train(&xs), CONFIG_1D);
    for cmd in ["fit", "sample", "predict"] {
        assert_ok(&ws.run(&[cmd]));
    }
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.out("model.json")).unwrap()).unwrap();
    assert!(model["map"]["max_violation"].as_f64().unwrap() <= 1e-9);

    let (header, chain) = ws.csv("chain.csv");
    assert_eq!(header.len(), 25);
    assert_eq!(chain.len(), 300);
    for draw in &chain {
        assert!(draw.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
        assert!(draw.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    let (header, pred) = ws.csv("prediction.csv");
    assert_eq!(header, ["x1", "mean", "q05", "q95", "map"]);
    assert_eq!(pred.len(), 41);
    assert_eq!(pred[0][0], 0.0);
    assert_eq!(pred[40][0], 10.0);
    for row in &pred {
        assert!(row[2] <= row[1] + 1e-12 && row[1] <= row[3] + 1e-12);
    }
    assert!(pred.windows(2).all(|w| w[1][1] >= w[0][1] - 1e-9));

    let diagnostics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.out("diagnostics.json")).unwrap()).unwrap();
    assert!(diagnostics.is_object());
    assert!(ws.out("sample_timing.json").exists());
    assert!(ws.out("fit_timing.json").exists());
}

#[test]
fn predictions_at_training_points_interpolate() {
    let xs = [1.0, 3.0, 5.0, 7.0, 9.0];
    let cfg = CONFIG_1D.replace("n = [41]", "points = \"points.csv\"");
    let ws = Workspace::new(&sigmoid_train(&xs), &cfg);
    let mut points = String::from("x\n");
    for x in xs {
        points.push_str(&format!("{x}\n"));
    }
    std::fs::write(ws.dir.path().join("points.csv"), points).unwrap();
    for cmd in ["fit", "sample", "predict"] {
        assert_ok(&ws.run(&[cmd]));
    }
    let (_, pred) = ws.csv("prediction.csv");
    for (row, &x) in pred.iter().zip(&xs) {
        let y = 1.0 / (1.0 + (-(x - 5.0)).exp());
        assert!((row[1] - y).abs() < 1e-6, "mean {} vs {y}", row[1]);
        assert!((row[4] - y).abs() < 1e-6, "map {} vs {y}", row[4]);
    }
}

#[test]
fn malformed_csv_reports_line_and_exits_1() {
    let ws = Workspace::new("x,y\n1,0.1\n2,oops\n", CONFIG_1D);
    let o = ws.run(&["fit"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_config_key_exits_1() {
    let cfg = CONFIG_1D.replace("[sampler]", "[sampler]\nwarp_speed = 9");
    let ws = Workspace::new(&sigmoid_train(&[1.0, 5.0]), &cfg);
    let o = ws.run(&["fit"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("warp_speed"), "{}", stderr(&o));
}

#[test]
fn data_outside_bounds_is_infeasible_exit_2() {
    let ws = Workspace::new("x,y\n2,0.5\n5,1.5\n", CONFIG_1D);
    let o = ws.run(&["fit"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn zero_observations_sample_the_truncated_prior() {
    let ws = Workspace::new("x,y\n", CONFIG_1D);
    assert_ok(&ws.run(&["fit"]));
    assert_ok(&ws.run(&["sample"]));
    let (_, chain) = ws.csv("chain.csv");
    assert_eq!(chain.len(), 300);
    assert!(chain.iter().flatten().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
}

#[test]
fn single_draw_chain_is_written_and_predicts() {
    let cfg = CONFIG_1D.replace("n_samples = 300", "n_samples = 1");
    let ws = Workspace::new(&sigmoid_train(&[1.0, 5.0, 9.0]), &cfg);
    for cmd in ["fit", "sample", "predict"] {
        assert_ok(&ws.run(&[cmd]));
    }
    assert_eq!(ws.csv("chain.csv").1.len(), 1);
    let (_, pred) = ws.csv("prediction.csv");
    assert!(pred.iter().all(|r| r[1] == r[2] && r[1] == r[3]));
}

#[test]
fn explicit_model_and_chain_paths() {
    let ws = Workspace::new(&sigmoid_train(&[1.0, 5.0, 9.0]), CONFIG_1D);
    assert_ok(&ws.run(&["fit"]));
    std::fs::rename(ws.out("model.json"), ws.dir.path().join("m.json")).unwrap();
    assert_ok(&ws.run(&["sample", "--model", "m.json"]));
    std::fs::rename(ws.out("chain.csv"), ws.dir.path().join("c.csv")).unwrap();
    assert_ok(&ws.run(&["predict", "--model", "m.json", "--chain", "c.csv"]));
    assert!(ws.out("prediction.csv").exists());
}

#[test]
fn missing_model_exits_1() {
    let ws = Workspace::new(&sigmoid_train(&[1.0]), CONFIG_1D);
    assert_eq!(ws.run(&["sample"]).status.code(), Some(1));
}

#[test]
fn benchmark_marks_capped_rejection_cells() {
    let cfg = format!(
        "{CONFIG_1D}{}",
        r#"
[benchmark]
samplers = [
  { kind = "rsm", n_samples = 200, rejection_cap = 1000 },
  { kind = "hmc", n_samples = 200, burn_in = 50 },
]
[[benchmark.targets]]
name = "bounded-monotone"
constraints = [{ type = "bounds", lower = 0.0, upper = 1.0 }, { type = "monotone" }]
"#
    );
    let xs: Vec<f64> = (0..10).map(|i| i as f64 + 0.5).collect();
    let ws = Workspace::new(&sigmoid_train(&xs), &cfg);
    assert_ok(&ws.run(&["benchmark"]));
    let mut reader = csv::Reader::from_path(ws.out("benchmark.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let rsm = rows.iter().find(|r| &r[1] == "rsm").unwrap();
    assert!(rsm[3].starts_with("failed"), "{rsm:?}");
    assert_eq!(&rsm[6], "-");
    let hmc = rows.iter().find(|r| &r[1] == "hmc").unwrap();
    assert_eq!(&hmc[3], "ok");
    assert!(hmc[6].parse::<f64>().unwrap() > 0.0);
    assert!(ws.out("benchmark_timing.csv").exists());
}

#[test]
fn estimate_in_degenerate_box_returns_the_fixed_point() {
    let cfg = format!(
        "{CONFIG_1D}{}",
        r#"
[estimation]
method = "mle"
variance = [0.7, 0.7]
lengthscales = [[0.3, 0.3]]
starts = 2
"#
    );
    let ws = Workspace::new(&sigmoid_train(&[1.0, 4.0, 6.0, 9.0]), &cfg);
    let o = ws.run(&["estimate"]);
    assert_ok(&o);
    let est: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.out("estimation.json")).unwrap()).unwrap();
    assert_eq!(est["variance"].as_f64(), Some(0.7));
    assert_eq!(est["lengthscales"][0].as_f64(), Some(0.3));
    assert!(est["value"].as_f64().unwrap().is_finite());
}

#[test]
fn two_dimensional_monotone_prediction_grid() {
    let mut train = String::from("x1,x2,y\n");
    for (a, b) in [(0.1, 0.2), (0.5, 0.5), (0.9, 0.3), (0.3, 0.8), (0.7, 0.9)] {
        let y: f64 = ((5.0f64 * a).atan() + (b as f64).atan()) / (5f64.atan() + 1f64.atan());
        train.push_str(&format!("{a},{b},{y}\n"));
    }
    let cfg = r#"
seed = 5
[data]
train = "train.csv"
[kernel]
family = "se"
variance = 1.0
lengthscales = [0.4, 0.4]
[knots]
m = [6, 6]
[[constraints]]
type = "monotone"
axes = [0, 1]
[sampler]
kind = "hmc"
n_samples = 200
burn_in = 100
[prediction]
n = [5, 4]
"#;
    let ws = Workspace::new(&train, cfg);
    for cmd in ["fit", "sample", "predict"] {
        assert_ok(&ws.run(&[cmd]));
    }
    let (header, pred) = ws.csv("prediction.csv");
    assert_eq!(header[..2], ["x1", "x2"]);
    assert_eq!(pred.len(), 20);
    // Rows run over x2 fastest; the posterior mean rises along both axes.
    for i in 0..5 {
        for j in 0..4 {
            let here = pred[i * 4 + j][2];
            if j + 1 < 4 {
                assert!(pred[i * 4 + j + 1][2] >= here - 1e-9);
            }
            if i + 1 < 5 {
                assert!(pred[(i + 1) * 4 + j][2] >= here - 1e-9);
            }
        }
    }
}
