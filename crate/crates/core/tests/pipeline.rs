use dp_admm::data::{load_dataset, DataFormat};
use dp_admm::experiments::suites::read_tradeoff_csv;
use dp_admm::experiments::{run_experiment, run_tradeoff_suite, ExperimentConfig};
use dp_admm::trace::RunTrace;

fn separable_rows(n: usize) -> Vec<(f64, f64, f64)> {
    (0..n)
        .map(|i| {
            let a = (i as f64 * 0.7).sin() * 3.0;
            let b = (i as f64 * 1.3).cos() * 2.0;
            (a, b, if a - 0.5 * b >= 0.0 { 1.0 } else { -1.0 })
        })
        .collect()
}

#[test]
fn csv_and_libsvm_files_give_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let rows = separable_rows(80);
    let csv: String = rows.iter().map(|(a, b, y)| format!("{a},{b},{y}\n")).collect();
    let svm: String = rows.iter().map(|(a, b, y)| format!("{y} 1:{a} 2:{b}\n")).collect();
    std::fs::write(dir.path().join("d.csv"), csv).unwrap();
    std::fs::write(dir.path().join("d.svm"), svm).unwrap();
    assert_eq!(
        load_dataset(dir.path().join("d.csv"), DataFormat::Csv).unwrap().points,
        load_dataset(dir.path().join("d.svm"), DataFormat::Libsvm).unwrap().points
    );

    let run = |file: &str, format: &str| {
        let out = dir.path().join(format);
        let text = format!(
            "mechanism = \"dvp\"\nalphas = [0.5]\nrho = 0.1\nc_r = 2.0\niterations = 15\nseeds = [4]\noutput_dir = \"{}\"\n[data]\nsource = \"file\"\npath = \"{file}\"\nformat = \"{format}\"\n",
            out.display()
        );
        std::fs::write(dir.path().join("cfg.toml"), text).unwrap();
        let cfg = ExperimentConfig::load(dir.path().join("cfg.toml")).unwrap();
        let summary = run_experiment(&cfg).unwrap();
        let text = std::fs::read_to_string(&summary[0].trace_file).unwrap();
        RunTrace::read_csv(text.as_bytes()).unwrap()
    };
    let a = run("d.csv", "csv");
    let b = run("d.svm", "libsvm");
    assert_eq!(a.len(), 15);
    assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
}

#[test]
fn tradeoff_suite_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
mechanism = "pvp"
alphas = [0.05, 0.1, 0.2, 0.4, 0.7, 1.0]
rho = 1.0
c_r = 5.0
iterations = 30
seeds = [1, 2, 3]
test_fraction = 0.2
output_dir = "{}"
[data]
source = "synthetic"
n = 150
d = 4
flip = 0.05
seed = 11
"#,
        dir.path().display()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let rep = run_tradeoff_suite(&cfg).unwrap();
    let points = read_tradeoff_csv(&std::fs::read_to_string(&rep.csv).unwrap()).unwrap();
    assert_eq!(points.len(), 6);
    assert!(points.iter().all(|p| p.misclassification.is_some()));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("tradeoff_fit.json")).unwrap()).unwrap();
    assert_eq!(json["mechanism"], "pvp");
    assert!(rep.nonprivate_loss <= points.iter().map(|p| p.mean_loss).fold(f64::INFINITY, f64::min));
}
