use adcov::adaptation::ConsensusMode;
use adcov::harness::record::{column_names, position_error, to_csv, to_jsonl, velocity_error};
use adcov::harness::{apply_overrides, export, load_scenario, preset, run, run_with, ExportFormat, Scenario};
use adcov::Execution;
use serde_json::{Map, Value};

fn short(name: &str, overrides: &[&str]) -> Scenario {
    let mut all = vec!["duration=3"];
    all.extend_from_slice(overrides);
    Scenario::from_config(apply_overrides(&preset(name).unwrap(), &all).unwrap()).unwrap()
}

#[test]
fn zero_duration_records_only_the_initial_sample() {
    let s = short("table1", &["duration=0"]);
    let r = run(&s).unwrap();
    assert_eq!(r.samples.len(), 1);
    assert_eq!(r.samples[0].t, 0.0);
    assert_eq!(r.samples[0].poses, s.initial_poses);
}

#[test]
fn timestamps_advance_by_the_control_period() {
    let r = run(&short("table1", &[])).unwrap();
    assert_eq!(r.samples.len(), 31);
    for (k, s) in r.samples.iter().enumerate() {
        assert_eq!(s.t, k as f64 * 0.1);
    }
}

#[test]
fn sequential_and_parallel_runs_agree_bitwise() {
    let s = short("table1", &["consensus=directed", "agents.count=7"]);
    let a = run_with(&s, Execution::Sequential).unwrap();
    let b = run_with(&s, Execution::Parallel).unwrap();
    assert_eq!(to_csv(&a), to_csv(&b));
    assert_eq!(a, b);
}

#[test]
fn noisy_runs_are_reproducible_per_seed() {
    let s = short("table1", &["measurement_noise_std=0.5", "seed=3"]);
    let a = to_jsonl(&run(&s).unwrap());
    assert_eq!(a, to_jsonl(&run(&s).unwrap()));
    let other = short("table1", &["measurement_noise_std=0.5", "seed=4"]);
    assert_ne!(a, to_jsonl(&run(&other).unwrap()));
}

#[test]
fn metrics_recompute_from_record_and_exports() {
    let s = short("table1", &["consensus=undirected"]);
    let r = run(&s).unwrap();
    let n = s.n_agents();
    let p = s.n_params();
    let names = column_names(n, p);
    assert_eq!(names.len(), 1 + n * (5 + p) + 5 + 4);

    for sample in &r.samples {
        assert!((position_error(&sample.poses, &sample.centroids) - sample.e_p).abs() <= 1e-9);
        assert!((velocity_error(&sample.commands) - sample.e_v).abs() <= 1e-9);
    }

    // again from the JSON-lines export, which keeps full precision
    let jsonl = to_jsonl(&r);
    for (line, sample) in jsonl.lines().zip(&r.samples) {
        let obj: Map<String, Value> = serde_json::from_str(line).unwrap();
        let get = |k: &str| obj[k].as_f64().unwrap();
        let ev: f64 = (0..n).map(|i| get(&format!("u_{i}")).hypot(get(&format!("omega_{i}")))).sum();
        assert!((ev - get("e_v")).abs() <= 1e-9);
        let ep: f64 = (0..n)
            .filter_map(|i| {
                sample.centroids[i].map(|c| (get(&format!("x_{i}")) - c.x).hypot(get(&format!("y_{i}")) - c.y))
            })
            .sum();
        assert!((ep - get("e_p")).abs() <= 1e-9);
    }
}

#[test]
fn csv_round_trip_within_print_precision() {
    let r = run(&short("table1", &[])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    export(&r, ExportFormat::Csv, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, column_names(r.n_agents, r.n_params));
    for (line, sample) in lines.zip(&r.samples) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), header.len());
        let col = |name: &str| cells[header.iter().position(|h| *h == name).unwrap()];
        for (name, v) in [("t", sample.t), ("e_p", sample.e_p), ("V", sample.lyapunov), ("x_2", sample.poses[2].x)] {
            assert!((col(name) - v).abs() <= 5e-9 * v.abs(), "{name}");
        }
        assert!((col("a_hat_4_1") - sample.estimates[4][1]).abs() <= 5e-9 * sample.estimates[4][1]);
        assert_eq!(col("n_saturated") as usize, sample.counters.n_saturated);
    }
}

#[test]
fn export_reports_unwritable_path() {
    let r = run(&short("table1", &["duration=0"])).unwrap();
    let err = export(&r, ExportFormat::Csv, std::path::Path::new("/nonexistent-dir/x.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
}

#[test]
fn single_integrator_closes_distance_to_centroid() {
    let r = run(&short("single_agent", &["duration=40"])).unwrap();
    let dist: Vec<f64> = r
        .samples
        .iter()
        .map(|s| (s.poses[0].position() - s.centroids[0].unwrap()).norm())
        .collect();
    for w in dist.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(dist[dist.len() - 1] < 1e-2 * dist[0], "{} -> {}", dist[0], dist[dist.len() - 1]);
}

#[test]
fn locational_controller_runs_and_converges() {
    let s = short("table1", &["controller=diff_drive_locopt", "duration=60", "sensing={kind=\"constant\", range=1.0}"]);
    let r = run(&s).unwrap();
    let (f, l) = (r.first().unwrap(), r.last().unwrap());
    assert!(l.e_p < f.e_p);
    assert!(l.counters.n_zero_mass == 0);
}

#[test]
fn position_feed_knob_changes_nothing_at_the_control_rate() {
    let exact = run(&short("table1", &[])).unwrap();
    let fed = run(&short("table1", &["rates.position_hz=10"])).unwrap();
    assert_eq!(to_csv(&exact), to_csv(&fed));
    let slow = run(&short("table1", &["rates.position_hz=5"])).unwrap();
    assert_ne!(to_csv(&exact), to_csv(&slow));
}

#[test]
fn undirected_consensus_form_is_dissipative() {
    let r = run(&short("table1", &["consensus=undirected", "duration=10"])).unwrap();
    assert!(r.samples.iter().all(|s| s.diagnostics.consensus_quadratic_form >= -1e-9));
}

#[test]
fn scenario_document_loads() {
    let doc = r#"
name = "two robots"
duration = 1.0
seed = 5
consensus = "directed"

[domain]
vertices = [[0.0, 0.0], [3.0, 0.0], [3.0, 2.0], [0.0, 2.0]]

[agents]
count = 2
poses = [[0.5, 0.5, 0.0], [2.5, 1.5, 3.0]]

[density]
centers = [[1.0, 1.0], [2.0, 1.0]]
widths = [0.5, 0.5]
true_params = [20.0, 5.0]

[gains]
adapt_gain = [[0.2, 0.0], [0.0, 0.1]]
"#;
    let s = load_scenario(doc).unwrap();
    assert_eq!(s.consensus, ConsensusMode::Directed);
    assert_eq!(s.gains.gamma[(0, 0)], 0.2);
    let r = run(&s).unwrap();
    assert_eq!(r.samples.len(), 11);
    assert!(load_scenario(&doc.replace("duration = 1.0", "")).unwrap_err().to_string().contains("duration"));
}
