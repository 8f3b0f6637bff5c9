use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lorasense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorasense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lorasense(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_single_uplink_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--duration",
        "60",
        "--interval",
        "60",
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    let m = manifest(&out);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 42);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
    assert!(m["started_unix_s"].as_f64().unwrap() <= m["finished_unix_s"].as_f64().unwrap());
}

#[test]
fn simulate_default_corpus_size() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", p(tmp.path())]);
    let csv = fs::read_to_string(tmp.path().join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7000 * 3);
}

fn separable_records(path: &Path) {
    let mut text = String::from(
        "timestamp_s,node_id,gateway_id,rssi_dbm,snr_db,sf,bw_khz,cr,freq_mhz,occupancy\n",
    );
    for i in 0..60 {
        let occupancy = [5, 20, 28, 35, 45][i % 5];
        let class_offset = (i % 5) as f64 * 6.0;
        for (g, base) in [("gw1", -80.0), ("gw2", -90.0)] {
            let rssi = base - class_offset - 0.01 * (i / 5) as f64;
            text.push_str(&format!(
                "{},node-1,{g},{rssi},5,7,125,4/5,868,{occupancy}\n",
                i * 60
            ));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn train_and_evaluate_separable_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.csv");
    separable_records(&records);
    let train_dir = tmp.path().join("train");
    ok(&[
        "train",
        "--records",
        p(&records),
        "--folds",
        "3",
        "--split",
        "0.7",
        "--out",
        p(&train_dir),
    ]);
    let cv = fs::read_to_string(train_dir.join("cv_report.csv")).unwrap();
    let mean = cv.lines().last().unwrap();
    assert!(mean.starts_with("mean,60,1,1,1,0"), "{mean}");
    assert!(train_dir.join("holdout_report.csv").exists());
    assert_eq!(manifest(&train_dir)["outputs"].as_array().unwrap().len(), 3);

    let eval_dir = tmp.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        p(&train_dir.join("model.json")),
        "--records",
        p(&records),
        "--out",
        p(&eval_dir),
    ]);
    let report = fs::read_to_string(eval_dir.join("fig4_metrics.csv")).unwrap();
    for line in report.lines().skip(1).take(5) {
        assert!(line.ends_with(",1,1,1,0"), "{line}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_samples"], 60);
}

#[test]
fn corrupted_csv_fails_with_row_numbers_and_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("bad.csv");
    fs::write(
        &records,
        "timestamp_s,node_id,gateway_id,rssi_dbm,snr_db,sf,bw_khz,cr,freq_mhz,occupancy\n\
         0,n,gw1,-90,5,7,125,4/5,868,3\n\
         60,n,gw1,loud,5,7,125,4/5,868,3\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let res = lorasense(&["train", "--records", p(&records), "--out", p(&out)]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("row 2") && err.contains("rssi_dbm"), "{err}");
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn unlabeled_training_data_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("u.csv");
    fs::write(
        &records,
        "timestamp_s,node_id,gateway_id,rssi_dbm,snr_db,sf,bw_khz,cr,freq_mhz,occupancy\n\
         0,n,gw1,-90,5,7,125,4/5,868,\n0,n,gw2,-95,5,7,125,4/5,868,\n",
    )
    .unwrap();
    let res = lorasense(&[
        "train",
        "--records",
        p(&records),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("label"));
}

#[test]
fn baseline_writes_five_column_table() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.csv");
    separable_records(&records);
    ok(&["baseline", "--records", p(&records), "--out", p(tmp.path())]);
    let table = fs::read_to_string(tmp.path().join("table1_kmeans.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "class_1,class_2,class_3,class_4,class_5");
    assert_eq!(lines[1].split(',').count(), 5);
    assert!(tmp.path().join("kmeans_model.json").exists());
}

#[test]
fn plan_selects_sixteen_of_twenty_eight() {
    let tmp = tempfile::tempdir().unwrap();
    let map = tmp.path().join("map.csv");
    let mut text =
        String::from("point_id,x_m,y_m,z_m,gateway_id,mean_rssi_dbm,var_rssi_db2,n_samples\n");
    for i in 0..28 {
        for g in ["gw1", "gw2", "gw3"] {
            text.push_str(&format!(
                "p{i:02},{i},0,1,{g},-90,{},10\n",
                (i * 7 % 11) as f64 * 0.5
            ));
        }
    }
    fs::write(&map, text).unwrap();
    ok(&[
        "plan",
        "--map",
        p(&map),
        "--m",
        "16",
        "--out",
        p(tmp.path()),
    ]);
    let sel = fs::read_to_string(tmp.path().join("selected_points.csv")).unwrap();
    assert_eq!(sel.lines().count(), 17);

    let res = lorasense(&[
        "plan",
        "--map",
        p(&map),
        "--m",
        "29",
        "--out",
        p(&tmp.path().join("x")),
    ]);
    assert!(!res.status.success());
}

#[test]
fn plan_from_survey_records() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("survey.csv");
    fs::write(
        &records,
        "timestamp_s,node_id,gateway_id,rssi_dbm,snr_db,sf,bw_khz,cr,freq_mhz,occupancy\n\
         0,a,gw1,-88,5,7,125,4/5,868,\n60,a,gw1,-92,5,7,125,4/5,868,\n\
         0,b,gw1,-90,5,7,125,4/5,868,\n60,b,gw1,-90,5,7,125,4/5,868,\n",
    )
    .unwrap();
    let positions = tmp.path().join("pos.csv");
    fs::write(&positions, "point_id,x_m,y_m,z_m\na,0,0,1\nb,5,0,1\n").unwrap();
    ok(&[
        "plan",
        "--records",
        p(&records),
        "--positions",
        p(&positions),
        "--m",
        "1",
        "--out",
        p(tmp.path()),
    ]);
    let sel = fs::read_to_string(tmp.path().join("selected_points.csv")).unwrap();
    assert_eq!(sel, "rank,point_id,score_db2\n1,a,8\n");
    assert!(fs::read_to_string(tmp.path().join("radio_map.csv"))
        .unwrap()
        .contains("a,0,0,1,gw1,-90,8,2"));
}

#[test]
fn study_with_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("scenario.toml");
    fs::write(&cfg, "duration_s = 30000.0\n").unwrap();
    ok(&["study", "--config", p(&cfg), "--out", p(tmp.path())]);
    let table = fs::read_to_string(tmp.path().join("fig5_position.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "position_id,x_m,y_m,accuracy_macro");
    assert!(lines[1].starts_with("center,50,17.5,"));
    assert!(lines[2].starts_with("entrance,0,17.5,"));
    assert_eq!(manifest(tmp.path())["config_path"], p(&cfg));

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert!(!lorasense(&[
        "study",
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("y"))
    ])
    .status
    .success());
}

#[test]
fn help_lists_flags_with_units() {
    for (cmd, needles) in [
        ("simulate", vec!["--duration", "SECONDS", "--interval"]),
        (
            "train",
            vec![
                "--records",
                "--kernel",
                "--c",
                "--gamma",
                "--tol",
                "--max-passes",
                "--folds",
                "--split",
                "FRACTION",
            ],
        ),
        ("evaluate", vec!["--model", "--records"]),
        ("baseline", vec!["--k", "--max-iter", "--restarts"]),
        ("plan", vec!["--map", "--positions", "--m", "dB^2"]),
        ("study", vec!["--positions", "--coverage-radius", "metres"]),
    ] {
        let out = ok(&[cmd, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for n in needles.iter().chain(&["--config", "--seed", "--out"]) {
            assert!(text.contains(n), "{cmd} --help lacks {n}:\n{text}");
        }
    }
}
