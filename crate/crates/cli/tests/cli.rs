use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fieldsync_core::fixtures::SCORCH_SCHEMA_JSON;
use fieldsync_core::geo::GridSpec;
use fieldsync_core::sim::{load_scenario, run};
use fieldsync_core::sync::Tier;
use fieldsync_service::blobs::digest;
use fieldsync_service::storage::DurableStore;
use fieldsync_service::{HttpPeer, RunningService, ServiceConfig};
use serde_json::Value;

const DEMO: &[u8] = include_bytes!("../scenarios/scorch-demo.json");

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn fieldsync(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fieldsync"));
    for (k, _) in std::env::vars() {
        if k.starts_with("FIELDSYNC_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = fieldsync(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn grid(rows: usize, cols: usize) -> GridSpec {
    GridSpec {
        origin_lat: 40.0,
        origin_lon: -105.0,
        cell_size_m: 20.0,
        rows,
        cols,
        target_per_cell: 1,
    }
}

/// A device data dir with config.json and the scorch schema.
fn device_dir(root: &Path, device_id: &str, grid: &GridSpec, edge: Option<&str>, cloud: Option<&str>) -> PathBuf {
    let dir = root.join(device_id);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("schema.json"), SCORCH_SCHEMA_JSON).unwrap();
    let cfg = serde_json::json!({
        "device_id": device_id,
        "data_dir": ".",
        "grid": grid,
        "schema": "schema.json",
        "edge_url": edge,
        "cloud_url": cloud,
    });
    std::fs::write(dir.join("config.json"), serde_json::to_vec(&cfg).unwrap()).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_scenario_converges_and_reports_match_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let export = tmp.path().join("demo");
    let out = ok(&["simulate", "scorch-demo", "--export", s(&export)]);
    assert!(out.starts_with("converged: true\n"), "{out}");
    assert_eq!(out, golden("simulate.txt"));

    let a = export.join("teamA-phone1");
    let b = export.join("teamB-phone1");
    assert_eq!(ok(&["--data-dir", s(&a), "status"]), golden("status-teamA-phone1.txt"));
    assert_eq!(ok(&["--data-dir", s(&b), "status"]), golden("status-teamB-phone1.txt"));
    assert_eq!(ok(&["--data-dir", s(&a), "coverage"]), golden("coverage.txt"));
    assert_eq!(ok(&["--data-dir", s(&a), "missing"]), golden("missing.txt"));
}

#[test]
fn demo_reports_equal_library_results() {
    let tmp = tempfile::tempdir().unwrap();
    let export = tmp.path().join("demo");
    ok(&["simulate", "scorch-demo", "--export", s(&export)]);
    let scenario = load_scenario(DEMO).unwrap();
    let outcome = run(scenario.clone()).unwrap();

    for (plan, node) in scenario.devices.iter().zip(&outcome.devices) {
        let dir = export.join(&plan.device_id);
        let stored = DurableStore::open(&dir, Tier::Device, &plan.device_id).unwrap();
        let ids: Vec<_> = stored.store().ids().cloned().collect();
        let want: Vec<_> = node.store.ids().cloned().collect();
        assert_eq!(ids, want);

        // status letters follow the ledger state
        let status: Value = serde_json::from_str(&ok(&["--json", "--data-dir", s(&dir), "status"])).unwrap();
        for row in status.as_array().unwrap() {
            let id = row["id"].as_str().unwrap().parse().unwrap();
            let state = node.ledger.get(&id).unwrap();
            let letter = match state.as_str() {
                "UNSYNCED" => "R",
                "EDGE_CACHED" => "G",
                "REMOTE" => "B",
                other => panic!("{other}"),
            };
            assert_eq!(row["color"], letter);
            assert_eq!(row["state"], state.as_str());
        }

        // coverage recounted by hand from the exported records
        let cov: Value = serde_json::from_str(&ok(&["--json", "--data-dir", s(&dir), "coverage"])).unwrap();
        let g = &scenario.grid;
        let mut counts = vec![vec![0u64; g.cols]; g.rows];
        let mut outside = 0;
        for r in stored.store().iter() {
            let x = (r.lon - g.origin_lon) * 111_320.0 * g.origin_lat.to_radians().cos();
            let y = (r.lat - g.origin_lat) * 111_320.0;
            let (c, rr) = ((x / g.cell_size_m).floor(), (y / g.cell_size_m).floor());
            if c >= 0.0 && rr >= 0.0 && (c as usize) < g.cols && (rr as usize) < g.rows {
                counts[rr as usize][c as usize] += 1;
            } else {
                outside += 1;
            }
        }
        assert_eq!(cov["counts"], serde_json::json!(counts));
        assert_eq!(cov["out_of_bounds"], outside);

        let missing: Value = serde_json::from_str(&ok(&["--json", "--data-dir", s(&dir), "missing"])).unwrap();
        let zero: Vec<Value> = (0..g.rows)
            .flat_map(|r| (0..g.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| counts[r][c] == 0)
            .map(|(r, c)| serde_json::json!({"row": r, "col": c}))
            .collect();
        assert_eq!(missing, Value::Array(zero));
    }
}

#[test]
fn collect_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = device_dir(tmp.path(), "teamA-phone1", &grid(5, 5), None, None);
    let d = s(&dir);

    let out = ok(&["--data-dir", d, "collect", "scorch=42", "--lat", "40.0001", "--lon", "-105.0003"]);
    assert_eq!(out, "teamA-phone1/0 UNSYNCED\n");

    let bad = fieldsync(&["--data-dir", d, "collect", "scorch=142", "--lat", "40.0001", "--lon", "-105.0003"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("OutOfRange scorch"), "{}", stderr(&bad));

    let out = ok(&["--data-dir", d, "collect", "note=wind shift", "scorch=10", "--lat", "40.0001", "--lon", "-105.0003"]);
    assert_eq!(out, "teamA-phone1/1 UNSYNCED\n");

    let missing = fieldsync(&["--data-dir", d, "collect", "note=no scorch", "--lat", "40", "--lon", "-105"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("MissingField scorch"));

    let status = ok(&["--data-dir", d, "status"]);
    assert_eq!(
        status,
        "ID              STATE        COLOR\nteamA-phone1/0  UNSYNCED     R\nteamA-phone1/1  UNSYNCED     R\n"
    );
}

#[test]
fn flags_override_environment_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = device_dir(tmp.path(), "fromfile", &grid(2, 2), None, None);
    let collect = ["collect", "scorch=1", "--lat", "40", "--lon", "-105"];

    let mut args = vec!["--data-dir", s(&dir)];
    args.extend(collect);
    assert_eq!(ok(&args), "fromfile/0 UNSYNCED\n");

    let env_run = Command::new(env!("CARGO_BIN_EXE_fieldsync"))
        .env("FIELDSYNC_DATA_DIR", &dir)
        .env("FIELDSYNC_DEVICE_ID", "fromenv")
        .args(collect)
        .output()
        .unwrap();
    assert_eq!(stdout(&env_run), "fromenv/0 UNSYNCED\n", "{}", stderr(&env_run));

    let flag_run = Command::new(env!("CARGO_BIN_EXE_fieldsync"))
        .env("FIELDSYNC_DATA_DIR", &dir)
        .env("FIELDSYNC_DEVICE_ID", "fromenv")
        .args(["--device-id", "fromflag"])
        .args(collect)
        .output()
        .unwrap();
    assert_eq!(stdout(&flag_run), "fromflag/0 UNSYNCED\n", "{}", stderr(&flag_run));
}

#[test]
fn sync_offline_keeps_data_red() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let dir = device_dir(tmp.path(), "dev", &grid(5, 5), Some(&url), None);
    ok(&["--data-dir", s(&dir), "collect", "scorch=5", "--lat", "40", "--lon", "-105"]);

    let o = fieldsync(&["--data-dir", s(&dir), "sync", "--peer", "edge", "--timeout", "2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("offline: data cached locally"), "{}", stderr(&o));
    assert!(ok(&["--data-dir", s(&dir), "status"]).contains("dev/0  UNSYNCED     R"));

    let none = fieldsync(&["--data-dir", s(&dir), "sync", "--peer", "cloud"]);
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn sync_through_edge_then_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let schema = tmp.path().join("schema.json");
    std::fs::write(&schema, SCORCH_SCHEMA_JSON).unwrap();
    let mut cc = ServiceConfig::new(Tier::Cloud, "127.0.0.1:0", tmp.path().join("cloud"));
    cc.schema = Some(schema.clone());
    let cloud = RunningService::start(&cc).unwrap();
    let mut ec = ServiceConfig::new(Tier::Edge, "127.0.0.1:0", tmp.path().join("edge"));
    ec.upstream = Some(cloud.url());
    ec.upstream_sync_interval_secs = 3600.0;
    ec.schema = Some(schema);
    let edge = RunningService::start(&ec).unwrap();

    let dir = device_dir(tmp.path(), "teamA-phone1", &grid(5, 5), Some(&edge.url()), Some(&cloud.url()));
    let d = s(&dir);
    let photo = tmp.path().join("photo.jpg");
    std::fs::write(&photo, b"jpeg bytes").unwrap();
    ok(&["--data-dir", d, "collect", "scorch=42", "--lat", "40.0001", "--lon", "-105.0003", "--image", s(&photo)]);

    let out = ok(&["--data-dir", d, "sync", "--peer", "edge"]);
    assert_eq!(out, "pushed 1, pulled 0, promoted 1\u{2192}EDGE_CACHED\nuploaded 1 blob(s)\n");
    assert!(ok(&["--data-dir", d, "status"]).ends_with("EDGE_CACHED  G\n"));
    assert_eq!(ok(&["--data-dir", d, "sync", "--peer", "edge"]), "pushed 0, pulled 0\n");

    let edge_peer = HttpPeer::connect(&edge.url()).unwrap();
    assert_eq!(edge_peer.get_blob(&digest(b"jpeg bytes")).unwrap().unwrap(), b"jpeg bytes");

    edge.state().sync_upstream().unwrap();
    let cloud_peer = HttpPeer::connect(&cloud.url()).unwrap();
    assert_eq!(cloud_peer.get_blob(&digest(b"jpeg bytes")).unwrap().unwrap(), b"jpeg bytes");

    let out = ok(&["--data-dir", d, "sync", "--peer", "cloud"]);
    assert_eq!(out, "pushed 0, pulled 0, promoted 1\u{2192}REMOTE\n");
    assert!(ok(&["--data-dir", d, "status"]).ends_with("REMOTE       B\n"));
}

#[test]
fn missing_on_empty_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = device_dir(tmp.path(), "dev", &grid(2, 2), None, None);
    let out = ok(&["--data-dir", s(&dir), "missing"]);
    assert_eq!(out, "ROW  COL\n  0    0\n  0    1\n  1    0\n  1    1\n4 of 4 cells empty\n");
    let under = ok(&["--data-dir", s(&dir), "missing", "--under-sampled"]);
    assert_eq!(under.lines().count(), 5);
}

#[test]
fn anomalies_flags_the_planted_outlier() {
    let tmp = tempfile::tempdir().unwrap();
    let g = grid(3, 3);
    let dir = device_dir(tmp.path(), "dev", &g, None, None);
    let (lat, lon) = g.unproject(30.0, 30.0);
    let (lat, lon) = (lat.to_string(), lon.to_string());
    for v in ["10", "11", "9", "10", "95"] {
        ok(&["--data-dir", s(&dir), "collect", &format!("scorch={v}"), "--lat", &lat, "--lon", &lon]);
    }
    let out = ok(&["--data-dir", s(&dir), "anomalies"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2, "{out}");
    assert!(lines[1].starts_with("dev/4 "), "{out}");
    let z: f64 = lines[1].split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((z - 57.33).abs() < 0.01, "{z}");
}

#[test]
fn renderplan_marks_an_off_view_sensor() {
    let tmp = tempfile::tempdir().unwrap();
    let g = grid(5, 5);
    let dir = device_dir(tmp.path(), "dev", &g, None, None);
    // due east of a north-facing viewer at the origin
    let (lat, lon) = g.unproject(40.0, 0.0);
    ok(&["--data-dir", s(&dir), "collect", "scorch=60", "--lat", &lat.to_string(), "--lon", &lon.to_string(), "--source", "sensor"]);
    let out = ok(&["--data-dir", s(&dir), "renderplan", "--viewer", "0,0,0,1.0472"]);
    let plan: Value = serde_json::from_str(&out).unwrap();
    let hud = plan["hud"].as_array().unwrap();
    assert_eq!(hud.len(), 1);
    assert_eq!(hud[0]["side"], "RIGHT");
    assert_eq!(hud[0]["source_id"], "dev/0");

    let file = tmp.path().join("plan.json");
    let msg = ok(&["--data-dir", s(&dir), "renderplan", "--viewer", "0,0,3.1416,1.0472", "--out", s(&file)]);
    assert!(msg.contains("1 hud mark(s)"));
    let plan: Value = serde_json::from_slice(&std::fs::read(file).unwrap()).unwrap();
    assert_eq!(plan["hud"][0]["side"], "LEFT");
}

#[test]
fn serve_config_and_bind_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    let o = fieldsync(&["--data-dir", d, "serve", "--tier", "edge", "--bind", "127.0.0.1:0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EDGE requires an upstream"), "{}", stderr(&o));

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = fieldsync(&["--data-dir", d, "serve", "--tier", "cloud", "--bind", &addr]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn serve_runs_a_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_fieldsync"))
        .args(["--data-dir", s(tmp.path()), "serve", "--tier", "cloud", "--bind", &format!("127.0.0.1:{port}")])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let mut health = None;
    for _ in 0..100 {
        if let Ok(p) = HttpPeer::connect(&url) {
            health = p.health().ok();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let health = health.expect("service came up");
    assert_eq!(health.tier, Tier::Cloud);
}

#[test]
fn bad_scenarios_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fieldsync(&["simulate", s(&tmp.path().join("nope.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, br#"{"seed": 1}"#).unwrap();
    assert_eq!(fieldsync(&["simulate", s(&bad)]).status.code(), Some(2));
}
