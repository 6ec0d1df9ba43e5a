use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fleetlens(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetlens"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_stream(dir: &Path) {
    fs::write(
        dir.join("synth.json"),
        r#"{ "n_vehicles": 30, "n_days": 6, "poll_period_s": 120, "seed": 5, "glitch_rate": 0.01 }"#,
    )
    .unwrap();
    ok(&fleetlens(
        &[
            "synth",
            "--config",
            "synth.json",
            "--out",
            "stream.jsonl",
            "--truth",
            "truth.json",
        ],
        dir,
    ));
}

const CITIES: &str = r#"[{
  "city_id": "synth",
  "bounds": { "min_lat": 48.0, "max_lat": 48.3, "min_lon": 11.4, "max_lon": 11.8 },
  "grid_anchor": { "lat": 48.137, "lon": 11.575 }
}]"#;

#[test]
fn stage_subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_stream(dir);
    fs::write(dir.join("cities.json"), CITIES).unwrap();
    ok(&fleetlens(
        &[
            "ingest",
            "--input",
            "stream.jsonl",
            "--bounds",
            "cities.json",
            "--poll-period-s",
            "120",
            "--out",
            "timelines.json",
        ],
        dir,
    ));
    ok(&fleetlens(
        &[
            "trips",
            "--timelines",
            "timelines.json",
            "--provider",
            "offline",
            "--out",
            "trips.jsonl",
        ],
        dir,
    ));
    ok(&fleetlens(
        &[
            "metrics",
            "--trips",
            "trips.jsonl",
            "--timelines",
            "timelines.json",
            "--out",
            "kpis.json",
        ],
        dir,
    ));
    ok(&fleetlens(
        &[
            "grid",
            "--timelines",
            "timelines.json",
            "--trips",
            "trips.jsonl",
            "--bounds",
            "cities.json",
            "--cell-side",
            "500",
            "--bin",
            "10min",
            "--out",
            "cells",
        ],
        dir,
    ));
    ok(&fleetlens(
        &[
            "cluster",
            "--profiles",
            "cells",
            "--band",
            "6",
            "--kmin",
            "2",
            "--kmax",
            "5",
            "--out",
            "clusters.json",
        ],
        dir,
    ));
    ok(&fleetlens(
        &["regularity", "--cells", "cells", "--out", "regularity.csv"],
        dir,
    ));
    ok(&fleetlens(
        &[
            "service-areas",
            "--timelines",
            "timelines.json",
            "--window",
            "6d",
            "--window",
            "3d",
            "--top",
            "3",
            "--threshold",
            "0.5",
            "--out",
            "service.json",
        ],
        dir,
    ));
    for f in [
        "timelines.json",
        "trips.jsonl",
        "kpis.json",
        "cells/synth/fractions.csv",
        "clusters.json",
        "regularity.csv",
        "service.json",
    ] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let kpis: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("kpis.json")).unwrap()).unwrap();
    assert_eq!(kpis["cities"]["synth"]["fleet_size"], 30);

    fs::write(
        dir.join("ind.csv"),
        "city,car,moto,pt,bike,walk\na,0.6,0.05,0.2,0.05,0.1\nb,0.3,0.02,0.45,0.05,0.18\nc,0.35,0.02,0.15,0.25,0.23\n",
    )
    .unwrap();
    ok(&fleetlens(
        &["modal-split", "--indicators", "ind.csv", "--out", "modal.json"],
        dir,
    ));
}

#[test]
fn run_and_rerun_one_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_stream(dir);
    let mut cfg: serde_json::Value = serde_json::json!({
        "cities": serde_json::from_str::<serde_json::Value>(CITIES).unwrap(),
        "inputs": ["stream.jsonl"],
        "out_dir": "out",
        "ingest": { "poll_period_s": 120, "gap_tolerance_s": 360 },
        "service": { "window_days": [6, 3] }
    });
    fs::write(dir.join("pipeline.json"), cfg.to_string()).unwrap();
    ok(&fleetlens(&["run", "--config", "pipeline.json"], dir));
    let report = fs::read(dir.join("out/report.json")).unwrap();
    let timelines = fs::read(dir.join("out/timelines.json")).unwrap();

    ok(&fleetlens(
        &["run", "--config", "pipeline.json", "--stage", "metrics"],
        dir,
    ));
    assert_eq!(fs::read(dir.join("out/timelines.json")).unwrap(), timelines);
    assert_eq!(fs::read(dir.join("out/report.json")).unwrap(), report);

    ok(&fleetlens(
        &[
            "--threads",
            "1",
            "run",
            "--config",
            "pipeline.json",
            "--out-dir",
            "again",
        ],
        dir,
    ));
    assert_eq!(fs::read(dir.join("again/report.json")).unwrap(), report);

    cfg["inputs"] = serde_json::json!(["missing.jsonl"]);
    fs::write(dir.join("bad.json"), cfg.to_string()).unwrap();
    let out = fleetlens(&["run", "--config", "bad.json"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = fleetlens(&["trips", "--timelines", "absent.json", "--out", "t.jsonl"], dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage trips"));

    let out = fleetlens(&["run"], dir);
    assert_eq!(out.status.code(), Some(2));

    let out = fleetlens(
        &["trips", "--timelines", "x", "--provider", "google", "--out", "y"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));

    let out = fleetlens(
        &["service-areas", "--timelines", "x", "--window", "36h", "--out", "y"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
}
