use std::path::Path;
use std::process::{Command, Output};

use cabwatch::service::scenario::{write_scenario, Scenario, ScenarioFiles};
use chrono::{DateTime, TimeDelta, Utc};

fn cabwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cabwatch"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn at(h: i64, m: i64) -> DateTime<Utc> {
    // 2017-05-17T00:00:00Z
    DateTime::from_timestamp(1_494_979_200 + h * 3600 + m * 60, 0).unwrap()
}

fn small_scenario(root: &Path) -> ScenarioFiles {
    let s = Scenario::new(at(6, 0), at(6, 20), TimeDelta::seconds(20))
        .identity("op01", "TK Tiwari", true)
        .identity("visitor", "Visitor", false)
        .present("op01", at(6, 0), at(6, 20))
        .present("visitor", at(6, 10), at(6, 12));
    write_scenario(&s, root).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let files = small_scenario(dir.path());
    let out = cabwatch(&["run", "--config", path(&files.config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("frames 61 (failed 0)"), "{text}");
    assert!(text.contains("trespass 1"), "{text}");
    assert!(text.contains("local only 1"), "{text}");

    let log = files.root.join("out/observations.jsonl");
    let report = cabwatch(&[
        "report",
        "--log",
        path(&log),
        "--date",
        "2017-05-17",
        "--format",
        "csv",
        "--config",
        path(&files.config),
    ]);
    assert!(report.status.success(), "{}", stderr(&report));
    let csv = stdout(&report);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "HOUR,SNAPSHOT,OPERATOR,HOURS_IN_SHIFT");
    assert_eq!(lines.len(), 2, "{csv}");
    // 06:00-06:20 falls in the 08:00 row's window; its nearest sighting is the last
    let last_frame = at(6, 20).timestamp();
    assert_eq!(lines[1], format!("2017-05-17T08:00:00Z,{last_frame}_0.png,TK Tiwari,0"));

    let alerts = std::fs::read_to_string(files.root.join("out/alerts.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(alerts.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "trespass");
}

#[test]
fn text_report_lists_every_slot() {
    let dir = tempfile::tempdir().unwrap();
    let files = small_scenario(dir.path());
    assert!(cabwatch(&["run", "--config", path(&files.config)]).status.success());
    let log = files.root.join("out/observations.jsonl");
    let out = cabwatch(&["report", "--log", path(&log), "--date", "2017-05-17", "--cadence", "6"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("op01"), "{text}");
    for hour in ["00:00", "06:00", "12:00", "18:00"] {
        assert!(text.contains(hour), "{hour} missing from {text}");
    }
}

#[test]
fn enroll_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let files = small_scenario(dir.path());
    let gallery = dir.path().join("new_gallery.json");
    let image = files.root.join("enroll/op01.png");
    let enroll = |extra: &[&str]| {
        let mut args = vec![
            "enroll",
            "--gallery",
            path(&gallery),
            "--id",
            "op09",
            "--name",
            "New Hire",
        ];
        args.extend(["--image", path(&image)]);
        args.extend(extra);
        cabwatch(&args)
    };
    let out = enroll(&[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("1 records"));

    let again = enroll(&[]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("op09"), "{}", stderr(&again));
    assert!(enroll(&["--replace"]).status.success());

    let list = cabwatch(&["gallery", "list", "--gallery", path(&gallery)]);
    assert!(list.status.success());
    let text = stdout(&list);
    assert!(text.contains("1 operators"), "{text}");
    assert!(text.contains("op09\tNew Hire"), "{text}");
}

#[test]
fn startup_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = cabwatch(&["run", "--config", path(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.toml"));

    let files = small_scenario(dir.path());
    let gone = dir.path().join("no_frames");
    let out = cabwatch(&["run", "--config", path(&files.config), "--source-dir", path(&gone)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "gallery_path = \"g.json\"\nmatch_threshold = -1\n").unwrap();
    let out = cabwatch(&["run", "--config", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));

    let out = cabwatch(&["replay-alerts", "--config", path(&files.config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("webhook_url"));
}

#[test]
fn rejected_alerts_fail_the_run() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/hook", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        use std::io::{Read, Write};
        for stream in listener.incoming() {
            let Ok(mut s) = stream else { return };
            let mut buf = [0u8; 8192];
            let _ = s.read(&mut buf);
            let _ = s.write_all(b"HTTP/1.1 403 Forbidden\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        }
    });

    let dir = tempfile::tempdir().unwrap();
    let files = small_scenario(dir.path());
    let cfg = std::fs::read_to_string(&files.config).unwrap();
    std::fs::write(&files.config, format!("webhook_url = \"{url}\"\n{cfg}")).unwrap();
    let out = cabwatch(&["run", "--config", path(&files.config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("rejected 1"), "{}", stdout(&out));
    assert!(stderr(&out).contains("rejected"), "{}", stderr(&out));
    let spooled = std::fs::read_to_string(files.root.join("out/dead_letter.jsonl")).unwrap();
    assert_eq!(spooled.lines().count(), 1);
}
