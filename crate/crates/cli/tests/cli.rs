use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use citsci_cli::simulate::synthetic_dataset;
use citsci_core::{analytics, fixture, onboarding::AnnotatorSession, CampaignConfig, Channel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn citsci(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citsci"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .env_remove("CITSCI_ORGANIZER_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn dataset_file(tmp: &TempDir, n: usize) -> PathBuf {
    let d = synthetic_dataset(n, &mut ChaCha8Rng::seed_from_u64(1));
    let path = tmp.path().join("dataset.in.json");
    std::fs::write(&path, d.to_json_pretty()).unwrap();
    path
}

fn config_file(tmp: &TempDir, edit: impl FnOnce(&mut CampaignConfig)) -> PathBuf {
    let mut cfg = CampaignConfig {
        campaign_id: "pilot".into(),
        ..fixture::campaign_config()
    };
    edit(&mut cfg);
    let path = tmp.path().join("campaign.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn ingested(n: usize) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let ds = dataset_file(&tmp, n);
    let out = stdout(&citsci(&data, &["ingest", ds.to_str().unwrap()]));
    assert!(out.contains(&format!("{n} instances")), "{out}");
    (tmp, data)
}

#[test]
fn coverage_on_empty_store_is_zeros() {
    let (_tmp, data) = ingested(30);
    let out = stdout(&citsci(&data, &["report", "coverage"]));
    assert_eq!(
        out,
        "name,annotated,total,percent_annotated\nclaims,0,3,0.0000\nclusters,0,15,0.0000\ntotal,0,30,0.0000\n"
    );
    let users = stdout(&citsci(&data, &["report", "users"]));
    assert_eq!(users.lines().count(), 1, "header only: {users}");
}

#[test]
fn campaign_lifecycle_and_link() {
    let (tmp, data) = ingested(20);
    let cfg = config_file(&tmp, |_| {});
    let out = stdout(&citsci(&data, &["campaign", "create", cfg.to_str().unwrap()]));
    assert_eq!(out, "created campaign pilot\n");
    let out = stdout(&citsci(&data, &["campaign", "publish", "pilot"]));
    assert!(
        out.starts_with("published pilot (disclosure version 1, sha256 "),
        "{out}"
    );
    let url = stdout(&citsci(
        &data,
        &[
            "campaign",
            "link",
            "pilot",
            "--channel",
            "lists",
            "--base-url",
            "https://example.org/",
        ],
    ));
    let token = url.trim().strip_prefix("https://example.org/join/").expect("join url");
    assert!(
        token.len() >= 32 && token.bytes().all(|b| b.is_ascii_hexdigit()),
        "{token}"
    );

    let export: Value = serde_json::from_str(&stdout(&citsci(&data, &["export"]))).unwrap();
    assert_eq!(export["manifest"]["campaign_id"], "pilot");
    assert_eq!(export["manifest"]["record_count"], 0);
    assert_eq!(export["manifest"]["anonymized"], false);
}

#[test]
fn missing_disclosure_is_reported_then_refused() {
    let (tmp, data) = ingested(10);
    let cfg = config_file(&tmp, |c| c.purpose_statement.clear());
    let out = stdout(&citsci(&data, &["campaign", "create", cfg.to_str().unwrap()]));
    assert!(
        out.contains("note: purpose_statement required before publishing"),
        "{out}"
    );
    let o = citsci(&data, &["campaign", "publish", "pilot"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("purpose_statement"));
}

#[test]
fn exit_codes_per_failure_class() {
    let (tmp, data) = ingested(10);
    // usage errors come from the argument parser
    assert_eq!(code(&citsci(&data, &["report", "nonsense"])), 2);
    assert_eq!(code(&citsci(&data, &["report", "timeline", "--bucket", "0d"])), 2);
    // not found
    assert_eq!(code(&citsci(&data, &["campaign", "publish", "nope"])), 4);
    assert_eq!(code(&citsci(&data, &["delete-session", "nobody"])), 4);
    assert_eq!(code(&citsci(&data, &["export"])), 4);
    let empty = tmp.path().join("empty");
    assert_eq!(code(&citsci(&empty, &["report", "coverage"])), 4);
    // malformed input
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"claims\": 3}").unwrap();
    assert_eq!(code(&citsci(&data, &["campaign", "create", bad.to_str().unwrap()])), 3);
    assert_eq!(
        code(&citsci(&tmp.path().join("other"), &["ingest", bad.to_str().unwrap()])),
        3
    );
    assert_eq!(code(&citsci(&data, &["simulate", "--accuracy", "1.5"])), 3);
    assert_eq!(code(&citsci(&data, &["serve"])), 3);
    // conflicts
    let cfg = config_file(&tmp, |_| {});
    stdout(&citsci(&data, &["campaign", "create", cfg.to_str().unwrap()]));
    assert_eq!(code(&citsci(&data, &["campaign", "create", cfg.to_str().unwrap()])), 5);
    let other = dataset_file(&tmp, 12);
    assert_eq!(code(&citsci(&data, &["ingest", other.to_str().unwrap()])), 5);
    // io
    let missing = tmp.path().join("missing.json");
    assert_eq!(
        code(&citsci(&data, &["campaign", "create", missing.to_str().unwrap()])),
        6
    );
}

#[test]
fn reports_equal_analytics_on_the_same_inputs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    stdout(&citsci(&data, &["fixture"]));
    let f = fixture::published_shape();
    let sessions: Vec<AnnotatorSession> = f.sessions.clone();

    let cov = analytics::coverage(&f.dataset, &f.records).unwrap();
    let v: Value = serde_json::from_str(&stdout(&citsci(&data, &["report", "coverage", "--format", "json"]))).unwrap();
    for (row, (name, expect)) in v["rows"].as_array().unwrap().iter().zip(cov.rows()) {
        assert_eq!(row["name"], name);
        assert_eq!(row["annotated"], expect.annotated);
        assert_eq!(row["total"], expect.total);
    }

    let acc = analytics::accuracy(&f.records, &f.dataset, 10).unwrap();
    let v: Value = serde_json::from_str(&stdout(&citsci(
        &data,
        &["report", "accuracy", "--format", "json", "--min-scored", "10"],
    )))
    .unwrap();
    let rows = v["channels"].as_array().unwrap();
    assert_eq!(rows.len(), acc.channels.len());
    for row in rows {
        let c = &acc.channels[&Channel::new(row["channel"].as_str().unwrap())];
        assert_eq!(row["n_scored"], c.n_scored);
        assert_eq!(row["fine_correct"], c.fine_correct);
        assert_eq!(row["coarse_correct"], c.coarse_correct);
        assert_eq!(row["excluded"], c.n_scored < 10);
    }

    let users = analytics::per_user_counts(&f.records, &sessions);
    let csv = stdout(&citsci(&data, &["report", "users"]));
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let expect = &users.channels[&Channel::new(cols[0])];
        assert_eq!(cols[1].parse::<u64>().unwrap(), expect.participant_count, "{line}");
        assert_eq!(cols[3].parse::<u64>().unwrap(), expect.total_records, "{line}");
        let counts: Vec<u64> = cols[4].split(';').map(|c| c.parse().unwrap()).collect();
        assert_eq!(counts, expect.per_session_counts, "{line}");
    }

    // The same numbers come out of an exported bundle.
    let export = tmp.path().join("export.json");
    stdout(&citsci(
        &data,
        &["export", "--anonymize", "--out", export.to_str().unwrap()],
    ));
    let from_export = stdout(&citsci(
        &data,
        &["report", "labels", "--from-export", export.to_str().unwrap()],
    ));
    assert_eq!(from_export, stdout(&citsci(&data, &["report", "labels"])));
}

#[test]
fn delete_session_erases_it_from_exports() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    stdout(&citsci(&data, &["fixture"]));
    let before = stdout(&citsci(&data, &["export", "--format", "csv"]));
    let victim = "fx-twitter-01";
    let n = before.lines().filter(|l| l.contains(&format!(",{victim},"))).count();
    assert!(n > 0);
    let out = stdout(&citsci(&data, &["delete-session", victim]));
    assert!(out.contains(&format!("{n} record(s)")), "{out}");
    let after = stdout(&citsci(&data, &["export", "--format", "csv"]));
    assert!(!after.contains(victim));
    assert_eq!(before.lines().count() - n, after.lines().count());
    assert_eq!(code(&citsci(&data, &["delete-session", victim])), 4);
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_holds_the_lock_and_stops_on_sigterm() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    stdout(&citsci(&data, &["fixture"]));
    let mut child = Command::new(env!("CARGO_BIN_EXE_citsci"))
        .arg("--data-dir")
        .arg(&data)
        .args(["serve", "--bind", "127.0.0.1:0", "--sweep-every", "1"])
        .env("CITSCI_ORGANIZER_KEY", "k")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .expect("address line")
        .to_owned();

    let health = http_get(&addr, "/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");

    let o = citsci(&data, &["report", "coverage"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("use the HTTP API"));

    let kill = Command::new("kill")
        .arg("-TERM")
        .arg(child.id().to_string())
        .status()
        .unwrap();
    assert!(kill.success());
    assert!(child.wait().unwrap().success());
    assert!(stdout(&citsci(&data, &["report", "coverage"])).contains("total,906,11805,7.6747"));
}

#[test]
fn simulate_writes_export_to_stdout_and_summary_to_stderr() {
    let tmp = TempDir::new().unwrap();
    let o = citsci(
        &tmp.path().join("unused"),
        &[
            "simulate",
            "--annotators",
            "12",
            "--instances",
            "40",
            "--seed",
            "3",
            "--format",
            "csv",
        ],
    );
    let out = stdout(&o);
    assert!(
        out.starts_with("record_id,campaign_id,instance_id,session_pseudonym,channel,label,created_at\r\n"),
        "{out}"
    );
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("simulated 12 annotators: "));
    assert!(
        !tmp.path().join("unused").exists(),
        "simulation keeps everything in memory"
    );
}

#[test]
fn simulated_channel_answers_survive_forwarded_links() {
    let args = citsci_cli::simulate::SimulateArgs {
        annotators: 60,
        instances: 80,
        seed: 5,
        ..Default::default()
    };
    let outcome = citsci_cli::simulate::run(&args).unwrap();
    let mut exported: std::collections::BTreeMap<String, u64> = Default::default();
    for s in &outcome.export.sessions {
        *exported.entry(s.channel.as_str().to_owned()).or_default() += 1;
    }
    assert_eq!(exported, outcome.answers);
    assert_eq!(outcome.answers.values().sum::<u64>(), 60);
    assert_eq!(outcome.export.records.len() as u64, outcome.submissions);
}

#[test]
fn per_user_counts_are_heavy_tailed() {
    let args = citsci_cli::simulate::SimulateArgs {
        annotators: 200,
        instances: 1000,
        abandon_rate: 0.0,
        seed: 9,
        ..Default::default()
    };
    let outcome = citsci_cli::simulate::run(&args).unwrap();
    let mut per: std::collections::HashMap<&str, u64> = Default::default();
    for r in &outcome.export.records {
        *per.entry(r.session_pseudonym.as_str()).or_default() += 1;
    }
    let mut counts: Vec<u64> = per.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = counts.iter().sum();
    let top_tenth: u64 = counts[..counts.len() / 10].iter().sum();
    let median = counts[counts.len() / 2];
    assert!(top_tenth * 10 > total * 3, "top decile holds {top_tenth} of {total}");
    assert!(counts[0] > 5 * median, "max {} vs median {median}", counts[0]);
}
