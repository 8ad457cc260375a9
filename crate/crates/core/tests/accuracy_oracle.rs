//! Accuracy against a per-record brute-force oracle on random record sets.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::DateTime;
use citsci_core::analytics::{self, Tagset};
use citsci_core::annotation_store::ExportBundle;
use citsci_core::corpus::{self, Claim, Dataset, GoldLabel, Instance, PerspectiveCluster};
use citsci_core::ids::*;
use citsci_core::{AnnotationRecord, Channel};
use proptest::prelude::*;

const LABELS: [&str; 6] = [
    "supports",
    "mildly-supports",
    "mildly-opposes",
    "opposes",
    "not-a-valid-perspective",
    "skip",
];
const GOLD: [&str; 5] = [
    "supports",
    "mildly-supports",
    "mildly-opposes",
    "opposes",
    "not-a-valid-perspective",
];
const CHANNELS: [&str; 3] = ["lists", "twitter", "courses"];

fn coarse_of(label: &str) -> &'static str {
    match label {
        "supports" | "mildly-supports" => "support",
        "opposes" | "mildly-opposes" => "oppose",
        "not-a-valid-perspective" => "invalid",
        other => panic!("no coarse label for {other}"),
    }
}

fn dataset(gold: &[usize]) -> Dataset {
    let claims = vec![Claim {
        id: ClaimId::new("c"),
        text: "claim".into(),
    }];
    let clusters = vec![PerspectiveCluster {
        id: ClusterId::new("k"),
        claim_id: ClaimId::new("c"),
        perspective_ids: (0..gold.len()).map(|i| PerspectiveId::new(format!("p{i}"))).collect(),
    }];
    let instances = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| Instance {
            id: InstanceId::new(format!("i{i}")),
            claim_id: ClaimId::new("c"),
            perspective_id: PerspectiveId::new(format!("p{i}")),
            perspective_text: format!("perspective {i}"),
            cluster_id: ClusterId::new("k"),
            gold_fine: GoldLabel::new(GOLD[g].parse().unwrap()).unwrap(),
        })
        .collect();
    Dataset::from_parts(claims, clusters, instances).unwrap()
}

/// (channel, instance, label) triples become records.
fn records(raw: &[(usize, usize, usize)]) -> Vec<AnnotationRecord> {
    raw.iter()
        .enumerate()
        .map(|(n, &(c, i, l))| AnnotationRecord {
            record_id: RecordId::new(format!("r{n}")),
            campaign_id: CampaignId::new("x"),
            instance_id: InstanceId::new(format!("i{i}")),
            session_id: SessionId::new(format!("s{n}")),
            channel: Channel::from(CHANNELS[c]),
            label: LABELS[l].parse().unwrap(),
            created_at: DateTime::from_timestamp(1_640_000_000 + n as i64, 0).unwrap(),
        })
        .collect()
}

#[derive(Default, Debug, PartialEq)]
struct OracleRow {
    scored: u64,
    fine: u64,
    coarse: u64,
}

fn oracle(gold: &[usize], raw: &[(usize, usize, usize)]) -> BTreeMap<&'static str, OracleRow> {
    let mut out: BTreeMap<&'static str, OracleRow> = BTreeMap::new();
    for &(c, i, l) in raw {
        let row = out.entry(CHANNELS[c]).or_default();
        if LABELS[l] == "skip" {
            continue;
        }
        row.scored += 1;
        if LABELS[l] == GOLD[gold[i]] {
            row.fine += 1;
        }
        if coarse_of(LABELS[l]) == coarse_of(GOLD[gold[i]]) {
            row.coarse += 1;
        }
    }
    out
}

fn case() -> impl Strategy<Value = (Vec<usize>, Vec<(usize, usize, usize)>)> {
    prop::collection::vec(0..GOLD.len(), 1..12).prop_flat_map(|gold| {
        let n = gold.len();
        let recs = prop::collection::vec((0..CHANNELS.len(), 0..n, 0..LABELS.len()), 0..=50);
        (Just(gold), recs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn accuracy_equals_oracle((gold, raw) in case()) {
        let d = dataset(&gold);
        let recs = records(&raw);
        let report = analytics::accuracy(&recs, &d, 0).unwrap();
        let expected = oracle(&gold, &raw);
        prop_assert_eq!(report.channels.len(), expected.len());
        for (ch, want) in &expected {
            let got = &report.channels[&Channel::from(*ch)];
            prop_assert_eq!((got.n_scored, got.fine_correct, got.coarse_correct), (want.scored, want.fine, want.coarse));
            let (fine, coarse) = if want.scored == 0 {
                (None, None)
            } else {
                (Some(want.fine as f64 / want.scored as f64), Some(want.coarse as f64 / want.scored as f64))
            };
            prop_assert_eq!(got.accuracy(Tagset::Fine), fine);
            prop_assert_eq!(got.accuracy(Tagset::Coarse), coarse);
            prop_assert!(got.fine_correct <= got.coarse_correct);
        }
    }
}

#[test]
fn min_scored_marks_small_channels() {
    let d = dataset(&[0, 3]);
    let recs = records(&[(0, 0, 0), (0, 1, 3), (0, 1, 0), (1, 0, 5), (1, 0, 0)]);
    let report = analytics::accuracy(&recs, &d, 2).unwrap();
    assert!(!report.channels[&"lists".into()].excluded);
    let twitter = &report.channels[&"twitter".into()];
    assert!(twitter.excluded);
    assert_eq!((twitter.records, twitter.n_scored), (2, 1));
}

#[test]
fn skip_only_channel_has_no_accuracy() {
    let d = dataset(&[0]);
    let recs = records(&[(2, 0, 5), (2, 0, 5)]);
    let row = &analytics::accuracy(&recs, &d, 0).unwrap().channels[&"courses".into()];
    assert_eq!(row.n_scored, 0);
    assert_eq!(row.fine_accuracy(), None);
    assert_eq!(row.fine().render(6), None);
}

/// Published per-channel accuracies, compared only when the released
/// annotations are available: a directory holding `dataset.json` and an
/// `export.json` bundle, named by `CITSCI_RELEASED_DATA`.
#[test]
fn released_data_reproduces_published_accuracy() {
    let Some(dir) = std::env::var_os("CITSCI_RELEASED_DATA").map(PathBuf::from) else {
        eprintln!("SKIP released-data comparison: CITSCI_RELEASED_DATA not set");
        return;
    };
    let d = corpus::load_dataset(dir.join("dataset.json")).unwrap();
    let bundle = ExportBundle::from_json(&std::fs::read_to_string(dir.join("export.json")).unwrap()).unwrap();
    let report = analytics::accuracy(&bundle.records, &d, 0).unwrap();
    let published = [
        ("courses", "0.919492", "0.822034"),
        ("linkedin", "0.692308", "0.615385"),
        ("lists", "0.898876", "0.816479"),
        ("undisclosed", "0.841667", "0.75"),
        ("twitter", "0.849462", "0.731183"),
    ];
    for (ch, coarse, fine) in published {
        let row = &report.channels[&Channel::from(ch)];
        for (got, want) in [(row.coarse(), coarse), (row.fine(), fine)] {
            let want = format!("{:.4}", want.parse::<f64>().unwrap());
            assert_eq!(got.render(4).unwrap(), want, "{ch}");
        }
    }
}
