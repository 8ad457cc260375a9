//! A synthetic campaign with the shape of the published study: 907 claims,
//! 5092 clusters and 11805 instances, 101 sessions over six channels and
//! 1481 records touching 388 claims, 739 clusters and 906 instances, with
//! the published per-channel label counts.
//!
//! Used by tests, demos and the UI's development server.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::analytics::DISTRIBUTION_ORDER;
use crate::annotation_store::{AnnotationRecord, AnnotationStore};
use crate::corpus::{Claim, Dataset, GoldLabel, Instance, PerspectiveCluster, StanceLabel};
use crate::ids::{CampaignId, ClaimId, ClusterId, InstanceId, LeaseId, PerspectiveId, SessionId};
use crate::onboarding::{
    AnnotatorSession, CallEvent, Campaign, CampaignConfig, CampaignStatus, Channel, ConsentRecord, DisclosureVersion,
    Onboarding,
};
use crate::storage::Snapshot;
use crate::workload::{Lease, LeaseState, Workload};

pub const N_CLAIMS: usize = 907;
pub const N_CLUSTERS: usize = 5092;
pub const N_INSTANCES: usize = 11805;
pub const N_PERSPECTIVES: usize = 8370;
pub const TOUCHED_CLAIMS: usize = 388;
pub const TOUCHED_CLUSTERS: usize = 739;
pub const TOUCHED_INSTANCES: usize = 906;
pub const N_RECORDS: usize = 1481;

pub const CAMPAIGN_ID: &str = "perspectives-2022";

/// Per-channel label counts in [`DISTRIBUTION_ORDER`] (`+ ++ - -- I S`).
pub const LABEL_COUNTS: [(&str, [u64; 6]); 6] = [
    ("courses", [18, 108, 24, 104, 28, 25]),
    ("facebook", [2, 0, 0, 0, 0, 3]),
    ("linkedin", [1, 5, 1, 7, 3, 4]),
    ("lists", [98, 264, 48, 222, 92, 106]),
    ("twitter", [14, 42, 12, 39, 13, 11]),
    ("undisclosed", [18, 53, 15, 52, 27, 22]),
];

pub const PARTICIPANTS: [(&str, usize); 6] = [
    ("courses", 14),
    ("facebook", 3),
    ("linkedin", 4),
    ("lists", 55),
    ("twitter", 8),
    ("undisclosed", 17),
];

pub struct PublishedFixture {
    pub dataset: Dataset,
    pub campaign: Campaign,
    pub sessions: Vec<AnnotatorSession>,
    pub consents: Vec<ConsentRecord>,
    pub records: Vec<AnnotationRecord>,
}

/// True for exactly `k` of the indices `0..n`, evenly spread.
fn spread(i: usize, k: usize, n: usize) -> bool {
    (i + 1) * k / n > i * k / n
}

fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
}

/// Splits `total` over `n` sessions: `head` verbatim, the rest of the sum
/// spread over the tail with weights `1/sqrt(i+1)` and at least one each.
fn allocate(total: u64, n: usize, head: &[u64]) -> Vec<u64> {
    let mut out = head.to_vec();
    let tail_n = n - head.len();
    let tail_total = total - head.iter().sum::<u64>();
    assert!(tail_total >= tail_n as u64);
    let spare = tail_total - tail_n as u64;
    let weights: Vec<f64> = (0..tail_n).map(|i| 1.0 / ((i + 1) as f64).sqrt()).collect();
    let wsum: f64 = weights.iter().sum();
    let mut shares: Vec<u64> = weights
        .iter()
        .map(|w| (spare as f64 * w / wsum).floor() as u64)
        .collect();
    let mut left = spare - shares.iter().sum::<u64>();
    let mut i = 0;
    while left > 0 {
        shares[i % tail_n] += 1;
        left -= 1;
        i += 1;
    }
    out.extend(shares.into_iter().map(|s| s + 1));
    out
}

fn per_session_counts(channel: &str) -> Vec<u64> {
    match channel {
        "courses" => vec![81, 79, 30, 22, 18, 15, 13, 11, 10, 9, 7, 6, 4, 2],
        "facebook" => vec![3, 1, 1],
        "linkedin" => vec![12, 5, 3, 1],
        "lists" => allocate(830, 55, &[80, 76, 72, 68, 64, 61]),
        "twitter" => vec![62, 25, 15, 11, 8, 5, 3, 2],
        "undisclosed" => allocate(187, 17, &[64]),
        _ => unreachable!(),
    }
}

fn call_events() -> Vec<CallEvent> {
    [
        ("lists", utc(2022, 1, 17, 9)),
        ("twitter", utc(2022, 1, 18, 15)),
        ("linkedin", utc(2022, 1, 19, 10)),
        ("facebook", utc(2022, 1, 20, 18)),
        ("lists", utc(2022, 2, 7, 9)),
        ("courses", utc(2022, 2, 21, 8)),
    ]
    .into_iter()
    .map(|(c, at)| CallEvent { channel: c.into(), at })
    .collect()
}

pub fn campaign_config() -> CampaignConfig {
    CampaignConfig {
        title: "Stance of perspectives towards claims".into(),
        guidelines_text: "Read the claim and the perspective, then choose how the perspective relates to the claim. \
                          Use skip if you are unsure."
            .into(),
        purpose_statement:
            "Study whether volunteers recruited through different channels produce reliable stance labels.".into(),
        personal_data_collected: vec!["Recruitment channel (self-reported)".into()],
        nonpersonal_data_collected: vec!["Label".into(), "Time of annotation".into()],
        questionnaire_questions: vec!["Where did you hear from this study?".into()],
        data_use_statement: "Labels are compared with existing gold labels and analysed per recruitment channel."
            .into(),
        publication_plan: "Labels are published with pseudonymous session identifiers; no personal data is released."
            .into(),
        rights_contact: "study-data@example.org".into(),
        license_notice: "Annotations are released under CC BY 4.0.".into(),
        redundancy_target: 3,
        call_events: call_events(),
        ..CampaignConfig::draft(CAMPAIGN_ID)
    }
}

pub fn dataset() -> Dataset {
    let gold_cycle = [
        StanceLabel::Supports,
        StanceLabel::Opposes,
        StanceLabel::MildlySupports,
        StanceLabel::Supports,
        StanceLabel::MildlyOpposes,
        StanceLabel::Opposes,
        StanceLabel::NotAValidPerspective,
    ];
    let claims: Vec<Claim> = (0..N_CLAIMS)
        .map(|c| Claim {
            id: ClaimId::new(format!("c{c:04}")),
            text: format!("Claim number {c}."),
        })
        .collect();
    // 350 claims with five clusters, 557 with six.
    let clusters_of = |c: usize| if c < 350 { 5 } else { 6 };
    let mut clusters = Vec::with_capacity(N_CLUSTERS);
    let mut instances = Vec::with_capacity(N_INSTANCES);
    for (c, claim) in claims.iter().enumerate() {
        for _ in 0..clusters_of(c) {
            let k = clusters.len();
            // 3471 clusters with two instances, 1621 with three.
            let n_inst = if k < 3471 { 2 } else { 3 };
            let mut members = Vec::with_capacity(n_inst);
            for _ in 0..n_inst {
                let i = instances.len();
                let p = PerspectiveId::new(format!("p{:04}", i % N_PERSPECTIVES));
                members.push(p.clone());
                instances.push(Instance {
                    id: InstanceId::new(format!("i{i:05}")),
                    claim_id: claim.id.clone(),
                    perspective_id: p,
                    perspective_text: format!("Perspective {i} on claim {c}."),
                    cluster_id: ClusterId::new(format!("k{k:04}")),
                    gold_fine: GoldLabel::new(gold_cycle[(i * 3 + c) % gold_cycle.len()]).unwrap(),
                });
            }
            clusters.push(PerspectiveCluster {
                id: ClusterId::new(format!("k{k:04}")),
                claim_id: claim.id.clone(),
                perspective_ids: members,
            });
        }
    }
    Dataset::from_parts(claims, clusters, instances).expect("fixture dataset is consistent")
}

/// The 906 touched instances, in dataset order.
fn touched_instances(d: &Dataset) -> Vec<InstanceId> {
    let mut by_claim: BTreeMap<&ClaimId, Vec<&PerspectiveCluster>> = BTreeMap::new();
    for k in d.clusters() {
        by_claim.entry(&k.claim_id).or_default().push(k);
    }
    let mut by_cluster: BTreeMap<&ClusterId, Vec<&Instance>> = BTreeMap::new();
    for i in d.instances() {
        by_cluster.entry(&i.cluster_id).or_default().push(i);
    }
    let touched_claims: Vec<&ClaimId> = d
        .claims()
        .iter()
        .enumerate()
        .filter(|(i, _)| spread(*i, TOUCHED_CLAIMS, N_CLAIMS))
        .map(|(_, c)| &c.id)
        .collect();
    // 351 claims contribute two clusters, the remaining 37 one.
    let mut touched_clusters = Vec::new();
    for (n, claim) in touched_claims.iter().enumerate() {
        let take = if n < TOUCHED_CLUSTERS - TOUCHED_CLAIMS { 2 } else { 1 };
        touched_clusters.extend(by_claim[claim].iter().take(take).map(|k| &k.id));
    }
    // 167 clusters contribute two instances, the remaining 572 one.
    let mut out = Vec::new();
    for (n, k) in touched_clusters.iter().enumerate() {
        let take = if n < TOUCHED_INSTANCES - TOUCHED_CLUSTERS { 2 } else { 1 };
        out.extend(by_cluster[k].iter().take(take).map(|i| i.id.clone()));
    }
    out
}

pub fn published_shape() -> PublishedFixture {
    let dataset = dataset();
    let config = campaign_config();
    let published_at = utc(2022, 1, 10, 8);
    let disclosure = DisclosureVersion {
        version: 1,
        hash: config.disclosure_hash(),
        frozen_at: published_at,
    };
    let campaign = Campaign {
        config,
        status: CampaignStatus::Published,
        created_at: published_at,
        disclosure_versions: vec![disclosure.clone()],
    };
    let campaign_id = CampaignId::new(CAMPAIGN_ID);
    let touched = touched_instances(&dataset);
    assert_eq!(touched.len(), TOUCHED_INSTANCES);

    let arrival_base = |channel: &str, n: usize| -> DateTime<Utc> {
        match channel {
            "lists" if n >= 40 => utc(2022, 2, 7, 10),
            "lists" => utc(2022, 1, 17, 10),
            "twitter" if n >= 6 => utc(2022, 3, 2, 12),
            "twitter" => utc(2022, 1, 18, 16),
            "linkedin" => utc(2022, 1, 19, 11),
            "facebook" => utc(2022, 1, 20, 19),
            "courses" => utc(2022, 2, 21, 9),
            _ => utc(2022, 1, 24, 9),
        }
    };

    let mut rng = ChaCha20Rng::seed_from_u64(2022);
    let mut cursor = 0usize;
    let mut sessions = Vec::new();
    let mut consents = Vec::new();
    let mut records = Vec::new();
    for ((channel, counts), (_, n_sessions)) in LABEL_COUNTS.iter().zip(PARTICIPANTS) {
        let mut labels: Vec<StanceLabel> = DISTRIBUTION_ORDER
            .iter()
            .zip(counts)
            .flat_map(|(l, &n)| std::iter::repeat_n(*l, n as usize))
            .collect();
        labels.shuffle(&mut rng);
        let per_session = per_session_counts(channel);
        assert_eq!(per_session.len(), n_sessions);
        assert_eq!(per_session.iter().sum::<u64>(), labels.len() as u64);
        let mut next_label = labels.into_iter();
        for (n, &count) in per_session.iter().enumerate() {
            let session_id = SessionId::new(format!("fx-{channel}-{n:02}"));
            let created_at = arrival_base(channel, n) + Duration::minutes(37 * n as i64);
            sessions.push(AnnotatorSession {
                session_id: session_id.clone(),
                campaign_id: campaign_id.clone(),
                channel: Channel::from(*channel),
                created_at,
                secret_token: format!("fixture-secret-{channel}-{n:02}"),
            });
            consents.push(ConsentRecord {
                session_id: session_id.clone(),
                consent_given_at: created_at,
                disclosed_config_hash: disclosure.hash.clone(),
            });
            for j in 0..count {
                records.push(AnnotationRecord {
                    record_id: crate::ids::RecordId::new(String::new()),
                    campaign_id: campaign_id.clone(),
                    instance_id: touched[cursor % TOUCHED_INSTANCES].clone(),
                    session_id: session_id.clone(),
                    channel: Channel::from(*channel),
                    label: next_label.next().expect("label counts match session counts"),
                    created_at: created_at + Duration::seconds(45 * (j as i64 + 1)),
                });
                cursor += 1;
            }
        }
    }
    records.sort_by_key(|r| r.created_at);
    for (i, r) in records.iter_mut().enumerate() {
        r.record_id = crate::ids::RecordId::new(format!("rec-{:08}", i + 1));
    }
    PublishedFixture {
        dataset,
        campaign,
        sessions,
        consents,
        records,
    }
}

impl PublishedFixture {
    /// Platform state with this campaign loaded, as it would be after the
    /// records had been submitted through the normal flow.
    pub fn snapshot(&self) -> Snapshot {
        let mut onboarding = Onboarding::new();
        onboarding.insert_campaign(self.campaign.clone());
        for (s, c) in self.sessions.iter().zip(&self.consents) {
            onboarding.insert_session(s.clone(), c.clone());
        }
        let config = &self.campaign.config;
        let mut workload = Workload::new(
            self.dataset.instances().iter().map(|i| i.id.clone()),
            config.redundancy_target,
            config.lease_duration(),
        );
        let mut store = AnnotationStore::new();
        for (n, r) in self.records.iter().enumerate() {
            let lease = Lease {
                lease_id: LeaseId::new(format!("lease-{:08}", n + 1)),
                instance_id: r.instance_id.clone(),
                session_id: r.session_id.clone(),
                issued_at: r.created_at - Duration::seconds(30),
                expires_at: r.created_at - Duration::seconds(30) + config.lease_duration(),
                state: LeaseState::Active,
            };
            let id = lease.lease_id.clone();
            workload.apply_issue(lease);
            workload.apply_fulfill(&id, r.label);
            store
                .append(r.clone())
                .expect("fixture records are unique per session and instance");
        }
        Snapshot {
            dataset_digest: self.dataset.digest(),
            onboarding,
            workloads: [(self.campaign.id().clone(), workload)].into_iter().collect(),
            store,
        }
    }
}
