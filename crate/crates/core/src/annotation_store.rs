//! Append-only annotation records, queries, export and erasure.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StanceLabel;
use crate::ids::{CampaignId, InstanceId, RecordId, SessionId};
use crate::onboarding::{AnnotatorSession, Channel};

/// Header of the delimited export. Part of the file contract.
pub const CSV_HEADER: &str = "record_id,campaign_id,instance_id,session_pseudonym,channel,label,created_at";

/// One submitted label. Immutable once written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: RecordId,
    pub campaign_id: CampaignId,
    pub instance_id: InstanceId,
    pub session_id: SessionId,
    /// Copied from the session at write time.
    pub channel: Channel,
    pub label: StanceLabel,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("session `{session}` already annotated instance `{instance}`")]
    Duplicate { session: SessionId, instance: InstanceId },
    #[error("duplicate record id `{0}`")]
    DuplicateRecordId(RecordId),
}

/// Record selection. Unset fields match everything; the time range is
/// half-open, `[from, until)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordFilter {
    pub campaign_id: Option<CampaignId>,
    pub channel: Option<Channel>,
    pub label: Option<StanceLabel>,
    pub from: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl RecordFilter {
    pub fn campaign(id: impl Into<CampaignId>) -> Self {
        Self {
            campaign_id: Some(id.into()),
            ..Self::default()
        }
    }

    pub fn with_channel(mut self, channel: impl Into<Channel>) -> Self {
        self.channel = Some(channel.into());
        self
    }

    pub fn with_label(mut self, label: StanceLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn between(mut self, from: Option<DateTime<Utc>>, until: Option<DateTime<Utc>>) -> Self {
        self.from = from;
        self.until = until;
        self
    }

    pub fn matches(&self, r: &AnnotationRecord) -> bool {
        self.campaign_id.as_ref().is_none_or(|c| c == &r.campaign_id)
            && self.channel.as_ref().is_none_or(|c| c == &r.channel)
            && self.label.is_none_or(|l| l == r.label)
            && self.from.is_none_or(|t| r.created_at >= t)
            && self.until.is_none_or(|t| r.created_at < t)
    }
}

impl From<Channel> for RecordFilter {
    fn from(channel: Channel) -> Self {
        Self::default().with_channel(channel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub campaign_id: CampaignId,
    pub exported_at: DateTime<Utc>,
    pub record_count: usize,
    pub dataset_digest: String,
    pub anonymized: bool,
}

/// An exported record; `session_pseudonym` is the raw session id when the
/// export is not anonymized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedRecord {
    pub record_id: RecordId,
    pub campaign_id: CampaignId,
    pub instance_id: InstanceId,
    pub session_pseudonym: String,
    pub channel: Channel,
    pub label: StanceLabel,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedSession {
    pub session_pseudonym: String,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub manifest: ExportManifest,
    /// Every consented session of the campaign, including those without records.
    pub sessions: Vec<ExportedSession>,
    pub records: Vec<ExportedRecord>,
}

impl ExportBundle {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(',')).expect("in-memory csv write");
        for r in &self.records {
            let at = r.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true);
            w.write_record([
                r.record_id.as_str(),
                r.campaign_id.as_str(),
                r.instance_id.as_str(),
                &r.session_pseudonym,
                r.channel.as_str(),
                r.label.as_str(),
                &at,
            ])
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Reads the delimited export format back into records.
pub fn records_from_csv(text: &str) -> Result<Vec<ExportedRecord>, csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    rdr.deserialize().collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationStore {
    records: Vec<AnnotationRecord>,
    next_seq: u64,
    #[serde(skip)]
    keys: HashSet<(CampaignId, InstanceId, SessionId)>,
    #[serde(skip)]
    ids: HashSet<RecordId>,
    #[serde(skip)]
    per_session: HashMap<SessionId, usize>,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rebuild_indexes(&mut self) {
        self.keys = self.records.iter().map(key).collect();
        self.ids = self.records.iter().map(|r| r.record_id.clone()).collect();
        self.per_session.clear();
        for r in &self.records {
            *self.per_session.entry(r.session_id.clone()).or_default() += 1;
        }
    }

    pub fn count_of_session(&self, session: &SessionId) -> usize {
        self.per_session.get(session).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    /// The id the next [`append`](Self::append) should use.
    pub fn next_record_id(&self) -> RecordId {
        RecordId::new(format!("rec-{:08}", self.next_seq.max(1)))
    }

    pub fn check_append(&self, record: &AnnotationRecord) -> Result<(), StoreError> {
        if self.keys.contains(&key(record)) {
            return Err(StoreError::Duplicate {
                session: record.session_id.clone(),
                instance: record.instance_id.clone(),
            });
        }
        if self.ids.contains(&record.record_id) {
            return Err(StoreError::DuplicateRecordId(record.record_id.clone()));
        }
        Ok(())
    }

    pub fn append(&mut self, record: AnnotationRecord) -> Result<RecordId, StoreError> {
        self.check_append(&record)?;
        if let Some(seq) = record
            .record_id
            .as_str()
            .strip_prefix("rec-")
            .and_then(|s| s.parse::<u64>().ok())
        {
            self.next_seq = self.next_seq.max(seq + 1);
        }
        let id = record.record_id.clone();
        self.keys.insert(key(&record));
        self.ids.insert(id.clone());
        *self.per_session.entry(record.session_id.clone()).or_default() += 1;
        self.records.push(record);
        Ok(id)
    }

    /// Matching records in `created_at` order; ties keep append order.
    pub fn query(&self, filter: &RecordFilter) -> Vec<&AnnotationRecord> {
        let mut out: Vec<&AnnotationRecord> = self.records.iter().filter(|r| filter.matches(r)).collect();
        out.sort_by_key(|r| r.created_at);
        out
    }

    pub fn records_of_session(&self, session: &SessionId) -> impl Iterator<Item = &AnnotationRecord> + '_ {
        let session = session.clone();
        self.records.iter().filter(move |r| r.session_id == session)
    }

    /// Builds an export of one campaign. With `anonymize`, every session id
    /// is replaced by a pseudonym drawn fresh for this export.
    pub fn export<'a>(
        &self,
        campaign: &CampaignId,
        sessions: impl IntoIterator<Item = &'a AnnotatorSession>,
        anonymize: bool,
        exported_at: DateTime<Utc>,
        dataset_digest: &str,
        rng: &mut impl RngCore,
    ) -> ExportBundle {
        let records = self.query(&RecordFilter::campaign(campaign.clone()));
        let mut pseudonyms: HashMap<&SessionId, String> = HashMap::new();
        let mut name = |id: &'a SessionId, pseudonyms: &mut HashMap<&'a SessionId, String>| -> String {
            if !anonymize {
                return id.to_string();
            }
            pseudonyms
                .entry(id)
                .or_insert_with(|| {
                    let mut buf = [0u8; 12];
                    rng.fill_bytes(&mut buf);
                    format!("anon-{}", hex::encode(buf))
                })
                .clone()
        };

        // Sessions are named in creation order so that the pseudonym
        // sequence is reproducible under a seeded generator.
        let mut sessions: Vec<&AnnotatorSession> =
            sessions.into_iter().filter(|s| &s.campaign_id == campaign).collect();
        sessions.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        let exported_sessions: Vec<ExportedSession> = sessions
            .iter()
            .map(|s| ExportedSession {
                session_pseudonym: name(&s.session_id, &mut pseudonyms),
                channel: s.channel.clone(),
            })
            .collect();

        // Records whose session is not listed still get a consistent name.
        let mut extra: BTreeMap<&SessionId, String> = BTreeMap::new();
        let exported_records: Vec<ExportedRecord> = records
            .iter()
            .map(|r| {
                let pseudonym = match pseudonyms.get(&r.session_id) {
                    Some(p) => p.clone(),
                    None if !anonymize => r.session_id.to_string(),
                    None => extra
                        .entry(&r.session_id)
                        .or_insert_with(|| {
                            let mut buf = [0u8; 12];
                            rng.fill_bytes(&mut buf);
                            format!("anon-{}", hex::encode(buf))
                        })
                        .clone(),
                };
                ExportedRecord {
                    record_id: r.record_id.clone(),
                    campaign_id: r.campaign_id.clone(),
                    instance_id: r.instance_id.clone(),
                    session_pseudonym: pseudonym,
                    channel: r.channel.clone(),
                    label: r.label,
                    created_at: r.created_at,
                }
            })
            .collect();

        ExportBundle {
            manifest: ExportManifest {
                campaign_id: campaign.clone(),
                exported_at,
                record_count: exported_records.len(),
                dataset_digest: dataset_digest.to_owned(),
                anonymized: anonymize,
            },
            sessions: exported_sessions,
            records: exported_records,
        }
    }

    /// Removes every record of the session and returns them.
    pub fn erase_session(&mut self, session: &SessionId) -> Vec<AnnotationRecord> {
        let (gone, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.records)
            .into_iter()
            .partition(|r| &r.session_id == session);
        self.records = kept;
        self.per_session.remove(session);
        for r in &gone {
            self.keys.remove(&key(r));
            self.ids.remove(&r.record_id);
        }
        gone
    }
}

fn key(r: &AnnotationRecord) -> (CampaignId, InstanceId, SessionId) {
    (r.campaign_id.clone(), r.instance_id.clone(), r.session_id.clone())
}
