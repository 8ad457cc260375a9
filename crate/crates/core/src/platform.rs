//! The platform ties onboarding, workload and the annotation store together
//! behind one serialized writer.
//!
//! Every mutation is validated first, journaled (when the platform is backed
//! by a data directory) and only then applied in memory. Callers that share
//! a platform across threads wrap it in a lock; holding `&mut Platform` is
//! the serialization point.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, Summary, SummaryOptions};
use crate::annotation_store::{AnnotationRecord, AnnotationStore, ExportBundle, RecordFilter, StoreError};
use crate::clock::{Clock, SystemClock};
use crate::corpus::{CorpusError, Dataset, Instance, StanceLabel};
use crate::ids::{CampaignId, LeaseId, SessionId};
use crate::onboarding::{
    fresh_session_id, fresh_token, AnnotatorSession, CallEvent, Campaign, CampaignConfig, Channel, DeletionReport,
    DisclosureVersion, InviteLink, Onboarding, OnboardingError,
};
use crate::report::{self, Format, ReportKind, ReportParams};
use crate::storage::{self, Event, Journal, Snapshot, StorageError};
use crate::workload::{Assignment, Lease, NextPlan, Progress, Workload, WorkloadError};

/// Journal length past which `open` folds it into a snapshot.
const COMPACT_AFTER: usize = 10_000;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Onboarding(#[from] OnboardingError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("session `{0}` has no consent record")]
    ConsentMissing(SessionId),
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

#[derive(Clone)]
pub struct PlatformOptions {
    pub clock: Arc<dyn Clock>,
    /// Seeds every token, id and pseudonym generator. `None` draws from the OS.
    pub seed: Option<u64>,
    /// Replaces every campaign's configured lease duration.
    pub lease_override: Option<Duration>,
}

impl Default for PlatformOptions {
    fn default() -> Self {
        Self {
            clock: Arc::new(SystemClock),
            seed: None,
            lease_override: None,
        }
    }
}

impl std::fmt::Debug for PlatformOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlatformOptions")
            .field("seed", &self.seed)
            .field("lease_override", &self.lease_override)
            .finish_non_exhaustive()
    }
}

/// Borrowed inputs for the analytics functions, restricted to one campaign.
pub struct ReportInputs<'a> {
    pub dataset: &'a Dataset,
    pub records: Vec<&'a AnnotationRecord>,
    pub sessions: Vec<&'a AnnotatorSession>,
    pub call_events: &'a [CallEvent],
}

/// An assigned lease with the instance it covers.
#[derive(Debug, Clone)]
pub struct Task<'a> {
    pub lease: Lease,
    pub instance: &'a Instance,
    pub claim_text: &'a str,
}

pub struct Platform {
    dataset: Arc<Dataset>,
    dataset_digest: String,
    onboarding: Onboarding,
    workloads: BTreeMap<CampaignId, Workload>,
    store: AnnotationStore,
    clock: Arc<dyn Clock>,
    rng: ChaCha20Rng,
    lease_override: Option<Duration>,
    journal: Option<Journal>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("dataset_digest", &self.dataset_digest)
            .field("campaigns", &self.workloads.len())
            .field("records", &self.store.len())
            .field("persistent", &self.journal.is_some())
            .finish_non_exhaustive()
    }
}

impl Platform {
    /// A platform that keeps everything in memory.
    pub fn in_memory(dataset: Dataset, options: PlatformOptions) -> Self {
        let dataset_digest = dataset.digest();
        Self {
            dataset: Arc::new(dataset),
            dataset_digest,
            onboarding: Onboarding::new(),
            workloads: BTreeMap::new(),
            store: AnnotationStore::new(),
            rng: match options.seed {
                Some(s) => ChaCha20Rng::seed_from_u64(s),
                None => ChaCha20Rng::from_os_rng(),
            },
            clock: options.clock,
            lease_override: options.lease_override,
            journal: None,
        }
    }

    /// Opens a data directory previously prepared with [`storage::write_dataset`].
    pub fn open(dir: impl AsRef<Path>, options: PlatformOptions) -> Result<Self> {
        let dir = dir.as_ref();
        let dataset = storage::read_dataset(dir)?;
        let (journal, snapshot, events) = Journal::open(dir)?;
        let mut p = Self::in_memory(dataset, options);
        if let Some(snap) = snapshot {
            p.restore(snap)?;
        }
        for ev in events {
            p.apply(ev);
        }
        if let Some(d) = p.lease_override {
            for w in p.workloads.values_mut() {
                w.set_lease_duration(d);
            }
        }
        let replayed = journal.len();
        p.journal = Some(journal);
        if replayed > COMPACT_AFTER {
            p.compact()?;
        }
        Ok(p)
    }

    /// An in-memory platform starting from `snapshot`.
    pub fn from_snapshot(dataset: Dataset, snapshot: Snapshot, options: PlatformOptions) -> Result<Self> {
        let mut p = Self::in_memory(dataset, options);
        p.restore(snapshot)?;
        if let Some(d) = p.lease_override {
            for w in p.workloads.values_mut() {
                w.set_lease_duration(d);
            }
        }
        Ok(p)
    }

    fn restore(&mut self, mut snap: Snapshot) -> Result<()> {
        if snap.dataset_digest != self.dataset_digest {
            return Err(StorageError::DatasetMismatch {
                expected: snap.dataset_digest,
                found: self.dataset_digest.clone(),
            }
            .into());
        }
        snap.onboarding.rebuild_indexes();
        for w in snap.workloads.values_mut() {
            w.rebuild_indexes();
        }
        snap.store.rebuild_indexes();
        self.onboarding = snap.onboarding;
        self.workloads = snap.workloads;
        self.store = snap.store;
        Ok(())
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn dataset_digest(&self) -> &str {
        &self.dataset_digest
    }

    pub fn onboarding(&self) -> &Onboarding {
        &self.onboarding
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn workload(&self, campaign: &CampaignId) -> Option<&Workload> {
        self.workloads.get(campaign)
    }

    pub fn campaign(&self, id: &CampaignId) -> Option<&Campaign> {
        self.onboarding.campaign(id)
    }

    pub fn campaign_count(&self) -> usize {
        self.workloads.len()
    }

    pub fn session(&self, id: &SessionId) -> Option<&AnnotatorSession> {
        self.onboarding.session(id)
    }

    pub fn session_by_secret(&self, secret: &str) -> Option<&AnnotatorSession> {
        self.onboarding.session_by_secret(secret)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            dataset_digest: self.dataset_digest.clone(),
            onboarding: self.onboarding.clone(),
            workloads: self.workloads.clone(),
            store: self.store.clone(),
        }
    }

    /// Folds the journal into a fresh snapshot.
    pub fn compact(&mut self) -> Result<()> {
        let snap = self.snapshot();
        if let Some(j) = self.journal.as_mut() {
            j.compact(&snap)?;
        }
        Ok(())
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&event)?;
        }
        self.apply(event);
        Ok(())
    }

    fn new_workload(&self, config: &CampaignConfig) -> Workload {
        Workload::new(
            self.dataset.instances().iter().map(|i| i.id.clone()),
            config.redundancy_target,
            self.lease_override.unwrap_or_else(|| config.lease_duration()),
        )
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::CampaignCreated { campaign } => {
                let w = self.new_workload(&campaign.config);
                self.workloads.insert(campaign.id().clone(), w);
                self.onboarding.insert_campaign(campaign);
            }
            Event::CampaignPublished { campaign_id, version } => {
                self.onboarding.apply_publish(&campaign_id, version);
            }
            Event::LinkMinted { link } => self.onboarding.insert_link(link),
            Event::SessionStarted { session, consent } => self.onboarding.insert_session(session, consent),
            Event::LeaseIssued { campaign_id, lease } => {
                if let Some(w) = self.workloads.get_mut(&campaign_id) {
                    w.apply_issue(lease);
                }
            }
            Event::LeasesExpired { campaign_id, lease_ids } => {
                if let Some(w) = self.workloads.get_mut(&campaign_id) {
                    w.apply_expire(&lease_ids);
                }
            }
            Event::LeaseReleased { campaign_id, lease_id } => {
                if let Some(w) = self.workloads.get_mut(&campaign_id) {
                    let _ = w.release(&lease_id);
                }
            }
            Event::Submitted {
                campaign_id,
                lease_id,
                record,
            } => {
                if let Some(w) = self.workloads.get_mut(&campaign_id) {
                    w.apply_fulfill(&lease_id, record.label);
                }
                self.store
                    .append(record)
                    .expect("journaled records were checked before commit");
            }
        }
    }

    // ------------------------------------------------------------ campaigns

    pub fn create_campaign(&mut self, config: CampaignConfig) -> Result<CampaignId> {
        let campaign = self.onboarding.prepare_campaign(config, self.now())?;
        let id = campaign.id().clone();
        self.commit(Event::CampaignCreated { campaign })?;
        Ok(id)
    }

    pub fn publish_campaign(&mut self, id: &CampaignId) -> Result<DisclosureVersion> {
        let version = self.onboarding.prepare_publish(id, self.now())?;
        self.commit(Event::CampaignPublished {
            campaign_id: id.clone(),
            version: version.clone(),
        })?;
        Ok(version)
    }

    pub fn mint_invite_link(&mut self, id: &CampaignId, channel_hint: Option<Channel>) -> Result<InviteLink> {
        let token = fresh_token(&mut self.rng);
        let link = self.onboarding.prepare_link(id, channel_hint, token)?;
        self.commit(Event::LinkMinted { link: link.clone() })?;
        Ok(link)
    }

    pub fn resolve_invite(&self, token: &str) -> Result<(&InviteLink, &Campaign)> {
        Ok(self.onboarding.resolve_invite(token)?)
    }

    // ------------------------------------------------------------- sessions

    /// Creates a guest session; nothing is stored unless `consent` is true.
    pub fn start_session(
        &mut self,
        token: &str,
        consent: bool,
        channel_answer: Option<Channel>,
    ) -> Result<AnnotatorSession> {
        let now = self.now();
        // Resolve before drawing randomness so refused attempts leave the generator untouched.
        self.onboarding.resolve_invite(token)?;
        if !consent {
            return Err(OnboardingError::ConsentRefused.into());
        }
        let id = fresh_session_id(&mut self.rng);
        let secret = fresh_token(&mut self.rng);
        let (session, consent) = self
            .onboarding
            .prepare_session(token, consent, channel_answer, now, id, secret)?;
        self.commit(Event::SessionStarted {
            session: session.clone(),
            consent,
        })?;
        Ok(session)
    }

    fn consented_session(&self, id: &SessionId) -> Result<&AnnotatorSession> {
        let session = self
            .onboarding
            .session(id)
            .ok_or_else(|| OnboardingError::UnknownSession(id.clone()))?;
        if self.onboarding.consent(id).is_none() {
            return Err(PlatformError::ConsentMissing(id.clone()));
        }
        Ok(session)
    }

    /// Erases the session with its consent record, leases and annotations.
    /// Disk state is rewritten before the change becomes visible.
    pub fn delete_participant_data(&mut self, id: &SessionId) -> Result<DeletionReport> {
        let campaign = self
            .onboarding
            .session(id)
            .ok_or_else(|| OnboardingError::UnknownSession(id.clone()))?
            .campaign_id
            .clone();
        let mut onboarding = self.onboarding.clone();
        let mut store = self.store.clone();
        let mut workloads = self.workloads.clone();

        onboarding.remove_session(id)?;
        let removed = store.erase_session(id);
        let pairs: Vec<_> = removed.iter().map(|r| (r.instance_id.clone(), r.label)).collect();
        let forgot = workloads
            .get_mut(&campaign)
            .map(|w| w.forget_session(id, &pairs))
            .unwrap_or_default();

        if let Some(j) = self.journal.as_mut() {
            j.compact(&Snapshot {
                dataset_digest: self.dataset_digest.clone(),
                onboarding: onboarding.clone(),
                workloads: workloads.clone(),
                store: store.clone(),
            })?;
        }
        self.onboarding = onboarding;
        self.store = store;
        self.workloads = workloads;
        Ok(DeletionReport {
            sessions: 1,
            consent_records: 1,
            leases: forgot.active_leases,
            lease_history: forgot.lease_history,
            records: removed.len(),
        })
    }

    // ------------------------------------------------------------- workload

    fn workload_of(&self, session: &AnnotatorSession) -> Result<&Workload> {
        let campaign = self
            .onboarding
            .campaign(&session.campaign_id)
            .ok_or_else(|| OnboardingError::UnknownCampaign(session.campaign_id.clone()))?;
        if !campaign.is_published() {
            return Err(OnboardingError::NotPublished(campaign.id().clone()).into());
        }
        Ok(&self.workloads[campaign.id()])
    }

    /// The session's current lease, a newly issued one, or `Done`.
    pub fn next_instance(&mut self, session_id: &SessionId) -> Result<Assignment> {
        let now = self.now();
        let campaign = self.consented_session(session_id)?.campaign_id.clone();
        self.sweep_campaign(&campaign, now)?;
        let session = self.consented_session(session_id)?;
        let plan = self.workload_of(session)?.plan_next(session_id, now);
        match plan {
            NextPlan::Existing(lease) => Ok(Assignment::Leased(lease)),
            NextPlan::Done => Ok(Assignment::Done),
            NextPlan::Issue(lease) => {
                self.commit(Event::LeaseIssued {
                    campaign_id: campaign,
                    lease: lease.clone(),
                })?;
                Ok(Assignment::Leased(lease))
            }
        }
    }

    /// Resolves a lease to the instance it covers, for display.
    pub fn task(&self, lease: Lease) -> Option<Task<'_>> {
        let instance = self.dataset.instance(&lease.instance_id)?;
        let claim_text = self.dataset.claim(&instance.claim_id)?.text.as_str();
        Some(Task {
            lease,
            instance,
            claim_text,
        })
    }

    /// Records `label` for the lease held by `session_id`.
    pub fn submit(
        &mut self,
        session_id: &SessionId,
        lease_id: &LeaseId,
        label: StanceLabel,
    ) -> Result<AnnotationRecord> {
        let now = self.now();
        let session = self.consented_session(session_id)?;
        let campaign = session.campaign_id.clone();
        let channel = session.channel.clone();
        let workload = self.workload_of(session)?;
        let instance_id = match workload.check_submit(lease_id, Some(session_id), now) {
            Ok(lease) => lease.instance_id.clone(),
            Err(e @ WorkloadError::StaleLease { .. }) => {
                if workload.lease(lease_id).is_some_and(Lease::is_active) {
                    self.commit(Event::LeasesExpired {
                        campaign_id: campaign,
                        lease_ids: vec![lease_id.clone()],
                    })?;
                }
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        let record = AnnotationRecord {
            record_id: self.store.next_record_id(),
            campaign_id: campaign.clone(),
            instance_id,
            session_id: session_id.clone(),
            channel,
            label,
            created_at: now,
        };
        self.store.check_append(&record)?;
        self.commit(Event::Submitted {
            campaign_id: campaign,
            lease_id: lease_id.clone(),
            record: record.clone(),
        })?;
        Ok(record)
    }

    pub fn release_lease(&mut self, session_id: &SessionId, lease_id: &LeaseId) -> Result<()> {
        let session = self.consented_session(session_id)?;
        let campaign = session.campaign_id.clone();
        let lease = self
            .workload_of(session)?
            .lease(lease_id)
            .ok_or_else(|| WorkloadError::UnknownLease(lease_id.clone()))?;
        if &lease.session_id != session_id {
            return Err(WorkloadError::NotOwner(lease_id.clone()).into());
        }
        if !lease.is_active() {
            return Err(WorkloadError::NotActive {
                lease: lease_id.clone(),
                state: lease.state,
            }
            .into());
        }
        self.commit(Event::LeaseReleased {
            campaign_id: campaign,
            lease_id: lease_id.clone(),
        })
    }

    fn sweep_campaign(&mut self, campaign: &CampaignId, now: DateTime<Utc>) -> Result<usize> {
        let Some(w) = self.workloads.get(campaign) else {
            return Ok(0);
        };
        let ids = w.plan_expire(now);
        if ids.is_empty() {
            return Ok(0);
        }
        let n = ids.len();
        self.commit(Event::LeasesExpired {
            campaign_id: campaign.clone(),
            lease_ids: ids,
        })?;
        Ok(n)
    }

    /// Expires every overdue lease in every campaign.
    pub fn expire_leases(&mut self) -> Result<usize> {
        let now = self.now();
        let campaigns: Vec<CampaignId> = self.workloads.keys().cloned().collect();
        let mut n = 0;
        for c in campaigns {
            n += self.sweep_campaign(&c, now)?;
        }
        Ok(n)
    }

    pub fn progress(&self, campaign: &CampaignId) -> Result<Progress> {
        self.workloads
            .get(campaign)
            .map(Workload::progress)
            .ok_or_else(|| OnboardingError::UnknownCampaign(campaign.clone()).into())
    }

    /// Number of records a session has contributed.
    pub fn contribution_count(&self, session_id: &SessionId) -> usize {
        self.store.count_of_session(session_id)
    }

    // -------------------------------------------------------- store/reports

    pub fn query(&self, filter: &RecordFilter) -> Vec<&AnnotationRecord> {
        self.store.query(filter)
    }

    pub fn export(&mut self, campaign: &CampaignId, anonymize: bool) -> Result<ExportBundle> {
        if self.onboarding.campaign(campaign).is_none() {
            return Err(OnboardingError::UnknownCampaign(campaign.clone()).into());
        }
        let now = self.now();
        Ok(self.store.export(
            campaign,
            self.onboarding.sessions_of(campaign),
            anonymize,
            now,
            &self.dataset_digest,
            &mut self.rng,
        ))
    }

    pub fn report_inputs(&self, campaign: &CampaignId) -> Result<ReportInputs<'_>> {
        let c = self
            .onboarding
            .campaign(campaign)
            .ok_or_else(|| OnboardingError::UnknownCampaign(campaign.clone()))?;
        Ok(ReportInputs {
            dataset: &self.dataset,
            records: self.store.query(&RecordFilter::campaign(campaign.clone())),
            sessions: self.onboarding.sessions_of(campaign).collect(),
            call_events: &c.config.call_events,
        })
    }

    pub fn report(
        &self,
        campaign: &CampaignId,
        kind: ReportKind,
        format: Format,
        params: &ReportParams,
    ) -> Result<String> {
        let inputs = self.report_inputs(campaign)?;
        Ok(report::render(
            kind,
            format,
            params,
            inputs.dataset,
            &inputs.records,
            &inputs.sessions,
            inputs.call_events,
        )?)
    }

    pub fn summary(&self, campaign: &CampaignId, options: SummaryOptions) -> Result<Summary> {
        let inputs = self.report_inputs(campaign)?;
        Ok(analytics::summary(
            &inputs.records,
            inputs.dataset,
            &inputs.sessions,
            inputs.call_events,
            options,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::onboarding::tests::complete_config;

    const DATASET: &str = r#"{
      "claims": [{"id": "c1", "text": "Claim one"}],
      "clusters": [{"id": "k1", "claim_id": "c1", "perspective_ids": ["p1", "p2", "p3"]}],
      "instances": [
        {"id": "i1", "claim_id": "c1", "perspective_id": "p1", "perspective_text": "x", "cluster_id": "k1", "gold_fine": "supports"},
        {"id": "i2", "claim_id": "c1", "perspective_id": "p2", "perspective_text": "y", "cluster_id": "k1", "gold_fine": "opposes"},
        {"id": "i3", "claim_id": "c1", "perspective_id": "p3", "perspective_text": "z", "cluster_id": "k1", "gold_fine": "opposes"}
      ]
    }"#;

    fn setup(clock: &ManualClock) -> (Platform, CampaignId, InviteLink) {
        let dataset = Dataset::from_json_str(DATASET).unwrap();
        let mut p = Platform::in_memory(
            dataset,
            PlatformOptions {
                clock: Arc::new(clock.clone()),
                seed: Some(42),
                lease_override: None,
            },
        );
        let id = p
            .create_campaign(CampaignConfig {
                redundancy_target: 2,
                lease_duration_secs: 600,
                ..complete_config("cs")
            })
            .unwrap();
        p.publish_campaign(&id).unwrap();
        let link = p.mint_invite_link(&id, Some("lists".into())).unwrap();
        (p, id, link)
    }

    fn clock() -> ManualClock {
        ManualClock::new(DateTime::from_timestamp(1_641_772_800, 0).unwrap())
    }

    #[test]
    fn annotate_flow_and_deletion() {
        let clock = clock();
        let (mut p, id, link) = setup(&clock);
        let s = p.start_session(&link.token, true, None).unwrap();
        assert_eq!(s.channel.as_str(), "lists");
        for _ in 0..3 {
            let lease = p.next_instance(&s.session_id).unwrap().lease().cloned().unwrap();
            clock.advance(Duration::seconds(20));
            p.submit(&s.session_id, &lease.lease_id, StanceLabel::Supports).unwrap();
        }
        assert_eq!(p.next_instance(&s.session_id).unwrap(), Assignment::Done);
        assert_eq!(p.contribution_count(&s.session_id), 3);

        let report = p.delete_participant_data(&s.session_id).unwrap();
        assert_eq!(report.records, 3);
        assert_eq!(report.leases, 0);
        assert_eq!(p.export(&id, false).unwrap().records.len(), 0);
        assert!(matches!(
            p.delete_participant_data(&s.session_id),
            Err(PlatformError::Onboarding(OnboardingError::UnknownSession(_)))
        ));
        assert_eq!(p.progress(&id).unwrap().untouched, 3);
    }

    #[test]
    fn unknown_session_cannot_annotate() {
        let clock = clock();
        let (mut p, _, link) = setup(&clock);
        assert!(p.start_session(&link.token, false, None).is_err());
        let ghost = SessionId::new("ghost");
        assert!(p.next_instance(&ghost).is_err());
        assert!(p
            .submit(&ghost, &LeaseId::new("lease-00000001"), StanceLabel::Supports)
            .is_err());
        assert!(p.store().is_empty());
    }

    #[test]
    fn stale_submit_is_rejected_and_lease_recycled() {
        let clock = clock();
        let (mut p, _, link) = setup(&clock);
        let a = p.start_session(&link.token, true, None).unwrap();
        let b = p.start_session(&link.token, true, None).unwrap();
        let c = p.start_session(&link.token, true, None).unwrap();
        let la = p.next_instance(&a.session_id).unwrap().lease().cloned().unwrap();
        clock.advance(Duration::seconds(601));
        assert!(matches!(
            p.submit(&a.session_id, &la.lease_id, StanceLabel::Supports),
            Err(PlatformError::Workload(WorkloadError::StaleLease { .. }))
        ));
        let lb = p.next_instance(&b.session_id).unwrap().lease().cloned().unwrap();
        assert_eq!(lb.instance_id, la.instance_id);
        // Other session cannot use someone else's lease.
        assert!(matches!(
            p.submit(&c.session_id, &lb.lease_id, StanceLabel::Supports),
            Err(PlatformError::Workload(WorkloadError::NotOwner(_)))
        ));
    }

    #[test]
    fn persistent_state_survives_reopen_and_erasure_leaves_no_trace() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = Dataset::from_json_str(DATASET).unwrap();
        storage::write_dataset(dir.path(), &dataset).unwrap();
        let clock = clock();
        let opts = PlatformOptions {
            clock: Arc::new(clock.clone()),
            seed: Some(1),
            lease_override: None,
        };
        let (sid_keep, sid_gone);
        {
            let mut p = Platform::open(dir.path(), opts.clone()).unwrap();
            let id = p.create_campaign(complete_config("cs")).unwrap();
            p.publish_campaign(&id).unwrap();
            let link = p.mint_invite_link(&id, None).unwrap();
            let keep = p.start_session(&link.token, true, Some("twitter".into())).unwrap();
            let gone = p.start_session(&link.token, true, Some("courses".into())).unwrap();
            for s in [&keep, &gone] {
                let l = p.next_instance(&s.session_id).unwrap().lease().cloned().unwrap();
                p.submit(&s.session_id, &l.lease_id, StanceLabel::Opposes).unwrap();
            }
            let _outstanding = p.next_instance(&keep.session_id).unwrap();
            sid_keep = keep.session_id;
            sid_gone = gone.session_id;
        }
        {
            let mut p = Platform::open(dir.path(), opts.clone()).unwrap();
            assert_eq!(p.store().len(), 2);
            assert!(p.workload(&"cs".into()).unwrap().active_lease_of(&sid_keep).is_some());
            p.delete_participant_data(&sid_gone).unwrap();
        }
        for f in [storage::SNAPSHOT_FILE, storage::JOURNAL_FILE] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap_or_default();
            assert!(
                !text.contains(sid_gone.as_str()),
                "{f} still mentions the erased session"
            );
        }
        let p = Platform::open(dir.path(), opts).unwrap();
        assert_eq!(p.store().len(), 1);
        assert!(p.session(&sid_gone).is_none());
        assert!(p.session(&sid_keep).is_some());
        p.onboarding().audit_consents().unwrap();
    }

    #[test]
    fn lease_override_applies() {
        let clock = clock();
        let dataset = Dataset::from_json_str(DATASET).unwrap();
        let mut p = Platform::in_memory(
            dataset,
            PlatformOptions {
                clock: Arc::new(clock.clone()),
                seed: Some(3),
                lease_override: Some(Duration::seconds(5)),
            },
        );
        let id = p.create_campaign(complete_config("cs")).unwrap();
        p.publish_campaign(&id).unwrap();
        let link = p.mint_invite_link(&id, None).unwrap();
        let s = p.start_session(&link.token, true, None).unwrap();
        let l = p.next_instance(&s.session_id).unwrap().lease().cloned().unwrap();
        assert_eq!(l.expires_at - l.issued_at, Duration::seconds(5));
        clock.advance(Duration::seconds(5));
        assert_eq!(p.expire_leases().unwrap(), 1);
    }

    #[test]
    fn unpublished_campaign_cannot_mint() {
        let clock = clock();
        let dataset = Dataset::from_json_str(DATASET).unwrap();
        let mut p = Platform::in_memory(
            dataset,
            PlatformOptions {
                clock: Arc::new(clock),
                seed: Some(0),
                lease_override: None,
            },
        );
        let id = p.create_campaign(CampaignConfig::draft("d")).unwrap();
        assert!(p.publish_campaign(&id).is_err());
        assert!(p.mint_invite_link(&id, None).is_err());
    }
}
