//! Campaign configuration, consent disclosures, invite links and anonymous
//! guest sessions.
//!
//! Every mutating operation comes in two halves: a `prepare_*` method that
//! validates against the current state and returns the value to be stored,
//! and an `insert_*`/`apply_*` method that commits it without further
//! checks. The one-shot methods (`create_campaign`, `start_session`, ...)
//! simply chain the two. The split lets the platform journal a change
//! before making it visible.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{CampaignId, SessionId};

pub const UNDISCLOSED: &str = "undisclosed";
pub const DEFAULT_LEASE_SECS: u64 = 30 * 60;

/// A self-reported recruitment channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Channel(String);

impl Channel {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn undisclosed() -> Self {
        Self(UNDISCLOSED.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_undisclosed(&self) -> bool {
        self.0 == UNDISCLOSED
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Channel {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

pub fn default_channels() -> Vec<Channel> {
    ["courses", "facebook", "linkedin", "lists", "twitter", UNDISCLOSED]
        .into_iter()
        .map(Channel::from)
        .collect()
}

fn default_redundancy() -> u32 {
    3
}

fn default_lease_secs() -> u64 {
    DEFAULT_LEASE_SECS
}

/// When a call for participation was posted on a channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEvent {
    pub channel: Channel,
    pub at: DateTime<Utc>,
}

/// Organizer-supplied campaign configuration.
///
/// Disclosure fields may be left empty while the campaign is a draft, but
/// publishing requires all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub campaign_id: CampaignId,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub guidelines_text: String,
    #[serde(default)]
    pub purpose_statement: String,
    #[serde(default)]
    pub personal_data_collected: Vec<String>,
    #[serde(default)]
    pub nonpersonal_data_collected: Vec<String>,
    #[serde(default)]
    pub questionnaire_questions: Vec<String>,
    #[serde(default)]
    pub data_use_statement: String,
    #[serde(default)]
    pub publication_plan: String,
    #[serde(default)]
    pub rights_contact: String,
    #[serde(default)]
    pub license_notice: String,
    #[serde(default = "default_channels")]
    pub channels: Vec<Channel>,
    #[serde(default = "default_redundancy")]
    pub redundancy_target: u32,
    #[serde(default = "default_lease_secs")]
    pub lease_duration_secs: u64,
    #[serde(default)]
    pub call_events: Vec<CallEvent>,
}

impl CampaignConfig {
    /// A draft config with default channels, redundancy 3 and a 30 minute lease.
    pub fn draft(campaign_id: impl Into<CampaignId>) -> Self {
        Self {
            campaign_id: campaign_id.into(),
            title: String::new(),
            guidelines_text: String::new(),
            purpose_statement: String::new(),
            personal_data_collected: Vec::new(),
            nonpersonal_data_collected: Vec::new(),
            questionnaire_questions: Vec::new(),
            data_use_statement: String::new(),
            publication_plan: String::new(),
            rights_contact: String::new(),
            license_notice: String::new(),
            channels: default_channels(),
            redundancy_target: default_redundancy(),
            lease_duration_secs: DEFAULT_LEASE_SECS,
            call_events: Vec::new(),
        }
    }

    pub fn lease_duration(&self) -> Duration {
        Duration::seconds(self.lease_duration_secs as i64)
    }

    pub fn has_channel(&self, channel: &Channel) -> bool {
        self.channels.contains(channel)
    }

    /// SHA-256 over the fields shown to participants before they consent.
    pub fn disclosure_hash(&self) -> String {
        #[derive(Serialize)]
        struct Disclosure<'a> {
            campaign_id: &'a CampaignId,
            title: &'a str,
            guidelines_text: &'a str,
            purpose_statement: &'a str,
            personal_data_collected: &'a [String],
            nonpersonal_data_collected: &'a [String],
            questionnaire_questions: &'a [String],
            data_use_statement: &'a str,
            publication_plan: &'a str,
            rights_contact: &'a str,
            license_notice: &'a str,
        }
        let d = Disclosure {
            campaign_id: &self.campaign_id,
            title: &self.title,
            guidelines_text: &self.guidelines_text,
            purpose_statement: &self.purpose_statement,
            personal_data_collected: &self.personal_data_collected,
            nonpersonal_data_collected: &self.nonpersonal_data_collected,
            questionnaire_questions: &self.questionnaire_questions,
            data_use_statement: &self.data_use_statement,
            publication_plan: &self.publication_plan,
            rights_contact: &self.rights_contact,
            license_notice: &self.license_notice,
        };
        let bytes = serde_json::to_vec(&d).expect("disclosure serialization is infallible");
        hex::encode(Sha256::digest(bytes))
    }

    /// The first disclosure field that is empty, in the order participants read them.
    pub fn missing_disclosure(&self) -> Option<&'static str> {
        let blank = |s: &str| s.trim().is_empty();
        let none_listed = |v: &[String]| v.iter().all(|s| blank(s));
        if blank(&self.purpose_statement) {
            Some("purpose_statement")
        } else if none_listed(&self.personal_data_collected) {
            Some("personal_data_collected")
        } else if none_listed(&self.nonpersonal_data_collected) {
            Some("nonpersonal_data_collected")
        } else if blank(&self.data_use_statement) {
            Some("data_use_statement")
        } else if blank(&self.publication_plan) {
            Some("publication_plan")
        } else if blank(&self.rights_contact) {
            Some("rights_contact")
        } else {
            None
        }
    }

    fn validate_structure(&mut self) -> Result<(), OnboardingError> {
        if self.campaign_id.as_str().trim().is_empty() {
            return Err(OnboardingError::InvalidConfig("campaign_id must not be empty".into()));
        }
        if self.redundancy_target == 0 {
            return Err(OnboardingError::InvalidConfig(
                "redundancy_target must be positive".into(),
            ));
        }
        if self.lease_duration_secs == 0 {
            return Err(OnboardingError::InvalidConfig(
                "lease_duration_secs must be positive".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.channels {
            if c.as_str().trim().is_empty() {
                return Err(OnboardingError::InvalidConfig("channel names must not be empty".into()));
            }
            if !seen.insert(c) {
                return Err(OnboardingError::InvalidConfig(format!("duplicate channel `{c}`")));
            }
        }
        if !self.channels.iter().any(Channel::is_undisclosed) {
            self.channels.push(Channel::undisclosed());
        }
        if let Some(ev) = self.call_events.iter().find(|e| !self.channels.contains(&e.channel)) {
            return Err(OnboardingError::InvalidConfig(format!(
                "call event references unknown channel `{}`",
                ev.channel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CampaignStatus {
    Draft,
    Published,
}

/// One frozen version of the disclosure text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureVersion {
    pub version: u32,
    pub hash: String,
    pub frozen_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Campaign {
    pub config: CampaignConfig,
    pub status: CampaignStatus,
    pub created_at: DateTime<Utc>,
    pub disclosure_versions: Vec<DisclosureVersion>,
}

impl Campaign {
    pub fn id(&self) -> &CampaignId {
        &self.config.campaign_id
    }

    pub fn is_published(&self) -> bool {
        self.status == CampaignStatus::Published
    }

    pub fn current_disclosure(&self) -> Option<&DisclosureVersion> {
        self.disclosure_versions.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InviteLink {
    pub token: String,
    pub campaign_id: CampaignId,
    pub channel_hint: Option<Channel>,
}

impl InviteLink {
    pub fn path(&self) -> String {
        format!("/join/{}", self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub session_id: SessionId,
    pub consent_given_at: DateTime<Utc>,
    pub disclosed_config_hash: String,
}

/// An anonymous guest. Holds no name, address or other personal identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorSession {
    pub session_id: SessionId,
    pub campaign_id: CampaignId,
    pub channel: Channel,
    pub created_at: DateTime<Utc>,
    pub secret_token: String,
}

/// What an erasure removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeletionReport {
    pub sessions: usize,
    pub consent_records: usize,
    /// Leases that were still outstanding.
    pub leases: usize,
    /// Fulfilled, expired and released lease entries purged from history.
    pub lease_history: usize,
    pub records: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OnboardingError {
    #[error("invalid campaign config: {0}")]
    InvalidConfig(String),
    #[error("campaign `{0}` already exists")]
    DuplicateCampaign(CampaignId),
    #[error("unknown campaign `{0}`")]
    UnknownCampaign(CampaignId),
    #[error("campaign `{0}` is already published")]
    AlreadyPublished(CampaignId),
    #[error("campaign `{0}` is not published")]
    NotPublished(CampaignId),
    #[error("{field} required")]
    MissingDisclosure { field: &'static str },
    #[error("channel `{0}` is not offered by this campaign")]
    UnknownChannel(Channel),
    #[error("invite link not found")]
    UnknownInvite,
    #[error("consent was not given")]
    ConsentRefused,
    #[error("unknown session `{0}`")]
    UnknownSession(SessionId),
    #[error("token collision")]
    TokenCollision,
}

/// Bytes of entropy in every minted token.
pub const TOKEN_BYTES: usize = 32;

/// A fresh hex token with [`TOKEN_BYTES`] bytes of entropy.
pub fn fresh_token(rng: &mut impl RngCore) -> String {
    let mut buf = [0u8; TOKEN_BYTES];
    rng.fill_bytes(&mut buf);
    hex::encode(buf)
}

pub fn fresh_session_id(rng: &mut impl RngCore) -> SessionId {
    let mut buf = [0u8; 16];
    rng.fill_bytes(&mut buf);
    SessionId::new(hex::encode(buf))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Onboarding {
    campaigns: BTreeMap<CampaignId, Campaign>,
    links: BTreeMap<String, InviteLink>,
    sessions: BTreeMap<SessionId, AnnotatorSession>,
    consents: BTreeMap<SessionId, ConsentRecord>,
    #[serde(skip)]
    by_secret: HashMap<String, SessionId>,
}

impl Onboarding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rebuild_indexes(&mut self) {
        self.by_secret = self
            .sessions
            .values()
            .map(|s| (s.secret_token.clone(), s.session_id.clone()))
            .collect();
    }

    pub fn campaigns(&self) -> impl Iterator<Item = &Campaign> {
        self.campaigns.values()
    }

    pub fn campaign(&self, id: &CampaignId) -> Option<&Campaign> {
        self.campaigns.get(id)
    }

    pub fn session(&self, id: &SessionId) -> Option<&AnnotatorSession> {
        self.sessions.get(id)
    }

    pub fn session_by_secret(&self, secret: &str) -> Option<&AnnotatorSession> {
        self.by_secret.get(secret).and_then(|id| self.sessions.get(id))
    }

    pub fn consent(&self, id: &SessionId) -> Option<&ConsentRecord> {
        self.consents.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &AnnotatorSession> {
        self.sessions.values()
    }

    pub fn sessions_of(&self, campaign: &CampaignId) -> impl Iterator<Item = &AnnotatorSession> + '_ {
        let campaign = campaign.clone();
        self.sessions.values().filter(move |s| s.campaign_id == campaign)
    }

    pub fn link(&self, token: &str) -> Option<&InviteLink> {
        self.links.get(token)
    }

    // --- campaigns ---

    pub fn prepare_campaign(
        &self,
        mut config: CampaignConfig,
        now: DateTime<Utc>,
    ) -> Result<Campaign, OnboardingError> {
        config.validate_structure()?;
        if self.campaigns.contains_key(&config.campaign_id) {
            return Err(OnboardingError::DuplicateCampaign(config.campaign_id));
        }
        Ok(Campaign {
            config,
            status: CampaignStatus::Draft,
            created_at: now,
            disclosure_versions: Vec::new(),
        })
    }

    pub fn insert_campaign(&mut self, campaign: Campaign) {
        self.campaigns.insert(campaign.id().clone(), campaign);
    }

    pub fn create_campaign(
        &mut self,
        config: CampaignConfig,
        now: DateTime<Utc>,
    ) -> Result<CampaignId, OnboardingError> {
        let campaign = self.prepare_campaign(config, now)?;
        let id = campaign.id().clone();
        self.insert_campaign(campaign);
        Ok(id)
    }

    pub fn prepare_publish(&self, id: &CampaignId, now: DateTime<Utc>) -> Result<DisclosureVersion, OnboardingError> {
        let campaign = self
            .campaigns
            .get(id)
            .ok_or_else(|| OnboardingError::UnknownCampaign(id.clone()))?;
        if campaign.is_published() {
            return Err(OnboardingError::AlreadyPublished(id.clone()));
        }
        if let Some(field) = campaign.config.missing_disclosure() {
            return Err(OnboardingError::MissingDisclosure { field });
        }
        Ok(DisclosureVersion {
            version: campaign.disclosure_versions.len() as u32 + 1,
            hash: campaign.config.disclosure_hash(),
            frozen_at: now,
        })
    }

    pub fn apply_publish(&mut self, id: &CampaignId, version: DisclosureVersion) {
        if let Some(c) = self.campaigns.get_mut(id) {
            c.status = CampaignStatus::Published;
            c.disclosure_versions.push(version);
        }
    }

    pub fn publish_campaign(
        &mut self,
        id: &CampaignId,
        now: DateTime<Utc>,
    ) -> Result<DisclosureVersion, OnboardingError> {
        let v = self.prepare_publish(id, now)?;
        self.apply_publish(id, v.clone());
        Ok(v)
    }

    // --- invite links ---

    pub fn prepare_link(
        &self,
        id: &CampaignId,
        channel_hint: Option<Channel>,
        token: String,
    ) -> Result<InviteLink, OnboardingError> {
        let campaign = self
            .campaigns
            .get(id)
            .ok_or_else(|| OnboardingError::UnknownCampaign(id.clone()))?;
        if !campaign.is_published() {
            return Err(OnboardingError::NotPublished(id.clone()));
        }
        if let Some(hint) = &channel_hint {
            if !campaign.config.has_channel(hint) {
                return Err(OnboardingError::UnknownChannel(hint.clone()));
            }
        }
        if self.links.contains_key(&token) {
            return Err(OnboardingError::TokenCollision);
        }
        Ok(InviteLink {
            token,
            campaign_id: id.clone(),
            channel_hint,
        })
    }

    pub fn insert_link(&mut self, link: InviteLink) {
        self.links.insert(link.token.clone(), link);
    }

    pub fn mint_invite_link(
        &mut self,
        id: &CampaignId,
        channel_hint: Option<Channel>,
        rng: &mut impl RngCore,
    ) -> Result<InviteLink, OnboardingError> {
        let link = self.prepare_link(id, channel_hint, fresh_token(rng))?;
        self.insert_link(link.clone());
        Ok(link)
    }

    /// The link and its campaign, provided the campaign is published.
    pub fn resolve_invite(&self, token: &str) -> Result<(&InviteLink, &Campaign), OnboardingError> {
        let link = self.links.get(token).ok_or(OnboardingError::UnknownInvite)?;
        let campaign = self
            .campaigns
            .get(&link.campaign_id)
            .ok_or(OnboardingError::UnknownInvite)?;
        if !campaign.is_published() {
            return Err(OnboardingError::NotPublished(campaign.id().clone()));
        }
        Ok((link, campaign))
    }

    // --- sessions ---

    /// Validates a join attempt. The channel is the self-reported answer if
    /// one was given, otherwise the link's hint, otherwise undisclosed.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare_session(
        &self,
        token: &str,
        consent: bool,
        channel_answer: Option<Channel>,
        now: DateTime<Utc>,
        session_id: SessionId,
        secret_token: String,
    ) -> Result<(AnnotatorSession, ConsentRecord), OnboardingError> {
        let (link, campaign) = self.resolve_invite(token)?;
        if !consent {
            return Err(OnboardingError::ConsentRefused);
        }
        let channel = channel_answer
            .or_else(|| link.channel_hint.clone())
            .unwrap_or_else(Channel::undisclosed);
        if !campaign.config.has_channel(&channel) {
            return Err(OnboardingError::UnknownChannel(channel));
        }
        if self.sessions.contains_key(&session_id) || self.by_secret.contains_key(&secret_token) {
            return Err(OnboardingError::TokenCollision);
        }
        let disclosure = campaign
            .current_disclosure()
            .ok_or_else(|| OnboardingError::NotPublished(campaign.id().clone()))?;
        let session = AnnotatorSession {
            session_id: session_id.clone(),
            campaign_id: campaign.id().clone(),
            channel,
            created_at: now,
            secret_token,
        };
        let consent = ConsentRecord {
            session_id,
            consent_given_at: now,
            disclosed_config_hash: disclosure.hash.clone(),
        };
        Ok((session, consent))
    }

    /// Commits a session and its consent record together.
    pub fn insert_session(&mut self, session: AnnotatorSession, consent: ConsentRecord) {
        debug_assert_eq!(session.session_id, consent.session_id);
        self.by_secret
            .insert(session.secret_token.clone(), session.session_id.clone());
        self.consents.insert(consent.session_id.clone(), consent);
        self.sessions.insert(session.session_id.clone(), session);
    }

    pub fn start_session(
        &mut self,
        token: &str,
        consent: bool,
        channel_answer: Option<Channel>,
        now: DateTime<Utc>,
        rng: &mut impl RngCore,
    ) -> Result<AnnotatorSession, OnboardingError> {
        let id = fresh_session_id(rng);
        let secret = fresh_token(rng);
        let (session, record) = self.prepare_session(token, consent, channel_answer, now, id, secret)?;
        self.insert_session(session.clone(), record);
        Ok(session)
    }

    /// Removes the session and its consent record.
    pub fn remove_session(&mut self, id: &SessionId) -> Result<(AnnotatorSession, ConsentRecord), OnboardingError> {
        let session = self
            .sessions
            .remove(id)
            .ok_or_else(|| OnboardingError::UnknownSession(id.clone()))?;
        self.by_secret.remove(&session.secret_token);
        let consent = self.consents.remove(id).expect("every session has a consent record");
        Ok((session, consent))
    }

    /// Checks that every consent's digest matches a frozen disclosure version.
    pub fn audit_consents(&self) -> Result<(), String> {
        for (id, consent) in &self.consents {
            let session = self
                .sessions
                .get(id)
                .ok_or_else(|| format!("orphan consent for `{id}`"))?;
            let campaign = self
                .campaigns
                .get(&session.campaign_id)
                .ok_or_else(|| format!("session `{id}` references unknown campaign"))?;
            if !campaign
                .disclosure_versions
                .iter()
                .any(|v| v.hash == consent.disclosed_config_hash)
            {
                return Err(format!("consent of `{id}` matches no disclosure version"));
            }
        }
        if self.sessions.keys().any(|id| !self.consents.contains_key(id)) {
            return Err("session without consent record".into());
        }
        Ok(())
    }
}
