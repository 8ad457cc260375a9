//! Pure report computations over annotation records and the dataset.
//!
//! Everything here is a deterministic function of its inputs. The functions
//! are generic over [`LabeledRecord`] so that they run equally on live
//! store records and on records read back from an export.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation_store::{AnnotationRecord, ExportedRecord, ExportedSession};
use crate::corpus::{Dataset, StanceLabel};
use crate::ids::InstanceId;
use crate::onboarding::{AnnotatorSession, CallEvent, Channel};

pub trait LabeledRecord {
    fn instance_id(&self) -> &InstanceId;
    /// Session id or its export pseudonym.
    fn annotator(&self) -> &str;
    fn channel(&self) -> &Channel;
    fn label(&self) -> StanceLabel;
    fn created_at(&self) -> DateTime<Utc>;
}

impl LabeledRecord for AnnotationRecord {
    fn instance_id(&self) -> &InstanceId {
        &self.instance_id
    }
    fn annotator(&self) -> &str {
        self.session_id.as_str()
    }
    fn channel(&self) -> &Channel {
        &self.channel
    }
    fn label(&self) -> StanceLabel {
        self.label
    }
    fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }
}

impl LabeledRecord for ExportedRecord {
    fn instance_id(&self) -> &InstanceId {
        &self.instance_id
    }
    fn annotator(&self) -> &str {
        &self.session_pseudonym
    }
    fn channel(&self) -> &Channel {
        &self.channel
    }
    fn label(&self) -> StanceLabel {
        self.label
    }
    fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }
}

impl<T: LabeledRecord + ?Sized> LabeledRecord for &T {
    fn instance_id(&self) -> &InstanceId {
        (**self).instance_id()
    }
    fn annotator(&self) -> &str {
        (**self).annotator()
    }
    fn channel(&self) -> &Channel {
        (**self).channel()
    }
    fn label(&self) -> StanceLabel {
        (**self).label()
    }
    fn created_at(&self) -> DateTime<Utc> {
        (**self).created_at()
    }
}

/// A consented session as seen by the participation report.
pub trait Participant {
    fn key(&self) -> &str;
    fn channel(&self) -> &Channel;
}

impl Participant for AnnotatorSession {
    fn key(&self) -> &str {
        self.session_id.as_str()
    }
    fn channel(&self) -> &Channel {
        &self.channel
    }
}

impl Participant for ExportedSession {
    fn key(&self) -> &str {
        &self.session_pseudonym
    }
    fn channel(&self) -> &Channel {
        &self.channel
    }
}

impl<T: Participant + ?Sized> Participant for &T {
    fn key(&self) -> &str {
        (**self).key()
    }
    fn channel(&self) -> &Channel {
        (**self).channel()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("record references unknown instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error("bucket width must be positive")]
    InvalidBucket,
    #[error("timeline would need {0} buckets; use a wider bucket")]
    TooManyBuckets(i64),
}

/// A non-negative rational kept as its two integers so that rendering can
/// round exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    /// `None` for an empty denominator.
    pub fn value(self) -> Option<f64> {
        (self.den != 0).then(|| self.num as f64 / self.den as f64)
    }

    /// `100·num/den`, or 0 for an empty denominator.
    pub fn percent(self) -> f64 {
        self.value().map_or(0.0, |v| 100.0 * v)
    }

    /// Decimal rendering of `scale·num/den`, rounded half-up at `dp` places.
    pub fn render_scaled(self, scale: u64, dp: u32) -> Option<String> {
        if self.den == 0 {
            return None;
        }
        let pow = 10u128.pow(dp);
        let q = self.num as u128 * scale as u128 * pow;
        let den = self.den as u128;
        let rounded = (2 * q + den) / (2 * den);
        let (int, frac) = (rounded / pow, rounded % pow);
        Some(if dp == 0 {
            int.to_string()
        } else {
            format!("{int}.{frac:0width$}", width = dp as usize)
        })
    }

    pub fn render_percent(self, dp: u32) -> String {
        self.render_scaled(100, dp)
            .unwrap_or_else(|| format!("{:.*}", dp as usize, 0.0))
    }

    pub fn render(self, dp: u32) -> Option<String> {
        self.render_scaled(1, dp)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Decimal places used when rendering percentages and accuracies.
pub const RENDER_DP: u32 = 4;

// ---------------------------------------------------------------- coverage

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub annotated: u64,
    pub total: u64,
}

impl CoverageRow {
    pub fn fraction(self) -> Fraction {
        Fraction::new(self.annotated, self.total)
    }

    pub fn percent(self) -> f64 {
        self.fraction().percent()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub claims: CoverageRow,
    pub clusters: CoverageRow,
    pub instances: CoverageRow,
    pub records: u64,
}

impl CoverageReport {
    /// Records per instance that received at least one record.
    pub fn mean_annotations_per_touched_instance(&self) -> Fraction {
        Fraction::new(self.records, self.instances.annotated)
    }

    pub fn rows(&self) -> [(&'static str, CoverageRow); 3] {
        [
            ("claims", self.claims),
            ("clusters", self.clusters),
            ("total", self.instances),
        ]
    }
}

/// Claims, clusters and instances touched by at least one record. Skips
/// count as touching.
pub fn coverage<R: LabeledRecord>(dataset: &Dataset, records: &[R]) -> Result<CoverageReport, AnalyticsError> {
    let mut claims = HashSet::new();
    let mut clusters = HashSet::new();
    let mut instances = HashSet::new();
    for r in records {
        let inst = dataset
            .instance(r.instance_id())
            .ok_or_else(|| AnalyticsError::UnknownInstance(r.instance_id().clone()))?;
        claims.insert(&inst.claim_id);
        clusters.insert(&inst.cluster_id);
        instances.insert(&inst.id);
    }
    let d = dataset.denominators();
    Ok(CoverageReport {
        claims: CoverageRow {
            annotated: claims.len() as u64,
            total: d.claims as u64,
        },
        clusters: CoverageRow {
            annotated: clusters.len() as u64,
            total: d.clusters as u64,
        },
        instances: CoverageRow {
            annotated: instances.len() as u64,
            total: d.instances as u64,
        },
        records: records.len() as u64,
    })
}

// ---------------------------------------------------------------- accuracy

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tagset {
    Fine,
    Coarse,
}

impl std::str::FromStr for Tagset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fine" => Ok(Tagset::Fine),
            "coarse" => Ok(Tagset::Coarse),
            other => Err(format!("unknown tagset `{other}` (expected fine or coarse)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAccuracy {
    /// All records of the channel, skips included.
    pub records: u64,
    /// Non-skip records compared against gold.
    pub n_scored: u64,
    pub fine_correct: u64,
    pub coarse_correct: u64,
    /// Listed but below the `min_scored` threshold.
    pub excluded: bool,
}

impl ChannelAccuracy {
    pub fn fine(&self) -> Fraction {
        Fraction::new(self.fine_correct, self.n_scored)
    }

    pub fn coarse(&self) -> Fraction {
        Fraction::new(self.coarse_correct, self.n_scored)
    }

    pub fn fine_accuracy(&self) -> Option<f64> {
        self.fine().value()
    }

    pub fn coarse_accuracy(&self) -> Option<f64> {
        self.coarse().value()
    }

    pub fn accuracy(&self, tagset: Tagset) -> Option<f64> {
        match tagset {
            Tagset::Fine => self.fine_accuracy(),
            Tagset::Coarse => self.coarse_accuracy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub min_scored: u64,
    pub channels: BTreeMap<Channel, ChannelAccuracy>,
}

/// Per-channel agreement with the gold labels, skips omitted.
pub fn accuracy<R: LabeledRecord>(
    records: &[R],
    dataset: &Dataset,
    min_scored: u64,
) -> Result<AccuracyReport, AnalyticsError> {
    let mut channels: BTreeMap<Channel, ChannelAccuracy> = BTreeMap::new();
    for r in records {
        let gold = dataset
            .instance(r.instance_id())
            .ok_or_else(|| AnalyticsError::UnknownInstance(r.instance_id().clone()))?
            .gold_fine;
        let row = channels.entry(r.channel().clone()).or_insert(ChannelAccuracy {
            records: 0,
            n_scored: 0,
            fine_correct: 0,
            coarse_correct: 0,
            excluded: false,
        });
        row.records += 1;
        let Some(coarse) = r.label().coarse() else {
            continue;
        };
        row.n_scored += 1;
        row.fine_correct += u64::from(r.label() == gold.label());
        row.coarse_correct += u64::from(coarse == gold.coarse());
    }
    for row in channels.values_mut() {
        row.excluded = row.n_scored < min_scored;
    }
    Ok(AccuracyReport { min_scored, channels })
}

// ------------------------------------------------------- label distribution

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub total: u64,
    pub counts: BTreeMap<StanceLabel, u64>,
}

impl LabelCounts {
    fn empty() -> Self {
        Self {
            total: 0,
            counts: StanceLabel::ALL.into_iter().map(|l| (l, 0)).collect(),
        }
    }

    pub fn count(&self, label: StanceLabel) -> u64 {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn share(&self, label: StanceLabel) -> Fraction {
        Fraction::new(self.count(label), self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelDistributionReport {
    pub channels: BTreeMap<Channel, LabelCounts>,
}

/// Column order of the label distribution table.
pub const DISTRIBUTION_ORDER: [StanceLabel; 6] = [
    StanceLabel::MildlySupports,
    StanceLabel::Supports,
    StanceLabel::MildlyOpposes,
    StanceLabel::Opposes,
    StanceLabel::NotAValidPerspective,
    StanceLabel::Skip,
];

pub fn label_distribution<R: LabeledRecord>(records: &[R]) -> LabelDistributionReport {
    let mut channels: BTreeMap<Channel, LabelCounts> = BTreeMap::new();
    for r in records {
        let row = channels.entry(r.channel().clone()).or_insert_with(LabelCounts::empty);
        row.total += 1;
        *row.counts.entry(r.label()).or_insert(0) += 1;
    }
    LabelDistributionReport { channels }
}

// ------------------------------------------------------------ participation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub bucket_start: DateTime<Utc>,
    pub cumulative: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationSeries {
    pub bucket_secs: i64,
    pub channels: BTreeMap<Channel, Vec<SeriesPoint>>,
    pub call_events: Vec<CallEvent>,
}

/// Upper bound on the number of buckets in one series.
pub const MAX_BUCKETS: i64 = 1_000_000;

/// Cumulative record counts per channel at each bucket. Buckets are aligned
/// to multiples of `bucket` since the Unix epoch and every channel shares
/// the same range, from the bucket of the first record to that of the last.
pub fn participation_over_time<R: LabeledRecord>(
    records: &[R],
    call_events: &[CallEvent],
    bucket: Duration,
) -> Result<ParticipationSeries, AnalyticsError> {
    let width = bucket.num_seconds();
    if width <= 0 {
        return Err(AnalyticsError::InvalidBucket);
    }
    let mut events = call_events.to_vec();
    events.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.channel.cmp(&b.channel)));

    let bucket_of = |t: DateTime<Utc>| t.timestamp().div_euclid(width);
    let Some((first, last)) =
        records
            .iter()
            .map(|r| bucket_of(r.created_at()))
            .fold(None, |acc: Option<(i64, i64)>, b| match acc {
                None => Some((b, b)),
                Some((lo, hi)) => Some((lo.min(b), hi.max(b))),
            })
    else {
        return Ok(ParticipationSeries {
            bucket_secs: width,
            channels: BTreeMap::new(),
            call_events: events,
        });
    };
    let n = last - first + 1;
    if n > MAX_BUCKETS {
        return Err(AnalyticsError::TooManyBuckets(n));
    }

    let mut per_bucket: BTreeMap<&Channel, Vec<u64>> = BTreeMap::new();
    for r in records {
        let slot = (bucket_of(r.created_at()) - first) as usize;
        per_bucket.entry(r.channel()).or_insert_with(|| vec![0; n as usize])[slot] += 1;
    }
    let channels = per_bucket
        .into_iter()
        .map(|(ch, counts)| {
            let mut running = 0;
            let points = counts
                .into_iter()
                .enumerate()
                .map(|(i, c)| {
                    running += c;
                    SeriesPoint {
                        bucket_start: DateTime::from_timestamp((first + i as i64) * width, 0)
                            .expect("bucket start within chrono range"),
                        cumulative: running,
                    }
                })
                .collect();
            (ch.clone(), points)
        })
        .collect();
    Ok(ParticipationSeries {
        bucket_secs: width,
        channels,
        call_events: events,
    })
}

// ----------------------------------------------------------- per-user counts

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelUsers {
    /// Consented sessions, whether or not they annotated anything.
    pub participant_count: u64,
    /// Sessions with at least one record.
    pub active_participant_count: u64,
    pub total_records: u64,
    /// One entry per session, descending.
    pub per_session_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerUserCounts {
    pub channels: BTreeMap<Channel, ChannelUsers>,
}

impl PerUserCounts {
    pub fn total_participants(&self) -> u64 {
        self.channels.values().map(|c| c.participant_count).sum()
    }
}

/// Records per session, grouped by channel. Records whose session is not
/// listed are attributed to an implicit session of the record's channel.
pub fn per_user_counts<R: LabeledRecord, P: Participant>(records: &[R], sessions: &[P]) -> PerUserCounts {
    let mut by_session: HashMap<&str, (&Channel, u64)> = HashMap::new();
    for s in sessions {
        by_session.entry(s.key()).or_insert((s.channel(), 0));
    }
    for r in records {
        by_session.entry(r.annotator()).or_insert((r.channel(), 0)).1 += 1;
    }
    let mut channels: BTreeMap<Channel, ChannelUsers> = BTreeMap::new();
    for (channel, n) in by_session.into_values() {
        let row = channels.entry(channel.clone()).or_insert(ChannelUsers {
            participant_count: 0,
            active_participant_count: 0,
            total_records: 0,
            per_session_counts: Vec::new(),
        });
        row.participant_count += 1;
        row.active_participant_count += u64::from(n > 0);
        row.total_records += n;
        row.per_session_counts.push(n);
    }
    for row in channels.values_mut() {
        row.per_session_counts.sort_unstable_by(|a, b| b.cmp(a));
    }
    PerUserCounts { channels }
}

// ------------------------------------------------------------------ summary

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummaryOptions {
    pub min_scored: u64,
    pub bucket: Duration,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            min_scored: 0,
            bucket: Duration::days(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub coverage: CoverageReport,
    pub mean_annotations_per_touched_instance: Option<String>,
    pub accuracy: AccuracyReport,
    pub labels: LabelDistributionReport,
    pub timeline: ParticipationSeries,
    pub users: PerUserCounts,
}

pub fn summary<R: LabeledRecord, P: Participant>(
    records: &[R],
    dataset: &Dataset,
    sessions: &[P],
    call_events: &[CallEvent],
    options: SummaryOptions,
) -> Result<Summary, AnalyticsError> {
    let coverage = coverage(dataset, records)?;
    Ok(Summary {
        mean_annotations_per_touched_instance: coverage.mean_annotations_per_touched_instance().render(2),
        coverage,
        accuracy: accuracy(records, dataset, options.min_scored)?,
        labels: label_distribution(records),
        timeline: participation_over_time(records, call_events, options.bucket)?,
        users: per_user_counts(records, sessions),
    })
}
