//! Renderers for analytics reports: delimited text tables, JSON documents
//! and plot-ready series.
//!
//! Percentages and accuracies are rendered at [`RENDER_DP`] decimal places
//! with exact rounding from the underlying integer counts.

use chrono::Duration;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analytics::{
    self, AccuracyReport, AnalyticsError, CoverageReport, LabelDistributionReport, LabeledRecord, Participant,
    ParticipationSeries, PerUserCounts, Summary, Tagset, DISTRIBUTION_ORDER, RENDER_DP,
};
use crate::corpus::Dataset;
use crate::onboarding::CallEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Coverage,
    Accuracy,
    Labels,
    Timeline,
    Users,
}

impl std::str::FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "coverage" => ReportKind::Coverage,
            "accuracy" => ReportKind::Accuracy,
            "labels" => ReportKind::Labels,
            "timeline" => ReportKind::Timeline,
            "users" => ReportKind::Users,
            other => return Err(format!("unknown report `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected json or csv)")),
        }
    }
}

impl Format {
    pub fn content_type(self) -> &'static str {
        match self {
            Format::Json => "application/json",
            Format::Csv => "text/csv; charset=utf-8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportParams {
    /// Restricts accuracy output to one tagset; both when `None`.
    pub tagset: Option<Tagset>,
    pub min_scored: u64,
    pub bucket: Duration,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            tagset: None,
            min_scored: 0,
            bucket: Duration::days(1),
        }
    }
}

/// Parses a bucket width: plain seconds or a number with `s`, `m`, `h`, `d` or `w`.
pub fn parse_bucket(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: i64 = num.parse().map_err(|_| format!("invalid bucket `{s}`"))?;
    let secs = match unit {
        "" | "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        "w" => 7 * 86_400,
        _ => return Err(format!("invalid bucket unit in `{s}` (use s, m, h, d or w)")),
    };
    if n <= 0 {
        return Err("bucket width must be positive".into());
    }
    n.checked_mul(secs)
        .map(Duration::seconds)
        .ok_or_else(|| format!("bucket `{s}` is too large"))
}

/// Computes one report and renders it.
pub fn render<R: LabeledRecord, P: Participant>(
    kind: ReportKind,
    format: Format,
    params: &ReportParams,
    dataset: &Dataset,
    records: &[R],
    sessions: &[P],
    call_events: &[CallEvent],
) -> Result<String, AnalyticsError> {
    let pretty = |v: Value| serde_json::to_string_pretty(&v).expect("json rendering is infallible") + "\n";
    Ok(match kind {
        ReportKind::Coverage => {
            let r = analytics::coverage(dataset, records)?;
            match format {
                Format::Csv => coverage_csv(&r),
                Format::Json => pretty(coverage_json(&r)),
            }
        }
        ReportKind::Accuracy => {
            let r = analytics::accuracy(records, dataset, params.min_scored)?;
            match format {
                Format::Csv => accuracy_csv(&r, params.tagset),
                Format::Json => pretty(accuracy_json(&r, params.tagset)),
            }
        }
        ReportKind::Labels => {
            let r = analytics::label_distribution(records);
            match format {
                Format::Csv => labels_csv(&r),
                Format::Json => pretty(labels_json(&r)),
            }
        }
        ReportKind::Timeline => {
            let r = analytics::participation_over_time(records, call_events, params.bucket)?;
            match format {
                Format::Csv => timeline_csv(&r),
                Format::Json => pretty(timeline_json(&r)),
            }
        }
        ReportKind::Users => {
            let r = analytics::per_user_counts(records, sessions);
            match format {
                Format::Csv => users_csv(&r),
                Format::Json => pretty(users_json(&r)),
            }
        }
    })
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

pub fn coverage_csv(r: &CoverageReport) -> String {
    table(
        &["name", "annotated", "total", "percent_annotated"],
        r.rows().into_iter().map(|(name, row)| {
            vec![
                name.to_owned(),
                row.annotated.to_string(),
                row.total.to_string(),
                row.fraction().render_percent(RENDER_DP),
            ]
        }),
    )
}

pub fn coverage_json(r: &CoverageReport) -> Value {
    let rows: Vec<Value> = r
        .rows()
        .into_iter()
        .map(|(name, row)| {
            json!({
                "name": name,
                "annotated": row.annotated,
                "total": row.total,
                "percent": row.percent(),
                "percent_display": row.fraction().render_percent(RENDER_DP),
            })
        })
        .collect();
    json!({
        "rows": rows,
        "records": r.records,
        "mean_annotations_per_touched_instance": r.mean_annotations_per_touched_instance().value(),
        "mean_annotations_per_touched_instance_display": r.mean_annotations_per_touched_instance().render(2),
    })
}

fn render_opt(f: crate::analytics::Fraction) -> String {
    f.render(6).unwrap_or_default()
}

/// Accuracy table; `tagset` restricts the output to one column.
pub fn accuracy_csv(r: &AccuracyReport, tagset: Option<Tagset>) -> String {
    let mut header = vec!["channel", "records", "n_scored"];
    match tagset {
        None => header.extend(["coarse", "fine"]),
        Some(Tagset::Coarse) => header.push("coarse"),
        Some(Tagset::Fine) => header.push("fine"),
    }
    header.push("excluded");
    table(
        &header,
        r.channels.iter().map(|(ch, row)| {
            let mut v = vec![ch.to_string(), row.records.to_string(), row.n_scored.to_string()];
            if tagset != Some(Tagset::Fine) {
                v.push(render_opt(row.coarse()));
            }
            if tagset != Some(Tagset::Coarse) {
                v.push(render_opt(row.fine()));
            }
            v.push(row.excluded.to_string());
            v
        }),
    )
}

pub fn accuracy_json(r: &AccuracyReport, tagset: Option<Tagset>) -> Value {
    let channels: Vec<Value> = r
        .channels
        .iter()
        .map(|(ch, row)| {
            let mut v = json!({
                "channel": ch,
                "records": row.records,
                "n_scored": row.n_scored,
                "fine_correct": row.fine_correct,
                "coarse_correct": row.coarse_correct,
                "excluded": row.excluded,
            });
            if tagset != Some(Tagset::Fine) {
                v["coarse_accuracy"] = json!(row.coarse_accuracy());
            }
            if tagset != Some(Tagset::Coarse) {
                v["fine_accuracy"] = json!(row.fine_accuracy());
            }
            v
        })
        .collect();
    json!({ "min_scored": r.min_scored, "channels": channels })
}

pub fn labels_csv(r: &LabelDistributionReport) -> String {
    let mut header: Vec<String> = vec!["channel".into(), "total".into()];
    header.extend(DISTRIBUTION_ORDER.iter().map(|l| l.symbol().to_owned()));
    header.extend(DISTRIBUTION_ORDER.iter().map(|l| format!("%{}", l.symbol())));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(
        &header,
        r.channels.iter().map(|(ch, row)| {
            let mut v = vec![ch.to_string(), row.total.to_string()];
            v.extend(DISTRIBUTION_ORDER.iter().map(|l| row.count(*l).to_string()));
            v.extend(
                DISTRIBUTION_ORDER
                    .iter()
                    .map(|l| row.share(*l).render_percent(RENDER_DP)),
            );
            v
        }),
    )
}

pub fn labels_json(r: &LabelDistributionReport) -> Value {
    let channels: Vec<Value> = r
        .channels
        .iter()
        .map(|(ch, row)| {
            let labels: Vec<Value> = DISTRIBUTION_ORDER
                .iter()
                .map(|l| {
                    json!({
                        "label": l,
                        "symbol": l.symbol(),
                        "count": row.count(*l),
                        "percent": row.share(*l).percent(),
                        "percent_display": row.share(*l).render_percent(RENDER_DP),
                    })
                })
                .collect();
            json!({ "channel": ch, "total": row.total, "labels": labels })
        })
        .collect();
    json!({ "channels": channels })
}

pub fn timeline_csv(s: &ParticipationSeries) -> String {
    table(
        &["channel", "bucket_start", "cumulative"],
        s.channels.iter().flat_map(|(ch, pts)| {
            pts.iter().map(move |p| {
                vec![
                    ch.to_string(),
                    p.bucket_start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    p.cumulative.to_string(),
                ]
            })
        }),
    )
}

#[derive(Debug, Serialize)]
pub struct PlotSeries<'a> {
    pub channel: &'a str,
    pub x: Vec<String>,
    pub y: Vec<u64>,
}

#[derive(Debug, Serialize)]
pub struct PlotMarker<'a> {
    pub channel: &'a str,
    pub x: String,
}

/// x/y series per channel plus vertical call-event markers.
#[derive(Debug, Serialize)]
pub struct TimelinePlot<'a> {
    pub bucket_secs: i64,
    pub series: Vec<PlotSeries<'a>>,
    pub markers: Vec<PlotMarker<'a>>,
}

pub fn timeline_plot(s: &ParticipationSeries) -> TimelinePlot<'_> {
    let stamp = |t: chrono::DateTime<chrono::Utc>| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    TimelinePlot {
        bucket_secs: s.bucket_secs,
        series: s
            .channels
            .iter()
            .map(|(ch, pts)| PlotSeries {
                channel: ch.as_str(),
                x: pts.iter().map(|p| stamp(p.bucket_start)).collect(),
                y: pts.iter().map(|p| p.cumulative).collect(),
            })
            .collect(),
        markers: s
            .call_events
            .iter()
            .map(|e| PlotMarker {
                channel: e.channel.as_str(),
                x: stamp(e.at),
            })
            .collect(),
    }
}

pub fn timeline_json(s: &ParticipationSeries) -> Value {
    serde_json::to_value(timeline_plot(s)).expect("plot serialization is infallible")
}

pub fn users_csv(u: &PerUserCounts) -> String {
    table(
        &[
            "channel",
            "participants",
            "active_participants",
            "records",
            "per_session_counts",
        ],
        u.channels.iter().map(|(ch, row)| {
            vec![
                ch.to_string(),
                row.participant_count.to_string(),
                row.active_participant_count.to_string(),
                row.total_records.to_string(),
                row.per_session_counts
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        }),
    )
}

pub fn users_json(u: &PerUserCounts) -> Value {
    serde_json::to_value(u).expect("report serialization is infallible")
}

pub fn summary_json(s: &Summary) -> Value {
    json!({
        "coverage": coverage_json(&s.coverage),
        "accuracy": accuracy_json(&s.accuracy, None),
        "labels": labels_json(&s.labels),
        "timeline": timeline_json(&s.timeline),
        "users": users_json(&s.users),
    })
}
