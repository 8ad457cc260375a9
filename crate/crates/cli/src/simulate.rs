//! Synthetic annotators driving an in-process server over HTTP.
//!
//! Time is simulated: a discrete-event queue orders every annotator action
//! and a manual clock shared with the server is set to each event's time
//! before its request goes out. Requests are issued one at a time, so a
//! fixed seed yields the same state, and the same export bytes, every run.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use citsci_core::annotation_store::ExportBundle;
use citsci_core::corpus::{self, Claim, Dataset, GoldLabel, Instance, PerspectiveCluster};
use citsci_core::ids::{ClaimId, ClusterId, InstanceId, PerspectiveId};
use citsci_core::onboarding::CallEvent;
use citsci_core::report::Format;
use citsci_core::{fixture, CampaignConfig, Channel, ManualClock, Platform, PlatformOptions, StanceLabel};
use clap::Args;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Pareto};
use serde_json::{json, Value};

use crate::error::{Class, CliError, CliResult};

const ORGANIZER_KEY: &str = "simulation-organizer";
const CAMPAIGN: &str = "simulation";
/// Tail index of the per-user contribution distribution.
const PARETO_SHAPE: f64 = 1.5;
const THINK_SECS: f64 = 45.0;
/// Share of annotators who arrive through a link minted for another channel.
const FORWARD_RATE: f64 = 0.2;

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 98)]
    pub annotators: usize,
    /// Channel weights, e.g. `lists:55,courses:14,twitter:8`; bare names weigh 1.
    #[arg(
        long,
        default_value = "courses:14,facebook:3,linkedin:4,lists:55,twitter:8,undisclosed:17"
    )]
    pub channels: String,
    /// Probability that a non-skip answer equals the gold label.
    #[arg(long, default_value_t = 0.8)]
    pub accuracy: f64,
    /// Probability of answering skip.
    #[arg(long, default_value_t = 0.1)]
    pub skip_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset file; a synthetic one of --instances instances otherwise.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub redundancy: u32,
    /// Mean of the heavy-tailed number of annotations each annotator intends to make.
    #[arg(long, default_value_t = 15.0)]
    pub per_user_mean: f64,
    /// Probability that an annotator leaves while holding a lease.
    #[arg(long, default_value_t = 0.02)]
    pub abandon_rate: f64,
    /// Export raw session ids instead of pseudonyms.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        Self {
            annotators: 98,
            channels: "courses:14,facebook:3,linkedin:4,lists:55,twitter:8,undisclosed:17".into(),
            accuracy: 0.8,
            skip_rate: 0.1,
            seed: 0,
            dataset: None,
            instances: 500,
            redundancy: 3,
            per_user_mean: 15.0,
            abandon_rate: 0.02,
            raw: false,
            format: Format::Json,
            out: None,
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub dataset: Dataset,
    /// The export exactly as served.
    pub export_text: String,
    pub export: ExportBundle,
    pub annotators: usize,
    pub submissions: u64,
    pub skips: u64,
    pub fine_correct: u64,
    pub abandoned: u64,
    pub stale: u64,
    /// Sessions per channel as answered on the landing page.
    pub answers: BTreeMap<String, u64>,
}

impl Outcome {
    pub fn measured_fine_accuracy(&self) -> Option<f64> {
        let scored = self.submissions - self.skips;
        (scored > 0).then(|| self.fine_correct as f64 / scored as f64)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "simulated {} annotators: {} submissions ({} skips), fine accuracy {}, {} abandoned, {} stale",
            self.annotators,
            self.submissions,
            self.skips,
            self.measured_fine_accuracy()
                .map_or_else(|| "n/a".to_owned(), |a| format!("{a:.4}")),
            self.abandoned,
            self.stale
        )
    }
}

pub fn parse_channels(spec: &str) -> Result<Vec<(Channel, f64)>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, weight) = match part.split_once(':') {
            Some((n, w)) => (
                n.trim(),
                w.trim().parse::<f64>().map_err(|_| format!("bad weight in `{part}`"))?,
            ),
            None => (part, 1.0),
        };
        if name.is_empty() || !(weight.is_finite() && weight > 0.0) {
            return Err(format!("bad channel entry `{part}`"));
        }
        if out.iter().any(|(c, _): &(Channel, f64)| c.as_str() == name) {
            return Err(format!("channel `{name}` listed twice"));
        }
        out.push((Channel::new(name), weight));
    }
    if out.is_empty() {
        return Err("no channels given".into());
    }
    Ok(out)
}

/// Claims with five clusters of two perspectives each, gold labels drawn
/// with the skew of a typical stance corpus.
pub fn synthetic_dataset(instances: usize, rng: &mut impl Rng) -> Dataset {
    let golds = [
        (StanceLabel::Supports, 30),
        (StanceLabel::Opposes, 30),
        (StanceLabel::MildlySupports, 12),
        (StanceLabel::MildlyOpposes, 12),
        (StanceLabel::NotAValidPerspective, 16),
    ];
    let mut claims = Vec::new();
    let mut clusters: Vec<PerspectiveCluster> = Vec::new();
    let mut out = Vec::with_capacity(instances);
    for i in 0..instances {
        let (c, k) = (i / 10, i / 2);
        let claim_id = ClaimId::new(format!("c{c:05}"));
        let cluster_id = ClusterId::new(format!("k{k:05}"));
        if i % 10 == 0 {
            claims.push(Claim {
                id: claim_id.clone(),
                text: format!("Synthetic claim {c}."),
            });
        }
        let pid = PerspectiveId::new(format!("p{i:06}"));
        if i % 2 == 0 {
            clusters.push(PerspectiveCluster {
                id: cluster_id.clone(),
                claim_id: claim_id.clone(),
                perspective_ids: Vec::new(),
            });
        }
        clusters
            .last_mut()
            .expect("cluster pushed")
            .perspective_ids
            .push(pid.clone());
        let gold = golds.choose_weighted(rng, |g| g.1).expect("weights are positive").0;
        out.push(Instance {
            id: InstanceId::new(format!("i{i:06}")),
            claim_id,
            perspective_id: pid,
            perspective_text: format!("Synthetic perspective {i}."),
            cluster_id,
            gold_fine: GoldLabel::new(gold).expect("stance labels are valid gold"),
        });
    }
    Dataset::from_parts(claims, clusters, out).expect("synthetic dataset is consistent")
}

fn validate(args: &SimulateArgs) -> CliResult<Vec<(Channel, f64)>> {
    let unit = |name: &str, v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err(CliError::input(format!("--{name} must be within [0, 1]")))
        }
    };
    unit("accuracy", args.accuracy)?;
    unit("skip-rate", args.skip_rate)?;
    unit("abandon-rate", args.abandon_rate)?;
    if args.annotators == 0 {
        return Err(CliError::input("--annotators must be positive"));
    }
    if args.redundancy == 0 {
        return Err(CliError::input("--redundancy must be positive"));
    }
    if !(args.per_user_mean.is_finite() && args.per_user_mean >= 1.0) {
        return Err(CliError::input("--per-user-mean must be at least 1"));
    }
    if args.dataset.is_none() && args.instances == 0 {
        return Err(CliError::input("--instances must be positive"));
    }
    parse_channels(&args.channels).map_err(CliError::input)
}

pub fn run(args: &SimulateArgs) -> CliResult<Outcome> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| CliError::new(Class::Service, e.to_string()))?;
    rt.block_on(run_async(args))
}

fn service(e: impl std::fmt::Display) -> CliError {
    CliError::new(Class::Service, format!("simulation request failed: {e}"))
}

struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    async fn call(
        &self,
        method: reqwest::Method,
        path: &str,
        token: &str,
        body: Option<Value>,
    ) -> CliResult<(u16, String)> {
        let mut req = self
            .http
            .request(method, format!("{}{path}", self.base))
            .header("authorization", format!("Bearer {token}"));
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b.to_string());
        }
        let resp = req.send().await.map_err(service)?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(service)?;
        Ok((status, text))
    }

    async fn json(
        &self,
        method: reqwest::Method,
        path: &str,
        token: &str,
        body: Option<Value>,
    ) -> CliResult<(u16, Value)> {
        let (status, text) = self.call(method, path, token, body).await?;
        let v = serde_json::from_str(&text).map_err(|e| service(format!("{path}: {e}: {text}")))?;
        Ok((status, v))
    }

    async fn expect(
        &self,
        method: reqwest::Method,
        path: &str,
        token: &str,
        body: Option<Value>,
        want: u16,
    ) -> CliResult<Value> {
        let (status, v) = self.json(method, path, token, body).await?;
        if status != want {
            return Err(service(format!("{path} returned {status}: {v}")));
        }
        Ok(v)
    }
}

enum Phase {
    Arriving,
    Working {
        secret: String,
        task: Value,
        remaining: u64,
    },
}

struct Annotator {
    channel: Channel,
    link: Channel,
    intended: u64,
    phase: Phase,
}

pub async fn run_async(args: &SimulateArgs) -> CliResult<Outcome> {
    let channels = validate(args)?;
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let dataset = match &args.dataset {
        Some(path) => corpus::load_dataset(path)?,
        None => synthetic_dataset(args.instances, &mut rng),
    };
    let gold: BTreeMap<InstanceId, StanceLabel> = dataset
        .instances()
        .iter()
        .map(|i| (i.id.clone(), i.gold_fine.label()))
        .collect();

    let start: DateTime<Utc> = "2022-01-17T09:00:00Z".parse().expect("valid timestamp");
    let clock = ManualClock::new(start);
    let platform = Platform::in_memory(
        dataset.clone(),
        PlatformOptions {
            clock: Arc::new(clock.clone()),
            seed: Some(args.seed),
            lease_override: None,
        },
    );
    let app = citsci_server::App::new(platform, ORGANIZER_KEY);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| CliError::new(Class::Io, e.to_string()))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::new(Class::Io, e.to_string()))?;
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(citsci_server::serve(listener, app, async {
        let _ = stop_rx.await;
    }));
    let client = Client {
        http: reqwest::Client::new(),
        base: format!("http://{addr}"),
    };

    // One recruitment call per channel, two days apart.
    let calls: Vec<CallEvent> = channels
        .iter()
        .enumerate()
        .filter(|(_, (c, _))| !c.is_undisclosed())
        .map(|(n, (c, _))| CallEvent {
            channel: c.clone(),
            at: start + Duration::days(2 * n as i64),
        })
        .collect();
    let mut config = CampaignConfig {
        campaign_id: CAMPAIGN.into(),
        redundancy_target: args.redundancy,
        call_events: calls.clone(),
        ..fixture::campaign_config()
    };
    config.title = "Simulated stance annotation".into();
    for (c, _) in &channels {
        if !config.has_channel(c) {
            config.channels.push(c.clone());
        }
    }
    use reqwest::Method;
    let key = ORGANIZER_KEY;
    let body = serde_json::to_value(&config).expect("config serializes");
    client
        .expect(Method::POST, "/admin/campaigns", key, Some(body), 201)
        .await?;
    client
        .expect(
            Method::POST,
            &format!("/admin/campaigns/{CAMPAIGN}/publish"),
            key,
            None,
            200,
        )
        .await?;
    let mut links = BTreeMap::new();
    for (c, _) in &channels {
        let v = client
            .expect(
                Method::POST,
                "/admin/links",
                key,
                Some(json!({ "campaign_id": CAMPAIGN, "channel_hint": c })),
                201,
            )
            .await?;
        links.insert(c.clone(), v["token"].as_str().unwrap_or_default().to_owned());
    }

    // Annotators and their arrival times.
    let pareto = Pareto::new(args.per_user_mean * (PARETO_SHAPE - 1.0) / PARETO_SHAPE, PARETO_SHAPE)
        .map_err(|e| CliError::input(e.to_string()))?;
    let arrival = Exp::new(1.0 / (12.0 * 3600.0)).expect("positive rate");
    let think = Exp::new(1.0 / THINK_SECS).expect("positive rate");
    let cap = dataset.instances().len() as u64;
    let mut annotators = Vec::with_capacity(args.annotators);
    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let mut answers: BTreeMap<String, u64> = BTreeMap::new();
    for a in 0..args.annotators {
        let channel = channels
            .choose_weighted(&mut rng, |c| c.1)
            .expect("weights are positive")
            .0
            .clone();
        *answers.entry(channel.as_str().to_owned()).or_default() += 1;
        let link = if rng.random_bool(FORWARD_RATE) {
            channels.choose(&mut rng).expect("channels are non-empty").0.clone()
        } else {
            channel.clone()
        };
        let intended = (pareto.sample(&mut rng).ceil() as u64).clamp(1, cap);
        let call = calls.iter().find(|e| e.channel == channel).map_or(start, |e| e.at);
        let at = call + Duration::seconds(arrival.sample(&mut rng) as i64);
        annotators.push(Annotator {
            channel,
            link,
            intended,
            phase: Phase::Arriving,
        });
        queue.push(Reverse((at, seq, a)));
        seq += 1;
    }

    let (mut submissions, mut skips, mut fine_correct, mut abandoned, mut stale) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut last = start;
    while let Some(Reverse((at, _, a))) = queue.pop() {
        clock.set(at);
        last = at;
        let ann = &mut annotators[a];
        let next_task = match std::mem::replace(&mut ann.phase, Phase::Arriving) {
            Phase::Arriving => {
                let body = json!({ "token": links[&ann.link], "consent": true, "channel": ann.channel });
                let v = client.expect(Method::POST, "/sessions", "", Some(body), 201).await?;
                let secret = v["secret_token"].as_str().unwrap_or_default().to_owned();
                let task = client.expect(Method::GET, "/tasks/next", &secret, None, 200).await?;
                Some((secret, task, ann.intended))
            }
            Phase::Working {
                secret,
                task,
                remaining,
            } => {
                if rng.random_bool(args.abandon_rate) {
                    abandoned += 1;
                    None
                } else {
                    let instance = InstanceId::new(task["instance_id"].as_str().unwrap_or_default());
                    let truth = gold[&instance];
                    let label = if rng.random_bool(args.skip_rate) {
                        StanceLabel::Skip
                    } else if rng.random_bool(args.accuracy) {
                        truth
                    } else {
                        let wrong: Vec<StanceLabel> =
                            StanceLabel::STANCES.iter().copied().filter(|l| *l != truth).collect();
                        *wrong.choose(&mut rng).expect("four wrong labels")
                    };
                    let lease = task["lease_id"].as_str().unwrap_or_default();
                    let path = format!("/tasks/{lease}/submit");
                    let (status, v) = client
                        .json(Method::POST, &path, &secret, Some(json!({ "label": label })))
                        .await?;
                    match status {
                        200 => {
                            submissions += 1;
                            if label.is_skip() {
                                skips += 1;
                            } else if label == truth {
                                fine_correct += 1;
                            }
                            (remaining > 1).then(|| (secret, v["next"].clone(), remaining - 1))
                        }
                        409 if v["code"] == "stale_lease" => {
                            stale += 1;
                            let task = client.expect(Method::GET, "/tasks/next", &secret, None, 200).await?;
                            Some((secret, task, remaining))
                        }
                        _ => return Err(service(format!("{path} returned {status}: {v}"))),
                    }
                }
            }
        };
        if let Some((secret, task, remaining)) = next_task {
            if task["status"] == "leased" {
                let dt = Duration::milliseconds((1000.0 * (5.0 + think.sample(&mut rng))) as i64);
                ann.phase = Phase::Working {
                    secret,
                    task,
                    remaining,
                };
                queue.push(Reverse((at + dt, seq, a)));
                seq += 1;
            }
        }
    }

    clock.set(last + Duration::hours(1));
    let path = format!("/admin/export?campaign={CAMPAIGN}&anonymize={}&format=json", !args.raw);
    let (status, json_text) = client.call(Method::GET, &path, key, None).await?;
    if status != 200 {
        return Err(service(format!("export returned {status}: {json_text}")));
    }
    let export = ExportBundle::from_json(&json_text).map_err(service)?;
    let export_text = match args.format {
        Format::Json => json_text,
        Format::Csv => export.to_csv(),
    };
    let _ = stop_tx.send(());
    server.await.map_err(service)?.map_err(service)?;

    Ok(Outcome {
        dataset,
        export_text,
        export,
        annotators: args.annotators,
        submissions,
        skips,
        fine_correct,
        abandoned,
        stale,
        answers,
    })
}
