//! Safety and liveness of the workload manager under randomized
//! interleavings, checked against an independent log of what happened.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use citsci_core::corpus::StanceLabel;
use citsci_core::ids::{InstanceId, LeaseId, SessionId};
use citsci_core::workload::{Assignment, Workload, WorkloadError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const LEASE_SECS: i64 = 60;

fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_650_000_000, 0).unwrap()
}

fn instances(n: usize) -> Vec<InstanceId> {
    (0..n).map(|i| InstanceId::new(format!("i{i:03}"))).collect()
}

/// What the test believes happened, kept apart from the workload's own state.
#[derive(Default)]
struct Log {
    /// (session, instance) -> was it a skip
    submitted: HashMap<(SessionId, InstanceId), bool>,
    /// leases the log considers open: lease -> (session, instance, expires_at)
    open: HashMap<LeaseId, (SessionId, InstanceId, DateTime<Utc>)>,
}

impl Log {
    fn completed(&self, instance: &InstanceId) -> u32 {
        self.submitted
            .iter()
            .filter(|((_, i), skip)| i == instance && !**skip)
            .count() as u32
    }
}

fn check_invariants(w: &Workload, log: &Log, k: u32) {
    let mut active: HashMap<&InstanceId, u32> = HashMap::new();
    let mut active_sessions = HashSet::new();
    for l in w.leases().filter(|l| l.is_active()) {
        *active.entry(&l.instance_id).or_default() += 1;
        assert!(active_sessions.insert(&l.session_id), "session holds two active leases");
    }
    for (id, p) in w.iter_progress() {
        assert!(p.completed <= k, "completed over target on {id}");
        assert!(p.completed + p.active_leases <= k, "capacity exceeded on {id}");
        assert_eq!(p.completed, log.completed(id), "completed count drifted on {id}");
        assert_eq!(p.active_leases, active.get(id).copied().unwrap_or(0));
    }
    assert_eq!(log.open.len(), active.values().sum::<u32>() as usize);
}

fn run_interleaving(seed: u64, ops: usize) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=12);
    let k = rng.random_range(1..=4);
    let n_sessions = rng.random_range(1..=8);
    let sessions: Vec<SessionId> = (0..n_sessions).map(|s| SessionId::new(format!("s{s}"))).collect();
    let mut w = Workload::new(instances(n), k, Duration::seconds(LEASE_SECS));
    let mut log = Log::default();
    let mut now = t0();

    for _ in 0..ops {
        let s = &sessions[rng.random_range(0..sessions.len())];
        match rng.random_range(0..100) {
            0..=39 => {
                // The sweep inside next_instance may end leases the log still holds.
                log.open.retain(|_, (_, _, exp)| *exp > now);
                match w.next_instance(s, now) {
                    Assignment::Leased(l) => {
                        assert_eq!(&l.session_id, s);
                        let key = (s.clone(), l.instance_id.clone());
                        assert!(
                            !log.submitted.contains_key(&key),
                            "re-offered an instance the session already answered"
                        );
                        log.open
                            .insert(l.lease_id.clone(), (s.clone(), l.instance_id, l.expires_at));
                    }
                    Assignment::Done => {
                        // Nothing eligible: every instance is full or already seen.
                        for id in instances(n) {
                            let seen = log.submitted.contains_key(&(s.clone(), id.clone()));
                            let held = log.open.values().filter(|(_, i, _)| i == &id).count() as u32;
                            assert!(seen || log.completed(&id) + held >= k);
                        }
                    }
                }
            }
            40..=74 => {
                let Some(lease) = w.active_lease_of(s).cloned() else {
                    continue;
                };
                let label = if rng.random_bool(0.2) {
                    StanceLabel::Skip
                } else {
                    StanceLabel::STANCES[rng.random_range(0..StanceLabel::STANCES.len())]
                };
                match w.submit(&lease.lease_id, label, now) {
                    Ok(done) => {
                        assert!(now < lease.expires_at);
                        log.open.remove(&done.lease_id);
                        let prev = log.submitted.insert((s.clone(), done.instance_id), label.is_skip());
                        assert!(prev.is_none(), "session annotated an instance twice");
                    }
                    Err(WorkloadError::StaleLease { .. }) => {
                        assert!(now >= lease.expires_at);
                        log.open.remove(&lease.lease_id);
                    }
                    Err(e) => panic!("unexpected {e}"),
                }
            }
            75..=79 => {
                let Some(lease) = w.active_lease_of(s).cloned() else {
                    continue;
                };
                w.release(&lease.lease_id).unwrap();
                log.open.remove(&lease.lease_id);
            }
            80..=84 => {
                // Replaying a finished or foreign lease never changes state.
                let Some(lease) = w.leases().find(|l| !l.is_active() || &l.session_id != s).cloned() else {
                    continue;
                };
                let before = w.progress();
                assert!(w.check_submit(&lease.lease_id, Some(s), now).is_err());
                assert_eq!(w.progress(), before);
            }
            85..=94 => now += Duration::seconds(rng.random_range(1..=LEASE_SECS / 2)),
            _ => {
                let expired = w.expire_leases(now);
                let before = log.open.len();
                log.open.retain(|_, (_, _, exp)| *exp > now);
                assert_eq!(expired, before - log.open.len());
            }
        }
        check_invariants(&w, &log, k);
    }
}

#[test]
fn randomized_interleavings_preserve_invariants() {
    let start = Instant::now();
    let mut total = 0;
    for seed in 0..40 {
        run_interleaving(seed, 500);
        total += 500;
    }
    assert!(total >= 10_000);
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn simulation_reaches_target_everywhere() {
    let k = 3;
    let mut w = Workload::new(instances(50), k, Duration::seconds(LEASE_SECS));
    let sessions: Vec<SessionId> = (0..5).map(|s| SessionId::new(format!("s{s}"))).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut now = t0();
    let mut done: HashSet<&SessionId> = HashSet::new();
    let mut pairs = HashSet::new();
    let mut steps = 0;
    while done.len() < sessions.len() {
        steps += 1;
        assert!(steps < 100_000, "simulation did not terminate");
        let s = &sessions[rng.random_range(0..sessions.len())];
        if done.contains(s) {
            continue;
        }
        match w.next_instance(s, now) {
            Assignment::Done => {
                done.insert(s);
            }
            Assignment::Leased(l) => {
                if rng.random_bool(0.1) {
                    // Abandon it; time passes until the lease lapses.
                    now += Duration::seconds(LEASE_SECS);
                    continue;
                }
                w.submit(&l.lease_id, StanceLabel::Supports, now).unwrap();
                assert!(pairs.insert((s.clone(), l.instance_id)));
            }
        }
        now += Duration::seconds(1);
    }
    for (id, p) in w.iter_progress() {
        assert_eq!(p.completed, k, "{id}");
        assert_eq!(p.active_leases, 0);
    }
    assert_eq!(pairs.len(), 150);
}

#[test]
fn abandoned_lease_is_reassigned_after_expiry() {
    let mut w = Workload::new(instances(1), 1, Duration::seconds(LEASE_SECS));
    let (a, b) = (SessionId::new("a"), SessionId::new("b"));
    let lease = w.next_instance(&a, t0()).lease().cloned().unwrap();
    assert_eq!(w.next_instance(&b, t0()), Assignment::Done);
    let later = t0() + Duration::seconds(LEASE_SECS);
    assert_eq!(w.expire_leases(later), 1);
    let again = w.next_instance(&b, later).lease().cloned().unwrap();
    assert_eq!(again.instance_id, lease.instance_id);
    assert!(matches!(
        w.submit(&lease.lease_id, StanceLabel::Opposes, later),
        Err(WorkloadError::StaleLease { .. })
    ));
    w.submit(&again.lease_id, StanceLabel::Opposes, later).unwrap();
}

#[test]
fn skipping_session_never_sees_instance_again() {
    let mut w = Workload::new(instances(2), 2, Duration::seconds(LEASE_SECS));
    let s = SessionId::new("s");
    let mut seen = BTreeMap::new();
    loop {
        match w.next_instance(&s, t0()) {
            Assignment::Done => break,
            Assignment::Leased(l) => {
                assert!(seen.insert(l.instance_id.clone(), ()).is_none());
                w.submit(&l.lease_id, StanceLabel::Skip, t0()).unwrap();
            }
        }
    }
    assert_eq!(seen.len(), 2);
    assert_eq!(w.progress().untouched, 2);
}
