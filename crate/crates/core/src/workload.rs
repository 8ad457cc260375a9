//! Dynamic workload manager.
//!
//! Each arriving session is handed the next instance that still needs
//! annotation. Instances are reserved through time-bounded leases; a lease
//! that is not fulfilled before it expires frees its slot again so that
//! abandoned work is picked up by someone else.
//!
//! Capacity is counted pessimistically: `completed + active_leases` must stay
//! below the redundancy target for an instance to be offered. Skips are
//! recorded but do not count towards the target, and a session that skipped
//! an instance is never offered it again.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StanceLabel;
use crate::ids::{InstanceId, LeaseId, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaseState {
    Active,
    Fulfilled,
    Expired,
    Released,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub lease_id: LeaseId,
    pub instance_id: InstanceId,
    pub session_id: SessionId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub state: LeaseState,
}

impl Lease {
    pub fn is_active(&self) -> bool {
        self.state == LeaseState::Active
    }

    pub fn is_expired_at(&self, now: DateTime<Utc>) -> bool {
        self.expires_at <= now
    }
}

/// Per-instance assignment bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceProgress {
    /// Fulfilled non-skip annotations.
    pub completed: u32,
    pub active_leases: u32,
    pub annotated_by: HashSet<SessionId>,
    pub skipped_by: HashSet<SessionId>,
}

impl InstanceProgress {
    fn has_seen(&self, session: &SessionId) -> bool {
        self.annotated_by.contains(session) || self.skipped_by.contains(session)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assignment {
    Leased(Lease),
    Done,
}

impl Assignment {
    pub fn lease(&self) -> Option<&Lease> {
        match self {
            Assignment::Leased(l) => Some(l),
            Assignment::Done => None,
        }
    }
}

/// Outcome of planning a `next_instance` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextPlan {
    /// The session already holds this active lease.
    Existing(Lease),
    Issue(Lease),
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub fully_annotated: usize,
    pub partially_annotated: usize,
    pub untouched: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForgetReport {
    pub active_leases: usize,
    pub lease_history: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("unknown lease `{0}`")]
    UnknownLease(LeaseId),
    #[error("lease `{0}` belongs to another session")]
    NotOwner(LeaseId),
    #[error("lease `{lease}` is {state:?}, not active")]
    NotActive { lease: LeaseId, state: LeaseState },
    #[error("lease `{lease}` expired at {expires_at}")]
    StaleLease { lease: LeaseId, expires_at: DateTime<Utc> },
    #[error("unknown instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error("session `{session}` already annotated instance `{instance}`")]
    AlreadyAnnotated { session: SessionId, instance: InstanceId },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workload {
    redundancy_target: u32,
    lease_secs: i64,
    order: Vec<InstanceId>,
    progress: Vec<InstanceProgress>,
    leases: BTreeMap<LeaseId, Lease>,
    next_seq: u64,
    #[serde(skip)]
    index: HashMap<InstanceId, usize>,
    #[serde(skip)]
    active_by_session: HashMap<SessionId, LeaseId>,
}

impl Workload {
    /// `instances` fixes the stable tie-break order.
    pub fn new(
        instances: impl IntoIterator<Item = InstanceId>,
        redundancy_target: u32,
        lease_duration: Duration,
    ) -> Self {
        assert!(redundancy_target > 0, "redundancy target must be positive");
        let order: Vec<InstanceId> = instances.into_iter().collect();
        let mut w = Self {
            redundancy_target,
            lease_secs: lease_duration.num_seconds().max(1),
            progress: vec![InstanceProgress::default(); order.len()],
            order,
            leases: BTreeMap::new(),
            next_seq: 1,
            index: HashMap::new(),
            active_by_session: HashMap::new(),
        };
        w.rebuild_indexes();
        w
    }

    pub fn rebuild_indexes(&mut self) {
        self.index = self.order.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        self.active_by_session = self
            .leases
            .values()
            .filter(|l| l.is_active())
            .map(|l| (l.session_id.clone(), l.lease_id.clone()))
            .collect();
    }

    pub fn redundancy_target(&self) -> u32 {
        self.redundancy_target
    }

    pub fn lease_duration(&self) -> Duration {
        Duration::seconds(self.lease_secs)
    }

    /// Applies to leases issued from now on.
    pub fn set_lease_duration(&mut self, d: Duration) {
        self.lease_secs = d.num_seconds().max(1);
    }

    pub fn instance_count(&self) -> usize {
        self.order.len()
    }

    pub fn instance_progress(&self, id: &InstanceId) -> Option<&InstanceProgress> {
        self.index.get(id).map(|&i| &self.progress[i])
    }

    pub fn iter_progress(&self) -> impl Iterator<Item = (&InstanceId, &InstanceProgress)> {
        self.order.iter().zip(&self.progress)
    }

    pub fn lease(&self, id: &LeaseId) -> Option<&Lease> {
        self.leases.get(id)
    }

    pub fn leases(&self) -> impl Iterator<Item = &Lease> {
        self.leases.values()
    }

    pub fn active_lease_of(&self, session: &SessionId) -> Option<&Lease> {
        self.active_by_session.get(session).and_then(|id| self.leases.get(id))
    }

    /// Index of the instance this session should receive next, if any.
    ///
    /// Expired-but-unswept leases still count as active here; callers sweep first.
    pub fn pick(&self, session: &SessionId) -> Option<usize> {
        let target = self.redundancy_target;
        let mut best: Option<(u32, u32, usize)> = None;
        for (i, p) in self.progress.iter().enumerate() {
            let key = (p.completed, p.active_leases, i);
            // The seen check is the costly part; only pay it for a better candidate.
            if p.completed + p.active_leases < target && best.is_none_or(|b| key < b) && !p.has_seen(session) {
                best = Some(key);
            }
        }
        best.map(|(_, _, i)| i)
    }

    pub fn plan_next(&self, session: &SessionId, now: DateTime<Utc>) -> NextPlan {
        if let Some(lease) = self.active_lease_of(session) {
            return NextPlan::Existing(lease.clone());
        }
        match self.pick(session) {
            None => NextPlan::Done,
            Some(i) => NextPlan::Issue(Lease {
                lease_id: LeaseId::new(format!("lease-{:08}", self.next_seq)),
                instance_id: self.order[i].clone(),
                session_id: session.clone(),
                issued_at: now,
                expires_at: now + self.lease_duration(),
                state: LeaseState::Active,
            }),
        }
    }

    pub fn apply_issue(&mut self, lease: Lease) {
        let i = self.index[&lease.instance_id];
        self.progress[i].active_leases += 1;
        if let Some(seq) = lease
            .lease_id
            .as_str()
            .strip_prefix("lease-")
            .and_then(|s| s.parse::<u64>().ok())
        {
            self.next_seq = self.next_seq.max(seq + 1);
        }
        self.active_by_session
            .insert(lease.session_id.clone(), lease.lease_id.clone());
        self.leases.insert(lease.lease_id.clone(), lease);
    }

    /// Expires stale leases, then returns the session's lease or `Done`.
    pub fn next_instance(&mut self, session: &SessionId, now: DateTime<Utc>) -> Assignment {
        self.expire_leases(now);
        match self.plan_next(session, now) {
            NextPlan::Existing(l) => Assignment::Leased(l),
            NextPlan::Issue(l) => {
                self.apply_issue(l.clone());
                Assignment::Leased(l)
            }
            NextPlan::Done => Assignment::Done,
        }
    }

    /// Checks that `lease` may be fulfilled now by `session` (if given).
    pub fn check_submit(
        &self,
        lease_id: &LeaseId,
        session: Option<&SessionId>,
        now: DateTime<Utc>,
    ) -> Result<&Lease, WorkloadError> {
        let lease = self
            .leases
            .get(lease_id)
            .ok_or_else(|| WorkloadError::UnknownLease(lease_id.clone()))?;
        if session.is_some_and(|s| s != &lease.session_id) {
            return Err(WorkloadError::NotOwner(lease_id.clone()));
        }
        match lease.state {
            LeaseState::Active if lease.is_expired_at(now) => Err(WorkloadError::StaleLease {
                lease: lease_id.clone(),
                expires_at: lease.expires_at,
            }),
            LeaseState::Active => {
                let p = &self.progress[self.index[&lease.instance_id]];
                if p.has_seen(&lease.session_id) {
                    return Err(WorkloadError::AlreadyAnnotated {
                        session: lease.session_id.clone(),
                        instance: lease.instance_id.clone(),
                    });
                }
                Ok(lease)
            }
            // An expired lease is reported as stale so clients know to re-fetch.
            LeaseState::Expired => Err(WorkloadError::StaleLease {
                lease: lease_id.clone(),
                expires_at: lease.expires_at,
            }),
            state => Err(WorkloadError::NotActive {
                lease: lease_id.clone(),
                state,
            }),
        }
    }

    pub fn apply_fulfill(&mut self, lease_id: &LeaseId, label: StanceLabel) -> Lease {
        let lease = self.leases.get_mut(lease_id).expect("fulfilled lease exists");
        lease.state = LeaseState::Fulfilled;
        let lease = lease.clone();
        self.active_by_session.remove(&lease.session_id);
        let p = &mut self.progress[self.index[&lease.instance_id]];
        p.active_leases -= 1;
        if label.is_skip() {
            p.skipped_by.insert(lease.session_id.clone());
        } else {
            p.completed += 1;
            p.annotated_by.insert(lease.session_id.clone());
        }
        lease
    }

    /// Fulfills a lease. A stale lease is expired on the spot and rejected.
    pub fn submit(
        &mut self,
        lease_id: &LeaseId,
        label: StanceLabel,
        now: DateTime<Utc>,
    ) -> Result<Lease, WorkloadError> {
        match self.check_submit(lease_id, None, now) {
            Ok(_) => Ok(self.apply_fulfill(lease_id, label)),
            Err(e @ WorkloadError::StaleLease { .. }) => {
                self.apply_expire(std::slice::from_ref(lease_id));
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    pub fn plan_expire(&self, now: DateTime<Utc>) -> Vec<LeaseId> {
        // Each session holds at most one active lease, so this covers them all.
        let mut ids: Vec<LeaseId> = self
            .active_by_session
            .values()
            .filter_map(|id| self.leases.get(id))
            .filter(|l| l.is_active() && l.is_expired_at(now))
            .map(|l| l.lease_id.clone())
            .collect();
        ids.sort();
        ids
    }

    /// Marks the given active leases expired. Returns how many changed.
    pub fn apply_expire(&mut self, ids: &[LeaseId]) -> usize {
        ids.iter().filter(|id| self.end_lease(id, LeaseState::Expired)).count()
    }

    pub fn expire_leases(&mut self, now: DateTime<Utc>) -> usize {
        let ids = self.plan_expire(now);
        self.apply_expire(&ids)
    }

    /// Voluntarily gives an active lease back.
    pub fn release(&mut self, lease_id: &LeaseId) -> Result<(), WorkloadError> {
        let lease = self
            .leases
            .get(lease_id)
            .ok_or_else(|| WorkloadError::UnknownLease(lease_id.clone()))?;
        if !lease.is_active() {
            return Err(WorkloadError::NotActive {
                lease: lease_id.clone(),
                state: lease.state,
            });
        }
        self.end_lease(lease_id, LeaseState::Released);
        Ok(())
    }

    fn end_lease(&mut self, id: &LeaseId, state: LeaseState) -> bool {
        let Some(lease) = self.leases.get_mut(id) else {
            return false;
        };
        if !lease.is_active() {
            return false;
        }
        lease.state = state;
        let (instance, session) = (lease.instance_id.clone(), lease.session_id.clone());
        self.progress[self.index[&instance]].active_leases -= 1;
        if self.active_by_session.get(&session) == Some(id) {
            self.active_by_session.remove(&session);
        }
        true
    }

    pub fn progress(&self) -> Progress {
        let target = self.redundancy_target;
        self.progress.iter().fold(Progress::default(), |mut acc, p| {
            match p.completed {
                0 => acc.untouched += 1,
                c if c >= target => acc.fully_annotated += 1,
                _ => acc.partially_annotated += 1,
            }
            acc
        })
    }

    /// Removes every trace of a session: its leases and its contribution to
    /// the counters. `removed` lists the (instance, label) pairs of the
    /// session's erased records.
    pub fn forget_session(&mut self, session: &SessionId, removed: &[(InstanceId, StanceLabel)]) -> ForgetReport {
        let ids: Vec<LeaseId> = self
            .leases
            .values()
            .filter(|l| &l.session_id == session)
            .map(|l| l.lease_id.clone())
            .collect();
        let mut report = ForgetReport::default();
        for id in ids {
            if self.end_lease(&id, LeaseState::Released) {
                report.active_leases += 1;
            } else {
                report.lease_history += 1;
            }
            self.leases.remove(&id);
        }
        self.active_by_session.remove(session);
        for (instance, label) in removed {
            let Some(&i) = self.index.get(instance) else { continue };
            let p = &mut self.progress[i];
            if label.is_skip() {
                p.skipped_by.remove(session);
            } else if p.annotated_by.remove(session) {
                p.completed -= 1;
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_641_772_800 + secs, 0).unwrap()
    }

    fn ids(n: usize) -> Vec<InstanceId> {
        (0..n).map(|i| InstanceId::new(format!("i{i}"))).collect()
    }

    fn s(name: &str) -> SessionId {
        SessionId::new(name)
    }

    fn leased(a: Assignment) -> Lease {
        match a {
            Assignment::Leased(l) => l,
            Assignment::Done => panic!("expected a lease"),
        }
    }

    /// Drives `n` distinct sessions through one non-skip annotation each on
    /// the given instance so that it reaches `count` completions.
    fn force_completed(w: &mut Workload, instance: &InstanceId, count: u32, tag: &str) {
        let i = w.index[instance];
        for k in 0..count {
            let sess = s(&format!("{tag}-{k}"));
            let lease = Lease {
                lease_id: LeaseId::new(format!("lease-{:08}", w.next_seq)),
                instance_id: instance.clone(),
                session_id: sess,
                issued_at: t(0),
                expires_at: t(60),
                state: LeaseState::Active,
            };
            w.apply_issue(lease.clone());
            w.apply_fulfill(&lease.lease_id, StanceLabel::Opposes);
        }
        assert_eq!(w.progress[i].completed, count);
    }

    #[test]
    fn single_instance_capacity_is_reserved_by_lease() {
        let mut w = Workload::new(ids(1), 1, Duration::minutes(30));
        let l = leased(w.next_instance(&s("a"), t(0)));
        assert_eq!(l.instance_id.as_str(), "i0");
        assert_eq!(l.expires_at, l.issued_at + Duration::minutes(30));
        assert_eq!(w.next_instance(&s("b"), t(1)), Assignment::Done);
    }

    /// Oracle: among all eligible instances pick the lexicographically
    /// smallest (completed, active, position) triple, trying every ordering
    /// of the completed counts (2, 0, 1).
    #[test]
    fn priority_prefers_fewest_completed() {
        let perms = [[2, 0, 1], [2, 1, 0], [0, 2, 1], [0, 1, 2], [1, 0, 2], [1, 2, 0]];
        for counts in perms {
            let instances = ids(3);
            let mut w = Workload::new(instances.clone(), 3, Duration::minutes(30));
            for (inst, c) in instances.iter().zip(counts) {
                force_completed(&mut w, inst, c, inst.as_str());
            }
            let expected = (0..3).min_by_key(|&i| (counts[i], 0, i)).unwrap();
            let l = leased(w.next_instance(&s("fresh"), t(1)));
            assert_eq!(l.instance_id, instances[expected], "counts {counts:?}");
            assert_eq!(counts[expected], 0);
        }
    }

    #[test]
    fn ties_broken_by_active_leases_then_order() {
        let mut w = Workload::new(ids(3), 3, Duration::minutes(30));
        let a = leased(w.next_instance(&s("a"), t(0)));
        let b = leased(w.next_instance(&s("b"), t(0)));
        let c = leased(w.next_instance(&s("c"), t(0)));
        assert_eq!(
            [a.instance_id.as_str(), b.instance_id.as_str(), c.instance_id.as_str()],
            ["i0", "i1", "i2"]
        );
        let d = leased(w.next_instance(&s("d"), t(0)));
        assert_eq!(d.instance_id.as_str(), "i0");
    }

    #[test]
    fn next_instance_is_idempotent_while_lease_active() {
        let mut w = Workload::new(ids(3), 2, Duration::minutes(30));
        let first = leased(w.next_instance(&s("a"), t(0)));
        let again = leased(w.next_instance(&s("a"), t(5)));
        assert_eq!(first, again);
        assert_eq!(w.instance_progress(&first.instance_id).unwrap().active_leases, 1);
    }

    #[test]
    fn skipper_never_receives_instance_again() {
        let mut w = Workload::new(ids(3), 2, Duration::minutes(30));
        let l = leased(w.next_instance(&s("a"), t(0)));
        let skipped = l.instance_id.clone();
        w.submit(&l.lease_id, StanceLabel::Skip, t(1)).unwrap();
        assert_eq!(w.instance_progress(&skipped).unwrap().completed, 0);
        let mut seen = Vec::new();
        while let Assignment::Leased(l) = w.next_instance(&s("a"), t(2)) {
            assert_ne!(l.instance_id, skipped);
            seen.push(l.instance_id.clone());
            w.submit(&l.lease_id, StanceLabel::Supports, t(3)).unwrap();
        }
        assert_eq!(seen.len(), 2);
        // Still assignable to someone else.
        let other = leased(w.next_instance(&s("b"), t(4)));
        assert_eq!(other.instance_id, skipped);
    }

    #[test]
    fn submit_counts_non_skip() {
        let mut w = Workload::new(ids(1), 2, Duration::minutes(30));
        let l = leased(w.next_instance(&s("a"), t(0)));
        let done = w.submit(&l.lease_id, StanceLabel::Opposes, t(1)).unwrap();
        assert_eq!(done.state, LeaseState::Fulfilled);
        assert_eq!(w.instance_progress(&l.instance_id).unwrap().completed, 1);
        assert!(matches!(
            w.submit(&l.lease_id, StanceLabel::Opposes, t(2)),
            Err(WorkloadError::NotActive {
                state: LeaseState::Fulfilled,
                ..
            })
        ));
    }

    #[test]
    fn submit_one_second_after_expiry_is_stale() {
        let mut w = Workload::new(ids(1), 1, Duration::seconds(60));
        let l = leased(w.next_instance(&s("a"), t(0)));
        let err = w.submit(&l.lease_id, StanceLabel::Supports, t(61)).unwrap_err();
        assert!(matches!(err, WorkloadError::StaleLease { .. }));
        assert_eq!(w.lease(&l.lease_id).unwrap().state, LeaseState::Expired);
        assert_eq!(w.instance_progress(&l.instance_id).unwrap().completed, 0);
        assert!(matches!(
            w.submit(&l.lease_id, StanceLabel::Supports, t(62)),
            Err(WorkloadError::StaleLease { .. })
        ));
    }

    #[test]
    fn expire_frees_capacity_for_another_session() {
        let mut w = Workload::new(ids(1), 1, Duration::seconds(60));
        let l = leased(w.next_instance(&s("a"), t(0)));
        assert_eq!(w.next_instance(&s("b"), t(10)), Assignment::Done);
        assert_eq!(w.expire_leases(t(60)), 1);
        let again = leased(w.next_instance(&s("b"), t(61)));
        assert_eq!(again.instance_id, l.instance_id);
    }

    #[test]
    fn expire_with_no_leases_and_partial_expiry() {
        let mut w = Workload::new(ids(2), 1, Duration::seconds(60));
        assert_eq!(w.expire_leases(t(0)), 0);
        let a = leased(w.next_instance(&s("a"), t(0)));
        let b = leased(w.next_instance(&s("b"), t(30)));
        assert_eq!(w.expire_leases(t(70)), 1);
        assert_eq!(w.lease(&a.lease_id).unwrap().state, LeaseState::Expired);
        assert_eq!(w.lease(&b.lease_id).unwrap().state, LeaseState::Active);
    }

    #[test]
    fn release_returns_capacity() {
        let mut w = Workload::new(ids(1), 1, Duration::minutes(30));
        let l = leased(w.next_instance(&s("a"), t(0)));
        w.release(&l.lease_id).unwrap();
        assert!(w.release(&l.lease_id).is_err());
        assert!(w.next_instance(&s("b"), t(1)).lease().is_some());
    }

    #[test]
    fn progress_partition() {
        let mut w = Workload::new(ids(3), 2, Duration::minutes(30));
        assert_eq!(
            w.progress(),
            Progress {
                fully_annotated: 0,
                partially_annotated: 0,
                untouched: 3
            }
        );
        let instances = ids(3);
        force_completed(&mut w, &instances[0], 2, "x");
        force_completed(&mut w, &instances[1], 1, "y");
        assert_eq!(
            w.progress(),
            Progress {
                fully_annotated: 1,
                partially_annotated: 1,
                untouched: 1
            }
        );
    }

    #[test]
    fn forget_session_rolls_back_counts() {
        let mut w = Workload::new(ids(2), 2, Duration::minutes(30));
        let a = s("a");
        let l1 = leased(w.next_instance(&a, t(0)));
        w.submit(&l1.lease_id, StanceLabel::Supports, t(1)).unwrap();
        let l2 = leased(w.next_instance(&a, t(2)));
        let report = w.forget_session(&a, &[(l1.instance_id.clone(), StanceLabel::Supports)]);
        assert_eq!(
            report,
            ForgetReport {
                active_leases: 1,
                lease_history: 1
            }
        );
        assert!(w.leases().all(|l| l.session_id != a));
        for id in [&l1.instance_id, &l2.instance_id] {
            let p = w.instance_progress(id).unwrap();
            assert_eq!((p.completed, p.active_leases), (0, 0));
        }
    }

    #[test]
    fn serde_round_trip_keeps_behaviour() {
        let mut w = Workload::new(ids(3), 2, Duration::minutes(30));
        let l = leased(w.next_instance(&s("a"), t(0)));
        let mut back: Workload = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        back.rebuild_indexes();
        assert_eq!(back.active_lease_of(&s("a")), Some(&l));
        let next = leased(back.next_instance(&s("b"), t(1)));
        assert_ne!(next.lease_id, l.lease_id);
    }
}
