//! Stance-detection dataset: claims, perspective clusters, annotation
//! instances and the label algebra.
//!
//! A dataset file is a single JSON document with three top-level arrays:
//!
//! ```json
//! {
//!   "claims":    [{"id": "c1", "text": "..."}],
//!   "clusters":  [{"id": "k1", "claim_id": "c1", "perspective_ids": ["p1", "p2"]}],
//!   "instances": [{"id": "i1", "claim_id": "c1", "perspective_id": "p1",
//!                  "perspective_text": "...", "cluster_id": "k1", "gold_fine": "supports"}]
//! }
//! ```
//!
//! Loading validates referential integrity; a [`Dataset`] is immutable
//! afterwards and can be shared freely between readers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{ClaimId, ClusterId, InstanceId, PerspectiveId};

/// The five stance labels plus the skip escape option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StanceLabel {
    Supports,
    MildlySupports,
    MildlyOpposes,
    Opposes,
    NotAValidPerspective,
    Skip,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 6] = [
        StanceLabel::Supports,
        StanceLabel::MildlySupports,
        StanceLabel::MildlyOpposes,
        StanceLabel::Opposes,
        StanceLabel::NotAValidPerspective,
        StanceLabel::Skip,
    ];

    /// Every label that can serve as a gold label.
    pub const STANCES: [StanceLabel; 5] = [
        StanceLabel::Supports,
        StanceLabel::MildlySupports,
        StanceLabel::MildlyOpposes,
        StanceLabel::Opposes,
        StanceLabel::NotAValidPerspective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Supports => "supports",
            StanceLabel::MildlySupports => "mildly-supports",
            StanceLabel::MildlyOpposes => "mildly-opposes",
            StanceLabel::Opposes => "opposes",
            StanceLabel::NotAValidPerspective => "not-a-valid-perspective",
            StanceLabel::Skip => "skip",
        }
    }

    /// Short table notation: `++`, `+`, `-`, `--`, `I`, `S`.
    pub fn symbol(self) -> &'static str {
        match self {
            StanceLabel::Supports => "++",
            StanceLabel::MildlySupports => "+",
            StanceLabel::MildlyOpposes => "-",
            StanceLabel::Opposes => "--",
            StanceLabel::NotAValidPerspective => "I",
            StanceLabel::Skip => "S",
        }
    }

    pub fn is_skip(self) -> bool {
        self == StanceLabel::Skip
    }

    pub fn coarse(self) -> Option<CoarseLabel> {
        match self {
            StanceLabel::Supports | StanceLabel::MildlySupports => Some(CoarseLabel::Support),
            StanceLabel::Opposes | StanceLabel::MildlyOpposes => Some(CoarseLabel::Oppose),
            StanceLabel::NotAValidPerspective => Some(CoarseLabel::NotAValidPerspective),
            StanceLabel::Skip => None,
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StanceLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown stance label `{0}`")]
pub struct UnknownLabel(pub String);

/// Three-way projection of the stance labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseLabel {
    Support,
    Oppose,
    NotAValidPerspective,
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; 3] = [
        CoarseLabel::Support,
        CoarseLabel::Oppose,
        CoarseLabel::NotAValidPerspective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseLabel::Support => "support",
            CoarseLabel::Oppose => "oppose",
            CoarseLabel::NotAValidPerspective => "not-a-valid-perspective",
        }
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Projects a stance label onto the coarse tagset.
pub fn map_to_coarse(label: StanceLabel) -> Result<CoarseLabel, CorpusError> {
    label.coarse().ok_or(CorpusError::SkipHasNoCoarse)
}

/// A stance label that is guaranteed not to be `skip`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StanceLabel", into = "StanceLabel")]
pub struct GoldLabel(StanceLabel);

impl GoldLabel {
    pub fn new(label: StanceLabel) -> Result<Self, CorpusError> {
        if label.is_skip() {
            Err(CorpusError::SkipAsGold)
        } else {
            Ok(Self(label))
        }
    }

    pub fn label(self) -> StanceLabel {
        self.0
    }

    pub fn coarse(self) -> CoarseLabel {
        self.0.coarse().expect("gold labels are never skip")
    }
}

impl TryFrom<StanceLabel> for GoldLabel {
    type Error = CorpusError;

    fn try_from(label: StanceLabel) -> Result<Self, Self::Error> {
        GoldLabel::new(label)
    }
}

impl From<GoldLabel> for StanceLabel {
    fn from(g: GoldLabel) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: ClaimId,
    pub text: String,
}

/// A claim together with one perspective and its paraphrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerspectiveCluster {
    pub id: ClusterId,
    pub claim_id: ClaimId,
    pub perspective_ids: Vec<PerspectiveId>,
}

/// One claim-perspective pair, the unit of annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub claim_id: ClaimId,
    pub perspective_id: PerspectiveId,
    pub perspective_text: String,
    pub cluster_id: ClusterId,
    pub gold_fine: GoldLabel,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dataset integrity error: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("skip has no coarse projection")]
    SkipHasNoCoarse,
    #[error("skip cannot be a gold label")]
    SkipAsGold,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("duplicate claim id `{0}`")]
    DuplicateClaim(ClaimId),
    #[error("claim `{0}` has empty text")]
    EmptyClaimText(ClaimId),
    #[error("duplicate cluster id `{0}`")]
    DuplicateCluster(ClusterId),
    #[error("cluster `{cluster}` references unknown claim `{claim}`")]
    ClusterUnknownClaim { cluster: ClusterId, claim: ClaimId },
    #[error("cluster `{0}` has no member perspectives")]
    EmptyCluster(ClusterId),
    #[error("perspective `{perspective}` belongs to more than one cluster of claim `{claim}`")]
    PerspectiveInTwoClusters { claim: ClaimId, perspective: PerspectiveId },
    #[error("duplicate instance id `{0}`")]
    DuplicateInstanceId(InstanceId),
    #[error("instance `{instance}` duplicates claim `{claim}` / perspective `{perspective}`")]
    DuplicateInstance {
        instance: InstanceId,
        claim: ClaimId,
        perspective: PerspectiveId,
    },
    #[error("instance `{instance}` references unknown claim `{claim}`")]
    InstanceUnknownClaim { instance: InstanceId, claim: ClaimId },
    #[error("instance `{instance}` references unknown cluster `{cluster}`")]
    InstanceUnknownCluster { instance: InstanceId, cluster: ClusterId },
    #[error("instance `{instance}`: cluster `{cluster}` belongs to a different claim")]
    ClusterClaimMismatch { instance: InstanceId, cluster: ClusterId },
    #[error("instance `{instance}`: perspective `{perspective}` is not a member of cluster `{cluster}`")]
    PerspectiveNotInCluster {
        instance: InstanceId,
        perspective: PerspectiveId,
        cluster: ClusterId,
    },
    #[error("instance `{0}` has empty perspective text")]
    EmptyPerspectiveText(InstanceId),
}

#[derive(Deserialize)]
struct DatasetFile {
    #[serde(default)]
    claims: Vec<Claim>,
    #[serde(default)]
    clusters: Vec<PerspectiveCluster>,
    #[serde(default)]
    instances: Vec<Instance>,
}

#[derive(Serialize)]
struct DatasetFileRef<'a> {
    claims: &'a [Claim],
    clusters: &'a [PerspectiveCluster],
    instances: &'a [Instance],
}

/// Coverage denominators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denominators {
    pub claims: usize,
    pub clusters: usize,
    pub instances: usize,
}

/// A validated, indexed dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    claims: Vec<Claim>,
    clusters: Vec<PerspectiveCluster>,
    instances: Vec<Instance>,
    claim_index: HashMap<ClaimId, usize>,
    cluster_index: HashMap<ClusterId, usize>,
    instance_index: HashMap<InstanceId, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.claims == other.claims && self.clusters == other.clusters && self.instances == other.instances
    }
}

impl Eq for Dataset {}

impl Default for Dataset {
    fn default() -> Self {
        Self::empty()
    }
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            claims: Vec::new(),
            clusters: Vec::new(),
            instances: Vec::new(),
            claim_index: HashMap::new(),
            cluster_index: HashMap::new(),
            instance_index: HashMap::new(),
        }
    }

    pub fn from_parts(
        claims: Vec<Claim>,
        clusters: Vec<PerspectiveCluster>,
        instances: Vec<Instance>,
    ) -> Result<Self, IntegrityError> {
        let mut claim_index = HashMap::with_capacity(claims.len());
        for (i, claim) in claims.iter().enumerate() {
            if claim.text.trim().is_empty() {
                return Err(IntegrityError::EmptyClaimText(claim.id.clone()));
            }
            if claim_index.insert(claim.id.clone(), i).is_some() {
                return Err(IntegrityError::DuplicateClaim(claim.id.clone()));
            }
        }

        let mut cluster_index = HashMap::with_capacity(clusters.len());
        let mut member_of: HashMap<(&ClaimId, &PerspectiveId), &ClusterId> = HashMap::new();
        for (i, cluster) in clusters.iter().enumerate() {
            if cluster_index.insert(cluster.id.clone(), i).is_some() {
                return Err(IntegrityError::DuplicateCluster(cluster.id.clone()));
            }
            if !claim_index.contains_key(&cluster.claim_id) {
                return Err(IntegrityError::ClusterUnknownClaim {
                    cluster: cluster.id.clone(),
                    claim: cluster.claim_id.clone(),
                });
            }
            if cluster.perspective_ids.is_empty() {
                return Err(IntegrityError::EmptyCluster(cluster.id.clone()));
            }
            for p in &cluster.perspective_ids {
                if let Some(prev) = member_of.insert((&cluster.claim_id, p), &cluster.id) {
                    // Listing the same perspective twice inside one cluster is harmless.
                    if prev != &cluster.id {
                        return Err(IntegrityError::PerspectiveInTwoClusters {
                            claim: cluster.claim_id.clone(),
                            perspective: p.clone(),
                        });
                    }
                }
            }
        }

        let mut instance_index = HashMap::with_capacity(instances.len());
        let mut pairs: HashSet<(&ClaimId, &PerspectiveId)> = HashSet::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if instance_index.insert(inst.id.clone(), i).is_some() {
                return Err(IntegrityError::DuplicateInstanceId(inst.id.clone()));
            }
            if !claim_index.contains_key(&inst.claim_id) {
                return Err(IntegrityError::InstanceUnknownClaim {
                    instance: inst.id.clone(),
                    claim: inst.claim_id.clone(),
                });
            }
            let Some(&ci) = cluster_index.get(&inst.cluster_id) else {
                return Err(IntegrityError::InstanceUnknownCluster {
                    instance: inst.id.clone(),
                    cluster: inst.cluster_id.clone(),
                });
            };
            if clusters[ci].claim_id != inst.claim_id {
                return Err(IntegrityError::ClusterClaimMismatch {
                    instance: inst.id.clone(),
                    cluster: inst.cluster_id.clone(),
                });
            }
            if member_of.get(&(&inst.claim_id, &inst.perspective_id)) != Some(&&inst.cluster_id) {
                return Err(IntegrityError::PerspectiveNotInCluster {
                    instance: inst.id.clone(),
                    perspective: inst.perspective_id.clone(),
                    cluster: inst.cluster_id.clone(),
                });
            }
            if inst.perspective_text.trim().is_empty() {
                return Err(IntegrityError::EmptyPerspectiveText(inst.id.clone()));
            }
            if !pairs.insert((&inst.claim_id, &inst.perspective_id)) {
                return Err(IntegrityError::DuplicateInstance {
                    instance: inst.id.clone(),
                    claim: inst.claim_id.clone(),
                    perspective: inst.perspective_id.clone(),
                });
            }
        }
        drop(member_of);
        drop(pairs);

        Ok(Self {
            claims,
            clusters,
            instances,
            claim_index,
            cluster_index,
            instance_index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CorpusError> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(Self::from_parts(file.claims, file.clusters, file.instances)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.as_file()).expect("dataset serialization is infallible")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.as_file()).expect("dataset serialization is infallible")
    }

    fn as_file(&self) -> DatasetFileRef<'_> {
        DatasetFileRef {
            claims: &self.claims,
            clusters: &self.clusters,
            instances: &self.instances,
        }
    }

    /// SHA-256 over the compact serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_string().as_bytes()))
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    pub fn clusters(&self) -> &[PerspectiveCluster] {
        &self.clusters
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn claim(&self, id: &ClaimId) -> Option<&Claim> {
        self.claim_index.get(id).map(|&i| &self.claims[i])
    }

    pub fn cluster(&self, id: &ClusterId) -> Option<&PerspectiveCluster> {
        self.cluster_index.get(id).map(|&i| &self.clusters[i])
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&Instance> {
        self.instance_index.get(id).map(|&i| &self.instances[i])
    }

    /// Number of distinct perspective ids referenced by instances.
    pub fn n_perspectives(&self) -> usize {
        self.instances
            .iter()
            .map(|i| &i.perspective_id)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn denominators(&self) -> Denominators {
        Denominators {
            claims: self.claims.len(),
            clusters: self.clusters.len(),
            instances: self.instances.len(),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    Dataset::from_json_str(&text)
}

pub fn dataset_denominators(d: &Dataset) -> Denominators {
    d.denominators()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIXTURE: &str = r#"{
      "claims": [
        {"id": "c1", "text": "Animals should have rights."},
        {"id": "c2", "text": "School uniforms should be mandatory."}
      ],
      "clusters": [
        {"id": "k1", "claim_id": "c1", "perspective_ids": ["p1", "p2"]},
        {"id": "k2", "claim_id": "c1", "perspective_ids": ["p3"]},
        {"id": "k3", "claim_id": "c2", "perspective_ids": ["p4"]}
      ],
      "instances": [
        {"id": "i1", "claim_id": "c1", "perspective_id": "p1", "perspective_text": "Animals feel pain.", "cluster_id": "k1", "gold_fine": "supports"},
        {"id": "i2", "claim_id": "c1", "perspective_id": "p2", "perspective_text": "Animals suffer.", "cluster_id": "k1", "gold_fine": "mildly-supports"},
        {"id": "i3", "claim_id": "c1", "perspective_id": "p3", "perspective_text": "Humans come first.", "cluster_id": "k2", "gold_fine": "opposes"},
        {"id": "i4", "claim_id": "c2", "perspective_id": "p4", "perspective_text": "Uniforms reduce bullying.", "cluster_id": "k3", "gold_fine": "not-a-valid-perspective"}
      ]
    }"#;

    #[test]
    fn coarse_projection_of_each_label() {
        use CoarseLabel::{Oppose, Support};
        use StanceLabel::*;
        let table = [
            (Supports, Support),
            (MildlySupports, Support),
            (MildlyOpposes, Oppose),
            (Opposes, Oppose),
            (StanceLabel::NotAValidPerspective, CoarseLabel::NotAValidPerspective),
        ];
        for (fine, coarse) in table {
            assert_eq!(map_to_coarse(fine).unwrap(), coarse);
        }
        let image: HashSet<_> = StanceLabel::STANCES
            .iter()
            .map(|l| map_to_coarse(*l).unwrap())
            .collect();
        assert_eq!(image.len(), CoarseLabel::ALL.len());
    }

    #[test]
    fn skip_has_no_coarse_projection() {
        let err = map_to_coarse(StanceLabel::Skip).unwrap_err();
        assert_eq!(err.to_string(), "skip has no coarse projection");
    }

    #[test]
    fn label_spellings_round_trip() {
        for l in StanceLabel::ALL {
            assert_eq!(l.as_str().parse::<StanceLabel>().unwrap(), l);
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(json, format!("\"{}\"", l.as_str()));
        }
        assert!("Supports".parse::<StanceLabel>().is_err());
    }

    #[test]
    fn hand_fixture_counts() {
        let d = Dataset::from_json_str(FIXTURE).unwrap();
        assert_eq!(
            dataset_denominators(&d),
            Denominators {
                claims: 2,
                clusters: 3,
                instances: 4
            }
        );
        assert_eq!(d.n_perspectives(), 4);
        assert_eq!(
            d.instance(&"i3".into()).unwrap().gold_fine.coarse(),
            CoarseLabel::Oppose
        );
    }

    #[test]
    fn empty_dataset() {
        let d = Dataset::from_json_str(r#"{"claims": [], "instances": []}"#).unwrap();
        assert_eq!(
            d.denominators(),
            Denominators {
                claims: 0,
                clusters: 0,
                instances: 0
            }
        );
    }

    #[test]
    fn round_trip_is_identical() {
        let d = Dataset::from_json_str(FIXTURE).unwrap();
        let again = Dataset::from_json_str(&d.to_json_pretty()).unwrap();
        assert_eq!(d, again);
        assert_eq!(d.digest(), again.digest());
    }

    #[test]
    fn parse_error_names_line() {
        let bad = "{\n  \"claims\": [\n    {\"id\": \"c1\", \"text\": }\n  ]\n}";
        match Dataset::from_json_str(bad).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn skip_gold_is_rejected() {
        let bad = FIXTURE.replacen("\"gold_fine\": \"supports\"", "\"gold_fine\": \"skip\"", 1);
        assert!(matches!(Dataset::from_json_str(&bad), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn dangling_cluster_is_rejected() {
        let bad = FIXTURE.replacen("\"cluster_id\": \"k3\"", "\"cluster_id\": \"k9\"", 1);
        match Dataset::from_json_str(&bad).unwrap_err() {
            CorpusError::Integrity(IntegrityError::InstanceUnknownCluster { cluster, .. }) => {
                assert_eq!(cluster.as_str(), "k9")
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn dangling_claim_is_rejected() {
        let bad = FIXTURE.replacen(
            "\"claim_id\": \"c2\", \"perspective_ids\"",
            "\"claim_id\": \"c7\", \"perspective_ids\"",
            1,
        );
        assert!(matches!(
            Dataset::from_json_str(&bad),
            Err(CorpusError::Integrity(IntegrityError::ClusterUnknownClaim { .. }))
        ));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let bad = FIXTURE.replacen("\"perspective_id\": \"p2\"", "\"perspective_id\": \"p1\"", 1);
        assert!(matches!(
            Dataset::from_json_str(&bad),
            Err(CorpusError::Integrity(IntegrityError::DuplicateInstance { .. }))
        ));
    }

    #[test]
    fn unclustered_perspective_is_rejected() {
        let bad = FIXTURE.replacen("\"perspective_ids\": [\"p4\"]", "\"perspective_ids\": [\"p5\"]", 1);
        assert!(matches!(
            Dataset::from_json_str(&bad),
            Err(CorpusError::Integrity(IntegrityError::PerspectiveNotInCluster { .. }))
        ));
    }

    #[test]
    fn perspective_in_two_clusters_of_one_claim() {
        let bad = FIXTURE.replacen(
            "\"perspective_ids\": [\"p3\"]",
            "\"perspective_ids\": [\"p3\", \"p1\"]",
            1,
        );
        assert!(matches!(
            Dataset::from_json_str(&bad),
            Err(CorpusError::Integrity(IntegrityError::PerspectiveInTwoClusters { .. }))
        ));
    }
}
