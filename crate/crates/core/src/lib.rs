//! Core of the stance-annotation platform: dataset model, campaign
//! onboarding, workload leasing, the annotation store, analytics and
//! persistence.
//!
//! [`platform::Platform`] ties the pieces together behind one facade; the
//! HTTP service and the command line both drive it.

pub mod analytics;
pub mod annotation_store;
pub mod clock;
pub mod corpus;
pub mod fixture;
pub mod ids;
pub mod onboarding;
pub mod platform;
pub mod report;
pub mod storage;
pub mod workload;

pub use analytics::{Fraction, Tagset};
pub use annotation_store::{AnnotationRecord, AnnotationStore, ExportBundle, RecordFilter};
pub use clock::{Clock, ManualClock, SystemClock};
pub use corpus::{CoarseLabel, Dataset, StanceLabel};
pub use ids::*;
pub use onboarding::{CampaignConfig, Channel};
pub use platform::{Platform, PlatformError, PlatformOptions};
