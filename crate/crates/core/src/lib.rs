//! Binary-file byteplots and the non-neural half of the anomaly-detection
//! pipeline: corpus manifests and splits, nibble extraction, Hilbert/row-major
//! image encoding with PNG archival, detection metrics, and a synthetic
//! corpus generator.

pub mod corpus;
pub mod extract;
pub mod imgcode;
pub mod metrics;
pub mod par;
pub mod synth;

pub use corpus::{Label, ManifestEntry, ManifestRecord, Split};
pub use extract::{bytes_to_nibbles, NibbleStream};
pub use imgcode::{ByteplotImage, Coloring, Encoding, Layout, ModelInput, Palette};
pub use metrics::ScoredSample;
