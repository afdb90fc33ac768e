//! Data layer: interaction logs, behavior sequences, the social graph and
//! sampled receptive fields.

pub mod events;
pub mod graph;
pub mod sample;
pub mod sequences;

pub use events::{load_events, Event, EventLog, IdMap, ItemId, UserId};
pub use graph::{EdgeAttr, SocialGraph};
pub use sample::{sample_subgraph, SampledSubgraph};
pub use sequences::{build_sequences, sequence_before, BehaviorSequence, TrainInstance};
