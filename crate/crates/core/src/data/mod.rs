//! Corpus ingestion, label inventories, auxiliary targets, batching, span
//! scoring and the synthetic grammar.

pub mod auxiliary;
pub mod batch;
pub mod corpus;
pub mod labels;
pub mod spans;
pub mod synth;
pub mod vocab;

pub use auxiliary::generate_aux_targets;
pub use batch::{encode_batch, encode_tokens, Batch, Targets, DEFAULT_MAX_LEN};
pub use corpus::{load_corpus, validate_bio, write_corpus, Tag, Utterance};
pub use labels::{Inventory, LabelMaps, OUTSIDE};
pub use spans::{extract_spans, span_f1, spans_to_bio, Span, SpanScores};
pub use synth::{generate_modification_pairs, generate_synthetic_corpus, Grammar, ModificationKind, ModificationPair};
pub use vocab::Vocab;
