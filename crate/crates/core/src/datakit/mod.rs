//! Dataset schema, preprocessing, synthetic corpora and statistics.

mod preprocess;
mod schema;
mod stats;
pub mod synth;

pub use preprocess::{
    label_attribute, preprocess, preprocess_with_order, Diagnostic, FilterKind, Outcome, PreprocessConfig,
    PreprocessReport, RawRecord, RawSceneObject, DEFAULT_FILTER_ORDER,
};
pub use schema::{
    read_jsonl, read_samples, same_box, write_jsonl, write_samples, AttributeCounts, GroundingSample, SceneObject,
    SplitManifest, NUM_VIEWS,
};
pub use stats::{corpus_stats, CorpusStats, DistanceSummary};
pub use synth::{synth_corpus, write_corpus, SynthConfig, SynthCorpus, SynthScene};

pub(crate) use preprocess::resolve;
