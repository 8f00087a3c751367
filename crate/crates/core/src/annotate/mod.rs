//! Foundation-model-assisted prompt construction with pluggable clients.

mod client;
mod mock;
mod pipeline;

pub use client::{ClientError, FmClient, FmKind, FmRequest, FrameHint, HttpClient, RetryPolicy};
pub use mock::{MockCaptioner, MockParaphraser, SYNONYMS};
pub use pipeline::{
    caption, caption_request, draw_referred_box, paraphrase_and_localize, referred_viewpoint, run_pipeline,
    sample_and_filter, template_choice, AnnotationJob, AnnotationOutput, FailureRecord, ReviewItem, Selection,
    StageError, CAPTION_PROMPT, PARAPHRASE_PROMPTS, VIEWPOINT_PREFIXES,
};
