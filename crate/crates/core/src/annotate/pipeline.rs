//! Three-step prompt construction: sample and keep fully visible referents,
//! caption them, then paraphrase and prefix the viewpoint.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use base64::Engine as _;
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::datakit::{resolve, GroundingSample};
use crate::error::{Error, Result};
use crate::labels::Viewpoint;
use crate::raster;

use super::client::{ClientError, FmClient, FrameHint, FmRequest};

/// Captioner instruction, sent verbatim.
pub const CAPTION_PROMPT: &str = "Attention: only need to focus on the object in the bounding box. Please use one or two sentences to describe the object in the red bounding box with greater detail, including its precise location, type, and color characteristics.";

/// Paraphraser instructions, cycled by seed.
pub const PARAPHRASE_PROMPTS: [&str; 3] = [
    "Please help me paraphrase this sentence while keeping its meaning.",
    "Please help me reword a sentence with richer vocabulary but keep its meaning.",
    "Help me reword a sentence, you should describe it in a different way.",
];

/// Sentences that announce the viewpoint sector ahead of the description.
pub const VIEWPOINT_PREFIXES: [&str; 2] = ["Be aware of the", "Look out for the"];

const RED: [u8; 3] = [255, 0, 0];
/// Box edges as corner index pairs (bottom face, top face, verticals).
const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationJob {
    /// Fraction of frames to sample, in `(0, 1]`.
    pub sampling_rate: f64,
    pub seed: u64,
    pub caption_prompt: String,
    pub paraphrase_templates: Vec<String>,
    /// Base directory of the frames' image refs.
    pub image_root: Option<PathBuf>,
    /// Maximum requests in flight.
    pub concurrency: usize,
}

impl Default for AnnotationJob {
    fn default() -> Self {
        Self {
            sampling_rate: 0.2,
            seed: 0,
            caption_prompt: CAPTION_PROMPT.to_string(),
            paraphrase_templates: PARAPHRASE_PROMPTS.iter().map(|s| s.to_string()).collect(),
            image_root: None,
            concurrency: 4,
        }
    }
}

impl AnnotationJob {
    fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must lie in (0, 1], got {}",
                self.sampling_rate
            )));
        }
        if self.paraphrase_templates.is_empty() || self.caption_prompt.is_empty() {
            return Err(Error::InvalidArgument("prompt templates must be nonempty".into()));
        }
        Ok(())
    }
}

/// Result of step 1, as indices into the input frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub sampled: Vec<usize>,
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
}

/// Sector camera of a frame's referred object.
pub fn referred_viewpoint(frame: &GroundingSample) -> Viewpoint {
    Viewpoint::from_azimuth(frame.referred.azimuth())
}

/// Seeded uniform sample of `ceil(rate * N)` frames, then removal of frames
/// whose referred box is clipped by the border of its sector image.
pub fn sample_and_filter(frames: &[GroundingSample], rate: f64, seed: u64, rig: &CameraRig) -> Result<Selection> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("sampling rate must lie in (0, 1], got {rate}")));
    }
    let n = frames.len();
    let k = ((rate * n as f64).ceil() as usize).min(n);
    let mut sampled = if k == n {
        (0..n).collect::<Vec<_>>()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, n, k).into_vec()
    };
    sampled.sort_unstable();
    let (kept, discarded) = sampled
        .iter()
        .partition(|&&i| rig.camera(referred_viewpoint(&frames[i])).sees_completely(&frames[i].referred));
    Ok(Selection { sampled, kept, discarded })
}

fn hint(frame: &GroundingSample) -> FrameHint {
    FrameHint {
        category: frame.category,
        color: frame.referred_object().and_then(|o| o.color),
        viewpoint: referred_viewpoint(frame),
    }
}

/// Draws the referred box in red onto its sector image.
pub fn draw_referred_box(img: &mut RgbImage, frame: &GroundingSample, rig: &CameraRig) {
    let cam = rig.camera(referred_viewpoint(frame));
    if let Some(px) = cam.project_box(&frame.referred) {
        for (a, b) in BOX_EDGES {
            raster::draw_line(img, [px[a].u, px[a].v], [px[b].u, px[b].v], RED);
        }
    }
}

fn encode_png(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

/// Builds the captioner request: verbatim instruction plus the sector image
/// with the referred box drawn in red.
pub fn caption_request(frame: &GroundingSample, image: Option<&RgbImage>, rig: &CameraRig, prompt: &str) -> Result<FmRequest> {
    let image = match image {
        Some(img) => {
            let mut annotated = img.clone();
            draw_referred_box(&mut annotated, frame, rig);
            Some(encode_png(&annotated)?)
        }
        None => None,
    };
    Ok(FmRequest {
        prompt: prompt.to_string(),
        image,
        hint: Some(hint(frame)),
    })
}

/// Step 2: raw description of the referred object.
pub fn caption(
    frame: &GroundingSample,
    image: Option<&RgbImage>,
    rig: &CameraRig,
    client: &dyn FmClient,
) -> std::result::Result<String, StageError> {
    let req = caption_request(frame, image, rig, CAPTION_PROMPT).map_err(StageError::Data)?;
    client.complete(&req).map_err(StageError::Client)
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Client(ClientError),
    #[error(transparent)]
    Data(Error),
}

/// Step 3: paraphrase with the chosen template and prefix the viewpoint.
pub fn paraphrase_and_localize(
    description: &str,
    viewpoint: Viewpoint,
    template: &str,
    prefix: &str,
    client: &dyn FmClient,
) -> std::result::Result<String, StageError> {
    let description = description.trim();
    if description.is_empty() {
        return Err(StageError::Data(Error::InvalidArgument("empty description".into())));
    }
    let req = FmRequest {
        prompt: format!("{template}\n{description}"),
        image: None,
        hint: None,
    };
    let text = client.complete(&req).map_err(StageError::Client)?;
    Ok(format!("{prefix} {}! {}", viewpoint.phrase(), text.trim()))
}

/// Template and prefix choice for the `ordinal`-th processed frame.
pub fn template_choice(seed: u64, ordinal: usize, n_templates: usize) -> (usize, usize) {
    let t = (seed as usize).wrapping_add(ordinal) % n_templates;
    let p = (seed as usize).wrapping_add(ordinal / n_templates) % VIEWPOINT_PREFIXES.len();
    (t, p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub sample_id: String,
    pub stage: String,
    pub attempts: usize,
    pub error: String,
}

/// Entry in the human verification queue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub sample_id: String,
    pub prompt: String,
    pub image_ref: String,
    pub status: String,
}

#[derive(Clone, Debug, Default)]
pub struct AnnotationOutput {
    pub samples: Vec<GroundingSample>,
    pub failures: Vec<FailureRecord>,
    pub review_queue: Vec<ReviewItem>,
    pub sampled: usize,
    pub filtered: usize,
}

impl AnnotationOutput {
    /// True when every attempted frame failed at the remote clients.
    pub fn remote_exhausted(&self) -> bool {
        self.samples.is_empty()
            && !self.failures.is_empty()
            && self.failures.iter().all(|f| f.stage != "image")
    }
}

fn load_image(job: &AnnotationJob, frame: &GroundingSample) -> Result<RgbImage> {
    let rel = &frame.image_refs[referred_viewpoint(frame).index()];
    let path = resolve(job.image_root.as_deref(), rel);
    image::open(&path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

enum FrameResult {
    Done(GroundingSample, ReviewItem),
    Failed(FailureRecord),
}

fn annotate_frame(
    job: &AnnotationJob,
    frame: &GroundingSample,
    ordinal: usize,
    rig: &CameraRig,
    captioner: &dyn FmClient,
    paraphraser: &dyn FmClient,
) -> FrameResult {
    let fail = |stage: &str, attempts: usize, error: String| {
        FrameResult::Failed(FailureRecord {
            sample_id: frame.sample_id.clone(),
            stage: stage.into(),
            attempts,
            error,
        })
    };
    let stage_fail = |stage: &str, e: StageError| match e {
        StageError::Client(c) => fail(stage, c.attempts, c.last_error),
        StageError::Data(d) => fail(stage, 0, d.to_string()),
    };
    let image = match load_image(job, frame) {
        Ok(img) => img,
        Err(e) => return fail("image", 0, e.to_string()),
    };
    let req = match caption_request(frame, Some(&image), rig, &job.caption_prompt) {
        Ok(r) => r,
        Err(e) => return fail("image", 0, e.to_string()),
    };
    let description = match captioner.complete(&req) {
        Ok(d) => d,
        Err(e) => return stage_fail("caption", StageError::Client(e)),
    };
    let viewpoint = referred_viewpoint(frame);
    let (t, p) = template_choice(job.seed, ordinal, job.paraphrase_templates.len());
    let prompt = match paraphrase_and_localize(
        &description,
        viewpoint,
        &job.paraphrase_templates[t],
        VIEWPOINT_PREFIXES[p],
        paraphraser,
    ) {
        Ok(text) => text,
        Err(e) => return stage_fail("paraphrase", e),
    };
    let sample = GroundingSample {
        prompt: prompt.clone(),
        viewpoint,
        ..frame.clone()
    };
    let review = ReviewItem {
        sample_id: frame.sample_id.clone(),
        prompt,
        image_ref: frame.image_refs[viewpoint.index()].clone(),
        status: "pending".into(),
    };
    FrameResult::Done(sample, review)
}

/// Runs all three steps. Client failures become failure records and never
/// stop the batch; output is ordered by sample id.
pub fn run_pipeline(
    job: &AnnotationJob,
    frames: &[GroundingSample],
    rig: &CameraRig,
    captioner: &dyn FmClient,
    paraphraser: &dyn FmClient,
) -> Result<AnnotationOutput> {
    job.validate()?;
    let selection = sample_and_filter(frames, job.sampling_rate, job.seed, rig)?;
    let work = &selection.kept;
    let results: Vec<Mutex<Option<FrameResult>>> = work.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = job.concurrency.clamp(1, work.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= work.len() {
                    break;
                }
                let r = annotate_frame(job, &frames[work[k]], k, rig, captioner, paraphraser);
                *results[k].lock().expect("result slot") = Some(r);
            });
        }
    });
    let mut out = AnnotationOutput {
        sampled: selection.sampled.len(),
        filtered: selection.discarded.len(),
        ..Default::default()
    };
    for slot in results {
        match slot.into_inner().expect("result slot").expect("every frame processed") {
            FrameResult::Done(s, r) => {
                out.samples.push(s);
                out.review_queue.push(r);
            }
            FrameResult::Failed(f) => out.failures.push(f),
        }
    }
    out.samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out.review_queue.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out.failures.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(out)
}
