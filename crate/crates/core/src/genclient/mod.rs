//! Inpainting requests, generation backends and candidate storage.
//!
//! A [`GenerationRequest`] pairs a square crop of a seed image with an
//! editable-region mask and a templated prompt. A [`GenerationClient`] sends
//! it to a [`GenerationBackend`], retries transient failures with exponential
//! backoff, stores the returned PNGs under `candidates/<request-id>/` and
//! appends one line per request to a JSON-lines log.

mod prompt;
pub mod remote;
pub mod stub;

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use image::{GenericImageView, ImageFormat, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{content_id, sha256_hex};

pub use prompt::{Noun, Preposition, PromptParts, SkinDescriptor};
pub use remote::RemoteBackend;
pub use stub::{stub_backend, StubBackend};

/// Candidates requested per seed when not configured otherwise.
pub const DEFAULT_CANDIDATE_COUNT: u32 = 8;

#[derive(Debug, Error)]
pub enum GenClientError {
    #[error("vocabulary violation: {0}")]
    VocabularyViolation(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend rejected credentials: {0}")]
    BackendAuthError(String),
    #[error("backend rate limited after {attempts} attempts")]
    BackendRateLimited { attempts: u32 },
    #[error("backend refused the prompt: {0}")]
    ContentRejected(String),
    #[error("backend failed after {attempts} attempts: {message}")]
    BackendFailed { attempts: u32, message: String },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failure reported by a backend for one attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("content rejected: {0}")]
    ContentRejected(String),
}

/// Square crop in seed-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl CropRegion {
    /// Largest square centred in a `width`x`height` image.
    pub fn centered(width: u32, height: u32) -> CropRegion {
        let side = width.min(height);
        CropRegion {
            x: (width - side) / 2,
            y: (height - side) / 2,
            side,
        }
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.side > 0 && self.x + self.side <= width && self.y + self.side <= height
    }
}

/// Editable-region bitmap. `true` marks pixels the generator may repaint.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    editable: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("editable", &self.editable_count())
            .finish()
    }
}

impl Mask {
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Mask {
        let mut editable = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                editable.push(f(x, y));
            }
        }
        Mask { width, height, editable }
    }

    /// Centred ellipse covering the middle of a square crop.
    pub fn centered_disc(side: u32) -> Mask {
        let c = side as i64;
        let r = (side as i64 * 3) / 8;
        Mask::from_fn(side, side, |x, y| {
            let dx = 2 * x as i64 + 1 - c;
            let dy = 2 * y as i64 + 1 - c;
            dx * dx + dy * dy <= 4 * r * r
        })
    }

    /// Transparent pixels are editable, following the usual image-edit API
    /// convention.
    pub fn from_png(bytes: &[u8]) -> Result<Mask, GenClientError> {
        let img = image::load_from_memory(bytes)?.to_rgba8();
        let (w, h) = img.dimensions();
        Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x, y)[3] == 0))
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = RgbaImage::from_fn(self.width, self.height, |x, y| {
            if self.is_editable(x, y) {
                image::Rgba([0, 0, 0, 0])
            } else {
                image::Rgba([0, 0, 0, 255])
            }
        });
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png).expect("PNG encoding to memory");
        buf.into_inner()
    }

    pub fn is_editable(&self, x: u32, y: u32) -> bool {
        self.editable[(y * self.width + x) as usize]
    }

    pub fn editable_count(&self) -> usize {
        self.editable.iter().filter(|&&e| e).count()
    }

    /// Centroid of the editable region as `(x, y, width, height)`.
    pub fn editable_centroid(&self) -> Option<(u32, u32, u32, u32)> {
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_editable(x, y) {
                    sx += x as u64;
                    sy += y as u64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| ((sx / n) as u32, (sy / n) as u32, self.width, self.height))
    }

    pub fn digest(&self) -> String {
        let bits: Vec<u8> = self.editable.iter().map(|&e| e as u8).collect();
        sha256_hex(&[&self.width.to_le_bytes()[..], &self.height.to_le_bytes()[..], &bits[..]].concat())
    }
}

/// One inpainting job.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub request_id: String,
    pub seed_image_id: String,
    pub crop: CropRegion,
    pub mask: Mask,
    pub prompt: String,
    pub n_candidates: u32,
    /// Zero-based repeat counter for the same seed and prompt.
    pub attempt: u32,
    pub backend_params: serde_json::Map<String, serde_json::Value>,
}

impl GenerationRequest {
    pub fn new(
        seed_image_id: impl Into<String>,
        crop: CropRegion,
        mask: Mask,
        prompt: &PromptParts,
        n_candidates: u32,
    ) -> Result<GenerationRequest, GenClientError> {
        let mut req = GenerationRequest {
            request_id: String::new(),
            seed_image_id: seed_image_id.into(),
            crop,
            mask,
            prompt: prompt.render()?,
            n_candidates,
            attempt: 0,
            backend_params: serde_json::Map::new(),
        };
        req.validate()?;
        req.request_id = req.compute_id();
        Ok(req)
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self.request_id = self.compute_id();
        self
    }

    pub fn with_params(mut self, params: serde_json::Map<String, serde_json::Value>) -> Self {
        self.backend_params = params;
        self.request_id = self.compute_id();
        self
    }

    fn compute_id(&self) -> String {
        let doc = serde_json::json!({
            "seed_image_id": self.seed_image_id,
            "crop": self.crop,
            "mask": self.mask.digest(),
            "prompt": self.prompt,
            "n": self.n_candidates,
            "attempt": self.attempt,
            "params": self.backend_params,
        });
        content_id(doc.to_string().as_bytes())
    }

    pub fn validate(&self) -> Result<(), GenClientError> {
        if self.n_candidates == 0 {
            return Err(GenClientError::InvalidRequest("n_candidates must be at least 1".into()));
        }
        if self.crop.side == 0 {
            return Err(GenClientError::InvalidRequest("crop side must be positive".into()));
        }
        if self.mask.width != self.crop.side || self.mask.height != self.crop.side {
            return Err(GenClientError::InvalidRequest(format!(
                "mask is {}x{} but crop is {}x{}",
                self.mask.width, self.mask.height, self.crop.side, self.crop.side
            )));
        }
        PromptParts::parse(&self.prompt)?;
        Ok(())
    }
}

/// Width and height of an encoded image.
pub fn decode_dimensions(bytes: &[u8]) -> Result<(u32, u32), GenClientError> {
    Ok(image::load_from_memory(bytes)?.dimensions())
}

/// Cut the request's square crop out of an encoded seed image.
pub fn crop_seed_image(seed_png: &[u8], crop: CropRegion) -> Result<Vec<u8>, GenClientError> {
    let img = image::load_from_memory(seed_png)?;
    let (w, h) = img.dimensions();
    if !crop.fits(w, h) {
        return Err(GenClientError::InvalidRequest(format!(
            "crop {crop:?} exceeds seed image {w}x{h}"
        )));
    }
    let cropped = img.crop_imm(crop.x, crop.y, crop.side, crop.side).to_rgb8();
    let mut buf = Cursor::new(Vec::new());
    cropped.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewState {
    Pending,
    Accepted,
    Rejected,
}

/// Why a reviewer discarded a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    AnatomyChange,
    Artifact,
    PathologyMisplaced,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateImage {
    /// Content hash of the PNG payload.
    pub candidate_id: String,
    pub request_ref: String,
    pub parent_seed_id: String,
    pub prompt: String,
    pub index: u32,
    /// Path relative to the storage root.
    pub payload_uri: String,
    pub created_at: DateTime<Utc>,
    pub review: ReviewState,
    pub reject_reason: Option<RejectReason>,
}

impl CandidateImage {
    pub fn check(&self) -> Result<(), GenClientError> {
        if self.review == ReviewState::Rejected && self.reject_reason.is_none() {
            return Err(GenClientError::InvalidRequest(format!(
                "candidate {} rejected without a reason",
                self.candidate_id
            )));
        }
        Ok(())
    }
}

/// Payload handed to a backend for one attempt.
pub struct EditInput<'a> {
    pub request: &'a GenerationRequest,
    pub image_png: &'a [u8],
    pub mask_png: &'a [u8],
}

pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Return up to `request.n_candidates` PNG payloads.
    fn edit(&self, input: &EditInput<'_>) -> Result<Vec<Vec<u8>>, BackendError>;
}

/// Exponential backoff with a hard cap on attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay_ms: u64,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_delay_ms: 500,
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), GenClientError> {
        if self.max_attempts == 0 || self.initial_delay_ms == 0 || self.multiplier < 2 {
            return Err(GenClientError::InvalidRequest(format!(
                "retry policy needs max_attempts >= 1, initial delay > 0 and multiplier >= 2, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Delay after failed attempt `failed` (1-based).
    pub fn delay_after(&self, failed: u32) -> Duration {
        let factor = (self.multiplier as u64).saturating_pow(failed.saturating_sub(1));
        Duration::from_millis(self.initial_delay_ms.saturating_mul(factor))
    }

    /// Every delay the policy can produce, in order.
    pub fn schedule(&self) -> Vec<Duration> {
        (1..self.max_attempts).map(|k| self.delay_after(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestOutcome {
    Ok,
    ContentRejected,
    AuthError,
    RateLimited,
    Failed,
}

/// One line of the request log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub request_id: String,
    pub seed_image_id: String,
    pub prompt: String,
    pub attempt: u32,
    pub n_candidates: u32,
    pub attempts: u32,
    pub outcome: RequestOutcome,
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only JSON-lines request log.
pub struct RequestLog {
    path: PathBuf,
    file: Mutex<BufWriter<fs::File>>,
}

impl RequestLog {
    pub fn open(path: &Path) -> std::io::Result<RequestLog> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RequestLog {
            path: path.to_path_buf(),
            file: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, entry: &RequestLogEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().expect("request log lock");
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<RequestLogEntry>> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A request plus the cropped seed image it edits.
#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub request: GenerationRequest,
    pub image_png: Vec<u8>,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;
type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct GenerationClient {
    backend: Arc<dyn GenerationBackend>,
    storage_root: PathBuf,
    retry: RetryPolicy,
    log: Option<Arc<RequestLog>>,
    max_in_flight: usize,
    sleeper: Sleeper,
    clock: Clock,
}

impl GenerationClient {
    pub fn new(backend: Arc<dyn GenerationBackend>, storage_root: impl Into<PathBuf>) -> Self {
        GenerationClient {
            backend,
            storage_root: storage_root.into(),
            retry: RetryPolicy::default(),
            log: None,
            max_in_flight: 4,
            sleeper: Arc::new(std::thread::sleep),
            clock: Arc::new(Utc::now),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_log(mut self, log: Arc<RequestLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.max_in_flight = limit.max(1);
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    fn log(&self, req: &GenerationRequest, attempts: u32, outcome: RequestOutcome, candidates: &[CandidateImage], error: Option<String>) -> Result<(), GenClientError> {
        if let Some(log) = &self.log {
            log.append(&RequestLogEntry {
                request_id: req.request_id.clone(),
                seed_image_id: req.seed_image_id.clone(),
                prompt: req.prompt.clone(),
                attempt: req.attempt,
                n_candidates: req.n_candidates,
                attempts,
                outcome,
                candidates: candidates.iter().map(|c| c.candidate_id.clone()).collect(),
                error,
            })?;
        }
        Ok(())
    }

    /// Run one request to completion. Rate limits and transient failures are
    /// retried up to the policy cap; auth failures and content refusals are
    /// not.
    pub fn generate(&self, request: &GenerationRequest, image_png: &[u8]) -> Result<Vec<CandidateImage>, GenClientError> {
        request.validate()?;
        self.retry.validate()?;
        let mask_png = request.mask.to_png();
        let input = EditInput {
            request,
            image_png,
            mask_png: &mask_png,
        };

        let mut attempts = 0;
        let payloads = loop {
            attempts += 1;
            let failure = match self.backend.edit(&input) {
                Ok(p) if !p.is_empty() => break p,
                Ok(_) => BackendError::Transient("backend returned no images".into()),
                Err(e) => e,
            };
            match failure {
                BackendError::Auth(msg) => {
                    self.log(request, attempts, RequestOutcome::AuthError, &[], Some(msg.clone()))?;
                    return Err(GenClientError::BackendAuthError(msg));
                }
                BackendError::ContentRejected(msg) => {
                    self.log(request, attempts, RequestOutcome::ContentRejected, &[], Some(msg.clone()))?;
                    return Err(GenClientError::ContentRejected(msg));
                }
                retryable => {
                    if attempts >= self.retry.max_attempts {
                        return Err(match retryable {
                            BackendError::RateLimited { .. } => {
                                self.log(request, attempts, RequestOutcome::RateLimited, &[], Some("rate limited".into()))?;
                                GenClientError::BackendRateLimited { attempts }
                            }
                            other => {
                                self.log(request, attempts, RequestOutcome::Failed, &[], Some(other.to_string()))?;
                                GenClientError::BackendFailed {
                                    attempts,
                                    message: other.to_string(),
                                }
                            }
                        });
                    }
                    tracing::debug!(request = %request.request_id, attempts, "retrying after {retryable}");
                    (self.sleeper)(self.retry.delay_after(attempts));
                }
            }
        };

        let candidates = self.store(request, payloads)?;
        self.log(request, attempts, RequestOutcome::Ok, &candidates, None)?;
        Ok(candidates)
    }

    /// Write a request's payloads as one batch: files land in a scratch
    /// directory which is renamed into place.
    fn store(&self, request: &GenerationRequest, payloads: Vec<Vec<u8>>) -> Result<Vec<CandidateImage>, GenClientError> {
        let created_at = (self.clock)();
        let rel_dir = format!("candidates/{}", request.request_id);
        let final_dir = self.storage_root.join(&rel_dir);
        let scratch = self.storage_root.join(format!("candidates/.partial-{}", request.request_id));
        if scratch.exists() {
            fs::remove_dir_all(&scratch)?;
        }
        fs::create_dir_all(&scratch)?;

        let mut candidates: Vec<CandidateImage> = Vec::new();
        for (index, bytes) in payloads.into_iter().take(request.n_candidates as usize).enumerate() {
            // validate the payload decodes before accepting it
            image::load_from_memory(&bytes)?;
            let candidate_id = content_id(&bytes);
            if candidates.iter().any(|c| c.candidate_id == candidate_id) {
                continue;
            }
            let name = format!("{index}.png");
            fs::write(scratch.join(&name), &bytes)?;
            candidates.push(CandidateImage {
                candidate_id,
                request_ref: request.request_id.clone(),
                parent_seed_id: request.seed_image_id.clone(),
                prompt: request.prompt.clone(),
                index: index as u32,
                payload_uri: format!("{rel_dir}/{name}"),
                created_at,
                review: ReviewState::Pending,
                reject_reason: None,
            });
        }
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir)?;
        }
        fs::rename(&scratch, &final_dir)?;
        Ok(candidates)
    }

    /// Run many jobs with at most `max_in_flight` in progress. Results come
    /// back in job order.
    pub fn generate_batch(&self, jobs: &[GenerationJob]) -> Vec<Result<Vec<CandidateImage>, GenClientError>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Vec<CandidateImage>, GenClientError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        let workers = self.max_in_flight.min(jobs.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    let out = self.generate(&job.request, &job.image_png);
                    results.lock().expect("results lock")[i] = Some(out);
                });
            }
        });
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("every job ran"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn parts() -> PromptParts {
        PromptParts::new("psoriasis", "arm", SkinDescriptor::Dark, Noun::Man, Preposition::OnThe)
    }

    fn request(n: u32) -> GenerationRequest {
        GenerationRequest::new("seed-a", CropRegion { x: 0, y: 0, side: 64 }, Mask::centered_disc(64), &parts(), n).unwrap()
    }

    fn fixed_clock() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    /// Fails with `errors` in order, then succeeds with the stub.
    struct Scripted {
        errors: Mutex<Vec<BackendError>>,
        calls: AtomicU32,
        inner: StubBackend,
    }

    impl Scripted {
        fn new(errors: Vec<BackendError>) -> Self {
            Scripted {
                errors: Mutex::new(errors),
                calls: AtomicU32::new(0),
                inner: stub_backend(3).with_size(32),
            }
        }
    }

    impl GenerationBackend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }

        fn edit(&self, input: &EditInput<'_>) -> Result<Vec<Vec<u8>>, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut errs = self.errors.lock().unwrap();
            if errs.is_empty() {
                self.inner.edit(input)
            } else {
                Err(errs.remove(0))
            }
        }
    }

    fn client(backend: Arc<dyn GenerationBackend>, dir: &Path, sleeps: Arc<Mutex<Vec<Duration>>>) -> GenerationClient {
        GenerationClient::new(backend, dir)
            .with_clock(fixed_clock)
            .with_sleeper(move |d| sleeps.lock().unwrap().push(d))
            .with_retry(RetryPolicy {
                max_attempts: 4,
                initial_delay_ms: 10,
                multiplier: 2,
            })
    }

    #[test]
    fn stub_returns_requested_count() {
        let dir = tempfile::tempdir().unwrap();
        let c = client(Arc::new(stub_backend(1).with_size(32)), dir.path(), Default::default());
        let out = c.generate(&request(8), b"").unwrap();
        assert_eq!(out.len(), 8);
        for (i, cand) in out.iter().enumerate() {
            assert_eq!(cand.review, ReviewState::Pending);
            assert_eq!(cand.parent_seed_id, "seed-a");
            assert_eq!(cand.request_ref, request(8).request_id);
            assert_eq!(cand.payload_uri, format!("candidates/{}/{i}.png", cand.request_ref));
            assert!(dir.path().join(&cand.payload_uri).exists());
        }
    }

    #[test]
    fn identical_requests_give_identical_payloads() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = client(Arc::new(stub_backend(5).with_size(32)), d1.path(), Default::default())
            .generate(&request(1), b"")
            .unwrap();
        let b = client(Arc::new(stub_backend(5).with_size(32)), d2.path(), Default::default())
            .generate(&request(1), b"")
            .unwrap();
        assert_eq!(a.len(), 1);
        let pa = fs::read(d1.path().join(&a[0].payload_uri)).unwrap();
        let pb = fs::read(d2.path().join(&b[0].payload_uri)).unwrap();
        assert_eq!(sha256_hex(&pa), sha256_hex(&pb));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_candidates_is_invalid() {
        let err = GenerationRequest::new("s", CropRegion { x: 0, y: 0, side: 8 }, Mask::centered_disc(8), &parts(), 0).unwrap_err();
        assert!(matches!(err, GenClientError::InvalidRequest(_)));
    }

    #[test]
    fn mask_must_match_crop() {
        let err = GenerationRequest::new("s", CropRegion { x: 0, y: 0, side: 8 }, Mask::centered_disc(9), &parts(), 1).unwrap_err();
        assert!(matches!(err, GenClientError::InvalidRequest(_)));
    }

    #[test]
    fn transient_failures_are_retried_with_growing_delays() {
        let dir = tempfile::tempdir().unwrap();
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let backend = Arc::new(Scripted::new(vec![
            BackendError::RateLimited { retry_after: None },
            BackendError::Transient("502".into()),
        ]));
        let log = Arc::new(RequestLog::open(&dir.path().join("requests.jsonl")).unwrap());
        let c = client(backend.clone(), dir.path(), sleeps.clone()).with_log(log);
        let out = c.generate(&request(2), b"").unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        assert_eq!(*sleeps.lock().unwrap(), vec![Duration::from_millis(10), Duration::from_millis(20)]);
        let entries = RequestLog::read(&dir.path().join("requests.jsonl")).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].attempts, 3);
        assert_eq!(entries[0].outcome, RequestOutcome::Ok);
    }

    #[test]
    fn rate_limit_becomes_terminal_at_cap() {
        let dir = tempfile::tempdir().unwrap();
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let backend = Arc::new(Scripted::new(vec![BackendError::RateLimited { retry_after: None }; 10]));
        let c = client(backend.clone(), dir.path(), sleeps.clone());
        let err = c.generate(&request(2), b"").unwrap_err();
        assert!(matches!(err, GenClientError::BackendRateLimited { attempts: 4 }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
        let delays = sleeps.lock().unwrap().clone();
        assert_eq!(delays.len(), 3);
        assert!(delays.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn auth_and_content_errors_are_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(Scripted::new(vec![BackendError::Auth("401".into())]));
        let err = client(backend.clone(), dir.path(), Default::default())
            .generate(&request(1), b"")
            .unwrap_err();
        assert!(matches!(err, GenClientError::BackendAuthError(_)));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);

        let log_path = dir.path().join("log.jsonl");
        let backend = Arc::new(Scripted::new(vec![BackendError::ContentRejected("policy".into())]));
        let err = client(backend.clone(), dir.path(), Default::default())
            .with_log(Arc::new(RequestLog::open(&log_path).unwrap()))
            .generate(&request(1), b"")
            .unwrap_err();
        assert!(matches!(err, GenClientError::ContentRejected(_)));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        assert_eq!(RequestLog::read(&log_path).unwrap()[0].outcome, RequestOutcome::ContentRejected);
    }

    #[test]
    fn batch_keeps_job_order() {
        let dir = tempfile::tempdir().unwrap();
        let c = client(Arc::new(stub_backend(2).with_size(32)), dir.path(), Default::default()).with_max_in_flight(3);
        let jobs: Vec<GenerationJob> = (0..7)
            .map(|i| GenerationJob {
                request: request(2).with_attempt(i),
                image_png: Vec::new(),
            })
            .collect();
        let results = c.generate_batch(&jobs);
        assert_eq!(results.len(), 7);
        for (job, res) in jobs.iter().zip(&results) {
            let cands = res.as_ref().unwrap();
            assert!(cands.len() <= 2);
            assert!(cands.iter().all(|c| c.request_ref == job.request.request_id));
        }
    }

    #[test]
    fn mask_png_round_trip() {
        let m = Mask::centered_disc(16);
        let back = Mask::from_png(&m.to_png()).unwrap();
        assert_eq!(m, back);
        assert!(m.is_editable(8, 8));
        assert!(!m.is_editable(0, 0));
    }

    #[test]
    fn crop_checks_bounds() {
        let img = stub::encode_png(&image::RgbImage::new(40, 30));
        let c = CropRegion::centered(40, 30);
        assert_eq!(c, CropRegion { x: 5, y: 0, side: 30 });
        let out = crop_seed_image(&img, c).unwrap();
        let decoded = image::load_from_memory(&out).unwrap();
        assert_eq!(decoded.dimensions(), (30, 30));
        assert!(crop_seed_image(&img, CropRegion { x: 20, y: 0, side: 30 }).is_err());
    }

    #[test]
    fn retry_schedule_strictly_increases() {
        let p = RetryPolicy::default();
        let s = p.schedule();
        assert_eq!(s.len() as u32, p.max_attempts - 1);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(RetryPolicy { multiplier: 1, ..p }.validate().is_err());
    }
}
