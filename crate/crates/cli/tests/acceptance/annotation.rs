//! Mock-client determinism, the caption prompt on the wire and failure
//! accounting.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::thread;

use grounding_core::annotate::{
    caption, run_pipeline, AnnotationJob, AnnotationOutput, ClientError, FmClient, FmKind, FmRequest, HttpClient,
    MockCaptioner, MockParaphraser, RetryPolicy,
};
use grounding_core::camera::CameraRig;
use grounding_core::datakit::{synth_corpus, write_corpus, GroundingSample, SynthConfig};
use grounding_core::labels::Category;

use crate::{ensure, Outcome};

/// The captioning instruction, spelled out independently of the library constant.
const EXPECTED_PROMPT: &str = "Attention: only need to focus on the object in the bounding box. Please use one or two \
sentences to describe the object in the red bounding box with greater detail, including its precise location, type, \
and color characteristics.";

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect()
}

fn serialized(out: &AnnotationOutput) -> String {
    jsonl(&out.samples) + &jsonl(&out.failures) + &jsonl(&out.review_queue)
}

/// Accepts one connection, records the body, answers 200.
fn capture_one() -> (String, thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();
        let payload = "{\"text\": \"A red car waits ahead.\"}";
        write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        )
        .unwrap();
        String::from_utf8(body).unwrap()
    });
    (url, handle)
}

/// Captioner that fails on every pedestrian.
struct Flaky;

impl FmClient for Flaky {
    fn kind(&self) -> FmKind {
        FmKind::Captioner
    }

    fn complete(&self, req: &FmRequest) -> Result<String, ClientError> {
        let hint = req.hint.as_ref().expect("pipeline passes hints to in-process clients");
        if hint.category == Category::Pedestrian {
            Err(ClientError {
                attempts: 3,
                last_error: "connection refused".into(),
            })
        } else {
            Ok(MockCaptioner::describe(hint))
        }
    }
}

fn cli(out: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_grounding"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env_remove("GROUNDING_CAPTIONER_ENDPOINT")
        .env_remove("GROUNDING_PARAPHRASER_ENDPOINT")
        .output()
        .unwrap();
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn check_balance(out: &AnnotationOutput, what: &str) -> Result<(), String> {
    ensure!(
        out.sampled == out.filtered + out.samples.len() + out.failures.len(),
        "{what}: sampled {} != filtered {} + annotated {} + failed {}",
        out.sampled,
        out.filtered,
        out.samples.len(),
        out.failures.len()
    );
    Ok(())
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(&SynthConfig {
        seed: 91,
        n_scenes: 40,
        ..Default::default()
    })
    .unwrap();
    write_corpus(&corpus, dir.path()).unwrap();
    let frames: &[GroundingSample] = &corpus.samples;
    let rig: &CameraRig = &corpus.rig;
    let job = |seed, rate, concurrency| AnnotationJob {
        sampling_rate: rate,
        seed,
        image_root: Some(dir.path().to_path_buf()),
        concurrency,
        ..Default::default()
    };

    // Byte determinism, independent of the worker count.
    let para = MockParaphraser { seed: 7 };
    let a = run_pipeline(&job(7, 0.5, 4), frames, rig, &MockCaptioner, &para).map_err(|e| e.to_string())?;
    let b = run_pipeline(&job(7, 0.5, 1), frames, rig, &MockCaptioner, &para).map_err(|e| e.to_string())?;
    let c = run_pipeline(&job(8, 0.5, 4), frames, rig, &MockCaptioner, &MockParaphraser { seed: 8 })
        .map_err(|e| e.to_string())?;
    ensure!(serialized(&a) == serialized(&b), "same seed, different bytes");
    ensure!(serialized(&a) != serialized(&c), "different seeds, same bytes");
    ensure!(!a.samples.is_empty(), "mock run annotated nothing");
    check_balance(&a, "mock")?;

    // The same through the binary, twice.
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("cli{i}"));
            let frames_path = dir.path().join("samples.jsonl");
            let (code, _) = cli(&out, &["--seed", "7", "annotate", "--mock", "--rate", "0.5", "--frames"]
                .iter()
                .copied()
                .chain([frames_path.to_str().unwrap()])
                .collect::<Vec<_>>());
            assert_eq!(code, 0, "annotate exit code");
            ["annotated.jsonl", "failures.jsonl", "review_queue.jsonl"]
                .iter()
                .flat_map(|f| std::fs::read(out.join(f)).unwrap())
                .collect()
        })
        .collect();
    ensure!(runs[0] == runs[1], "CLI annotate output differs between runs");
    ensure!(runs[0].starts_with(jsonl(&a.samples).as_bytes()), "CLI output differs from the library run");

    // The prompt leaves the process verbatim.
    let (url, server) = capture_one();
    let client = HttpClient::new(url, FmKind::Captioner);
    let img = image::RgbImage::new(rig.cameras[0].width, rig.cameras[0].height);
    let text = caption(&frames[0], Some(&img), rig, &client).map_err(|e| format!("{e:?}"))?;
    let body: serde_json::Value = serde_json::from_str(&server.join().unwrap()).map_err(|e| e.to_string())?;
    ensure!(text == "A red car waits ahead.", "reply {text:?}");
    ensure!(body["prompt"] == EXPECTED_PROMPT, "request prompt {}", body["prompt"]);

    // Failures are counted once each and never stop the batch.
    let flaky = run_pipeline(&job(3, 1.0, 4), frames, rig, &Flaky, &MockParaphraser { seed: 3 })
        .map_err(|e| e.to_string())?;
    check_balance(&flaky, "flaky")?;
    let pedestrians = flaky.failures.len();
    ensure!(pedestrians > 0 && !flaky.samples.is_empty(), "fixture needs both outcomes");
    ensure!(flaky.failures.iter().all(|f| f.stage == "caption" && f.attempts == 3), "failure records");
    ensure!(!flaky.remote_exhausted(), "partial failure reported as exhaustion");

    let dead = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", dead.local_addr().unwrap());
    drop(dead);
    let mut down = HttpClient::new(url.clone(), FmKind::Captioner);
    down.retry = RetryPolicy {
        max_retries: 1,
        base_delay_ms: 1,
        max_delay_ms: 1,
    };
    let gone = run_pipeline(&job(3, 0.2, 4), frames, rig, &down, &MockParaphraser { seed: 3 })
        .map_err(|e| e.to_string())?;
    check_balance(&gone, "unreachable")?;
    ensure!(gone.remote_exhausted() && gone.failures.iter().all(|f| f.attempts == 2), "unreachable endpoint");

    Ok(format!(
        "mock run of {} frames: {} sampled = {} filtered + {} annotated + 0 failed, byte-identical across \
         worker counts and CLI runs; prompt sent verbatim; pedestrian failures {} = {} sampled - {} filtered - {} \
         annotated; unreachable endpoint fails all {} kept frames after 2 attempts",
        frames.len(),
        a.sampled,
        a.filtered,
        a.samples.len(),
        pedestrians,
        flaky.sampled,
        flaky.filtered,
        flaky.samples.len(),
        gone.failures.len()
    ))
}
