#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use locoplan_core::client::{Transcript, TranscriptClient};
use locoplan_core::morphology::Thresholds;
use locoplan_core::sim::scene::{load_scene_file, SceneSnapshot};
use locoplan_core::sim::FailureInjection;
use locoplan_core::MotionLibrary;

use locoplan_gateway::{Gateway, GatewayConfig};

pub const PICK_INSTRUCTION: &str = "Pick up box1 from table_a, put it on table_b and come back.";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn scene(name: &str) -> SceneSnapshot {
    load_scene_file(&fixtures().join(format!("scenes/{name}.json"))).unwrap()
}

pub fn transcript(name: &str) -> Transcript {
    Transcript::load(&fixtures().join(format!("transcripts/{name}.json"))).unwrap()
}

pub fn plan_text(name: &str) -> String {
    fs::read_to_string(fixtures().join(format!("plans/{name}.json"))).unwrap()
}

/// A gateway over the pick-and-place scene answering from `client`.
pub fn gateway_with(client: TranscriptClient, injection: FailureInjection, runs_dir: Option<&Path>) -> Gateway {
    Gateway::open(GatewayConfig {
        library: MotionLibrary::default_library(),
        client: Arc::new(client),
        thresholds: Thresholds::default(),
        injection,
        default_scene: scene("pick_and_place"),
        runs_dir: runs_dir.map(Path::to_path_buf),
    })
    .unwrap()
}

/// Replays the pick-and-place plan `n` times.
pub fn pick_client(n: usize) -> TranscriptClient {
    let mut t = transcript("pick_and_place");
    let first = t.responses[0].clone();
    t.responses = vec![first; n];
    TranscriptClient::new(t)
}

pub fn no_failures() -> FailureInjection {
    FailureInjection::seeded(0).with_default_prob(0.0)
}
