#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use genread::datamodel::Strategy;
use genread::llm_backend::{LlmClient, MockTransport, ResponseCache, Transport};
use genread::pipeline::RunConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Mock-backed config over the 20-question fixture, writing under `root`.
pub fn mock_config(root: &Path, strategy: Strategy, k: usize) -> RunConfig {
    RunConfig {
        dataset_path: fixture("qa20.jsonl"),
        train_path: Some(fixture("train12.jsonl")),
        strategy,
        num_documents: k,
        output_dir: root.join("out"),
        cache_dir: Some(root.join("cache")),
        max_tokens: 64,
        ..RunConfig::default()
    }
}

pub fn mock_client(cfg: &RunConfig) -> (LlmClient, Arc<MockTransport>) {
    let mock = Arc::new(MockTransport::new());
    let transport: Arc<dyn Transport> = mock.clone();
    let cache = ResponseCache::on_disk(cfg.cache_dir.clone().expect("tests set cache_dir"));
    (LlmClient::new(transport, cache), mock)
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
