#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use screenrec_core::catalog::Item;
use screenrec_core::rerank::HashEmbedder;
use screenrec_core::summarizer::{MockBackend, SummarizerBackend};
use screenrec_core::Money;
use screenrec_service::service::EventRequest;
use screenrec_service::{Config, Service};
use tempfile::TempDir;

pub fn summary_fixture(name: &str) -> String {
    let path = format!("{}/../../fixtures/summaries/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Twelve dresses from $10 to $230 in four colors.
pub fn catalog_items() -> Vec<Item> {
    let colors = ["green", "red", "blue", "black"];
    (0..12)
        .map(|i| {
            Item::new(format!("d{i:02}"), format!("{} midi dress", colors[i % 4]), Money::from_cents(1000 + 2000 * i as i64))
                .with_color(colors[i % 4])
                .with_brand(if i % 2 == 0 { "ASOS DESIGN" } else { "Monki" })
        })
        .collect()
}

pub fn catalog_text() -> String {
    catalog_items().iter().map(|i| i.to_catalog_line() + "\n").collect()
}

pub struct Env {
    pub dir: TempDir,
    pub config: Config,
}

impl Env {
    pub fn new() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let config = Config::for_data_dir(dir.path());
        Env { dir, config }
    }

    pub fn mock(&self) -> MockBackend {
        MockBackend::new(&self.config.fixtures_dir)
    }

    pub fn service_with(&self, backend: Arc<dyn SummarizerBackend>) -> Service {
        let service = Service::with_parts(self.config.clone(), backend, Arc::new(HashEmbedder::default())).unwrap();
        if service.catalog().is_empty() {
            service.import_catalog_text(&catalog_text()).unwrap();
        }
        service
    }

    pub fn service(&self) -> Service {
        self.service_with(Arc::new(self.mock()))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// Creates a session that viewed `n_shots` items with a screenshot each and
/// registers `response` as the mock reply for every batch.
pub fn seeded_session(service: &Service, id: &str, n_shots: usize, response: &str) {
    service.create_session(Some(id.to_string())).unwrap();
    let mut keys = Vec::new();
    for i in 0..n_shots {
        let key = service.screenshots().put(format!("png:{id}:{i}").as_bytes()).unwrap();
        keys.push(key.clone());
        let event = EventRequest { item_id: format!("d{:02}", i % 12), timestamp: Some(1_000 + i as u64), screenshot_key: Some(key), kind: None };
        service.append_event(id, event).unwrap();
    }
    let mock = MockBackend::new(&service.config().fixtures_dir);
    for batch in keys.chunks(service.config().batch_size) {
        mock.write_fixture(service.prompt(), batch, response).unwrap();
    }
}
