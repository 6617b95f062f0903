//! Seeded synthetic corpus with controllable summary/item token overlap,
//! used for directional checks of re-ranking.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PrecomputedSummaries;
use crate::catalog::{CatalogSnapshot, Item};
use crate::money::Money;
use crate::session::{InteractionEvent, Session};
use crate::summarizer::{Category, KeywordSummary};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub sessions: usize,
    pub items: usize,
    /// Distinct tokens in every item title.
    pub tokens_per_item: usize,
    /// Tokens of the held-out item copied into the session summary.
    pub shared_tokens: usize,
    /// Share of those summary tokens swapped for a random other item's.
    pub noise: f64,
    /// Probability that a step follows the item's fixed successor rather
    /// than jumping uniformly.
    pub follow_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            sessions: 200,
            items: 100,
            tokens_per_item: 6,
            shared_tokens: 4,
            noise: 0.0,
            follow_prob: 0.6,
            min_len: 4,
            max_len: 10,
            seed: 0,
        }
    }
}

pub struct SyntheticCorpus {
    pub catalog: CatalogSnapshot,
    pub sessions: Vec<Session>,
    pub summaries: PrecomputedSummaries,
}

fn item_id(j: usize) -> String {
    format!("i{j:03}")
}

fn token(j: usize, t: usize) -> String {
    format!("w{j}x{t}")
}

pub fn synthetic_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    assert!(spec.items >= 2 && spec.shared_tokens <= spec.tokens_per_item && spec.min_len >= 2 && spec.max_len >= spec.min_len);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let items = (0..spec.items)
        .map(|j| {
            let title = (0..spec.tokens_per_item).map(|t| token(j, t)).collect::<Vec<_>>().join(" ");
            Item::new(item_id(j), title, Money::from_cents(rng.random_range(100..10_000)))
        })
        .collect();
    let catalog = CatalogSnapshot::from_items(items, 1).expect("synthetic ids are unique");

    let mut successor: Vec<usize> = (0..spec.items).collect();
    successor.shuffle(&mut rng);
    let swapped = (spec.noise * spec.shared_tokens as f64).round() as usize;

    let mut sessions = Vec::with_capacity(spec.sessions);
    let mut summaries = HashMap::new();
    for s in 0..spec.sessions {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut seq = vec![rng.random_range(0..spec.items)];
        while seq.len() < len {
            let prev = *seq.last().expect("nonempty");
            let next = if rng.random_bool(spec.follow_prob) { successor[prev] } else { rng.random_range(0..spec.items) };
            seq.push(next);
        }
        let truth = seq.pop().expect("len >= 2");
        let mut session = Session::new(format!("s{s:04}"));
        for (t, &j) in seq.iter().enumerate() {
            session.append_event(InteractionEvent::new(item_id(j), t as u64)).expect("increasing timestamps");
        }
        session.ground_truth_next = Some(item_id(truth));

        let mut other = rng.random_range(0..spec.items - 1);
        if other >= truth {
            other += 1;
        }
        let words: Vec<String> = (0..spec.shared_tokens).map(|t| if t < swapped { token(other, t) } else { token(truth, t) }).collect();
        let mut summary = KeywordSummary::default();
        summary.set(Category::ProductCharacteristics, Some(words.join(" ")));
        summaries.insert(session.session_id.clone(), summary);
        sessions.push(session);
    }
    SyntheticCorpus { catalog, sessions, summaries: PrecomputedSummaries(summaries) }
}
