use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionRequest, FinishReason, ModelRef, RawCompletion, Transport};

pub const MOCK_EMBEDDING_DIMS: usize = 64;
/// Words emitted by a mock completion when `max_tokens` allows it.
pub const MOCK_GREEDY_WORDS: usize = 32;

const VOCAB: &[&str] = &[
    "the",
    "of",
    "and",
    "in",
    "was",
    "is",
    "a",
    "to",
    "city",
    "river",
    "king",
    "music",
    "opera",
    "war",
    "empire",
    "church",
    "island",
    "mountain",
    "science",
    "novel",
    "film",
    "song",
    "album",
    "team",
    "league",
    "season",
    "player",
    "world",
    "country",
    "state",
    "capital",
    "president",
    "minister",
    "party",
    "election",
    "law",
    "court",
    "bank",
    "company",
    "market",
    "oil",
    "gold",
    "silver",
    "iron",
    "water",
    "sea",
    "ocean",
    "lake",
    "desert",
    "forest",
    "animal",
    "bird",
    "fish",
    "horse",
    "dog",
    "cat",
    "tree",
    "flower",
    "seed",
    "crop",
    "farm",
    "food",
    "wine",
    "bread",
    "salt",
    "sugar",
    "coffee",
    "tea",
    "ship",
    "train",
    "car",
    "plane",
    "bridge",
    "road",
    "tower",
    "castle",
    "palace",
    "temple",
    "school",
    "university",
    "library",
    "museum",
    "theatre",
    "painting",
    "poem",
    "poet",
    "writer",
    "artist",
    "composer",
    "singer",
    "actor",
    "director",
    "scientist",
    "doctor",
    "soldier",
    "general",
    "queen",
    "prince",
    "princess",
    "emperor",
    "god",
    "goddess",
    "hero",
    "saint",
    "pope",
    "bishop",
    "monk",
    "language",
    "alphabet",
    "number",
    "year",
    "century",
    "decade",
    "day",
    "night",
    "winter",
    "summer",
    "spring",
    "autumn",
    "north",
    "south",
    "east",
    "west",
    "border",
    "province",
    "district",
    "village",
    "town",
    "harbor",
    "coast",
    "valley",
    "plain",
    "hill",
    "volcano",
    "earthquake",
    "storm",
    "rain",
    "snow",
    "ice",
    "fire",
    "stone",
    "glass",
    "paper",
    "book",
    "letter",
    "word",
    "name",
    "story",
    "history",
    "battle",
    "treaty",
    "revolution",
    "republic",
    "kingdom",
    "nation",
    "people",
    "tribe",
    "family",
    "father",
    "mother",
    "son",
    "daughter",
    "brother",
    "sister",
    "wife",
    "husband",
    "child",
    "friend",
    "enemy",
    "army",
    "navy",
    "flag",
    "anthem",
    "coin",
    "currency",
    "trade",
    "industry",
    "factory",
    "machine",
    "engine",
    "computer",
    "phone",
    "radio",
    "television",
    "newspaper",
    "magazine",
    "award",
    "prize",
    "medal",
    "record",
    "game",
    "sport",
    "football",
    "tennis",
    "golf",
    "chess",
    "olympic",
    "champion",
    "cup",
    "title",
    "band",
    "orchestra",
    "symphony",
    "piano",
    "guitar",
    "violin",
    "dance",
    "ballet",
    "stage",
    "show",
    "series",
    "episode",
    "character",
    "author",
    "chapter",
    "page",
    "atlas",
    "planet",
    "star",
    "moon",
    "sun",
    "comet",
    "galaxy",
    "atom",
    "cell",
    "gene",
    "virus",
    "disease",
    "medicine",
    "hospital",
    "heart",
    "brain",
    "blood",
    "bone",
    "element",
    "metal",
    "gas",
    "energy",
    "light",
    "sound",
    "color",
    "red",
    "blue",
    "green",
    "black",
    "white",
    "large",
    "small",
    "old",
    "new",
    "first",
    "last",
    "famous",
    "ancient",
    "modern",
    "major",
];

/// Deterministic offline backend.
///
/// Completions are a pure function of `(prompt, temperature, top_p,
/// seed_tag)`: greedy requests hash only the prompt; sampled requests also
/// fold in the decoding parameters and `seed_tag`. Embeddings are unit-norm
/// pseudo-random vectors seeded from a hash of the text.
#[derive(Debug, Default)]
pub struct MockTransport {
    calls: AtomicU64,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of times the transport itself was invoked.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(seed)
}

pub(crate) fn mock_completion_text(req: &CompletionRequest) -> RawCompletion {
    let mut rng = if req.is_greedy() {
        seeded_rng(&[b"complete", req.prompt.as_bytes()])
    } else {
        seeded_rng(&[
            b"sample",
            req.prompt.as_bytes(),
            &req.temperature.to_bits().to_le_bytes(),
            &req.top_p.to_bits().to_le_bytes(),
            req.seed_tag.as_bytes(),
        ])
    };
    let n = MOCK_GREEDY_WORDS.min(req.max_tokens as usize);
    let words: Vec<&str> = (0..n)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect();
    RawCompletion {
        text: words.join(" "),
        finish_reason: if n < MOCK_GREEDY_WORDS {
            FinishReason::Length
        } else {
            FinishReason::Stop
        },
    }
}

pub(crate) fn mock_embedding(text: &str) -> Vec<f64> {
    let mut rng = seeded_rng(&[b"embed", text.as_bytes()]);
    loop {
        let v: Vec<f64> = (0..MOCK_EMBEDDING_DIMS)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl Transport for MockTransport {
    fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(mock_completion_text(req))
    }

    fn embed(&self, text: &str, _model: &ModelRef) -> Result<Vec<f64>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(mock_embedding(text))
    }

    fn embedding_dims(&self) -> Option<usize> {
        Some(MOCK_EMBEDDING_DIMS)
    }
}
