//! Evaluation datasets: JSONL loading and a seeded synthetic generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normalize_query_text, Complexity};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub text: String,
    pub label: Complexity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown label '{label}'")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: duplicate id '{id}'")]
    DuplicateId { line: usize, id: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    text: String,
    label: String,
    #[serde(default)]
    reference: Option<String>,
}

pub fn parse_dataset(src: &str) -> Result<Vec<DatasetItem>, DatasetError> {
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in src.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawItem = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = raw.label.parse().map_err(|_| DatasetError::UnknownLabel {
            line: line_no,
            label: raw.label.clone(),
        })?;
        if !ids.insert(raw.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        items.push(DatasetItem {
            id: raw.id,
            text: raw.text,
            label,
            reference: raw.reference,
        });
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, DatasetError> {
    let src = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let items = parse_dataset(&src)?;
    if items.is_empty() {
        tracing::warn!(path = %path.display(), "dataset is empty");
    } else {
        let counts = label_counts(&items);
        tracing::info!(path = %path.display(), total = items.len(), ?counts, "dataset loaded");
    }
    Ok(items)
}

pub fn label_counts(items: &[DatasetItem]) -> BTreeMap<Complexity, usize> {
    let mut m: BTreeMap<Complexity, usize> = Complexity::ALL.iter().map(|c| (*c, 0)).collect();
    for it in items {
        *m.entry(it.label).or_default() += 1;
    }
    m
}

pub fn to_jsonl(items: &[DatasetItem]) -> String {
    let mut out = String::new();
    for it in items {
        let _ = writeln!(out, "{}", serde_json::to_string(it).expect("item serializes"));
    }
    out
}

pub fn write_dataset(items: &[DatasetItem], path: &Path) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_jsonl(items))
}

pub const ITEMS_PER_LABEL: usize = 50;
/// Of each label's items, how many are phrased without rule cues so that
/// the embedding classifier decides them.
pub const SEMANTIC_ITEMS_PER_LABEL: usize = 10;

struct Template {
    pattern: &'static str,
    slots: &'static [&'static [&'static str]],
}

const COUNTRIES: &[&str] = &[
    "france", "japan", "canada", "brazil", "kenya", "norway", "egypt", "peru", "vietnam", "chile",
    "portugal", "mongolia",
];
const BOOKS: &[&str] = &[
    "hamlet", "moby dick", "don quixote", "the odyssey", "war and peace", "frankenstein",
    "pride and prejudice", "jane eyre", "dracula", "ulysses",
];
const LANDMARKS: &[&str] = &[
    "mount everest", "the eiffel tower", "the statue of liberty", "big ben", "the burj khalifa",
    "mount kilimanjaro", "the leaning tower of pisa", "the empire state building",
];
const ANIMALS: &[&str] = &[
    "cats", "penguins", "octopuses", "owls", "giraffes", "dolphins", "bees", "sloths", "foxes",
    "otters", "pandas", "squirrels",
];
const GENRES: &[&str] = &[
    "comedy", "horror", "science fiction", "romance", "western", "animated", "mystery", "musical",
];
const MOODS: &[&str] = &["rainy", "sunny", "lazy", "quiet", "snowy", "busy", "gloomy", "cheerful"];

const SYSTEMS: &[&str] = &[
    "a refrigerator", "the stock market", "a vaccine", "the internet", "an electric motor",
    "a solar panel", "the immune system", "a jet engine", "a nuclear reactor", "the water cycle",
    "a heat pump", "the electoral college",
];
const PAIRS: &[&str] = &[
    "weather and climate", "viruses and bacteria", "stocks and bonds", "mitosis and meiosis",
    "socialism and capitalism", "baroque and classical music", "renting and buying a home",
    "speed and velocity", "empathy and sympathy", "lakes and ponds",
];
const WHY: &[&str] = &[
    "do leaves change color in autumn", "do we have leap years", "is the sky blue",
    "do cats purr", "does bread go stale", "does ice float on water", "do birds migrate south",
    "do people yawn", "do onions make us cry", "do metals conduct heat",
];
const EVENTS: &[&str] = &[
    "the french revolution", "the industrial revolution", "the cold war", "the renaissance",
    "the great depression", "the space race", "the printing revolution", "the silk road trade",
];
const WARS: &[&str] = &[
    "the first world war", "the thirty years war", "the hundred years war", "the crimean war",
    "the american civil war", "the napoleonic wars", "the korean war", "the peloponnesian war",
];
const HISTORIES: &[&str] = &[
    "the bicycle", "the telephone", "paper money", "the printing press", "coffee houses",
    "the olympic games", "public libraries", "the postal service",
];
const IMPACTS: &[&str] = &[
    "tourism on venice", "automation on factory jobs", "streaming on the music industry",
    "urban sprawl on wildlife", "remote work on city centers", "fast fashion on rivers",
    "social media on local news", "drought on farming communities",
];

const TASKS: &[&str] = &[
    "reverses a linked list", "checks whether a string is a palindrome",
    "merges two sorted arrays", "parses a csv file", "finds the longest common prefix",
    "counts word frequencies in a file", "validates an email address",
    "computes fibonacci numbers with memoization",
];
const LANGS: &[&str] = &["python", "rust", "javascript", "java", "golang", "typescript", "kotlin"];
const STRUCTURES: &[&str] = &[
    "a binary search tree", "an lru cache", "a priority queue", "a trie", "a rate limiter",
    "a hash map with open addressing", "a thread pool",
];
const ORGS: &[&str] = &[
    "a small bakery", "a regional hospital", "a public library", "a bike sharing startup",
    "a university department", "a family farm", "a neighborhood gym", "a city council",
];
const SYSTEMS_TO_DESIGN: &[&str] = &[
    "a loyalty program", "an onboarding process", "a data retention policy",
    "a volunteer scheduling system", "an inventory tracking system", "a customer support process",
];
const GOALS: &[&str] = &[
    "launch an online store", "migrate a company to the cloud", "learn a new language in a year",
    "renovate a kitchen on a budget", "organize a charity marathon", "open a second restaurant",
];
const CITIES: &[&str] = &["lisbon", "kyoto", "mexico city", "istanbul", "vancouver", "prague", "cape town"];

const APPS: &[&str] = &[
    "web application", "mobile banking app", "booking platform", "inventory service",
    "chat application", "recipe sharing site", "fitness tracking app", "ticketing platform",
];
const FEATURES: &[&str] = &[
    "user authentication, a database layer", "role based access, audit logging",
    "payments, email notifications", "search, offline support", "file uploads, rate limiting",
];
const BUSINESSES: &[&str] = &[
    "coffee roastery", "dog grooming salon", "language school", "bicycle repair shop",
    "solar installation company", "food truck",
];
const SERVICES: &[&str] = &[
    "backend service", "payment gateway", "notification platform", "reporting service",
    "search backend",
];
const RESEARCH: &[&str] = &[
    "urban heat islands", "microplastics in rivers", "sleep and memory", "soil carbon storage",
    "remote learning outcomes",
];

const SIMPLE_RULED: &[Template] = &[
    Template {
        pattern: "{0}{1}",
        slots: &[
            &["hi", "hello", "hey", "hiya", "good morning", "good afternoon", "good evening", "thanks", "thank you", "bye"],
            &["", " there", "!", ", how are you?", " friend", ", hope you are well", " everyone"],
        ],
    },
    Template {
        pattern: "what is the capital of {0}?",
        slots: &[COUNTRIES],
    },
    Template {
        pattern: "who wrote {0}?",
        slots: &[BOOKS],
    },
    Template {
        pattern: "how tall is {0}?",
        slots: &[LANDMARKS],
    },
    Template {
        pattern: "what currency does {0} use?",
        slots: &[COUNTRIES],
    },
    Template {
        pattern: "are {0} mammals?",
        slots: &[ANIMALS],
    },
];

const SIMPLE_SEMANTIC: &[Template] = &[
    Template {
        pattern: "tell me a joke about {0}",
        slots: &[ANIMALS],
    },
    Template {
        pattern: "tell me a fun fact about {0}",
        slots: &[ANIMALS],
    },
    Template {
        pattern: "recommend a good {0} movie for tonight",
        slots: &[GENRES],
    },
    Template {
        pattern: "recommend a song for a {0} day",
        slots: &[MOODS],
    },
];

const MEDIUM_RULED: &[Template] = &[
    Template {
        pattern: "explain how {0} works",
        slots: &[SYSTEMS],
    },
    Template {
        pattern: "compare {0} in a short paragraph",
        slots: &[PAIRS],
    },
    Template {
        pattern: "what is the difference between {0}?",
        slots: &[PAIRS],
    },
    Template {
        pattern: "why {0}?",
        slots: &[WHY],
    },
    Template {
        pattern: "summarize the plot of {0}",
        slots: &[BOOKS],
    },
    Template {
        pattern: "describe the main consequences of {0}",
        slots: &[EVENTS],
    },
    Template {
        pattern: "calculate the area of a circle with radius {0}",
        slots: &[&["2", "3", "5", "7", "11", "12.5"]],
    },
];

const MEDIUM_SEMANTIC: &[Template] = &[
    Template {
        pattern: "the main causes of {0}",
        slots: &[WARS],
    },
    Template {
        pattern: "give an overview of the history of {0}",
        slots: &[HISTORIES],
    },
    Template {
        pattern: "the impact of {0}",
        slots: &[IMPACTS],
    },
];

const COMPLEX_RULED: &[Template] = &[
    Template {
        pattern: "write a function that {0} in {1}",
        slots: &[TASKS, LANGS],
    },
    Template {
        pattern: "implement {0} in {1} with unit tests",
        slots: &[STRUCTURES, LANGS],
    },
    Template {
        pattern: "design {0} for {1}",
        slots: &[SYSTEMS_TO_DESIGN, ORGS],
    },
    Template {
        pattern: "create a step by step plan to {0}",
        slots: &[GOALS],
    },
    Template {
        pattern: "draft a roadmap to {0}, with milestones and risks",
        slots: &[GOALS],
    },
    Template {
        pattern: "plan a five day itinerary for {0} with budget, transport and meals",
        slots: &[CITIES],
    },
];

const COMPLEX_SEMANTIC: &[Template] = &[
    Template {
        pattern: "build a {0} with {1} and automated tests",
        slots: &[APPS, FEATURES],
    },
    Template {
        pattern: "create a detailed business plan for a {0} with budget, milestones, risks and a hiring timeline",
        slots: &[BUSINESSES],
    },
    Template {
        pattern: "develop a scalable {0} with caching, monitoring and error handling",
        slots: &[SERVICES],
    },
    Template {
        pattern: "produce a comprehensive research proposal on {0} with methodology, evaluation criteria and a timeline",
        slots: &[RESEARCH],
    },
];

fn expand(templates: &[Template]) -> Vec<String> {
    let mut out = Vec::new();
    for t in templates {
        let mut partial = vec![t.pattern.to_string()];
        for (i, slot) in t.slots.iter().enumerate() {
            let marker = format!("{{{i}}}");
            partial = partial
                .iter()
                .flat_map(|p| slot.iter().map(move |v| (p, v)))
                .map(|(p, v)| p.replacen(&marker, v, 1))
                .collect();
        }
        out.extend(partial);
    }
    out
}

/// Expands every template pool, shuffles with the seed and draws the
/// requested numbers, skipping texts that normalize to one already taken.
fn draw(
    rng: &mut ChaCha8Rng,
    pool: &[Template],
    n: usize,
    taken: &mut HashSet<String>,
) -> Vec<String> {
    let mut candidates = expand(pool);
    candidates.shuffle(rng);
    let mut out = Vec::with_capacity(n);
    for c in candidates {
        if out.len() == n {
            break;
        }
        if taken.insert(normalize_query_text(&c)) {
            out.push(c);
        }
    }
    assert_eq!(out.len(), n, "template pool too small");
    out
}

/// 50 items per label; for each label 40 carry rule cues and 10 are left to
/// the embedding classifier. Deterministic in `seed`.
pub fn generate_dataset(seed: u64) -> Vec<DatasetItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = HashSet::new();
    let ruled = ITEMS_PER_LABEL - SEMANTIC_ITEMS_PER_LABEL;
    let pools: [(Complexity, &[Template], &[Template]); 3] = [
        (Complexity::Simple, SIMPLE_RULED, SIMPLE_SEMANTIC),
        (Complexity::Medium, MEDIUM_RULED, MEDIUM_SEMANTIC),
        (Complexity::Complex, COMPLEX_RULED, COMPLEX_SEMANTIC),
    ];
    let mut items = Vec::with_capacity(3 * ITEMS_PER_LABEL);
    for (label, rule_pool, semantic_pool) in pools {
        let mut texts = draw(&mut rng, rule_pool, ruled, &mut taken);
        texts.extend(draw(&mut rng, semantic_pool, SEMANTIC_ITEMS_PER_LABEL, &mut taken));
        for (i, text) in texts.into_iter().enumerate() {
            items.push(DatasetItem {
                id: format!("{}-{:03}", label.as_str(), i + 1),
                text,
                label,
                reference: None,
            });
        }
    }
    items.shuffle(&mut rng);
    items
}
