//! Level-2 routing: deterministic lexical and structural pattern matching.
//!
//! The score of a query is the largest contribution among the rules that
//! fire, plus a small bonus for length. Stacking weak signals never outranks
//! one strong signal. The confidence comes from the rule that supplied the
//! winning contribution; a query no rule recognizes gets a low confidence so
//! that the router escalates it to the embedding classifier.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::ComplexityScore;

/// Reference rule table shipped with the crate.
pub const REFERENCE_RULES: &str = include_str!("../data/rules.toml");

pub const NO_MATCH_BASE_SCORE: i64 = 10;
pub const NO_MATCH_CONFIDENCE: f64 = 0.3;
pub const MAX_LENGTH_BONUS: usize = 15;
pub const TOKENS_PER_BONUS_POINT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCategory {
    Greeting,
    FactualShort,
    Explanation,
    Math,
    Code,
    MultiStep,
}

impl RuleCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleCategory::Greeting => "greeting",
            RuleCategory::FactualShort => "factual_short",
            RuleCategory::Explanation => "explanation",
            RuleCategory::Math => "math",
            RuleCategory::Code => "code",
            RuleCategory::MultiStep => "multi_step",
        }
    }
}

impl fmt::Display for RuleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Regex,
    Keywords,
}

/// One row of the rules file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRule {
    pub id: String,
    pub category: RuleCategory,
    pub kind: MatcherKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
    pub score_contribution: i64,
    pub confidence_weight: f64,
    /// Rule only fires when the query has fewer than this many tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    /// Phrases this rule is expected to classify; checked by tests.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RulesFile {
    #[serde(rename = "rule", default)]
    rules: Vec<PatternRule>,
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("rule table is empty")]
    Empty,
    #[error("duplicate rule id '{0}'")]
    DuplicateId(String),
    #[error("rule '{id}': invalid pattern: {source}")]
    BadPattern {
        id: String,
        #[source]
        source: regex::Error,
    },
    #[error("rule '{id}': {reason}")]
    Invalid { id: String, reason: String },
    #[error("rules file {path}: {reason}")]
    File { path: String, reason: String },
}

enum Matcher {
    Regex(Regex),
    Keywords {
        words: HashSet<String>,
        phrases: Vec<String>,
    },
}

struct CompiledRule {
    def: PatternRule,
    matcher: Matcher,
}

impl CompiledRule {
    fn matches(&self, text: &str, words: &[&str], padded: &str) -> bool {
        if let Some(max) = self.def.max_tokens {
            if text.split_whitespace().count() >= max {
                return false;
            }
        }
        match &self.matcher {
            Matcher::Regex(re) => re.is_match(text),
            Matcher::Keywords { words: set, phrases } => {
                words.iter().any(|w| set.contains(*w))
                    || phrases.iter().any(|p| padded.contains(p.as_str()))
            }
        }
    }
}

/// Outcome of rule classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub score: ComplexityScore,
    pub confidence: f64,
    pub matched_rule_ids: Vec<String>,
    pub category_hint: Option<RuleCategory>,
}

/// Compiled, immutable rule table.
pub struct RuleEngine {
    rules: Vec<CompiledRule>,
}

impl fmt::Debug for RuleEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuleEngine")
            .field("rules", &self.rules.len())
            .finish()
    }
}

/// Parses a rules document (TOML, one `[[rule]]` table per rule).
pub fn parse_rules(src: &str) -> Result<Vec<PatternRule>, RulesError> {
    let file: RulesFile = toml::from_str(src).map_err(|e| RulesError::File {
        path: "<inline>".into(),
        reason: e.to_string(),
    })?;
    Ok(file.rules)
}

pub fn load_rules_file(path: &Path) -> Result<RuleEngine, RulesError> {
    let src = std::fs::read_to_string(path).map_err(|e| RulesError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let table = parse_rules(&src).map_err(|e| match e {
        RulesError::File { reason, .. } => RulesError::File {
            path: path.display().to_string(),
            reason,
        },
        other => other,
    })?;
    compile_rules(table)
}

pub fn compile_rules(table: Vec<PatternRule>) -> Result<RuleEngine, RulesError> {
    if table.is_empty() {
        return Err(RulesError::Empty);
    }
    let mut seen = HashSet::new();
    let mut rules = Vec::with_capacity(table.len());
    for def in table {
        if !seen.insert(def.id.clone()) {
            return Err(RulesError::DuplicateId(def.id));
        }
        let invalid = |reason: &str| RulesError::Invalid {
            id: def.id.clone(),
            reason: reason.to_string(),
        };
        if !(0..=100).contains(&def.score_contribution) {
            return Err(invalid("score_contribution must be within 0..=100"));
        }
        if !(0.0..=1.0).contains(&def.confidence_weight) {
            return Err(invalid("confidence_weight must be within [0, 1]"));
        }
        let matcher = match def.kind {
            MatcherKind::Regex => {
                let pattern = def
                    .pattern
                    .as_deref()
                    .ok_or_else(|| invalid("regex rule needs a pattern"))?;
                let re = Regex::new(pattern).map_err(|source| RulesError::BadPattern {
                    id: def.id.clone(),
                    source,
                })?;
                Matcher::Regex(re)
            }
            MatcherKind::Keywords => {
                if def.keywords.is_empty() {
                    return Err(invalid("keyword rule needs at least one keyword"));
                }
                let mut words = HashSet::new();
                let mut phrases = Vec::new();
                for kw in &def.keywords {
                    let toks = keyword_tokens(kw);
                    match toks.len() {
                        0 => return Err(invalid("keyword contains no alphanumeric text")),
                        1 => {
                            words.insert(toks[0].to_string());
                        }
                        _ => phrases.push(format!(" {} ", toks.join(" "))),
                    }
                }
                Matcher::Keywords { words, phrases }
            }
        };
        rules.push(CompiledRule { def, matcher });
    }
    Ok(RuleEngine { rules })
}

fn keyword_tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn length_bonus(token_count: usize) -> i64 {
    (token_count / TOKENS_PER_BONUS_POINT).min(MAX_LENGTH_BONUS) as i64
}

impl RuleEngine {
    pub fn reference() -> Self {
        compile_rules(parse_rules(REFERENCE_RULES).expect("reference rules parse"))
            .expect("reference rules compile")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn categories(&self) -> BTreeSet<RuleCategory> {
        self.rules.iter().map(|r| r.def.category).collect()
    }

    pub fn definitions(&self) -> impl Iterator<Item = &PatternRule> {
        self.rules.iter().map(|r| &r.def)
    }

    /// SHA-256 over the canonical JSON of the rule definitions.
    pub fn fingerprint(&self) -> String {
        let defs: Vec<&PatternRule> = self.definitions().collect();
        let json = serde_json::to_vec(&defs).expect("rules serialize");
        hex::encode(Sha256::digest(json))
    }

    /// Classifies already-normalized text.
    pub fn classify(&self, text: &str) -> RuleVerdict {
        let token_count = text.split_whitespace().count();
        if token_count == 0 {
            return RuleVerdict {
                score: ComplexityScore::MIN,
                confidence: 1.0,
                matched_rule_ids: Vec::new(),
                category_hint: Some(RuleCategory::Greeting),
            };
        }
        let words = keyword_tokens(text);
        let padded = format!(" {} ", words.join(" "));
        let bonus = length_bonus(token_count);

        let mut matched = Vec::new();
        let mut best: Option<&PatternRule> = None;
        for rule in &self.rules {
            if !rule.matches(text, &words, &padded) {
                continue;
            }
            matched.push(rule.def.id.clone());
            let better = match best {
                None => true,
                Some(b) => {
                    rule.def.score_contribution > b.score_contribution
                        || (rule.def.score_contribution == b.score_contribution
                            && rule.def.confidence_weight > b.confidence_weight)
                }
            };
            if better {
                best = Some(&rule.def);
            }
        }

        match best {
            Some(rule) => RuleVerdict {
                score: ComplexityScore::clamped(rule.score_contribution + bonus),
                confidence: rule.confidence_weight,
                matched_rule_ids: matched,
                category_hint: Some(rule.category),
            },
            None => RuleVerdict {
                score: ComplexityScore::clamped(NO_MATCH_BASE_SCORE + bonus),
                confidence: NO_MATCH_CONFIDENCE,
                matched_rule_ids: matched,
                category_hint: None,
            },
        }
    }
}

pub fn classify_rules(engine: &RuleEngine, text: &str) -> RuleVerdict {
    engine.classify(text)
}

/// Low-confidence verdicts go to the next level. Strict less-than.
pub fn needs_escalation(verdict: &RuleVerdict, escalation_threshold: f64) -> bool {
    verdict.confidence < escalation_threshold
}
