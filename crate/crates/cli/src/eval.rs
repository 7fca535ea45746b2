//! Citation-accuracy evaluation over a fixture of question/source pairs.

use std::path::Path;

use anyhow::{Context, Result};
use rag_core::collection::QueryOptions;
use rag_core::Engine;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub question: String,
    #[serde(alias = "must_cite", alias = "must_cite_source")]
    pub expected_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub question: String,
    pub expected_source: String,
    pub cited: Vec<String>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub collection: String,
    pub cases: usize,
    pub passed: usize,
    pub accuracy_percent: f64,
    pub results: Vec<CaseResult>,
}

pub fn load_cases(path: &Path) -> Result<Vec<Case>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a list of {{question, expected_source}}", path.display()))
}

/// A cited source matches when equal to the expected one or when it is a
/// path ending in it, so fixtures can name files relative to any root.
pub fn cites(source: &str, expected: &str) -> bool {
    source == expected || source.ends_with(&format!("/{expected}"))
}

pub fn accuracy(passed: usize, cases: usize) -> f64 {
    if cases == 0 {
        100.0
    } else {
        passed as f64 * 100.0 / cases as f64
    }
}

pub fn run(engine: &Engine, collection: &str, cases: &[Case], opts: QueryOptions) -> Report {
    let results: Vec<CaseResult> = cases
        .iter()
        .map(|case| match engine.query(collection, &case.question, &[], opts) {
            Ok(answer) => {
                let cited: Vec<String> = answer.sources.iter().map(|s| s.source.clone()).collect();
                CaseResult {
                    question: case.question.clone(),
                    expected_source: case.expected_source.clone(),
                    passed: cited.iter().any(|s| cites(s, &case.expected_source)),
                    cited,
                    error: None,
                }
            }
            Err(e) => CaseResult {
                question: case.question.clone(),
                expected_source: case.expected_source.clone(),
                cited: Vec::new(),
                passed: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let passed = results.iter().filter(|r| r.passed).count();
    Report {
        collection: collection.to_string(),
        cases: results.len(),
        passed,
        accuracy_percent: accuracy(passed, results.len()),
        results,
    }
}
