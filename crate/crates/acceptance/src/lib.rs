//! Reference implementations that the acceptance checks compare the engine
//! against. Each is written from the definition, favoring clarity over
//! speed, and shares no code with the engine.

use std::cmp::Ordering;

/// `(a·b) / (‖a‖‖b‖)` in f64, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum();
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// One stored vector as seen by the brute-force oracle.
#[derive(Debug, Clone)]
pub struct OracleRecord {
    pub id: String,
    pub insert_id: u64,
    pub vector: Vec<f32>,
}

/// Scores every record, sorts all of them by score descending then insert
/// id ascending, and keeps the first `k`.
pub fn brute_force_top_k(records: &[OracleRecord], query: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(f64, u64, &str)> = records
        .iter()
        .map(|r| (cosine(query, &r.vector), r.insert_id, r.id.as_str()))
        .collect();
    all.sort_by(|a, b| match b.0.partial_cmp(&a.0).unwrap() {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    });
    all.into_iter().take(k).map(|(s, _, id)| (id.to_string(), s)).collect()
}

/// Recall of `got` against `truth`: shared ids over `truth.len()`.
pub fn recall(got: &[String], truth: &[String]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth.iter().filter(|t| got.contains(t)).count();
    hits as f64 / truth.len() as f64
}

/// Character windows of `size` advancing by `size - overlap`, ending with
/// the first window that reaches the end of the text.
pub fn sliding_windows(text: &str, size: usize, overlap: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + size).min(chars.len());
        out.push(chars[start..end].iter().collect());
        if end == chars.len() {
            break;
        }
        start += size - overlap;
    }
    out
}

/// The head of chunk `i > 0` repeated from its predecessor: the final
/// `overlap` characters of `prev`, without leading whitespace.
pub fn expected_overlap(prev: &str, overlap: usize) -> String {
    let chars: Vec<char> = prev.chars().collect();
    let tail: String = chars[chars.len().saturating_sub(overlap)..].iter().collect();
    tail.trim_start().to_string()
}

pub fn strip_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// `ceil(chars / 4)`.
pub fn token_estimate(s: &str) -> usize {
    let n = s.chars().count();
    n / 4 + usize::from(n % 4 != 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows() {
        assert_eq!(sliding_windows("abcdef", 3, 1), ["abc", "cde", "ef"]);
        assert_eq!(sliding_windows("abc", 3, 1), ["abc"]);
        assert!(sliding_windows("", 3, 0).is_empty());
    }

    #[test]
    fn oracle_cosine() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tie_break() {
        let recs: Vec<OracleRecord> = [3u64, 1, 2]
            .iter()
            .map(|&i| OracleRecord {
                id: format!("r{i}"),
                insert_id: i,
                vector: vec![1.0, 1.0],
            })
            .collect();
        let ids: Vec<String> = brute_force_top_k(&recs, &[1.0, 1.0], 2).into_iter().map(|x| x.0).collect();
        assert_eq!(ids, ["r1", "r2"]);
    }

    #[test]
    fn estimates() {
        assert_eq!(token_estimate(""), 0);
        assert_eq!(token_estimate("abcd"), 1);
        assert_eq!(token_estimate("abcde"), 2);
        assert_eq!(expected_overlap("ab cd", 3), "cd");
    }
}
