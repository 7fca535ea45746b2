//! Prompt construction: shot-style templates, token estimation, budgeted
//! context assembly and fine-tuning cost arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::defaults;
use crate::vectorstore::ScoredChunk;

pub const QUESTION_SLOT: &str = "{question}";
pub const CONTEXT_SLOT: &str = "{context}";

/// Default instruction preamble for grounded question answering.
pub const QA_SYSTEM_TEXT: &str = "You are a helpful assistant for company documents. \
Answer the question using only the context below. \
If the context does not contain the answer, say that you don't know instead of guessing.";

pub const QA_BODY: &str = "Context:\n{context}\n\nQuestion: {question}\nAnswer:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template placeholder {slot} must appear exactly once (found {count})")]
    PlaceholderMissing { slot: &'static str, count: usize },
    #[error("context budget exhausted: need {needed} tokens, {available} available")]
    BudgetExhausted { needed: usize, available: usize },
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
}

/// An input/output pair shown to the model before the real question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotExample {
    pub input: String,
    pub output: String,
}

impl ShotExample {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotKind {
    Zero,
    One,
    Few,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    pub shot_examples: Vec<ShotExample>,
    /// Must contain `{question}` and `{context}` exactly once each.
    pub body: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::qa()
    }
}

impl PromptTemplate {
    /// The grounded-QA template used by the answer chain.
    pub fn qa() -> Self {
        Self {
            system_text: QA_SYSTEM_TEXT.to_string(),
            shot_examples: Vec::new(),
            body: QA_BODY.to_string(),
        }
    }

    pub fn new(system_text: impl Into<String>, shots: Vec<ShotExample>, body: impl Into<String>) -> Result<Self, PromptError> {
        let t = Self {
            system_text: system_text.into(),
            shot_examples: shots,
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn kind(&self) -> ShotKind {
        match self.shot_examples.len() {
            0 => ShotKind::Zero,
            1 => ShotKind::One,
            _ => ShotKind::Few,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for slot in [QUESTION_SLOT, CONTEXT_SLOT] {
            let count = self.body.matches(slot).count();
            if count != 1 {
                return Err(PromptError::PlaceholderMissing { slot, count });
            }
        }
        Ok(())
    }

    /// Renders system text, then one `Example:` block per shot, then the body
    /// with both placeholders filled. Substituted text is never re-scanned
    /// for placeholders.
    pub fn render(&self, question: &str, context: &str) -> Result<String, PromptError> {
        self.validate()?;
        let mut out = String::new();
        if !self.system_text.is_empty() {
            out.push_str(&self.system_text);
            out.push_str("\n\n");
        }
        for shot in &self.shot_examples {
            out.push_str("Example:\n");
            out.push_str(&shot.input);
            out.push('\n');
            out.push_str(&shot.output);
            out.push_str("\n\n");
        }
        let q = self.body.find(QUESTION_SLOT).expect("validated");
        let c = self.body.find(CONTEXT_SLOT).expect("validated");
        let mut slots = [(q, QUESTION_SLOT, question), (c, CONTEXT_SLOT, context)];
        slots.sort_by_key(|s| s.0);
        let mut cursor = 0;
        for (pos, slot, value) in slots {
            out.push_str(&self.body[cursor..pos]);
            out.push_str(value);
            cursor = pos + slot.len();
        }
        out.push_str(&self.body[cursor..]);
        Ok(out)
    }
}

/// Token allowance for one rendered prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextBudget {
    pub max_prompt_tokens: usize,
    pub reserved_answer_tokens: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        Self {
            max_prompt_tokens: defaults::MAX_PROMPT_TOKENS,
            reserved_answer_tokens: defaults::RESERVED_ANSWER_TOKENS,
        }
    }
}

impl ContextBudget {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.max_prompt_tokens <= self.reserved_answer_tokens {
            return Err(PromptError::InvalidBudget(format!(
                "max_prompt_tokens ({}) must exceed reserved_answer_tokens ({})",
                self.max_prompt_tokens, self.reserved_answer_tokens
            )));
        }
        Ok(())
    }

    /// Tokens the rendered prompt may use.
    pub fn prompt_allowance(&self) -> usize {
        self.max_prompt_tokens.saturating_sub(self.reserved_answer_tokens)
    }
}

/// Estimated token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Attribution line placed above each included chunk.
pub fn source_line(chunk: &ScoredChunk) -> String {
    format!("[source: {} #{}]", chunk.chunk.source(), chunk.chunk.seq)
}

const BLOCK_JOIN: &str = "\n\n";

fn chunk_block(chunk: &ScoredChunk) -> String {
    format!("{}\n{}", source_line(chunk), chunk.chunk.text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledContext {
    pub text: String,
    pub included: Vec<ScoredChunk>,
    /// Sum of the per-block estimates charged against the budget.
    pub tokens: usize,
}

/// Greedily takes chunks in rank order while the overhead, the included
/// blocks and the reserved answer headroom fit the budget. Each block is
/// charged as its attribution line plus text plus the blank-line joiner, so
/// the estimate of the joined context never exceeds the charged total.
pub fn assemble_context(
    chunks: &[ScoredChunk],
    budget: &ContextBudget,
    fixed_overhead_tokens: usize,
) -> Result<AssembledContext, PromptError> {
    budget.validate()?;
    if fixed_overhead_tokens > budget.prompt_allowance() {
        return Err(PromptError::BudgetExhausted {
            needed: fixed_overhead_tokens + budget.reserved_answer_tokens,
            available: budget.max_prompt_tokens,
        });
    }
    let available = budget.prompt_allowance() - fixed_overhead_tokens;
    let mut used = 0usize;
    let mut blocks = Vec::new();
    let mut included = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        let block = chunk_block(chunk);
        let joiner = if i == 0 { "" } else { BLOCK_JOIN };
        let cost = estimate_tokens(joiner) + estimate_tokens(&block);
        if used + cost > available {
            if i == 0 {
                return Err(PromptError::BudgetExhausted {
                    needed: fixed_overhead_tokens + cost + budget.reserved_answer_tokens,
                    available: budget.max_prompt_tokens,
                });
            }
            break;
        }
        used += cost;
        blocks.push(block);
        included.push(chunk.clone());
    }
    Ok(AssembledContext {
        text: blocks.join(BLOCK_JOIN),
        included,
        tokens: used,
    })
}

/// Fine-tuning cost before rounding: `tokens × epochs × rate / 1000`.
pub fn finetune_cost_raw(training_tokens: u64, epochs: u64, rate_per_1k_tokens: f64) -> f64 {
    training_tokens as f64 * epochs as f64 * rate_per_1k_tokens / 1000.0
}

/// A non-negative amount of money in whole cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cents(pub u64);

impl Cents {
    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::fmt::Display for Cents {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Fine-tuning cost rounded half-up to whole cents.
pub fn estimate_finetune_cost(training_tokens: u64, epochs: u64, rate_per_1k_tokens: f64) -> Cents {
    let raw = finetune_cost_raw(training_tokens, epochs, rate_per_1k_tokens.max(0.0));
    // The epsilon absorbs binary representation error (e.g. 2.4 * 100 =
    // 239.99999999999997) without moving genuine half-cent boundaries.
    let cents = raw * 100.0;
    Cents((cents + 0.5 + 1e-9 * cents.max(1.0)).floor() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::Chunk;
    use std::collections::BTreeMap;

    fn scored(text: &str, rank: usize) -> ScoredChunk {
        let mut metadata = BTreeMap::new();
        metadata.insert("source".to_string(), "doc.txt".to_string());
        ScoredChunk {
            chunk: Chunk {
                id: format!("c{rank}"),
                doc_id: "d".into(),
                seq: rank,
                text: text.to_string(),
                metadata,
            },
            score: 1.0 - rank as f64 * 0.1,
            rank,
            insert_id: rank as u64,
        }
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("12345678"), 2);
        assert_eq!(estimate_tokens("123456789"), 3);
        assert_eq!(estimate_tokens(&"x".repeat(3178)), 795);
        assert_eq!(estimate_tokens("ééé"), 1);
    }

    #[test]
    fn assemble_empty() {
        let ctx = assemble_context(&[], &ContextBudget::default(), 0).unwrap();
        assert_eq!(ctx.text, "");
        assert!(ctx.included.is_empty());
    }

    #[test]
    fn assemble_respects_budget() {
        let chunks = vec![scored(&"a".repeat(400), 0), scored(&"b".repeat(400), 1)];
        // Each chunk is 100 tokens of text; allow 150 after overhead and reserve.
        let budget = ContextBudget {
            max_prompt_tokens: 260,
            reserved_answer_tokens: 100,
        };
        let ctx = assemble_context(&chunks, &budget, 10).unwrap();
        assert_eq!(ctx.included.len(), 1);
        assert!(ctx.text.starts_with("[source: doc.txt #0]\n"));
        assert!(10 + estimate_tokens(&ctx.text) + 100 <= 260);
    }

    #[test]
    fn assemble_all_fit() {
        let chunks: Vec<_> = (0..4).map(|i| scored("short", i)).collect();
        let ctx = assemble_context(&chunks, &ContextBudget::default(), 100).unwrap();
        assert_eq!(ctx.included, chunks);
        assert_eq!(ctx.text.matches("[source: doc.txt #").count(), 4);
    }

    #[test]
    fn assemble_first_does_not_fit() {
        let chunks = vec![scored(&"a".repeat(4000), 0)];
        let budget = ContextBudget {
            max_prompt_tokens: 600,
            reserved_answer_tokens: 100,
        };
        assert!(matches!(
            assemble_context(&chunks, &budget, 0),
            Err(PromptError::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn overhead_alone_exhausts() {
        let budget = ContextBudget {
            max_prompt_tokens: 300,
            reserved_answer_tokens: 100,
        };
        assert!(assemble_context(&[], &budget, 200).is_ok());
        assert!(matches!(
            assemble_context(&[], &budget, 201),
            Err(PromptError::BudgetExhausted { needed: 301, available: 300 })
        ));
    }

    #[test]
    fn budget_validation() {
        let bad = ContextBudget {
            max_prompt_tokens: 100,
            reserved_answer_tokens: 100,
        };
        assert!(matches!(assemble_context(&[], &bad, 0), Err(PromptError::InvalidBudget(_))));
    }

    #[test]
    fn zero_shot_render() {
        let t = PromptTemplate::new("Be brief.", vec![], "{context}{question}").unwrap();
        assert_eq!(t.kind(), ShotKind::Zero);
        let q = "Write a short alliterative sentence about a curious cat exploring a garden";
        let p = t.render(q, "").unwrap();
        assert!(p.contains(q));
        assert!(!p.contains("Example:"));
        assert_eq!(p, format!("Be brief.\n\n{q}"));
    }

    #[test]
    fn one_and_few_shot_render() {
        let peter = "Peter Piper picked a peck of pickled peppers.";
        let t = PromptTemplate::new(
            "",
            vec![ShotExample::new(peter, "Curious cats climb.")],
            "Q: {question}\nC: {context}",
        )
        .unwrap();
        assert_eq!(t.kind(), ShotKind::One);
        let q = "Write a short alliterative sentence about a curious cat exploring a garden";
        let p = t.render(q, "CTX").unwrap();
        assert_eq!(p.matches(peter).count(), 1);
        assert!(p.find(peter).unwrap() < p.find(q).unwrap());
        assert_eq!(p.matches("CTX").count(), 1);

        let few = PromptTemplate::new(
            "",
            vec![ShotExample::new("a", "b"), ShotExample::new("c", "d")],
            "{question}{context}",
        )
        .unwrap();
        assert_eq!(few.kind(), ShotKind::Few);
        assert_eq!(few.render("Q", "").unwrap(), "Example:\na\nb\n\nExample:\nc\nd\n\nQ");
    }

    #[test]
    fn placeholders_validated() {
        assert!(matches!(
            PromptTemplate::new("", vec![], "no slots"),
            Err(PromptError::PlaceholderMissing { slot: "{question}", count: 0 })
        ));
        assert!(PromptTemplate::new("", vec![], "{question}{question}{context}").is_err());
        let broken = PromptTemplate {
            body: "{question}".into(),
            ..PromptTemplate::qa()
        };
        assert!(matches!(
            broken.render("q", "c"),
            Err(PromptError::PlaceholderMissing { slot: "{context}", .. })
        ));
    }

    #[test]
    fn substitution_is_single_pass() {
        let t = PromptTemplate::qa();
        let p = t.render("what is {context}?", "ctx with {question}").unwrap();
        assert!(p.contains("Question: what is {context}?"));
        assert!(p.contains("Context:\nctx with {question}"));
    }

    #[test]
    fn finetune_cost() {
        assert_eq!(estimate_finetune_cost(100_000, 3, 0.008), Cents(240));
        assert_eq!(estimate_finetune_cost(100_000, 3, 0.008).to_string(), "2.40");
        assert_eq!(estimate_finetune_cost(0, 5, 0.008), Cents(0));
        assert_eq!(estimate_finetune_cost(1000, 1, 0.008), Cents(1));
        assert_eq!(estimate_finetune_cost(1000, 1, 0.004), Cents(0));
        assert_eq!(estimate_finetune_cost(1000, 1, 0.005), Cents(1));
        // Back-solved rate: 2.40 / (100000 * 3 / 1000) = 0.008.
        assert!((2.40f64 / (100_000.0 * 3.0 / 1000.0) - 0.008).abs() < 1e-15);
    }
}
