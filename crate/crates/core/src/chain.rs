//! The question-answering chain: retrieve, assemble, render, chat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::defaults;
use crate::embed::Embedder;
use crate::llm::{ChatClient, ChatMessage, ChatParams, LlmError, Role};
use crate::prompt::{assemble_context, estimate_tokens, ContextBudget, PromptError, PromptTemplate};
use crate::retrieve::{RetrievalConfig, RetrieveError, Retrieved, Retriever, SearchMode};
use crate::vectorstore::{ScoredChunk, StoreError, VectorStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieve,
    Assemble,
    Render,
    Chat,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Retrieve => "retrieve",
            Stage::Assemble => "assemble",
            Stage::Render => "render",
            Stage::Chat => "chat",
        })
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("retrieve: {0}")]
    Retrieve(#[from] RetrieveError),
    #[error("assemble: {0}")]
    Assemble(PromptError),
    #[error("render: {0}")]
    Render(PromptError),
    #[error("chat: {0}")]
    Chat(#[from] LlmError),
}

impl ChainError {
    pub fn stage(&self) -> Stage {
        match self {
            ChainError::Retrieve(_) => Stage::Retrieve,
            ChainError::Assemble(_) => Stage::Assemble,
            ChainError::Render(_) => Stage::Render,
            ChainError::Chat(_) => Stage::Chat,
        }
    }

    pub fn is_empty_store(&self) -> bool {
        matches!(self, ChainError::Retrieve(RetrieveError::Store(StoreError::EmptyStore)))
    }

    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, ChainError::Assemble(PromptError::BudgetExhausted { .. }))
    }
}

/// Attribution for one chunk that was placed in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRef {
    pub source: String,
    pub seq: usize,
    pub score: f64,
    pub chunk_id: String,
    pub doc_id: String,
}

impl From<&ScoredChunk> for SourceRef {
    fn from(c: &ScoredChunk) -> Self {
        Self {
            source: c.chunk.source().to_string(),
            seq: c.chunk.seq,
            score: c.score,
            chunk_id: c.chunk.id.clone(),
            doc_id: c.chunk.doc_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    /// The model output, verbatim.
    pub text: String,
    /// Included chunks, in rank order.
    pub sources: Vec<SourceRef>,
    pub prompt_tokens_est: usize,
    pub retrieval_mode: SearchMode,
    pub warnings: Vec<String>,
}

/// Renders the most recent `turns` messages as a transcript block.
pub fn history_block(history: &[ChatMessage], turns: usize) -> String {
    let recent = &history[history.len().saturating_sub(turns)..];
    if recent.is_empty() {
        return String::new();
    }
    let mut out = String::from("Conversation so far:\n");
    for m in recent {
        let who = match m.role {
            Role::User => "User",
            Role::Assistant => "Assistant",
            Role::System => "System",
        };
        out.push_str(who);
        out.push_str(": ");
        out.push_str(&m.content);
        out.push('\n');
    }
    out.push('\n');
    out
}

/// One QA pipeline over a store. Cheap to build per request.
#[derive(Clone, Copy)]
pub struct QaChain<'a> {
    pub store: &'a VectorStore,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn ChatClient,
    pub chat_params: &'a ChatParams,
    /// How many trailing history messages to include.
    pub history_turns: usize,
}

impl<'a> QaChain<'a> {
    pub fn new(
        store: &'a VectorStore,
        embedder: &'a dyn Embedder,
        llm: &'a dyn ChatClient,
        chat_params: &'a ChatParams,
    ) -> Self {
        Self {
            store,
            embedder,
            llm,
            chat_params,
            history_turns: defaults::HISTORY_TURNS,
        }
    }

    pub fn answer_question(
        &self,
        question: &str,
        cfg: &RetrievalConfig,
        budget: &ContextBudget,
        template: &PromptTemplate,
    ) -> Result<Answer, ChainError> {
        self.chat_session(&[], question, cfg, budget, template)
    }

    /// As [`answer_question`](Self::answer_question), with recent history
    /// prepended to the prompt. History is charged to the budget before any
    /// context chunk.
    pub fn chat_session(
        &self,
        history: &[ChatMessage],
        question: &str,
        cfg: &RetrievalConfig,
        budget: &ContextBudget,
        template: &PromptTemplate,
    ) -> Result<Answer, ChainError> {
        template.validate().map_err(ChainError::Render)?;
        budget.validate().map_err(ChainError::Assemble)?;
        let retriever = Retriever::new(self.store, self.embedder);
        let Retrieved { chunks, mut warnings } = if cfg.multi_query {
            retriever.multi_query_retrieve(question, cfg, self.llm, self.chat_params)?
        } else {
            Retrieved {
                chunks: retriever.retrieve(question, cfg)?,
                warnings: Vec::new(),
            }
        };

        let history = history_block(history, self.history_turns);
        let history_tokens = estimate_tokens(&history);
        if history_tokens >= budget.prompt_allowance() {
            return Err(ChainError::Assemble(PromptError::BudgetExhausted {
                needed: history_tokens + budget.reserved_answer_tokens,
                available: budget.max_prompt_tokens,
            }));
        }
        let skeleton = template.render(question, "").map_err(ChainError::Render)?;
        let overhead = history_tokens + estimate_tokens(&skeleton);
        let ctx = assemble_context(&chunks, budget, overhead).map_err(ChainError::Assemble)?;
        if ctx.included.len() < chunks.len() {
            warnings.push(format!(
                "context budget admitted {} of {} retrieved chunks",
                ctx.included.len(),
                chunks.len()
            ));
        }
        let prompt = history + &template.render(question, &ctx.text).map_err(ChainError::Render)?;
        let prompt_tokens_est = estimate_tokens(&prompt);
        let text = self.llm.chat(&[ChatMessage::user(prompt)], self.chat_params)?;
        Ok(Answer {
            text,
            sources: ctx.included.iter().map(SourceRef::from).collect(),
            prompt_tokens_est,
            retrieval_mode: cfg.mode,
            warnings,
        })
    }
}
