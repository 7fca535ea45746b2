//! Retrieval-augmented question answering over enterprise documents.
//!
//! The pipeline runs in six stages, each in its own module:
//!
//! 1. [`ingest`] loads text, HTML, web pages and structured files into [`Document`]s.
//! 2. [`chunker`] splits documents into size-bounded [`Chunk`]s.
//! 3. [`embed`] turns text into [`EmbeddingVector`]s.
//! 4. [`vectorstore`] indexes the vectors (exact scan and HNSW) and persists them.
//! 5. [`retrieve`] finds the chunks relevant to a question, optionally with
//!    model-generated query variants.
//! 6. [`prompt`], [`llm`] and [`chain`] assemble a token-budgeted prompt and
//!    produce an [`Answer`] with source attributions.
//!
//! [`config`] and [`engine`] wire those pieces together for the HTTP service
//! and the command-line tool.

pub mod chain;
pub mod chunker;
pub mod collection;
pub mod config;
pub mod embed;
pub mod engine;
pub mod http;
pub mod ingest;
pub mod llm;
pub mod prompt;
pub mod retrieve;
pub mod vectorstore;

pub use chain::{Answer, ChainError, QaChain, SourceRef, Stage};
pub use chunker::{split, Chunk, SplitConfig};
pub use collection::{Collection, IngestReport, IngestSource};
pub use config::{load_config, AppConfig};
pub use embed::{cosine_similarity, Embedder, EmbeddingVector, HashEmbedder};
pub use engine::Engine;
pub use ingest::Document;
pub use llm::{ChatClient, ChatMessage, ChatParams, MockChatClient, Role};
pub use prompt::{ContextBudget, PromptTemplate};
pub use retrieve::{RetrievalConfig, Retriever, SearchMode};
pub use vectorstore::{HnswParams, ScoredChunk, VectorStore};
