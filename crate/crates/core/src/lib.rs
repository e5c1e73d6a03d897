//! Question-transducer middleware for interactive question answering.
//!
//! A question-transducer sits between the asker and the answering model. It
//! classifies the question at the end of a conversation context as
//! incomplete, ambiguous or normal, and rewrites deficient questions (or
//! asks a clarifying question) before the responder answers.
//!
//! Modules:
//! - [`protocol`]: messages, turns, interactions, contexts, transcripts
//! - [`characterize`]: retroactive flagging and dataset categories
//! - [`agent`]: the zero-shot ReAct agent loop, prompts and output parsing
//! - [`llm_backend`]: HTTP and scripted chat-completion backends
//! - [`transducer`]: classify, resolve, transduce
//! - [`pipeline`]: multi-turn sessions with or without the transducer
//! - [`evaluation`]: dataset ingestion, grading and reports
//! - [`service`]: HTTP session service

pub mod agent;
pub mod characterize;
pub mod demo;
pub mod evaluation;
pub mod llm_backend;
pub mod pipeline;
pub mod protocol;
pub mod service;
pub mod transducer;
