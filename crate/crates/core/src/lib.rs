//! Generate-then-read question answering: a language model writes the
//! context documents, then reads them to answer.
//!
//! Modules follow the pipeline order: [`datamodel`] types, the
//! [`llm_backend`] client with its response cache, [`clustering`],
//! document [`generation`], the [`reader`], [`evaluation`] metrics, and the
//! [`pipeline`] that ties them together.

pub mod clustering;
pub mod datamodel;
pub mod evaluation;
pub mod generation;
pub mod llm_backend;
pub mod pipeline;
pub mod reader;
