//! Online prompt-evolution engine.
//!
//! Consumes agent execution traces, synthesizes natural-language guidelines
//! via meta-agent calls, routes them into tactical (per-task) and strategic
//! (persistent) memories, consolidates the strategic memory when it grows
//! past its caps, and re-assembles agent prompts between steps.
//!
//! The engine is deterministic end to end when driven by the scripted
//! provider and the synthetic environment, which is what the test suites
//! rely on.

#![forbid(unsafe_code)]

pub mod assembly;
pub mod config;
pub mod domain;
pub mod gateway;
pub mod memory;
pub mod orchestrator;
pub mod routing;
pub mod synthesis;
pub mod testkit;
