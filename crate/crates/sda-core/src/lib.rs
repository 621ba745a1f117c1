//! Core building blocks for augmenting a small pool of two-party dialogues
//! with a text-generation backend.
//!
//! The crate is organised around the stages of the augmentation pipeline:
//!
//! * [`corpus`] — dialogues, summaries, pools, tokenization, and the
//!   canonical `User A: ...` rendering.
//! * [`backend`] — decoding parameters and client traits for generation,
//!   scoring, mask infilling, and embedding, plus deterministic mocks.
//! * [`prompting`] — byte-exact construction of the three few-shot prompts
//!   (dialogue→summary, summary→summary, summary→dialogue).
//! * [`filtering`] — the summary, utterance, and dialogue filters together
//!   with their ROUGE-L and cosine-similarity primitives.
//! * [`augmentor`] — the pipeline itself: seed summarization, bootstrapped
//!   summary augmentation, and turn-by-turn dialogue generation with the
//!   stop/reset protocol.
//! * [`metrics`] — k-means, the clustering-based semantic-diversity score,
//!   distinct-n, and corpus perplexity.
//! * [`baselines`] — the mask-and-reconstruct and in-context-learning
//!   comparison augmenters.
//!
//! Everything here is pure computation over strings and vectors; file
//! formats, HTTP clients, and the command-line front end live in the `sda`
//! crate. The crate builds without the standard library (`alloc` required)
//! when the default `std` feature is disabled.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod augmentor;
pub mod backend;
pub mod baselines;
pub mod corpus;
pub mod filtering;
pub mod metrics;
pub mod prompting;

mod math;
