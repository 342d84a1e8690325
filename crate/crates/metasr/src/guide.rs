//! The book chapters, doc-tested.
//!
//! mdBook renders `book/` but cannot run its code fences against this crate,
//! so each chapter is also included here as module documentation; `cargo
//! test --doc` then compiles and runs every snippet, keeping the guide and
//! the library in sync.

// Chapters are added as they are written; see book/src/SUMMARY.md.
