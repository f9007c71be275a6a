//! Acceptance checks; see `tests/acceptance.rs`. Run them with
//! `cargo test -p iccv-validation --test acceptance`, optionally followed by
//! `-- <criterion numbers>`.
