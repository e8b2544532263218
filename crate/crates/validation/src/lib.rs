//! Acceptance checks for `hybridflow` live in `tests/acceptance.rs`; run them
//! with `cargo test -p hybridflow-validation -- --nocapture`.
