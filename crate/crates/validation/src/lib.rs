//! Holds the `acceptance` test target, which prints one PASS/FAIL line per criterion.
//!
//! Kept in its own package so `cargo test --workspace` runs it after every other test binary.
