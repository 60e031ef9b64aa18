//! Holds the `acceptance` test target. The package sorts after the library
//! crates, so `cargo test --workspace` runs their tests first.
