// SPDX-License-Identifier: MIT OR Apache-2.0

//! Holds no code. The acceptance suite lives in `tests/acceptance.rs`.
