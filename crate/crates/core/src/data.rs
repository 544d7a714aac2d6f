//! Shipped material tables.

use sha2::{Digest, Sha256};

use crate::io::{parse_model_file, ModelFile};
use crate::spectra::MaterialClass;

/// Rates adjusted within printed rounding so each row normalizes to the
/// reference spectrum. Used by every preset.
pub const BUILTIN: &str = include_str!("../data/materials.model");

/// Rates exactly as printed.
pub const BUILTIN_PRINTED: &str = include_str!("../data/materials-printed.model");

pub fn builtin() -> ModelFile {
    parse_model_file(BUILTIN).expect("shipped table parses")
}

pub fn builtin_printed() -> ModelFile {
    parse_model_file(BUILTIN_PRINTED).expect("shipped table parses")
}

/// A material from the shipped table.
///
/// # Panics
///
/// If `label` is not one of the seven shipped classes.
pub fn material(label: &str) -> MaterialClass {
    builtin()
        .material(label)
        .unwrap_or_else(|| panic!("no shipped material '{label}'"))
        .clone()
}

/// Labels of the four naturally radioactive cargo materials.
pub const NORMS: [&str; 4] = ["Fertilizer", "Tile", "Kitty litter", "Salt"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `name:sha256` for each shipped table.
pub fn fingerprints() -> Vec<(&'static str, String)> {
    vec![
        ("materials.model", sha256_hex(BUILTIN.as_bytes())),
        ("materials-printed.model", sha256_hex(BUILTIN_PRINTED.as_bytes())),
    ]
}
