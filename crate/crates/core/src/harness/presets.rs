use crate::benchmark::{CatalogEntry, ClassCatalog};
use crate::classifier::{ClassifierModel, Priors};
use crate::data::{material, NORMS};
use crate::error::Result;
use crate::simulation::default_portal_profile;
use crate::spectra::{solve_quantity, MixtureSpec};

use super::confusion::{ExperimentConfig, Truth};

/// Default seed for the built-in studies.
pub const DEFAULT_SEED: u64 = 2009;

/// First-window mean count at distance zero shared by the 28 non-background
/// classes of the mixture study.
pub const FIRST_WINDOW_TARGET: f64 = 3000.0;

pub const HEU_QUANTITIES: [f64; 3] = [0.025, 0.05, 0.1];
pub const WGPU_QUANTITIES: [f64; 3] = [0.005, 0.01, 0.025];

/// Reference benchmark set for the 29-class catalog.
pub const REFERENCE_BENCHMARKS: [&str; 10] = [
    "0.005WGPu+Fertilizer",
    "0.005WGPu+Tile",
    "0.025HEU+Kitty litter",
    "0.005WGPu+Kitty litter",
    "0.01WGPu+Kitty litter",
    "0.005WGPu+Salt",
    "Fertilizer",
    "Tile",
    "Kitty litter",
    "Salt",
];

/// The eight single-material classes A to H, each at one unit.
pub fn table3_truths() -> Result<Vec<Truth>> {
    let wgpu = material("WGPu");
    let heu = material("HEU");
    let pure = |label: &str, name: &str| -> Result<Truth> {
        let m = material(name);
        let dangerous = m.dangerous();
        Ok(Truth::new(label, dangerous, MixtureSpec::pure(m, 1.0)?).with_description(name))
    };
    Ok(vec![
        pure("A", "WGPu")?,
        pure("B", "HEU")?,
        Truth::new("C", true, MixtureSpec::new(vec![(wgpu, 0.5), (heu, 0.5)])?)
            .with_description("0.5 WGPu + 0.5 HEU"),
        pure("D", "Fertilizer")?,
        pure("E", "Tile")?,
        pure("F", "Kitty litter")?,
        pure("G", "Salt")?,
        pure("H", "Background")?,
    ])
}

pub fn model_for(truths: &[Truth], priors: &Priors) -> Result<ClassifierModel> {
    ClassifierModel::from_spectra(
        truths
            .iter()
            .map(|t| (t.label.clone(), t.spectrum(), t.dangerous))
            .collect(),
        priors,
    )
}

pub fn table3_config(seed: u64, replicates: usize) -> Result<ExperimentConfig> {
    let truths = table3_truths()?;
    let model = model_for(&truths, &Priors::RareManMade)?;
    Ok(ExperimentConfig {
        name: "rare man-made priors".into(),
        truths,
        model,
        replicates,
        profile: default_portal_profile(),
        seed,
        loss: None,
        background: None,
    })
}

fn format_quantity(q: f64) -> String {
    format!("{q}")
}

/// The 29 classes of the mixture study: 24 man-made/NORM mixtures, 4 pure
/// NORMs, and background, in that order.
///
/// Every class except background has a first-window mean of
/// [`FIRST_WINDOW_TARGET`] at distance zero; the NORM quantity is solved
/// from that constraint. Background is one unit.
pub fn mixture_catalog_29() -> Result<Vec<Truth>> {
    let mut truths = Vec::with_capacity(29);
    for (man_made, quantities) in [("HEU", HEU_QUANTITIES), ("WGPu", WGPU_QUANTITIES)] {
        let source = material(man_made);
        for norm_name in NORMS {
            let norm = material(norm_name);
            for &q in &quantities {
                let remaining = FIRST_WINDOW_TARGET - q * source.rates()[0];
                let norm_quantity = solve_quantity(&norm, remaining)?;
                let mixture =
                    MixtureSpec::new(vec![(source.clone(), q), (norm.clone(), norm_quantity)])?;
                truths.push(Truth::new(
                    format!("{}{man_made}+{norm_name}", format_quantity(q)),
                    true,
                    mixture,
                ));
            }
        }
    }
    for norm_name in NORMS {
        let norm = material(norm_name);
        let q = solve_quantity(&norm, FIRST_WINDOW_TARGET)?;
        truths.push(Truth::new(norm_name, false, MixtureSpec::pure(norm, q)?));
    }
    truths.push(Truth::new(
        "Background",
        false,
        MixtureSpec::pure(material("Background"), 1.0)?,
    ));
    Ok(truths)
}

pub fn catalog_from_truths(truths: &[Truth]) -> Result<ClassCatalog> {
    ClassCatalog::new(
        truths
            .iter()
            .map(|t| CatalogEntry {
                label: t.label.clone(),
                spectrum: t.spectrum(),
                dangerous: t.dangerous,
            })
            .collect(),
    )
}

/// The mixture-study catalog together with the sources behind it.
pub fn build_mixture_catalog_29() -> Result<(ClassCatalog, Vec<Truth>)> {
    let truths = mixture_catalog_29()?;
    Ok((catalog_from_truths(&truths)?, truths))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_29_shape_and_quantities() {
        let truths = mixture_catalog_29().unwrap();
        assert_eq!(truths.len(), 29);
        assert_eq!(truths.iter().filter(|t| t.dangerous).count(), 24);
        let fert = truths.iter().find(|t| t.label == "0.025HEU+Fertilizer").unwrap();
        assert!((fert.source.components()[1].1 - 0.941).abs() < 0.01);
        let kitty = truths.iter().find(|t| t.label == "Kitty litter").unwrap();
        assert!((kitty.source.components()[0].1 - 1.759).abs() < 0.01);
        for t in &truths[..28] {
            assert!((t.source.combined_rates()[0] - 3000.0).abs() < 1e-9);
        }
        for label in REFERENCE_BENCHMARKS {
            assert!(truths.iter().any(|t| t.label == label), "{label}");
        }
    }

    #[test]
    fn table3_labels() {
        let truths = table3_truths().unwrap();
        let labels: Vec<_> = truths.iter().map(|t| t.label.as_str()).collect();
        assert_eq!(labels, ["A", "B", "C", "D", "E", "F", "G", "H"]);
        assert_eq!(
            truths.iter().filter(|t| t.dangerous).count(),
            3,
            "A to C are man-made"
        );
    }
}
