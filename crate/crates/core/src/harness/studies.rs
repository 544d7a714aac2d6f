use serde_json::json;

use crate::benchmark::{select_benchmarks, BenchmarkResult};
use crate::classifier::{ClassifierModel, Priors};
use crate::data::fingerprints;
use crate::error::Result;
use crate::simulation::{default_portal_profile, GeometryProfile};

use super::confusion::{flag_disagreements, run_confusion_multi, ConfusionMatrix, Evaluator, Truth};
use super::presets::{
    build_mixture_catalog_29, model_for, table3_config, REFERENCE_BENCHMARKS,
};
use super::report::{config_hash, Check, ClassInfo, Fingerprint, Report};
use super::screening::{run_screening_study, RandomCatalogSpec};

/// Replicates per class in the single-class and mixture studies.
pub const DEFAULT_REPLICATES: usize = 10_000;
/// Catalogs and replicates per class in the randomized screening study.
pub const DEFAULT_SETS: usize = 50;
pub const DEFAULT_SCREENING_REPLICATES: usize = 1000;

pub fn dataset_fingerprints() -> Vec<Fingerprint> {
    fingerprints()
        .into_iter()
        .map(|(name, sha256)| Fingerprint {
            name: name.to_string(),
            sha256,
        })
        .collect()
}

fn profile_json(p: &GeometryProfile) -> serde_json::Value {
    json!({
        "distances": p.distances(),
        "attenuation": p.attenuation().name(),
        "gain": p.gain(),
    })
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn rate(m: &ConfusionMatrix, truth: &str, assigned: &str) -> f64 {
    m.rate(truth, assigned).expect("preset labels exist")
}

/// Eight pure classes at unit quantity with man-made priors of 1e-9. Also
/// classifies the same scans under uniform priors and counts dangerous-flag
/// flips between the two.
pub fn table3(seed: u64, replicates: usize) -> Result<Report> {
    let config = table3_config(seed, replicates)?;
    let uniform = model_for(&config.truths, &Priors::Uniform)?;
    let rare = Evaluator::new("rare man-made priors", &config.model);
    let flat = Evaluator::new("uniform priors", &uniform);
    let matrices = run_confusion_multi(
        &config.truths,
        &config.profile,
        None,
        seed,
        replicates,
        &[rare, flat],
    )?;
    let flips: u64 =
        flag_disagreements(&config.truths, &config.profile, seed, replicates, rare, flat)?
            .iter()
            .sum();

    let m = &matrices[0];
    let mut checks = Vec::new();
    let diagonal: Vec<(String, f64)> = ["A", "B", "C", "D", "F", "G"]
        .iter()
        .map(|&l| (l.to_string(), rate(m, l, l)))
        .collect();
    let worst = diagonal
        .iter()
        .cloned()
        .fold(("".to_string(), f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    checks.push(Check::new(
        "diagonal A-D, F, G >= 0.9995",
        worst.1 >= 0.9995,
        format!("lowest is {} at {:.4}", worst.0, worst.1),
    ));
    let eh = rate(m, "E", "H");
    checks.push(Check::new(
        "tile assigned background in [0.053, 0.073]",
        in_range(eh, 0.053, 0.073),
        format!("{eh:.4}"),
    ));
    let he = rate(m, "H", "E");
    checks.push(Check::new(
        "background assigned tile in [0.101, 0.121]",
        in_range(he, 0.101, 0.121),
        format!("{he:.4}"),
    ));
    checks.push(Check::new(
        "no man-made/NORM flips between prior presets",
        flips == 0,
        format!("{flips} flips over {} scans", replicates * config.truths.len()),
    ));

    Ok(Report {
        experiment: "table3".into(),
        seed,
        replicates,
        profile: config.profile.name(),
        priors: Priors::RareManMade.name().into(),
        config_hash: config_hash(&json!({
            "experiment": "table3",
            "seed": seed,
            "replicates": replicates,
            "profile": profile_json(&config.profile),
            "truths": config.truths,
            "priors": ["rare-man-made", "uniform"],
        })),
        datasets: dataset_fingerprints(),
        classes: config.truths.iter().map(ClassInfo::from).collect(),
        matrices,
        benchmarks: None,
        screening: None,
        checks,
    })
}

/// Largest per-class difference in dangerous-screening rate between two
/// matrices over the same classes, and the class where it occurs.
pub fn screening_parity(all: &ConfusionMatrix, subset: &ConfusionMatrix) -> (f64, String) {
    let a = all.dangerous_rates();
    let b = subset.dangerous_rates();
    a.iter()
        .zip(&b)
        .zip(&all.row_labels)
        .map(|((x, y), l)| ((x - y).abs(), l.clone()))
        .fold((0.0, String::new()), |acc, v| if v.0 > acc.0 { v } else { acc })
}

fn benchmark_model(truths: &[Truth], labels: &[String], priors: &Priors) -> Result<ClassifierModel> {
    let chosen: Vec<Truth> = labels
        .iter()
        .filter_map(|l| truths.iter().find(|t| &t.label == l).cloned())
        .collect();
    model_for(&chosen, priors)
}

/// The 29-class mixture study: full classification, benchmark selection,
/// and screening with the selected and the reference benchmark sets.
pub fn table4(seed: u64, replicates: usize) -> Result<Report> {
    let (catalog, truths) = build_mixture_catalog_29()?;
    let profile = default_portal_profile();
    let priors = Priors::Uniform;
    let selection = select_benchmarks(&catalog)?;
    let full = model_for(&truths, &priors)?;
    let selected = selection.build_model(&catalog, &priors)?;
    let reference_labels: Vec<String> =
        REFERENCE_BENCHMARKS.iter().map(|s| s.to_string()).collect();
    let reference = benchmark_model(&truths, &reference_labels, &priors)?;
    let matrices = run_confusion_multi(
        &truths,
        &profile,
        None,
        seed,
        replicates,
        &[
            Evaluator::new("all classes", &full),
            Evaluator::new("selected benchmarks", &selected),
            Evaluator::new("reference benchmarks", &reference),
        ],
    )?;
    let checks = table4_checks(&matrices, &selection);
    Ok(Report {
        experiment: "table4".into(),
        seed,
        replicates,
        profile: profile.name(),
        priors: priors.name().into(),
        config_hash: config_hash(&json!({
            "experiment": "table4",
            "seed": seed,
            "replicates": replicates,
            "profile": profile_json(&profile),
            "truths": truths,
            "priors": priors.name(),
            "reference_benchmarks": REFERENCE_BENCHMARKS,
        })),
        datasets: dataset_fingerprints(),
        classes: truths.iter().map(ClassInfo::from).collect(),
        matrices,
        benchmarks: Some(selection),
        screening: None,
        checks,
    })
}

fn table4_checks(matrices: &[ConfusionMatrix], selection: &BenchmarkResult) -> Vec<Check> {
    let full = &matrices[0];
    let reference = &matrices[2];
    let mut checks = Vec::new();

    let (worst_mis, worst_label) = (0..full.rows())
        .filter(|&r| full.row_dangerous[r])
        .map(|r| (full.misclassification(r).unwrap_or(1.0), full.row_labels[r].clone()))
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a });
    checks.push(Check::new(
        "dangerous total misclassification < 0.005",
        worst_mis < 0.005,
        format!("highest is {worst_label} at {worst_mis:.4}"),
    ));
    let tb = rate(full, "Tile", "Background");
    checks.push(Check::new(
        "tile assigned background within 0.06 +- 0.02",
        in_range(tb, 0.04, 0.08),
        format!("{tb:.4}"),
    ));
    let bt = rate(full, "Background", "Tile");
    checks.push(Check::new(
        "background assigned tile within 0.11 +- 0.02",
        in_range(bt, 0.09, 0.13),
        format!("{bt:.4}"),
    ));
    let salt_row = full.row_index("Salt").expect("preset label");
    let salt = full.dangerous_rates()[salt_row];
    checks.push(Check::new(
        "salt screened dangerous within 0.011 +- 0.01",
        in_range(salt, 0.001, 0.021),
        format!("{salt:.4}"),
    ));

    let mut chosen = selection.labels();
    chosen.sort();
    let mut expected: Vec<String> = REFERENCE_BENCHMARKS.iter().map(|s| s.to_string()).collect();
    expected.sort();
    let missing: Vec<&String> = expected.iter().filter(|l| !chosen.contains(l)).collect();
    let extra: Vec<&String> = chosen.iter().filter(|l| !expected.contains(l)).collect();
    checks.push(Check::new(
        "selected benchmarks equal the reference ten",
        chosen == expected,
        format!(
            "{} selected; missing [{}]; extra [{}]",
            chosen.len(),
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
            extra.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ),
    ));

    let (gap, at) = screening_parity(full, reference);
    checks.push(Check::new(
        "reference-benchmark screening within 0.005 of all classes",
        gap <= 0.005,
        if at.is_empty() {
            format!("largest gap {gap:.4}")
        } else {
            format!("largest gap {gap:.4} at {at}")
        },
    ));
    let floor = [full, reference]
        .iter()
        .flat_map(|m| {
            let rates = m.dangerous_rates();
            (0..m.rows())
                .filter(|&r| m.row_dangerous[r])
                .map(move |r| rates[r])
                .collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "every dangerous class detected at >= 0.997",
        floor >= 0.997,
        format!("lowest detection rate {floor:.4}"),
    ));
    checks
}

/// Randomized catalogs of 75 dangerous and 25 nondangerous classes.
pub fn screening100(seed: u64, sets: usize, replicates: usize) -> Result<Report> {
    let spec = RandomCatalogSpec::standard(seed);
    let profile = default_portal_profile();
    let summary = run_screening_study(&spec, &profile, sets, replicates)?;
    let checks = vec![
        Check::new(
            "median benchmark count <= 10",
            summary.benchmark_count.median <= 10.0,
            format!(
                "median {:.1}, mean {:.2}",
                summary.benchmark_count.median, summary.benchmark_count.mean
            ),
        ),
        Check::new(
            "mean dangerous -> nondangerous rate <= 0.01",
            summary.dangerous_to_nondangerous.mean <= 0.01,
            format!("{:.4}", summary.dangerous_to_nondangerous.mean),
        ),
        Check::new(
            "mean nondangerous -> dangerous rate <= 0.02",
            summary.nondangerous_to_dangerous.mean <= 0.02,
            format!("{:.4}", summary.nondangerous_to_dangerous.mean),
        ),
    ];
    Ok(Report {
        experiment: "screening100".into(),
        seed,
        replicates,
        profile: profile.name(),
        priors: Priors::Uniform.name().into(),
        config_hash: config_hash(&json!({
            "experiment": "screening100",
            "seed": seed,
            "sets": sets,
            "replicates": replicates,
            "profile": profile_json(&profile),
            "catalog": spec,
        })),
        datasets: dataset_fingerprints(),
        classes: Vec::new(),
        matrices: Vec::new(),
        benchmarks: None,
        screening: Some(summary),
        checks,
    })
}
