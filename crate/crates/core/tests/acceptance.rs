//! Acceptance suite. Runs every criterion at its pinned tolerance, prints
//! one PASS/FAIL line each, and exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};

use rpm_bayes::benchmark::select_benchmarks;
use rpm_bayes::classifier::{posterior_probabilities, ClassifierModel, Priors};
use rpm_bayes::cli;
use rpm_bayes::data::{builtin, material};
use rpm_bayes::harness::{
    build_mixture_catalog_29, model_for, run_confusion_multi, screening100, screening_parity,
    table3, table3_truths, table4, ConfusionMatrix, Evaluator, Truth, DEFAULT_SEED,
    REFERENCE_BENCHMARKS,
};
use rpm_bayes::simulation::{default_portal_profile, Attenuation, GeometryProfile, ScanMatrix};
use rpm_bayes::spectra::{EnergySpectrum, MaterialClass, MixtureSpec};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rate(m: &ConfusionMatrix, truth: &str, assigned: &str) -> f64 {
    m.rate(truth, assigned).expect("label present")
}

// Independent of the library's KL implementation.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

fn c1_eight_class() -> Outcome {
    let start = Instant::now();
    let report = table3(DEFAULT_SEED, 10_000).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let m = report.matrix("rare man-made priors").unwrap();
    let diag_min = ["A", "B", "C", "D", "F", "G"]
        .iter()
        .map(|l| rate(m, l, l))
        .fold(f64::INFINITY, f64::min);
    let eh = rate(m, "E", "H");
    let he = rate(m, "H", "E");
    let passed = diag_min >= 0.9995
        && (0.053..=0.073).contains(&eh)
        && (0.101..=0.121).contains(&he)
        && elapsed < 120.0;
    outcome(
        passed,
        format!(
            "min diagonal {diag_min:.4}; tile->background {eh:.4} in [0.053, 0.073]; \
             background->tile {he:.4} in [0.101, 0.121]; {elapsed:.1}s"
        ),
    )
}

fn c2_mixture_study() -> (Outcome, rpm_bayes::harness::Report) {
    let report = table4(DEFAULT_SEED, 10_000).unwrap();
    let m = report.matrix("all classes").unwrap();
    let (worst, worst_label) = (0..m.rows())
        .filter(|&r| m.row_dangerous[r])
        .map(|r| {
            let label = &m.row_labels[r];
            (1.0 - rate(m, label, label), label.clone())
        })
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a });
    let tb = rate(m, "Tile", "Background");
    let bt = rate(m, "Background", "Tile");
    let salt_row = m.row_index("Salt").unwrap();
    let salt: f64 = (0..m.column_labels.len())
        .filter(|&c| m.column_dangerous[c])
        .map(|c| m.probability(salt_row, c))
        .sum();
    let passed = worst < 0.005
        && (tb - 0.06).abs() <= 0.02
        && (bt - 0.11).abs() <= 0.02
        && (salt - 0.011).abs() <= 0.01;
    (
        outcome(
            passed,
            format!(
                "worst dangerous misclassification {worst:.4} ({worst_label}) < 0.005; \
                 tile->background {tb:.4} vs 0.06+-0.02; background->tile {bt:.4} vs 0.11+-0.02; \
                 salt false-dangerous {salt:.4} vs 0.011+-0.01"
            ),
        ),
        report,
    )
}

/// Greedy selection written from the rule directly, as a cross-check on
/// the library.
fn oracle_selection(entries: &[(String, Vec<f64>, bool)]) -> BTreeSet<String> {
    let dist = |p: &[f64], set: &[usize]| {
        set.iter()
            .map(|&j| kl(p, &entries[j].1))
            .fold(f64::INFINITY, f64::min)
    };
    let dangerous: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].2).collect();
    let safe: Vec<usize> = (0..entries.len()).filter(|&i| !entries[i].2).collect();
    let mut best = (f64::INFINITY, 0, 0);
    for &i in &dangerous {
        for &j in &safe {
            let s = kl(&entries[i].1, &entries[j].1) + kl(&entries[j].1, &entries[i].1);
            if s < best.0 {
                best = (s, i, j);
            }
        }
    }
    let mut d = vec![best.1];
    let mut n = vec![best.2];
    loop {
        let pick = |pool: &[usize], own: &[usize], other: &[usize]| {
            pool.iter()
                .filter(|i| !own.contains(i))
                .filter(|&&i| dist(&entries[i].1, own) - dist(&entries[i].1, other) > 0.0)
                .map(|&i| (dist(&entries[i].1, other), i))
                .fold(None, |acc: Option<(f64, usize)>, c| match acc {
                    Some(a) if a.0 <= c.0 => Some(a),
                    _ => Some(c),
                })
                .map(|(_, i)| i)
        };
        let add_d = pick(&dangerous, &d, &n);
        let add_n = pick(&safe, &n, &d);
        if add_d.is_none() && add_n.is_none() {
            break;
        }
        d.extend(add_d);
        n.extend(add_n);
    }
    d.iter().chain(&n).map(|&i| entries[i].0.clone()).collect()
}

fn c3_selection() -> Outcome {
    let (catalog, _) = build_mixture_catalog_29().unwrap();
    let selected: BTreeSet<String> = select_benchmarks(&catalog).unwrap().labels().into_iter().collect();
    let entries: Vec<(String, Vec<f64>, bool)> = catalog
        .entries()
        .iter()
        .map(|e| (e.label.clone(), e.spectrum.probs().to_vec(), e.dangerous))
        .collect();
    let oracle = oracle_selection(&entries);
    let expected: BTreeSet<String> = REFERENCE_BENCHMARKS.iter().map(|s| s.to_string()).collect();
    let missing: Vec<_> = expected.difference(&selected).cloned().collect();
    let extra: Vec<_> = selected.difference(&expected).cloned().collect();
    outcome(
        selected == expected,
        format!(
            "{} selected (oracle agrees: {}); missing [{}]; extra [{}]",
            selected.len(),
            oracle == selected,
            missing.join(", "),
            extra.join(", ")
        ),
    )
}

fn c4_parity(report: &rpm_bayes::harness::Report) -> Outcome {
    let full = report.matrix("all classes").unwrap();
    let reference = report.matrix("reference benchmarks").unwrap();
    let (gap, at) = screening_parity(full, reference);
    let floor = [full, reference]
        .iter()
        .flat_map(|m| {
            let rates = m.dangerous_rates();
            (0..m.rows())
                .filter(|&r| m.row_dangerous[r])
                .map(|r| rates[r])
                .collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min);
    let at = if at.is_empty() { String::new() } else { format!(" (at {at})") };
    outcome(
        gap <= 0.005 && floor >= 0.997,
        format!("largest per-class gap {gap:.4}{at} <= 0.005; lowest dangerous detection {floor:.4} >= 0.997"),
    )
}

fn c5_random_catalogs() -> Outcome {
    let report = screening100(DEFAULT_SEED, 50, 1000).unwrap();
    let s = report.screening.unwrap();
    let passed = s.benchmark_count.median <= 10.0
        && s.dangerous_to_nondangerous.mean <= 0.01
        && s.nondangerous_to_dangerous.mean <= 0.02;
    outcome(
        passed,
        format!(
            "median benchmarks {:.1} <= 10 (mean {:.2}); dangerous->nondangerous {:.4} <= 0.01; \
             nondangerous->dangerous {:.4} <= 0.02",
            s.benchmark_count.median,
            s.benchmark_count.mean,
            s.dangerous_to_nondangerous.mean,
            s.nondangerous_to_dangerous.mean
        ),
    )
}

fn mean_misclassification(m: &ConfusionMatrix) -> f64 {
    (0..m.rows())
        .map(|r| 1.0 - m.probability(r, r))
        .sum::<f64>()
        / m.rows() as f64
}

fn c6_consistency() -> Outcome {
    let names = ["Tile", "Background", "Kitty litter"];
    let profile = default_portal_profile();
    let mut rates = Vec::new();
    for scale in [1.0, 4.0, 16.0] {
        let truths: Vec<Truth> = names
            .iter()
            .map(|n| Truth::new(*n, false, MixtureSpec::pure(material(n), scale).unwrap()))
            .collect();
        let model = model_for(&truths, &Priors::Uniform).unwrap();
        let m = run_confusion_multi(
            &truths,
            &profile,
            None,
            DEFAULT_SEED,
            10_000,
            &[Evaluator::new("x", &model)],
        )
        .unwrap()
        .remove(0);
        rates.push(mean_misclassification(&m));
    }
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        monotone && rates[2] == 0.0,
        format!(
            "mean misclassification x1 {:.4}, x4 {:.4}, x16 {:.4}",
            rates[0], rates[1], rates[2]
        ),
    )
}

fn c7_off_catalog() -> Outcome {
    let catalog = builtin();
    let model = catalog.model().unwrap();
    let spectra: Vec<Vec<f64>> = model.classes().iter().map(|c| c.spectrum.probs().to_vec()).collect();
    let profile = default_portal_profile();
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let dirichlet = Dirichlet::new([1.0; 3]).unwrap();
    // Expected total N = 1e6 per scan.
    let total = 1e6;
    let mut worst = (f64::INFINITY, 0);
    let mut truths = Vec::new();
    let mut nearest = Vec::new();
    for i in 0..20 {
        let p: [f64; 3] = dirichlet.sample(&mut rng);
        let rates: Vec<f64> = p.iter().map(|x| x * total / profile.total_weight()).collect();
        let class = MaterialClass::new(format!("X{i}"), rates, false).unwrap();
        nearest.push(
            spectra
                .iter()
                .enumerate()
                .map(|(k, q)| (kl(&p, q), k))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
                .1,
        );
        truths.push(Truth::new(format!("X{i}"), false, MixtureSpec::pure(class, 1.0).unwrap()));
    }
    let m = run_confusion_multi(
        &truths,
        &profile,
        None,
        DEFAULT_SEED,
        1000,
        &[Evaluator::new("x", &model)],
    )
    .unwrap()
    .remove(0);
    for (i, &k) in nearest.iter().enumerate() {
        let f = m.probability(i, k);
        if f < worst.0 {
            worst = (f, i);
        }
    }
    outcome(
        worst.0 >= 0.99,
        format!(
            "lowest KL-nearest assignment frequency {:.4} (spectrum X{}), N = 1e6, 1000 scans each",
            worst.0, worst.1
        ),
    )
}

fn c8_attenuation_invariance() -> Outcome {
    let truths = table3_truths().unwrap();
    let model = model_for(&truths, &Priors::Uniform).unwrap();
    let linear = default_portal_profile();
    let inverse = GeometryProfile::new(linear.distances().to_vec(), Attenuation::InverseSquare)
        .unwrap()
        .matched_to(&linear)
        .unwrap();
    let run = |p: &GeometryProfile| {
        run_confusion_multi(&truths, p, None, DEFAULT_SEED, 10_000, &[Evaluator::new("x", &model)])
            .unwrap()
            .remove(0)
    };
    let a = run(&linear);
    let b = run(&inverse);
    let n = 10_000.0;
    let mut worst = (0.0, String::new());
    let mut failures = 0;
    for r in 0..a.rows() {
        for c in 0..a.column_labels.len() {
            let (pa, pb) = (a.probability(r, c), b.probability(r, c));
            let se = (pa * (1.0 - pa) / n + pb * (1.0 - pb) / n).sqrt();
            let diff = (pa - pb).abs();
            if diff > 2.0 * se {
                failures += 1;
            }
            let z = if se > 0.0 { diff / se } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
            if z > worst.0 {
                worst = (z, format!("{}->{}", a.row_labels[r], a.column_labels[c]));
            }
        }
    }
    outcome(
        failures == 0,
        format!(
            "{failures} cells beyond 2 standard errors; largest |diff|/se {:.2} at {}",
            worst.0,
            if worst.1.is_empty() { "none" } else { &worst.1 }
        ),
    )
}

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

fn c9_enumeration() -> Outcome {
    let spectra = [vec![0.7, 0.3], vec![0.45, 0.55], vec![0.2, 0.8]];
    let priors = vec![0.5, 0.3, 0.2];
    let model = ClassifierModel::from_spectra(
        spectra
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("k{i}"), EnergySpectrum::new(p.clone()).unwrap(), i == 0))
            .collect(),
        &Priors::Explicit(priors.clone()),
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut scans = 0;
    // Every 2-window scan with at most 5 counts, over one and two steps.
    for steps in 1..=2usize {
        let cells = 2 * steps;
        let mut counts = vec![0u64; cells];
        loop {
            let n: u64 = counts.iter().sum();
            if n <= 5 {
                let rows: Vec<Vec<u64>> = (0..2)
                    .map(|b| (0..steps).map(|t| counts[t * 2 + b]).collect())
                    .collect();
                let scan = ScanMatrix::from_window_rows(vec!["w1".into(), "w2".into()], rows).unwrap();
                let l = [scan.window_totals()[0], scan.window_totals()[1]];
                // Full multinomial probability of the observed totals.
                let joint: Vec<f64> = spectra
                    .iter()
                    .zip(&priors)
                    .map(|(p, pr)| {
                        let ln = ln_factorial(l[0] + l[1]) - ln_factorial(l[0]) - ln_factorial(l[1])
                            + l[0] as f64 * p[0].ln()
                            + l[1] as f64 * p[1].ln();
                        pr * ln.exp()
                    })
                    .collect();
                let z: f64 = joint.iter().sum();
                let got = posterior_probabilities(&model, &scan).unwrap();
                for (g, j) in got.iter().zip(&joint) {
                    let want = j / z;
                    worst = worst.max(((g - want) / want).abs());
                }
                scans += 1;
            }
            let mut i = 0;
            loop {
                if i == cells {
                    break;
                }
                counts[i] += 1;
                if counts.iter().sum::<u64>() <= 5 {
                    break;
                }
                counts[i] = 0;
                i += 1;
            }
            if i == cells {
                break;
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{scans} scans enumerated; largest relative error {worst:.2e} <= 1e-9"),
    )
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(args.iter().copied(), &mut out, &mut err);
    (code, out)
}

fn c10_determinism() -> Outcome {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/masked-sources.toml");
    let cases: [(&str, Vec<&str>); 4] = [
        ("table3", vec!["experiment", "table3", "--replicates", "2000"]),
        ("table4", vec!["experiment", "table4", "--replicates", "500"]),
        ("screening100", vec!["experiment", "screening100", "--sets", "4", "--replicates", "100"]),
        ("custom", vec!["experiment", "custom", config, "--replicates", "500"]),
    ];
    let mut differing = Vec::new();
    for (name, args) in &cases {
        let outputs: Vec<(i32, Vec<u8>)> = ["1", "2", "3"]
            .iter()
            .map(|t| {
                let mut full = vec!["rpm-bayes"];
                full.extend(args.iter().copied());
                full.extend(["--threads", t]);
                run_cli(&full)
            })
            .collect();
        let ok = outputs.iter().all(|o| o.0 == 0 && !o.1.is_empty() && o.1 == outputs[0].1);
        if !ok {
            differing.push(*name);
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "threads 1, 2, 3 byte-identical for {} experiments; differing [{}]",
            cases.len(),
            differing.join(", ")
        ),
    )
}

fn main() {
    let (c2, mixture_report) = c2_mixture_study();
    let results = [
        ("eight-class reproduction", c1_eight_class()),
        ("29-class study", c2),
        ("benchmark selection", c3_selection()),
        ("screening parity", c4_parity(&mixture_report)),
        ("100-class randomized study", c5_random_catalogs()),
        ("consistency under scaling", c6_consistency()),
        ("KL-nearest robustness", c7_off_catalog()),
        ("attenuation invariance", c8_attenuation_invariance()),
        ("posterior enumeration oracle", c9_enumeration()),
        ("thread-count determinism", c10_determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let mark = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {mark} {name}: {}", i + 1, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
