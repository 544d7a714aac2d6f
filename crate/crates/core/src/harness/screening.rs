use rand::Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::benchmark::select_benchmarks;
use crate::classifier::Priors;
use crate::data::{material, NORMS};
use crate::error::{Error, Result};
use crate::simulation::{GeometryProfile, RngStream};
use crate::spectra::{symmetrized_kl, MaterialClass, MixtureSpec};

use super::confusion::{run_confusion_multi, Evaluator, Truth};
use super::presets::catalog_from_truths;

/// Generated catalogs with any pair of spectra this close in symmetrized
/// KL are discarded and redrawn.
pub const MIN_PAIR_DIVERGENCE: f64 = 1e-10;

/// Redraws allowed per catalog before giving up.
pub const MAX_RESAMPLES: usize = 1000;

/// Recipe for random catalogs of man-made/NORM mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCatalogSpec {
    pub dangerous: usize,
    pub nondangerous: usize,
    /// Each dangerous class uses one of these `(material, quantity)`
    /// sources, picked uniformly.
    pub man_made: Vec<(MaterialClass, f64)>,
    pub norms: Vec<MaterialClass>,
    /// Dirichlet parameters of the NORM quantities in a dangerous class.
    pub dirichlet: Vec<f64>,
    /// Range of each independent uniform NORM quantity in a nondangerous
    /// class.
    pub norm_range: (f64, f64),
    pub seed: u64,
}

impl RandomCatalogSpec {
    /// 75 dangerous and 25 nondangerous classes; 0.025 HEU or 0.005 WGPu
    /// with Dirichlet(1/4, 1/4, 1/4, 1/4) NORM weights, versus NORM-only
    /// mixtures with U(0, 0.25) quantities.
    pub fn standard(seed: u64) -> Self {
        RandomCatalogSpec {
            dangerous: 75,
            nondangerous: 25,
            man_made: vec![(material("HEU"), 0.025), (material("WGPu"), 0.005)],
            norms: NORMS.iter().map(|n| material(n)).collect(),
            dirichlet: vec![0.25; NORMS.len()],
            norm_range: (0.0, 0.25),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dangerous == 0 || self.nondangerous == 0 {
            return Err(Error::domain(
                "random catalogs need at least one dangerous and one nondangerous class",
            ));
        }
        if self.man_made.is_empty() || self.norms.is_empty() {
            return Err(Error::domain("random catalogs need man-made and NORM materials"));
        }
        if self.man_made.iter().any(|(_, q)| !(*q > 0.0 && q.is_finite())) {
            return Err(Error::domain("man-made quantities must be positive"));
        }
        if self.dirichlet.len() != self.norms.len() {
            return Err(Error::domain(format!(
                "{} Dirichlet parameters for {} NORM materials",
                self.dirichlet.len(),
                self.norms.len()
            )));
        }
        if self.dirichlet.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::domain("Dirichlet parameters must be positive"));
        }
        let (lo, hi) = self.norm_range;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::domain(format!(
                "NORM quantity range ({lo}, {hi}) must be nonempty and nonnegative"
            )));
        }
        Ok(())
    }

    /// Draws catalog number `index`, redrawing until all spectra are
    /// pairwise distinct. Returns the classes and the number of redraws.
    pub fn generate(&self, index: usize) -> Result<(Vec<Truth>, usize)> {
        self.validate()?;
        let base = RngStream::derive_seed(self.seed, 2 * index as u64);
        for attempt in 0..=MAX_RESAMPLES {
            let mut rng = RngStream::new(base, attempt as u64).rng();
            let truths = self.draw(&mut rng)?;
            if spectra_are_distinct(&truths) {
                return Ok((truths, attempt));
            }
        }
        Err(Error::domain(format!(
            "could not draw a catalog with distinct spectra in {MAX_RESAMPLES} attempts"
        )))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Result<Vec<Truth>> {
        let gammas = self
            .dirichlet
            .iter()
            .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::domain(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let uniform = Uniform::new(self.norm_range.0, self.norm_range.1)
            .map_err(|e| Error::domain(e.to_string()))?;
        let mut truths = Vec::with_capacity(self.dangerous + self.nondangerous);
        for i in 0..self.dangerous {
            let (source, quantity) = &self.man_made[rng.random_range(0..self.man_made.len())];
            // Dirichlet draw as normalized independent gammas.
            let weights = loop {
                let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
                let total: f64 = g.iter().sum();
                if total > 0.0 {
                    break g.into_iter().map(|x| x / total).collect::<Vec<_>>();
                }
            };
            let mut components = vec![(source.clone(), *quantity)];
            components.extend(self.norms.iter().cloned().zip(weights));
            truths.push(Truth::new(
                format!("D{:02}", i + 1),
                true,
                MixtureSpec::new(components)?,
            ));
        }
        for i in 0..self.nondangerous {
            let components = loop {
                let c: Vec<(MaterialClass, f64)> = self
                    .norms
                    .iter()
                    .map(|m| (m.clone(), uniform.sample(rng)))
                    .collect();
                if c.iter().any(|(_, q)| *q > 0.0) {
                    break c;
                }
            };
            truths.push(Truth::new(
                format!("N{:02}", i + 1),
                false,
                MixtureSpec::new(components)?,
            ));
        }
        Ok(truths)
    }
}

fn spectra_are_distinct(truths: &[Truth]) -> bool {
    let spectra: Vec<_> = truths.iter().map(Truth::spectrum).collect();
    spectra.iter().enumerate().all(|(i, p)| {
        spectra[..i]
            .iter()
            .all(|q| symmetrized_kl(p, q) >= MIN_PAIR_DIVERGENCE)
    })
}

/// Mean, median, sample standard deviation and scaled median absolute
/// deviation (`1.4826 · median|x − median|`). The spread measures are 0 for
/// fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub mad: f64,
}

/// Consistency constant making the MAD estimate the normal standard
/// deviation.
pub const MAD_SCALE: f64 = 1.4826;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("cannot summarize an empty sample"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let med = median(&mut values.to_vec());
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        let mut deviations: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
        let mad = if n < 2 { 0.0 } else { MAD_SCALE * median(&mut deviations) };
        Ok(Summary {
            count: n,
            mean,
            median: med,
            sd,
            mad,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogOutcome {
    pub index: usize,
    pub redraws: usize,
    pub dangerous_benchmarks: Vec<String>,
    pub nondangerous_benchmarks: Vec<String>,
    /// Mean over dangerous classes of P(screened nondangerous).
    pub mean_missed: f64,
    /// Mean over nondangerous classes of P(screened dangerous).
    pub mean_false_alarm: f64,
}

impl CatalogOutcome {
    pub fn benchmark_count(&self) -> usize {
        self.dangerous_benchmarks.len() + self.nondangerous_benchmarks.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSummary {
    pub sets: usize,
    pub replicates: usize,
    pub benchmark_count: Summary,
    /// Per-class rates of screening a dangerous class as nondangerous,
    /// pooled over all catalogs.
    pub dangerous_to_nondangerous: Summary,
    /// Per-class rates of screening a nondangerous class as dangerous,
    /// pooled over all catalogs.
    pub nondangerous_to_dangerous: Summary,
    pub catalogs: Vec<CatalogOutcome>,
}

/// Generates `sets` catalogs, selects benchmarks for each, and screens
/// `replicates` simulated scans of every class with the benchmark model.
pub fn run_screening_study(
    spec: &RandomCatalogSpec,
    profile: &GeometryProfile,
    sets: usize,
    replicates: usize,
) -> Result<ScreeningSummary> {
    if sets == 0 || replicates == 0 {
        return Err(Error::domain("sets and replicates must be at least 1"));
    }
    let mut counts = Vec::with_capacity(sets);
    let mut missed = Vec::new();
    let mut false_alarms = Vec::new();
    let mut catalogs = Vec::with_capacity(sets);
    for index in 0..sets {
        let (truths, redraws) = spec.generate(index)?;
        let catalog = catalog_from_truths(&truths)?;
        let selected = select_benchmarks(&catalog)?;
        let model = selected.build_model(&catalog, &Priors::Uniform)?;
        let seed = RngStream::derive_seed(spec.seed, 2 * index as u64 + 1);
        let matrix = run_confusion_multi(
            &truths,
            profile,
            None,
            seed,
            replicates,
            &[Evaluator::new("benchmarks", &model)],
        )?
        .remove(0);
        let rates = matrix.dangerous_rates();
        let (mut m, mut f) = (Vec::new(), Vec::new());
        for (t, rate) in truths.iter().zip(rates) {
            if t.dangerous {
                m.push(1.0 - rate);
            } else {
                f.push(rate);
            }
        }
        let outcome = CatalogOutcome {
            index,
            redraws,
            dangerous_benchmarks: selected.dangerous.clone(),
            nondangerous_benchmarks: selected.nondangerous.clone(),
            mean_missed: m.iter().sum::<f64>() / m.len() as f64,
            mean_false_alarm: f.iter().sum::<f64>() / f.len() as f64,
        };
        counts.push(outcome.benchmark_count() as f64);
        missed.extend(m);
        false_alarms.extend(f);
        catalogs.push(outcome);
    }
    Ok(ScreeningSummary {
        sets,
        replicates,
        benchmark_count: Summary::of(&counts)?,
        dangerous_to_nondangerous: Summary::of(&missed)?,
        nondangerous_to_dangerous: Summary::of(&false_alarms)?,
        catalogs,
    })
}
