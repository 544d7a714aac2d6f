//! Greedy KL-based selection of benchmark classes for dangerous versus
//! nondangerous screening.
//!
//! Starting from the closest dangerous/nondangerous pair, each round adds the
//! dangerous class that is currently nearer to the nondangerous benchmarks
//! than to the dangerous ones (and symmetrically), choosing the one nearest
//! the opposite side. The loop ends when no class is misattributed.

use serde::{Deserialize, Serialize};

use crate::classifier::{classify, ClassifierModel, Priors};
use crate::error::{Error, Result};
use crate::simulation::ScanMatrix;
use crate::spectra::{kl_divergence, symmetrized_kl, EnergySpectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub label: String,
    pub spectrum: EnergySpectrum,
    pub dangerous: bool,
}

/// Candidate classes split into dangerous and nondangerous sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCatalog {
    entries: Vec<CatalogEntry>,
}

impl ClassCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if !entries.iter().any(|e| e.dangerous) {
            return Err(Error::domain("catalog has no dangerous class"));
        }
        if !entries.iter().any(|e| !e.dangerous) {
            return Err(Error::domain("catalog has no nondangerous class"));
        }
        let windows = entries[0].spectrum.windows();
        for (i, e) in entries.iter().enumerate() {
            if e.spectrum.windows() != windows {
                return Err(Error::DimensionMismatch {
                    left_name: "first catalog class",
                    left: windows,
                    right_name: "another catalog class",
                    right: e.spectrum.windows(),
                });
            }
            if !e.spectrum.is_strictly_positive() {
                return Err(Error::domain(format!(
                    "catalog class '{}' has a zero-probability window",
                    e.label
                )));
            }
            for other in &entries[..i] {
                if other.label == e.label {
                    return Err(Error::domain(format!(
                        "catalog label '{}' appears twice",
                        e.label
                    )));
                }
                if other.spectrum == e.spectrum {
                    return Err(Error::domain(format!(
                        "catalog classes '{}' and '{}' have identical spectra",
                        other.label, e.label
                    )));
                }
            }
        }
        Ok(ClassCatalog { entries })
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    fn indices(&self, dangerous: bool) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].dangerous == dangerous)
            .collect()
    }
}

/// `η(p, A) = min_{a ∈ A} η(p, a)`.
pub fn kl_to_set<'a, I>(p: &EnergySpectrum, set: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a EnergySpectrum>,
{
    let mut best: Option<f64> = None;
    for a in set {
        let d = kl_divergence(p, a);
        best = Some(best.map_or(d, |b| b.min(d)));
    }
    best.ok_or_else(|| Error::domain("KL distance to an empty set is undefined"))
}

/// One round of the selection loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub iteration: usize,
    /// Dangerous classes closer to the nondangerous benchmarks.
    pub dangerous_candidates: Vec<String>,
    /// Nondangerous classes closer to the dangerous benchmarks.
    pub nondangerous_candidates: Vec<String>,
    pub added_dangerous: Option<String>,
    pub added_nondangerous: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    /// Dangerous benchmarks in the order they were added.
    pub dangerous: Vec<String>,
    /// Nondangerous benchmarks in the order they were added.
    pub nondangerous: Vec<String>,
    /// The initial `(dangerous, nondangerous)` pair.
    pub seed_pair: (String, String),
    pub seed_divergence: f64,
    pub iterations: Vec<SelectionStep>,
}

impl BenchmarkResult {
    pub fn labels(&self) -> Vec<String> {
        self.dangerous
            .iter()
            .chain(&self.nondangerous)
            .cloned()
            .collect()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.dangerous.iter().chain(&self.nondangerous).any(|l| l == label)
    }

    /// Classifier over the benchmark classes only, dangerous first.
    pub fn build_model(&self, catalog: &ClassCatalog, priors: &Priors) -> Result<ClassifierModel> {
        let entries: Vec<(String, EnergySpectrum, bool)> = self
            .labels()
            .into_iter()
            .map(|label| {
                let e = catalog.get(&label).ok_or_else(|| {
                    Error::domain(format!("benchmark '{label}' is not in the catalog"))
                })?;
                Ok((e.label.clone(), e.spectrum.clone(), e.dangerous))
            })
            .collect::<Result<_>>()?;
        ClassifierModel::from_spectra(entries, priors)
    }
}

/// Orders `(value, label)` by value, then label.
fn better(a: (f64, &str), b: (f64, &str)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Runs the greedy selection to completion.
///
/// Ties in the initial pair and in each round's choice go to the
/// lexicographically smallest label(s). A class is a candidate only if its
/// divergence gap is strictly positive.
pub fn select_benchmarks(catalog: &ClassCatalog) -> Result<BenchmarkResult> {
    let entries = catalog.entries();
    let spec = |i: usize| &entries[i].spectrum;
    let label = |i: usize| entries[i].label.as_str();
    let all_d = catalog.indices(true);
    let all_nd = catalog.indices(false);

    let mut seed: Option<(f64, usize, usize)> = None;
    for &d in &all_d {
        for &n in &all_nd {
            let eta = symmetrized_kl(spec(d), spec(n));
            let replace = match seed {
                None => true,
                Some((best, bd, bn)) => {
                    eta < best || (eta == best && (label(d), label(n)) < (label(bd), label(bn)))
                }
            };
            if replace {
                seed = Some((eta, d, n));
            }
        }
    }
    let (seed_divergence, d0, n0) = seed.expect("catalog has both kinds of class");

    let mut d_set = vec![d0];
    let mut nd_set = vec![n0];
    let mut iterations = Vec::new();
    let max_rounds = entries.len();

    for iteration in 1..=max_rounds {
        let d_specs: Vec<&EnergySpectrum> = d_set.iter().map(|&i| spec(i)).collect();
        let nd_specs: Vec<&EnergySpectrum> = nd_set.iter().map(|&i| spec(i)).collect();

        let mut ad = Vec::new();
        let mut pick_d: Option<(f64, usize)> = None;
        for &k in all_d.iter().filter(|k| !d_set.contains(k)) {
            let to_d = kl_to_set(spec(k), d_specs.iter().copied())?;
            let to_nd = kl_to_set(spec(k), nd_specs.iter().copied())?;
            if to_d - to_nd > 0.0 {
                ad.push(k);
                if pick_d.is_none_or(|(v, j)| better((to_nd, label(k)), (v, label(j)))) {
                    pick_d = Some((to_nd, k));
                }
            }
        }

        let mut and = Vec::new();
        let mut pick_nd: Option<(f64, usize)> = None;
        for &k in all_nd.iter().filter(|k| !nd_set.contains(k)) {
            let to_nd = kl_to_set(spec(k), nd_specs.iter().copied())?;
            let to_d = kl_to_set(spec(k), d_specs.iter().copied())?;
            if to_nd - to_d > 0.0 {
                and.push(k);
                if pick_nd.is_none_or(|(v, j)| better((to_d, label(k)), (v, label(j)))) {
                    pick_nd = Some((to_d, k));
                }
            }
        }

        if ad.is_empty() && and.is_empty() {
            break;
        }
        let names = |v: &[usize]| v.iter().map(|&i| label(i).to_string()).collect();
        iterations.push(SelectionStep {
            iteration,
            dangerous_candidates: names(&ad),
            nondangerous_candidates: names(&and),
            added_dangerous: pick_d.map(|(_, k)| label(k).to_string()),
            added_nondangerous: pick_nd.map(|(_, k)| label(k).to_string()),
        });
        if let Some((_, k)) = pick_d {
            d_set.push(k);
        }
        if let Some((_, k)) = pick_nd {
            nd_set.push(k);
        }
    }

    Ok(BenchmarkResult {
        dangerous: d_set.iter().map(|&i| label(i).to_string()).collect(),
        nondangerous: nd_set.iter().map(|&i| label(i).to_string()).collect(),
        seed_pair: (label(d0).to_string(), label(n0).to_string()),
        seed_divergence,
        iterations,
    })
}

/// Re-checks the stopping rule: no unselected dangerous class is strictly
/// nearer the nondangerous benchmarks, and vice versa.
pub fn satisfies_stopping_rule(catalog: &ClassCatalog, result: &BenchmarkResult) -> Result<bool> {
    let lookup = |l: &String| -> Result<&EnergySpectrum> {
        catalog
            .get(l)
            .map(|e| &e.spectrum)
            .ok_or_else(|| Error::domain(format!("benchmark '{l}' is not in the catalog")))
    };
    let d: Vec<&EnergySpectrum> = result.dangerous.iter().map(lookup).collect::<Result<_>>()?;
    let nd: Vec<&EnergySpectrum> = result.nondangerous.iter().map(lookup).collect::<Result<_>>()?;
    for e in catalog.entries() {
        if result.contains(&e.label) {
            continue;
        }
        let to_d = kl_to_set(&e.spectrum, d.iter().copied())?;
        let to_nd = kl_to_set(&e.spectrum, nd.iter().copied())?;
        let gap = if e.dangerous { to_d - to_nd } else { to_nd - to_d };
        if gap > 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True when the scan's best benchmark is dangerous.
pub fn screen(model: &ClassifierModel, scan: &ScanMatrix) -> Result<bool> {
    let decision = classify(model, scan)?;
    Ok(model.classes()[decision.index].dangerous)
}
