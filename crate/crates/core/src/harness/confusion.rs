use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmin, softmax, ClassifierModel, LossMatrix};
use crate::error::{Error, Result};
use crate::simulation::{GeometryProfile, RngStream, ScanSampler};
use crate::spectra::{mix, EnergySpectrum, MixtureSpec};

/// A class to simulate: a source mixture plus its label and flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub label: String,
    pub description: String,
    pub dangerous: bool,
    pub source: MixtureSpec,
}

impl Truth {
    pub fn new(label: impl Into<String>, dangerous: bool, source: MixtureSpec) -> Self {
        let description = source.description();
        Truth {
            label: label.into(),
            description,
            dangerous,
            source,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn spectrum(&self) -> EnergySpectrum {
        mix(&self.source)
    }
}

/// Everything needed to reproduce one confusion experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub truths: Vec<Truth>,
    pub model: ClassifierModel,
    pub replicates: usize,
    pub profile: GeometryProfile,
    pub seed: u64,
    pub loss: Option<LossMatrix>,
    /// Additive source present in every scan.
    pub background: Option<MixtureSpec>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::domain("replicates must be at least 1"));
        }
        if self.truths.is_empty() {
            return Err(Error::domain("experiment has no classes to simulate"));
        }
        for t in &self.truths {
            if t.source.windows() != self.model.windows() {
                return Err(Error::DimensionMismatch {
                    left_name: "model",
                    left: self.model.windows(),
                    right_name: "simulated class",
                    right: t.source.windows(),
                });
            }
        }
        if let Some(loss) = &self.loss {
            if loss.size() != self.model.len() {
                return Err(Error::domain(format!(
                    "loss matrix is {0}x{0} but the model has {1} classes",
                    loss.size(),
                    self.model.len()
                )));
            }
        }
        Ok(())
    }
}

/// Empirical assignment frequencies: rows are true classes, columns are
/// assigned classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ConfusionRepr", try_from = "ConfusionRepr")]
pub struct ConfusionMatrix {
    pub name: String,
    pub row_labels: Vec<String>,
    pub row_dangerous: Vec<bool>,
    pub column_labels: Vec<String>,
    pub column_dangerous: Vec<bool>,
    pub replicates: u64,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.row_labels.iter().position(|l| l == label)
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.column_labels.iter().position(|l| l == label)
    }

    pub fn probability(&self, row: usize, column: usize) -> f64 {
        self.counts[row][column] as f64 / self.replicates as f64
    }

    /// Rate at which true class `truth` is assigned to class `assigned`,
    /// by label.
    pub fn rate(&self, truth: &str, assigned: &str) -> Option<f64> {
        Some(self.probability(self.row_index(truth)?, self.column_index(assigned)?))
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|r| (0..self.column_labels.len()).map(|c| self.probability(r, c)).collect())
            .collect()
    }

    /// Binomial standard error `sqrt(p(1 − p)/n)` of each cell.
    pub fn standard_errors(&self) -> Vec<Vec<f64>> {
        let n = self.replicates as f64;
        self.probabilities()
            .into_iter()
            .map(|row| row.into_iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect())
            .collect()
    }

    /// Probability that each true class is assigned to a dangerous column.
    pub fn dangerous_rates(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|r| {
                let hits: u64 = self.counts[r]
                    .iter()
                    .zip(&self.column_dangerous)
                    .filter(|(_, &d)| d)
                    .map(|(c, _)| c)
                    .sum();
                hits as f64 / self.replicates as f64
            })
            .collect()
    }

    /// Probability that the assigned column's flag differs from the true
    /// class's flag.
    pub fn flag_error(&self, row: usize) -> f64 {
        let rate = self.dangerous_rates()[row];
        if self.row_dangerous[row] {
            1.0 - rate
        } else {
            rate
        }
    }

    /// `1 − P(assigned = own label)`, when the true class is also a column.
    pub fn misclassification(&self, row: usize) -> Option<f64> {
        let c = self.column_index(&self.row_labels[row])?;
        Some(1.0 - self.probability(row, c))
    }
}

#[derive(Serialize, Deserialize)]
struct ConfusionRepr {
    name: String,
    replicates: u64,
    row_labels: Vec<String>,
    row_dangerous: Vec<bool>,
    column_labels: Vec<String>,
    column_dangerous: Vec<bool>,
    counts: Vec<Vec<u64>>,
    #[serde(default)]
    probabilities: Vec<Vec<f64>>,
    #[serde(default)]
    standard_errors: Vec<Vec<f64>>,
    #[serde(default)]
    dangerous_rates: Vec<f64>,
}

impl From<ConfusionMatrix> for ConfusionRepr {
    fn from(m: ConfusionMatrix) -> Self {
        ConfusionRepr {
            probabilities: m.probabilities(),
            standard_errors: m.standard_errors(),
            dangerous_rates: m.dangerous_rates(),
            name: m.name,
            replicates: m.replicates,
            row_labels: m.row_labels,
            row_dangerous: m.row_dangerous,
            column_labels: m.column_labels,
            column_dangerous: m.column_dangerous,
            counts: m.counts,
        }
    }
}

impl TryFrom<ConfusionRepr> for ConfusionMatrix {
    type Error = Error;

    fn try_from(r: ConfusionRepr) -> Result<Self> {
        if r.row_labels.len() != r.row_dangerous.len()
            || r.column_labels.len() != r.column_dangerous.len()
            || r.counts.len() != r.row_labels.len()
        {
            return Err(Error::domain("confusion matrix labels and rows disagree in length"));
        }
        for (label, row) in r.row_labels.iter().zip(&r.counts) {
            if row.len() != r.column_labels.len() {
                return Err(Error::domain(format!("row '{label}' has the wrong width")));
            }
            if row.iter().sum::<u64>() != r.replicates {
                return Err(Error::domain(format!(
                    "row '{label}' does not sum to {} replicates",
                    r.replicates
                )));
            }
        }
        Ok(ConfusionMatrix {
            name: r.name,
            row_labels: r.row_labels,
            row_dangerous: r.row_dangerous,
            column_labels: r.column_labels,
            column_dangerous: r.column_dangerous,
            replicates: r.replicates,
            counts: r.counts,
        })
    }
}

/// A classifier applied to each simulated scan.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub name: &'a str,
    pub model: &'a ClassifierModel,
    pub loss: Option<&'a LossMatrix>,
}

impl<'a> Evaluator<'a> {
    pub fn new(name: &'a str, model: &'a ClassifierModel) -> Self {
        Evaluator {
            name,
            model,
            loss: None,
        }
    }

    pub fn with_loss(mut self, loss: Option<&'a LossMatrix>) -> Self {
        self.loss = loss;
        self
    }

    fn decide(&self, totals: &[u64], scratch: &mut Vec<f64>) -> usize {
        let index = self.model.predict_totals(totals, scratch);
        match self.loss {
            None => index,
            Some(loss) => argmin(&loss.expected_losses(&softmax(scratch))),
        }
    }
}

/// Per-truth random streams: replicate `r` of truth `i` draws from stream
/// `r` of a seed derived from `(seed, i)`, so results do not depend on how
/// replicates are spread over threads.
pub fn truth_stream(seed: u64, truth: usize, replicate: u64) -> RngStream {
    RngStream::new(RngStream::derive_seed(seed, truth as u64), replicate)
}

/// Simulates `replicates` scans of every truth and hands each scan's window
/// totals to `visit`, which accumulates into a fixed-width count vector.
pub fn tally<F>(
    samplers: &[ScanSampler],
    seed: u64,
    replicates: usize,
    width: usize,
    visit: F,
) -> Vec<Vec<u64>>
where
    F: Fn(usize, &[u64], &mut [u64], &mut Vec<f64>) + Sync,
{
    samplers
        .par_iter()
        .enumerate()
        .map(|(i, sampler)| {
            (0..replicates as u64)
                .into_par_iter()
                .fold(
                    || (vec![0u64; width], vec![0u64; sampler.windows()], Vec::new()),
                    |(mut acc, mut totals, mut scratch), r| {
                        let mut rng = truth_stream(seed, i, r).rng();
                        sampler.sample_window_totals(&mut rng, &mut totals);
                        visit(i, &totals, &mut acc, &mut scratch);
                        (acc, totals, scratch)
                    },
                )
                .map(|(acc, _, _)| acc)
                .reduce(
                    || vec![0u64; width],
                    |mut a, b| {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        a
                    },
                )
        })
        .collect()
}

pub fn samplers_for(
    truths: &[Truth],
    profile: &GeometryProfile,
    background: Option<&MixtureSpec>,
) -> Result<Vec<ScanSampler>> {
    truths
        .iter()
        .map(|t| ScanSampler::with_background(&t.source, profile, background))
        .collect()
}

/// Classifies the same simulated scans with several evaluators.
pub fn run_confusion_multi(
    truths: &[Truth],
    profile: &GeometryProfile,
    background: Option<&MixtureSpec>,
    seed: u64,
    replicates: usize,
    evaluators: &[Evaluator<'_>],
) -> Result<Vec<ConfusionMatrix>> {
    if replicates == 0 {
        return Err(Error::domain("replicates must be at least 1"));
    }
    for e in evaluators {
        for t in truths {
            if t.source.windows() != e.model.windows() {
                return Err(Error::DimensionMismatch {
                    left_name: "model",
                    left: e.model.windows(),
                    right_name: "simulated class",
                    right: t.source.windows(),
                });
            }
        }
    }
    let samplers = samplers_for(truths, profile, background)?;
    let offsets: Vec<usize> = evaluators
        .iter()
        .scan(0, |acc, e| {
            let start = *acc;
            *acc += e.model.len();
            Some(start)
        })
        .collect();
    let width: usize = evaluators.iter().map(|e| e.model.len()).sum();
    let rows = tally(&samplers, seed, replicates, width, |_, totals, acc, scratch| {
        for (e, &offset) in evaluators.iter().zip(&offsets) {
            acc[offset + e.decide(totals, scratch)] += 1;
        }
    });
    Ok(evaluators
        .iter()
        .zip(&offsets)
        .map(|(e, &offset)| ConfusionMatrix {
            name: e.name.to_string(),
            row_labels: truths.iter().map(|t| t.label.clone()).collect(),
            row_dangerous: truths.iter().map(|t| t.dangerous).collect(),
            column_labels: e.model.labels(),
            column_dangerous: e.model.classes().iter().map(|c| c.dangerous).collect(),
            replicates: replicates as u64,
            counts: rows
                .iter()
                .map(|row| row[offset..offset + e.model.len()].to_vec())
                .collect(),
        })
        .collect())
}

/// Simulates every truth `replicates` times and tabulates the classifier's
/// assignments. Deterministic given the seed.
pub fn run_confusion(config: &ExperimentConfig) -> Result<ConfusionMatrix> {
    config.validate()?;
    let evaluator = Evaluator::new(&config.name, &config.model).with_loss(config.loss.as_ref());
    Ok(run_confusion_multi(
        &config.truths,
        &config.profile,
        config.background.as_ref(),
        config.seed,
        config.replicates,
        &[evaluator],
    )?
    .remove(0))
}

/// Per-truth count of scans on which two evaluators disagree about the
/// dangerous flag.
pub fn flag_disagreements(
    truths: &[Truth],
    profile: &GeometryProfile,
    seed: u64,
    replicates: usize,
    a: Evaluator<'_>,
    b: Evaluator<'_>,
) -> Result<Vec<u64>> {
    let samplers = samplers_for(truths, profile, None)?;
    let rows = tally(&samplers, seed, replicates, 1, |_, totals, acc, scratch| {
        let fa = a.model.classes()[a.decide(totals, scratch)].dangerous;
        let fb = b.model.classes()[b.decide(totals, scratch)].dangerous;
        if fa != fb {
            acc[0] += 1;
        }
    });
    Ok(rows.into_iter().map(|r| r[0]).collect())
}
