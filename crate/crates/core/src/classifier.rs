//! Conditional-multinomial naive Bayes classification of portal scans.
//!
//! Conditioning each column on its total count removes the unknown
//! attenuation `g(d, M)` from the likelihood, so a scan enters only through
//! its window totals `L_b`:
//!
//! ```text
//! score_k = Σ_b L_b ln p_{b,k} + ln P(Y = k)
//! ```
//!
//! The multinomial coefficient is common to all classes and dropped.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::simulation::ScanMatrix;
use crate::spectra::{EnergySpectrum, MaterialClass};

/// Prior over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Priors {
    Uniform,
    /// Each dangerous class gets [`MAN_MADE_PRIOR`]; the remaining mass is
    /// split equally over the other classes.
    RareManMade,
    /// One prior per class, in class order.
    Explicit(Vec<f64>),
}

/// Prior probability assigned to each man-made class by [`Priors::RareManMade`].
pub const MAN_MADE_PRIOR: f64 = 1e-9;

impl Priors {
    pub fn resolve(&self, dangerous: &[bool]) -> Result<Vec<f64>> {
        let k = dangerous.len();
        match self {
            Priors::Uniform => Ok(vec![1.0 / k as f64; k]),
            Priors::RareManMade => {
                let n_dangerous = dangerous.iter().filter(|&&d| d).count();
                let n_rest = k - n_dangerous;
                if n_rest == 0 {
                    return Err(Error::domain(
                        "rare man-made priors need at least one nondangerous class",
                    ));
                }
                let rest = (1.0 - n_dangerous as f64 * MAN_MADE_PRIOR) / n_rest as f64;
                Ok(dangerous
                    .iter()
                    .map(|&d| if d { MAN_MADE_PRIOR } else { rest })
                    .collect())
            }
            Priors::Explicit(p) => {
                if p.len() != k {
                    return Err(Error::domain(format!(
                        "{} priors given for {k} classes",
                        p.len()
                    )));
                }
                Ok(p.clone())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Priors::Uniform => "uniform",
            Priors::RareManMade => "rare-man-made",
            Priors::Explicit(_) => "explicit",
        }
    }
}

impl std::str::FromStr for Priors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Priors::Uniform),
            "rare-man-made" => Ok(Priors::RareManMade),
            other => Err(Error::domain(format!(
                "unknown prior preset '{other}' (expected 'uniform' or 'rare-man-made')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClass {
    pub label: String,
    pub spectrum: EnergySpectrum,
    pub prior: f64,
    pub dangerous: bool,
}

/// An ordered set of classes with strictly positive, pairwise distinct
/// spectra and a proper prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    classes: Vec<ModelClass>,
    /// `ln p_{b,k}`, row `k`.
    log_spectra: Vec<Vec<f64>>,
    log_priors: Vec<f64>,
}

/// Tolerance on `Σ_k P(Y = k) = 1`.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-9;

impl ClassifierModel {
    pub fn new(classes: Vec<ModelClass>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::domain(format!(
                "a classifier needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let windows = classes[0].spectrum.windows();
        for (i, c) in classes.iter().enumerate() {
            if c.spectrum.windows() != windows {
                return Err(Error::DimensionMismatch {
                    left_name: "first class",
                    left: windows,
                    right_name: "another class",
                    right: c.spectrum.windows(),
                });
            }
            if !c.spectrum.is_strictly_positive() {
                return Err(Error::domain(format!(
                    "class '{}' has a zero-probability window",
                    c.label
                )));
            }
            if !(c.prior > 0.0 && c.prior.is_finite()) {
                return Err(Error::domain(format!(
                    "class '{}' has prior {}; priors must be positive",
                    c.label, c.prior
                )));
            }
            for other in &classes[..i] {
                if other.label == c.label {
                    return Err(Error::domain(format!("duplicate class label '{}'", c.label)));
                }
                if other.spectrum == c.spectrum {
                    return Err(Error::domain(format!(
                        "classes '{}' and '{}' have identical spectra",
                        other.label, c.label
                    )));
                }
            }
        }
        let prior_sum: f64 = classes.iter().map(|c| c.prior).sum();
        if (prior_sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
            return Err(Error::domain(format!("priors sum to {prior_sum}, not 1")));
        }
        let log_spectra = classes
            .iter()
            .map(|c| c.spectrum.probs().iter().map(|p| p.ln()).collect())
            .collect();
        let log_priors = classes.iter().map(|c| c.prior.ln()).collect();
        Ok(ClassifierModel {
            classes,
            log_spectra,
            log_priors,
        })
    }

    /// Builds a model from `(label, spectrum, dangerous)` triples.
    pub fn from_spectra(
        entries: Vec<(String, EnergySpectrum, bool)>,
        priors: &Priors,
    ) -> Result<Self> {
        let flags: Vec<bool> = entries.iter().map(|e| e.2).collect();
        let priors = priors.resolve(&flags)?;
        ClassifierModel::new(
            entries
                .into_iter()
                .zip(priors)
                .map(|((label, spectrum, dangerous), prior)| ModelClass {
                    label,
                    spectrum,
                    prior,
                    dangerous,
                })
                .collect(),
        )
    }

    /// Builds a model from materials, using their normalized rates.
    pub fn from_materials(materials: &[MaterialClass], priors: &Priors) -> Result<Self> {
        ClassifierModel::from_spectra(
            materials
                .iter()
                .map(|m| (m.label().to_string(), m.spectrum(), m.dangerous()))
                .collect(),
            priors,
        )
    }

    pub fn classes(&self) -> &[ModelClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn windows(&self) -> usize {
        self.log_spectra[0].len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.label == label)
    }

    fn check_width(&self, windows: usize) -> Result<()> {
        if windows != self.windows() {
            return Err(Error::DimensionMismatch {
                left_name: "model",
                left: self.windows(),
                right_name: "scan",
                right: windows,
            });
        }
        Ok(())
    }

    /// Log-scores from window totals `L_b`.
    pub fn log_scores_from_totals(&self, totals: &[u64]) -> Result<Vec<f64>> {
        self.check_width(totals.len())?;
        let mut scores = Vec::with_capacity(self.len());
        self.fill_scores(totals, &mut scores);
        Ok(scores)
    }

    fn fill_scores(&self, totals: &[u64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.log_spectra.iter().zip(&self.log_priors).map(|(lp, prior)| {
            lp.iter()
                .zip(totals)
                .map(|(l, &n)| n as f64 * l)
                .sum::<f64>()
                + prior
        }));
    }

    /// Index of the winning class for the given window totals, without
    /// allocating. Ties go to the lowest index.
    pub fn predict_totals(&self, totals: &[u64], scratch: &mut Vec<f64>) -> usize {
        debug_assert_eq!(totals.len(), self.windows());
        self.fill_scores(totals, scratch);
        argmax(scratch)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; the lowest index wins ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Stable softmax: subtract the maximum before exponentiating.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Misclassification costs: `W[k'][k]` is the cost of assigning class `k'`
/// to a container whose true class is `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct LossMatrix {
    costs: Vec<Vec<f64>>,
}

impl LossMatrix {
    pub fn new(costs: Vec<Vec<f64>>) -> Result<Self> {
        let k = costs.len();
        if k < 2 {
            return Err(Error::domain("loss matrix must be at least 2x2"));
        }
        let mut any_positive = false;
        for (i, row) in costs.iter().enumerate() {
            if row.len() != k {
                return Err(Error::domain(format!(
                    "loss matrix row {} has {} entries, expected {k}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::domain(format!(
                        "loss W[{}][{}] = {w} must be finite and nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(Error::domain(format!(
                        "loss diagonal W[{}][{}] must be zero",
                        i + 1,
                        j + 1
                    )));
                }
                any_positive |= w > 0.0;
            }
        }
        if !any_positive {
            return Err(Error::domain("loss matrix has no positive cost"));
        }
        Ok(LossMatrix { costs })
    }

    /// All-ones minus identity.
    pub fn zero_one(k: usize) -> Result<Self> {
        LossMatrix::new(
            (0..k)
                .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                .collect(),
        )
    }

    pub fn size(&self) -> usize {
        self.costs.len()
    }

    pub fn cost(&self, assigned: usize, truth: usize) -> f64 {
        self.costs[assigned][truth]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.costs
    }

    /// `L(k') = Σ_k W[k'][k] · posterior_k` for every `k'`.
    pub fn expected_losses(&self, posteriors: &[f64]) -> Vec<f64> {
        self.costs
            .iter()
            .map(|row| row.iter().zip(posteriors).map(|(w, p)| w * p).sum())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for LossMatrix {
    type Error = Error;

    fn try_from(costs: Vec<Vec<f64>>) -> Result<Self> {
        LossMatrix::new(costs)
    }
}

impl From<LossMatrix> for Vec<Vec<f64>> {
    fn from(m: LossMatrix) -> Self {
        m.costs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Outcome of classifying one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: String,
    pub index: usize,
    pub log_scores: Vec<f64>,
    pub posteriors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_losses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goodness_of_fit: Option<GoodnessOfFit>,
}

/// `score_k = Σ_b L_b ln p_{b,k} + ln P(Y = k)`.
pub fn log_scores(model: &ClassifierModel, scan: &ScanMatrix) -> Result<Vec<f64>> {
    model.log_scores_from_totals(&scan.window_totals())
}

/// Maximum a posteriori class. Ties go to the lowest class index.
pub fn classify(model: &ClassifierModel, scan: &ScanMatrix) -> Result<Decision> {
    let scores = log_scores(model, scan)?;
    let index = argmax(&scores);
    Ok(Decision {
        label: model.classes[index].label.clone(),
        index,
        posteriors: softmax(&scores),
        log_scores: scores,
        expected_losses: None,
        goodness_of_fit: None,
    })
}

pub fn posterior_probabilities(model: &ClassifierModel, scan: &ScanMatrix) -> Result<Vec<f64>> {
    Ok(softmax(&log_scores(model, scan)?))
}

/// Minimum expected-loss class. Ties go to the lowest class index.
pub fn classify_with_loss(
    model: &ClassifierModel,
    scan: &ScanMatrix,
    loss: &LossMatrix,
) -> Result<Decision> {
    if loss.size() != model.len() {
        return Err(Error::domain(format!(
            "loss matrix is {0}x{0} but the model has {1} classes",
            loss.size(),
            model.len()
        )));
    }
    let scores = log_scores(model, scan)?;
    let posteriors = softmax(&scores);
    let losses = loss.expected_losses(&posteriors);
    let index = argmin(&losses);
    Ok(Decision {
        label: model.classes[index].label.clone(),
        index,
        log_scores: scores,
        posteriors,
        expected_losses: Some(losses),
        goodness_of_fit: None,
    })
}

/// Pearson chi-squared test of the scan's window totals against a fully
/// specified spectrum, with `B − 1` degrees of freedom.
pub fn goodness_of_fit(scan: &ScanMatrix, spectrum: &EnergySpectrum) -> Result<GoodnessOfFit> {
    goodness_of_fit_totals(&scan.window_totals(), spectrum)
}

pub fn goodness_of_fit_totals(totals: &[u64], spectrum: &EnergySpectrum) -> Result<GoodnessOfFit> {
    if totals.len() != spectrum.windows() {
        return Err(Error::DimensionMismatch {
            left_name: "spectrum",
            left: spectrum.windows(),
            right_name: "scan",
            right: totals.len(),
        });
    }
    let n: u64 = totals.iter().sum();
    if n == 0 {
        return Err(Error::UndefinedTest(
            "goodness of fit needs a scan with at least one count".into(),
        ));
    }
    if !spectrum.is_strictly_positive() {
        return Err(Error::UndefinedTest(
            "goodness of fit needs positive expected counts in every window".into(),
        ));
    }
    let n = n as f64;
    let statistic: f64 = totals
        .iter()
        .zip(spectrum.probs())
        .map(|(&observed, &p)| {
            let expected = n * p;
            (observed as f64 - expected).powi(2) / expected
        })
        .sum();
    let degrees_of_freedom = totals.len() - 1;
    Ok(GoodnessOfFit {
        statistic,
        degrees_of_freedom,
        p_value: chi_squared_sf(statistic, degrees_of_freedom),
    })
}

/// Survival function of the chi-squared distribution, `Q(df/2, x/2)`.
pub fn chi_squared_sf(x: f64, degrees_of_freedom: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(degrees_of_freedom as f64 / 2.0, x / 2.0)
}
