//! Dirichlet-multinomial estimation of class spectra from labeled scans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::ScanMatrix;
use crate::spectra::EnergySpectrum;

/// Dirichlet prior (or posterior) on a class spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletPrior {
    theta: Vec<f64>,
}

impl DirichletPrior {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::domain("Dirichlet prior needs at least one window"));
        }
        if let Some((b, t)) = theta
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && **t > 0.0))
        {
            return Err(Error::domain(format!(
                "Dirichlet parameter for window {} is {t}; must be positive",
                b + 1
            )));
        }
        Ok(DirichletPrior { theta })
    }

    /// `θ_b = 1` in every window.
    pub fn uniform(windows: usize) -> Result<Self> {
        DirichletPrior::new(vec![1.0; windows])
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn windows(&self) -> usize {
        self.theta.len()
    }

    pub fn concentration(&self) -> f64 {
        self.theta.iter().sum()
    }

    pub fn mean(&self) -> EnergySpectrum {
        let total = self.concentration();
        EnergySpectrum::new(self.theta.iter().map(|t| t / total).collect())
            .expect("positive parameters normalize onto the simplex")
    }
}

impl TryFrom<Vec<f64>> for DirichletPrior {
    type Error = Error;

    fn try_from(theta: Vec<f64>) -> Result<Self> {
        DirichletPrior::new(theta)
    }
}

impl From<DirichletPrior> for Vec<f64> {
    fn from(p: DirichletPrior) -> Self {
        p.theta
    }
}

/// Historical scans of one known class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    label: String,
    scans: Vec<ScanMatrix>,
}

impl TrainingSet {
    pub fn new(label: impl Into<String>, scans: Vec<ScanMatrix>) -> Result<Self> {
        if let Some(first) = scans.first() {
            for scan in &scans[1..] {
                if scan.windows() != first.windows() {
                    return Err(Error::DimensionMismatch {
                        left_name: "first training scan",
                        left: first.windows(),
                        right_name: "another training scan",
                        right: scan.windows(),
                    });
                }
            }
        }
        Ok(TrainingSet {
            label: label.into(),
            scans,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn scans(&self) -> &[ScanMatrix] {
        &self.scans
    }

    pub fn windows(&self) -> Option<usize> {
        self.scans.first().map(ScanMatrix::windows)
    }

    /// `Σ_{i,d} R^i_{b,d}` for each window.
    pub fn window_totals(&self, windows: usize) -> Vec<u64> {
        let mut totals = vec![0u64; windows];
        for scan in &self.scans {
            for (t, s) in totals.iter_mut().zip(scan.window_totals()) {
                *t += s;
            }
        }
        totals
    }
}

/// Conjugate update `θ'_b = θ_b + Σ_{i,d} R^i_{b,d}`.
///
/// A mixture-of-Dirichlets prior would update each component the same way
/// and reweight by marginal likelihood; only a single component is supported.
pub fn posterior_parameters(prior: &DirichletPrior, data: &TrainingSet) -> Result<DirichletPrior> {
    if let Some(w) = data.windows() {
        if w != prior.windows() {
            return Err(Error::DimensionMismatch {
                left_name: "prior",
                left: prior.windows(),
                right_name: "training scans",
                right: w,
            });
        }
    }
    let totals = data.window_totals(prior.windows());
    DirichletPrior::new(
        prior
            .theta
            .iter()
            .zip(totals)
            .map(|(t, n)| t + n as f64)
            .collect(),
    )
}

/// Posterior mean `(counts_b + θ_b) / (N + Σθ)`.
pub fn posterior_spectrum(prior: &DirichletPrior, data: &TrainingSet) -> Result<EnergySpectrum> {
    Ok(posterior_parameters(prior, data)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::default_window_labels;
    use proptest::prelude::*;

    fn scan(rows: Vec<Vec<u64>>) -> ScanMatrix {
        ScanMatrix::from_window_rows(default_window_labels(rows.len()), rows).unwrap()
    }

    #[test]
    fn empty_set_returns_prior_mean() {
        let prior = DirichletPrior::new(vec![1.0, 2.0, 5.0]).unwrap();
        let data = TrainingSet::new("x", vec![]).unwrap();
        assert_eq!(posterior_parameters(&prior, &data).unwrap(), prior);
        let p = posterior_spectrum(&prior, &data).unwrap();
        assert_eq!(p.probs(), &[0.125, 0.25, 0.625]);
    }

    #[test]
    fn single_scan_hand_values() {
        let prior = DirichletPrior::uniform(3).unwrap();
        let data = TrainingSet::new(
            "x",
            vec![scan(vec![vec![1000, 2000], vec![400, 600], vec![500, 0]])],
        )
        .unwrap();
        let p = posterior_spectrum(&prior, &data).unwrap();
        let expected = [3001.0 / 4503.0, 1001.0 / 4503.0, 501.0 / 4503.0];
        for (a, b) in p.probs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_checks() {
        let prior = DirichletPrior::uniform(2).unwrap();
        let data = TrainingSet::new("x", vec![scan(vec![vec![1], vec![2], vec![3]])]).unwrap();
        assert!(matches!(
            posterior_spectrum(&prior, &data),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(TrainingSet::new(
            "x",
            vec![scan(vec![vec![1], vec![2]]), scan(vec![vec![1], vec![2], vec![3]])]
        )
        .is_err());
        assert!(DirichletPrior::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletPrior::new(vec![]).is_err());
    }

    fn scans_strategy() -> impl Strategy<Value = Vec<Vec<Vec<u64>>>> {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(0u64..5000, 1..4), 3..=3),
            0..5,
        )
    }

    proptest! {
        #[test]
        fn sequential_matches_batch(a in scans_strategy(), b in scans_strategy(),
                                    theta in prop::collection::vec(0.1f64..10.0, 3..=3)) {
            let prior = DirichletPrior::new(theta).unwrap();
            let to_scans = |v: &Vec<Vec<Vec<u64>>>| -> Vec<ScanMatrix> {
                v.iter()
                    .map(|rows| {
                        let t = rows.iter().map(Vec::len).min().unwrap();
                        scan(rows.iter().map(|r| r[..t].to_vec()).collect())
                    })
                    .collect()
            };
            let (sa, sb) = (to_scans(&a), to_scans(&b));
            let step1 = posterior_parameters(&prior, &TrainingSet::new("k", sa.clone()).unwrap()).unwrap();
            let step2 = posterior_parameters(&step1, &TrainingSet::new("k", sb.clone()).unwrap()).unwrap();
            let all: Vec<ScanMatrix> = sa.into_iter().chain(sb).collect();
            let batch = posterior_parameters(&prior, &TrainingSet::new("k", all).unwrap()).unwrap();
            for (x, y) in step2.theta().iter().zip(batch.theta()) {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs());
            }
        }

        #[test]
        fn shrinks_toward_prior_mean(counts in prop::collection::vec(0u64..100_000, 3..=3),
                                     theta in prop::collection::vec(0.01f64..50.0, 3..=3)) {
            let prior = DirichletPrior::new(theta).unwrap();
            let data = TrainingSet::new("k", vec![scan(counts.iter().map(|&c| vec![c]).collect())]).unwrap();
            let p = posterior_spectrum(&prior, &data).unwrap();
            prop_assert!(p.is_strictly_positive());
            let n: u64 = counts.iter().sum();
            let a = prior.concentration();
            let w = a / (n as f64 + a);
            let prior_mean = prior.mean();
            for b in 0..3 {
                let empirical = if n == 0 { 0.0 } else { counts[b] as f64 / n as f64 };
                let expected = w * prior_mean.probs()[b] + (1.0 - w) * empirical;
                prop_assert!((p.probs()[b] - expected).abs() < 1e-12);
            }
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
