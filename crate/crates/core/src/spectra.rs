//! Energy-spectrum algebra.
//!
//! A material class emits counts in `B` energy windows at per-unit rates
//! `λ_b`. Its energy spectrum is the normalized rate vector `p_b = λ_b / Σλ`,
//! which does not depend on source distance or quantity. Noninterfering
//! mixtures add rates, so the spectrum of a mixture is the normalized sum of
//! quantity-weighted component rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `Σ p_b = 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Floor used by [`EnergySpectrum::floored`] when a caller opts into it.
pub const DEFAULT_FLOOR: f64 = 1e-12;

/// A named material with per-window emission rates per unit quantity at
/// distance zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialClass {
    label: String,
    rates: Vec<f64>,
    dangerous: bool,
}

impl MaterialClass {
    pub fn new(label: impl Into<String>, rates: Vec<f64>, dangerous: bool) -> Result<Self> {
        let label = label.into();
        validate_rates(&rates).map_err(|e| match e {
            Error::Domain(msg) => Error::domain(format!("material '{label}': {msg}")),
            other => other,
        })?;
        Ok(MaterialClass {
            label,
            rates,
            dangerous,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn dangerous(&self) -> bool {
        self.dangerous
    }

    pub fn windows(&self) -> usize {
        self.rates.len()
    }

    /// `λ_k = Σ_b λ_{b,k}`.
    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn spectrum(&self) -> EnergySpectrum {
        // Rates were validated at construction.
        normalize(&self.rates).expect("validated rates normalize")
    }
}

fn validate_rates(rates: &[f64]) -> Result<()> {
    if rates.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 energy windows, got {}",
            rates.len()
        )));
    }
    if let Some((b, r)) = rates
        .iter()
        .enumerate()
        .find(|(_, r)| !r.is_finite() || **r < 0.0)
    {
        return Err(Error::domain(format!(
            "rate in window {} is {r}; rates must be finite and nonnegative",
            b + 1
        )));
    }
    if !rates.iter().any(|&r| r > 0.0) {
        return Err(Error::domain("all rates are zero"));
    }
    Ok(())
}

/// A point on the probability simplex over energy windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EnergySpectrum {
    probs: Vec<f64>,
}

impl EnergySpectrum {
    /// Wraps an explicit probability vector. Entries must lie in `[0, 1]`
    /// and sum to one within [`SIMPLEX_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::domain(format!(
                "a spectrum needs at least 2 windows, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::domain(format!(
                "spectrum entry {p} is outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::domain(format!(
                "spectrum sums to {sum}, not 1"
            )));
        }
        Ok(EnergySpectrum { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn windows(&self) -> usize {
        self.probs.len()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// Raises every entry to at least `floor` and renormalizes. Intended for
    /// spectra estimated with empty windows that must feed a log-likelihood.
    pub fn floored(&self, floor: f64) -> Result<EnergySpectrum> {
        if !(floor > 0.0 && floor < 1.0 / self.probs.len() as f64) {
            return Err(Error::domain(format!("invalid spectrum floor {floor}")));
        }
        let raised: Vec<f64> = self.probs.iter().map(|&p| p.max(floor)).collect();
        normalize(&raised)
    }
}

impl TryFrom<Vec<f64>> for EnergySpectrum {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        EnergySpectrum::new(probs)
    }
}

impl From<EnergySpectrum> for Vec<f64> {
    fn from(s: EnergySpectrum) -> Self {
        s.probs
    }
}

/// A noninterfering mixture: a list of materials with nonnegative quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    components: Vec<(MaterialClass, f64)>,
}

impl MixtureSpec {
    pub fn new(components: Vec<(MaterialClass, f64)>) -> Result<Self> {
        let Some((first, _)) = components.first() else {
            return Err(Error::domain("mixture has no components"));
        };
        let windows = first.windows();
        for (material, quantity) in &components {
            if material.windows() != windows {
                return Err(Error::DimensionMismatch {
                    left_name: "first mixture component",
                    left: windows,
                    right_name: "another mixture component",
                    right: material.windows(),
                });
            }
            if !quantity.is_finite() || *quantity < 0.0 {
                return Err(Error::domain(format!(
                    "quantity {quantity} of '{}' must be finite and nonnegative",
                    material.label()
                )));
            }
        }
        if !components.iter().any(|(_, q)| *q > 0.0) {
            return Err(Error::domain("mixture has no component with positive quantity"));
        }
        Ok(MixtureSpec { components })
    }

    /// A single material at the given quantity.
    pub fn pure(material: MaterialClass, quantity: f64) -> Result<Self> {
        MixtureSpec::new(vec![(material, quantity)])
    }

    pub fn components(&self) -> &[(MaterialClass, f64)] {
        &self.components
    }

    pub fn windows(&self) -> usize {
        self.components[0].0.windows()
    }

    /// Combined rates `Σ_j M_j λ_{b,j}` at distance zero.
    pub fn combined_rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.windows()];
        for (material, quantity) in &self.components {
            for (acc, rate) in out.iter_mut().zip(material.rates()) {
                *acc += quantity * rate;
            }
        }
        out
    }

    /// Every component has the same quantity scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        MixtureSpec::new(
            self.components
                .iter()
                .map(|(m, q)| (m.clone(), q * factor))
                .collect(),
        )
    }

    /// Human-readable form such as `0.025*HEU+0.941*Fertilizer`, with
    /// quantities rounded to four decimals.
    pub fn description(&self) -> String {
        self.components
            .iter()
            .map(|(m, q)| {
                let q = format!("{q:.4}");
                let q = q.trim_end_matches('0').trim_end_matches('.');
                format!("{q}*{}", m.label())
            })
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// `p_b = r_b / Σ r`.
pub fn normalize(rates: &[f64]) -> Result<EnergySpectrum> {
    validate_rates(rates)?;
    let total: f64 = rates.iter().sum();
    let probs = rates.iter().map(|r| r / total).collect();
    Ok(EnergySpectrum { probs })
}

/// Spectrum of a noninterfering mixture. Distance factors common to all
/// components cancel, so the result is distance free.
pub fn mix(spec: &MixtureSpec) -> EnergySpectrum {
    normalize(&spec.combined_rates()).expect("mixture invariants give positive rates")
}

/// Kullback–Leibler divergence `Σ_b p_b ln(p_b / q_b)` in nats.
///
/// Terms with `p_b = 0` contribute zero. Returns `+∞` when some `q_b = 0`
/// while `p_b > 0`.
///
/// # Panics
///
/// If `p` and `q` have different window counts.
pub fn kl_divergence(p: &EnergySpectrum, q: &EnergySpectrum) -> f64 {
    assert_eq!(
        p.windows(),
        q.windows(),
        "kl_divergence on spectra of different widths"
    );
    let mut total = 0.0;
    for (&pb, &qb) in p.probs.iter().zip(&q.probs) {
        if pb == 0.0 {
            continue;
        }
        if qb == 0.0 {
            return f64::INFINITY;
        }
        total += pb * (pb / qb).ln();
    }
    // Rounding can leave a tiny negative value when p ≈ q.
    total.max(0.0)
}

/// `η*(p, q) = η(p, q) + η(q, p)`.
pub fn symmetrized_kl(p: &EnergySpectrum, q: &EnergySpectrum) -> f64 {
    kl_divergence(p, q) + kl_divergence(q, p)
}

/// Quantity `M` with `M·λ_1 = target`, the mean first-window count at
/// distance zero.
pub fn solve_quantity(class: &MaterialClass, target_first_window_rate: f64) -> Result<f64> {
    if !(target_first_window_rate > 0.0 && target_first_window_rate.is_finite()) {
        return Err(Error::domain(format!(
            "target rate {target_first_window_rate} must be positive"
        )));
    }
    let first = class.rates()[0];
    if first <= 0.0 {
        return Err(Error::domain(format!(
            "material '{}' has zero first-window rate",
            class.label()
        )));
    }
    Ok(target_first_window_rate / first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn material(label: &str, rates: &[f64]) -> MaterialClass {
        MaterialClass::new(label, rates.to_vec(), false).unwrap()
    }

    fn heu() -> MaterialClass {
        material("HEU", &[17700.0, 616.0, 247.0])
    }

    fn fertilizer() -> MaterialClass {
        material("Fertilizer", &[2720.0, 1000.0, 519.0])
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn normalize_heu_rates() {
        let s = normalize(&[17700.0, 616.0, 247.0]).unwrap();
        assert_close(s.probs(), &[0.954, 0.033, 0.013], 0.001);
    }

    #[test]
    fn normalize_uniform() {
        let s = normalize(&[1.0; 4]).unwrap();
        assert_close(s.probs(), &[0.25; 4], 0.0);
    }

    #[test]
    fn normalize_fertilizer_rates() {
        let s = normalize(&[2720.0, 1000.0, 519.0]).unwrap();
        assert_close(s.probs(), &[0.6415, 0.2359, 0.1224], 0.001);
    }

    #[test]
    fn normalize_rejects_bad_input() {
        assert!(matches!(normalize(&[0.0, 0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(normalize(&[1.0, -1.0, 2.0]), Err(Error::Domain(_))));
        assert!(matches!(normalize(&[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn spectrum_constructor_checks_simplex() {
        assert!(EnergySpectrum::new(vec![0.5, 0.5]).is_ok());
        assert!(EnergySpectrum::new(vec![0.5, 0.4]).is_err());
        assert!(EnergySpectrum::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn floor_makes_spectrum_positive() {
        let s = EnergySpectrum::new(vec![1.0, 0.0]).unwrap();
        assert!(!s.is_strictly_positive());
        let f = s.floored(DEFAULT_FLOOR).unwrap();
        assert!(f.is_strictly_positive());
        assert!((f.probs().iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOLERANCE);
    }

    #[test]
    fn mix_heu_fertilizer() {
        // Window totals (3002.02, 956.4, 494.554) by hand.
        let m = MixtureSpec::new(vec![(heu(), 0.025), (fertilizer(), 0.941)]).unwrap();
        let total = 3002.02 + 956.4 + 494.554;
        assert_close(
            mix(&m).probs(),
            &[3002.02 / total, 956.4 / total, 494.554 / total],
            1e-9,
        );
        assert_close(mix(&m).probs(), &[0.674, 0.215, 0.111], 0.001);
    }

    #[test]
    fn mix_single_component_is_normalized_rates() {
        for q in [0.01, 1.0, 37.5] {
            let m = MixtureSpec::pure(heu(), q).unwrap();
            assert_close(mix(&m).probs(), heu().spectrum().probs(), 1e-15);
        }
    }

    #[test]
    fn mix_wgpu_heu_half_units() {
        let wgpu = material("WGPu", &[60900.0, 3900.0, 285.0]);
        let m = MixtureSpec::new(vec![(wgpu, 0.5), (heu(), 0.5)]).unwrap();
        assert_close(mix(&m).probs(), &[0.9397, 0.0540, 0.0064], 1e-4);
    }

    #[test]
    fn mixture_rejects_empty_and_zero() {
        assert!(matches!(MixtureSpec::new(vec![]), Err(Error::Domain(_))));
        assert!(MixtureSpec::new(vec![(heu(), 0.0)]).is_err());
        assert!(MixtureSpec::new(vec![(heu(), -1.0), (fertilizer(), 1.0)]).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = EnergySpectrum::new(vec![0.954, 0.033, 0.013]).unwrap();
        let q = EnergySpectrum::new(vec![0.635, 0.243, 0.122]).unwrap();
        assert_eq!(kl_divergence(&p, &p), 0.0);
        // Three-term hand evaluation.
        let oracle = 0.954 * (0.954f64 / 0.635).ln()
            + 0.033 * (0.033f64 / 0.243).ln()
            + 0.013 * (0.013f64 / 0.122).ln();
        assert!((kl_divergence(&p, &q) - oracle).abs() < 1e-15);
        assert!((oracle - 0.293_320_683_581_660_8).abs() < 1e-12);

        let point = EnergySpectrum::new(vec![1.0, 0.0]).unwrap();
        let half = EnergySpectrum::new(vec![0.5, 0.5]).unwrap();
        assert!((kl_divergence(&point, &half) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl_divergence(&half, &point), f64::INFINITY);
    }

    #[test]
    fn symmetrized_examples() {
        let point = EnergySpectrum::new(vec![1.0, 0.0]).unwrap();
        let half = EnergySpectrum::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(symmetrized_kl(&half, &half), 0.0);
        assert_eq!(symmetrized_kl(&point, &half), f64::INFINITY);
    }

    #[test]
    fn solve_quantity_examples() {
        let kitty = material("Kitty litter", &[1700.0, 790.0, 208.0]);
        let m = solve_quantity(&kitty, 3000.0).unwrap();
        assert!((m - 3000.0 / 1700.0).abs() < 1e-12);
        assert!((m - 1.759).abs() < 0.01);
        assert_eq!(solve_quantity(&heu(), 17700.0).unwrap(), 1.0);
        assert!((solve_quantity(&fertilizer(), 3000.0).unwrap() - 1.1029).abs() < 1e-4);

        let dark = material("dark", &[0.0, 1.0, 1.0]);
        assert!(matches!(solve_quantity(&dark, 3000.0), Err(Error::Domain(_))));
    }

    fn simplex(b: usize) -> impl Strategy<Value = EnergySpectrum> {
        prop::collection::vec(1e-6f64..1.0, b).prop_map(|r| normalize(&r).unwrap())
    }

    fn simplex_pair() -> impl Strategy<Value = (EnergySpectrum, EnergySpectrum)> {
        (2usize..8).prop_flat_map(|b| (simplex(b), simplex(b)))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(r in prop::collection::vec(0.0f64..1e5, 2..10)) {
            prop_assume!(r.iter().any(|&x| x > 0.0));
            let once = normalize(&r).unwrap();
            let twice = normalize(once.probs()).unwrap();
            for (a, b) in once.probs().iter().zip(twice.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            prop_assert!((once.probs().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        }

        #[test]
        fn mix_is_scale_invariant(
            a in 1e-3f64..10.0, b in 1e-3f64..10.0, alpha in 1e-3f64..1e3,
        ) {
            let m = MixtureSpec::new(vec![(heu(), a), (fertilizer(), b)]).unwrap();
            let scaled = m.scaled(alpha).unwrap();
            for (x, y) in mix(&m).probs().iter().zip(mix(&scaled).probs()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn kl_is_nonnegative((p, q) in simplex_pair()) {
            let d = kl_divergence(&p, &q);
            prop_assert!(d >= 0.0);
            if p != q {
                prop_assert!(symmetrized_kl(&p, &q) > 0.0);
            }
        }

        #[test]
        fn symmetrized_is_symmetric((p, q) in simplex_pair()) {
            prop_assert!((symmetrized_kl(&p, &q) - symmetrized_kl(&q, &p)).abs() <= 1e-12);
        }

        #[test]
        fn refining_a_window_never_decreases_kl(
            (p, q) in simplex_pair(),
            window in 0usize..8,
            ratio_p in 0.01f64..0.99,
            ratio_q in 0.01f64..0.99,
            proportional in any::<bool>(),
        ) {
            let w = window % p.windows();
            let ratio_q = if proportional { ratio_p } else { ratio_q };
            let split = |s: &EnergySpectrum, r: f64| {
                let mut out = Vec::with_capacity(s.windows() + 1);
                for (b, &v) in s.probs().iter().enumerate() {
                    if b == w {
                        out.push(v * r);
                        out.push(v * (1.0 - r));
                    } else {
                        out.push(v);
                    }
                }
                normalize(&out).unwrap()
            };
            let before = kl_divergence(&p, &q);
            let after = kl_divergence(&split(&p, ratio_p), &split(&q, ratio_q));
            prop_assert!(after >= before - 1e-12);
        }
    }
}
