//! Synthetic portal scans under the Poisson emission model.
//!
//! Entry `(b, t)` of a scan is `Poisson(Σ_j g(d_t, M_j) λ_{b,j})` with all
//! entries independent. Each column is one listed distance; the rates are
//! taken as per-column rates, so the integration time of a column is folded
//! into `λ`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::MixtureSpec;

/// Shape of the attenuation function `g(d, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attenuation {
    /// `g(d, M) = (1 − d)·M`, defined for `d ≤ 1`.
    Linear,
    /// `g(d, M) = M / (1 + d)²`, defined for `d > −1`.
    InverseSquare,
}

impl Attenuation {
    pub fn name(self) -> &'static str {
        match self {
            Attenuation::Linear => "linear",
            Attenuation::InverseSquare => "inverse-square",
        }
    }

    fn unit_factor(self, d: f64) -> f64 {
        match self {
            Attenuation::Linear => 1.0 - d,
            Attenuation::InverseSquare => 1.0 / ((1.0 + d) * (1.0 + d)),
        }
    }
}

impl std::str::FromStr for Attenuation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Attenuation::Linear),
            "inverse-square" => Ok(Attenuation::InverseSquare),
            other => Err(Error::domain(format!(
                "unknown attenuation '{other}' (expected 'linear' or 'inverse-square')"
            ))),
        }
    }
}

/// Distances visited during a scan plus the attenuation applied at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryProfile {
    distances: Vec<f64>,
    attenuation: Attenuation,
    gain: f64,
}

impl GeometryProfile {
    pub fn new(distances: Vec<f64>, attenuation: Attenuation) -> Result<Self> {
        GeometryProfile {
            distances,
            attenuation,
            gain: 1.0,
        }
        .validated()
    }

    /// Multiplies `g` by a constant. Used to match the expected totals of two
    /// different attenuation forms.
    pub fn with_gain(mut self, gain: f64) -> Result<Self> {
        self.gain = gain;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        if self.distances.is_empty() {
            return Err(Error::domain("geometry profile needs at least one distance"));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(Error::domain(format!("invalid profile gain {}", self.gain)));
        }
        for &d in &self.distances {
            let g = self.attenuation.unit_factor(d);
            if !d.is_finite() || !g.is_finite() || g < 0.0 {
                return Err(Error::domain(format!(
                    "{} attenuation is negative or undefined at distance {d}",
                    self.attenuation.name()
                )));
            }
        }
        Ok(self)
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn attenuation(&self) -> Attenuation {
        self.attenuation
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn steps(&self) -> usize {
        self.distances.len()
    }

    /// `g(d, M)`.
    pub fn factor(&self, distance: f64, quantity: f64) -> f64 {
        self.gain * self.attenuation.unit_factor(distance) * quantity
    }

    /// `Σ_t g(d_t, 1)`.
    pub fn total_weight(&self) -> f64 {
        self.distances.iter().map(|&d| self.factor(d, 1.0)).sum()
    }

    /// A copy of `self` whose gain makes `total_weight` equal to `other`'s.
    pub fn matched_to(&self, other: &GeometryProfile) -> Result<Self> {
        let own = self.total_weight();
        if own <= 0.0 {
            return Err(Error::domain("cannot rescale a profile with zero total weight"));
        }
        self.clone().with_gain(self.gain * other.total_weight() / own)
    }

    pub fn name(&self) -> String {
        if self.gain == 1.0 {
            self.attenuation.name().to_string()
        } else {
            format!("{}*{}", self.attenuation.name(), self.gain)
        }
    }
}

/// The 20-point drive-through schedule `(0.9, 0.8, …, 0.1, 0, 0, 0.1, …, 0.9)`
/// with linear attenuation.
pub fn default_portal_profile() -> GeometryProfile {
    let approach: Vec<f64> = (0..10).map(|i| f64::from(9 - i) / 10.0).collect();
    let mut distances = approach.clone();
    distances.extend(approach.iter().rev());
    GeometryProfile::new(distances, Attenuation::Linear).expect("static profile is valid")
}

/// Identifies a reproducible random stream: a 64-bit seed plus a stream
/// index. The generator is ChaCha8 keyed by the seed, with the index as its
/// stream number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A new seed derived from this seed and a tag, for keying independent
    /// families of streams (one per truth class, per catalog, ...).
    pub fn derive_seed(seed: u64, tag: u64) -> u64 {
        splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// One draw from `Poisson(mean)`. Exact: multiplication of uniforms for
/// means below 12, transformed rejection above.
pub fn poisson_sample<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    Ok(CellSampler::new(mean)?.sample(rng))
}

#[derive(Debug, Clone)]
enum CellSampler {
    Zero,
    Poisson(Poisson<f64>),
}

impl CellSampler {
    fn new(mean: f64) -> Result<Self> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::domain(format!(
                "Poisson mean must be finite and nonnegative, got {mean}"
            )));
        }
        if mean == 0.0 {
            return Ok(CellSampler::Zero);
        }
        Poisson::new(mean)
            .map(CellSampler::Poisson)
            .map_err(|e| Error::domain(format!("Poisson mean {mean}: {e}")))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            CellSampler::Zero => 0,
            CellSampler::Poisson(p) => p.sample(rng) as u64,
        }
    }
}

/// Free-form provenance carried alongside a scan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanMetadata {
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub profile: Option<String>,
    pub source: Option<String>,
}

/// The `B × T` count matrix of one container passage: rows are energy
/// windows, columns are time steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanMatrix {
    window_labels: Vec<String>,
    steps: usize,
    /// Row-major, `counts[b * steps + t]`.
    counts: Vec<u64>,
    pub metadata: ScanMetadata,
}

impl ScanMatrix {
    /// Builds a scan from one row of counts per window.
    pub fn from_window_rows(window_labels: Vec<String>, rows: Vec<Vec<u64>>) -> Result<Self> {
        if rows.len() != window_labels.len() {
            return Err(Error::domain(format!(
                "{} window labels for {} count rows",
                window_labels.len(),
                rows.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::domain("scan has no energy windows"));
        }
        let steps = rows[0].len();
        if rows.iter().any(|r| r.len() != steps) {
            return Err(Error::domain("scan rows have different lengths"));
        }
        Ok(ScanMatrix {
            window_labels,
            steps,
            counts: rows.into_iter().flatten().collect(),
            metadata: ScanMetadata::default(),
        })
    }

    /// Builds a scan from one vector `R_d` of window counts per time step.
    pub fn from_time_columns(window_labels: Vec<String>, columns: &[Vec<u64>]) -> Result<Self> {
        let windows = window_labels.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != windows) {
            return Err(Error::DimensionMismatch {
                left_name: "window labels",
                left: windows,
                right_name: "count column",
                right: bad.len(),
            });
        }
        let rows = (0..windows)
            .map(|b| columns.iter().map(|c| c[b]).collect())
            .collect();
        ScanMatrix::from_window_rows(window_labels, rows)
    }

    pub fn windows(&self) -> usize {
        self.window_labels.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Replaces the window labels, keeping the counts.
    pub fn with_window_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.windows() {
            return Err(Error::DimensionMismatch {
                left_name: "scan",
                left: self.windows(),
                right_name: "label list",
                right: labels.len(),
            });
        }
        self.window_labels = labels;
        Ok(self)
    }

    pub fn window_labels(&self) -> &[String] {
        &self.window_labels
    }

    pub fn count(&self, window: usize, step: usize) -> u64 {
        self.counts[window * self.steps + step]
    }

    pub fn window_row(&self, window: usize) -> &[u64] {
        &self.counts[window * self.steps..(window + 1) * self.steps]
    }

    /// `L_b = Σ_d R_{b,d}`.
    pub fn window_totals(&self) -> Vec<u64> {
        (0..self.windows())
            .map(|b| self.window_row(b).iter().sum())
            .collect()
    }

    /// `N_d = Σ_b R_{b,d}`.
    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.steps)
            .map(|t| (0..self.windows()).map(|b| self.count(b, t)).sum())
            .collect()
    }

    /// `N = Σ_{b,d} R_{b,d}`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// A copy with the time columns reordered by `order`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.steps];
        if order.len() != self.steps
            || order.iter().any(|&t| t >= self.steps || std::mem::replace(&mut seen[t], true))
        {
            return Err(Error::domain("column order is not a permutation"));
        }
        let rows = (0..self.windows())
            .map(|b| order.iter().map(|&t| self.count(b, t)).collect())
            .collect();
        let mut out = ScanMatrix::from_window_rows(self.window_labels.clone(), rows)?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }
}

/// Default window labels `Window 1 … Window B`.
pub fn default_window_labels(windows: usize) -> Vec<String> {
    (1..=windows).map(|b| format!("Window {b}")).collect()
}

/// Precomputed per-cell samplers for repeatedly scanning one source.
///
/// Cells are drawn column by column, window by window, so a given generator
/// state always produces the same matrix.
#[derive(Debug, Clone)]
pub struct ScanSampler {
    windows: usize,
    steps: usize,
    /// Column-major, `cells[t * windows + b]`.
    cells: Vec<CellSampler>,
    means: Vec<f64>,
    window_labels: Vec<String>,
    description: String,
    profile_name: String,
}

impl ScanSampler {
    pub fn new(source: &MixtureSpec, profile: &GeometryProfile) -> Result<Self> {
        Self::with_background(source, profile, None)
    }

    /// Like [`ScanSampler::new`], optionally superposing an additive
    /// background source on every column. Off unless requested.
    pub fn with_background(
        source: &MixtureSpec,
        profile: &GeometryProfile,
        background: Option<&MixtureSpec>,
    ) -> Result<Self> {
        let windows = source.windows();
        if let Some(bg) = background {
            if bg.windows() != windows {
                return Err(Error::DimensionMismatch {
                    left_name: "source",
                    left: windows,
                    right_name: "background",
                    right: bg.windows(),
                });
            }
        }
        let steps = profile.steps();
        let mut means = Vec::with_capacity(windows * steps);
        for &d in profile.distances() {
            for b in 0..windows {
                let mut mean: f64 = source
                    .components()
                    .iter()
                    .map(|(m, q)| profile.factor(d, *q) * m.rates()[b])
                    .sum();
                if let Some(bg) = background {
                    mean += bg
                        .components()
                        .iter()
                        .map(|(m, q)| profile.factor(d, *q) * m.rates()[b])
                        .sum::<f64>();
                }
                means.push(mean);
            }
        }
        let cells = means
            .iter()
            .map(|&m| CellSampler::new(m))
            .collect::<Result<_>>()?;
        let mut description = source.description();
        if let Some(bg) = background {
            description = format!("{description} with background {}", bg.description());
        }
        Ok(ScanSampler {
            windows,
            steps,
            cells,
            means,
            window_labels: default_window_labels(windows),
            description,
            profile_name: profile.name(),
        })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    /// Expected value of entry `(b, t)`.
    pub fn mean(&self, window: usize, step: usize) -> f64 {
        self.means[step * self.windows + window]
    }

    /// Expected total count `E[N]`.
    pub fn expected_total(&self) -> f64 {
        self.means.iter().sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScanMatrix {
        let mut columns = vec![vec![0u64; self.windows]; self.steps];
        for (t, column) in columns.iter_mut().enumerate() {
            for (b, slot) in column.iter_mut().enumerate() {
                *slot = self.cells[t * self.windows + b].sample(rng);
            }
        }
        ScanMatrix::from_time_columns(self.window_labels.clone(), &columns)
            .expect("sampler dimensions are consistent")
    }

    /// Window totals `L_b` of a scan drawn exactly as [`ScanSampler::sample`]
    /// would draw it, without materializing the matrix.
    pub fn sample_window_totals<R: Rng + ?Sized>(&self, rng: &mut R, totals: &mut [u64]) {
        debug_assert_eq!(totals.len(), self.windows);
        totals.iter_mut().for_each(|x| *x = 0);
        for column in self.cells.chunks_exact(self.windows) {
            for (slot, cell) in totals.iter_mut().zip(column) {
                *slot += cell.sample(rng);
            }
        }
    }

    /// Draws a scan from `stream` and records its provenance.
    pub fn sample_stream(&self, stream: RngStream) -> ScanMatrix {
        let mut scan = self.sample(&mut stream.rng());
        scan.metadata = ScanMetadata {
            seed: Some(stream.seed),
            stream: Some(stream.stream),
            profile: Some(self.profile_name.clone()),
            source: Some(self.description.clone()),
        };
        scan
    }
}

/// Draws one scan of `source` passing through `profile`.
pub fn simulate_scan(
    source: &MixtureSpec,
    profile: &GeometryProfile,
    rng: RngStream,
) -> Result<ScanMatrix> {
    Ok(ScanSampler::new(source, profile)?.sample_stream(rng))
}
