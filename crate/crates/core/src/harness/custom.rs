//! Declarative experiments loaded from TOML.
//!
//! ```toml
//! name = "heu-in-salt"
//! seed = 7
//! replicates = 2000
//! priors = "uniform"          # "rare-man-made", or a table of label = probability
//! materials = "builtin"       # "printed", or a path to a model file
//! attenuation = "linear"      # or "inverse-square"
//! screening = "off"           # "auto", or a list of benchmark labels
//!
//! [[class]]
//! label = "0.025HEU+Salt"
//! components = [{ material = "HEU", quantity = 0.025 }, { material = "Salt" }]
//! first_window_rate = 3000    # solves the quantity left unset
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::benchmark::select_benchmarks;
use crate::classifier::{LossMatrix, Priors};
use crate::data::{builtin, builtin_printed};
use crate::error::{Error, ParseError, Result};
use crate::io::{parse_model_file, ModelFile};
use crate::simulation::{default_portal_profile, Attenuation, GeometryProfile};
use crate::spectra::{solve_quantity, MaterialClass, MixtureSpec};

use super::confusion::{run_confusion_multi, Evaluator, ExperimentConfig, Truth};
use super::presets::{catalog_from_truths, model_for};
use super::report::{config_hash, ClassInfo, Report};
use super::studies::dataset_fingerprints;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSetting {
    Preset(String),
    Table(BTreeMap<String, f64>),
}

/// Which classes the screening model is built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScreeningMode {
    /// `"off"` or `"auto"`.
    Keyword(String),
    /// Explicit benchmark labels.
    Fixed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub material: String,
    #[serde(default)]
    pub quantity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub label: String,
    #[serde(default)]
    pub description: Option<String>,
    /// Defaults to true when any component is a dangerous material.
    #[serde(default)]
    pub dangerous: Option<bool>,
    pub components: Vec<ComponentSpec>,
    /// Mean first-window count at distance zero; fixes the one component
    /// whose quantity is left out.
    #[serde(default)]
    pub first_window_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub name: String,
    pub seed: u64,
    pub replicates: usize,
    #[serde(default = "default_priors")]
    pub priors: PriorSetting,
    #[serde(default = "default_materials")]
    pub materials: String,
    #[serde(default)]
    pub attenuation: Option<String>,
    #[serde(default)]
    pub distances: Option<Vec<f64>>,
    #[serde(default)]
    pub gain: Option<f64>,
    #[serde(default)]
    pub screening: Option<ScreeningMode>,
    #[serde(default)]
    pub background: Option<Vec<ComponentSpec>>,
    #[serde(default)]
    pub loss: Option<Vec<Vec<f64>>>,
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
}

fn default_priors() -> PriorSetting {
    PriorSetting::Preset("uniform".into())
}

fn default_materials() -> String {
    "builtin".into()
}

pub fn parse_custom_config(text: &str) -> Result<CustomConfig> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
                (line, column)
            })
            .unwrap_or((1, 1));
        ParseError::new(line, column, e.message().to_string()).into()
    })
}

impl CustomConfig {
    fn materials(&self, base: &Path) -> Result<ModelFile> {
        match self.materials.as_str() {
            "builtin" => Ok(builtin()),
            "printed" => Ok(builtin_printed()),
            path => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", full.display())))
                })?;
                parse_model_file(&text)
            }
        }
    }

    fn profile(&self) -> Result<GeometryProfile> {
        let attenuation = match &self.attenuation {
            Some(a) => a.parse()?,
            None => Attenuation::Linear,
        };
        let distances = match &self.distances {
            Some(d) => d.clone(),
            None => default_portal_profile().distances().to_vec(),
        };
        let profile = GeometryProfile::new(distances, attenuation)?;
        match self.gain {
            Some(g) => profile.with_gain(g),
            None => Ok(profile),
        }
    }

    fn priors(&self) -> Result<Priors> {
        match &self.priors {
            PriorSetting::Preset(name) => name.parse(),
            PriorSetting::Table(table) => {
                for label in table.keys() {
                    if !self.classes.iter().any(|c| &c.label == label) {
                        return Err(Error::domain(format!("prior for unknown class '{label}'")));
                    }
                }
                self.classes
                    .iter()
                    .map(|c| {
                        table.get(&c.label).copied().ok_or_else(|| {
                            Error::domain(format!("no prior for class '{}'", c.label))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Priors::Explicit)
            }
        }
    }

    fn mixture(
        &self,
        file: &ModelFile,
        owner: &str,
        components: &[ComponentSpec],
        first_window_rate: Option<f64>,
    ) -> Result<MixtureSpec> {
        let lookup = |name: &str| -> Result<MaterialClass> {
            file.material(name).cloned().ok_or_else(|| {
                Error::domain(format!("class '{owner}' references unknown material '{name}'"))
            })
        };
        let mut fixed = Vec::new();
        let mut open = Vec::new();
        for c in components {
            let m = lookup(&c.material)?;
            match c.quantity {
                Some(q) => fixed.push((m, q)),
                None => open.push(m),
            }
        }
        match (open.len(), first_window_rate) {
            (0, None) => MixtureSpec::new(fixed),
            (1, Some(target)) => {
                let used: f64 = fixed.iter().map(|(m, q)| q * m.rates()[0]).sum();
                let m = open.remove(0);
                let q = solve_quantity(&m, target - used)?;
                fixed.push((m, q));
                MixtureSpec::new(fixed)
            }
            (0, Some(_)) => Err(Error::domain(format!(
                "class '{owner}' sets first_window_rate but every quantity is fixed"
            ))),
            (n, _) => Err(Error::domain(format!(
                "class '{owner}' leaves {n} quantities unset; give first_window_rate and leave exactly one out"
            ))),
        }
    }

    /// Resolves material references into an [`ExperimentConfig`].
    pub fn resolve(&self, base: &Path) -> Result<ExperimentConfig> {
        let file = self.materials(base)?;
        let mut truths = Vec::with_capacity(self.classes.len());
        for c in &self.classes {
            if c.components.is_empty() {
                return Err(Error::domain(format!("class '{}' has no components", c.label)));
            }
            let source = self.mixture(&file, &c.label, &c.components, c.first_window_rate)?;
            let dangerous = c
                .dangerous
                .unwrap_or_else(|| source.components().iter().any(|(m, _)| m.dangerous()));
            let mut truth = Truth::new(c.label.clone(), dangerous, source);
            if let Some(d) = &c.description {
                truth = truth.with_description(d.clone());
            }
            truths.push(truth);
        }
        let background = match &self.background {
            Some(parts) => Some(self.mixture(&file, "background", parts, None)?),
            None => None,
        };
        let model = model_for(&truths, &self.priors()?)?;
        let loss = self.loss.clone().map(LossMatrix::new).transpose()?;
        let config = ExperimentConfig {
            name: self.name.clone(),
            truths,
            model,
            replicates: self.replicates,
            profile: self.profile()?,
            seed: self.seed,
            loss,
            background,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Runs a custom experiment. `base` resolves relative material paths.
pub fn run_custom(config: &CustomConfig, base: &Path) -> Result<Report> {
    let resolved = config.resolve(base)?;
    let priors = config.priors()?;

    let (benchmarks, screening_model) = match &config.screening {
        None => (None, None),
        Some(ScreeningMode::Keyword(k)) if k == "off" => (None, None),
        Some(ScreeningMode::Keyword(k)) if k == "auto" => {
            let catalog = catalog_from_truths(&resolved.truths)?;
            let selection = select_benchmarks(&catalog)?;
            let model = selection.build_model(&catalog, &priors_for_subset(&priors)?)?;
            (Some(selection), Some(model))
        }
        Some(ScreeningMode::Keyword(other)) => {
            return Err(Error::domain(format!(
                "screening '{other}' must be 'off', 'auto', or a list of labels"
            )))
        }
        Some(ScreeningMode::Fixed(labels)) => {
            let chosen = labels
                .iter()
                .map(|l| {
                    resolved
                        .truths
                        .iter()
                        .find(|t| &t.label == l)
                        .cloned()
                        .ok_or_else(|| Error::domain(format!("unknown benchmark class '{l}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            (None, Some(model_for(&chosen, &priors_for_subset(&priors)?)?))
        }
    };

    let mut evaluators =
        vec![Evaluator::new(&resolved.name, &resolved.model).with_loss(resolved.loss.as_ref())];
    if let Some(m) = &screening_model {
        evaluators.push(Evaluator::new("benchmarks", m));
    }
    let matrices = run_confusion_multi(
        &resolved.truths,
        &resolved.profile,
        resolved.background.as_ref(),
        resolved.seed,
        resolved.replicates,
        &evaluators,
    )?;

    Ok(Report {
        experiment: format!("custom:{}", config.name),
        seed: resolved.seed,
        replicates: resolved.replicates,
        profile: resolved.profile.name(),
        priors: priors.name().into(),
        config_hash: config_hash(&json!({
            "experiment": "custom",
            "config": config,
            "truths": resolved.truths,
            "profile": resolved.profile,
        })),
        datasets: dataset_fingerprints(),
        classes: resolved.truths.iter().map(ClassInfo::from).collect(),
        matrices,
        benchmarks,
        screening: None,
        checks: Vec::new(),
    })
}

/// Explicit priors are tied to the full class list, so benchmark models
/// fall back to uniform priors in that case.
fn priors_for_subset(priors: &Priors) -> Result<Priors> {
    Ok(match priors {
        Priors::Explicit(_) => Priors::Uniform,
        other => other.clone(),
    })
}
