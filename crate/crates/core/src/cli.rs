//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 parse error,
//! 4 domain error, 5 a `--check` threshold failed. Errors are reported on
//! stderr as one JSON object per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::benchmark::select_benchmarks;
use crate::classifier::{classify, classify_with_loss, goodness_of_fit, Priors};
use crate::data::{fingerprints, builtin};
use crate::error::{Error, Result};
use crate::harness::{
    build_mixture_catalog_29, emit_report, parse_custom_config, run_custom, screening100, table3,
    table4, with_threads, Report, ReportFormat, DEFAULT_REPLICATES, DEFAULT_SCREENING_REPLICATES,
    DEFAULT_SEED, DEFAULT_SETS,
};
use crate::io::{parse_model_file, parse_scan_file, write_atomic, write_model_file, write_scan_file, ModelFile};
use crate::simulation::{default_portal_profile, Attenuation, GeometryProfile, RngStream, ScanSampler};
use crate::spectra::{MaterialClass, MixtureSpec};
use crate::training::{posterior_parameters, DirichletPrior, TrainingSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_DOMAIN: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "rpm-bayes",
    about = "Classify radiation portal monitor scans and run Monte Carlo studies",
    disable_version_flag = true
)]
pub struct Cli {
    /// Print version and shipped dataset fingerprints.
    #[arg(long)]
    pub version: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scans of a source mixture.
    Simulate(SimulateArgs),
    /// Classify scan files; prints one JSON line per scan.
    Classify(ClassifyArgs),
    /// Estimate class spectra from a directory of labeled scans.
    Train(TrainArgs),
    /// Choose benchmark classes for dangerous/nondangerous screening.
    SelectBenchmarks(SelectArgs),
    /// Run a Monte Carlo study.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Source component as MATERIAL=QUANTITY; repeat for mixtures.
    #[arg(long = "component", short = 'c', required = true, value_name = "MATERIAL=QUANTITY")]
    pub components: Vec<String>,
    /// Model file supplying material rates (default: shipped table).
    #[arg(long)]
    pub materials: Option<PathBuf>,
    #[arg(long, default_value = "linear")]
    pub attenuation: String,
    /// Comma-separated distances (default: the 20-step portal schedule).
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Stream of the first scan; scan i uses stream + i.
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Output file (single scan) or directory (with --count > 1).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Model file (default: shipped table with its priors).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ignore the model file's loss block.
    #[arg(long)]
    pub no_loss: bool,
    /// Flag scans whose best class fits worse than this chi-squared p-value.
    #[arg(long, value_name = "P")]
    pub gof_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub scans: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with one subdirectory of scan files per class label.
    #[arg(long)]
    pub scans: PathBuf,
    /// Existing model whose other classes are kept.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Dirichlet parameter for every window.
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Use the base model's rates as the Dirichlet prior (sequential update).
    #[arg(long, requires = "base")]
    pub sequential: bool,
    /// Labels of new classes that are dangerous.
    #[arg(long = "dangerous", value_name = "LABEL")]
    pub dangerous: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct CatalogSource {
    /// Model file whose materials form the catalog.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Built-in catalog: mixtures-29.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub source: CatalogSource,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Exit with code 5 if any acceptance check fails.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Eight single-material classes.
    Table3(RunArgs),
    /// 29 mixture classes with benchmark screening.
    Table4(RunArgs),
    /// Randomized 100-class screening study.
    Screening100 {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_SETS)]
        sets: usize,
    },
    /// Study described by a TOML file.
    Custom {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Maps an error to its exit code and a JSON diagnostic.
pub fn diagnose(err: &Error) -> (i32, serde_json::Value) {
    let (code, kind) = match err {
        Error::Io(_) => (EXIT_IO, "io"),
        Error::Parse(_) => (EXIT_PARSE, "parse"),
        Error::Domain(_) | Error::DimensionMismatch { .. } | Error::UndefinedTest(_) => {
            (EXIT_DOMAIN, "domain")
        }
    };
    let mut body = json!({ "error": kind, "exit_code": code, "message": err.to_string() });
    if let Error::Parse(p) = err {
        body["line"] = json!(p.line);
        body["column"] = json!(p.column);
    }
    if let Error::DimensionMismatch { left, right, .. } = err {
        body["expected_windows"] = json!(left);
        body["found_windows"] = json!(right);
    }
    (code, body)
}

/// Parses `args` and runs the command, writing results to `stdout` and
/// diagnostics to `stderr`. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    if cli.version {
        let _ = stdout.write_all(version_text().as_bytes());
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        let _ = writeln!(stderr, "{}", json!({"error": "usage", "exit_code": EXIT_USAGE, "message": "no subcommand given; see --help"}));
        return EXIT_USAGE;
    };
    match dispatch(command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let (code, body) = diagnose(&e);
            let _ = writeln!(stderr, "{body}");
            code
        }
    }
}

pub fn version_text() -> String {
    let mut s = format!(
        "rpm-bayes {} ({} build)\n",
        env!("CARGO_PKG_VERSION"),
        if cfg!(debug_assertions) { "debug" } else { "release" }
    );
    for (name, hash) in fingerprints() {
        s.push_str(&format!("dataset {name} sha256:{hash}\n"));
    }
    s
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, bytes),
        None => Ok(stdout.write_all(bytes)?),
    }
}

fn load_model_file(path: Option<&Path>) -> Result<ModelFile> {
    match path {
        Some(p) => parse_model_file(&read_text(p)?),
        None => Ok(builtin()),
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(a, stdout),
        Command::Classify(a) => classify_cmd(a, stdout),
        Command::Train(a) => train(a, stdout),
        Command::SelectBenchmarks(a) => select(a, stdout),
        Command::Experiment(e) => experiment(e, stdout),
    }
}

fn parse_component(text: &str, file: &ModelFile) -> Result<(MaterialClass, f64)> {
    let (name, qty) = text
        .rsplit_once('=')
        .ok_or_else(|| Error::domain(format!("component '{text}' must look like MATERIAL=QUANTITY")))?;
    let material = file
        .material(name.trim())
        .cloned()
        .ok_or_else(|| Error::domain(format!("unknown material '{}'", name.trim())))?;
    let quantity: f64 = qty
        .trim()
        .parse()
        .map_err(|_| Error::domain(format!("quantity '{qty}' is not a number")))?;
    Ok((material, quantity))
}

fn simulate(a: SimulateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let file = load_model_file(a.materials.as_deref())?;
    let components = a
        .components
        .iter()
        .map(|c| parse_component(c, &file))
        .collect::<Result<Vec<_>>>()?;
    let source = MixtureSpec::new(components)?;
    let attenuation: Attenuation = a.attenuation.parse()?;
    let profile = match a.distances {
        Some(d) => GeometryProfile::new(d, attenuation)?,
        None => GeometryProfile::new(default_portal_profile().distances().to_vec(), attenuation)?,
    };
    if a.count == 0 {
        return Err(Error::domain("--count must be at least 1"));
    }
    let sampler = ScanSampler::new(&source, &profile)?;
    let render = |i: u64| {
        let scan = sampler
            .sample_stream(RngStream::new(a.seed, a.stream + i))
            .with_window_labels(file.window_labels.clone())
            .expect("materials share the model's window count");
        write_scan_file(&scan)
    };
    if a.count == 1 {
        emit(a.out.as_deref(), render(0).as_bytes(), stdout)?;
        return Ok(EXIT_OK);
    }
    let dir = a
        .out
        .ok_or_else(|| Error::domain("--count above 1 needs --out DIRECTORY"))?;
    fs::create_dir_all(&dir)?;
    let width = (a.count - 1).to_string().len();
    for i in 0..a.count {
        write_atomic(&dir.join(format!("scan-{i:0width$}.csv")), render(i).as_bytes())?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ClassifyLine<'a> {
    scan: String,
    #[serde(flatten)]
    decision: &'a crate::classifier::Decision,
    dangerous: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    poor_fit: Option<bool>,
}

fn classify_cmd(a: ClassifyArgs, stdout: &mut dyn Write) -> Result<i32> {
    let file = load_model_file(a.model.as_deref())?;
    let model = file.model()?;
    if let Some(t) = a.gof_threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!("--gof-threshold {t} is not a probability")));
        }
    }
    let loss = if a.no_loss { None } else { file.loss.as_ref() };
    let mut out = String::new();
    for path in &a.scans {
        let scan = parse_scan_file(&read_text(path)?)?;
        let mut decision = match loss {
            Some(w) => classify_with_loss(&model, &scan, w)?,
            None => classify(&model, &scan)?,
        };
        let mut poor_fit = None;
        if let Some(threshold) = a.gof_threshold {
            let fit = goodness_of_fit(&scan, &model.classes()[decision.index].spectrum)?;
            poor_fit = Some(fit.p_value < threshold);
            decision.goodness_of_fit = Some(fit);
        }
        let line = ClassifyLine {
            scan: path.display().to_string(),
            dangerous: model.classes()[decision.index].dangerous,
            decision: &decision,
            poor_fit,
        };
        out.push_str(&serde_json::to_string(&line).expect("decisions serialize"));
        out.push('\n');
    }
    emit(a.out.as_deref(), out.as_bytes(), stdout)?;
    Ok(EXIT_OK)
}

fn train(a: TrainArgs, stdout: &mut dyn Write) -> Result<i32> {
    let base = match &a.base {
        Some(p) => Some(parse_model_file(&read_text(p)?)?),
        None => None,
    };
    let mut labels: Vec<(String, PathBuf)> = fs::read_dir(&a.scans)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    labels.sort();
    if labels.is_empty() {
        return Err(Error::domain(format!(
            "{} has no class subdirectories",
            a.scans.display()
        )));
    }
    let mut materials: Vec<MaterialClass> =
        base.as_ref().map(|b| b.materials.clone()).unwrap_or_default();
    let mut window_labels = base.as_ref().map(|b| b.window_labels.clone());
    for (label, dir) in labels {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let scans = files
            .iter()
            .map(|p| parse_scan_file(&read_text(p)?))
            .collect::<Result<Vec<_>>>()?;
        let set = TrainingSet::new(label.clone(), scans)?;
        let Some(windows) = set.windows().or(window_labels.as_ref().map(Vec::len)) else {
            return Err(Error::domain(format!("class '{label}' has no scans")));
        };
        if window_labels.is_none() {
            window_labels = Some(set.scans()[0].window_labels().to_vec());
        }
        let existing = materials.iter().position(|m| m.label() == label);
        let prior = match (a.sequential, existing) {
            (true, Some(i)) => DirichletPrior::new(materials[i].rates().to_vec())?,
            _ => DirichletPrior::new(vec![a.theta; windows])?,
        };
        let posterior = posterior_parameters(&prior, &set)?;
        let dangerous = existing
            .map(|i| materials[i].dangerous())
            .unwrap_or_else(|| a.dangerous.contains(&label));
        let trained = MaterialClass::new(label.clone(), posterior.theta().to_vec(), dangerous)?;
        match existing {
            Some(i) => materials[i] = trained,
            None => materials.push(trained),
        }
    }
    let file = ModelFile {
        window_labels: window_labels.expect("at least one class was trained"),
        priors: match &base {
            Some(b) if !matches!(b.priors, Priors::Explicit(_)) => b.priors.clone(),
            _ => Priors::Uniform,
        },
        loss: None,
        materials,
    };
    file.model()?;
    let text = format!(
        "# Dirichlet posterior parameters; each row normalizes to the estimated spectrum.\n{}",
        write_model_file(&file)
    );
    emit(a.out.as_deref(), text.as_bytes(), stdout)?;
    Ok(EXIT_OK)
}

fn select(a: SelectArgs, stdout: &mut dyn Write) -> Result<i32> {
    let catalog = match (&a.source.catalog, a.source.preset.as_deref()) {
        (Some(path), _) => parse_model_file(&read_text(path)?)?.catalog()?,
        (None, Some("mixtures-29")) => build_mixture_catalog_29()?.0,
        (None, Some(other)) => {
            return Err(Error::domain(format!("unknown preset '{other}' (expected 'mixtures-29')")))
        }
        (None, None) => unreachable!("clap requires one catalog source"),
    };
    let result = select_benchmarks(&catalog)?;
    let mut bytes = serde_json::to_vec_pretty(&result).expect("results serialize");
    bytes.push(b'\n');
    emit(a.out.as_deref(), &bytes, stdout)?;
    Ok(EXIT_OK)
}

fn experiment(e: Experiment, stdout: &mut dyn Write) -> Result<i32> {
    let (run, produce): (RunArgs, Box<dyn FnOnce(u64, Option<usize>) -> Result<Report> + Send>) =
        match e {
            Experiment::Table3(run) => (
                run,
                Box::new(|seed, reps| table3(seed, reps.unwrap_or(DEFAULT_REPLICATES))),
            ),
            Experiment::Table4(run) => (
                run,
                Box::new(|seed, reps| table4(seed, reps.unwrap_or(DEFAULT_REPLICATES))),
            ),
            Experiment::Screening100 { run, sets } => (
                run,
                Box::new(move |seed, reps| {
                    screening100(seed, sets, reps.unwrap_or(DEFAULT_SCREENING_REPLICATES))
                }),
            ),
            Experiment::Custom { config, run } => {
                let mut parsed = parse_custom_config(&read_text(&config)?)?;
                let base = config
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default();
                let seed_override = run.seed;
                (
                    run,
                    Box::new(move |_, reps| {
                        if let Some(s) = seed_override {
                            parsed.seed = s;
                        }
                        if let Some(r) = reps {
                            parsed.replicates = r;
                        }
                        run_custom(&parsed, &base)
                    }),
                )
            }
        };
    let format: ReportFormat = run.format.parse()?;
    let seed = run.seed.unwrap_or(DEFAULT_SEED);
    let replicates = run.replicates;
    let report = with_threads(run.threads, move || produce(seed, replicates))??;
    emit(run.out.as_deref(), &emit_report(&report, format), stdout)?;
    if run.check && !report.passed() {
        return Ok(EXIT_CHECK);
    }
    Ok(EXIT_OK)
}
