//! Experiment configuration: INI-style text (`[section]` headers,
//! `key = value` lines, `#` comments), parsed fail-closed — unknown keys and
//! unknown sections are errors, with line numbers.

use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Psi,
    Vpr,
    BuildPrior,
    SimulateData,
    Diagnose,
    Oracle,
}

impl Mode {
    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "psi" => Ok(Mode::Psi),
            "vpr" => Ok(Mode::Vpr),
            "build-prior" => Ok(Mode::BuildPrior),
            "simulate-data" => Ok(Mode::SimulateData),
            "diagnose" => Ok(Mode::Diagnose),
            "oracle" => Ok(Mode::Oracle),
            other => Err(Error::Config {
                line,
                message: format!(
                    "unknown mode '{other}' (expected psi|vpr|build-prior|simulate-data|diagnose|oracle)"
                ),
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Psi => "psi",
            Mode::Vpr => "vpr",
            Mode::BuildPrior => "build-prior",
            Mode::SimulateData => "simulate-data",
            Mode::Diagnose => "diagnose",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    consumed: Cell<bool>,
}

#[derive(Debug)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl RawSection {
    fn lookup(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key).inspect(|e| e.consumed.set(true))
    }

    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.lookup(key).map(|e| (e.value.as_str(), e.line))
    }

    fn require(&self, key: &str) -> Result<(&str, usize)> {
        self.get(key).ok_or_else(|| Error::Config {
            line: self.line,
            message: format!("section [{}] is missing required key '{key}'", self.name),
        })
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| Error::Config {
                line,
                message: format!("bad value for '{key}': {e}"),
            }),
        }
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn unknown_keys(&self) -> Option<&Entry> {
        self.entries.iter().find(|e| !e.consumed.get())
    }
}

fn parse_raw(text: &str) -> Result<Vec<RawSection>> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(Error::Config {
                line,
                message: "unterminated section header".into(),
            })?;
            if sections.iter().any(|s| s.name == name) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate section [{name}]"),
                });
            }
            sections.push(RawSection { name: name.to_string(), line, entries: Vec::new() });
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or(Error::Config {
            line,
            message: "expected 'key = value'".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section = sections.last_mut().ok_or(Error::Config {
            line,
            message: "key outside of any [section]".into(),
        })?;
        if section.entries.iter().any(|e| e.key == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key '{key}' in section [{}]", section.name),
            });
        }
        section.entries.push(Entry { key, value, line, consumed: Cell::new(false) });
    }
    Ok(sections)
}

/// A scalar value or a reference to a grid file supplying one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarOrFile {
    Scalar(f64),
    File(PathBuf),
}

/// How one side of the bounds is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundsSource {
    Constant(f64),
    File(PathBuf),
    /// One value per depth row, broadcast across columns.
    Profile(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsConfig {
    pub lower: BoundsSource,
    pub upper: BoundsSource,
    /// Number of top rows fixed at known values (e.g. a water layer).
    pub fix_top_rows: usize,
    /// Grid supplying the values of fixed cells.
    pub fixed_values_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorFamily {
    Uniform,
    Smoothed,
    Gaussian,
    Windowed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub family: PriorFamily,
    /// Base of a smoothed prior: uniform (default) or gaussian.
    pub base: PriorFamily,
    /// Optional truncation-box override (constants); defaults to [bounds].
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sigma2_sm: f64,
    pub mu: Option<ScalarOrFile>,
    pub std: Option<ScalarOrFile>,
    pub window: usize,
    pub n_subimages: usize,
    pub r_local_file: Option<PathBuf>,
    pub training_images: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodKind {
    Linear,
    Fwi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodConfig {
    pub kind: LikelihoodKind,
    pub sigma_d: f64,
    pub data_file: Option<PathBuf>,
    pub operator: OperatorKind,
    pub operator_rows: Option<usize>,
    pub operator_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiverSpec {
    List(Vec<(usize, usize)>),
    /// All columns of one depth row, every `step`-th cell.
    Row { iz: usize, step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyConfig {
    pub f0: f64,
    pub dt: f64,
    pub nt: usize,
    pub t0: f64,
    pub boundary_width: usize,
    pub sources: Vec<(usize, usize)>,
    pub receivers: ReceiverSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: Option<u64>,
    pub samples: Option<usize>,
    pub learning_rate: f64,
    pub entropy_analytic: bool,
    pub offsets: Option<Vec<usize>>,
    pub pattern_width: usize,
    pub clamp: f64,
    pub warm_start: bool,
    pub average_tail: f64,
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            samples: None,
            learning_rate: 1e-2,
            entropy_analytic: false,
            offsets: None,
            pattern_width: 3,
            clamp: 50.0,
            warm_start: true,
            average_tail: 0.25,
            early_stop_window: 0,
            early_stop_tol: 1e-3,
        }
    }
}

impl OptimizerConfig {
    /// Iteration count with the mode default (5000 for both stages).
    pub fn iterations_for(&self, _mode: Mode) -> u64 {
        self.iterations.unwrap_or(5000)
    }

    /// Samples per iteration: 2 for prior-specific inversion, 10 for prior
    /// replacement.
    pub fn samples_for(&self, mode: Mode) -> usize {
        self.samples.unwrap_or(match mode {
            Mode::Vpr => 10,
            _ => 2,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VprSection {
    pub q_old: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub true_model_file: PathBuf,
    pub noise_std: Option<f64>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseConfig {
    pub q_file: PathBuf,
    pub n_samples: usize,
    pub truth_file: Option<PathBuf>,
    pub cells: Vec<usize>,
    pub bins: usize,
    pub window: Option<(usize, usize, usize)>,
    pub butterfly: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub dimension: usize,
    pub operator: OperatorKind,
    pub operator_rows: Option<usize>,
    pub operator_seed: u64,
    pub sigma_d: f64,
    pub prior_mu: f64,
    pub prior_std: f64,
    pub truth_seed: u64,
}

/// Fully parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub grid: Option<GridConfig>,
    pub bounds: Option<BoundsConfig>,
    pub prior: Option<PriorConfig>,
    pub old_prior: Option<PriorConfig>,
    pub likelihood: Option<LikelihoodConfig>,
    pub survey: Option<SurveyConfig>,
    pub optimizer: OptimizerConfig,
    pub vpr: Option<VprSection>,
    pub simulate: Option<SimulateConfig>,
    pub diagnose: Option<DiagnoseConfig>,
    pub oracle: Option<OracleConfig>,
    /// Directory that relative paths in the config resolve against.
    pub base_dir: PathBuf,
    /// Raw text, hashed into the manifest.
    pub text: String,
}

impl RunConfig {
    /// Resolves a path from the config against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn parse_positions(s: &str, line: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for pair in s.split(';') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (a, b) = pair.split_once(',').ok_or(Error::Config {
            line,
            message: format!("expected 'ix,iz' pairs separated by ';', got '{pair}'"),
        })?;
        let ix = a.trim().parse::<usize>().map_err(|e| Error::Config {
            line,
            message: format!("bad position '{pair}': {e}"),
        })?;
        let iz = b.trim().parse::<usize>().map_err(|e| Error::Config {
            line,
            message: format!("bad position '{pair}': {e}"),
        })?;
        out.push((ix, iz));
    }
    if out.is_empty() {
        return Err(Error::Config { line, message: "empty position list".into() });
    }
    Ok(out)
}

fn parse_float_list(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            c.trim().parse::<f64>().map_err(|e| Error::Config {
                line,
                message: format!("bad float list entry '{}': {e}", c.trim()),
            })
        })
        .collect()
}

fn parse_usize_list(s: &str, line: usize) -> Result<Vec<usize>> {
    s.split(',')
        .map(|c| {
            c.trim().parse::<usize>().map_err(|e| Error::Config {
                line,
                message: format!("bad integer list entry '{}': {e}", c.trim()),
            })
        })
        .collect()
}

fn scalar_or_file(sec: &RawSection, scalar_key: &str, file_key: &str) -> Result<Option<ScalarOrFile>> {
    match (sec.get(scalar_key), sec.get(file_key)) {
        (Some((v, line)), None) => {
            let x = v.parse::<f64>().map_err(|e| Error::Config {
                line,
                message: format!("bad value for '{scalar_key}': {e}"),
            })?;
            Ok(Some(ScalarOrFile::Scalar(x)))
        }
        (None, Some((v, _))) => Ok(Some(ScalarOrFile::File(PathBuf::from(v)))),
        (None, None) => Ok(None),
        (Some((_, line)), Some(_)) => Err(Error::Config {
            line,
            message: format!("'{scalar_key}' and '{file_key}' are mutually exclusive"),
        }),
    }
}

fn bounds_source(sec: &RawSection, stem: &str) -> Result<Option<BoundsSource>> {
    let constant = sec.get(stem).map(|(v, l)| (v.to_string(), l));
    let file = sec.get(&format!("{stem}_file")).map(|(v, l)| (v.to_string(), l));
    let profile = sec.get(&format!("{stem}_profile")).map(|(v, l)| (v.to_string(), l));
    let given = [constant.is_some(), file.is_some(), profile.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given > 1 {
        let line = constant
            .as_ref()
            .map(|(_, l)| *l)
            .or(file.as_ref().map(|(_, l)| *l))
            .unwrap_or(sec.line);
        return Err(Error::Config {
            line,
            message: format!("give exactly one of '{stem}', '{stem}_file', '{stem}_profile'"),
        });
    }
    if let Some((v, line)) = constant {
        let x = v.parse::<f64>().map_err(|e| Error::Config {
            line,
            message: format!("bad value for '{stem}': {e}"),
        })?;
        return Ok(Some(BoundsSource::Constant(x)));
    }
    if let Some((v, _)) = file {
        return Ok(Some(BoundsSource::File(PathBuf::from(v))));
    }
    if let Some((v, line)) = profile {
        return Ok(Some(BoundsSource::Profile(parse_float_list(&v, line)?)));
    }
    Ok(None)
}

fn parse_prior_section(sec: &RawSection) -> Result<PriorConfig> {
    let (fam, fam_line) = sec.require("family")?;
    let family = match fam {
        "uniform" => PriorFamily::Uniform,
        "smoothed" => PriorFamily::Smoothed,
        "gaussian" => PriorFamily::Gaussian,
        "windowed" => PriorFamily::Windowed,
        other => {
            return Err(Error::Config {
                line: fam_line,
                message: format!(
                    "unknown prior family '{other}' (expected uniform|smoothed|gaussian|windowed)"
                ),
            })
        }
    };
    let base = match sec.get("base") {
        None => PriorFamily::Uniform,
        Some(("uniform", _)) => PriorFamily::Uniform,
        Some(("gaussian", _)) => PriorFamily::Gaussian,
        Some((other, line)) => {
            return Err(Error::Config {
                line,
                message: format!("unknown smoothed base '{other}' (expected uniform|gaussian)"),
            })
        }
    };
    let training_images = match sec.get("training_images") {
        None => Vec::new(),
        Some((v, _)) => v.split(',').map(|p| PathBuf::from(p.trim())).collect(),
    };
    Ok(PriorConfig {
        family,
        base,
        lower: sec.parse("lower")?,
        upper: sec.parse("upper")?,
        sigma2_sm: sec.parse_or("sigma2_sm", 500.0)?,
        mu: scalar_or_file(sec, "mu", "mu_file")?,
        std: scalar_or_file(sec, "std", "std_file")?,
        window: sec.parse_or("window", 20)?,
        n_subimages: sec.parse_or("n_subimages", 1000)?,
        r_local_file: sec.get("r_local_file").map(|(v, _)| PathBuf::from(v)),
        training_images,
    })
}

/// Parses and validates a configuration. `base_dir` anchors relative paths
/// (normally the config file's directory).
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let sections = parse_raw(text)?;
    let known = [
        "run", "grid", "bounds", "prior", "old_prior", "likelihood", "survey", "optimizer",
        "vpr", "simulate", "diagnose", "oracle",
    ];
    for s in &sections {
        if !known.contains(&s.name.as_str()) {
            return Err(Error::Config {
                line: s.line,
                message: format!("unknown section [{}]", s.name),
            });
        }
    }
    let find = |name: &str| sections.iter().find(|s| s.name == name);

    let run = find("run").ok_or(Error::Config {
        line: 1,
        message: "missing required section [run]".into(),
    })?;
    let (mode_str, mode_line) = run.require("mode")?;
    let mode = Mode::parse(mode_str, mode_line)?;
    let (out_dir, _) = run.require("out_dir")?;
    let config = RunConfig {
        mode,
        out_dir: PathBuf::from(out_dir),
        seed: run.parse_or("seed", 0u64)?,
        threads: run.parse_or("threads", 1usize)?,
        grid: match find("grid") {
            None => None,
            Some(sec) => Some(GridConfig {
                nx: sec.require("nx")?.0.parse().map_err(|e| Error::Config {
                    line: sec.lookup("nx").map(|e| e.line).unwrap_or(sec.line),
                    message: format!("bad nx: {e}"),
                })?,
                nz: sec.require("nz")?.0.parse().map_err(|e| Error::Config {
                    line: sec.lookup("nz").map(|e| e.line).unwrap_or(sec.line),
                    message: format!("bad nz: {e}"),
                })?,
                dx: sec.parse_or("dx", 20.0)?,
            }),
        },
        bounds: match find("bounds") {
            None => None,
            Some(sec) => {
                let lower = bounds_source(sec, "lower")?.ok_or(Error::Config {
                    line: sec.line,
                    message: "section [bounds] needs a lower bound".into(),
                })?;
                let upper = bounds_source(sec, "upper")?.ok_or(Error::Config {
                    line: sec.line,
                    message: "section [bounds] needs an upper bound".into(),
                })?;
                Some(BoundsConfig {
                    lower,
                    upper,
                    fix_top_rows: sec.parse_or("fix_top_rows", 0usize)?,
                    fixed_values_file: sec.get("fixed_values_file").map(|(v, _)| PathBuf::from(v)),
                })
            }
        },
        prior: find("prior").map(parse_prior_section).transpose()?,
        old_prior: find("old_prior").map(parse_prior_section).transpose()?,
        likelihood: match find("likelihood") {
            None => None,
            Some(sec) => {
                let (kind_str, kind_line) = sec.require("kind")?;
                let kind = match kind_str {
                    "linear" => LikelihoodKind::Linear,
                    "fwi" => LikelihoodKind::Fwi,
                    other => {
                        return Err(Error::Config {
                            line: kind_line,
                            message: format!("unknown likelihood kind '{other}'"),
                        })
                    }
                };
                let operator = match sec.get("operator") {
                    None | Some(("identity", _)) => OperatorKind::Identity,
                    Some(("random", _)) => OperatorKind::Random,
                    Some((other, line)) => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown operator '{other}'"),
                        })
                    }
                };
                Some(LikelihoodConfig {
                    kind,
                    sigma_d: sec.parse_or("sigma_d", 0.1)?,
                    data_file: sec.get("data_file").map(|(v, _)| PathBuf::from(v)),
                    operator,
                    operator_rows: sec.parse("operator_rows")?,
                    operator_seed: sec.parse_or("operator_seed", 0u64)?,
                })
            }
        },
        survey: match find("survey") {
            None => None,
            Some(sec) => {
                let (src, src_line) = sec.require("sources")?;
                let sources = parse_positions(src, src_line)?;
                let receivers = match (sec.get("receivers"), sec.get("receiver_row")) {
                    (Some((v, line)), None) => ReceiverSpec::List(parse_positions(v, line)?),
                    (None, Some((v, line))) => {
                        let iz = v.parse::<usize>().map_err(|e| Error::Config {
                            line,
                            message: format!("bad receiver_row: {e}"),
                        })?;
                        ReceiverSpec::Row { iz, step: sec.parse_or("receiver_step", 1usize)? }
                    }
                    (None, None) => {
                        return Err(Error::Config {
                            line: sec.line,
                            message: "section [survey] needs 'receivers' or 'receiver_row'".into(),
                        })
                    }
                    (Some((_, line)), Some(_)) => {
                        return Err(Error::Config {
                            line,
                            message: "'receivers' and 'receiver_row' are mutually exclusive".into(),
                        })
                    }
                };
                Some(SurveyConfig {
                    f0: sec.parse_or("f0", 10.0)?,
                    dt: sec.parse_or("dt", 0.002)?,
                    nt: sec.require("nt")?.0.parse().map_err(|e| Error::Config {
                        line: sec.lookup("nt").map(|e| e.line).unwrap_or(sec.line),
                        message: format!("bad nt: {e}"),
                    })?,
                    t0: sec.parse_or("t0", 0.15)?,
                    boundary_width: sec.parse_or("boundary_width", 20usize)?,
                    sources,
                    receivers,
                })
            }
        },
        optimizer: match find("optimizer") {
            None => OptimizerConfig::default(),
            Some(sec) => {
                let entropy_analytic = match sec.get("entropy") {
                    None | Some(("mc", _)) => false,
                    Some(("analytic", _)) => true,
                    Some((other, line)) => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown entropy mode '{other}' (expected mc|analytic)"),
                        })
                    }
                };
                let offsets = match sec.get("offsets") {
                    None => None,
                    Some((v, line)) => Some(parse_usize_list(v, line)?),
                };
                OptimizerConfig {
                    iterations: sec.parse("iterations")?,
                    samples: sec.parse("samples")?,
                    learning_rate: sec.parse_or("learning_rate", 1e-2)?,
                    entropy_analytic,
                    offsets,
                    pattern_width: sec.parse_or("pattern_width", 3usize)?,
                    clamp: sec.parse_or("clamp", 50.0)?,
                    warm_start: sec.parse_or("warm_start", true)?,
                    average_tail: sec.parse_or("average_tail", 0.25)?,
                    early_stop_window: sec.parse_or("early_stop_window", 0usize)?,
                    early_stop_tol: sec.parse_or("early_stop_tol", 1e-3)?,
                }
            }
        },
        vpr: match find("vpr") {
            None => None,
            Some(sec) => Some(VprSection { q_old: PathBuf::from(sec.require("q_old")?.0) }),
        },
        simulate: match find("simulate") {
            None => None,
            Some(sec) => Some(SimulateConfig {
                true_model_file: PathBuf::from(sec.require("true_model_file")?.0),
                noise_std: sec.parse("noise_std")?,
                output: sec.get("output").map(|(v, _)| v.to_string()).unwrap_or_else(|| {
                    "d_obs.vprd".to_string()
                }),
            }),
        },
        diagnose: match find("diagnose") {
            None => None,
            Some(sec) => {
                let cells = match sec.get("cells") {
                    None => Vec::new(),
                    Some((v, line)) => parse_usize_list(v, line)?,
                };
                let window = match (sec.parse::<usize>("window_x0")?, sec.parse::<usize>("window_z0")?, sec.parse::<usize>("window_w")?) {
                    (Some(x0), Some(z0), Some(w)) => Some((x0, z0, w)),
                    (None, None, None) => None,
                    _ => {
                        return Err(Error::Config {
                            line: sec.line,
                            message: "give all of window_x0, window_z0, window_w or none".into(),
                        })
                    }
                };
                Some(DiagnoseConfig {
                    q_file: PathBuf::from(sec.require("q_file")?.0),
                    n_samples: sec.parse_or("n_samples", 2000usize)?,
                    truth_file: sec.get("truth_file").map(|(v, _)| PathBuf::from(v)),
                    cells,
                    bins: sec.parse_or("bins", 50usize)?,
                    window,
                    butterfly: sec.parse_or("butterfly", false)?,
                })
            }
        },
        oracle: match find("oracle") {
            None => None,
            Some(sec) => {
                let operator = match sec.get("operator") {
                    None | Some(("identity", _)) => OperatorKind::Identity,
                    Some(("random", _)) => OperatorKind::Random,
                    Some((other, line)) => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown operator '{other}'"),
                        })
                    }
                };
                Some(OracleConfig {
                    dimension: sec.require("dimension")?.0.parse().map_err(|e| {
                        Error::Config {
                            line: sec.lookup("dimension").map(|e| e.line).unwrap_or(sec.line),
                            message: format!("bad dimension: {e}"),
                        }
                    })?,
                    operator,
                    operator_rows: sec.parse("operator_rows")?,
                    operator_seed: sec.parse_or("operator_seed", 0u64)?,
                    sigma_d: sec.parse_or("sigma_d", 0.1)?,
                    prior_mu: sec.parse_or("prior_mu", 0.0)?,
                    prior_std: sec.parse_or("prior_std", 1.0)?,
                    truth_seed: sec.parse_or("truth_seed", 1u64)?,
                })
            }
        },
        base_dir: base_dir.to_path_buf(),
        text: text.to_string(),
    };

    // fail closed: anything not consumed is unknown
    for s in &sections {
        if let Some(entry) = s.unknown_keys() {
            return Err(Error::Config {
                line: entry.line,
                message: format!("unknown key '{}' in section [{}]", entry.key, s.name),
            });
        }
    }

    // basic invariants
    if let Some(opt) = config.optimizer.iterations {
        if opt == 0 {
            return Err(Error::Config {
                line: 1,
                message: "iterations must be at least 1".into(),
            });
        }
    }
    if let Some(s) = config.optimizer.samples {
        if s == 0 {
            return Err(Error::Config { line: 1, message: "samples must be at least 1".into() });
        }
    }
    Ok(config)
}

/// Reads and parses a config file; relative paths resolve against its parent
/// directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    parse_config(&text, &base)
}
