//! Run configuration: a TOML file, CLI flag overrides on top, and the
//! translation into engine types. The resolved configuration is echoed
//! verbatim into every result file.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use probhull::engine::{EngineConfig, Strategy, TerminationMode};
use probhull::gauss::{GaussianInput, SampleWeights};
use probhull::model::{parse_json_network, parse_nnet, whiten, FullGaussian, Network, SafetySpec};
use probhull::subdivide::TreeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NetworkFormat {
    /// Pick by file extension: `.nnet` or anything else (JSON).
    Auto,
    Nnet,
    Json,
}

/// Safety property source: inline matrix/threshold or a JSON file
/// `{"c": [[...]], "a": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecConfig {
    pub c: Option<Vec<Vec<f64>>>,
    pub a: Option<Vec<f64>>,
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Network file path.
    pub network: Option<String>,
    pub format: NetworkFormat,
    /// Fold the NNet normalization constants into the network so inputs are
    /// taken in physical units. Default is the network's raw coordinates.
    pub normalized: bool,
    pub safety: SpecConfig,
    pub mean: Option<Vec<f64>>,
    pub std: Option<Vec<f64>>,
    /// Full covariance matrix; mutually exclusive with `std`. Verification
    /// then runs in whitened coordinates.
    pub cov: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub epsilon: f64,
    pub termination: TerminationMode,
    pub p_min: f64,
    pub strategy: Strategy,
    pub alpha: f64,
    pub beta: f64,
    pub depth: usize,
    pub min_leaf_samples: usize,
    /// [uniform, distribution] sampling weights.
    pub weights: [f64; 2],
    pub n_initial: usize,
    pub n_iter: usize,
    pub max_attempts: usize,
    pub rank_scale: f64,
    pub delta_tail: f64,
    pub workers: usize,
    pub deterministic: bool,
    pub time_cap_s: Option<f64>,
    pub iter_cap: Option<u64>,
    pub emit_hulls: bool,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        let t = e.tree;
        Self {
            network: None,
            format: NetworkFormat::Auto,
            normalized: false,
            safety: SpecConfig::default(),
            mean: None,
            std: None,
            cov: None,
            seed: 0,
            epsilon: e.epsilon,
            termination: e.termination,
            p_min: e.p_min,
            strategy: e.strategy,
            alpha: t.alpha,
            beta: t.beta,
            depth: t.max_depth,
            min_leaf_samples: t.min_leaf_samples,
            weights: [t.weights.uniform, t.weights.distribution],
            n_initial: e.n_initial,
            n_iter: e.n_iter,
            max_attempts: t.max_attempts,
            rank_scale: t.rank_scale,
            delta_tail: e.delta_tail,
            workers: e.workers,
            deterministic: e.deterministic,
            time_cap_s: None,
            iter_cap: None,
            emit_hulls: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        Ok(cfg)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            epsilon: self.epsilon,
            termination: self.termination,
            p_min: self.p_min,
            strategy: self.strategy,
            tree: TreeConfig {
                max_depth: self.depth,
                min_leaf_samples: self.min_leaf_samples,
                alpha: self.alpha,
                beta: self.beta,
                weights: SampleWeights {
                    uniform: self.weights[0],
                    distribution: self.weights[1],
                },
                n_samples: self.n_iter,
                max_attempts: self.max_attempts,
                rank_scale: self.rank_scale,
            },
            n_initial: self.n_initial,
            n_iter: self.n_iter,
            delta_tail: self.delta_tail,
            workers: self.workers,
            deterministic: self.deterministic,
            iteration_cap: self.iter_cap,
            time_cap: self.time_cap_s.map(Duration::from_secs_f64),
        }
    }
}

/// Fully loaded verification problem. When a covariance matrix is supplied
/// the network has already been whitened and `gauss` is standard normal.
pub struct Problem {
    pub net: Network,
    pub spec: SafetySpec,
    pub gauss: GaussianInput,
}

pub fn load_problem(cfg: &RunConfig) -> anyhow::Result<Problem> {
    let net_path = cfg
        .network
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("no network file configured (--net)"))?;
    let net = load_network(Path::new(net_path), cfg.format, cfg.normalized)?;

    let spec = resolve_spec(&cfg.safety, net.output_dim())?;

    let mean = cfg
        .mean
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("no input mean configured (--mean)"))?;
    if mean.len() != net.input_dim() {
        bail!(
            "mean has {} entries but the network takes {} inputs",
            mean.len(),
            net.input_dim()
        );
    }
    let mean_v = DVector::from_column_slice(mean);

    match (&cfg.std, &cfg.cov) {
        (Some(_), Some(_)) => bail!("specify either std or cov, not both"),
        (None, None) => bail!("no input spread configured (--std or --cov)"),
        (Some(std), None) => {
            let gauss = GaussianInput::new(mean_v, DVector::from_column_slice(std), cfg.seed)?;
            Ok(Problem { net, spec, gauss })
        }
        (None, Some(cov)) => {
            let d = mean.len();
            if cov.len() != d || cov.iter().any(|row| row.len() != d) {
                bail!("covariance must be a {d}x{d} matrix");
            }
            let covariance = DMatrix::from_row_iterator(d, d, cov.iter().flatten().cloned());
            let full = FullGaussian {
                mean: mean_v,
                covariance,
                seed: cfg.seed,
            };
            let w = whiten(&full, &net)?;
            Ok(Problem {
                net: w.network,
                spec,
                gauss: w.gaussian,
            })
        }
    }
}

pub fn load_network(
    path: &Path,
    format: NetworkFormat,
    normalized: bool,
) -> anyhow::Result<Network> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read network file {}", path.display()))?;
    let is_nnet = match format {
        NetworkFormat::Nnet => true,
        NetworkFormat::Json => false,
        NetworkFormat::Auto => path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("nnet")),
    };
    if is_nnet {
        let file = parse_nnet(&text)?;
        if normalized {
            Ok(file.normalized_network()?)
        } else {
            Ok(file.network)
        }
    } else {
        if normalized {
            bail!("--normalized only applies to NNet files");
        }
        Ok(parse_json_network(&text)?)
    }
}

fn resolve_spec(sc: &SpecConfig, output_dim: usize) -> anyhow::Result<SafetySpec> {
    let (c, a) = if let Some(path) = &sc.file {
        if sc.c.is_some() || sc.a.is_some() {
            bail!("safety spec: give either a file or inline c/a, not both");
        }
        #[derive(Deserialize)]
        struct SpecFile {
            c: Vec<Vec<f64>>,
            a: Vec<f64>,
        }
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read spec file {path}"))?;
        let f: SpecFile =
            serde_json::from_str(&text).with_context(|| format!("invalid spec file {path}"))?;
        (f.c, f.a)
    } else {
        match (&sc.c, &sc.a) {
            (Some(c), Some(a)) => (c.clone(), a.clone()),
            _ => bail!("no safety spec configured (--spec or [safety] c/a)"),
        }
    };
    if c.is_empty() {
        bail!("safety spec needs at least one constraint row");
    }
    let cols = c[0].len();
    if cols != output_dim {
        bail!("safety matrix has {cols} columns but the network has {output_dim} outputs");
    }
    if c.iter().any(|row| row.len() != cols) {
        bail!("safety matrix rows have unequal lengths");
    }
    if a.len() != c.len() {
        bail!(
            "threshold vector has {} entries for {} constraint rows",
            a.len(),
            c.len()
        );
    }
    let k = c.len();
    let mat = DMatrix::from_row_iterator(k, cols, c.into_iter().flatten());
    Ok(SafetySpec::new(mat, DVector::from_vec(a))?)
}

/// Flag-level overrides shared by the verify/oracle/gridsearch/bench
/// subcommands; every field mirrors a `RunConfig` entry.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigFlags {
    /// Path to a TOML run configuration.
    #[arg(long = "config")]
    pub config: Option<String>,
    /// Network file.
    #[arg(long = "net")]
    pub net: Option<String>,
    /// Network file format.
    #[arg(long = "format", value_enum)]
    pub format: Option<NetworkFormat>,
    /// Verify in physical units by applying the NNet normalization.
    #[arg(long = "normalized")]
    pub normalized: bool,
    /// Safety spec: a JSON file path or an inline JSON object {"c":..,"a":..}.
    #[arg(long = "spec")]
    pub spec: Option<String>,
    /// Input mean, comma separated.
    #[arg(long = "mean", allow_hyphen_values = true)]
    pub mean: Option<String>,
    /// Per-dimension standard deviations, comma separated.
    #[arg(long = "std")]
    pub std: Option<String>,
    /// Full covariance: JSON file path or inline JSON array of rows.
    #[arg(long = "cov")]
    pub cov: Option<String>,
    #[arg(long = "epsilon")]
    pub epsilon: Option<f64>,
    /// Termination mode.
    #[arg(long = "termination", value_parser = parse_termination)]
    pub termination: Option<TerminationMode>,
    /// Refinement filter threshold.
    #[arg(long = "pmin")]
    pub p_min: Option<f64>,
    /// Subdivision strategy.
    #[arg(long = "strategy", value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long = "alpha")]
    pub alpha: Option<f64>,
    #[arg(long = "beta")]
    pub beta: Option<f64>,
    /// Regression tree depth.
    #[arg(long = "depth")]
    pub depth: Option<usize>,
    /// Sampling weights "uniform,distribution".
    #[arg(long = "weights")]
    pub weights: Option<String>,
    #[arg(long = "n-initial")]
    pub n_initial: Option<usize>,
    #[arg(long = "n-iter")]
    pub n_iter: Option<usize>,
    #[arg(long = "max-attempts")]
    pub max_attempts: Option<usize>,
    #[arg(long = "rank-scale")]
    pub rank_scale: Option<f64>,
    /// Tail mass excluded by the initial box.
    #[arg(long = "delta-tail")]
    pub delta_tail: Option<f64>,
    #[arg(long = "seed")]
    pub seed: Option<u64>,
    #[arg(long = "workers")]
    pub workers: Option<usize>,
    /// Force single-threaded verification.
    #[arg(long = "deterministic")]
    pub deterministic: bool,
    /// Wall-clock cap in seconds.
    #[arg(long = "time-cap")]
    pub time_cap: Option<f64>,
    /// Iteration cap.
    #[arg(long = "iter-cap")]
    pub iter_cap: Option<u64>,
    /// Include hull geometry in the result file.
    #[arg(long = "emit-hulls")]
    pub emit_hulls: bool,
    /// Output file path (stdout when omitted).
    #[arg(long = "out")]
    pub out: Option<String>,
}

fn parse_termination(s: &str) -> Result<TerminationMode, String> {
    match s {
        "sum" => Ok(TerminationMode::Sum),
        "max" => Ok(TerminationMode::Max),
        _ => Err(format!("unknown termination mode '{s}' (sum|max)")),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "boundary_aware" => Ok(Strategy::BoundaryAware),
        "uniform_bab" => Ok(Strategy::UniformBab),
        _ => Err(format!(
            "unknown strategy '{s}' (boundary_aware|uniform_bab)"
        )),
    }
}

impl ConfigFlags {
    /// Config file first (when given), then every explicit flag on top.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(Path::new(path))?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.net {
            cfg.network = Some(v.clone());
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if self.normalized {
            cfg.normalized = true;
        }
        if let Some(v) = &self.spec {
            cfg.safety = parse_spec_flag(v)?;
        }
        if let Some(v) = &self.mean {
            cfg.mean = Some(parse_float_list(v).context("--mean")?);
        }
        if let Some(v) = &self.std {
            cfg.std = Some(parse_float_list(v).context("--std")?);
            cfg.cov = None;
        }
        if let Some(v) = &self.cov {
            cfg.cov = Some(parse_matrix_flag(v).context("--cov")?);
            cfg.std = None;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.termination {
            cfg.termination = v;
        }
        if let Some(v) = self.p_min {
            cfg.p_min = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = &self.weights {
            let w = parse_float_list(v).context("--weights")?;
            if w.len() != 2 {
                bail!("--weights needs exactly two values");
            }
            cfg.weights = [w[0], w[1]];
        }
        if let Some(v) = self.n_initial {
            cfg.n_initial = v;
        }
        if let Some(v) = self.n_iter {
            cfg.n_iter = v;
        }
        if let Some(v) = self.max_attempts {
            cfg.max_attempts = v;
        }
        if let Some(v) = self.rank_scale {
            cfg.rank_scale = v;
        }
        if let Some(v) = self.delta_tail {
            cfg.delta_tail = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(v) = self.time_cap {
            cfg.time_cap_s = Some(v);
        }
        if let Some(v) = self.iter_cap {
            cfg.iter_cap = Some(v);
        }
        if self.emit_hulls {
            cfg.emit_hulls = true;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        Ok(cfg)
    }
}

fn parse_float_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("bad number '{t}'"))
        })
        .collect()
}

fn parse_spec_flag(s: &str) -> anyhow::Result<SpecConfig> {
    let trimmed = s.trim_start();
    if trimmed.starts_with('{') {
        #[derive(Deserialize)]
        struct Inline {
            c: Vec<Vec<f64>>,
            a: Vec<f64>,
        }
        let inline: Inline = serde_json::from_str(trimmed).context("inline --spec JSON")?;
        Ok(SpecConfig {
            c: Some(inline.c),
            a: Some(inline.a),
            file: None,
        })
    } else {
        Ok(SpecConfig {
            c: None,
            a: None,
            file: Some(s.to_string()),
        })
    }
}

fn parse_matrix_flag(s: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    let trimmed = s.trim_start();
    if trimmed.starts_with('[') {
        Ok(serde_json::from_str(trimmed).context("inline --cov JSON")?)
    } else {
        let text = std::fs::read_to_string(s).with_context(|| format!("cannot read {s}"))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("invalid matrix in {s}"))?)
    }
}
