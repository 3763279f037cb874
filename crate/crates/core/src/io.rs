//! Files: level CSVs, query and result tables, model archives and run
//! configurations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gp::{
    fit_level, BasisSpec, BasisTerm, LevelData, NuggetPolicy, Objective, OptimizeOptions, PriorSpec, ThetaBounds,
};
use crate::kernels::{KernelFamily, KernelSpec, DEFAULT_NUGGET};
use crate::model::{fit, Level, LevelSpec, MultiFidelityModel, PredictionMode, ThetaChoice};
use crate::{Error, Result};

/// Name of the optional column holding the lower level's output.
pub const LOWER_COLUMN: &str = "z_lower";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, detail: detail.into() }
}

/// A numeric CSV table with its header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads a comma-separated table of finite numbers with a header row.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_path(path).map_err(
            |e| match e.into_kind() {
                csv::ErrorKind::Io(source) => io_err(path, source),
                other => parse_err(path, 1, format!("{other:?}")),
            },
        )?;
    let header: Vec<String> =
        reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(parse_err(path, 1, "header must name every column"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(path, line, format!("{} fields, header has {}", record.len(), header.len())));
        }
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("column `{name}`: `{cell}` is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, line, format!("column `{name}`: non-finite value `{cell}`")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Scientific notation with 17 significant digits, which parses back to the
/// same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(contents).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Writes a numeric table with [`format_number`] formatting.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut out = table.header.join(",");
    out.push('\n');
    for row in &table.rows {
        if row.len() != table.header.len() {
            return Err(Error::Shape(format!("row of {} values for {} columns", row.len(), table.header.len())));
        }
        out.push_str(&row.iter().map(|v| format_number(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Design-only table with columns `x1..xd`.
pub fn design_table(design: &[Vec<f64>]) -> Table {
    let d = design.first().map_or(0, Vec::len);
    Table { header: (1..=d).map(|j| format!("x{j}")).collect(), rows: design.to_vec() }
}

/// Inputs, outputs and (optionally) lower-level outputs of one level file.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTable {
    pub inputs: Vec<String>,
    pub output: String,
    pub design: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
    pub lower: Option<Vec<f64>>,
}

impl LevelTable {
    /// Attaches regression bases. A table with a lower-level column, or
    /// any `g_basis`, becomes an upper level.
    pub fn into_level_data(self, f_basis: BasisSpec, g_basis: Option<BasisSpec>) -> LevelData<f64> {
        match g_basis {
            Some(g) => LevelData::upper(self.design, self.observations, f_basis, g, self.lower),
            None => LevelData::base(self.design, self.observations, f_basis),
        }
    }
}

/// Reads a level file: input columns, then the output column, then an
/// optional `z_lower` column.
pub fn read_level_table(path: &Path) -> Result<LevelTable> {
    let table = read_table(path)?;
    let has_lower = table.header.last().is_some_and(|h| h == LOWER_COLUMN);
    let n_out = 1 + usize::from(has_lower);
    if table.header.len() < n_out + 1 {
        return Err(parse_err(path, 1, "need at least one input column and an output column"));
    }
    let d = table.header.len() - n_out;
    if table.rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(LevelTable {
        inputs: table.header[..d].to_vec(),
        output: table.header[d].clone(),
        design: table.rows.iter().map(|r| r[..d].to_vec()).collect(),
        observations: table.rows.iter().map(|r| r[d]).collect(),
        lower: has_lower.then(|| table.rows.iter().map(|r| r[d + 1]).collect()),
    })
}

/// Reads a level file with constant regression bases; files with a
/// `z_lower` column get a constant adjustment basis.
pub fn ingest_level_csv(path: &Path) -> Result<LevelData<f64>> {
    let table = read_level_table(path)?;
    let g = table.lower.is_some().then(BasisSpec::constant);
    Ok(table.into_level_data(BasisSpec::constant(), g))
}

/// Writes a level file in the format read by [`read_level_table`].
pub fn write_level_csv(path: &Path, level: &LevelData<f64>) -> Result<()> {
    let mut table = design_table(&level.design);
    table.header.push("z".into());
    if level.lower_observations.is_some() {
        table.header.push(LOWER_COLUMN.into());
    }
    for (i, row) in table.rows.iter_mut().enumerate() {
        row.push(level.observations[i]);
        if let Some(z) = &level.lower_observations {
            row.push(z[i]);
        }
    }
    write_table(path, &table)
}

/// Query points: the first `dim` columns of each row.
pub fn read_points(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let table = read_table(path)?;
    if table.header.len() < dim {
        return Err(parse_err(path, 1, format!("{} columns, model needs {dim} inputs", table.header.len())));
    }
    Ok(table.rows.into_iter().map(|r| r[..dim].to_vec()).collect())
}

fn parse_basis(terms: &[String]) -> Result<BasisSpec> {
    BasisSpec::new(terms.iter().map(|t| t.parse::<BasisTerm>()).collect::<Result<Vec<_>>>()?)
}

fn basis_strings(b: &BasisSpec) -> Vec<String> {
    b.terms().iter().map(ToString::to_string).collect()
}

/// Conjugate prior values as written in configuration and archives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub b: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub alpha: f64,
    pub gamma: f64,
}

impl PriorConfig {
    fn to_prior(&self) -> Result<PriorSpec<f64>> {
        let m = self.b.len();
        if self.v.len() != m || self.v.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidPrior(format!("v must be a {m}x{m} matrix")));
        }
        Ok(PriorSpec::Informative {
            b: DVector::from_vec(self.b.clone()),
            v: DMatrix::from_fn(m, m, |i, j| self.v[i][j]),
            alpha: self.alpha,
            gamma: self.gamma,
        })
    }

    fn from_prior(p: &PriorSpec<f64>) -> Option<Self> {
        match p {
            PriorSpec::NonInformative => None,
            PriorSpec::Informative { b, v, alpha, gamma } => Some(PriorConfig {
                b: b.iter().copied().collect(),
                v: v.row_iter().map(|r| r.iter().copied().collect()).collect(),
                alpha: *alpha,
                gamma: *gamma,
            }),
        }
    }
}

/// One `[[level]]` table of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub path: PathBuf,
    #[serde(default = "constant_basis")]
    pub f_basis: Vec<String>,
    #[serde(default)]
    pub g_basis: Option<Vec<String>>,
    /// Fixed length scales; estimated when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
}

fn constant_basis() -> Vec<String> {
    vec!["1".into()]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower_factor: f64,
    pub upper_factor: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let b = ThetaBounds::default();
        BoundsConfig { lower_factor: b.lower_factor, upper_factor: b.upper_factor }
    }
}

/// Everything needed to fit a model, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "level")]
    pub levels: Vec<LevelConfig>,
    #[serde(default = "default_objective")]
    pub objective: String,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_nugget")]
    pub nugget: f64,
    #[serde(default = "default_prediction")]
    pub prediction: String,
    #[serde(default)]
    pub bounds: BoundsConfig,
}

fn default_objective() -> String {
    "reml".into()
}
fn default_kernel() -> String {
    "matern52".into()
}
fn default_restarts() -> usize {
    10
}
fn default_nugget() -> f64 {
    DEFAULT_NUGGET
}
fn default_prediction() -> String {
    "universal".into()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn objective(&self) -> Result<Objective> {
        self.objective.parse()
    }

    pub fn prediction_mode(&self) -> Result<PredictionMode> {
        self.prediction.parse()
    }

    pub fn kernel_family(&self) -> Result<KernelFamily> {
        self.kernel.parse().map_err(|_| Error::Config(format!("unknown kernel `{}`", self.kernel)))
    }

    /// Checks everything that does not need the data files.
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("at least one [[level]] is required".into()));
        }
        self.objective()?;
        self.prediction_mode()?;
        self.kernel_family()?;
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::Config(format!("nugget {} must be nonnegative", self.nugget)));
        }
        let b = self.bounds;
        if !(b.lower_factor > 0.0 && b.upper_factor > b.lower_factor && b.upper_factor.is_finite()) {
            return Err(Error::Config("bounds need 0 < lower_factor < upper_factor".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            let t = i + 1;
            parse_basis(&l.f_basis)?;
            match (&l.g_basis, t) {
                (Some(_), 1) => return Err(Error::Config("level 1 cannot have g_basis".into())),
                (None, t) if t > 1 => return Err(Error::Config(format!("level {t} needs g_basis"))),
                (Some(g), _) => {
                    parse_basis(g)?;
                }
                _ => {}
            }
            if let Some(theta) = &l.theta {
                if theta.is_empty() || theta.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::Config(format!("level {t}: theta values must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn optimize_options(&self) -> Result<OptimizeOptions> {
        Ok(OptimizeOptions {
            objective: self.objective()?,
            bounds: ThetaBounds { lower_factor: self.bounds.lower_factor, upper_factor: self.bounds.upper_factor },
            restarts: self.restarts,
            seed: self.seed,
            family: self.kernel_family()?,
            nugget: self.nugget,
            ..OptimizeOptions::default()
        })
    }

    /// Reads the level files (relative to `base_dir`) and builds the fit
    /// inputs.
    pub fn level_specs(&self, base_dir: &Path) -> Result<Vec<LevelSpec<f64>>> {
        let family = self.kernel_family()?;
        self.levels
            .iter()
            .map(|l| {
                let table = read_level_table(&base_dir.join(&l.path))?;
                let g = l.g_basis.as_deref().map(parse_basis).transpose()?;
                let data = table.into_level_data(parse_basis(&l.f_basis)?, g);
                let theta = match &l.theta {
                    Some(t) => ThetaChoice::Fixed(KernelSpec::new(family, t.clone(), self.nugget)?),
                    None => ThetaChoice::Auto,
                };
                let prior = l.prior.as_ref().map(PriorConfig::to_prior).transpose()?.unwrap_or_default();
                Ok(LevelSpec::new(data, theta).with_prior(prior))
            })
            .collect()
    }

    /// Reads the data and fits the model.
    pub fn fit(&self, base_dir: &Path) -> Result<MultiFidelityModel<f64>> {
        fit(self.level_specs(base_dir)?, &self.optimize_options()?)
    }
}

/// Current archive format version.
pub const ARCHIVE_VERSION: u32 = 1;
const ARCHIVE_FORMAT: &str = "cokrige-model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub objective: String,
    pub restarts: usize,
    pub prediction: String,
    pub prior_modes: Vec<String>,
    pub applied_nuggets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchivedKernel {
    family: String,
    theta: Vec<f64>,
    nugget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchivedLevel {
    design: Vec<Vec<f64>>,
    observations: Vec<f64>,
    lower_observations: Option<Vec<f64>>,
    f_basis: Vec<String>,
    g_basis: Option<Vec<String>>,
    kernel: ArchivedKernel,
    prior: Option<PriorConfig>,
    trend_mean: Vec<f64>,
    trend_cov_scale: Vec<Vec<f64>>,
    q: f64,
    a: f64,
    sigma2_eml: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Archive {
    format: String,
    version: u32,
    provenance: Provenance,
    warnings: Vec<String>,
    levels: Vec<ArchivedLevel>,
}

/// Provenance entries derived from a configuration and a fitted model.
pub fn provenance(cfg: &RunConfig, model: &MultiFidelityModel<f64>) -> Provenance {
    Provenance {
        seed: cfg.seed,
        objective: cfg.objective.clone(),
        restarts: cfg.restarts,
        prediction: cfg.prediction.clone(),
        prior_modes: model
            .levels()
            .iter()
            .map(|l| if l.fitted.prior.is_informative() { "informative" } else { "noninformative" }.to_string())
            .collect(),
        applied_nuggets: model.levels().iter().map(|l| l.fitted.applied_nugget()).collect(),
    }
}

/// Serializes a model as versioned JSON.
pub fn archive_to_string(model: &MultiFidelityModel<f64>, provenance: &Provenance) -> Result<String> {
    let levels = model
        .levels()
        .iter()
        .map(|l| {
            let f = &l.fitted;
            Ok(ArchivedLevel {
                design: l.data.design.clone(),
                observations: l.data.observations.iter().copied().collect(),
                lower_observations: l.data.lower_observations.as_ref().map(|z| z.iter().copied().collect()),
                f_basis: basis_strings(&l.data.f_basis),
                g_basis: l.data.g_basis.as_ref().map(basis_strings),
                kernel: ArchivedKernel {
                    family: f.kernel.family().to_string(),
                    theta: f.kernel.theta().to_vec(),
                    nugget: f.kernel.nugget(),
                },
                prior: PriorConfig::from_prior(&f.prior),
                trend_mean: f.trend_mean.iter().copied().collect(),
                trend_cov_scale: f.trend_cov_scale.row_iter().map(|r| r.iter().copied().collect()).collect(),
                q: f.q,
                a: f.a,
                sigma2_eml: f.sigma2_eml()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let archive = Archive {
        format: ARCHIVE_FORMAT.into(),
        version: ARCHIVE_VERSION,
        provenance: provenance.clone(),
        warnings: model.warnings().to_vec(),
        levels,
    };
    serde_json::to_string_pretty(&archive).map_err(|e| Error::Archive(e.to_string()))
}

/// Relative agreement, with an absolute floor for values that are zero up
/// to rounding (such as `Q` for an exact fit).
fn agrees(stored: f64, rebuilt: f64) -> bool {
    (stored - rebuilt).abs() <= 1e-8 * stored.abs().max(rebuilt.abs()) + 1e-12
}

/// Rebuilds a model from its archive. Factorizations are recomputed from
/// the stored designs, length scales and nuggets; the stored posterior
/// must match the rebuilt one.
pub fn archive_from_str(text: &str) -> Result<(MultiFidelityModel<f64>, Provenance)> {
    let archive: Archive = serde_json::from_str(text).map_err(|e| Error::Archive(e.to_string()))?;
    if archive.format != ARCHIVE_FORMAT {
        return Err(Error::Archive(format!("unknown format `{}`", archive.format)));
    }
    if archive.version != ARCHIVE_VERSION {
        return Err(Error::Archive(format!("unsupported version {} (expected {ARCHIVE_VERSION})", archive.version)));
    }
    let mut levels = Vec::with_capacity(archive.levels.len());
    for (i, a) in archive.levels.into_iter().enumerate() {
        let t = i + 1;
        let f_basis = parse_basis(&a.f_basis)?;
        let data = match &a.g_basis {
            Some(g) => LevelData::upper(a.design, a.observations, f_basis, parse_basis(g)?, a.lower_observations),
            None => LevelData::base(a.design, a.observations, f_basis),
        };
        let family: KernelFamily = a.kernel.family.parse()?;
        let kernel = KernelSpec::new(family, a.kernel.theta, a.kernel.nugget)?;
        let prior = a.prior.as_ref().map(PriorConfig::to_prior).transpose()?.unwrap_or_default();
        let fitted = fit_level(t, &data, &kernel, &prior, NuggetPolicy::Fixed)?;
        let consistent = a.trend_mean.len() == fitted.trend_mean.len()
            && a.trend_mean.iter().zip(fitted.trend_mean.iter()).all(|(s, r)| agrees(*s, *r))
            && agrees(a.q, fitted.q)
            && agrees(a.a, fitted.a);
        if !consistent {
            return Err(Error::Archive(format!("level {t}: stored posterior does not match the rebuilt model")));
        }
        levels.push(Level { data, fitted });
    }
    let mut model = MultiFidelityModel::from_levels(levels)?;
    for w in archive.warnings {
        model.push_warning(w);
    }
    Ok((model, archive.provenance))
}

pub fn save_model(path: &Path, model: &MultiFidelityModel<f64>, provenance: &Provenance) -> Result<()> {
    write_atomic(path, archive_to_string(model, provenance)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<(MultiFidelityModel<f64>, Provenance)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    archive_from_str(&text)
}
