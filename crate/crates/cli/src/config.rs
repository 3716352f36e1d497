use std::path::{Path, PathBuf};

use htype_core::harnack::BoundaryData;
use htype_core::{FieldSpec, HTypeGroupSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run reads. Every key has a default, so an empty file is valid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Preset name; ignored when `group_file` is set.
    #[serde(default = "default_group")]
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_file: Option<PathBuf>,
    #[serde(default = "FieldSpec::identity")]
    pub field: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub constants: ConstantsBlock,
    #[serde(default)]
    pub landis: LandisBlock,
    #[serde(default)]
    pub barrier: BarrierBlock,
    #[serde(default)]
    pub harnack: HarnackBlock,
}

fn default_seed() -> u64 {
    42
}

fn default_group() -> String {
    "heisenberg:1".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsBlock {
    pub quadrature: usize,
    pub k_samples: usize,
}

impl Default for ConstantsBlock {
    fn default() -> Self {
        let b = htype_core::gauge::ConstantsBudget::default();
        Self {
            quadrature: b.quadrature,
            k_samples: b.k_samples,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandisBlock {
    /// Halton fill size.
    pub points: usize,
    pub radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

impl Default for LandisBlock {
    fn default() -> Self {
        Self {
            points: 256,
            radius: 1.0,
            center: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallBlock {
    /// Flat coordinates; the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole: Option<BallBlock>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierBlock {
    /// Defaults to `min(2, Landis margin of the field on O)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "O")]
    pub region: RegionBlock,
    #[serde(rename = "O_prime")]
    pub test_region: BallBlock,
    pub eps: f64,
    pub budget: usize,
    pub test_points: usize,
}

impl Default for BarrierBlock {
    fn default() -> Self {
        Self {
            delta: None,
            region: RegionBlock {
                center: None,
                radius: 0.5,
                hole: None,
            },
            test_region: BallBlock {
                center: None,
                radius: 0.25,
            },
            eps: 0.05,
            budget: 40_000,
            test_points: 9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnackBlock {
    pub resolution: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Box half-widths; by default the box covers `B_{2R}(x0)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_widths: Option<Vec<f64>>,
    /// Number of random Landis cases; 0 runs the single `[field]` case.
    pub sweep: usize,
    /// Boundary data for the single case.
    pub boundary: BoundaryData,
}

impl Default for HarnackBlock {
    fn default() -> Self {
        Self {
            resolution: 17,
            radius: 0.5,
            x0: None,
            half_widths: None,
            sweep: 50,
            boundary: BoundaryData::SinX1,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

/// Loads the file (if any) and applies `key=value` overrides, where keys are
/// dotted paths and values are parsed as TOML (bare words fall back to strings).
/// Both are merged key by key onto the defaults, so a partial `[field]` or
/// `field.lambda=...` keeps the remaining default keys.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut tree = toml::Table::try_from(RunConfig::default()).expect("defaults serialise");
    if let Some(p) = path {
        let text =
            std::fs::read_to_string(p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
        let file = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
        merge(&mut tree, file);
    }
    for (key, raw) in overrides {
        set_path(&mut tree, key, parse_value(raw))?;
    }
    let origin = path.map_or_else(|| "flags".to_string(), |p| p.display().to_string());
    RunConfig::deserialize(toml::Value::Table(tree)).map_err(|e| CliError::config(format!("{origin}: {e}")))
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !switches_kind(b, &t) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A table that names a different `kind` replaces the default wholesale.
fn switches_kind(base: &toml::Table, top: &toml::Table) -> bool {
    matches!((base.get("kind"), top.get("kind")), (Some(a), Some(b)) if a != b)
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = tree;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// On-disk group description: `m`, `n`, `B` and an optional `rescale`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupFile {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Vec<MatrixEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<Vec<f64>>,
}

/// A structure matrix given either as rows or flat in row-major order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixEntry {
    fn to_matrix(&self, m: usize, k: usize) -> Result<DMatrix<f64>, CliError> {
        let flat: Vec<f64> = match self {
            MatrixEntry::Rows(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(CliError::config(format!("B[{k}] must have {m} rows of {m} entries")));
                }
                rows.concat()
            }
            MatrixEntry::Flat(v) => v.clone(),
        };
        if flat.len() != m * m {
            return Err(CliError::config(format!("B[{k}] has {} entries, expected {}", flat.len(), m * m)));
        }
        Ok(DMatrix::from_row_slice(m, m, &flat))
    }
}

/// A resolved group spec plus the label it came from.
pub struct ResolvedGroup {
    pub label: String,
    pub spec: HTypeGroupSpec,
}

pub fn resolve_group(cfg: &RunConfig) -> Result<ResolvedGroup, CliError> {
    match &cfg.group_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            let file: GroupFile =
                toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            if file.b.len() != file.n {
                return Err(CliError::config(format!(
                    "{}: n = {} but {} matrices given",
                    path.display(),
                    file.n,
                    file.b.len()
                )));
            }
            let b = file
                .b
                .iter()
                .enumerate()
                .map(|(k, e)| e.to_matrix(file.m, k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))?;
            let spec = HTypeGroupSpec::new(b, file.rescale).map_err(CliError::from_core)?;
            Ok(ResolvedGroup {
                label: path.display().to_string(),
                spec,
            })
        }
        None => Ok(ResolvedGroup {
            label: cfg.group.clone(),
            spec: HTypeGroupSpec::preset(&cfg.group).map_err(|e| CliError::config(e.to_string()))?,
        }),
    }
}

/// The group as it enters the digest: the matrices themselves, not the path.
#[derive(Serialize)]
pub struct GroupDigest {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub rescale: Option<Vec<f64>>,
}

impl GroupDigest {
    pub fn of(spec: &HTypeGroupSpec) -> Self {
        Self {
            m: spec.m,
            n: spec.n,
            b: spec
                .b
                .iter()
                .map(|mat| (0..spec.m).flat_map(|i| (0..spec.m).map(move |j| mat[(i, j)])).collect())
                .collect(),
            rescale: spec.rescale.clone(),
        }
    }
}

pub fn show(cfg: &RunConfig) -> String {
    let mut out = String::from(
        "# unset keys: group_file, output, landis.center, barrier.delta (min(2, Landis margin on O)),\n\
         # barrier.O.center / O_prime.center (origin), harnack.x0 (origin), harnack.half_widths (box around B_2R)\n",
    );
    out.push_str(&toml::to_string_pretty(cfg).expect("config serialises"));
    out
}
