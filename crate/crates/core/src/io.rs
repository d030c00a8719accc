//! File formats: response and parameter CSVs, run configuration, and the
//! output directory with its manifest.
//!
//! All CSVs use `\n` line endings and shortest round-trip float formatting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GpcmError, Result};
use crate::mcmc::{HmcConfig, PriorSpec};
use crate::mmle::EmConfig;
use crate::model::{ItemBank, ItemParams, ResponseMatrix, ThetaVector};
use crate::simulation::{Estimator, EstimatorSettings, SimCondition};

/// Run-configuration schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn format_f64(v: f64) -> String {
    ryu::Buffer::new().format(v).to_owned()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).from_reader(r)
}

fn parse_err(row: usize, col: usize, message: impl Into<String>) -> GpcmError {
    GpcmError::Parse {
        row,
        col,
        message: message.into(),
    }
}

/// Response matrix with the item names of its header row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    pub item_names: Vec<String>,
    pub matrix: ResponseMatrix,
}

impl ResponseTable {
    /// Wraps a matrix with default item names `i1, i2, ...`.
    pub fn with_default_names(matrix: ResponseMatrix) -> Self {
        ResponseTable {
            item_names: (1..=matrix.n_items()).map(|j| format!("i{j}")).collect(),
            matrix,
        }
    }
}

/// Parses a response CSV: a header of item names, then one row of integer
/// categories per person. Rows and columns in errors are 1-based, counting
/// data rows after the header.
///
/// Category counts come from `n_categories` when given; otherwise each item
/// gets `max(observed) + 1` categories, and at least two.
pub fn parse_responses<R: Read>(reader: R, n_categories: Option<&[usize]>) -> Result<ResponseTable> {
    let mut rdr = csv_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(0, 0, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_owned())
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(parse_err(0, 0, "missing header row of item names"));
    }
    if let Some((col, _)) = names.iter().enumerate().find(|(_, n)| n.is_empty()) {
        return Err(parse_err(0, col + 1, "empty item name"));
    }
    let n_items = names.len();
    if let Some(m) = n_categories {
        if m.len() != n_items {
            return Err(GpcmError::DimensionMismatch {
                what: "items in response header",
                expected: m.len(),
                found: n_items,
            });
        }
    }
    let mut cells = Vec::new();
    let mut n_persons = 0;
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if rec.len() != n_items {
            return Err(parse_err(
                row,
                rec.len().min(n_items) + 1,
                format!("expected {n_items} fields, found {}", rec.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            let col = c + 1;
            let field = field.trim();
            if field.is_empty() {
                return Err(parse_err(row, col, "missing value"));
            }
            let v: i64 = field
                .parse()
                .map_err(|_| parse_err(row, col, format!("{field:?} is not an integer category")))?;
            let limit = n_categories.map_or(u16::MAX as i64, |m| m[c] as i64);
            if v < 0 || v >= limit {
                return Err(parse_err(row, col, format!("category {v} outside 0..{limit}")));
            }
            cells.push(v as u16);
        }
        n_persons += 1;
    }
    if n_persons == 0 {
        return Err(parse_err(1, 0, "no response rows"));
    }
    let m = match n_categories {
        Some(m) => m.to_vec(),
        None => (0..n_items)
            .map(|j| {
                let top = (0..n_persons).map(|i| cells[i * n_items + j]).max().unwrap_or(0);
                (top as usize + 1).max(2)
            })
            .collect(),
    };
    Ok(ResponseTable {
        item_names: names,
        matrix: ResponseMatrix::new(n_persons, m, cells)?,
    })
}

pub fn read_response_csv(path: &Path, n_categories: Option<&[usize]>) -> Result<ResponseTable> {
    parse_responses(fs::File::open(path)?, n_categories)
}

pub fn write_responses<W: Write>(out: W, table: &ResponseTable) -> Result<()> {
    if table.item_names.len() != table.matrix.n_items() {
        return Err(GpcmError::DimensionMismatch {
            what: "item names",
            expected: table.matrix.n_items(),
            found: table.item_names.len(),
        });
    }
    let mut w = csv_writer(out);
    w.write_record(&table.item_names)?;
    for row in table.matrix.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Item parameters as `item, a, b2, ..., bM`, where `bk` is the step into
/// category `k` (1-based). Short items leave trailing cells empty.
pub fn write_items<W: Write>(out: W, bank: &ItemBank) -> Result<()> {
    let width = bank.items().iter().map(|i| i.steps().len()).max().unwrap_or(0);
    let mut w = csv_writer(out);
    let mut header = vec!["item".to_owned(), "a".to_owned()];
    header.extend((0..width).map(|h| format!("b{}", h + 2)));
    w.write_record(&header)?;
    for (j, item) in bank.items().iter().enumerate() {
        let mut rec = vec![(j + 1).to_string(), format_f64(item.discrimination())];
        rec.extend(item.steps().iter().map(|&d| format_f64(d)));
        rec.resize(width + 2, String::new());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_items<R: Read>(reader: R) -> Result<ItemBank> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(0, 0, e.to_string()))?.clone();
    let expected_head = ["item", "a"];
    for (c, want) in expected_head.iter().enumerate() {
        if header.get(c).map(str::trim) != Some(*want) {
            return Err(parse_err(0, c + 1, format!("expected column {want:?}")));
        }
    }
    for c in 2..header.len() {
        let want = format!("b{c}");
        if header[c].trim() != want {
            return Err(parse_err(0, c + 1, format!("expected column {want:?}")));
        }
    }
    let mut items = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(row, rec.len().min(header.len()) + 1, "ragged row"));
        }
        let num = |c: usize| -> Result<f64> {
            let f = rec[c].trim();
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(row, c + 1, format!("{f:?} is not a finite number")))
        };
        let a = num(1)?;
        let mut steps = Vec::new();
        let mut c = 2;
        while c < rec.len() && !rec[c].trim().is_empty() {
            steps.push(num(c)?);
            c += 1;
        }
        if let Some(extra) = (c..rec.len()).find(|&k| !rec[k].trim().is_empty()) {
            return Err(parse_err(row, extra + 1, "step after an empty cell"));
        }
        items.push(ItemParams::new(a, steps).map_err(|e| parse_err(row, 0, e.to_string()))?);
    }
    Ok(ItemBank::new(items))
}

/// Abilities as `person, theta` plus `sd` when given.
pub fn write_thetas<W: Write>(out: W, thetas: &ThetaVector, sd: Option<&[f64]>) -> Result<()> {
    let mut w = csv_writer(out);
    match sd {
        Some(sd) => {
            if sd.len() != thetas.len() {
                return Err(GpcmError::DimensionMismatch {
                    what: "ability standard errors",
                    expected: thetas.len(),
                    found: sd.len(),
                });
            }
            w.write_record(["person", "theta", "sd"])?;
            for (i, (t, s)) in thetas.values().iter().zip(sd).enumerate() {
                w.write_record([(i + 1).to_string(), format_f64(*t), format_f64(*s)])?;
            }
        }
        None => {
            w.write_record(["person", "theta"])?;
            for (i, t) in thetas.values().iter().enumerate() {
                w.write_record([(i + 1).to_string(), format_f64(*t)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn parse_thetas<R: Read>(reader: R) -> Result<ThetaVector> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(0, 0, e.to_string()))?.clone();
    let col = header
        .iter()
        .position(|h| h.trim() == "theta")
        .ok_or_else(|| parse_err(0, 0, "no theta column"))?;
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(r + 1, 0, e.to_string()))?;
        let f = rec.get(col).unwrap_or("").trim();
        values.push(
            f.parse::<f64>()
                .map_err(|_| parse_err(r + 1, col + 1, format!("{f:?} is not a number")))?,
        );
    }
    ThetaVector::new(values)
}

/// Writes serializable rows under a header derived from the field names.
pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(r, rec)| rec.map_err(|e| parse_err(r + 1, 0, e.to_string())))
        .collect()
}

/// Which estimators a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mmle,
    Mcmc,
    Both,
}

impl Method {
    pub fn estimators(&self) -> Vec<Estimator> {
        match self {
            Method::Mmle => vec![Estimator::Mmle],
            Method::Mcmc => vec![Estimator::Mcmc],
            Method::Both => vec![Estimator::Mmle, Estimator::Mcmc],
        }
    }
}

impl std::str::FromStr for Method {
    type Err = GpcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmle" => Ok(Method::Mmle),
            "mcmc" => Ok(Method::Mcmc),
            "both" => Ok(Method::Both),
            other => Err(GpcmError::Config(format!("unknown method {other:?} (expected mmle, mcmc or both)"))),
        }
    }
}

fn default_verbosity() -> u8 {
    1
}

/// JSON run configuration. Every field except `schema_version` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<SimCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Category counts per item for response files; inferred when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<usize>>,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub hmc: HmcConfig,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_verbosity")]
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            conditions: Vec::new(),
            method: None,
            categories: None,
            em: EmConfig::default(),
            hmc: HmcConfig::default(),
            prior: PriorSpec::default(),
            data: None,
            out_dir: None,
            verbosity: default_verbosity(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| GpcmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| GpcmError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(GpcmError::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.em.validate()?;
        self.hmc.validate()?;
        self.prior.validate()?;
        for c in &self.conditions {
            c.validate()?;
        }
        if let Some(m) = &self.categories {
            if m.iter().any(|&k| k < 2) {
                return Err(GpcmError::Config("every item needs at least two categories".into()));
            }
        }
        if let Some(d) = &self.data {
            if !d.is_file() {
                return Err(GpcmError::Config(format!("data file {} does not exist", d.display())));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            em: self.em.clone(),
            hmc: self.hmc.clone(),
            prior: self.prior.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the compact JSON form.
    pub fn sha256(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Record of one run, sufficient to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: RunConfig,
    /// Input files read by the command, with their digests.
    pub inputs: Vec<OutputEntry>,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory that records every file written to it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_owned(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Renders `name` in memory with `f`, then writes it in one call.
    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.root.join(name);
        fs::write(&path, &buf)?;
        self.entries.retain(|e| e.file != name);
        self.entries.push(OutputEntry {
            file: name.to_owned(),
            bytes: buf.len(),
            sha256: sha256_hex(&buf),
        });
        Ok(path)
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    /// Writes the manifest listing all files written so far.
    pub fn finish(
        mut self,
        command: &str,
        config: &RunConfig,
        seeds: BTreeMap<String, u64>,
        inputs: &[&Path],
    ) -> Result<Manifest> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p)?;
                Ok(OutputEntry {
                    file: p.display().to_string(),
                    bytes: bytes.len(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // the output location is not part of the run's identity
        let config = RunConfig {
            out_dir: None,
            ..config.clone()
        };
        let manifest = Manifest {
            tool: "gpcm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config_sha256: config.sha256(),
            seeds,
            config,
            inputs,
            outputs: self.entries.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        self.write(MANIFEST_FILE, |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        })?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
