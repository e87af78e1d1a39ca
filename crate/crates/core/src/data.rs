//! Tabular data loading, GLM preprocessing and synthetic generators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{GlmDataset, Link};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

/// Column name to kind; read from a JSON sidecar such as
/// `{"sex": "categorical", "length": "numeric", "rings": "label"}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub BTreeMap<String, ColumnKind>);

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self, column: &str) -> Option<ColumnKind> {
        self.0.get(column).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Number(f64),
    Text(String),
}

impl Cell {
    fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn as_key(&self) -> String {
        match self {
            Cell::Number(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<Cell>>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label_index(&self) -> Option<usize> {
        self.kinds.iter().position(|&k| k == ColumnKind::Label)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TabularDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, &name)
}

/// Parses CSV text with a header row. A completely empty input yields an
/// empty dataset.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, name: &str) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let empty = TabularDataset {
        name: name.to_string(),
        columns: Vec::new(),
        kinds: Vec::new(),
        rows: Vec::new(),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(empty);
    }
    let columns: Vec<String> = header.iter().map(str::to_string).collect();
    let kinds = columns
        .iter()
        .map(|c| {
            schema
                .kind(c)
                .ok_or_else(|| Error::Validation(format!("column {c:?} is missing from the schema")))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = kinds.iter().filter(|&&k| k == ColumnKind::Label).count();
    if labels != 1 {
        return Err(Error::Validation(format!("schema must have exactly one label column, found {labels}")));
    }
    if let Some(extra) = schema.0.keys().find(|k| !columns.contains(k)) {
        return Err(Error::Validation(format!("schema column {extra:?} is not in the file")));
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != columns.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len(), record.len()),
            });
        }
        let row = record
            .iter()
            .zip(&kinds)
            .zip(&columns)
            .map(|((field, kind), col)| match kind {
                ColumnKind::Numeric => field.parse::<f64>().map(Cell::Number).map_err(|_| Error::Parse {
                    line,
                    message: format!("column {col:?}: {field:?} is not a number"),
                }),
                _ => Ok(match field.parse::<f64>() {
                    Ok(v) if *kind == ColumnKind::Label => Cell::Number(v),
                    _ => Cell::Text(field.to_string()),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(TabularDataset {
        name: name.to_string(),
        columns,
        kinds,
        rows,
    })
}

/// Maps a raw label to a binary class. Written as `op:value` with
/// `op ∈ {lt, le, gt, ge, eq}`; `eq` compares text, the others numbers.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    Less(f64),
    LessEq(f64),
    Greater(f64),
    GreaterEq(f64),
    Equals(String),
}

impl LabelRule {
    pub fn apply(&self, cell: &Cell) -> Result<bool> {
        let number = || {
            cell.as_number()
                .ok_or_else(|| Error::Validation(format!("label {:?} is not numeric", cell.as_key())))
        };
        Ok(match self {
            LabelRule::Less(t) => number()? < *t,
            LabelRule::LessEq(t) => number()? <= *t,
            LabelRule::Greater(t) => number()? > *t,
            LabelRule::GreaterEq(t) => number()? >= *t,
            LabelRule::Equals(s) => match cell {
                Cell::Text(v) => v == s,
                Cell::Number(v) => s.parse::<f64>().is_ok_and(|t| t == *v),
            },
        })
    }
}

impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (op, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("label rule {s:?} should look like op:value")))?;
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("label rule {s:?} needs a numeric threshold")))
        };
        Ok(match op {
            "lt" => LabelRule::Less(num()?),
            "le" => LabelRule::LessEq(num()?),
            "gt" => LabelRule::Greater(num()?),
            "ge" => LabelRule::GreaterEq(num()?),
            "eq" => LabelRule::Equals(value.to_string()),
            _ => return Err(Error::Usage(format!("unknown label rule operator {op:?}"))),
        })
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelRule::Less(t) => write!(f, "lt:{t}"),
            LabelRule::LessEq(t) => write!(f, "le:{t}"),
            LabelRule::Greater(t) => write!(f, "gt:{t}"),
            LabelRule::GreaterEq(t) => write!(f, "ge:{t}"),
            LabelRule::Equals(s) => write!(f, "eq:{s}"),
        }
    }
}

impl Serialize for LabelRule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelRule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    pub label_rule: LabelRule,
}

fn default_test_fraction() -> f64 {
    1.0 / 3.0
}

impl PreprocessConfig {
    pub fn new(label_rule: LabelRule, split_seed: u64) -> Self {
        PreprocessConfig {
            test_fraction: default_test_fraction(),
            split_seed,
            label_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub train: GlmDataset,
    pub test: GlmDataset,
    pub feature_names: Vec<String>,
    /// Largest row norm over both splits.
    pub c: f64,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

enum Encoder {
    Numeric { col: usize, min: f64, max: f64 },
    OneHot { col: usize, levels: Vec<String> },
}

fn scale(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((v - min) / (max - min) - 0.5).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

impl Encoder {
    fn width(&self) -> usize {
        match self {
            Encoder::Numeric { .. } => 1,
            Encoder::OneHot { levels, .. } => levels.len(),
        }
    }

    fn encode(&self, row: &[Cell], out: &mut Vec<f64>) {
        match self {
            Encoder::Numeric { col, min, max } => {
                let v = row[*col].as_number().unwrap_or(f64::NAN);
                out.push(scale(v, *min, *max));
            }
            Encoder::OneHot { col, levels } => {
                let key = row[*col].as_key();
                match levels.iter().position(|l| *l == key) {
                    // a level always present in training is constant there, so it scales to 0
                    Some(hit) if levels.len() > 1 => {
                        out.extend((0..levels.len()).map(|i| if i == hit { 0.5 } else { -0.5 }))
                    }
                    _ => out.extend(std::iter::repeat_n(0.0, levels.len())),
                }
            }
        }
    }
}

/// One-hot encodes categoricals, min-max scales every feature to
/// `[-0.5, 0.5]` (fit on the training split) and normalizes each row to unit norm.
///
/// Test values outside the training range are clipped; a category not seen
/// in training encodes as an all-zero block; all-zero rows stay zero.
pub fn preprocess_glm(ds: &TabularDataset, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::Usage(format!("test fraction must lie in (0, 1), got {}", cfg.test_fraction)));
    }
    let label_col = ds
        .label_index()
        .ok_or_else(|| Error::Validation("dataset has no label column".into()))?;
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(cfg.split_seed));
    let n_test = (n as f64 * cfg.test_fraction).ceil() as usize;
    let mut test_rows = order[..n_test.min(n)].to_vec();
    let mut train_rows = order[n_test.min(n)..].to_vec();
    test_rows.sort_unstable();
    train_rows.sort_unstable();

    let mut encoders = Vec::new();
    let mut names = Vec::new();
    for (col, (kind, name)) in ds.kinds.iter().zip(&ds.columns).enumerate() {
        match kind {
            ColumnKind::Label => {}
            ColumnKind::Numeric => {
                let (min, max) = train_rows
                    .iter()
                    .filter_map(|&i| ds.rows[i][col].as_number())
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                names.push(name.clone());
                encoders.push(Encoder::Numeric { col, min, max });
            }
            ColumnKind::Categorical => {
                let levels: BTreeSet<String> = train_rows.iter().map(|&i| ds.rows[i][col].as_key()).collect();
                let levels: Vec<String> = levels.into_iter().collect();
                names.extend(levels.iter().map(|l| format!("{name}={l}")));
                encoders.push(Encoder::OneHot { col, levels });
            }
        }
    }
    let width: usize = encoders.iter().map(Encoder::width).sum();

    let build = |rows: &[usize]| -> Result<GlmDataset> {
        let mut features = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            let row = &ds.rows[i];
            let mut x = Vec::with_capacity(width);
            for e in &encoders {
                e.encode(row, &mut x);
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                x.iter_mut().for_each(|v| *v /= norm);
            }
            features.push(x);
            labels.push(if cfg.label_rule.apply(&row[label_col])? { 1.0 } else { 0.0 });
        }
        GlmDataset::new(features, labels)
    };
    let train = build(&train_rows)?;
    let test = build(&test_rows)?;
    let c = train.max_row_norm().max(test.max_row_norm());
    Ok(Preprocessed {
        train,
        test,
        feature_names: names,
        c,
        train_rows,
        test_rows,
    })
}

/// `n` Bernoulli(ρ) bits encoded as 0.0 / 1.0.
pub fn synth_bernoulli(n: usize, rho: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = RngStream::new(seed);
    synth_bernoulli_with(n, rho, &mut rng)
}

pub fn synth_bernoulli_with<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Usage(format!("proportion must lie in (0, 1), got {rho}")));
    }
    Ok((0..n).map(|_| if rng.random::<f64>() < rho { 1.0 } else { 0.0 }).collect())
}

/// Features uniform on the unit sphere, labels drawn from the link likelihood.
pub fn synth_glm(n: usize, d: usize, w_true: &[f64], link: Link, seed: u64) -> Result<GlmDataset> {
    if d == 0 || w_true.len() != d {
        return Err(Error::Usage(format!(
            "true weights have {} entries, expected d = {d} > 0",
            w_true.len()
        )));
    }
    let mut rng = RngStream::new(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while features.len() < n {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r == 0.0 {
            continue;
        }
        let x: Vec<f64> = v.iter().map(|x| x / r).collect();
        let z: f64 = x.iter().zip(w_true).map(|(a, b)| a * b).sum();
        labels.push(if rng.random::<f64>() < link.inverse(z) { 1.0 } else { 0.0 });
        features.push(x);
    }
    GlmDataset::new(features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abalone_schema() -> Schema {
        let mut m = BTreeMap::new();
        m.insert("sex".to_string(), ColumnKind::Categorical);
        for c in ["length", "diameter", "height", "whole", "shucked", "viscera", "shell"] {
            m.insert(c.to_string(), ColumnKind::Numeric);
        }
        m.insert("rings".to_string(), ColumnKind::Label);
        Schema(m)
    }

    fn abalone_like(n: usize) -> String {
        let mut s = String::from("sex,length,diameter,height,whole,shucked,viscera,shell,rings\n");
        let mut rng = RngStream::new(99);
        for _ in 0..n {
            let sex = ["M", "F", "I"][rng.random_range(0..3)];
            let nums: Vec<String> = (0..7).map(|_| format!("{:.3}", rng.random::<f64>())).collect();
            s.push_str(&format!("{sex},{},{}\n", nums.join(","), rng.random_range(1..25)));
        }
        s
    }

    #[test]
    fn reads_well_formed_rows() {
        let text = "a,b,y\n1,x,0\n2,y,1\n3,x,1\n";
        let schema = Schema::from_json(r#"{"a":"numeric","b":"categorical","y":"label"}"#).unwrap();
        let ds = read_csv(text.as_bytes(), &schema, "t").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rows[1][1], Cell::Text("y".into()));
    }

    #[test]
    fn missing_field_names_line() {
        let text = "a,b,y\n1,x,0\n2,1\n";
        let schema = Schema::from_json(r#"{"a":"numeric","b":"categorical","y":"label"}"#).unwrap();
        match read_csv(text.as_bytes(), &schema, "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_names_line() {
        let text = "a,y\n1,0\nfoo,1\n";
        let schema = Schema::from_json(r#"{"a":"numeric","y":"label"}"#).unwrap();
        assert!(matches!(read_csv(text.as_bytes(), &schema, "t"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = read_csv("".as_bytes(), &Schema::default(), "e").unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn schema_must_cover_columns() {
        let schema = Schema::from_json(r#"{"a":"numeric"}"#).unwrap();
        assert!(read_csv("a,b\n1,2\n".as_bytes(), &schema, "t").is_err());
    }

    #[test]
    fn preprocessing_contract() {
        let ds = read_csv(abalone_like(300).as_bytes(), &abalone_schema(), "abalone").unwrap();
        let cfg = PreprocessConfig::new("lt:10".parse().unwrap(), 4);
        let p = preprocess_glm(&ds, &cfg).unwrap();
        assert_eq!(p.test.len(), 100);
        assert_eq!(p.train.len(), 200);
        // 3 sex levels plus 7 numeric measurements
        assert_eq!(p.train.dim(), 10);
        for x in p.train.features.iter().chain(&p.test.features) {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let mut all: Vec<usize> = p.train_rows.iter().chain(&p.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        assert_eq!(p, preprocess_glm(&ds, &cfg).unwrap());
        for (&i, &y) in p.train_rows.iter().zip(&p.train.labels) {
            let rings = ds.rows[i][8].as_number().unwrap();
            assert_eq!(y == 1.0, rings < 10.0);
        }
    }

    #[test]
    fn unseen_category_and_clipping() {
        let text = "v,k,y\n0,a,1\n1,b,0\n2,a,1\n3,b,0\n10,c,1\n";
        let schema = Schema::from_json(r#"{"v":"numeric","k":"categorical","y":"label"}"#).unwrap();
        let ds = read_csv(text.as_bytes(), &schema, "t").unwrap();
        // find a split seed where the "c" row lands in test
        let (p, _) = (0..100)
            .map(|s| (preprocess_glm(&ds, &PreprocessConfig::new("eq:1".parse().unwrap(), s)).unwrap(), s))
            .find(|(p, _)| p.test_rows.contains(&4) && p.train.dim() == 3)
            .unwrap();
        let pos = p.test_rows.iter().position(|&i| i == 4).unwrap();
        let x = &p.test.features[pos];
        assert_eq!(&x[1..], &[0.0, 0.0]);
        assert!((x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_scales_to_zero() {
        let text = "v,w,y\n1,5,1\n2,5,0\n3,5,1\n4,5,0\n";
        let schema = Schema::from_json(r#"{"v":"numeric","w":"numeric","y":"label"}"#).unwrap();
        let ds = read_csv(text.as_bytes(), &schema, "t").unwrap();
        let p = preprocess_glm(&ds, &PreprocessConfig::new("eq:1".parse().unwrap(), 0)).unwrap();
        assert!(p.train.features.iter().all(|x| x[1] == 0.0));
    }

    #[test]
    fn label_rule_round_trip() {
        for s in ["lt:10", "ge:2.5", "eq:>50K"] {
            assert_eq!(s.parse::<LabelRule>().unwrap().to_string(), s);
        }
        assert!("zz:1".parse::<LabelRule>().is_err());
    }

    #[test]
    fn bernoulli_generator() {
        assert!(synth_bernoulli(10, 0.0, 1).is_err());
        assert!(synth_bernoulli(10, 1.0, 1).is_err());
        let bits = synth_bernoulli(100_000, 0.5, 7).unwrap();
        let mean = bits.iter().sum::<f64>() / bits.len() as f64;
        assert!((0.49..=0.51).contains(&mean));
        assert_eq!(synth_bernoulli(50, 0.3, 2).unwrap(), synth_bernoulli(50, 0.3, 2).unwrap());
    }

    #[test]
    fn glm_generator() {
        let w = vec![2.0, -1.0, 0.5];
        let ds = synth_glm(20_000, 3, &w, Link::Logistic, 5).unwrap();
        assert!(ds.features.iter().all(|x| (x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(ds, synth_glm(20_000, 3, &w, Link::Logistic, 5).unwrap());
        let expected: f64 = ds
            .features
            .iter()
            .map(|x| Link::Logistic.inverse(x.iter().zip(&w).map(|(a, b)| a * b).sum()))
            .sum::<f64>()
            / ds.len() as f64;
        let rate = ds.labels.iter().sum::<f64>() / ds.len() as f64;
        // binomial standard error is at most 0.5 / sqrt(n) ≈ 0.0035
        assert!((rate - expected).abs() < 0.015, "{rate} vs {expected}");
    }
}
