//! Annotation and score files.
//!
//! Annotations: one row per comment, `id` plus either a delimited `votes`
//! string (`1;0;1`, separators `;`, `|`, `,` or space) or per-annotator
//! columns `a_0, a_1, ...` (empty cells are skipped). An optional `text`
//! column is kept. JSONL rows carry `id`, `votes` (array or string) and
//! optionally `text`.
//!
//! Scores: `id, p_toxic[, p_nontoxic], d_hat[, bin_0..][, f_0..]` in CSV, or
//! JSONL objects with `id, p_toxic[, p_nontoxic], d_hat[, bin_probs][, features]`.
//!
//! Row numbers in errors count data records from 1 (the CSV header is not a
//! record).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::{build_labeled, filter_min_annotators, AnnotationRecord, DisagreementMethod, LabeledInstance};
use crate::error::{Error, Result};
use crate::types::{ClassProbs, RegOutput, ScoredInstance};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    /// `.jsonl` and `.ndjson` are JSONL, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FileFormat::Csv),
            "jsonl" | "ndjson" => Ok(FileFormat::Jsonl),
            other => Err(Error::Config(format!("unknown file format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    File,
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub source: DataSource,
    pub n: usize,
    pub annotation_method: DisagreementMethod,
    pub min_annotators: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_algorithm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// SHA-256 of the annotation file, or for multi-file datasets of the
    /// sorted `name:hash` lines in `files`.
    pub checksum: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, String>,
}

impl DatasetManifest {
    /// Combined checksum over per-file hashes.
    pub fn combined_checksum(files: &BTreeMap<String, String>) -> String {
        let joined: String = files.iter().map(|(k, v)| format!("{k}:{v}\n")).collect();
        sha256_hex(joined.as_bytes())
    }

    /// Checks the schema version and every listed file under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Version {
                found: self.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        for (name, expected) in &self.files {
            let actual = sha256_hex(&fs::read(dir.join(name))?);
            if &actual != expected {
                return Err(Error::Integrity(format!("{name}: checksum mismatch")));
            }
        }
        if !self.files.is_empty() && Self::combined_checksum(&self.files) != self.checksum {
            return Err(Error::Integrity("manifest checksum mismatch".into()));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Attaches a row number to row-level errors.
fn at_row(e: Error, row: usize) -> Error {
    match e {
        Error::Schema { reason, .. } => Error::Schema { row: Some(row), reason },
        Error::InvalidProbability { reason, .. } => Error::InvalidProbability { row: Some(row), reason },
        Error::DuplicateId { id, .. } => Error::DuplicateId { id, row: Some(row) },
        Error::Domain { value, reason } => Error::Schema {
            row: Some(row),
            reason: format!("value {value}: {reason}"),
        },
        other => other,
    }
}

fn parse_vote(token: &str, row: usize) -> Result<u8> {
    match token.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::schema(Some(row), format!("vote '{other}' is not 0 or 1"))),
    }
}

fn parse_vote_string(s: &str, row: usize) -> Result<Vec<u8>> {
    s.split([';', '|', ',', ' '])
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_vote(t, row))
        .collect()
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn csv_error(e: csv::Error, row: Option<usize>) -> Error {
    Error::Schema {
        row,
        reason: e.to_string(),
    }
}

fn parse_annotations_csv(bytes: &[u8]) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv_reader(bytes);
    let headers = rdr.headers().map_err(|e| csv_error(e, None))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| Error::schema(None, "missing 'id' column"))?;
    let text_col = col("text");
    let votes_col = col("votes");
    let annotator_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("a_"))
        .map(|(i, _)| i)
        .collect();
    if votes_col.is_none() && annotator_cols.is_empty() {
        return Err(Error::schema(None, "need a 'votes' column or per-annotator 'a_*' columns"));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(e, Some(row)))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::schema(Some(row), "empty id"));
        }
        let votes = match votes_col {
            Some(c) => parse_vote_string(field(c), row)?,
            None => annotator_cols
                .iter()
                .map(|c| field(*c))
                .filter(|v| !v.is_empty())
                .map(|v| parse_vote(v, row))
                .collect::<Result<Vec<u8>>>()?,
        };
        let mut r = AnnotationRecord::new(id, votes);
        r.text = text_col.map(|c| field(c).to_string()).filter(|t| !t.is_empty());
        out.push(r);
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VotesRepr {
    List(Vec<serde_json::Value>),
    Text(String),
}

#[derive(Deserialize)]
struct AnnotationLine {
    id: String,
    votes: VotesRepr,
    #[serde(default)]
    text: Option<String>,
}

/// Non-blank lines of a JSONL file with their 1-based row numbers.
fn jsonl_lines(bytes: &[u8]) -> Result<Vec<(usize, &str)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::schema(None, format!("not UTF-8: {e}")))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect())
}

fn parse_annotations_jsonl(bytes: &[u8]) -> Result<Vec<AnnotationRecord>> {
    jsonl_lines(bytes)?
        .into_iter()
        .map(|(row, line)| {
            let l: AnnotationLine =
                serde_json::from_str(line).map_err(|e| Error::schema(Some(row), e.to_string()))?;
            let votes = match l.votes {
                VotesRepr::Text(s) => parse_vote_string(&s, row)?,
                VotesRepr::List(v) => v
                    .iter()
                    .map(|x| parse_vote(&x.to_string(), row))
                    .collect::<Result<Vec<u8>>>()?,
            };
            let mut r = AnnotationRecord::new(l.id, votes);
            r.text = l.text;
            Ok(r)
        })
        .collect()
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                row: Some(i + 1),
            });
        }
    }
    Ok(())
}

/// Parses an annotation file without filtering.
pub fn read_annotations(path: &Path, format: Option<FileFormat>) -> Result<Vec<AnnotationRecord>> {
    let bytes = fs::read(path)?;
    parse_annotations(&bytes, format.unwrap_or_else(|| FileFormat::from_path(path)))
}

fn parse_annotations(bytes: &[u8], format: FileFormat) -> Result<Vec<AnnotationRecord>> {
    let records = match format {
        FileFormat::Csv => parse_annotations_csv(bytes)?,
        FileFormat::Jsonl => parse_annotations_jsonl(bytes)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_unique(records.iter().map(|r| r.id.as_str()))?;
    Ok(records)
}

/// Parses, validates and labels an annotation file, keeping comments with at
/// least `min_annotators` votes.
pub fn ingest_annotations(
    path: &Path,
    format: Option<FileFormat>,
    min_annotators: usize,
    method: DisagreementMethod,
) -> Result<(Vec<LabeledInstance>, DatasetManifest)> {
    let bytes = fs::read(path)?;
    let records = parse_annotations(&bytes, format.unwrap_or_else(|| FileFormat::from_path(path)))?;
    let labeled = filter_min_annotators(records, min_annotators)
        .iter()
        .map(|r| build_labeled(r, method))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        source: DataSource::File,
        n: labeled.len(),
        annotation_method: method,
        min_annotators,
        rng_algorithm: None,
        seed: None,
        checksum: sha256_hex(&bytes),
        files: BTreeMap::new(),
    };
    Ok((labeled, manifest))
}

/// Indices of `prefix{i}` columns ordered by `i`; the indices must be 0..k.
fn indexed_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut cols: Vec<(usize, usize)> = Vec::new();
    for (pos, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(prefix) {
            let idx: usize = rest
                .parse()
                .map_err(|_| Error::schema(None, format!("bad column name '{h}'")))?;
            cols.push((idx, pos));
        }
    }
    cols.sort();
    if cols.iter().enumerate().any(|(i, (idx, _))| *idx != i) {
        return Err(Error::schema(None, format!("'{prefix}*' columns must be numbered from 0 without gaps")));
    }
    Ok(cols.into_iter().map(|(_, pos)| pos).collect())
}

fn parse_f64(s: &str, name: &str, row: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::schema(Some(row), format!("{name} '{s}' is not a number")))
}

fn scored(id: String, p_toxic: f64, p_nontoxic: Option<f64>, reg: RegOutput) -> Result<ScoredInstance> {
    let probs = match p_nontoxic {
        Some(pn) => ClassProbs::new(p_toxic, pn)?,
        None => ClassProbs::from_toxic(p_toxic)?,
    };
    reg.validate()?;
    Ok(ScoredInstance { id, probs, reg })
}

fn parse_scores_csv(bytes: &[u8]) -> Result<Vec<ScoredInstance>> {
    let mut rdr = csv_reader(bytes);
    let headers = rdr.headers().map_err(|e| csv_error(e, None))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::schema(None, format!("missing '{name}' column")));
    let (id_col, pt_col, dh_col) = (need("id")?, need("p_toxic")?, need("d_hat")?);
    let pn_col = col("p_nontoxic");
    let bin_cols = indexed_columns(&headers, "bin_")?;
    let feat_cols = indexed_columns(&headers, "f_")?;
    let known = 3 + usize::from(pn_col.is_some()) + bin_cols.len() + feat_cols.len();
    if headers.len() != known {
        let unknown: Vec<&str> = headers
            .iter()
            .filter(|h| {
                !["id", "p_toxic", "p_nontoxic", "d_hat"].contains(h) && !h.starts_with("bin_") && !h.starts_with("f_")
            })
            .collect();
        return Err(Error::schema(None, format!("unknown columns {unknown:?}")));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_error(e, Some(row)))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| parse_f64(field(c), &headers[c], row);
        let vec_of = |cols: &[usize]| -> Result<Option<Vec<f64>>> {
            if cols.is_empty() {
                Ok(None)
            } else {
                cols.iter().map(|c| num(*c)).collect::<Result<Vec<_>>>().map(Some)
            }
        };
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::schema(Some(row), "empty id"));
        }
        let reg = RegOutput {
            d_hat: num(dh_col)?,
            bin_probs: vec_of(&bin_cols)?,
            features: vec_of(&feat_cols)?,
        };
        let pn = match pn_col {
            Some(c) if !field(c).is_empty() => Some(num(c)?),
            _ => None,
        };
        out.push(scored(id, num(pt_col)?, pn, reg).map_err(|e| at_row(e, row))?);
    }
    Ok(out)
}

/// One JSONL score row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub id: String,
    pub p_toxic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_nontoxic: Option<f64>,
    pub d_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl ScoreLine {
    /// Validates the row into a [`ScoredInstance`].
    pub fn into_scored(self) -> Result<ScoredInstance> {
        let reg = RegOutput {
            d_hat: self.d_hat,
            bin_probs: self.bin_probs,
            features: self.features,
        };
        scored(self.id, self.p_toxic, self.p_nontoxic, reg)
    }

    /// Like [`ScoreLine::into_scored`], with errors pointing at a 1-based position.
    pub fn into_scored_at(self, row: usize) -> Result<ScoredInstance> {
        self.into_scored().map_err(|e| at_row(e, row))
    }
}

impl From<&ScoredInstance> for ScoreLine {
    fn from(s: &ScoredInstance) -> Self {
        ScoreLine {
            id: s.id.clone(),
            p_toxic: s.probs.p_toxic,
            p_nontoxic: Some(s.probs.p_nontoxic),
            d_hat: s.reg.d_hat,
            bin_probs: s.reg.bin_probs.clone(),
            features: s.reg.features.clone(),
        }
    }
}

fn parse_scores_jsonl(bytes: &[u8]) -> Result<Vec<ScoredInstance>> {
    jsonl_lines(bytes)?
        .into_iter()
        .map(|(row, line)| {
            let l: ScoreLine = serde_json::from_str(line).map_err(|e| Error::schema(Some(row), e.to_string()))?;
            l.into_scored_at(row)
        })
        .collect()
}

/// Parses and validates a score file.
pub fn ingest_scores(path: &Path, format: Option<FileFormat>) -> Result<Vec<ScoredInstance>> {
    let bytes = fs::read(path)?;
    let out = match format.unwrap_or_else(|| FileFormat::from_path(path)) {
        FileFormat::Csv => parse_scores_csv(&bytes)?,
        FileFormat::Jsonl => parse_scores_jsonl(&bytes)?,
    };
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_unique(out.iter().map(|s| s.id.as_str()))?;
    Ok(out)
}

fn write_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes annotations as `id,votes,text` with `;`-separated votes.
pub fn write_annotations_csv(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(write_err)?;
    w.write_record(["id", "votes", "text"]).map_err(write_err)?;
    for r in records {
        let votes: Vec<String> = r.votes.iter().map(u8::to_string).collect();
        w.write_record([r.id.as_str(), &votes.join(";"), r.text.as_deref().unwrap_or("")])
            .map_err(write_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes scores as CSV. Only `p_toxic` is stored; the complement is
/// restored on reading. Every row must share the bin and feature layout.
pub fn write_scores_csv(path: &Path, scores: &[ScoredInstance]) -> Result<()> {
    let Some(first) = scores.first() else {
        return Err(Error::EmptyDataset);
    };
    let n_bins = first.reg.bin_probs.as_ref().map_or(0, Vec::len);
    let n_feat = first.reg.features.as_ref().map_or(0, Vec::len);
    let mut header: Vec<String> = ["id", "p_toxic", "d_hat"].iter().map(|s| s.to_string()).collect();
    header.extend((0..n_bins).map(|i| format!("bin_{i}")));
    header.extend((0..n_feat).map(|i| format!("f_{i}")));

    let mut w = csv::Writer::from_path(path).map_err(write_err)?;
    w.write_record(&header).map_err(write_err)?;
    for (i, s) in scores.iter().enumerate() {
        let bins = s.reg.bin_probs.as_deref().unwrap_or(&[]);
        let feats = s.reg.features.as_deref().unwrap_or(&[]);
        if bins.len() != n_bins || feats.len() != n_feat {
            return Err(Error::schema(Some(i + 1), "bin or feature count differs from the first row"));
        }
        let mut rec = vec![s.id.clone(), s.probs.p_toxic.to_string(), s.reg.d_hat.to_string()];
        rec.extend(bins.iter().chain(feats).map(f64::to_string));
        w.write_record(&rec).map_err(write_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(name: &str, body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        (dir, path)
    }

    fn votes(n_toxic: usize, n: usize) -> String {
        (0..n).map(|i| if i < n_toxic { "1" } else { "0" }).collect::<Vec<_>>().join(";")
    }

    #[test]
    fn filters_by_annotator_count() {
        let body = format!("id,votes\na,{}\nb,{}\nc,{}\n", votes(1, 3), votes(4, 10), votes(6, 12));
        let (_d, p) = file("a.csv", &body);
        let (items, manifest) = ingest_annotations(&p, None, 10, DisagreementMethod::Distance).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(manifest.n, 2);
        assert_eq!(manifest.checksum, sha256_hex(body.as_bytes()));
    }

    #[test]
    fn per_annotator_columns_and_jsonl() {
        let (_d, p) = file("a.csv", "id,a_0,a_1,a_2,text\nx,1,1,,hello\ny,0,1,0,\n");
        let recs = read_annotations(&p, None).unwrap();
        assert_eq!(recs[0].votes, vec![1, 1]);
        assert_eq!(recs[0].text.as_deref(), Some("hello"));
        assert_eq!(recs[1].votes, vec![0, 1, 0]);

        let (_d, p) = file("a.jsonl", "{\"id\":\"x\",\"votes\":[1,0,1]}\n\n{\"id\":\"y\",\"votes\":\"0|0\"}\n");
        let recs = read_annotations(&p, None).unwrap();
        assert_eq!(recs[0].votes, vec![1, 0, 1]);
        assert_eq!(recs[1].votes, vec![0, 0]);
    }

    #[test]
    fn annotation_errors() {
        let (_d, p) = file("a.csv", "id,votes\na,1;0\nb,1;2\n");
        assert_eq!(
            read_annotations(&p, None).unwrap_err(),
            Error::schema(Some(2), "vote '2' is not 0 or 1")
        );
        let (_d, p) = file("a.csv", "id,votes\n");
        assert_eq!(read_annotations(&p, None).unwrap_err(), Error::EmptyDataset);
        let (_d, p) = file("a.csv", "");
        assert!(read_annotations(&p, None).is_err());
        let (_d, p) = file("a.csv", "id,votes\na,1\na,0\n");
        assert!(matches!(
            read_annotations(&p, None),
            Err(Error::DuplicateId { row: Some(2), .. })
        ));
    }

    #[test]
    fn score_rows() {
        let (_d, p) = file("s.csv", "id,p_toxic,d_hat\na,0.7,0.2\n");
        let s = ingest_scores(&p, None).unwrap();
        assert_eq!(s[0].probs, ClassProbs { p_toxic: 0.7, p_nontoxic: 1.0 - 0.7 });

        let bins: Vec<String> = (0..20).map(|i| format!("bin_{i}")).collect();
        let vals = vec!["0.05"; 20].join(",");
        let (_d, p) = file("s.csv", &format!("id,p_toxic,d_hat,{}\na,0.4,0.5,{vals}\n", bins.join(",")));
        let s = ingest_scores(&p, None).unwrap();
        assert_eq!(s[0].reg.bin_probs.as_ref().unwrap().len(), 20);

        let vals = vec!["0.04"; 20].join(",");
        let (_d, p) = file("s.csv", &format!("id,p_toxic,d_hat,{}\na,0.4,0.5,{vals}\n", bins.join(",")));
        assert!(matches!(
            ingest_scores(&p, None),
            Err(Error::InvalidProbability { row: Some(1), .. })
        ));

        let (_d, p) = file("s.csv", "id,p_toxic,p_nontoxic,d_hat\na,0.7,0.5,0.2\n");
        assert!(matches!(ingest_scores(&p, None), Err(Error::InvalidProbability { .. })));
        let (_d, p) = file("s.csv", "id,p_toxic,d_hat\na,0.7,1.2\n");
        assert!(matches!(ingest_scores(&p, None), Err(Error::Schema { row: Some(1), .. })));
        let (_d, p) = file("s.csv", "id,p_toxic,d_hat,extra\na,0.7,0.2,1\n");
        assert!(matches!(ingest_scores(&p, None), Err(Error::Schema { row: None, .. })));
    }

    #[test]
    fn scores_round_trip_csv_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let s = vec![
            ScoredInstance {
                id: "a".into(),
                probs: ClassProbs::from_toxic(0.1 + 0.2).unwrap(),
                reg: RegOutput {
                    d_hat: 1.0 / 3.0,
                    bin_probs: Some(vec![0.25, 0.75]),
                    features: Some(vec![std::f64::consts::PI, -1e-300]),
                },
            },
            ScoredInstance {
                id: "b".into(),
                probs: ClassProbs::from_toxic(0.9).unwrap(),
                reg: RegOutput {
                    d_hat: 0.0,
                    bin_probs: Some(vec![1.0, 0.0]),
                    features: Some(vec![0.5, 0.5]),
                },
            },
        ];
        let p = dir.path().join("s.csv");
        write_scores_csv(&p, &s).unwrap();
        assert_eq!(ingest_scores(&p, None).unwrap(), s);

        let lines: Vec<String> = s
            .iter()
            .map(|x| {
                serde_json::to_string(&ScoreLine {
                    id: x.id.clone(),
                    p_toxic: x.probs.p_toxic,
                    p_nontoxic: None,
                    d_hat: x.reg.d_hat,
                    bin_probs: x.reg.bin_probs.clone(),
                    features: x.reg.features.clone(),
                })
                .unwrap()
            })
            .collect();
        let pj = dir.path().join("s.jsonl");
        fs::write(&pj, lines.join("\n")).unwrap();
        assert_eq!(ingest_scores(&pj, None).unwrap(), s);
    }

    #[test]
    fn manifest_verification() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.csv"), "id,votes\n").unwrap();
        let mut files = BTreeMap::new();
        files.insert("x.csv".to_string(), sha256_hex(b"id,votes\n"));
        let mut m = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            source: DataSource::Simulator,
            n: 0,
            annotation_method: DisagreementMethod::Distance,
            min_annotators: 10,
            rng_algorithm: Some("chacha8".into()),
            seed: Some(1),
            checksum: DatasetManifest::combined_checksum(&files),
            files,
        };
        m.verify(dir.path()).unwrap();
        fs::write(dir.path().join("x.csv"), "id,votes\na,1\n").unwrap();
        assert!(matches!(m.verify(dir.path()), Err(Error::Integrity(_))));
        m.schema_version = 0;
        assert_eq!(m.verify(dir.path()).unwrap_err(), Error::Version { found: 0, expected: 1 });
    }
}
