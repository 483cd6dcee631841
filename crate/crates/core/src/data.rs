//! Categorical survey data: ingest, validation and the group-by-response
//! frequency matrix.
//!
//! Responses are stored as 0-based category indices in a row-major
//! `N × J` buffer. A response that is missing under the
//! drop-from-likelihood policy is stored as [`MISSING`]; under the
//! own-category policy the missing code is simply the last category of the
//! question and never appears as [`MISSING`].

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for a response that contributes no likelihood factor.
pub const MISSING: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    DropFromLikelihood,
    #[default]
    OwnCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMeta {
    pub name: String,
    /// Ordered category labels. Under [`MissingPolicy::OwnCategory`] the last
    /// entry is the missing code.
    pub category_labels: Vec<String>,
    pub missing_policy: MissingPolicy,
}

impl QuestionMeta {
    pub fn n_categories(&self) -> usize {
        self.category_labels.len()
    }
}

fn default_missing_code() -> String {
    "NA".to_string()
}

fn default_id_column() -> String {
    "id".to_string()
}

/// One question as declared in an ingest schema. `categories` lists the
/// substantive codes only, in the order that defines category indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSchema {
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

/// JSON document describing how to read a survey CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSchema {
    pub mode: Mode,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    pub label_column: String,
    /// Ordered label values. When absent, labels must be the integers `1..=G`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_values: Option<Vec<String>>,
    #[serde(default = "default_missing_code")]
    pub missing_code: String,
    pub questions: Vec<QuestionSchema>,
}

impl IngestSchema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(file)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// An immutable, validated survey.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    ids: Vec<String>,
    questions: Vec<QuestionMeta>,
    responses: Vec<u32>,
    labels: Vec<usize>,
    label_values: Vec<String>,
    mode: Mode,
    id_column: String,
    label_column: String,
    missing_code: String,
}

impl SurveyDataset {
    /// Builds a dataset from 0-based indices and checks every invariant.
    ///
    /// `responses` is row-major `N × J`; `labels[i]` is the 0-based group
    /// (static) or period (dynamic) of respondent `i`, and the number of
    /// groups is `label_values.len()`.
    pub fn new(
        ids: Vec<String>,
        questions: Vec<QuestionMeta>,
        responses: Vec<u32>,
        labels: Vec<usize>,
        label_values: Vec<String>,
        mode: Mode,
    ) -> Result<Self> {
        let n = labels.len();
        let n_questions = questions.len();
        if ids.len() != n {
            return Err(Error::InvalidData(format!(
                "{} ids for {} respondents",
                ids.len(),
                n
            )));
        }
        if responses.len() != n * n_questions {
            return Err(Error::InvalidData(format!(
                "response buffer has {} entries, expected {} x {}",
                responses.len(),
                n,
                n_questions
            )));
        }
        if n_questions == 0 {
            return Err(Error::InvalidData("no questions".into()));
        }
        for q in &questions {
            if q.n_categories() < 2 {
                return Err(Error::InvalidData(format!(
                    "question '{}' has {} categories, need at least 2",
                    q.name,
                    q.n_categories()
                )));
            }
        }
        let n_groups = label_values.len();
        let mut group_sizes = vec![0usize; n_groups];
        for (i, &g) in labels.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::InvalidData(format!(
                    "respondent {i} has label index {g}, only {n_groups} labels declared"
                )));
            }
            group_sizes[g] += 1;
        }
        // An empty dataset is allowed (prior-only runs). Otherwise every group
        // must be populated; periods may be empty since the random walk
        // carries the logits across them.
        if n > 0 && mode == Mode::Static {
            if let Some(g) = group_sizes.iter().position(|&c| c == 0) {
                return Err(Error::InvalidData(format!(
                    "label '{}' has no respondents",
                    label_values[g]
                )));
            }
        }
        for (i, row) in responses.chunks(n_questions.max(1)).enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let q = &questions[j];
                if x == MISSING {
                    if q.missing_policy == MissingPolicy::OwnCategory {
                        return Err(Error::InvalidData(format!(
                            "respondent {i}, question '{}': missing sentinel under own-category policy",
                            q.name
                        )));
                    }
                } else if x as usize >= q.n_categories() {
                    return Err(Error::InvalidData(format!(
                        "respondent {i}, question '{}': category {} out of range",
                        q.name, x
                    )));
                }
            }
        }
        Ok(Self {
            ids,
            questions,
            responses,
            labels,
            label_values,
            mode,
            id_column: default_id_column(),
            label_column: "label".to_string(),
            missing_code: default_missing_code(),
        })
    }

    pub fn with_column_names(mut self, id_column: &str, label_column: &str) -> Self {
        self.id_column = id_column.to_string();
        self.label_column = label_column.to_string();
        self
    }

    pub fn with_missing_code(mut self, code: &str) -> Self {
        self.missing_code = code.to_string();
        self
    }

    pub fn n_respondents(&self) -> usize {
        self.labels.len()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    /// Number of groups (static) or periods (dynamic).
    pub fn n_labels(&self) -> usize {
        self.label_values.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn questions(&self) -> &[QuestionMeta] {
        &self.questions
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_values(&self) -> &[String] {
        &self.label_values
    }

    pub fn missing_code(&self) -> &str {
        &self.missing_code
    }

    /// Category counts `L_j` per question.
    pub fn category_counts(&self) -> Vec<usize> {
        self.questions.iter().map(QuestionMeta::n_categories).collect()
    }

    /// `L = Σ_j L_j`.
    pub fn total_categories(&self) -> usize {
        self.questions.iter().map(QuestionMeta::n_categories).sum()
    }

    /// Responses of respondent `i`, one entry per question.
    pub fn row(&self, i: usize) -> &[u32] {
        let j = self.n_questions();
        &self.responses[i * j..(i + 1) * j]
    }

    pub fn response(&self, i: usize, j: usize) -> Option<usize> {
        let x = self.responses[i * self.n_questions() + j];
        (x != MISSING).then_some(x as usize)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.responses.chunks(self.n_questions())
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_labels()];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    /// Non-missing response counts per question.
    pub fn answered_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_questions()];
        for row in self.rows() {
            for (c, &x) in counts.iter_mut().zip(row) {
                if x != MISSING {
                    *c += 1;
                }
            }
        }
        counts
    }

    /// The schema that reproduces this dataset through [`load_csv`].
    pub fn schema(&self) -> IngestSchema {
        let questions = self
            .questions
            .iter()
            .map(|q| {
                let substantive = match q.missing_policy {
                    MissingPolicy::OwnCategory => q.n_categories() - 1,
                    MissingPolicy::DropFromLikelihood => q.n_categories(),
                };
                QuestionSchema {
                    name: q.name.clone(),
                    categories: q.category_labels[..substantive].to_vec(),
                    missing_policy: q.missing_policy,
                }
            })
            .collect();
        IngestSchema {
            mode: self.mode,
            id_column: self.id_column.clone(),
            label_column: self.label_column.clone(),
            label_values: Some(self.label_values.clone()),
            missing_code: self.missing_code.clone(),
            questions,
        }
    }

    /// A copy restricted to the given respondents, in the given order.
    pub fn select_respondents(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut responses = Vec::with_capacity(indices.len() * self.n_questions());
        for &i in indices {
            ids.push(self.ids[i].clone());
            labels.push(self.labels[i]);
            responses.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(
            ids,
            self.questions.clone(),
            responses,
            labels,
            self.label_values.clone(),
            self.mode,
        )?;
        out.id_column.clone_from(&self.id_column);
        out.label_column.clone_from(&self.label_column);
        out.missing_code.clone_from(&self.missing_code);
        Ok(out)
    }
}

/// Reads a survey CSV according to `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<SurveyDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &IngestSchema) -> Result<SurveyDataset> {
    if schema.questions.is_empty() {
        return Err(Error::Schema("schema declares no questions".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let id_col = find(&schema.id_column)?;
    let label_col = find(&schema.label_column)?;

    let mut questions = Vec::with_capacity(schema.questions.len());
    let mut question_cols = Vec::with_capacity(schema.questions.len());
    let mut code_maps: Vec<HashMap<&str, u32>> = Vec::with_capacity(schema.questions.len());
    for q in &schema.questions {
        question_cols.push(find(&q.name)?);
        let mut labels = q.categories.clone();
        if q.missing_policy == MissingPolicy::OwnCategory {
            labels.push(schema.missing_code.clone());
        }
        let mut map = HashMap::new();
        for (v, code) in q.categories.iter().enumerate() {
            if code == &schema.missing_code {
                return Err(Error::Schema(format!(
                    "question '{}' lists the missing code '{}' as a category",
                    q.name, schema.missing_code
                )));
            }
            if map.insert(code.as_str(), v as u32).is_some() {
                return Err(Error::Schema(format!(
                    "question '{}' lists category '{}' twice",
                    q.name, code
                )));
            }
        }
        code_maps.push(map);
        questions.push(QuestionMeta {
            name: q.name.clone(),
            category_labels: labels,
            missing_policy: q.missing_policy,
        });
    }

    let label_map: Option<HashMap<&str, usize>> = schema
        .label_values
        .as_ref()
        .map(|vals| vals.iter().enumerate().map(|(g, v)| (v.as_str(), g)).collect());

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut responses = Vec::new();
    let mut max_label = 0usize;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row number, header excluded
        let row = r + 1;
        ids.push(record.get(id_col).unwrap_or_default().to_string());
        let raw_label = record.get(label_col).unwrap_or_default();
        let g = match &label_map {
            Some(map) => *map.get(raw_label).ok_or_else(|| Error::InvalidValue {
                row,
                column: schema.label_column.clone(),
                message: format!("label '{raw_label}' is not declared in the schema"),
            })?,
            None => {
                let v: usize = raw_label.parse().map_err(|_| Error::InvalidValue {
                    row,
                    column: schema.label_column.clone(),
                    message: format!("label '{raw_label}' is not a positive integer"),
                })?;
                if v == 0 {
                    return Err(Error::InvalidValue {
                        row,
                        column: schema.label_column.clone(),
                        message: "labels are 1-based".into(),
                    });
                }
                max_label = max_label.max(v);
                v - 1
            }
        };
        labels.push(g);
        for (j, q) in schema.questions.iter().enumerate() {
            let raw = record.get(question_cols[j]).unwrap_or_default();
            let x = if raw == schema.missing_code {
                match q.missing_policy {
                    MissingPolicy::OwnCategory => q.categories.len() as u32,
                    MissingPolicy::DropFromLikelihood => MISSING,
                }
            } else {
                *code_maps[j].get(raw).ok_or_else(|| Error::InvalidValue {
                    row,
                    column: q.name.clone(),
                    message: format!("value '{raw}' is not a declared category"),
                })?
            };
            responses.push(x);
        }
    }

    let label_values = match &schema.label_values {
        Some(v) => v.clone(),
        None => (1..=max_label).map(|g| g.to_string()).collect(),
    };

    let n_questions = questions.len();
    for (j, q) in questions.iter().enumerate() {
        let mut seen = vec![false; q.n_categories()];
        for row in responses.chunks(n_questions) {
            if row[j] != MISSING {
                seen[row[j] as usize] = true;
            }
        }
        let observed = seen.iter().filter(|&&s| s).count();
        if observed < 2 {
            return Err(Error::InvalidData(format!(
                "question '{}' has {observed} observed categories, need at least 2",
                q.name
            )));
        }
    }

    Ok(SurveyDataset::new(ids, questions, responses, labels, label_values, schema.mode)?
        .with_column_names(&schema.id_column, &schema.label_column)
        .with_missing_code(&schema.missing_code))
}

/// Writes the dataset back in the CSV layout [`load_csv`] reads, using the
/// original category labels.
pub fn write_csv(data: &SurveyDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(data, file)
}

pub fn write_csv_to<W: std::io::Write>(data: &SurveyDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![data.id_column.as_str(), data.label_column.as_str()];
    header.extend(data.questions.iter().map(|q| q.name.as_str()));
    wtr.write_record(&header)?;
    for i in 0..data.n_respondents() {
        let mut record: Vec<&str> = Vec::with_capacity(header.len());
        record.push(&data.ids[i]);
        record.push(&data.label_values[data.labels[i]]);
        for (q, &x) in data.questions.iter().zip(data.row(i)) {
            if x == MISSING {
                record.push(&data.missing_code);
            } else {
                record.push(&q.category_labels[x as usize]);
            }
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `G × L` contingency table of response counts by group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMatrix {
    counts: Vec<Vec<u64>>,
    offsets: Vec<usize>,
}

impl FrequencyMatrix {
    /// Wraps a raw count table; `offsets[j]` is the first column of question `j`.
    pub fn from_counts(counts: Vec<Vec<u64>>, offsets: Vec<usize>) -> Self {
        Self { counts, offsets }
    }

    pub fn n_rows(&self) -> usize {
        self.counts.len()
    }

    pub fn n_cols(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Column of question `j`, category `v` (both 0-based).
    pub fn column(&self, j: usize, v: usize) -> usize {
        self.offsets[j] + v
    }

    pub fn get(&self, g: usize, j: usize, v: usize) -> u64 {
        self.counts[g][self.column(j, v)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn as_f64_rows(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| r.iter().map(|&c| c as f64).collect())
            .collect()
    }
}

pub fn frequency_matrix(data: &SurveyDataset) -> FrequencyMatrix {
    let mut offsets = Vec::with_capacity(data.n_questions());
    let mut acc = 0;
    for q in data.questions() {
        offsets.push(acc);
        acc += q.n_categories();
    }
    let mut counts = vec![vec![0u64; acc]; data.n_labels()];
    for (row, &g) in data.rows().zip(data.labels()) {
        for (j, &x) in row.iter().enumerate() {
            if x != MISSING {
                counts[g][offsets[j] + x as usize] += 1;
            }
        }
    }
    FrequencyMatrix { counts, offsets }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareResponse {
    pub question: String,
    /// 0-based category index.
    pub category: usize,
    pub label: String,
    pub frequency: f64,
}

/// Every (question, category) whose share of the question's non-missing
/// responses falls below `threshold`. A threshold of 1 lists everything.
pub fn rare_response_report(data: &SurveyDataset, threshold: f64) -> Result<Vec<RareResponse>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rare-response threshold {threshold} outside (0, 1]"
        )));
    }
    let mut counts: Vec<Vec<u64>> = data
        .questions()
        .iter()
        .map(|q| vec![0; q.n_categories()])
        .collect();
    for row in data.rows() {
        for (j, &x) in row.iter().enumerate() {
            if x != MISSING {
                counts[j][x as usize] += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (q, c) in data.questions().iter().zip(&counts) {
        let answered: u64 = c.iter().sum();
        for (v, &n) in c.iter().enumerate() {
            let frequency = if answered == 0 { 0.0 } else { n as f64 / answered as f64 };
            if frequency < threshold || threshold >= 1.0 {
                out.push(RareResponse {
                    question: q.name.clone(),
                    category: v,
                    label: q.category_labels[v].clone(),
                    frequency,
                });
            }
        }
    }
    Ok(out)
}
