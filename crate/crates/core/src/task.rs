//! Tasks, labeled examples, datasets, and prompt rendering.
//!
//! A task config names its labels, the surface string (verbalizer) each label
//! takes in a prompt, and a template with `{field}` placeholders ending in the
//! `{label}` answer slot. Data files are JSONL or CSV with a `label` column.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Name of the answer slot placeholder in templates.
pub const ANSWER_SLOT: &str = "label";

/// Normalized form used to compare verbalizers with model tokens.
pub fn normalize_surface(s: &str) -> String {
    s.trim_start().to_lowercase()
}

/// Ordered label identifiers and their prompt surface strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSetRepr", into = "LabelSetRepr")]
pub struct LabelSet {
    labels: Vec<String>,
    verbalizers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LabelSetRepr {
    labels: Vec<String>,
    verbalizers: BTreeMap<String, String>,
}

impl TryFrom<LabelSetRepr> for LabelSet {
    type Error = Error;

    fn try_from(repr: LabelSetRepr) -> Result<Self> {
        LabelSet::new(repr.labels, &repr.verbalizers)
    }
}

impl From<LabelSet> for LabelSetRepr {
    fn from(set: LabelSet) -> Self {
        let verbalizers = set
            .labels
            .iter()
            .cloned()
            .zip(set.verbalizers.iter().cloned())
            .collect();
        LabelSetRepr {
            labels: set.labels,
            verbalizers,
        }
    }
}

impl LabelSet {
    pub fn new(labels: Vec<String>, verbalizers: &BTreeMap<String, String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "a label set needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::Config("empty label identifier".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Config(format!("duplicate label '{label}'")));
            }
        }
        for key in verbalizers.keys() {
            if !seen.contains(key.as_str()) {
                return Err(Error::Config(format!(
                    "verbalizer given for undeclared label '{key}'"
                )));
            }
        }
        let mut surfaces = Vec::with_capacity(labels.len());
        for label in &labels {
            let v = verbalizers
                .get(label)
                .ok_or_else(|| Error::Config(format!("label '{label}' has no verbalizer")))?;
            if v.trim().is_empty() {
                return Err(Error::Config(format!("label '{label}' has an empty verbalizer")));
            }
            if v.trim().contains(char::is_whitespace) {
                log::warn!(
                    "verbalizer '{v}' for label '{label}' looks multi-token; \
                     only its first token is scored"
                );
            }
            surfaces.push(v.clone());
        }
        let normalized: Vec<String> = surfaces.iter().map(|s| normalize_surface(s)).collect();
        for (i, a) in normalized.iter().enumerate() {
            for (j, b) in normalized.iter().enumerate() {
                if i != j && b.starts_with(a.as_str()) {
                    return Err(Error::Config(format!(
                        "verbalizer '{}' is a prefix of '{}' after normalization",
                        surfaces[i], surfaces[j]
                    )));
                }
            }
        }
        Ok(Self {
            labels,
            verbalizers: surfaces,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn verbalizer(&self, label: &str) -> Option<&str> {
        self.index_of(label).map(|i| self.verbalizers[i].as_str())
    }

    /// Verbalizers in label order.
    pub fn verbalizers(&self) -> &[String] {
        &self.verbalizers
    }

    /// SHA-256 over the ordered (label, verbalizer) pairs.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (label, verb) in self.labels.iter().zip(&self.verbalizers) {
            hasher.update(label.as_bytes());
            hasher.update([0u8]);
            hasher.update(verb.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// One labeled instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub fields: BTreeMap<String, String>,
    pub label: String,
}

/// Input fields of a query, without a label.
pub type Fields = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetRole {
    TrainPool,
    Validation,
    Test,
}

impl fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetRole::TrainPool => "train-pool",
            DatasetRole::Validation => "validation",
            DatasetRole::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guess the format from a file extension; anything but `.csv` reads as JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// An ordered, non-empty collection of examples with unique ascending ids.
///
/// Loaded datasets carry ids `0..N`; subsamples keep the ids of their source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub role: DatasetRole,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(role: DatasetRole, examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config(format!("{role} dataset is empty")));
        }
        if examples.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::Config(format!(
                "{role} dataset ids must be unique and ascending"
            )));
        }
        Ok(Self { role, examples })
    }

    /// Build a dataset from examples in any order, assigning nothing; ids must be unique.
    pub fn from_unordered(role: DatasetRole, mut examples: Vec<Example>) -> Result<Self> {
        examples.sort_by_key(|e| e.id);
        Self::new(role, examples)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Example> {
        self.examples
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.examples[i])
    }

    pub fn ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }

    /// Per-label counts in label-set order.
    pub fn label_counts(&self, labels: &LabelSet) -> Vec<usize> {
        let mut counts = vec![0; labels.len()];
        for ex in &self.examples {
            if let Some(i) = labels.index_of(&ex.label) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// JSONL with one object per example: the fields plus `label`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let mut obj = serde_json::Map::new();
            for (k, v) in &ex.fields {
                obj.insert(k.clone(), serde_json::Value::String(v.clone()));
            }
            obj.insert("label".into(), serde_json::Value::String(ex.label.clone()));
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Field(String),
    Answer,
}

/// A parsed prompt template: literals and `{field}` placeholders, ending in `{label}`.
///
/// `{{` and `}}` stand for literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => name.push(ch),
                            None => {
                                return Err(Error::Config(format!(
                                    "unterminated placeholder in template {source:?}"
                                )))
                            }
                        }
                    }
                    let name = name.trim().to_string();
                    if name.is_empty() {
                        return Err(Error::Config("empty placeholder in template".into()));
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    if name == ANSWER_SLOT {
                        segments.push(Segment::Answer);
                    } else {
                        segments.push(Segment::Field(name));
                    }
                }
                '}' => {
                    return Err(Error::Config(format!(
                        "unmatched '}}' in template {source:?}"
                    )))
                }
                _ => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        let answers = segments.iter().filter(|s| **s == Segment::Answer).count();
        if answers != 1 || segments.last() != Some(&Segment::Answer) {
            return Err(Error::Config(format!(
                "template must contain {{{ANSWER_SLOT}}} exactly once, at the end"
            )));
        }
        Ok(Self {
            source: source.to_string(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Field names in order of first appearance.
    pub fn fields(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for seg in &self.segments {
            if let Segment::Field(name) = seg {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    fn render_block(&self, fields: &Fields, answer: Option<&str>, out: &mut String) -> Result<()> {
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Field(name) => match fields.get(name) {
                    Some(v) if !v.is_empty() => out.push_str(v),
                    _ => return Err(Error::Render(format!("missing field '{name}'"))),
                },
                Segment::Answer => {
                    if let Some(a) = answer {
                        out.push_str(a);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Raw task config as written in TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub labels: Vec<String>,
    pub verbalizers: BTreeMap<String, String>,
    pub template: String,
    #[serde(default)]
    pub fields: Option<Vec<String>>,
    #[serde(default = "default_separator")]
    pub demo_separator: String,
    #[serde(default)]
    pub query_suffix: String,
    #[serde(default)]
    pub max_prompt_chars: Option<usize>,
}

fn default_separator() -> String {
    "\n\n".to_string()
}

/// A validated classification task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub label_set: LabelSet,
    pub template: Template,
    pub demo_separator: String,
    pub query_suffix: String,
    pub max_prompt_chars: Option<usize>,
    fields: Vec<String>,
}

impl TaskSpec {
    pub fn from_config(config: TaskConfig) -> Result<Self> {
        if config.name.trim().is_empty() {
            return Err(Error::Config("task name is empty".into()));
        }
        let label_set = LabelSet::new(config.labels, &config.verbalizers)?;
        let template = Template::parse(&config.template)?;
        let used = template.fields();
        if used.is_empty() {
            return Err(Error::Config("template references no input field".into()));
        }
        if let Some(declared) = &config.fields {
            if let Some(undeclared) = used.iter().find(|f| !declared.contains(f)) {
                return Err(Error::Config(format!(
                    "template references undeclared field '{undeclared}'"
                )));
            }
            if declared.iter().any(|f| f == "label") {
                return Err(Error::Config("'label' is reserved for the label column".into()));
            }
        }
        Ok(Self {
            name: config.name,
            label_set,
            template,
            demo_separator: config.demo_separator,
            query_suffix: config.query_suffix,
            max_prompt_chars: config.max_prompt_chars,
            fields: used,
        })
    }

    /// Parse a TOML or JSON task config (JSON if the text starts with `{`).
    pub fn parse(text: &str) -> Result<Self> {
        let config: TaskConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("task config: {e}")))?
        };
        Self::from_config(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_config(&self) -> TaskConfig {
        TaskConfig {
            name: self.name.clone(),
            labels: self.label_set.labels().to_vec(),
            verbalizers: self
                .label_set
                .labels()
                .iter()
                .cloned()
                .zip(self.label_set.verbalizers().iter().cloned())
                .collect(),
            template: self.template.source().to_string(),
            fields: Some(self.fields.clone()),
            demo_separator: self.demo_separator.clone(),
            query_suffix: self.query_suffix.clone(),
            max_prompt_chars: self.max_prompt_chars,
        }
    }

    /// Input field names used by the template, in order.
    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    /// Plain input text of an example: its template fields joined by single spaces.
    pub fn input_text(&self, fields: &Fields) -> String {
        self.fields
            .iter()
            .filter_map(|f| fields.get(f).map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Render the few-shot prompt for `query` with `demos` in order.
    pub fn render_prompt(&self, demos: &[Example], query: &Fields) -> Result<String> {
        let mut out = String::new();
        for demo in demos {
            let verb = self.label_set.verbalizer(&demo.label).ok_or_else(|| {
                Error::Render(format!(
                    "demonstration {} has label '{}' outside task '{}'",
                    demo.id, demo.label, self.name
                ))
            })?;
            self.template
                .render_block(&demo.fields, Some(verb), &mut out)
                .map_err(|e| Error::Render(format!("demonstration {}: {e}", demo.id)))?;
            out.push_str(&self.demo_separator);
        }
        self.template
            .render_block(query, None, &mut out)
            .map_err(|e| Error::Render(format!("query: {e}")))?;
        out.push_str(&self.query_suffix);
        if let Some(limit) = self.max_prompt_chars {
            let len = out.chars().count();
            if len > limit {
                return Err(Error::Render(format!(
                    "prompt has {len} characters, over the limit of {limit}"
                )));
            }
        }
        Ok(out)
    }

    /// Load a JSONL or CSV data file for this task.
    pub fn load_dataset(&self, path: &Path, format: DataFormat, role: DatasetRole) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        self.parse_dataset(&text, format, role)
            .map_err(|e| match e {
                Error::Ingest { message, .. } => Error::ingest(path, message),
                other => other,
            })
    }

    /// Parse dataset text; ids follow record order.
    pub fn parse_dataset(&self, text: &str, format: DataFormat, role: DatasetRole) -> Result<Dataset> {
        let records = match format {
            DataFormat::Jsonl => parse_jsonl(text)?,
            DataFormat::Csv => parse_csv(text)?,
        };
        if records.is_empty() {
            return Err(Error::ingest("<data>", "empty file"));
        }
        let mut examples = Vec::with_capacity(records.len());
        for (id, (line, record)) in records.into_iter().enumerate() {
            let mut fields = Fields::new();
            for name in &self.fields {
                match record.get(name) {
                    Some(v) if !v.is_empty() => {
                        fields.insert(name.clone(), v.clone());
                    }
                    Some(_) => {
                        return Err(Error::ingest("<data>", format!("empty field '{name}' at line {line}")))
                    }
                    None => {
                        return Err(Error::ingest("<data>", format!("missing field '{name}' at line {line}")))
                    }
                }
            }
            let label = record
                .get("label")
                .ok_or_else(|| Error::ingest("<data>", format!("missing field 'label' at line {line}")))?;
            if !self.label_set.contains(label) {
                return Err(Error::ingest("<data>", format!("unknown label '{label}' at line {line}")));
            }
            examples.push(Example {
                id,
                fields,
                label: label.clone(),
            });
        }
        Dataset::new(role, examples)
    }
}

type Record = BTreeMap<String, String>;

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_jsonl(text: &str) -> Result<Vec<(usize, Record)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::ingest("<data>", format!("invalid JSON at line {lineno}: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::ingest("<data>", format!("line {lineno} is not a JSON object")))?;
        let mut record = Record::new();
        for (k, v) in obj {
            if let Some(s) = scalar_to_string(v) {
                record.insert(k.clone(), s);
            }
        }
        out.push((lineno, record));
    }
    Ok(out)
}

fn parse_csv(text: &str) -> Result<Vec<(usize, Record)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::ingest("<data>", format!("bad CSV header: {e}")))?
        .clone();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::ingest("<data>", format!("bad CSV record: {e}")))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let record = headers
            .iter()
            .zip(row.iter())
            .map(|(h, v)| (h.to_string(), v.to_string()))
            .collect();
        out.push((line, record));
    }
    Ok(out)
}

/// Method, seed, and iteration count that produced a demonstration set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub seed: u64,
    pub iterations: usize,
}

/// An ordered list of demonstrations forming one in-context prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub members: Vec<Example>,
    pub source_task: String,
    pub provenance: Provenance,
}

impl DemonstrationSet {
    pub fn new(members: Vec<Example>, source_task: impl Into<String>, provenance: Provenance) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for m in &members {
            if !ids.insert(m.id) {
                return Err(Error::Config(format!(
                    "demonstration set repeats example {}",
                    m.id
                )));
            }
        }
        Ok(Self {
            members,
            source_task: source_task.into(),
            provenance,
        })
    }

    pub fn ids(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.id).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ethos_task() -> TaskSpec {
        TaskSpec::parse(
            r#"
name = "ethos"
labels = ["no", "yes"]
template = "Text: {text} \n Hate: {label}"
[verbalizers]
no = "no"
yes = "yes"
"#,
        )
        .unwrap()
    }

    fn ex(id: usize, text: &str, label: &str) -> Example {
        Example {
            id,
            fields: [("text".to_string(), text.to_string())].into(),
            label: label.into(),
        }
    }

    fn q(text: &str) -> Fields {
        [("text".to_string(), text.to_string())].into()
    }

    #[test]
    fn renders_ethos_block() {
        let task = ethos_task();
        let out = task.render_prompt(&[ex(0, "t1", "no")], &q("t2")).unwrap();
        assert_eq!(out, "Text: t1 \n Hate: no\n\nText: t2 \n Hate: ");
    }

    #[test]
    fn zero_shot_renders_query_only() {
        let task = ethos_task();
        assert_eq!(task.render_prompt(&[], &q("t2")).unwrap(), "Text: t2 \n Hate: ");
    }

    #[test]
    fn demo_order_preserved() {
        let task = ethos_task();
        let a = ex(0, "alpha", "no");
        let b = ex(1, "beta", "yes");
        let ab = task.render_prompt(&[a.clone(), b.clone()], &q("x")).unwrap();
        let ba = task.render_prompt(&[b, a], &q("x")).unwrap();
        assert!(ab.find("alpha").unwrap() < ab.find("beta").unwrap());
        assert_ne!(ab, ba);
    }

    #[test]
    fn missing_query_field_is_render_error() {
        let task = ethos_task();
        let err = task.render_prompt(&[], &Fields::new()).unwrap_err();
        assert!(matches!(err, Error::Render(_)));
    }

    #[test]
    fn prompt_length_guard() {
        let mut cfg = ethos_task().to_config();
        cfg.max_prompt_chars = Some(10);
        let task = TaskSpec::from_config(cfg).unwrap();
        assert!(matches!(task.render_prompt(&[], &q("long enough text")), Err(Error::Render(_))));
    }

    #[test]
    fn multi_field_template() {
        let task = TaskSpec::parse(
            r#"{"name":"mrpc","labels":["0","1"],"verbalizers":{"0":"no","1":"yes"},
               "template":"Do the following two sentences mean the same thing?\n{sentence1}\n{sentence2}\n{label}"}"#,
        )
        .unwrap();
        assert_eq!(task.fields(), ["sentence1", "sentence2"]);
        let demo = Example {
            id: 0,
            fields: [("sentence1".into(), "a".into()), ("sentence2".into(), "b".into())].into(),
            label: "1".into(),
        };
        let query: Fields = [("sentence1".into(), "c".into()), ("sentence2".into(), "d".into())].into();
        let out = task.render_prompt(&[demo], &query).unwrap();
        assert_eq!(
            out,
            "Do the following two sentences mean the same thing?\na\nb\nyes\n\n\
             Do the following two sentences mean the same thing?\nc\nd\n"
        );
        assert_eq!(task.input_text(&query), "c d");
    }

    #[test]
    fn template_validation() {
        assert!(Template::parse("{text} {label} more").is_err());
        assert!(Template::parse("{text}").is_err());
        assert!(Template::parse("{label}{label}").is_err());
        assert!(Template::parse("{text").is_err());
        let t = Template::parse("{{x}} {text} {label}").unwrap();
        assert_eq!(t.fields(), ["text"]);
        let mut out = String::new();
        t.render_block(&q("hi"), Some("yes"), &mut out).unwrap();
        assert_eq!(out, "{x} hi yes");
    }

    #[test]
    fn undeclared_field_rejected() {
        let mut cfg = ethos_task().to_config();
        cfg.fields = Some(vec!["sentence".into()]);
        assert!(TaskSpec::from_config(cfg).is_err());
    }

    #[test]
    fn label_set_invariants() {
        let v = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
        };
        assert!(LabelSet::new(vec!["a".into()], &v(&[("a", "x")])).is_err());
        assert!(LabelSet::new(vec!["a".into(), "a".into()], &v(&[("a", "x")])).is_err());
        assert!(LabelSet::new(vec!["a".into(), "b".into()], &v(&[("a", "x"), ("b", "x")])).is_err());
        assert!(LabelSet::new(vec!["a".into(), "b".into()], &v(&[("a", "x"), ("b", " ")])).is_err());
        // "no" vs "None" collide on first-token matching
        assert!(LabelSet::new(vec!["a".into(), "b".into()], &v(&[("a", "no"), ("b", "None")])).is_err());
        let ok = LabelSet::new(vec!["a".into(), "b".into()], &v(&[("a", "yes"), ("b", "no")])).unwrap();
        assert_eq!(ok.verbalizer("b"), Some("no"));
        assert_eq!(ok.index_of("b"), Some(1));
    }

    #[test]
    fn label_set_serde_roundtrip() {
        let set = ethos_task().label_set;
        let json = serde_json::to_string(&set).unwrap();
        let back: LabelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn loads_jsonl_in_file_order() {
        let task = ethos_task();
        let ds = task
            .parse_dataset(
                "{\"text\":\"good\",\"label\":\"no\"}\n{\"text\":\"bad\",\"label\":\"yes\"}\n{\"text\":\"meh\",\"label\":\"no\",\"extra\":1}\n",
                DataFormat::Jsonl,
                DatasetRole::TrainPool,
            )
            .unwrap();
        assert_eq!(ds.ids(), vec![0, 1, 2]);
        assert_eq!(ds.examples()[0], ex(0, "good", "no"));
        assert_eq!(ds.examples()[2].fields.len(), 1);
    }

    #[test]
    fn unknown_label_names_line() {
        let task = ethos_task();
        let err = task
            .parse_dataset("{\"text\":\"good\",\"label\":\"posative\"}\n", DataFormat::Jsonl, DatasetRole::Test)
            .unwrap_err();
        assert!(err.to_string().contains("unknown label 'posative' at line 1"), "{err}");
    }

    #[test]
    fn missing_field_and_empty_file() {
        let task = ethos_task();
        let err = task
            .parse_dataset("{\"label\":\"no\"}\n", DataFormat::Jsonl, DatasetRole::Test)
            .unwrap_err();
        assert!(err.to_string().contains("missing field 'text'"), "{err}");
        let err = task.parse_dataset("\n\n", DataFormat::Jsonl, DatasetRole::Test).unwrap_err();
        assert!(err.to_string().contains("empty file"), "{err}");
    }

    #[test]
    fn loads_csv() {
        let task = ethos_task();
        let ds = task
            .parse_dataset("text,label\n\"hello, world\",yes\nbye,no\n", DataFormat::Csv, DatasetRole::Test)
            .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples()[0].fields["text"], "hello, world");
        let err = task
            .parse_dataset("text,label\nx,maybe\n", DataFormat::Csv, DatasetRole::Test)
            .unwrap_err();
        assert!(err.to_string().contains("unknown label 'maybe' at line 2"), "{err}");
    }

    #[test]
    fn numeric_labels_accepted() {
        let task = TaskSpec::parse(
            r#"{"name":"t","labels":["0","1"],"verbalizers":{"0":"no","1":"yes"},"template":"{text} {label}"}"#,
        )
        .unwrap();
        let ds = task
            .parse_dataset("{\"text\":\"a\",\"label\":1}\n", DataFormat::Jsonl, DatasetRole::Test)
            .unwrap();
        assert_eq!(ds.examples()[0].label, "1");
    }

    #[test]
    fn demonstration_set_rejects_duplicates() {
        let p = Provenance { method: "x".into(), seed: 0, iterations: 0 };
        assert!(DemonstrationSet::new(vec![ex(1, "a", "no"), ex(1, "a", "no")], "t", p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn jsonl_roundtrip(rows in proptest::collection::vec(("[a-zA-Z0-9 ,\"\\\\é]{1,20}", proptest::bool::ANY), 1..20)) {
            let task = ethos_task();
            let text: String = rows
                .iter()
                .map(|(t, y)| {
                    serde_json::json!({"text": t, "label": if *y { "yes" } else { "no" }}).to_string() + "\n"
                })
                .collect();
            let ds = task.parse_dataset(&text, DataFormat::Jsonl, DatasetRole::TrainPool).unwrap();
            let back = task.parse_dataset(&ds.to_jsonl(), DataFormat::Jsonl, DatasetRole::TrainPool).unwrap();
            proptest::prop_assert_eq!(ds, back);
        }
    }
}
