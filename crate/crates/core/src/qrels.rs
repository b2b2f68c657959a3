//! Graded relevance judgments, read and written in the TREC qrels layout
//! `qid 0 docid grade`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Grade = u32;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, Grade>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one judgment. A second grade for the same pair is rejected.
    pub fn insert(&mut self, qid: &str, docid: &str, grade: Grade) -> Result<()> {
        let docs = self.by_query.entry(qid.to_owned()).or_default();
        if docs.insert(docid.to_owned(), grade).is_some() {
            return Err(Error::Validation(format!(
                "duplicate judgment for ({qid}, {docid})"
            )));
        }
        Ok(())
    }

    pub fn grade(&self, qid: &str, docid: &str) -> Grade {
        self.by_query
            .get(qid)
            .and_then(|d| d.get(docid))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, qid: &str) -> Option<&BTreeMap<String, Grade>> {
        self.by_query.get(qid)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    /// Documents for `qid` with grade at least `threshold`, in id order.
    pub fn relevant(&self, qid: &str, threshold: Grade) -> Vec<&str> {
        self.by_query
            .get(qid)
            .map(|d| {
                d.iter()
                    .filter(|(_, &g)| g >= threshold && g > 0)
                    .map(|(id, _)| id.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut q = Qrels::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, _iter, docid, grade] = fields[..] else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            };
            let grade: Grade = grade.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("grade {grade:?} is not a non-negative integer"),
            })?;
            q.insert(qid, docid, grade)?;
        }
        Ok(q)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(f))
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        for (qid, docs) in &self.by_query {
            for (docid, grade) in docs {
                writeln!(w, "{qid} 0 {docid} {grade}")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}
