//! TREC run files: `qid Q0 docid rank score tag`, one result per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::ScoredList;

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub docid: String,
    pub score: f32,
}

/// Ranked results per query plus a run tag. Entries are stored in rank
/// order (rank 1 first).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub tag: String,
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn from_lists(tag: impl Into<String>, lists: &[ScoredList]) -> Self {
        let mut run = Self::new(tag);
        for list in lists {
            run.queries.insert(
                list.query_id.clone(),
                list.hits
                    .iter()
                    .map(|h| RunEntry {
                        docid: h.id.clone(),
                        score: h.score,
                    })
                    .collect(),
            );
        }
        run
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn ranking(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        for (qid, entries) in &self.queries {
            for (i, e) in entries.iter().enumerate() {
                writeln!(w, "{qid} Q0 {} {} {} {}", e.docid, i + 1, e.score, self.tag)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut tag: Option<String> = None;
        let mut raw: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, _q0, docid, rank, score, run_tag] = fields[..] else {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            };
            let rank: usize = rank
                .parse()
                .map_err(|_| err(format!("bad rank {rank:?}")))?;
            let score: f32 = score
                .parse()
                .map_err(|_| err(format!("bad score {score:?}")))?;
            if !score.is_finite() {
                return Err(err(format!("non-finite score {score}")));
            }
            tag.get_or_insert_with(|| run_tag.to_owned());
            raw.entry(qid.to_owned()).or_default().push((
                rank,
                RunEntry {
                    docid: docid.to_owned(),
                    score,
                },
            ));
        }

        let mut queries = BTreeMap::new();
        for (qid, mut entries) in raw {
            entries.sort_by_key(|(rank, _)| *rank);
            for (i, (rank, _)) in entries.iter().enumerate() {
                if *rank != i + 1 {
                    return Err(Error::Validation(format!(
                        "query {qid}: ranks are not contiguous from 1 (found {rank} at position {})",
                        i + 1
                    )));
                }
            }
            if entries.windows(2).any(|w| w[1].1.score > w[0].1.score) {
                return Err(Error::Validation(format!(
                    "query {qid}: scores increase with rank"
                )));
            }
            queries.insert(qid, entries.into_iter().map(|(_, e)| e).collect());
        }
        Ok(Self {
            tag: tag.unwrap_or_default(),
            queries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(f))
    }
}
