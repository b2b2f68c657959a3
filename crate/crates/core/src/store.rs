//! Dense embedding collections and the `DFV1` binary store format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DFV1" | dim: u32 | count: u32 | count × (utf-8 id, 0x00) | count × dim × f32
//! ```
//!
//! External ids are opaque strings; rows are addressed internally by their
//! dense index.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"DFV1";

/// Dimension of the dense retrievers this engine was built around.
pub const DEFAULT_DIM: usize = 768;

/// Row-major matrix of `f32` embeddings keyed by unique string ids.
///
/// Immutable once built; share it freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    rows_by_id: HashMap<String, u32>,
}

impl VectorStore {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        ensure!(dim > 0, Validation, "store dimension must be positive");
        ensure!(
            data.len() == ids.len() * dim,
            Validation,
            "{} ids need {} values at dim {}, got {}",
            ids.len(),
            ids.len() * dim,
            dim,
            data.len()
        );
        ensure!(
            ids.len() <= u32::MAX as usize,
            Validation,
            "too many rows for u32 addressing"
        );
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value in row {} ({})",
                pos / dim,
                ids[pos / dim]
            )));
        }
        let mut rows_by_id = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if rows_by_id.insert(id.clone(), row as u32).is_some() {
                return Err(Error::Validation(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            dim,
            ids,
            data,
            rows_by_id,
        })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    /// Builds a store from `(id, row)` pairs, checking every row length.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, row) in rows {
            let id = id.into();
            ensure!(
                row.len() == dim,
                Validation,
                "row {id:?} has {} entries, expected {dim}",
                row.len()
            );
            ids.push(id);
            data.extend_from_slice(&row);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.rows_by_id.get(id).map(|&r| r as usize)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_index(id).map(|r| self.row(r))
    }

    /// New store holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            ids.push(self.ids[r].clone());
            data.extend_from_slice(self.row(r));
        }
        Self::new(self.dim, ids, data).expect("subset of a valid store is valid")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|id| id.len() + 1).sum();
        let mut out = Vec::with_capacity(12 + id_bytes + self.data.len() * 4);
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(0);
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(
            bytes.len() >= 12,
            Corruption,
            "store header truncated ({} bytes)",
            bytes.len()
        );
        ensure!(
            &bytes[..4] == STORE_MAGIC,
            Format,
            "bad store magic {:?}, expected \"DFV1\"",
            String::from_utf8_lossy(&bytes[..4])
        );
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        ensure!(dim > 0, Format, "store declares dimension 0");

        let mut cursor = 12;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let rest = &bytes[cursor..];
            let Some(end) = rest.iter().position(|&b| b == 0) else {
                return Err(Error::Corruption(format!(
                    "id table ends after {i} of {count} ids"
                )));
            };
            let id = std::str::from_utf8(&rest[..end])
                .map_err(|e| Error::Corruption(format!("id {i} is not utf-8: {e}")))?;
            ids.push(id.to_owned());
            cursor += end + 1;
        }

        let payload = &bytes[cursor..];
        let expected = count * dim * 4;
        ensure!(
            payload.len() == expected,
            Corruption,
            "payload holds {} bytes, header declares {count} rows × {dim} dims = {expected}",
            payload.len()
        );
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, ids, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads an `id<TAB>v1,v2,...` text dump. Blank lines and `#` comments are
/// skipped; row order follows file order.
pub fn ingest_text(path: impl AsRef<Path>, dim: usize) -> Result<VectorStore> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_text(BufReader::new(f), dim)
}

pub fn parse_text(reader: impl BufRead, dim: usize) -> Result<VectorStore> {
    ensure!(dim > 0, Validation, "store dimension must be positive");
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `id<TAB>values`".into()))?;
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let start = data.len();
        for tok in values.split(',') {
            let v: f32 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad float {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {tok:?} at line {line_no}"
                )));
            }
            data.push(v);
        }
        let got = data.len() - start;
        if got != dim {
            return Err(parse_err(format!("expected {dim} components, found {got}")));
        }
        ids.push(id.to_owned());
    }
    VectorStore::new(dim, ids, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_rows() -> VectorStore {
        VectorStore::from_rows(2, [("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]).unwrap()
    }

    #[test]
    fn round_trip_bytes() {
        let s = two_rows();
        assert_eq!(VectorStore::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn empty_store_round_trips() {
        let s = VectorStore::empty(768).unwrap();
        let back = VectorStore::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 768);
    }

    #[test]
    fn short_payload_is_corruption() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let s = VectorStore::new(3, ids, vec![0.5; 30]).unwrap();
        let mut bytes = s.to_bytes();
        bytes.truncate(bytes.len() - 3 * 4);
        assert!(matches!(
            VectorStore::from_bytes(&bytes),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = two_rows().to_bytes();
        bytes[3] = b'2';
        assert!(matches!(
            VectorStore::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected_on_load() {
        let mut bytes = two_rows().to_bytes();
        // rename "b" to "a" in the id table
        let pos = 12 + 2;
        assert_eq!(bytes[pos], b'b');
        bytes[pos] = b'a';
        assert!(matches!(
            VectorStore::from_bytes(&bytes),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn text_ingest() {
        let s = parse_text("# header\np1\t1.0,0.0\n\np2\t0.5,-2\n".as_bytes(), 2).unwrap();
        assert_eq!(s.ids(), ["p1", "p2"]);
        assert_eq!(s.row(0), [1.0, 0.0]);
        assert_eq!(s.row(1), [0.5, -2.0]);
    }

    #[test]
    fn text_ingest_wrong_arity_names_line() {
        match parse_text("p1\t1.0\n".as_bytes(), 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_text("# c\np1\t1.0,2.0\np2\t1,2,3\n".as_bytes(), 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_ingest_rejects_duplicates_and_nan() {
        assert!(matches!(
            parse_text("p1\t1,2\np1\t3,4\n".as_bytes(), 2),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_text("p1\tNaN,2\n".as_bytes(), 2),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_text("p1\tinf,2\n".as_bytes(), 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.dfv");
        let s = two_rows();
        s.save(&path).unwrap();
        assert_eq!(VectorStore::load(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn save_load_identity(
            dim in 1usize..6,
            rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 5), 0..12),
        ) {
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("id-{i}\u{e9}")).collect();
            let data: Vec<f32> = rows.iter().flat_map(|r| r[..dim].iter().copied()).collect();
            let s = VectorStore::new(dim, ids, data).unwrap();
            let back = VectorStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), s.to_bytes());
            prop_assert_eq!(back, s);
        }
    }
}
