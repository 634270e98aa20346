//! Pretrained word vectors and the diacritic-stripped lookup table.
//!
//! Input vectors come in the usual text format (a `<count> <dim>` header,
//! then one `word v1 .. vdim` line per word). Since the model only ever sees
//! diacritic-free input, every raw word is folded to its stripped lowercase
//! form and all raw vectors sharing a folded form are averaged.
//!
//! The built table can be cached in a small binary format:
//!
//! ```text
//! "DIAC-EMB1"            9 bytes
//! dim                    u32 LE
//! entry count            u64 LE
//! per entry, keys strictly ascending:
//!     key length         u32 LE
//!     key                UTF-8
//!     vector             dim x f32 LE
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{read_bytes, read_u32, read_u64};
use crate::textnorm::{normalize, strip_lower};

pub const CACHE_MAGIC: &[u8; 9] = b"DIAC-EMB1";

/// Word vectors exactly as read from a vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVectorTable {
    dim: usize,
    words: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    /// Lines whose word had already been seen (the later line wins).
    pub duplicates: usize,
}

impl RawVectorTable {
    pub fn new(dim: usize) -> RawVectorTable {
        RawVectorTable { dim, words: Vec::new(), data: Vec::new(), index: HashMap::new(), duplicates: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index.get(word).map(|&i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.words.iter().enumerate().map(|(i, w)| (w.as_str(), self.row(i)))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Inserts or replaces; returns true when `word` was already present.
    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!("vector for {word:?} has {} values, expected {}", vector.len(), self.dim)));
        }
        if let Some(&i) = self.index.get(word) {
            self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
            self.duplicates += 1;
            return Ok(true);
        }
        self.index.insert(word.to_owned(), self.words.len());
        self.words.push(word.to_owned());
        self.data.extend_from_slice(vector);
        Ok(false)
    }
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<RawVectorTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vectors(BufReader::new(file))
}

/// Parses the `<count> <dim>` text format. Errors carry 1-based line numbers
/// (the header is line 1).
pub fn read_vectors<R: BufRead>(mut reader: R) -> Result<RawVectorTable> {
    let mut buf = Vec::new();
    let mut line_no = 0;
    let header = loop {
        match next_line(&mut reader, &mut buf, &mut line_no)? {
            None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => break l.to_owned(),
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| Error::Parse { line: line_no, msg: format!("bad {what} {s:?} in header") })
    };
    if fields.len() != 2 {
        return Err(Error::Parse { line: line_no, msg: "header must be \"<count> <dim>\"".into() });
    }
    let count = parse(fields[0], "count")?;
    let dim = parse(fields[1], "dimension")?;
    if dim == 0 {
        return Err(Error::Parse { line: line_no, msg: "dimension must be positive".into() });
    }

    let mut table = RawVectorTable::new(dim);
    let mut vector = Vec::with_capacity(dim.min(4096));
    let mut read = 0usize;
    while let Some(line) = next_line(&mut reader, &mut buf, &mut line_no)? {
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(word) = fields.next() else { continue };
        if read == count {
            return Err(Error::Parse { line: line_no, msg: format!("more entries than the {count} declared") });
        }
        vector.clear();
        for f in fields {
            if vector.len() == dim {
                return Err(Error::Parse { line: line_no, msg: format!("more than {dim} values") });
            }
            let v: f32 = f
                .parse()
                .ok()
                .filter(|v: &f32| v.is_finite())
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("non-numeric value {f:?}") })?;
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(Error::Parse { line: line_no, msg: format!("expected {dim} values, found {}", vector.len()) });
        }
        table.insert(word, &vector)?;
        read += 1;
    }
    if read != count {
        return Err(Error::Parse { line: line_no, msg: format!("header declares {count} entries, found {read}") });
    }
    Ok(table)
}

fn next_line<'a, R: BufRead>(reader: &mut R, buf: &'a mut Vec<u8>, line_no: &mut usize) -> Result<Option<&'a str>> {
    buf.clear();
    if reader.read_until(b'\n', buf)? == 0 {
        return Ok(None);
    }
    *line_no += 1;
    while matches!(buf.last(), Some(b'\n' | b'\r')) {
        buf.pop();
    }
    std::str::from_utf8(buf)
        .map(Some)
        .map_err(|e| Error::Parse { line: *line_no, msg: format!("invalid UTF-8 at byte {}", e.valid_up_to()) })
}

/// Lookup table keyed by stripped lowercase word. Row 0 is the zero vector
/// returned for unknown words; known words occupy rows `1..=len` in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, u32>,
    data: Vec<f32>,
}

pub const OOV_ROW: u32 = 0;

impl EmbeddingTable {
    /// A table with no entries: every lookup yields the zero vector.
    pub fn empty(dim: usize) -> EmbeddingTable {
        EmbeddingTable { dim, keys: Vec::new(), index: HashMap::new(), data: vec![0.0; dim] }
    }

    fn from_sorted(dim: usize, entries: Vec<(String, Vec<f32>)>) -> EmbeddingTable {
        let mut table = EmbeddingTable::empty(dim);
        table.data.reserve(entries.len() * dim);
        for (key, vector) in entries {
            table.index.insert(key.clone(), table.keys.len() as u32 + 1);
            table.keys.push(key);
            table.data.extend_from_slice(&vector);
        }
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row_of(&self, stripped_word: &str) -> u32 {
        self.index.get(stripped_word).copied().unwrap_or(OOV_ROW)
    }

    pub fn row(&self, row: u32) -> &[f32] {
        let r = row as usize;
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// Averaged vector for `stripped_word`, or zeros when it is unknown.
    pub fn lookup(&self, stripped_word: &str) -> &[f32] {
        self.row(self.row_of(stripped_word))
    }

    pub fn contains(&self, stripped_word: &str) -> bool {
        self.index.contains_key(stripped_word)
    }

    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        for (i, key) in self.keys.iter().enumerate() {
            w.write_all(&(key.len() as u32).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for v in self.row(i as u32 + 1) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<EmbeddingTable> {
        const WHAT: &str = "embedding cache";
        let magic = read_bytes(&mut r, CACHE_MAGIC.len(), WHAT)?;
        if magic != CACHE_MAGIC {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let dim = read_u32(&mut r, WHAT)? as usize;
        if dim == 0 {
            return Err(Error::format(WHAT, "zero dimension"));
        }
        let count = read_u64(&mut r, WHAT)?;
        let mut entries = Vec::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let len = read_u32(&mut r, WHAT)? as usize;
            let key = String::from_utf8(read_bytes(&mut r, len, WHAT)?)
                .map_err(|_| Error::format(WHAT, "key is not UTF-8"))?;
            if prev.as_ref().is_some_and(|p| *p >= key) {
                return Err(Error::format(WHAT, "keys not strictly ascending"));
            }
            let raw = read_bytes(&mut r, dim * 4, WHAT)?;
            let vector: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            prev = Some(key.clone());
            entries.push((key, vector));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        Ok(EmbeddingTable::from_sorted(dim, entries))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_cache(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::read_cache(BufReader::new(file))
    }
}

/// Folding key of a raw vocabulary word: normalized, lowercased, stripped.
pub fn fold_key(word: &str) -> String {
    strip_lower(&normalize(word))
}

/// Averages every raw vector under its folded key. Contributions are summed
/// in f64 in lexicographic order of the raw words, so the result does not
/// depend on the order of the input file.
pub fn build_stripped_table(raw: &RawVectorTable) -> EmbeddingTable {
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for (word, _) in raw.iter() {
        groups.entry(fold_key(word)).or_default().push(word);
    }
    let dim = raw.dim();
    let entries = groups
        .into_iter()
        .map(|(key, mut words)| {
            words.sort_unstable();
            let mut sum = vec![0f64; dim];
            for w in &words {
                for (s, &v) in sum.iter_mut().zip(raw.get(w).expect("grouped word present")) {
                    *s += v as f64;
                }
            }
            let n = words.len() as f64;
            (key, sum.into_iter().map(|s| (s / n) as f32).collect())
        })
        .collect();
    EmbeddingTable::from_sorted(dim, entries)
}
