//! Tables shared by every stage: ratings, verb–frame counts, normalized
//! acceptabilities and feature matrices, with strict TSV ingestion.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;
use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interned, insertion-ordered string vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab(IndexSet<String>);

impl Vocab {
    pub fn new() -> Self {
        Vocab(IndexSet::new())
    }

    pub fn intern(&mut self, s: &str) -> usize {
        match self.0.get_index_of(s) {
            Some(i) => i,
            None => self.0.insert_full(s.to_string()).0,
        }
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.0.get_index_of(s)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: AsRef<str>> FromIterator<S> for Vocab {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut v = Vocab::new();
        for s in iter {
            v.intern(s.as_ref());
        }
        v
    }
}

/// Formats a real so that parsing it back yields the identical `f64`.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x}")
    }
}

fn parse_real(s: &str) -> Option<f64> {
    match s {
        "NA" | "nan" | "NaN" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn tsv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').collect()))
}

// ---------------------------------------------------------------------------
// Ratings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant: usize,
    pub list: usize,
    pub verb: usize,
    pub frame: usize,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsTable {
    pub participants: Vocab,
    pub lists: Vocab,
    pub verbs: Vocab,
    pub frames: Vocab,
    pub records: Vec<RatingRecord>,
    pub scale_max: u8,
}

/// Names of the five required ratings columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub participant: String,
    pub list: String,
    pub verb: String,
    pub frame: String,
    pub response: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            participant: "participant".into(),
            list: "list".into(),
            verb: "verb".into(),
            frame: "frame".into(),
            response: "response".into(),
        }
    }
}

/// Rows rejected in lenient mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rejected: Vec<(usize, String)>,
}

impl RatingsTable {
    pub fn empty(scale_max: u8) -> Self {
        RatingsTable {
            participants: Vocab::new(),
            lists: Vocab::new(),
            verbs: Vocab::new(),
            frames: Vocab::new(),
            records: Vec::new(),
            scale_max,
        }
    }

    /// Builds a validated table from string-keyed rows
    /// `(participant, list, verb, frame, rating)`.
    pub fn from_rows<'a, I>(rows: I, scale_max: u8) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str, &'a str, u8)>,
    {
        let mut t = RatingsTable::empty(scale_max);
        let mut seen = HashSet::new();
        for (i, (p, l, v, f, r)) in rows.into_iter().enumerate() {
            t.push(p, l, v, f, r, &mut seen)
                .map_err(|msg| Error::data("<memory>", i + 1, msg))?;
        }
        Ok(t)
    }

    fn push(
        &mut self,
        p: &str,
        l: &str,
        v: &str,
        f: &str,
        r: u8,
        seen: &mut HashSet<(usize, usize, usize, usize)>,
    ) -> std::result::Result<(), String> {
        if r < 1 || r > self.scale_max {
            return Err(format!("rating {r} outside [1, {}]", self.scale_max));
        }
        let key = (
            self.participants.intern(p),
            self.lists.intern(l),
            self.verbs.intern(v),
            self.frames.intern(f),
        );
        if !seen.insert(key) {
            return Err(format!("duplicate response for ({p}, {l}, {v}, {f})"));
        }
        self.records.push(RatingRecord {
            participant: key.0,
            list: key.1,
            verb: key.2,
            frame: key.3,
            rating: r,
        });
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.items().len()
    }

    /// Distinct rated `(verb, frame)` cells in order of first appearance.
    pub fn items(&self) -> Vec<(usize, usize)> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .map(|r| (r.verb, r.frame))
            .filter(|k| seen.insert(*k))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("participant\tlist\tverb\tframe\tresponse\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                self.participants.name(r.participant),
                self.lists.name(r.list),
                self.verbs.name(r.verb),
                self.frames.name(r.frame),
                r.rating
            );
        }
        write_string(path, &s)
    }
}

/// Reads a tab-separated ratings file. In strict mode the first bad row is an
/// error; in lenient mode bad rows are dropped and reported.
pub fn load_ratings(path: &Path, columns: &ColumnMap, lenient: bool) -> Result<(RatingsTable, IngestReport)> {
    let text = read_to_string(path)?;
    let mut lines = tsv_lines(&text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data(path, 1, "empty ratings file"))?;
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("ratings file {} has no column `{name}`", path.display())))
    };
    let idx = [
        col(&columns.participant)?,
        col(&columns.list)?,
        col(&columns.verb)?,
        col(&columns.frame)?,
        col(&columns.response)?,
    ];
    let mut table = RatingsTable::empty(7);
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (lineno, fields) in lines {
        let res = (|| {
            let get = |i: usize| fields.get(i).map(|s| s.trim()).ok_or("missing field");
            let raw = get(idx[4])?;
            let r: i64 = raw.parse().map_err(|_| format!("rating `{raw}` is not an integer"))?;
            if !(1..=7).contains(&r) {
                return Err(format!("rating {r} outside [1, 7]"));
            }
            table.push(get(idx[0])?, get(idx[1])?, get(idx[2])?, get(idx[3])?, r as u8, &mut seen)
        })();
        if let Err(msg) = res {
            if lenient {
                report.rejected.push((lineno, msg));
            } else {
                return Err(Error::data(path, lineno, msg));
            }
        }
    }
    if !report.rejected.is_empty() {
        warn!("{}: dropped {} malformed rating rows", path.display(), report.rejected.len());
    }
    if table.records.is_empty() {
        return Err(Error::data(path, 1, "no valid rating rows"));
    }
    Ok((table, report))
}

// ---------------------------------------------------------------------------
// Counts
// ---------------------------------------------------------------------------

/// Sparse verb × frame co-occurrence counts; absent cells are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub verbs: Vocab,
    pub frames: Vocab,
    pub counts: BTreeMap<(usize, usize), u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CountsReport {
    pub dropped_zero_verbs: Vec<String>,
}

impl CountsTable {
    /// Builds a table from `(verb, frame, count)` triples. Repeated cells are
    /// summed; verbs whose total is zero are dropped.
    pub fn from_triples<'a, I>(triples: I) -> (Self, CountsReport)
    where
        I: IntoIterator<Item = (&'a str, &'a str, u64)>,
    {
        let mut verbs = Vocab::new();
        let mut frames = Vocab::new();
        let mut cells: Vec<(usize, usize, u64)> = Vec::new();
        for (v, f, c) in triples {
            cells.push((verbs.intern(v), frames.intern(f), c));
        }
        Self::from_indexed(verbs, frames, cells)
    }

    fn from_indexed(verbs: Vocab, frames: Vocab, cells: Vec<(usize, usize, u64)>) -> (Self, CountsReport) {
        let mut totals = vec![0u64; verbs.len()];
        for &(v, _, c) in &cells {
            totals[v] += c;
        }
        let mut kept = Vocab::new();
        let mut remap = vec![None; verbs.len()];
        let mut report = CountsReport::default();
        for (i, name) in verbs.iter().enumerate() {
            if totals[i] > 0 {
                remap[i] = Some(kept.intern(name));
            } else {
                report.dropped_zero_verbs.push(name.to_string());
            }
        }
        let mut counts = BTreeMap::new();
        for (v, f, c) in cells {
            if let (Some(nv), true) = (remap[v], c > 0) {
                *counts.entry((nv, f)).or_insert(0) += c;
            }
        }
        if !report.dropped_zero_verbs.is_empty() {
            warn!("dropped {} verbs with zero total count", report.dropped_zero_verbs.len());
        }
        (
            CountsTable {
                verbs: kept,
                frames,
                counts,
            },
            report,
        )
    }

    /// Dense `N_v × N_F` matrix of counts.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.verbs.len(), self.frames.len());
        for (&(v, f), &c) in &self.counts {
            m[(v, f)] = c as f64;
        }
        m
    }

    pub fn get(&self, verb: usize, frame: usize) -> u64 {
        self.counts.get(&(verb, frame)).copied().unwrap_or(0)
    }

    pub fn row_totals(&self) -> Vec<u64> {
        let mut t = vec![0; self.verbs.len()];
        for (&(v, _), &c) in &self.counts {
            t[v] += c;
        }
        t
    }

    /// Keeps only `keep` verbs (in this table's order). Frames are untouched.
    pub fn restrict_verbs(&self, keep: &HashSet<&str>) -> CountsTable {
        let mut verbs = Vocab::new();
        let mut remap = vec![None; self.verbs.len()];
        for (i, v) in self.verbs.iter().enumerate() {
            if keep.contains(v) {
                remap[i] = Some(verbs.intern(v));
            }
        }
        let counts = self
            .counts
            .iter()
            .filter_map(|(&(v, f), &c)| remap[v].map(|nv| ((nv, f), c)))
            .collect();
        CountsTable {
            verbs,
            frames: self.frames.clone(),
            counts,
        }
    }

    /// Renames verbs through `map`; verbs mapped onto the same target are merged.
    pub fn remap_verbs(&self, map: &VerbMap) -> CountsTable {
        let mut verbs = Vocab::new();
        let mut cells = Vec::new();
        let ids: Vec<usize> = self.verbs.iter().map(|v| verbs.intern(map.apply(v))).collect();
        for (&(v, f), &c) in &self.counts {
            cells.push((ids[v], f, c));
        }
        Self::from_indexed(verbs, self.frames.clone(), cells).0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("verb\tframe\tcount\n");
        for (&(v, f), &c) in &self.counts {
            let _ = writeln!(s, "{}\t{}\t{}", self.verbs.name(v), self.frames.name(f), c);
        }
        write_string(path, &s)
    }
}

/// Reads `verb<TAB>frame<TAB>count` triples (with header).
pub fn load_counts(path: &Path) -> Result<(CountsTable, CountsReport)> {
    let text = read_to_string(path)?;
    let mut verbs = Vocab::new();
    let mut frames = Vocab::new();
    let mut cells = Vec::new();
    for (lineno, fields) in tsv_lines(&text) {
        if lineno == 1 && fields.first().map(|s| s.trim()) == Some("verb") {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::data(path, lineno, "expected verb, frame, count"));
        }
        let raw = fields[2].trim();
        let c: u64 = raw
            .parse()
            .map_err(|_| Error::data(path, lineno, format!("count `{raw}` is not a nonnegative integer")))?;
        cells.push((verbs.intern(fields[0].trim()), frames.intern(fields[1].trim()), c));
    }
    if verbs.is_empty() {
        return Err(Error::data(path, 1, "no count rows"));
    }
    Ok(CountsTable::from_indexed(verbs, frames, cells))
}

/// Verb renaming table (`from<TAB>to`), applied to count vocabularies before
/// they are intersected with rated verbs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerbMap(HashMap<String, String>);

impl VerbMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut m = HashMap::new();
        for (lineno, fields) in tsv_lines(&text) {
            if fields.len() < 2 {
                return Err(Error::data(path, lineno, "expected from, to"));
            }
            m.insert(fields[0].trim().to_string(), fields[1].trim().to_string());
        }
        Ok(VerbMap(m))
    }

    pub fn apply<'a>(&'a self, verb: &'a str) -> &'a str {
        self.0.get(verb).map(String::as_str).unwrap_or(verb)
    }
}

impl<A: Into<String>, B: Into<String>> FromIterator<(A, B)> for VerbMap {
    fn from_iter<I: IntoIterator<Item = (A, B)>>(iter: I) -> Self {
        VerbMap(iter.into_iter().map(|(a, b)| (a.into(), b.into())).collect())
    }
}

// ---------------------------------------------------------------------------
// Acceptability
// ---------------------------------------------------------------------------

/// Normalized acceptability per (verb, frame) plus the item's variability
/// score (mean probability of the observed responses). Unrated cells are NaN
/// and are written as `NA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptabilityMatrix {
    pub verbs: Vocab,
    pub frames: Vocab,
    pub acceptability: DMatrix<f64>,
    pub variability: DMatrix<f64>,
}

impl AcceptabilityMatrix {
    pub fn restrict_verbs(&self, keep: &HashSet<&str>) -> AcceptabilityMatrix {
        let rows: Vec<usize> = (0..self.verbs.len()).filter(|&i| keep.contains(self.verbs.name(i))).collect();
        AcceptabilityMatrix {
            verbs: rows.iter().map(|&i| self.verbs.name(i)).collect(),
            frames: self.frames.clone(),
            acceptability: self.acceptability.select_rows(&rows),
            variability: self.variability.select_rows(&rows),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("verb\tframe\tacceptability\tvariability\n");
        for v in 0..self.verbs.len() {
            for f in 0..self.frames.len() {
                let a = self.acceptability[(v, f)];
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}",
                    self.verbs.name(v),
                    self.frames.name(f),
                    fmt_real(a),
                    fmt_real(self.variability[(v, f)])
                );
            }
        }
        write_string(path, &s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut verbs = Vocab::new();
        let mut frames = Vocab::new();
        let mut cells = Vec::new();
        for (lineno, fields) in tsv_lines(&text) {
            if lineno == 1 && fields.first().map(|s| s.trim()) == Some("verb") {
                continue;
            }
            if fields.len() < 4 {
                return Err(Error::data(path, lineno, "expected verb, frame, acceptability, variability"));
            }
            let a = parse_real(fields[2].trim()).ok_or_else(|| Error::data(path, lineno, "bad acceptability"))?;
            let w = parse_real(fields[3].trim()).ok_or_else(|| Error::data(path, lineno, "bad variability"))?;
            cells.push((verbs.intern(fields[0].trim()), frames.intern(fields[1].trim()), a, w));
        }
        let mut acc = DMatrix::from_element(verbs.len(), frames.len(), f64::NAN);
        let mut var = acc.clone();
        for (v, f, a, w) in cells {
            acc[(v, f)] = a;
            var[(v, f)] = w;
        }
        Ok(AcceptabilityMatrix {
            verbs,
            frames,
            acceptability: acc,
            variability: var,
        })
    }
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Row identity of a feature vector: a verb, or a (verb, frame) sentence item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKey {
    Verb(String),
    Item(String, String),
}

impl RowKey {
    pub fn verb(&self) -> &str {
        match self {
            RowKey::Verb(v) | RowKey::Item(v, _) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub keys: Vec<RowKey>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(keys: Vec<RowKey>, columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if keys.len() != values.nrows() || columns.len() != values.ncols() {
            return Err(Error::Domain(format!(
                "feature matrix shape {}x{} does not match {} keys and {} columns",
                values.nrows(),
                values.ncols(),
                keys.len(),
                columns.len()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            let r = i % values.nrows();
            return Err(Error::Domain(format!("non-finite feature in row {r}")));
        }
        Ok(FeatureMatrix { keys, columns, values })
    }

    /// Verb-keyed matrix over the given verb vocabulary.
    pub fn for_verbs(verbs: &Vocab, columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        Self::new(verbs.iter().map(|v| RowKey::Verb(v.to_string())).collect(), columns, values)
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_item_level(&self) -> bool {
        matches!(self.keys.first(), Some(RowKey::Item(..)))
    }

    /// Column-wise concatenation; row keys must match exactly.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.keys != other.keys {
            return Err(Error::Domain("cannot concatenate feature matrices with different rows".into()));
        }
        let mut values = DMatrix::zeros(self.nrows(), self.dim() + other.dim());
        values.columns_mut(0, self.dim()).copy_from(&self.values);
        values.columns_mut(self.dim(), other.dim()).copy_from(&other.values);
        let columns = self.columns.iter().chain(&other.columns).cloned().collect();
        Ok(FeatureMatrix {
            keys: self.keys.clone(),
            columns,
            values,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        s.push_str(if self.is_item_level() { "verb\tframe" } else { "verb" });
        for c in &self.columns {
            s.push('\t');
            s.push_str(c);
        }
        s.push('\n');
        for (i, k) in self.keys.iter().enumerate() {
            match k {
                RowKey::Verb(v) => s.push_str(v),
                RowKey::Item(v, f) => {
                    s.push_str(v);
                    s.push('\t');
                    s.push_str(f);
                }
            }
            for j in 0..self.dim() {
                s.push('\t');
                s.push_str(&fmt_real(self.values[(i, j)]));
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_tsv())
    }

    /// Reads a matrix written by [`FeatureMatrix::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut lines = tsv_lines(&text);
        let (_, header) = lines.next().ok_or_else(|| Error::data(path, 1, "empty feature file"))?;
        let item_level = header.get(1).map(|s| s.trim()) == Some("frame");
        let nkey = if item_level { 2 } else { 1 };
        let columns: Vec<String> = header[nkey..].iter().map(|s| s.to_string()).collect();
        let mut keys = Vec::new();
        let mut vals = Vec::new();
        for (lineno, fields) in lines {
            if fields.len() != nkey + columns.len() {
                return Err(Error::data(path, lineno, "ragged feature row"));
            }
            keys.push(if item_level {
                RowKey::Item(fields[0].to_string(), fields[1].to_string())
            } else {
                RowKey::Verb(fields[0].to_string())
            });
            for x in &fields[nkey..] {
                vals.push(parse_real(x.trim()).ok_or_else(|| Error::data(path, lineno, format!("bad value `{x}`")))?);
            }
        }
        let values = DMatrix::from_row_slice(keys.len(), columns.len(), &vals);
        FeatureMatrix::new(keys, columns, values).map_err(|e| Error::data(path, 1, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Aligned {
    pub counts: CountsTable,
    pub acceptability: AcceptabilityMatrix,
    /// Verbs present only in the counts table.
    pub dropped_from_counts: usize,
    /// Verbs present only in the acceptability matrix.
    pub dropped_from_acceptability: usize,
}

/// Restricts both tables to their shared verbs, preserving each side's order.
pub fn align_vocabularies(counts: &CountsTable, acc: &AcceptabilityMatrix) -> Result<Aligned> {
    if counts.verbs.is_empty() || acc.verbs.is_empty() {
        return Err(Error::Analysis("cannot align an empty vocabulary".into()));
    }
    let a: HashSet<&str> = counts.verbs.iter().collect();
    let b: HashSet<&str> = acc.verbs.iter().collect();
    let shared: HashSet<&str> = a.intersection(&b).copied().collect();
    if shared.is_empty() {
        return Err(Error::Analysis("counts and acceptability share no verbs".into()));
    }
    Ok(Aligned {
        counts: counts.restrict_verbs(&shared),
        acceptability: acc.restrict_verbs(&shared),
        dropped_from_counts: a.len() - shared.len(),
        dropped_from_acceptability: b.len() - shared.len(),
    })
}
