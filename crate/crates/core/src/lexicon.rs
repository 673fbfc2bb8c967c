//! Phoneme inventory, wordform dictionary and the noisy-channel confusion model.
//!
//! Confusion probabilities come from raw count matrices: unobserved
//! (zero-count) pairs are imputed a count of 1 and every column is then
//! normalised, so column `j` is the distribution of perceived phonemes given
//! true phoneme `j`. The evidence temperature is stored alongside and only
//! applied when likelihoods are queried.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of phoneme symbols. Index ↔ symbol is a bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "phoneme symbol at position {i} is empty"
                )));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate phoneme symbol {s:?}"
                )));
            }
        }
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("empty phoneme inventory".into()));
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Maps a sequence of symbols to indices, failing on the first unknown one.
    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                let s = s.as_ref();
                self.index_of(s).ok_or_else(|| {
                    Error::InvalidArgument(format!("phoneme {s:?} not in inventory"))
                })
            })
            .collect()
    }
}

/// Wordform → phoneme index sequence.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconRecord {
    pub form: String,
    pub phonemes: Vec<String>,
}

impl Lexicon {
    pub fn new(
        entries: impl IntoIterator<Item = (String, Vec<usize>)>,
        inventory: &PhonemeInventory,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (form, phones) in entries {
            Self::check_entry(&form, &phones, inventory)?;
            if map.insert(form.clone(), phones).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate wordform {form:?}"
                )));
            }
        }
        Ok(Self { entries: map })
    }

    fn check_entry(form: &str, phones: &[usize], inventory: &PhonemeInventory) -> Result<()> {
        if phones.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "wordform {form:?} has no phonemes"
            )));
        }
        if let Some(&bad) = phones.iter().find(|&&p| p >= inventory.len()) {
            return Err(Error::OutOfRange {
                what: "phoneme inventory",
                index: bad,
                len: inventory.len(),
            });
        }
        Ok(())
    }

    /// Reads JSON-lines records `{"form": ..., "phonemes": [...]}`.
    pub fn read_jsonl<R: BufRead>(
        reader: R,
        inventory: &PhonemeInventory,
        source: &str,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let ctx = || format!("{source}:{}", lineno + 1);
            let line = line.map_err(|e| Error::load(ctx(), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LexiconRecord =
                serde_json::from_str(&line).map_err(|e| Error::load(ctx(), e.to_string()))?;
            let phones = inventory
                .encode(&rec.phonemes)
                .map_err(|e| Error::load(ctx(), format!("wordform {:?}: {e}", rec.form)))?;
            Self::check_entry(&rec.form, &phones, inventory)
                .map_err(|e| Error::load(ctx(), e.to_string()))?;
            if entries.insert(rec.form.clone(), phones).is_some() {
                return Err(Error::load(
                    ctx(),
                    format!("duplicate wordform {:?}", rec.form),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path, inventory: &PhonemeInventory) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(
            std::io::BufReader::new(file),
            inventory,
            &path.display().to_string(),
        )
    }

    pub fn to_records(&self, inventory: &PhonemeInventory) -> Vec<LexiconRecord> {
        self.entries
            .iter()
            .map(|(form, phones)| LexiconRecord {
                form: form.clone(),
                phonemes: phones
                    .iter()
                    .map(|&p| inventory.symbol(p).unwrap_or("?").to_string())
                    .collect(),
            })
            .collect()
    }

    pub fn get(&self, form: &str) -> Option<&[usize]> {
        self.entries.get(form).map(Vec::as_slice)
    }

    pub fn contains(&self, form: &str) -> bool {
        self.entries.contains_key(form)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Raw confusion counts. `counts[r][c]` is how often truth `c` was reported as `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    labels: Vec<String>,
    counts: Array2<u64>,
}

impl CountMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<i64>>) -> Result<Self> {
        let n = labels.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!(
                "count matrix must be square with {n} labelled rows and columns"
            )));
        }
        let mut counts = Array2::zeros((n, n));
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v < 0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative count {v} at ({}, {})",
                        labels[r], labels[c]
                    )));
                }
                counts[[r, c]] = v as u64;
            }
        }
        Ok(Self { labels, counts })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    /// Block-diagonal concatenation (e.g. consonant and vowel studies). Cross-block
    /// cells are left at zero and get imputed like any other unobserved pair.
    pub fn concat(blocks: &[CountMatrix]) -> Result<Self> {
        let n: usize = blocks.iter().map(|b| b.labels.len()).sum();
        let mut labels = Vec::with_capacity(n);
        let mut counts = Array2::zeros((n, n));
        let mut off = 0;
        for b in blocks {
            let k = b.labels.len();
            labels.extend(b.labels.iter().cloned());
            counts
                .slice_mut(ndarray::s![off..off + k, off..off + k])
                .assign(&b.counts);
            off += k;
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "label {dup:?} appears in more than one block"
            )));
        }
        Ok(Self { labels, counts })
    }

    /// CSV with a header row and a leading label column.
    pub fn read_csv<R: std::io::Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::load(format!("{source}:1"), e.to_string()))?
            .clone();
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut row_labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let ctx = format!("{source}:{}", i + 2);
            let rec = rec.map_err(|e| Error::load(&ctx, e.to_string()))?;
            let mut it = rec.iter();
            row_labels.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|v| {
                    v.parse::<i64>()
                        .map_err(|_| Error::load(&ctx, format!("count {v:?} is not an integer")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if row_labels != labels {
            return Err(Error::load(
                source,
                "row labels must match column labels in the same order",
            ));
        }
        Self::new(labels, rows).map_err(|e| Error::load(source, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (r, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.counts.row(r).iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Column-stochastic `P(perceived | true)` with an evidence temperature.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    probs: Array2<f64>,
    log_probs: Array2<f64>,
    temperature: f64,
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "evidence temperature must be positive, got {temperature}"
        )))
    }
}

/// Aligns `counts` to `inventory`, imputes unobserved pairs and normalises columns.
pub fn build_confusion(
    counts: &CountMatrix,
    inventory: &PhonemeInventory,
    temperature: f64,
) -> Result<ConfusionMatrix> {
    check_temperature(temperature)?;
    let n = inventory.len();
    let mut pos = vec![usize::MAX; counts.labels.len()];
    for (k, label) in counts.labels.iter().enumerate() {
        pos[k] = inventory.index_of(label).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "confusion label {label:?} is not in the phoneme inventory"
            ))
        })?;
    }
    let mut covered = vec![false; n];
    for &p in &pos {
        if covered[p] {
            return Err(Error::InvalidArgument(format!(
                "confusion label {:?} appears twice",
                inventory.symbol(p).unwrap_or_default()
            )));
        }
        covered[p] = true;
    }
    if let Some(missing) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidArgument(format!(
            "phoneme {:?} has no confusion counts",
            inventory.symbol(missing).unwrap_or_default()
        )));
    }

    let mut probs = Array2::<f64>::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let v = counts.counts[[r, c]];
            probs[[pos[r], pos[c]]] = if v == 0 { 1.0 } else { v as f64 };
        }
    }
    for mut col in probs.columns_mut() {
        let total: f64 = col.sum();
        col.mapv_inplace(|v| v / total);
    }
    Ok(ConfusionMatrix::from_probs(probs, temperature))
}

impl ConfusionMatrix {
    fn from_probs(probs: Array2<f64>, temperature: f64) -> Self {
        let log_probs = probs.mapv(f64::ln);
        Self {
            probs,
            log_probs,
            temperature,
        }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            probs: self.probs.clone(),
            log_probs: self.log_probs.clone(),
            temperature,
        })
    }

    /// Tempered log-likelihood `ln P(observed | hypothesized) / λ`. Indices are not checked.
    #[inline]
    pub(crate) fn log_likelihood(&self, observed: usize, hypothesized: usize) -> f64 {
        let inv = self.temperature.recip();
        if inv == 0.0 {
            0.0
        } else {
            self.log_probs[[observed, hypothesized]] * inv
        }
    }
}

/// `P(observed | hypothesized)^(1/λ)`, unnormalised.
pub fn phoneme_likelihood(
    observed: usize,
    hypothesized: usize,
    cm: &ConfusionMatrix,
) -> Result<f64> {
    let n = cm.len();
    for idx in [observed, hypothesized] {
        if idx >= n {
            return Err(Error::OutOfRange {
                what: "confusion matrix",
                index: idx,
                len: n,
            });
        }
    }
    Ok(cm.probs[[observed, hypothesized]].powf(cm.temperature.recip()))
}
