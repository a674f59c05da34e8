use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_document, CorpusError, Document, LinkType};

/// One JSON object per line, in input order.
pub fn write_jsonl<W: Write>(docs: &[Document], mut w: W) -> Result<(), CorpusError> {
    for d in docs {
        serde_json::to_writer(&mut w, d).map_err(|source| CorpusError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read and validate a JSON-lines corpus. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

fn collect_xml(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_xml(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `*.xml` file below `dir`, sorted by path.
pub fn xml_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    collect_xml(dir, &mut paths)?;
    paths.sort();
    Ok(paths)
}

/// Parse every `*.xml` file below `dir`, in path order. Document ids are the
/// relative paths without extension.
pub fn load_xml_dir(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    xml_files(dir)?
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p).with_extension("");
            let id = rel.to_string_lossy().replace('\\', "/");
            let bytes = std::fs::read(p)?;
            parse_document(&id, &bytes).map_err(|e| CorpusError::InFile {
                path: p.display().to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Whole-document split. The training share is `round(ratio * n)` clamped
/// so both sides are non-empty; the shuffle is seeded.
pub fn split_dataset(docs: &[Document], ratio: f64, seed: u64) -> Result<(Vec<Document>, Vec<Document>), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    if docs.len() < 2 {
        return Err(CorpusError::TooFewDocuments(docs.len()));
    }
    let n = docs.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| docs[i].clone()).collect::<Vec<_>>()
    };
    Ok((pick(train_idx), pick(test_idx)))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkHistogram {
    pub by_type: BTreeMap<LinkType, usize>,
    pub null_role_by_type: BTreeMap<LinkType, usize>,
    pub total: usize,
    pub null_role: usize,
}

impl LinkHistogram {
    pub fn count(&self, t: LinkType) -> usize {
        self.by_type.get(&t).copied().unwrap_or(0)
    }

    pub fn null_role_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.null_role as f64 / self.total as f64
        }
    }
}

pub fn count_links(docs: &[Document]) -> LinkHistogram {
    let mut h = LinkHistogram::default();
    for t in LinkType::RELATIONS {
        h.by_type.insert(t, 0);
        h.null_role_by_type.insert(t, 0);
    }
    for link in docs.iter().flat_map(|d| &d.links) {
        *h.by_type.entry(link.link_type).or_insert(0) += 1;
        h.total += 1;
        if link.is_null_role() {
            *h.null_role_by_type.entry(link.link_type).or_insert(0) += 1;
            h.null_role += 1;
        }
    }
    h
}
