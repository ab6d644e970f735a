#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clirdistill::PipelineConfig;

/// A pipeline that finishes in a second or two.
pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    let s = &mut cfg.corpus.synthetic;
    s.vocab_size = 600;
    s.n_topics = 6;
    s.n_documents = 180;
    s.n_queries = 48;
    s.doc_len_max = 120;
    cfg.corpus.held_out_queries = 8;
    cfg.train.epochs = 2;
    cfg.train.batch_queries = 16;
    cfg.languages.candidate_k = 20;
    cfg.index.centroids = 16;
    cfg.validate().unwrap();
    cfg
}

/// Relative path → bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Files that differ between two snapshots, including ones present in only one.
pub fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
