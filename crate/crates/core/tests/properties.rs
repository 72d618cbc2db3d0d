//! Property tests over the public API, plus a check that the bundled
//! synthetic data matches its generator.

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spokenparse::prosody::{pause_bucket, PAUSE_BUCKETS};
use spokenparse::synthetic::{random_tree, write_bundle};
use spokenparse::treebank::{parse_ptb, spans_to_tree, tree_to_spans, write_trees};

mod common;

const LABELS: [&str; 5] = ["S", "NP", "VP", "EDITED", "INTJ"];

proptest! {
    #[test]
    fn trees_survive_writing_and_reading(seed in any::<u64>(), max_words in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees: Vec<_> = (0..3).map(|_| random_tree(&mut rng, max_words, &LABELS)).collect();
        prop_assert_eq!(parse_ptb(&write_trees(&trees)).unwrap(), trees);
    }

    #[test]
    fn spans_rebuild_the_tree(seed in any::<u64>(), max_words in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, max_words, &LABELS);
        let spans = tree_to_spans(&tree);
        prop_assert!(spans.len() < 2 * tree.len());
        prop_assert_eq!(spans_to_tree(&spans, &tree.leaves()).unwrap(), tree);
    }

    #[test]
    fn pause_buckets_are_monotone(a in -1.0f64..10.0, b in -1.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pause_bucket(lo) <= pause_bucket(hi));
        prop_assert!(pause_bucket(hi) < PAUSE_BUCKETS);
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn bundled_data_matches_generator() {
    let tmp = tempfile::TempDir::new().unwrap();
    write_bundle(tmp.path()).unwrap();
    let fresh = files(tmp.path());
    let bundled = files(&common::data_dir());
    assert_eq!(fresh.len(), bundled.len());
    for ((a, x), (b, y)) in fresh.iter().zip(&bundled) {
        assert_eq!(a, b);
        assert!(x == y, "{a} differs from the generator output");
    }
}
