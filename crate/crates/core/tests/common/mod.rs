#![allow(dead_code)]

pub mod oracles;

use std::fs;
use std::path::{Path, PathBuf};

use kgnsf::{KnowledgeGraph, Triple};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PLANTED_ENTITIES: usize = 50;
pub const PLANTED_RELATIONS: usize = 4;
pub const PLANTED_CLASSES: usize = 5;

/// `tail = classes * r + head mod classes`, so every relation maps each head
/// class onto its own hub entity.
pub fn planted_tail(head: usize, relation: usize) -> usize {
    PLANTED_CLASSES * relation + head % PLANTED_CLASSES
}

/// 50 entities, 4 relations, one triple per `(head, r)` with the tail given
/// by [`planted_tail`]; shuffled into an 80/10/10 split.
pub fn planted_triples(seed: u64) -> (Vec<Triple>, Vec<Triple>, Vec<Triple>) {
    let mut all: Vec<Triple> = (0..PLANTED_ENTITIES)
        .flat_map(|h| {
            (0..PLANTED_RELATIONS).map(move |r| Triple::new(h, r, planted_tail(h, r)))
        })
        .collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = all.len();
    let (n_train, n_valid) = (n * 8 / 10, n / 10);
    let test = all.split_off(n_train + n_valid);
    let valid = all.split_off(n_train);
    (all, valid, test)
}

pub fn planted_graph(seed: u64) -> KnowledgeGraph {
    let (train, valid, test) = planted_triples(seed);
    KnowledgeGraph::from_triples(PLANTED_ENTITIES, PLANTED_RELATIONS, train, valid, test).unwrap()
}

fn write_split(path: &Path, triples: &[Triple]) {
    let body: String = triples
        .iter()
        .map(|t| format!("e{}\tr{}\te{}\n", t.head, t.relation, t.tail))
        .collect();
    fs::write(path, body).unwrap();
}

/// Writes the planted split as triple files; returns (train, valid, test).
pub fn write_planted(dir: &Path, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let (train, valid, test) = planted_triples(seed);
    let paths = (dir.join("train.txt"), dir.join("valid.txt"), dir.join("test.txt"));
    write_split(&paths.0, &train);
    write_split(&paths.1, &valid);
    write_split(&paths.2, &test);
    paths
}
