use kgnsf::data::FilterIndex;
use kgnsf::evaluation::{evaluate_triples, rank_triples};
use kgnsf::models::init_model;
use kgnsf::{EmbeddingModel, KnowledgeGraph, ModelKind, Norm, Query, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_triples(rng: &mut ChaCha8Rng, n: usize, ne: usize, nr: usize) -> Vec<Triple> {
    (0..n)
        .map(|_| Triple::new(rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne)))
        .collect()
}

fn random_graph(seed: u64, ne: usize, nr: usize, n: [usize; 3]) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = random_triples(&mut rng, n[0], ne, nr);
    let valid = random_triples(&mut rng, n[1], ne, nr);
    let test = random_triples(&mut rng, n[2], ne, nr);
    KnowledgeGraph::from_triples(ne, nr, train, valid, test).unwrap()
}

fn all_triples(kg: &KnowledgeGraph) -> Vec<Triple> {
    kg.train.iter().chain(&kg.valid).chain(&kg.test).copied().collect()
}

/// Rank by an explicit loop over every entity, with filtering by a linear
/// scan of all known triples.
fn oracle_rank(model: &EmbeddingModel, known: &[Triple], t: &Triple, head_side: bool, filtered: bool) -> usize {
    let gold = model.score(t).unwrap();
    let mut rank = 1;
    for e in 0..model.n_entities() {
        let cand = if head_side { Triple { head: e, ..*t } } else { Triple { tail: e, ..*t } };
        if cand == *t {
            continue;
        }
        if filtered && known.contains(&cand) {
            continue;
        }
        if model.score(&cand).unwrap() >= gold {
            rank += 1;
        }
    }
    rank
}

#[test]
fn filter_index_matches_exhaustive_scan() {
    let kg = random_graph(1, 12, 3, [20, 5, 5]);
    let known = all_triples(&kg);
    assert_eq!(known.len(), 30);
    let index = FilterIndex::from_triples(&known);
    for h in 0..12 {
        for r in 0..3 {
            for t in 0..12 {
                let tr = Triple::new(h, r, t);
                assert_eq!(index.contains(&tr), known.contains(&tr));
            }
            let scan: Vec<usize> = (0..12).filter(|&t| known.contains(&Triple::new(h, r, t))).collect();
            assert_eq!(index.tails(h, r), scan.as_slice());
            let scan: Vec<usize> = (0..12).filter(|&x| known.contains(&Triple::new(x, r, h))).collect();
            assert_eq!(index.heads(r, h), scan.as_slice());
        }
    }
}

#[test]
fn gold_never_among_filtered_candidates() {
    let kg = random_graph(2, 10, 2, [40, 10, 10]);
    for t in all_triples(&kg) {
        let heads = kg.filtered_candidates(Query::Head { relation: t.relation, tail: t.tail }, t.head).unwrap();
        let tails = kg.filtered_candidates(Query::Tail { head: t.head, relation: t.relation }, t.tail).unwrap();
        assert!(!heads.contains(&t.head));
        assert!(!tails.contains(&t.tail));
    }
}

#[test]
fn ranks_match_brute_force_oracle() {
    for (seed, kind) in [
        (3, ModelKind::TransE(Norm::L1)),
        (4, ModelKind::TransE(Norm::L2)),
        (5, ModelKind::DistMult),
    ] {
        let kg = random_graph(seed, 20, 3, [40, 0, 30]);
        let known = all_triples(&kg);
        let model = init_model(&kg, kind, 6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for filtered in [false, true] {
            let ranks = rank_triples(&model, &kg, &kg.test, filtered).unwrap();
            for (t, r) in kg.test.iter().zip(&ranks) {
                assert_eq!(r.rank_head, oracle_rank(&model, &known, t, true, filtered), "{kind} {t:?}");
                assert_eq!(r.rank_tail, oracle_rank(&model, &known, t, false, filtered), "{kind} {t:?}");
            }
        }
    }
}

#[test]
fn aggregation_matches_per_triple_oracle() {
    let kg = random_graph(6, 20, 3, [40, 0, 30]);
    let known = all_triples(&kg);
    let model = init_model(&kg, ModelKind::DistMult, 5, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    for filtered in [false, true] {
        let mut ranks = Vec::new();
        for t in &kg.test {
            ranks.push(oracle_rank(&model, &known, t, true, filtered));
            ranks.push(oracle_rank(&model, &known, t, false, filtered));
        }
        let n = ranks.len() as f64;
        let report = evaluate_triples(&model, &kg, &kg.test, filtered).unwrap();
        let mrr: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let mr: f64 = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        assert!((report.mrr - mrr).abs() < 1e-12);
        assert!((report.mr - mr).abs() < 1e-12);
        assert_eq!((report.hits1, report.hits3, report.hits10), (hits(1), hits(3), hits(10)));
        assert_eq!(report.n_triples, kg.test.len());
    }
}

#[test]
fn evaluation_is_bit_stable() {
    let kg = random_graph(7, 30, 4, [100, 0, 60]);
    let model = init_model(&kg, ModelKind::TransE(Norm::L2), 8, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let a = evaluate_triples(&model, &kg, &kg.test, true).unwrap();
    for _ in 0..5 {
        let b = evaluate_triples(&model, &kg, &kg.test, true).unwrap();
        assert_eq!(a.mrr.to_bits(), b.mrr.to_bits());
        assert_eq!(a.mr.to_bits(), b.mr.to_bits());
    }
}

#[test]
fn distmult_symmetric_graph_gives_equal_directional_metrics() {
    // Symmetrized KG: (h, r, t) present iff (t, r, h) present.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = random_triples(&mut rng, 25, 15, 2);
    let sym: Vec<Triple> = base.iter().flat_map(|t| [*t, Triple::new(t.tail, t.relation, t.head)]).collect();
    let kg = KnowledgeGraph::from_triples(15, 2, sym.clone(), vec![], sym).unwrap();
    let model = init_model(&kg, ModelKind::DistMult, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let ranks = rank_triples(&model, &kg, &kg.test, true).unwrap();
    let head_sum: f64 = ranks.iter().map(|r| 1.0 / r.rank_head as f64).sum();
    let tail_sum: f64 = ranks.iter().map(|r| 1.0 / r.rank_tail as f64).sum();
    assert!((head_sum - tail_sum).abs() < 1e-12);
}
