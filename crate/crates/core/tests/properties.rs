use std::fs;

use kgnsf::data::load_knowledge_graph;
use kgnsf::evaluation::{evaluate_triples, rank_triples};
use kgnsf::losses::{bt_loss, hsic_loss, nsf_loss};
use kgnsf::models::{decode_checkpoint, encode_checkpoint, Batch};
use kgnsf::tensor::{cross_correlation, gather_rows, scatter_add_rows, standardize_columns, STANDARDIZE_EPS};
use kgnsf::whiten::shuffled_dbn;
use kgnsf::{EmbeddingModel, KnowledgeGraph, LossConfig, Matrix, ModelKind, Norm, Objective, PairForm, Triple};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Matrices with entries in [-5, 5]; rows ≥ 3 so random columns are
/// almost surely non-degenerate.
fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn matrix_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (3usize..12, 1usize..6).prop_flat_map(|(r, c)| {
        let m = move || prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap());
        (m(), m())
    })
}

fn column_scales(cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..100.0, cols)
}

fn scale_columns(m: &Matrix, s: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * s[j])
}

fn well_spread(m: &Matrix) -> bool {
    let c = m.center_columns();
    (0..c.cols()).all(|j| c.column(j).iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

fn kind() -> impl Strategy<Value = ModelKind> {
    prop_oneof![
        Just(ModelKind::TransE(Norm::L1)),
        Just(ModelKind::TransE(Norm::L2)),
        Just(ModelKind::DistMult)
    ]
}

fn toy_setup() -> impl Strategy<Value = (KnowledgeGraph, EmbeddingModel)> {
    (kind(), any::<u64>(), 5usize..15, 1usize..4, 5usize..30).prop_map(|(kind, seed, ne, nr, n)| {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<Triple> {
            (0..n)
                .map(|_| Triple::new(rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne)))
                .collect()
        };
        let (train, test) = (draw(n), draw(n / 2 + 1));
        let kg = KnowledgeGraph::from_triples(ne, nr, train, vec![], test).unwrap();
        let model = EmbeddingModel::random(ne, nr, kind, 4, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        (kg, model)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standardized_columns_are_centered_unit_vectors(x in matrix(2..20, 1..8)) {
        prop_assume!(well_spread(&x));
        let z = standardize_columns(&x, STANDARDIZE_EPS).unwrap();
        for j in 0..z.cols() {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_correlation_has_unit_diagonal(x in matrix(3..20, 1..8)) {
        prop_assume!(well_spread(&x));
        let c = cross_correlation(&x, &x).unwrap().c;
        for i in 0..c.rows() {
            prop_assert!((c[(i, i)] - 1.0).abs() < 1e-12);
        }
        let bt = bt_loss(&x, &x, 0.5).unwrap();
        prop_assert!(bt.invariance_term.abs() < 1e-20);
    }

    #[test]
    fn correlation_and_losses_ignore_positive_column_rescaling(
        (x, y) in matrix_pair(),
        sx in column_scales(6),
        sy in column_scales(6),
        lambda in 0.0f64..2.0,
    ) {
        prop_assume!(well_spread(&x) && well_spread(&y));
        let (x2, y2) = (scale_columns(&x, &sx), scale_columns(&y, &sy));
        let c1 = cross_correlation(&x, &y).unwrap().c;
        let c2 = cross_correlation(&x2, &y2).unwrap().c;
        for (a, b) in c1.as_slice().iter().zip(c2.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for f in [bt_loss, hsic_loss] {
            let a = f(&x, &y, lambda).unwrap().total;
            let b = f(&x2, &y2, lambda).unwrap().total;
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn correlation_entries_are_bounded((x, y) in matrix_pair()) {
        let c = cross_correlation(&x, &y).unwrap().c;
        prop_assert!(c.as_slice().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        prop_assert!(bt_loss(&x, &y, 1.0).unwrap().total >= 0.0);
    }

    #[test]
    fn nsf_loss_is_the_alpha_weighted_sum_of_both_terms(
        seed in any::<u64>(),
        alpha in 0.0f64..=1.0,
        bilinear in any::<bool>(),
        hsic in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = |rng: &mut ChaCha8Rng| {
            use rand::Rng;
            Matrix::from_fn(12, 5, |_, _| rng.gen_range(-1.0..1.0))
        };
        let (h, r, t) = (m(&mut rng), m(&mut rng), m(&mut rng));
        let form = if bilinear { PairForm::Bilinear } else { PairForm::Translational };
        let batch = Batch::from_matrices(form, h, r, t, None, &mut rng).unwrap();
        let objective = if hsic { Objective::Hsic } else { Objective::Bt };
        let lambda = 1.0 / 5.0;
        let pair = if hsic { hsic_loss } else { bt_loss };
        let first = pair(&batch.h_pipe, &batch.t, lambda).unwrap().total;
        let second = pair(&batch.h, &batch.t_pipe, lambda).unwrap().total;
        let total = |a: f64| {
            nsf_loss(&batch, &LossConfig { objective, alpha: a, ..Default::default() }).unwrap().0.total
        };
        let expected = alpha * first + (1.0 - alpha) * second;
        prop_assert!((total(alpha) - expected).abs() < 1e-10 * (1.0 + expected.abs()));
        let swapped = (1.0 - alpha) * first + alpha * second;
        prop_assert!((total(1.0 - alpha) - swapped).abs() < 1e-10 * (1.0 + swapped.abs()));
    }

    #[test]
    fn shuffled_dbn_whitens_every_group(x in matrix(64..96, 1..13), seed in any::<u64>(), group in 1usize..6) {
        let (y, state) = shuffled_dbn(&x, group, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = y.rows() as f64;
        for j in 0..y.cols() {
            prop_assert!(y.column(j).iter().sum::<f64>().abs() / b < 1e-10);
        }
        for chunk in state.permutation.chunks(group) {
            for &p in chunk {
                for &q in chunk {
                    let cov: f64 = (0..y.rows()).map(|i| y[(i, p)] * y[(i, q)]).sum::<f64>() / b;
                    let target = if p == q { 1.0 } else { 0.0 };
                    prop_assert!((cov - target).abs() < 1e-6, "cov[{p},{q}] = {cov}");
                }
            }
        }
    }

    #[test]
    fn shuffled_dbn_is_deterministic_per_seed(x in matrix(8..16, 2..8), seed in any::<u64>()) {
        let a = shuffled_dbn(&x, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = shuffled_dbn(&x, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1.permutation, b.1.permutation);
    }

    #[test]
    fn gather_then_scatter_accumulates_counts(ids in prop::collection::vec(0usize..6, 1..20)) {
        let table = Matrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64);
        let rows = gather_rows(&table, &ids).unwrap();
        for (k, &id) in ids.iter().enumerate() {
            prop_assert_eq!(rows.row(k), table.row(id));
        }
        let mut acc = Matrix::zeros(6, 2);
        scatter_add_rows(&mut acc, &ids, &Matrix::from_fn(ids.len(), 2, |_, _| 1.0)).unwrap();
        for i in 0..6 {
            let n = ids.iter().filter(|&&id| id == i).count() as f64;
            prop_assert_eq!(acc.row(i), &[n, n][..]);
        }
    }

    #[test]
    fn scores_obey_model_identities(seed in any::<u64>(), kind in kind(), h in 0usize..7, r in 0usize..3, t in 0usize..7) {
        let model = EmbeddingModel::random(7, 3, kind, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let s = model.score(&Triple::new(h, r, t)).unwrap();
        let tails = model.score_all_tails(h, r).unwrap();
        let heads = model.score_all_heads(r, t).unwrap();
        prop_assert!((tails[t] - s).abs() < 1e-10);
        prop_assert!((heads[h] - s).abs() < 1e-10);
        match kind {
            ModelKind::DistMult => {
                let swapped = model.score(&Triple::new(t, r, h)).unwrap();
                prop_assert!((swapped - s).abs() < 1e-12);
            }
            ModelKind::TransE(p) => {
                let (hv, rv, tv) = (model.entities.row(h), model.relations.row(r), model.entities.row(t));
                let via_head = p.of(hv.iter().zip(rv).zip(tv).map(|((a, b), c)| (a + b) - c));
                let via_tail = p.of(hv.iter().zip(rv).zip(tv).map(|((a, b), c)| a - (c - b)));
                prop_assert!((s + via_head).abs() < 1e-12);
                prop_assert!((s + via_tail).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip(seed in any::<u64>(), kind in kind(), ne in 1usize..9, nr in 1usize..4, d in 1usize..6) {
        let model = EmbeddingModel::random(ne, nr, kind, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bytes = encode_checkpoint(&model);
        prop_assert_eq!(bytes.len(), 31 + 8 * (ne + nr) * d);
        prop_assert_eq!(decode_checkpoint(&bytes).unwrap(), model);
        prop_assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn filtered_ranks_never_exceed_raw_ranks((kg, model) in toy_setup()) {
        let raw = rank_triples(&model, &kg, &kg.test, false).unwrap();
        let filt = rank_triples(&model, &kg, &kg.test, true).unwrap();
        for (r, f) in raw.iter().zip(&filt) {
            prop_assert!(f.rank_head <= r.rank_head && f.rank_tail <= r.rank_tail);
            prop_assert!(f.rank_head >= 1 && f.rank_tail >= 1);
        }
    }

    #[test]
    fn metric_bounds((kg, model) in toy_setup(), filtered in any::<bool>()) {
        let m = evaluate_triples(&model, &kg, &kg.test, filtered).unwrap();
        prop_assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10 && m.hits10 <= 1.0);
        prop_assert!(m.mrr >= m.hits1 && m.mrr <= 1.0);
        prop_assert!(m.mr >= 1.0 && m.mr <= kg.n_entities() as f64);
        prop_assert!(m.mrr * m.mr >= 1.0 - 1e-12);
    }

    #[test]
    fn positive_rescaling_of_scores_leaves_metrics_unchanged((kg, model) in toy_setup(), k in -3i32..4) {
        // Scaling every table by c = 2^k > 0 multiplies TransE scores by c and
        // DistMult scores by c³, both strictly increasing maps; powers of two
        // keep the arithmetic exact.
        let c = 2f64.powi(k);
        let scaled = EmbeddingModel {
            kind: model.kind,
            entities: model.entities.scale(c),
            relations: model.relations.scale(c),
        };
        for filtered in [false, true] {
            let a = evaluate_triples(&model, &kg, &kg.test, filtered).unwrap();
            let b = evaluate_triples(&scaled, &kg, &kg.test, filtered).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn labels_roundtrip_through_ids(
        rows in prop::collection::vec(("[a-z]{1,4}", "[A-Z]{1,2}", "[a-z]{1,4}"), 1..25),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let body: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
        let paths = ["train", "valid", "test"].map(|n| dir.path().join(n));
        fs::write(&paths[0], &body).unwrap();
        fs::write(&paths[1], "").unwrap();
        fs::write(&paths[2], "").unwrap();
        let kg = load_knowledge_graph(&paths[0], &paths[1], &paths[2]).unwrap();
        prop_assert_eq!(kg.train.len(), rows.len());
        for ((h, r, t), triple) in rows.iter().zip(&kg.train) {
            prop_assert_eq!(kg.entities.label(triple.head), Some(h.as_str()));
            prop_assert_eq!(kg.relations.label(triple.relation), Some(r.as_str()));
            prop_assert_eq!(kg.entities.label(triple.tail), Some(t.as_str()));
            prop_assert_eq!(kg.entities.id(h), Some(triple.head));
        }
    }
}
