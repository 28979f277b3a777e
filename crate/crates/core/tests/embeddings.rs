mod common;

use approx::assert_abs_diff_eq;
use casper::embeddings::{l2_norm, Query};
use casper::par::Exec;
use casper::{EmbeddingTable, Error, LoadOptions, TokenId};
use common::{brute_force, gaussian_rows, gaussian_table, toy, TOY};
use proptest::prelude::*;

#[test]
fn loads_toy_rows_in_order() {
    let t = toy();
    assert_eq!(t.len(), 3);
    assert_eq!(t.dim(), 2);
    assert_eq!(t.tokens(), ["a", "b", "c"]);
    assert_eq!(t.row(TokenId(2)), [-1.0, 0.0]);
    assert_eq!(t.embed("b"), Some(&[0.0, 1.0][..]));
    assert_eq!(t.embed("zzz"), None);
}

#[test]
fn arity_mismatch_reports_line() {
    let err = EmbeddingTable::load("a 1.0 0.0\nb 0.5".as_bytes(), LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MalformedLine(2)), "{err:?}");
    let err = EmbeddingTable::load(
        "a 1.0 0.0\nb 0.5 x\n".as_bytes(),
        LoadOptions {
            limit: None,
            normalize: true,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::MalformedLine(2)), "{err:?}");
}

#[test]
fn limit_truncates() {
    let t = EmbeddingTable::load(
        TOY.as_bytes(),
        LoadOptions {
            limit: Some(2),
            normalize: false,
        },
    )
    .unwrap();
    assert_eq!(t.tokens(), ["a", "b"]);
}

#[test]
fn empty_input_is_an_error() {
    let err = EmbeddingTable::load("\n\n".as_bytes(), LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyTable));
}

#[test]
fn crlf_and_blank_lines() {
    let t = EmbeddingTable::load("a 1 0\r\n\r\nb 0 1\r\n".as_bytes(), LoadOptions::default()).unwrap();
    assert_eq!(t.tokens(), ["a", "b"]);
    assert_eq!(t.row(TokenId(1)), [0.0, 1.0]);
}

#[test]
fn duplicates_keep_first() {
    let t = EmbeddingTable::load("a 1 0\nb 0 1\na 5 5\n".as_bytes(), LoadOptions::default()).unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(t.duplicates(), 1);
    assert_eq!(t.embed("a"), Some(&[1.0, 0.0][..]));
}

#[test]
fn normalized_toy_is_unchanged() {
    let t = EmbeddingTable::load(
        TOY.as_bytes(),
        LoadOptions {
            limit: None,
            normalize: true,
        },
    )
    .unwrap();
    assert!(t.is_normalized());
    assert_eq!(t.embed("a"), Some(&[1.0, 0.0][..]));
}

#[test]
fn token_index_inverts_tokens() {
    let t = gaussian_table(300, 4, 9);
    for (i, tok) in t.tokens().iter().enumerate() {
        assert_eq!(t.id(tok), Some(TokenId(i as u32)));
        assert_eq!(t.token(TokenId(i as u32)), tok);
    }
}

#[test]
fn toy_neighbor_examples() {
    let t = toy();
    let ids = |v: Vec<casper::Neighbor>| v.into_iter().map(|n| n.id.0).collect::<Vec<_>>();
    let nbs = t.nearest_neighbors(&[0.9, 0.1], 2, &[]).unwrap();
    assert_abs_diff_eq!(nbs[0].distance, 0.0061, epsilon = 1e-4);
    assert_abs_diff_eq!(nbs[1].distance, 0.8896, epsilon = 1e-4);
    assert_eq!(ids(nbs), [0, 1]);
    assert_eq!(ids(t.nearest_neighbors(&[0.9, 0.1], 2, &[TokenId(0)]).unwrap()), [1, 2]);
    assert_eq!(ids(t.nearest_neighbors(&[1.0, 0.0], 10, &[]).unwrap()), [0, 1, 2]);
}

#[test]
fn zero_query_rejected() {
    let t = toy();
    assert!(matches!(
        t.nearest_neighbors(&[0.0, 0.0], 1, &[]),
        Err(Error::ZeroQuery)
    ));
    assert!(matches!(
        t.nearest_neighbors(&[1e-13, 0.0], 1, &[]),
        Err(Error::ZeroQuery)
    ));
}

#[test]
fn dimension_mismatch_rejected() {
    let t = toy();
    assert!(matches!(
        t.nearest_neighbors(&[1.0, 0.0, 0.0], 1, &[]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn ties_break_to_lower_id() {
    let t = EmbeddingTable::from_rows([("x", [1.0, 1.0]), ("y", [2.0, 2.0]), ("z", [1.0, 1.0])], false).unwrap();
    let nbs = t.nearest_neighbors(&[3.0, 3.0], 3, &[]).unwrap();
    assert_eq!(nbs.iter().map(|n| n.id.0).collect::<Vec<_>>(), [0, 1, 2]);
}

#[test]
fn batch_matches_single_queries_bitwise() {
    let t = gaussian_table(1500, 37, 3);
    let queries: Vec<Vec<f64>> = gaussian_rows(23, 37, 4).into_iter().map(|(_, r)| r).collect();
    let exclude = [TokenId(5)];
    let qs: Vec<Query<'_>> = queries.iter().map(|q| Query::new(q, &exclude)).collect();
    for exec in [Exec::Sequential, Exec::Parallel] {
        let batch = t.nearest_batch(&qs, 7, exec);
        for (q, b) in queries.iter().zip(batch) {
            assert_eq!(b.unwrap(), t.nearest_neighbors(q, 7, &exclude).unwrap());
        }
    }
}

#[test]
fn large_table_matches_brute_force() {
    let t = gaussian_table(20_000, 50, 11);
    for (_, q) in gaussian_rows(5, 50, 12) {
        let got = t.nearest_neighbors(&q, 10, &[]).unwrap();
        let want = brute_force(&t, &q, 10, &[]);
        assert_eq!(
            got.iter().map(|n| n.id.0).collect::<Vec<_>>(),
            want.iter().map(|w| w.0).collect::<Vec<_>>()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_against_exhaustive_scan(
        n in 1usize..400,
        dim in 1usize..20,
        seed in any::<u64>(),
        k in 1usize..12,
        n_excl in 0usize..4,
    ) {
        let t = gaussian_table(n, dim, seed);
        let q = &gaussian_rows(1, dim, seed ^ 0xabc)[0].1;
        let exclude: Vec<u32> = (0..n_excl as u32).map(|i| (i * 7) % n as u32).collect();
        let ex_ids: Vec<TokenId> = exclude.iter().map(|&i| TokenId(i)).collect();
        let got = t.nearest_neighbors(q, k, &ex_ids).unwrap();
        let want = brute_force(&t, q, k, &exclude);
        prop_assert_eq!(got.len(), want.len());
        prop_assert_eq!(got.len(), k.min(n - {
            let mut e = exclude.clone();
            e.sort_unstable();
            e.dedup();
            e.len()
        }));
        let all = brute_force(&t, q, n, &exclude);
        for (g, w) in got.iter().zip(&want) {
            // Ids may only differ across ties that rounding can reorder.
            let oracle = all.iter().find(|a| a.0 == g.id.0).unwrap().1;
            prop_assert!(g.id.0 == w.0 || (oracle - w.1).abs() < 1e-12);
            prop_assert!((g.distance - w.1).abs() < 1e-12);
            prop_assert!(!exclude.contains(&g.id.0));
        }
        prop_assert!(got.windows(2).all(|p| p[0].distance <= p[1].distance));
    }

    #[test]
    fn self_is_nearest(n in 1usize..200, dim in 1usize..16, seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let t = gaussian_table(n, dim, seed);
        let id = TokenId(pick.index(n) as u32);
        let nbs = t.nearest_neighbors(t.row(id), 1, &[]).unwrap();
        prop_assert!(nbs[0].distance <= 1e-9);
        // Another winner must point the same way and be no farther than the row itself.
        let own = t.cosine_distance(t.row(id), id);
        prop_assert!(nbs[0].id == id || nbs[0].distance <= own);
    }

    #[test]
    fn normalization_is_idempotent(n in 1usize..100, dim in 1usize..16, seed in any::<u64>()) {
        let t = EmbeddingTable::from_rows(gaussian_rows(n, dim, seed), true).unwrap();
        for i in 0..n {
            let row = t.row(TokenId(i as u32));
            prop_assert!((l2_norm(row) - 1.0).abs() <= 1e-9);
        }
        let again = t.normalized();
        for i in 0..n {
            let id = TokenId(i as u32);
            for (a, b) in t.row(id).iter().zip(again.row(id)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ranking_is_deterministic(seed in any::<u64>()) {
        let t = gaussian_table(150, 6, seed);
        let q = &gaussian_rows(1, 6, seed.wrapping_add(1))[0].1;
        prop_assert_eq!(t.nearest_neighbors(q, 20, &[]).unwrap(), t.nearest_neighbors(q, 20, &[]).unwrap());
    }
}
