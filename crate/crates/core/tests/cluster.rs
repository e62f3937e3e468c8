mod common;

use std::collections::BTreeSet;

use latent_concepts::cluster::{cut_dendrogram, ward_cluster, ward_cluster_points, ward_distance, ClusterConfig, Clustering};
use latent_concepts::embedstore::EmbeddingMatrix;
use latent_concepts::seed;
use latent_concepts::Error;
use proptest::prelude::*;
use rand::Rng;

use common::{naive_ward, partition_of, sse};

fn config(k: usize) -> ClusterConfig {
    ClusterConfig { k, ..Default::default() }
}

fn random_points(n: usize, d: usize, seed_value: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed_value);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()).collect()
}

fn cluster(points: &[Vec<f64>], k: usize) -> Clustering {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    ward_cluster_points(&flat, points[0].len(), 0, &config(k)).unwrap()
}

#[test]
fn matches_naive_reference_on_random_instances() {
    for case in 0..20 {
        let mut rng = seed::rng(seed::derive(11, &case.to_string()));
        let n = rng.random_range(2..40);
        let d = rng.random_range(1..6);
        let k = rng.random_range(1..=n);
        let points = random_points(n, d, case);
        assert_eq!(partition_of(&cluster(&points, k).assignments), naive_ward(&points, k), "case {case}");
    }
}

#[test]
fn ward_distance_is_sse_increase() {
    let points = random_points(12, 3, 5);
    let (a, b): (Vec<usize>, Vec<usize>) = ((0..5).collect(), (5..12).collect());
    let centroid = |ids: &[usize]| -> Vec<f64> {
        (0..3).map(|j| ids.iter().map(|&i| points[i][j]).sum::<f64>() / ids.len() as f64).collect()
    };
    let ab: Vec<usize> = (0..12).collect();
    let expected = sse(&points, &ab) - sse(&points, &a) - sse(&points, &b);
    let got = ward_distance(&centroid(&a), a.len(), &centroid(&b), b.len()).unwrap();
    assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn ward_distance_rejects_bad_input() {
    assert!(matches!(ward_distance(&[0.0], 1, &[0.0, 1.0], 1), Err(Error::DimensionMismatch { .. })));
    assert!(ward_distance(&[0.0], 0, &[1.0], 1).is_err());
}

#[test]
fn single_cluster_and_singletons() {
    let points = random_points(9, 2, 3);
    let one = cluster(&points, 1);
    assert!(one.assignments.iter().all(|&c| c == 0));
    assert_eq!(one.merge_history.len(), 8);
    let all = cluster(&points, 9);
    assert!(all.merge_history.is_empty());
    assert_eq!(partition_of(&all.assignments).len(), 9);
}

#[test]
fn invalid_k_is_a_config_error() {
    let points = random_points(4, 2, 1);
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    assert!(matches!(ward_cluster_points(&flat, 2, 0, &config(0)), Err(Error::Config(_))));
    assert!(matches!(ward_cluster_points(&flat, 2, 0, &config(5)), Err(Error::Config(_))));
}

#[test]
fn non_finite_input_is_rejected() {
    let m = EmbeddingMatrix::new(0, 2, 1, vec![0.0, f32::NAN]).unwrap();
    assert!(ward_cluster(&m, &config(1)).is_err());
}

#[test]
fn duplicate_points_merge_at_zero_cost() {
    let points = vec![vec![1.0, 1.0], vec![5.0, 5.0], vec![1.0, 1.0], vec![5.0, 5.0]];
    let c = cluster(&points, 2);
    assert_eq!(c.merge_history.iter().map(|m| m.cost).collect::<Vec<_>>(), vec![0.0, 0.0]);
    let expected: BTreeSet<BTreeSet<usize>> = [[0, 2].into(), [1, 3].into()].into();
    assert_eq!(partition_of(&c.assignments), expected);
}

#[test]
fn tags_ordered_by_size_then_smallest_member() {
    // Two tight pairs and a far singleton.
    let points = vec![vec![100.0], vec![0.0], vec![0.1], vec![50.0], vec![50.1]];
    let c = cluster(&points, 3);
    assert_eq!(c.tags, vec!["c0", "c1", "c2"]);
    assert_eq!(c.members(), vec![vec![1, 2], vec![3, 4], vec![0]]);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = cluster(&random_points(15, 2, 8), 4);
    let path = dir.path().join("c.json");
    c.save(&path).unwrap();
    assert_eq!(Clustering::load(&path).unwrap(), c);
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (2usize..30, 1usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), n),
            1..=n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn produces_exactly_k_nonempty_disjoint_clusters((points, k) in instance()) {
        let c = cluster(&points, k);
        let groups = partition_of(&c.assignments);
        prop_assert_eq!(groups.len(), k);
        prop_assert_eq!(groups.iter().map(BTreeSet::len).sum::<usize>(), points.len());
        prop_assert_eq!(c.tags.len(), k);
        prop_assert_eq!(c.merge_history.len(), points.len() - k);
    }

    #[test]
    fn merge_costs_are_non_decreasing((points, k) in instance()) {
        let c = cluster(&points, k);
        for w in c.merge_history.windows(2) {
            prop_assert!(w[0].cost <= w[1].cost);
        }
    }

    #[test]
    fn deterministic((points, k) in instance()) {
        prop_assert_eq!(cluster(&points, k), cluster(&points, k));
    }

    #[test]
    fn cutting_history_at_k_reproduces_assignments((points, k) in instance()) {
        let c = cluster(&points, k);
        prop_assert_eq!(cut_dendrogram(&c.merge_history, points.len(), k).unwrap(), c.assignments.clone());
    }

    #[test]
    fn finer_cut_refines_partition((points, k) in instance()) {
        prop_assume!(k < points.len());
        let c = cluster(&points, k);
        let fine = c.cut(k + 1).unwrap();
        // The truncated history cannot go coarser than K.
        if k > 1 {
            prop_assert!(c.cut(k - 1).is_err());
        }
        for i in 0..points.len() {
            for j in 0..points.len() {
                if fine[i] == fine[j] {
                    prop_assert_eq!(c.assignments[i], c.assignments[j]);
                }
            }
        }
    }

    #[test]
    fn partition_invariant_to_row_order((points, k) in instance(), shift in 0usize..29) {
        let n = points.len();
        let rotated: Vec<Vec<f64>> = (0..n).map(|i| points[(i + shift) % n].clone()).collect();
        let original = partition_of(&cluster(&points, k).assignments);
        let back: BTreeSet<BTreeSet<usize>> = partition_of(&cluster(&rotated, k).assignments)
            .into_iter()
            .map(|g| g.into_iter().map(|i| (i + shift) % n).collect())
            .collect();
        prop_assert_eq!(back, original);
    }

    #[test]
    fn ward_distance_symmetric_and_non_negative(
        a in prop::collection::vec(-50.0f64..50.0, 4),
        b in prop::collection::vec(-50.0f64..50.0, 4),
        na in 1usize..100,
        nb in 1usize..100,
    ) {
        let ab = ward_distance(&a, na, &b, nb).unwrap();
        let ba = ward_distance(&b, nb, &a, na).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ward_distance(&a, na, &a, nb).unwrap(), 0.0);
    }
}
