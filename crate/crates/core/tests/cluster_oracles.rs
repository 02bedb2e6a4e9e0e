use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;
use suggestbias::cluster::{kmeans, kmeans_best, label_clusters, select_k, silhouette, DEFAULT_MAX_ITER};
use suggestbias::embed::TokenVectors;

fn tv(points: &[Vec<f64>]) -> TokenVectors<f64> {
    TokenVectors::from_rows((0..points.len()).map(|i| format!("t{i:02}")).collect(), points)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let d = points[0].len();
    let mean: Vec<f64> =
        (0..d).map(|j| members.iter().map(|&i| points[i][j]).sum::<f64>() / members.len() as f64).collect();
    members.iter().map(|&i| sq(&points[i], &mean)).sum()
}

/// Exhaustive optimum over all 2-partitions with both sides nonempty.
fn best_two_partition(points: &[Vec<f64>]) -> (f64, BTreeSet<BTreeSet<usize>>) {
    let n = points.len();
    let mut best = (f64::INFINITY, BTreeSet::new());
    for mask in 1..(1u32 << (n - 1)) {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| mask & (1 << i) != 0);
        let cost = sse(points, &a) + sse(points, &b);
        if cost < best.0 {
            best = (cost, [a.into_iter().collect(), b.into_iter().collect()].into());
        }
    }
    best
}

fn partition_of(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let k = labels.iter().max().unwrap() + 1;
    (0..k).map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect()).collect()
}

#[test]
fn two_triples_match_exhaustive_search() {
    let pts: Vec<Vec<f64>> =
        vec![vec![0.0, 0.0], vec![0.3, 0.1], vec![0.1, 0.4], vec![5.0, 5.0], vec![5.2, 4.9], vec![4.8, 5.3]];
    let m = kmeans(&tv(&pts), 2, 3, DEFAULT_MAX_ITER, 1e-9).unwrap();
    let (cost, part) = best_two_partition(&pts);
    assert_eq!(partition_of(&m.labels), part);
    assert!((m.inertia - cost).abs() <= 1e-12);
}

#[test]
fn model_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| n.sample(&mut rng)).collect()).collect();
    let v = tv(&pts);
    let m = kmeans_best(&v, 5, 1, 4, DEFAULT_MAX_ITER, 1e-6).unwrap();
    // Nearest centroid, lowest index on ties.
    for (i, p) in pts.iter().enumerate() {
        let d: Vec<f64> = m.centroids.iter().map(|c| sq(p, c)).collect();
        let best = (0..m.k).fold(0, |b, c| if d[c] < d[b] { c } else { b });
        assert_eq!(m.labels[i], best);
    }
    let recomputed: f64 = pts.iter().zip(&m.labels).map(|(p, &l)| sq(p, &m.centroids[l])).sum();
    assert!((recomputed - m.inertia).abs() <= 1e-9 * m.inertia);
    assert!(m.cluster_sizes().iter().all(|&s| s > 0));
    assert_eq!(m.assignment().len(), pts.len());
    // Bit-identical on rerun.
    let again = kmeans_best(&v, 5, 1, 4, DEFAULT_MAX_ITER, 1e-6).unwrap();
    assert_eq!(again, m);
}

#[test]
fn two_blobs_choose_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = Normal::new(0.0, 0.3).unwrap();
    let mut pts = Vec::new();
    for c in [[0.0, 0.0], [6.0, 0.0]] {
        for _ in 0..25 {
            pts.push(vec![c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)]);
        }
    }
    let r = select_k(&tv(&pts), 2..=4, 0, 5).unwrap();
    assert_eq!(r.chosen_k, 2);
    assert_eq!(r.rule, "silhouette");
    assert_eq!(r.candidates.len(), 3);
}

#[test]
fn silhouette_matches_direct_formula() {
    let pts: Vec<Vec<f64>> =
        vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![9.0, 9.0], vec![9.1, 9.0], vec![9.0, 9.1]];
    let labels = [0, 0, 0, 1, 1, 1];
    let dist = |i: usize, j: usize| sq(&pts[i], &pts[j]).sqrt();
    let mut total = 0.0;
    for i in 0..6 {
        let own: Vec<usize> = (0..6).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let other: Vec<usize> = (0..6).filter(|&j| labels[j] != labels[i]).collect();
        let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
        let b = other.iter().map(|&j| dist(i, j)).sum::<f64>() / other.len() as f64;
        total += (b - a) / a.max(b);
    }
    let s = silhouette(&tv(&pts), &labels).unwrap();
    assert!((s - total / 6.0).abs() <= 1e-12);
    assert!(s > 0.9);
}

#[test]
fn labels_follow_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..2).map(|_| n.sample(&mut rng)).collect()).collect();
    let v = tv(&pts);
    let m = kmeans(&v, 3, 4, DEFAULT_MAX_ITER, 1e-9).unwrap();
    let labels = label_clusters(&m, &v, 100);
    for c in 0..3 {
        let mut oracle: Vec<(f64, String)> = (0..20)
            .filter(|&i| m.labels[i] == c)
            .map(|i| (sq(&pts[i], &m.centroids[c]).sqrt(), v.tokens[i].clone()))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got: Vec<&str> = labels[c].iter().map(|x| x.0.as_str()).collect();
        let want: Vec<&str> = oracle.iter().map(|x| x.1.as_str()).collect();
        assert_eq!(got, want, "top_n beyond cluster size returns the whole cluster");
    }
    let top2 = label_clusters(&m, &v, 2);
    assert!(top2.iter().all(|l| l.len() <= 2));
}

proptest! {
    // Two separated groups of up to four points: the best-of-restarts model
    // equals the exhaustive optimum, whatever the row order.
    #[test]
    fn permutation_invariant_partition(
        left in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..=4),
        right in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..=4),
        shuffle_seed in any::<u64>(),
    ) {
        let mut pts: Vec<Vec<f64>> = left.iter().map(|p| vec![p.0, p.1]).collect();
        pts.extend(right.iter().map(|p| vec![p.0 + 20.0, p.1]));
        prop_assume!(pts.len() >= 2);
        let (cost, _) = best_two_partition(&pts);
        let m = kmeans_best(&tv(&pts), 2, 0, 10, DEFAULT_MAX_ITER, 1e-12).unwrap();
        prop_assert!((m.inertia - cost).abs() <= 1e-9 * cost.max(1.0));

        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let mp = kmeans_best(&tv(&permuted), 2, 0, 10, DEFAULT_MAX_ITER, 1e-12).unwrap();
        let back: Vec<usize> = {
            let mut l = vec![0; pts.len()];
            for (pos, &i) in order.iter().enumerate() {
                l[i] = mp.labels[pos];
            }
            l
        };
        prop_assert_eq!(partition_of(&back), partition_of(&m.labels));
    }

    #[test]
    fn lloyd_inertia_never_increases(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..2).map(|_| n.sample(&mut rng)).collect()).collect();
        let m = kmeans(&tv(&pts), k, seed, DEFAULT_MAX_ITER, 0.0).unwrap();
        for w in m.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        prop_assert!(m.cluster_sizes().iter().all(|&s| s > 0));
    }
}
