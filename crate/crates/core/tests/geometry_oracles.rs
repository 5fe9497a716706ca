use persumm_core::geometry::{convex_hull, cosine_distance, fit_pca2, pca2, polygon_area, EmbeddingMatrix, Point2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type P = Point2<f64>;

/// Keeps every point that is not strictly inside a triangle of other
/// points, then orders the survivors by angle around their mean.
fn brute_force_hull_area(points: &[P]) -> f64 {
    let strictly_inside = |p: &P, a: &P, b: &P, c: &P| {
        let s = |u: &P, v: &P| (v.x - u.x) * (p.y - u.y) - (v.y - u.y) * (p.x - u.x);
        let (d1, d2, d3) = (s(a, b), s(b, c), s(c, a));
        (d1 > 0.0 && d2 > 0.0 && d3 > 0.0) || (d1 < 0.0 && d2 < 0.0 && d3 < 0.0)
    };
    let n = points.len();
    let mut keep = Vec::new();
    'outer: for i in 0..n {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if [a, b, c].contains(&i) || a == b || b == c || a == c {
                        continue;
                    }
                    if strictly_inside(&points[i], &points[a], &points[b], &points[c]) {
                        continue 'outer;
                    }
                }
            }
        }
        keep.push(points[i]);
    }
    let cx = keep.iter().map(|p| p.x).sum::<f64>() / keep.len() as f64;
    let cy = keep.iter().map(|p| p.y).sum::<f64>() / keep.len() as f64;
    keep.sort_by(|p, q| (p.y - cy).atan2(p.x - cx).partial_cmp(&(q.y - cy).atan2(q.x - cx)).unwrap());
    let twice: f64 = (0..keep.len())
        .map(|i| {
            let (a, b) = (keep[i], keep[(i + 1) % keep.len()]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice.abs() / 2.0
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<P> {
    (0..n).map(|_| Point2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0))).collect()
}

#[test]
fn hull_area_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.gen_range(3..=50);
        let pts = random_points(&mut rng, n);
        let fast = polygon_area(&convex_hull(&pts));
        let slow = brute_force_hull_area(&pts);
        assert!((fast - slow).abs() <= 1e-9, "case {case}: {fast} vs {slow}");
    }
}

#[test]
fn hull_starts_at_leftmost_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = random_points(&mut rng, 50);
    let hull = convex_hull(&pts);
    assert!((polygon_area(&hull) - brute_force_hull_area(&pts)).abs() < 1e-9);
    assert_eq!(hull[0], *pts.iter().min_by(|a, b| a.x.partial_cmp(&b.x).unwrap()).unwrap());
}

#[test]
fn area_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = rng.gen_range(3..=30);
        let pts = random_points(&mut rng, n);
        let base = polygon_area(&convex_hull(&pts));

        let mut shuffled = pts.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        assert!((polygon_area(&convex_hull(&shuffled)) - base).abs() <= 1e-9);

        let (tx, ty) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
        let moved: Vec<P> = pts.iter().map(|p| Point2::new(p.x + tx, p.y + ty)).collect();
        assert!((polygon_area(&convex_hull(&moved)) - base).abs() <= 1e-9 * base.max(1.0));

        let k: f64 = rng.gen_range(0.1..5.0);
        let scaled: Vec<P> = pts.iter().map(|p| Point2::new(p.x * k, p.y * k)).collect();
        assert!((polygon_area(&convex_hull(&scaled)) - k * k * base).abs() <= 1e-9 * base.max(1.0) * k * k);
    }
}

/// Random rank-2 data: two random directions in R^d with random
/// coefficients plus an offset.
fn rank_two(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix<f64> {
    let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let off: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            (0..d).map(|k| off[k] + a * u[k] + b * v[k]).collect()
        })
        .collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

fn projected_variance(points: &[P]) -> f64 {
    let n = points.len() as f64;
    points.iter().map(|p| p.x * p.x + p.y * p.y).sum::<f64>() / (n - 1.0)
}

#[test]
fn pca_recovers_rank_two_variance_on_all_solver_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // (rows, dim): covariance+Jacobi, Gram+Jacobi, covariance+power.
    for &(n, d) in &[(40, 6), (8, 300), (120, 80)] {
        for _ in 0..5 {
            let m = rank_two(&mut rng, n, d);
            let fit = fit_pca2(&m).unwrap();
            let captured = projected_variance(&fit.points);
            assert!(captured >= 0.9999 * fit.total_variance, "{n}x{d}: {captured} / {}", fit.total_variance);
            assert!((captured - fit.total_variance).abs() <= 1e-9 * fit.total_variance.max(1.0));
        }
    }
}

#[test]
fn pca_rank_one_on_gram_path() {
    let d = 100;
    let dir: Vec<f64> = (0..d).map(|k| ((k * 7 % 13) as f64 - 6.0) / 6.0).collect();
    let rows: Vec<Vec<f64>> = [-1.0, 0.25, 2.0, 3.5].iter().map(|t| dir.iter().map(|x| x * t).collect()).collect();
    let pts = pca2(&EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
    assert!(pts.iter().all(|p| p.y.abs() < 1e-9));
}

proptest! {
    #[test]
    fn hull_contains_every_point(raw in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 0..40)) {
        let pts: Vec<P> = raw.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let hull = convex_hull(&pts);
        if hull.len() >= 3 {
            for p in &pts {
                for i in 0..hull.len() {
                    let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
                    prop_assert!(cross >= -1e-9);
                }
            }
        }
    }

    #[test]
    fn pca_projection_properties(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 3..12)
    ) {
        let m = EmbeddingMatrix::from_rows(&rows).unwrap();
        let fit = fit_pca2(&m).unwrap();
        let n = fit.points.len() as f64;
        let (mx, my) = fit.points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        prop_assert!((mx / n).abs() < 1e-9 && (my / n).abs() < 1e-9);
        let vx: f64 = fit.points.iter().map(|p| p.x * p.x).sum();
        let vy: f64 = fit.points.iter().map(|p| p.y * p.y).sum();
        prop_assert!(vx + 1e-9 >= vy);
        // orthonormal axes
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        prop_assert!((dot(&fit.axes[0], &fit.axes[0]) - 1.0).abs() < 1e-9);
        prop_assert!((dot(&fit.axes[1], &fit.axes[1]) - 1.0).abs() < 1e-9);
        prop_assert!(dot(&fit.axes[0], &fit.axes[1]).abs() < 1e-9);
        prop_assert!(projected_variance(&fit.points) <= fit.total_variance * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn cosine_symmetric_and_zero_for_positive_multiples(
        u in prop::collection::vec(-3.0f64..3.0, 5),
        v in prop::collection::vec(-3.0f64..3.0, 5),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let a = cosine_distance(&u, &v).unwrap();
        let b = cosine_distance(&v, &u).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=2.0).contains(&a));
        let scaled: Vec<f64> = u.iter().map(|x| x * k).collect();
        prop_assert!(cosine_distance(&u, &scaled).unwrap() < 1e-12);
    }
}
