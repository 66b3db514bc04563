use manireg::bounds::eta_bound;
use manireg::classify::{probit_objective, ProbitProblem};
use manireg::experiments::metrics::{masked_distance_report, Mask};
use manireg::graph::{epsilon_graph, knn_restrict, laplacian, self_tuning_graph, KnnRule, LaplacianKind};
use manireg::linalg::{pairwise_distances, symmetric_eigh};
use manireg::pointcloud::{add_noise, sample_sphere, sample_two_moons, NoiseSpec, PointCloud};
use manireg::regularize::{regularize, RegularizerSpec};
use ndarray::Array2;
use proptest::prelude::*;

fn cloud(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (4..max_n, 1..4usize).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-2.0f64..2.0, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn permute_rows(p: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    p.select(ndarray::Axis(0), perm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn samplers_are_deterministic_and_noise_is_bounded(seed in any::<u64>(), sigma in 0.0f64..0.8, d in 3..8usize) {
        let a = sample_sphere(40, 2, d, seed).unwrap();
        let b = sample_sphere(40, 2, d, seed).unwrap();
        prop_assert_eq!(a.points(), b.points());
        for row in a.points().rows() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() <= 1e-12);
        }
        for spec in [NoiseSpec::ambient_ball(sigma), NoiseSpec::normal_space(sigma)] {
            let y = add_noise(&a, &spec, seed ^ 1).unwrap();
            let again = add_noise(&a, &spec, seed ^ 1).unwrap();
            prop_assert_eq!(y.points(), again.points());
            for (p, q) in y.points().rows().into_iter().zip(a.points().rows()) {
                let z = &p - &q;
                prop_assert!(z.dot(&z).sqrt() <= sigma * (1.0 + 1e-12));
            }
        }
        let (m1, t1) = sample_two_moons(30, d, seed).unwrap();
        let (m2, t2) = sample_two_moons(30, d, seed).unwrap();
        prop_assert_eq!(m1.points(), m2.points());
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn regularizers_stay_in_the_bounding_box(p in cloud(30), r in 0.05f64..3.0, k in 1..3usize) {
        // the box is a necessary condition for lying in the convex hull
        let c = PointCloud::new(p.clone(), 1).unwrap();
        let specs = [RegularizerSpec::Ball { r }, RegularizerSpec::Knn { k }, RegularizerSpec::SelfTuning { k }];
        for spec in specs {
            let out = match regularize(&c, &spec) {
                Ok(o) => o,
                Err(_) => continue,
            };
            for j in 0..p.ncols() {
                let col = p.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for v in out.points().column(j) {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn graphs_are_symmetric_with_psd_laplacians(p in cloud(35), eps in 0.3f64..3.0, k in 1..5usize) {
        let d = pairwise_distances(p.view());
        let n = p.nrows();
        let st = self_tuning_graph(d.view(), k.min(n - 1));
        let mut graphs = vec![epsilon_graph(d.view(), eps, 2, 1.0).unwrap()];
        if let Ok(g) = st {
            graphs.push(knn_restrict(&g, d.view(), k, KnnRule::Union).unwrap());
            graphs.push(knn_restrict(&g, d.view(), k, KnnRule::Mutual).unwrap());
            graphs.push(g);
        }
        for g in &graphs {
            let w = g.to_dense_offdiag();
            prop_assert_eq!(&w, &w.t().to_owned());
            let l = laplacian(g, LaplacianKind::Unnormalized).unwrap().as_dense();
            let row_sums = l.sum_axis(ndarray::Axis(1));
            let scale = 1.0 + l.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(row_sums.iter().all(|s| s.abs() <= 1e-12 * scale * n as f64));
            let (values, _) = symmetric_eigh(&l);
            prop_assert!(values[0] >= -1e-8 * scale);
        }
    }

    #[test]
    fn probit_objective_is_midpoint_convex(seed in any::<u64>(), t in 0.0f64..1.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = Array2::from_shape_fn((25, 2), |_| rng.random::<f64>());
        let g = self_tuning_graph(pairwise_distances(p.view()).view(), 4).unwrap();
        let prob = ProbitProblem::from_graph(&g, vec![(0, 1), (7, -1), (13, 1)], 0.1).unwrap();
        let centred = |v: Vec<f64>| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.into_iter().map(|x| x - mean).collect::<Vec<_>>()
        };
        let u = centred((0..25).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect());
        let v = centred((0..25).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect());
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = probit_objective(&prob, &mix);
        let rhs = t * probit_objective(&prob, &u) + (1.0 - t) * probit_objective(&prob, &v);
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn masked_report_is_permutation_invariant(seed in any::<u64>(), k in 2..6usize) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let x = sample_sphere(40, 2, 5, seed).unwrap();
        let y = add_noise(&x, &NoiseSpec::ambient_ball(0.2), seed ^ 7).unwrap();
        let ybar = regularize(&y, &RegularizerSpec::Ball { r: 0.4 }).unwrap();
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pc = |c: &PointCloud| PointCloud::new(permute_rows(&c.points().to_owned(), &perm), 2).unwrap();
        for mask in [Mask::Epsilon(0.7), Mask::MutualKnn(k)] {
            let a = masked_distance_report(&x, &y, &ybar, mask).unwrap();
            let b = masked_distance_report(&pc(&x), &pc(&y), &pc(&ybar), mask).unwrap();
            prop_assert_eq!(a.pair_count, b.pair_count);
            prop_assert!((a.frob_raw - b.frob_raw).abs() <= 1e-10 * (1.0 + a.frob_raw));
            prop_assert!((a.frob_reg - b.frob_reg).abs() <= 1e-10 * (1.0 + a.frob_reg));
        }
    }

    #[test]
    fn eta_bound_is_convex_in_r(sigma in 1e-4f64..0.5, r in 0.01f64..2.0, h in 1e-3f64..0.1) {
        let second = eta_bound(r + h, sigma, 1.0) - 2.0 * eta_bound(r, sigma, 1.0) + eta_bound((r - h).max(1e-6), sigma, 1.0);
        prop_assume!(r - h > 1e-6);
        prop_assert!(second >= -1e-12 * eta_bound(r, sigma, 1.0));
    }
}
