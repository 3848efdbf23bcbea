use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use viewgraph::cost::{viewing_graph_cost, DirectionMetric};
use viewgraph::datagen::{generate, SynthSpec};
use viewgraph::io::GraphFile;
use viewgraph::transolve::{solve_ls1, solve_ls2, DirectionSet};
use viewgraph::types::{EdgeScales, Rotation, Vec3, Weights};

fn spec(n: usize, noise: f64, seed: u64) -> SynthSpec {
    SynthSpec { n, density: 0.5, rot_noise_deg: noise, dir_noise_deg: noise, seed, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graph_files_round_trip(n in 2usize..25, noise in 0.0f64..10.0, seed in any::<u64>()) {
        let (graph, gt) = generate(&spec(n, noise, seed)).unwrap();
        let file = GraphFile { graph, truth: Some(gt.poses) };
        let text = file.render();
        let back = GraphFile::parse(&text).unwrap();
        prop_assert_eq!(back.graph.edge_count(), file.graph.edge_count());
        for (a, b) in back.graph.edges().iter().zip(file.graph.edges()) {
            prop_assert_eq!((a.i, a.j), (b.i, b.j));
            prop_assert!((a.rel_rotation.matrix() - b.rel_rotation.matrix()).norm() < 1e-12);
            prop_assert!((a.direction_local.as_vec() - b.direction_local.as_vec()).norm() < 1e-12);
        }
        prop_assert_eq!(back.render(), text);
    }

    #[test]
    fn cost_is_gauge_invariant(
        n in 3usize..15,
        seed in any::<u64>(),
        scale in 0.05f64..20.0,
        t in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let (g, gt) = generate(&spec(n, 4.0, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let gauge = Rotation::random(&mut rng);
        let moved = gt.poses.transformed(&gauge, &Vec3::from(t), scale);
        let w = Weights::uniform(g.edge_count());
        for m in [DirectionMetric::ChordalDirection, DirectionMetric::OrthogonalDirection] {
            let a = viewing_graph_cost(&g, &gt.poses, 1.0, &w, m).unwrap();
            let b = viewing_graph_cost(&g, &moved, 1.0, &w, m).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12), "{:?}: {} vs {}", m, a, b);
        }
    }

    #[test]
    fn least_squares_layouts_are_centred(n in 3usize..20, seed in any::<u64>(), lo in 0.2f64..1.0) {
        let (g, gt) = generate(&spec(n, 3.0, seed)).unwrap();
        let d = DirectionSet::from_graph(&g, &gt.poses.rotations);
        let scales = EdgeScales((0..d.edge_count()).map(|e| lo + (e % 5) as f64 * 0.3).collect());
        for p in [solve_ls1(&d, &scales).unwrap(), solve_ls2(&d, &scales).unwrap()] {
            let centroid: Vec3 = p.iter().sum::<Vec3>() / p.len() as f64;
            let spread = p.iter().map(|x| x.norm()).fold(0.0, f64::max);
            prop_assert!(centroid.norm() <= 1e-12 * spread.max(1.0));
        }
    }
}
