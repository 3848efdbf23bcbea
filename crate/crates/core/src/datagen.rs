//! Synthetic viewing graphs with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UnionFind;
use crate::types::{Edge, PoseEstimate, Rotation, UnitVector3, Vec3, ViewingGraph};

/// Camera placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Layout {
    /// Uniform in `[-1, 1]^3`.
    UniformCube,
    /// Two clusters centred at `+-0.5 e_x` (unit separation), each a cube of
    /// side `1.5 / ratio`, so typical intra-cluster distances are about
    /// `1 / ratio`. Vertices alternate between clusters.
    TwoCluster { ratio: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    /// Independent edge probability.
    pub density: f64,
    /// Scale (degrees) of the folded-normal rotation noise angle.
    pub rot_noise_deg: f64,
    /// Scale (degrees) of the folded-normal direction noise angle.
    pub dir_noise_deg: f64,
    /// Probability that an edge is replaced by random observations.
    pub outlier_frac: f64,
    pub layout: Layout,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 50,
            density: 0.2,
            rot_noise_deg: 0.0,
            dir_noise_deg: 0.0,
            outlier_frac: 0.0,
            layout: Layout::UniformCube,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.into()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must lie in (0, 1]");
        }
        if !(self.rot_noise_deg >= 0.0 && self.rot_noise_deg.is_finite())
            || !(self.dir_noise_deg >= 0.0 && self.dir_noise_deg.is_finite())
        {
            return bad("noise levels must be finite and non-negative");
        }
        if !(self.outlier_frac >= 0.0 && self.outlier_frac < 1.0) {
            return bad("outlier fraction must lie in [0, 1)");
        }
        if let Layout::TwoCluster { ratio } = self.layout {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return bad("cluster ratio must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub poses: PoseEstimate,
    /// `None` for hand-built fixtures.
    pub spec: Option<SynthSpec>,
}

fn uniform_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn folded_normal_rad<R: Rng + ?Sized>(rng: &mut R, scale_deg: f64) -> f64 {
    if scale_deg == 0.0 {
        return 0.0;
    }
    let z: f64 = Normal::new(0.0, scale_deg).expect("finite scale").sample(rng);
    z.abs().to_radians()
}

/// Unit axis orthogonal to `u`, uniform on that great circle.
fn orthogonal_axis<R: Rng + ?Sized>(rng: &mut R, u: &Vec3) -> Vec3 {
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = u.cross(&helper).normalize();
    let b = u.cross(&a);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    a * phi.cos() + b * phi.sin()
}

/// Rotates `u` by `angle` about an axis orthogonal to it, so the result is
/// exactly `angle` away from `u`.
fn tilt<R: Rng + ?Sized>(rng: &mut R, u: &Vec3, angle: f64) -> UnitVector3 {
    let axis = orthogonal_axis(rng, u);
    UnitVector3::new_normalize(Rotation::about_axis(&axis, angle) * *u).expect("rotated unit vector")
}

fn sample_positions<R: Rng + ?Sized>(rng: &mut R, n: usize, layout: Layout) -> Vec<Vec3> {
    let mut cube = |half: f64| {
        Vec3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        )
    };
    match layout {
        Layout::UniformCube => (0..n).map(|_| cube(1.0)).collect(),
        Layout::TwoCluster { ratio } => {
            let half = 0.75 / ratio;
            (0..n)
                .map(|i| {
                    let centre = if i % 2 == 0 { -0.5 } else { 0.5 };
                    Vec3::new(centre, 0.0, 0.0) + cube(half)
                })
                .collect()
        }
    }
}

/// Samples ground truth and noisy observations. Deterministic in `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<(ViewingGraph, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let positions = sample_positions(&mut rng, n, spec.layout);
    let rotations: Vec<Rotation> = (0..n).map(|_| Rotation::random(&mut rng)).collect();

    let mut adjacent = vec![vec![false; n]; n];
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < spec.density {
                adjacent[i][j] = true;
                uf.union(i, j);
            }
        }
    }
    // Vertices 0..v are already joined to 0 when v is visited.
    for v in 1..n {
        if uf.find_mut(v) != uf.find_mut(0) {
            let u = rng.random_range(0..v);
            adjacent[u][v] = true;
            uf.union(u, v);
        }
    }

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !adjacent[i][j] {
                continue;
            }
            let (rel, dir) = if spec.outlier_frac > 0.0 && rng.random::<f64>() < spec.outlier_frac {
                let r = Rotation::random(&mut rng);
                (r, UnitVector3::new_normalize(uniform_unit(&mut rng)).expect("unit"))
            } else {
                let truth = rotations[j].transpose() * rotations[i];
                let angle = folded_normal_rad(&mut rng, spec.rot_noise_deg);
                let axis = uniform_unit(&mut rng);
                let rel = Rotation::about_axis(&axis, angle) * truth;
                let local = rotations[i].transpose() * (positions[j] - positions[i]).normalize();
                let angle = folded_normal_rad(&mut rng, spec.dir_noise_deg);
                (rel, tilt(&mut rng, &local, angle))
            };
            edges.push(Edge { i, j, rel_rotation: rel, direction_local: dir });
        }
    }
    let graph = ViewingGraph::new(n, edges)?;
    let poses = PoseEstimate::new(rotations, positions)?;
    Ok((graph, GroundTruth { poses, spec: Some(spec.clone()) }))
}

/// Seed for the direction perturbations of [`six_vertex_fixture`].
pub const FIXTURE_SEED: u64 = 11;

/// Exact angular perturbation of every fixture direction.
pub const FIXTURE_NOISE_DEG: f64 = 5.0;

/// Six cameras: a rhombus `(+-2, 0, 0), (0, +-1, 0)` and a close pair
/// `(+-0.05, 0, 0)` near its centre. Fully connected, exact relative
/// rotations, every direction tilted by exactly 5 degrees.
pub fn six_vertex_fixture() -> (ViewingGraph, GroundTruth) {
    six_vertex_fixture_seeded(FIXTURE_SEED)
}

/// [`six_vertex_fixture`] with another seed for rotations and tilt axes.
pub fn six_vertex_fixture_seeded(seed: u64) -> (ViewingGraph, GroundTruth) {
    let positions = vec![
        Vec3::new(2.0, 0.0, 0.0),
        Vec3::new(-2.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.05, 0.0, 0.0),
        Vec3::new(-0.05, 0.0, 0.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations: Vec<Rotation> = (0..6).map(|_| Rotation::random(&mut rng)).collect();
    let mut edges = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            let local = rotations[i].transpose() * (positions[j] - positions[i]).normalize();
            edges.push(Edge {
                i,
                j,
                rel_rotation: rotations[j].transpose() * rotations[i],
                direction_local: tilt(&mut rng, &local, FIXTURE_NOISE_DEG.to_radians()),
            });
        }
    }
    let graph = ViewingGraph::new(6, edges).expect("complete graph");
    let poses = PoseEstimate::new(rotations, positions).expect("valid poses");
    (graph, GroundTruth { poses, spec: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{viewing_graph_cost, DirectionMetric};
    use crate::metrics::transport_direction;
    use crate::types::Weights;

    #[test]
    fn noiseless_graph_has_zero_cost_at_truth() {
        let spec = SynthSpec { n: 30, density: 0.3, seed: 3, ..Default::default() };
        let (g, gt) = generate(&spec).unwrap();
        for metric in [DirectionMetric::ChordalDirection, DirectionMetric::OrthogonalDirection] {
            let c = viewing_graph_cost(&g, &gt.poses, 1.0, &Weights::uniform(g.edge_count()), metric).unwrap();
            assert!(c <= 1e-18, "{c}");
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let spec = SynthSpec { n: 40, rot_noise_deg: 3.0, dir_noise_deg: 3.0, outlier_frac: 0.1, seed: 9, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn sparse_density_stays_connected() {
        for seed in 0..10 {
            let spec = SynthSpec { n: 60, density: 0.005, seed, ..Default::default() };
            let (g, _) = generate(&spec).unwrap();
            assert!(g.edge_count() >= 59);
        }
        let (g, _) = generate(&SynthSpec { n: 2, density: 1.0, ..Default::default() }).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            SynthSpec { n: 1, ..Default::default() },
            SynthSpec { density: 0.0, ..Default::default() },
            SynthSpec { density: 1.5, ..Default::default() },
            SynthSpec { dir_noise_deg: -1.0, ..Default::default() },
            SynthSpec { outlier_frac: 1.0, ..Default::default() },
            SynthSpec { layout: Layout::TwoCluster { ratio: 0.0 }, ..Default::default() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    fn direction_errors(spec: &SynthSpec) -> Vec<(f64, Vec3, Vec3)> {
        let (g, gt) = generate(spec).unwrap();
        let (r, p) = (&gt.poses.rotations, &gt.poses.positions);
        g.edges()
            .iter()
            .map(|e| {
                let truth = (p[e.j] - p[e.i]).normalize();
                let obs = transport_direction(&r[e.i], &e.direction_local);
                (obs.as_vec().dot(&truth).clamp(-1.0, 1.0).acos().to_degrees(), truth, *obs.as_vec())
            })
            .collect()
    }

    #[test]
    fn direction_noise_magnitude() {
        let spec = SynthSpec { n: 80, density: 0.4, dir_noise_deg: 5.0, seed: 1, ..Default::default() };
        let errs = direction_errors(&spec);
        assert!(errs.len() >= 1000);
        let mean = errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64;
        assert!((3.0..=7.0).contains(&mean), "{mean}");
    }

    #[test]
    fn direction_noise_is_unbiased() {
        // Signed deviation along a fixed tangent frame of each true direction.
        let spec = SynthSpec { n: 150, density: 0.9, dir_noise_deg: 5.0, seed: 2, ..Default::default() };
        let errs = direction_errors(&spec);
        assert!(errs.len() >= 10_000);
        let (mut sa, mut sb) = (0.0, 0.0);
        for (_, t, o) in &errs {
            let helper = if t.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let a = t.cross(&helper).normalize();
            let b = t.cross(&a);
            sa += o.dot(&a).asin().to_degrees();
            sb += o.dot(&b).asin().to_degrees();
        }
        let m = errs.len() as f64;
        assert!((sa / m).abs() < 0.2 && (sb / m).abs() < 0.2, "{} {}", sa / m, sb / m);
    }

    #[test]
    fn two_cluster_distances_are_bimodal() {
        let spec = SynthSpec { n: 60, density: 1.0, layout: Layout::TwoCluster { ratio: 10.0 }, seed: 4, ..Default::default() };
        let (_, gt) = generate(&spec).unwrap();
        let p = &gt.poses.positions;
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..60 {
            for j in i + 1..60 {
                let d = (p[j] - p[i]).norm();
                if i % 2 == j % 2 { intra.push(d) } else { inter.push(d) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ratio = mean(&inter) / mean(&intra);
        assert!((7.0..14.0).contains(&ratio), "{ratio}");
        assert!(intra.iter().cloned().fold(0.0, f64::max) < inter.iter().cloned().fold(f64::MAX, f64::min));
    }

    #[test]
    fn fixture_matches_description() {
        let (g, gt) = six_vertex_fixture();
        assert_eq!(g.edge_count(), 15);
        let (r, p) = (&gt.poses.rotations, &gt.poses.positions);
        for e in g.edges() {
            let rel = r[e.j].transpose() * r[e.i];
            assert!((rel.matrix() - e.rel_rotation.matrix()).norm() < 1e-12);
            let obs = transport_direction(&r[e.i], &e.direction_local);
            let angle = obs.angle_to(&UnitVector3::new_normalize(p[e.j] - p[e.i]).unwrap()).to_degrees();
            assert!((angle - 5.0).abs() < 1e-9, "{angle}");
        }
        let close = (p[4] - p[5]).norm();
        for i in 0..6 {
            for j in i + 1..6 {
                if (i, j) != (4, 5) {
                    assert!(close < (p[j] - p[i]).norm());
                }
            }
        }
    }
}
