//! Input point cloud, normalization, neighbour queries and training-set generation.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geom::{self, Aabb, Vec3};
use crate::kdtree::KdTree;
use crate::{Error, Result};

/// Norm of the farthest point after normalization.
pub const NORMALIZED_RADIUS: f64 = 0.5;

/// Maps raw coordinates to normalized ones: `n = (x - centroid) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub centroid: Vec3,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            centroid: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Normalization {
    pub fn apply(&self, x: Vec3) -> Vec3 {
        geom::scale(geom::sub(x, self.centroid), self.scale)
    }

    pub fn invert(&self, n: Vec3) -> Vec3 {
        geom::add(geom::scale(n, 1.0 / self.scale), self.centroid)
    }

    /// Normalization applied after `self`.
    pub fn then(&self, next: &Normalization) -> Normalization {
        // next.apply(self.apply(x)) = (x - c1)·s1·s2 - c2·s2 = (x - (c1 + c2/s1))·(s1·s2)
        Normalization {
            centroid: geom::add(self.centroid, geom::scale(next.centroid, 1.0 / self.scale)),
            scale: self.scale * next.scale,
        }
    }
}

/// Points in normalized coordinates plus the record that produced them.
#[derive(Debug, Clone)]
pub struct PointCloud {
    tree: KdTree,
    pub normalization: Normalization,
}

impl PointCloud {
    /// Wraps points as-is (identity normalization record).
    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !geom::is_finite(*p)) {
            return Err(Error::Argument(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            tree: KdTree::new(&points),
            normalization: Normalization::default(),
        })
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Centres on the centroid and scales so the farthest point has norm 0.5.
    /// The new record composes with any existing one.
    pub fn normalize(&self) -> Result<PointCloud> {
        let pts = self.points();
        if pts.is_empty() {
            return Err(Error::Degenerate("empty point cloud".into()));
        }
        let n = pts.len() as f64;
        let mut c = [0.0; 3];
        for p in pts {
            c = geom::add(c, *p);
        }
        let centroid = geom::scale(c, 1.0 / n);
        let max = pts.iter().map(|p| geom::dist(*p, centroid)).fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::Degenerate("all points coincide".into()));
        }
        let step = Normalization {
            centroid,
            scale: NORMALIZED_RADIUS / max,
        };
        let points = pts.iter().map(|p| step.apply(*p)).collect();
        let mut out = PointCloud::from_points(points)?;
        out.normalization = self.normalization.then(&step);
        Ok(out)
    }

    /// Indices of the `k` nearest points, closest first, ties by lower index.
    pub fn knn(&self, query: Vec3, k: usize) -> Result<Vec<usize>> {
        if k > self.len() {
            return Err(Error::Argument(format!(
                "k = {k} exceeds the cloud size {}",
                self.len()
            )));
        }
        Ok(self.tree.knn(query, k).into_iter().map(|n| n.index).collect())
    }
}

/// Per-point Gaussian scale, distance to the K-th nearest point counting the point itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTable(Vec<f64>);

impl SigmaTable {
    /// Table from explicit values; zeros are allowed here.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Argument("sigma values must be finite and non-negative".into()));
        }
        Ok(SigmaTable(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn compute_sigmas(cloud: &PointCloud, k: usize) -> Result<SigmaTable> {
    if k < 2 {
        return Err(Error::Argument(format!(
            "K = {k} is too small: the K-set includes the point itself, so K must be at least 2"
        )));
    }
    if k > cloud.len() {
        return Err(Error::Argument(format!(
            "K = {k} exceeds the cloud size {}",
            cloud.len()
        )));
    }
    let mut sigmas = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points().iter().enumerate() {
        let nn = cloud.tree.knn(*p, k);
        let s = libm::sqrt(nn[k - 1].dist_sq);
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!(
                "point {i} has {k} coincident neighbours, its sigma would be zero"
            )));
        }
        sigmas.push(s);
    }
    Ok(SigmaTable(sigmas))
}

/// A perturbed query and the input point nearest to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPair {
    pub query: Vec3,
    pub target: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairSet {
    pub pairs: Vec<QueryPair>,
    pub uniform_pool: Vec<Vec3>,
    pub bounds: Aabb,
}

/// Draws `pool_size` queries around uniformly chosen input points and pairs each with
/// its exact nearest input point.
pub fn build_pairs<R: Rng + ?Sized>(
    cloud: &PointCloud,
    sigmas: &SigmaTable,
    pool_size: usize,
    rng: &mut R,
) -> Result<Vec<QueryPair>> {
    if pool_size == 0 {
        return Err(Error::Argument("pair pool size must be at least 1".into()));
    }
    if cloud.is_empty() || sigmas.values().len() != cloud.len() {
        return Err(Error::Argument("sigma table does not match the cloud".into()));
    }
    let pts = cloud.points();
    let mut pairs = Vec::with_capacity(pool_size);
    for _ in 0..pool_size {
        let i = rng.random_range(0..pts.len());
        let sigma = sigmas.values()[i];
        let mut q = pts[i];
        for c in &mut q {
            let z: f64 = StandardNormal.sample(rng);
            *c += sigma * z;
        }
        let nn = cloud.tree.nearest(q).expect("non-empty cloud");
        pairs.push(QueryPair {
            query: q,
            target: pts[nn.index],
        });
    }
    Ok(pairs)
}

/// The cloud's bounding box padded by `padding_fraction` of its extent on every side.
pub fn pool_bounds(cloud: &PointCloud, padding_fraction: f64) -> Result<Aabb> {
    if !(padding_fraction >= 0.0 && padding_fraction.is_finite()) {
        return Err(Error::Argument("padding fraction must be non-negative".into()));
    }
    Ok(Aabb::of_points(cloud.points())
        .ok_or_else(|| Error::Degenerate("empty point cloud".into()))?
        .padded(padding_fraction))
}

/// Uniform samples in [`pool_bounds`].
pub fn build_uniform_pool<R: Rng + ?Sized>(
    cloud: &PointCloud,
    pool_size: usize,
    padding_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<Vec3>, Aabb)> {
    if pool_size == 0 {
        return Err(Error::Argument("uniform pool size must be at least 1".into()));
    }
    let bounds = pool_bounds(cloud, padding_fraction)?;
    Ok((sample_box(&bounds, pool_size, rng), bounds))
}

pub fn sample_box<R: Rng + ?Sized>(bounds: &Aabb, n: usize, rng: &mut R) -> Vec<Vec3> {
    let ext = bounds.extent();
    (0..n)
        .map(|_| {
            let mut p = bounds.min;
            for k in 0..3 {
                let u: f64 = rng.random();
                p[k] += u * ext[k];
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(pts: &[Vec3], q: Vec3) -> usize {
        let mut best = 0;
        for (i, p) in pts.iter().enumerate() {
            if geom::dist_sq(q, *p) < geom::dist_sq(q, pts[best]) {
                best = i;
            }
        }
        best
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
            .collect();
        PointCloud::from_points(pts).unwrap()
    }

    fn line() -> PointCloud {
        PointCloud::from_points((0..4).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::from_points(vec![[0.0; 3], [2.0, 0.0, 0.0]]).unwrap().normalize().unwrap();
        assert_eq!(c.normalization.centroid, [1.0, 0.0, 0.0]);
        assert_eq!(c.normalization.scale, 0.5);
        assert_eq!(c.points(), &[[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_is_idempotent_up_to_rounding() {
        let once = random_cloud(50, 1).normalize().unwrap();
        let twice = once.normalize().unwrap();
        for (a, b) in once.points().iter().zip(twice.points()) {
            assert!(geom::dist(*a, *b) < 1e-14);
        }
        let max = twice.points().iter().map(|p| geom::norm(*p)).fold(0.0, f64::max);
        assert!((max - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalize_round_trip() {
        let raw = random_cloud(100, 2);
        let scaled: Vec<Vec3> = raw.points().iter().map(|p| [p[0] * 7.0 + 3.0, p[1] * 7.0 - 1.0, p[2] * 7.0]).collect();
        let raw = PointCloud::from_points(scaled).unwrap();
        let n = raw.normalize().unwrap();
        for (x, y) in raw.points().iter().zip(n.points()) {
            assert!(geom::dist(n.normalization.invert(*y), *x) < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_identical_points() {
        let c = PointCloud::from_points(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
        assert!(matches!(c.normalize(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn knn_on_a_line() {
        let c = line();
        assert_eq!(c.knn([0.0; 3], 3).unwrap(), [0, 1, 2]);
        assert_eq!(c.knn([0.0; 3], 4).unwrap().len(), 4);
        assert!(matches!(c.knn([0.0; 3], 5), Err(Error::Argument(_))));
        // Equidistant pair: 1 and 2 from 1.5.
        assert_eq!(c.knn([1.5, 0.0, 0.0], 2).unwrap(), [1, 2]);
    }

    #[test]
    fn sigmas_on_a_line_and_grid() {
        let s = compute_sigmas(&line(), 3).unwrap();
        assert_eq!(s.values()[0], 2.0);
        assert!(matches!(compute_sigmas(&line(), 1), Err(Error::Argument(_))));

        let h = 0.1;
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    pts.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        let grid = PointCloud::from_points(pts).unwrap();
        let s = compute_sigmas(&grid, 7).unwrap();
        let centre = 2 * 25 + 2 * 5 + 2;
        assert!((s.values()[centre] - h).abs() < 1e-15);
    }

    #[test]
    fn sigmas_grow_with_k() {
        let c = random_cloud(300, 3);
        let a = compute_sigmas(&c, 8).unwrap();
        let b = compute_sigmas(&c, 51).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| y >= x));
    }

    #[test]
    fn zero_sigma_pairs_sit_on_generators() {
        let c = random_cloud(20, 4);
        let s = SigmaTable::from_values(vec![0.0; 20]).unwrap();
        let pairs = build_pairs(&c, &s, 200, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in pairs {
            assert_eq!(p.query, p.target);
            assert!(c.points().contains(&p.query));
        }
    }

    #[test]
    fn far_apart_points_pair_with_their_generator() {
        let c = PointCloud::from_points(vec![[-10.0, 0.0, 0.0], [10.0, 0.0, 0.0]]).unwrap();
        let s = SigmaTable::from_values(vec![0.01, 0.01]).unwrap();
        let pairs = build_pairs(&c, &s, 500, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for p in pairs {
            assert_eq!(p.target[0].signum(), p.query[0].signum());
        }
    }

    #[test]
    fn pairs_target_exact_nearest_point() {
        let c = random_cloud(100, 5);
        let s = compute_sigmas(&c, 8).unwrap();
        let pairs = build_pairs(&c, &s, 10_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for p in &pairs {
            assert_eq!(c.points()[brute_nearest(c.points(), p.query)], p.target);
        }
    }

    #[test]
    fn pools_are_seed_deterministic() {
        let c = random_cloud(100, 6);
        let s = compute_sigmas(&c, 8).unwrap();
        let a = build_pairs(&c, &s, 1000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_pairs(&c, &s, 1000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let (u, _) = build_uniform_pool(&c, 1000, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (v, _) = build_uniform_pool(&c, 1000, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn uniform_pool_box() {
        let mut corners = Vec::new();
        for i in 0..8 {
            corners.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        let c = PointCloud::from_points(corners).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pool, bounds) = build_uniform_pool(&c, 10_000, 0.0, &mut rng).unwrap();
        assert!(pool.iter().all(|p| p.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(bounds.min, [0.0; 3]);

        let (pool, bounds) = build_uniform_pool(&c, 10_000, 0.1, &mut rng).unwrap();
        for k in 0..3 {
            assert!((bounds.extent()[k] - 1.2).abs() < 1e-15);
            // Uniform on a side of length 1.2: stdev 1.2/√12, standard error over 10k samples.
            let mean = pool.iter().map(|p| p[k]).sum::<f64>() / pool.len() as f64;
            let se = 1.2 / libm::sqrt(12.0) / 100.0;
            assert!((mean - 0.5).abs() < 3.0 * se, "axis {k}: mean {mean}");
        }
        assert!(pool.iter().all(|p| bounds.contains(*p)));
    }
}
