//! Sample-based surface metrics: Chamfer L1/L2, Hausdorff, F-score and normal consistency.
//!
//! All metrics are computed between point samples of the two surfaces. Nearest
//! neighbours come from a kd-tree, ties resolved towards the lower sample index.
//! Values are stored unscaled; the ×10² Chamfer convention belongs to reporting.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{self, Vec3};
use crate::kdtree::KdTree;
use crate::mesher::TriangleMesh;
use crate::{Error, Result};

/// Default F-score threshold.
pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl SampleSet {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        SampleSet { points, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferOrder {
    /// Mean distance.
    L1,
    /// Mean squared distance.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub cd1: f64,
    pub cd2: f64,
    pub hd: f64,
    pub fs: f64,
    pub nc: Option<f64>,
    pub sample_count: usize,
    pub tau: f64,
}

/// Area-weighted uniform samples on the mesh, with face normals on request.
pub fn sample_mesh<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R, with_normals: bool) -> Result<SampleSet> {
    if mesh.is_empty() {
        return Err(Error::Degenerate("cannot sample an empty mesh".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.area(t);
        cdf.push(total);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate("mesh has zero total area".into()));
    }
    let mut points = Vec::with_capacity(n);
    let mut normals = with_normals.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let t = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        let p = geom::add(
            a,
            geom::add(geom::scale(geom::sub(b, a), r1), geom::scale(geom::sub(c, a), r2)),
        );
        points.push(p);
        if let Some(ns) = normals.as_mut() {
            ns.push(mesh.face_normal(t).unwrap_or([0.0; 3]));
        }
    }
    Ok(SampleSet { points, normals })
}

/// Index of and distance to the nearest point of `to` for every point of `from`.
fn directed(from: &[Vec3], to: &KdTree) -> Vec<(usize, f64)> {
    from.iter()
        .map(|p| {
            let n = to.nearest(*p).expect("non-empty target set");
            (n.index, libm::sqrt(n.dist_sq))
        })
        .collect()
}

fn require_non_empty(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("metric needs two non-empty sample sets".into()));
    }
    Ok(())
}

/// Both directed nearest-neighbour passes, reused by every metric.
struct Matching {
    ab: Vec<(usize, f64)>,
    ba: Vec<(usize, f64)>,
}

impl Matching {
    fn new(a: &SampleSet, b: &SampleSet) -> Result<Self> {
        require_non_empty(a, b)?;
        let ta = KdTree::new(&a.points);
        let tb = KdTree::new(&b.points);
        Ok(Matching {
            ab: directed(&a.points, &tb),
            ba: directed(&b.points, &ta),
        })
    }

    fn chamfer(&self, order: ChamferOrder) -> f64 {
        let f = |d: f64| match order {
            ChamferOrder::L1 => d,
            ChamferOrder::L2 => d * d,
        };
        let mean = |v: &[(usize, f64)]| v.iter().map(|&(_, d)| f(d)).sum::<f64>() / v.len() as f64;
        0.5 * mean(&self.ab) + 0.5 * mean(&self.ba)
    }

    fn hausdorff(&self) -> f64 {
        let max = |v: &[(usize, f64)]| v.iter().map(|&(_, d)| d).fold(0.0, f64::max);
        max(&self.ab).max(max(&self.ba))
    }

    fn f_score(&self, tau: f64) -> f64 {
        let frac = |v: &[(usize, f64)]| v.iter().filter(|&&(_, d)| d < tau).count() as f64 / v.len() as f64;
        let recall = frac(&self.ab);
        let precision = frac(&self.ba);
        if recall + precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        }
    }

    fn normal_consistency(&self, a: &SampleSet, b: &SampleSet) -> Result<f64> {
        let (Some(na), Some(nb)) = (&a.normals, &b.normals) else {
            return Err(Error::Argument("normal consistency needs normals on both sample sets".into()));
        };
        if na.len() != a.len() || nb.len() != b.len() {
            return Err(Error::Argument("normal count does not match the sample count".into()));
        }
        let mean = |m: &[(usize, f64)], own: &[Vec3], other: &[Vec3]| {
            m.iter()
                .enumerate()
                .map(|(i, &(j, _))| geom::dot(own[i], other[j]))
                .sum::<f64>()
                / m.len() as f64
        };
        Ok(0.5 * mean(&self.ab, na, nb) + 0.5 * mean(&self.ba, nb, na))
    }
}

pub fn chamfer(a: &SampleSet, b: &SampleSet, order: ChamferOrder) -> Result<f64> {
    Ok(Matching::new(a, b)?.chamfer(order))
}

pub fn hausdorff(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    Ok(Matching::new(a, b)?.hausdorff())
}

/// Harmonic mean of recall (ground-truth samples within `tau` of a prediction) and
/// precision (predicted samples within `tau` of the ground truth).
pub fn f_score(gt: &SampleSet, pred: &SampleSet, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Argument("tau must be positive".into()));
    }
    Ok(Matching::new(gt, pred)?.f_score(tau))
}

pub fn normal_consistency(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    let m = Matching::new(a, b)?;
    m.normal_consistency(a, b)
}

/// All metrics from one pair of sample sets. NC is computed when both carry normals.
pub fn report(gt: &SampleSet, pred: &SampleSet, tau: f64) -> Result<MetricReport> {
    if !(tau > 0.0) {
        return Err(Error::Argument("tau must be positive".into()));
    }
    let m = Matching::new(gt, pred)?;
    let nc = match (&gt.normals, &pred.normals) {
        (Some(_), Some(_)) => Some(m.normal_consistency(gt, pred)?),
        _ => None,
    };
    Ok(MetricReport {
        cd1: m.chamfer(ChamferOrder::L1),
        cd2: m.chamfer(ChamferOrder::L2),
        hd: m.hausdorff(),
        fs: m.f_score(tau),
        nc,
        sample_count: gt.len().min(pred.len()),
        tau,
    })
}

/// Samples both meshes with `n` points each and reports all metrics. Each mesh gets
/// its own generator seeded with `seed`, so identical meshes yield identical samples.
pub fn evaluate_meshes(
    gt: &TriangleMesh,
    pred: &TriangleMesh,
    n: usize,
    tau: f64,
    with_normals: bool,
    seed: u64,
) -> Result<MetricReport> {
    let a = sample_mesh(gt, n, &mut ChaCha8Rng::seed_from_u64(seed), with_normals)?;
    let b = sample_mesh(pred, n, &mut ChaCha8Rng::seed_from_u64(seed), with_normals)?;
    report(&a, &b, tau)
}
