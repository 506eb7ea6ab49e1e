//! Quadratic-time reference metrics.

/// `(cd1, cd2, hd, fs, nc)` by scanning every pair; nearest ties keep the lower index.
pub fn metrics(
    gt: &[[f64; 3]],
    gt_normals: Option<&[[f64; 3]]>,
    pred: &[[f64; 3]],
    pred_normals: Option<&[[f64; 3]]>,
    tau: f64,
) -> (f64, f64, f64, f64, Option<f64>) {
    let nearest = |p: &[f64; 3], set: &[[f64; 3]]| {
        let mut best = (0, f64::INFINITY);
        for (j, q) in set.iter().enumerate() {
            let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        (best.0, best.1.sqrt())
    };
    let ab: Vec<(usize, f64)> = gt.iter().map(|p| nearest(p, pred)).collect();
    let ba: Vec<(usize, f64)> = pred.iter().map(|p| nearest(p, gt)).collect();

    let mut s1 = [0.0, 0.0];
    let mut s2 = [0.0, 0.0];
    let mut hd: f64 = 0.0;
    let mut within = [0usize, 0];
    for (k, dir) in [&ab, &ba].into_iter().enumerate() {
        for &(_, d) in dir {
            s1[k] += d;
            s2[k] += d * d;
            hd = hd.max(d);
            if d < tau {
                within[k] += 1;
            }
        }
    }
    let (na, nb) = (ab.len() as f64, ba.len() as f64);
    let cd1 = 0.5 * (s1[0] / na) + 0.5 * (s1[1] / nb);
    let cd2 = 0.5 * (s2[0] / na) + 0.5 * (s2[1] / nb);
    let recall = within[0] as f64 / na;
    let precision = within[1] as f64 / nb;
    let fs = if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    let nc = match (gt_normals, pred_normals) {
        (Some(ng), Some(np)) => {
            let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let x: f64 = ab.iter().enumerate().map(|(i, &(j, _))| dot(ng[i], np[j])).sum();
            let y: f64 = ba.iter().enumerate().map(|(i, &(j, _))| dot(np[i], ng[j])).sum();
            Some(0.5 * (x / na) + 0.5 * (y / nb))
        }
        _ => None,
    };
    (cd1, cd2, hd, fs, nc)
}
