//! k-means++ seeding followed by Lloyd iterations; used to initialize EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::JointVector;
use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<JointVector>,
    pub assignments: Vec<usize>,
}

fn nearest(centers: &[JointVector], x: &JointVector) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = (x - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn kmeans_init(points: &[JointVector], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|x| (x - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            // every point already coincides with a center
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min((x - c).norm_squared());
        }
        centers.push(c);
    }

    let scale = points
        .iter()
        .map(|x| x.norm_squared())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut assignments = vec![0; points.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        for (a, x) in assignments.iter_mut().zip(points) {
            *a = nearest(&centers, x).0;
        }
        let mut sums = vec![JointVector::zeros(); k];
        let mut counts = vec![0usize; k];
        for (a, x) in assignments.iter().zip(points) {
            sums[*a] += x;
            counts[*a] += 1;
        }
        let mut shift: f64 = 0.0;
        for i in 0..k {
            if counts[i] > 0 {
                let c = sums[i] / counts[i] as f64;
                shift = shift.max((c - centers[i]).norm_squared());
                centers[i] = c;
            }
        }
        if shift <= 1e-24 * scale {
            break;
        }
    }
    for (a, x) in assignments.iter_mut().zip(points) {
        *a = nearest(&centers, x).0;
    }
    Ok(KMeans {
        centers,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut ChaCha8Rng, center: f64, n: usize) -> Vec<JointVector> {
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| JointVector::from_fn(|_, _| center + noise.sample(rng)))
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blob(&mut rng, 3.0, 200);
        let mean = pts.iter().sum::<JointVector>() / pts.len() as f64;
        let km = kmeans_init(&pts, 1, 9).unwrap();
        assert!((km.centers[0] - mean).abs().max() < 1e-12);
    }

    #[test]
    fn separated_clusters_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sep = 100.0;
        let mut pts = blob(&mut rng, 0.0, 300);
        pts.extend(blob(&mut rng, sep, 300));
        let m0 = pts[..300].iter().sum::<JointVector>() / 300.0;
        let m1 = pts[300..].iter().sum::<JointVector>() / 300.0;
        let km = kmeans_init(&pts, 2, 4).unwrap();
        let (a, b) = if km.centers[0][0] < km.centers[1][0] {
            (0, 1)
        } else {
            (1, 0)
        };
        let axis_sep = sep * (12f64).sqrt();
        assert!((km.centers[a] - m0).norm() < 0.01 * axis_sep);
        assert!((km.centers[b] - m1).norm() < 0.01 * axis_sep);
    }

    #[test]
    fn seeded_determinism_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = blob(&mut rng, 0.0, 100);
        assert_eq!(
            kmeans_init(&pts, 5, 11).unwrap(),
            kmeans_init(&pts, 5, 11).unwrap()
        );
        assert!(matches!(
            kmeans_init(&pts[..3], 5, 0),
            Err(Error::TooFewPoints { .. })
        ));
        let same = vec![JointVector::repeat(1.0); 10];
        let km = kmeans_init(&same, 3, 0).unwrap();
        assert_eq!(km.centers.len(), 3);
    }
}
