//! Deterministic 2-means under cosine distance.

use ndarray::Array1;

use crate::embeddings::{cosine_similarity, EmbeddingMatrix};

pub const MAX_ITERS: usize = 25;

fn cos_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - a.dot(b) / (na * nb)).clamp(0.0, 2.0)
}

/// Splits the rows of `points` into two groups.
///
/// Seeds are the farthest pair (lowest indices on ties). Returns `None` when all
/// points coincide in direction.
pub fn two_means(points: &EmbeddingMatrix) -> Option<Vec<usize>> {
    let n = points.rows();
    if n < 2 {
        return None;
    }
    let mut seed = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine_similarity(points.row(i), points.row(j));
            if d > seed.2 {
                seed = (i, j, d);
            }
        }
    }
    if seed.2 <= 1e-12 {
        return None;
    }
    let rows: Vec<Array1<f64>> = (0..n).map(|i| points.row(i).to_owned()).collect();
    let mut centroids = [rows[seed.0].clone(), rows[seed.1].clone()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let next: Vec<usize> = rows
            .iter()
            .map(|r| usize::from(cos_dist(r, &centroids[1]) < cos_dist(r, &centroids[0])))
            .collect();
        let mut next = next;
        repair_empty(&rows, &mut next, &centroids);
        if next == labels {
            break;
        }
        labels = next;
        for (k, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&Array1<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(r, _)| r).collect();
            let mut sum = Array1::zeros(points.dim());
            for m in &members {
                sum += *m;
            }
            *c = sum / members.len() as f64;
        }
    }
    Some(labels)
}

/// Moves the point farthest from the occupied cluster's centroid into the empty one.
fn repair_empty(rows: &[Array1<f64>], labels: &mut [usize], centroids: &[Array1<f64>; 2]) {
    for empty in 0..2 {
        if labels.iter().all(|&l| l != empty) {
            let full = 1 - empty;
            let mut far = 0;
            let mut best = f64::NEG_INFINITY;
            for (i, r) in rows.iter().enumerate() {
                let d = cos_dist(r, &centroids[full]);
                if d > best {
                    best = d;
                    far = i;
                }
            }
            labels[far] = empty;
        }
    }
}
