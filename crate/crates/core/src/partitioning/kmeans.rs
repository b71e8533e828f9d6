use super::{Community, PartitionAssignment, PartitionError, TrafficGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once no center moves farther than this, m.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { seed: 0, restarts: 10, max_iter: 100, tol: 1e-6 }
    }
}

fn d2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn nearest(p: (f64, f64), centers: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (c, &q) in centers.iter().enumerate().skip(1) {
        if d2(p, q) < d2(p, centers[best]) {
            best = c;
        }
    }
    best
}

fn plus_plus(points: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut dist: Vec<f64> = points.iter().map(|&p| d2(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = dist.iter().rposition(|&d| d > 0.0).unwrap();
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(pick);
        for (d, &p) in dist.iter_mut().zip(points) {
            *d = d.min(d2(p, points[pick]));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

fn means(points: &[(f64, f64)], labels: &[usize], k: usize) -> (Vec<(f64, f64)>, Vec<usize>) {
    let mut sum = vec![(0.0, 0.0); k];
    let mut count = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sum[l].0 += p.0;
        sum[l].1 += p.1;
        count[l] += 1;
    }
    let c = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n > 0 { (s.0 / n as f64, s.1 / n as f64) } else { (f64::NAN, f64::NAN) })
        .collect();
    (c, count)
}

/// Moves the point farthest from its center (among clusters with more
/// than one member) into each empty cluster.
fn fill_empty(points: &[(f64, f64)], labels: &mut [usize], k: usize) {
    loop {
        let (centers, count) = means(points, labels, k);
        let Some(empty) = count.iter().position(|&c| c == 0) else { return };
        let far = (0..points.len())
            .filter(|&i| count[labels[i]] > 1)
            .max_by(|&a, &b| {
                d2(points[a], centers[labels[a]])
                    .total_cmp(&d2(points[b], centers[labels[b]]))
                    .then(b.cmp(&a))
            })
            .expect("n >= k leaves a cluster with two members");
        labels[far] = empty;
    }
}

fn lloyd(points: &[(f64, f64)], mut centers: Vec<(f64, f64)>, opts: &KMeansOptions) -> (Vec<usize>, f64) {
    let k = centers.len();
    let mut labels = vec![0; points.len()];
    for _ in 0..opts.max_iter {
        for (l, &p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centers);
        }
        fill_empty(points, &mut labels, k);
        let (next, _) = means(points, &labels, k);
        let shift = centers.iter().zip(&next).map(|(a, b)| d2(*a, *b).sqrt()).fold(0.0, f64::max);
        centers = next;
        if shift <= opts.tol {
            break;
        }
    }
    for (l, &p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centers);
    }
    fill_empty(points, &mut labels, k);
    let (centers, _) = means(points, &labels, k);
    let wcss = points.iter().zip(&labels).map(|(&p, &l)| d2(p, centers[l])).sum();
    (labels, wcss)
}

/// Seeded k-means++ with restarts; keeps the lowest within-cluster sum of
/// squares. Labels are renumbered by first appearance.
pub fn kmeans_centroids(points: &[(f64, f64)], k: usize, opts: &KMeansOptions) -> Result<(Vec<usize>, f64), PartitionError> {
    if k == 0 {
        return Err(PartitionError::ZeroShards);
    }
    if points.len() < k {
        return Err(PartitionError::TooFewCommunities { communities: points.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = plus_plus(points, k, &mut rng);
        let (labels, w) = lloyd(points, init, opts);
        if best.as_ref().is_none_or(|b| w < b.1) {
            best = Some((labels, w));
        }
    }
    let (labels, w) = best.unwrap();
    let mut rename = vec![usize::MAX; k];
    let mut next = 0;
    let labels = labels
        .into_iter()
        .map(|l| {
            if rename[l] == usize::MAX {
                rename[l] = next;
                next += 1;
            }
            rename[l]
        })
        .collect();
    Ok((labels, w))
}

/// Clusters community centroids into `k` shards. Nodes outside every
/// community stay unassigned.
pub fn kmeans_aggregate(
    communities: &[Community],
    k: usize,
    n_nodes: usize,
    opts: &KMeansOptions,
) -> Result<Vec<Option<u32>>, PartitionError> {
    let points: Vec<(f64, f64)> = communities.iter().map(|c| c.centroid).collect();
    let (labels, _) = kmeans_centroids(&points, k, opts)?;
    let mut out = vec![None; n_nodes];
    for (c, &l) in communities.iter().zip(&labels) {
        for &m in &c.members {
            out[m as usize] = Some(l as u32);
        }
    }
    Ok(out)
}

/// Gives every unassigned node the shard of its Euclidean-nearest assigned
/// node; equal distances go to the lower shard index.
pub fn assign_outliers(partial: &[Option<u32>], k: usize, g: &TrafficGraph) -> Result<PartitionAssignment, PartitionError> {
    let assigned: Vec<((f64, f64), u32)> = partial
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (g.coords[i], s)))
        .collect();
    if assigned.is_empty() {
        return Err(PartitionError::NoAssignedNodes);
    }
    let shard_of = partial
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.unwrap_or_else(|| {
                let p = g.coords[i];
                let mut best = (f64::INFINITY, u32::MAX);
                for &(q, s) in &assigned {
                    let d = d2(p, q);
                    if d < best.0 || (d == best.0 && s < best.1) {
                        best = (d, s);
                    }
                }
                best.1
            })
        })
        .collect();
    Ok(PartitionAssignment { shard_of, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs() {
        let pts = [(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)];
        let (l, _) = kmeans_centroids(&pts, 2, &KMeansOptions::default()).unwrap();
        assert_eq!(l, vec![0, 0, 1, 1]);
    }

    #[test]
    fn k_equals_n() {
        let pts = [(0.0, 0.0), (5.0, 1.0), (9.0, 3.0)];
        let (l, w) = kmeans_centroids(&pts, 3, &KMeansOptions::default()).unwrap();
        assert_eq!(l, vec![0, 1, 2]);
        assert_eq!(w, 0.0);
        // duplicates still fill every cluster
        let dup = [(1.0, 1.0); 4];
        let (l, _) = kmeans_centroids(&dup, 4, &KMeansOptions::default()).unwrap();
        let mut s = l.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            kmeans_centroids(&[(0.0, 0.0)], 2, &KMeansOptions::default()),
            Err(PartitionError::TooFewCommunities { .. })
        ));
    }

    #[test]
    fn outliers_nearest_and_ties() {
        let mut g = TrafficGraph::from_edges(3, &[], None);
        g.coords = vec![(1.0, 0.0), (0.0, 0.0), (-5.0, 0.0)];
        let p = assign_outliers(&[None, Some(0), Some(1)], 2, &g).unwrap();
        assert_eq!(p.shard_of, vec![0, 0, 1]);
        g.coords = vec![(0.0, 0.0), (-1.0, 0.0), (1.0, 0.0)];
        let p = assign_outliers(&[None, Some(1), Some(0)], 2, &g).unwrap();
        assert_eq!(p.shard_of[0], 0);
        assert!(matches!(assign_outliers(&[None, None], 2, &g), Err(PartitionError::NoAssignedNodes)));
    }
}
