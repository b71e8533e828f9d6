//! Brute-force reference implementations. These take plain edge lists and
//! share no code with the library.
#![allow(dead_code)]

/// Undirected weighted edge list over nodes `0..n`.
pub type Edges = Vec<(usize, usize, f64)>;

/// Every assignment of `n` nodes to `k` labels, in lexicographic order.
pub fn all_assignments(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = (k as u64).pow(n as u32);
    (0..total).map(move |mut code| {
        let mut a = vec![0; n];
        for slot in a.iter_mut().rev() {
            *slot = (code % k as u64) as usize;
            code /= k as u64;
        }
        a
    })
}

/// Min over feasible assignments of max cut-edge weight · tau; returns the
/// optimum and the lexicographically smallest canonical optimizer
/// (first occurrence of each label in increasing order).
pub fn gp_bruteforce(n: usize, edges: &Edges, k: usize, tau: f64, cap: usize) -> Option<(f64, Vec<usize>)> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for a in all_assignments(n, k) {
        let mut sizes = vec![0; k];
        for &s in &a {
            sizes[s] += 1;
        }
        if sizes.iter().any(|&s| s > cap) {
            continue;
        }
        if k <= n && sizes.contains(&0) {
            continue;
        }
        if !is_canonical(&a) {
            continue;
        }
        let s = edges
            .iter()
            .filter(|(i, j, _)| a[*i] != a[*j])
            .map(|(_, _, w)| w * tau)
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, a));
        }
    }
    best
}

pub fn is_canonical(a: &[usize]) -> bool {
    let mut next = 0;
    for &s in a {
        if s > next {
            return false;
        }
        if s == next {
            next += 1;
        }
    }
    true
}

pub fn cut_weight(a: &[usize], edges: &Edges) -> f64 {
    edges.iter().filter(|(i, j, _)| a[*i] != a[*j]).map(|(_, _, w)| w).sum()
}

/// Min cut over all k-way assignments whose part sizes lie in [lo, hi].
pub fn min_balanced_cut(n: usize, edges: &Edges, k: usize, lo: usize, hi: usize) -> Option<f64> {
    all_assignments(n, k)
        .filter(|a| {
            let mut sizes = vec![0; k];
            for &s in a {
                sizes[s] += 1;
            }
            sizes.iter().all(|&s| (lo..=hi).contains(&s))
        })
        .map(|a| cut_weight(&a, edges))
        .min_by(f64::total_cmp)
}

/// Modularity by the pairwise definition over a dense symmetric matrix.
pub fn modularity_dense(n: usize, edges: &Edges, labels: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        a[i][j] += w;
        a[j][i] += w;
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// All set partitions of `0..n` as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for s in 0..=max + 1 {
            prefix.push(s);
            rec(prefix, n, max.max(s), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut p = vec![0];
    rec(&mut p, n, 0, &mut out);
    out
}

/// Best modularity over every set partition.
pub fn max_modularity(n: usize, edges: &Edges) -> (f64, Vec<usize>) {
    set_partitions(n)
        .into_iter()
        .map(|p| (modularity_dense(n, edges, &p), p))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Within-cluster sum of squares for given labels.
pub fn wcss(points: &[(f64, f64)], labels: &[usize], k: usize) -> f64 {
    let mut sx = vec![0.0; k];
    let mut sy = vec![0.0; k];
    let mut c = vec![0.0; k];
    for (p, &l) in points.iter().zip(labels) {
        sx[l] += p.0;
        sy[l] += p.1;
        c[l] += 1.0;
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let (mx, my) = (sx[l] / c[l], sy[l] / c[l]);
            (p.0 - mx).powi(2) + (p.1 - my).powi(2)
        })
        .sum()
}

/// Lloyd iterations from `restarts` uniformly random initial centers drawn
/// from the point set; returns the smallest WCSS seen.
pub fn kmeans_restart_oracle(points: &[(f64, f64)], k: usize, restarts: usize, seed: u64) -> f64 {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut idx: Vec<usize> = Vec::new();
        while idx.len() < k {
            let c = (next() % points.len() as u64) as usize;
            if !idx.contains(&c) {
                idx.push(c);
            }
        }
        let mut centers: Vec<(f64, f64)> = idx.iter().map(|&i| points[i]).collect();
        let mut labels = vec![0; points.len()];
        for _ in 0..300 {
            for (p, l) in points.iter().zip(labels.iter_mut()) {
                *l = (0..k)
                    .min_by(|&a, &b| {
                        let da = (p.0 - centers[a].0).powi(2) + (p.1 - centers[a].1).powi(2);
                        let db = (p.0 - centers[b].0).powi(2) + (p.1 - centers[b].1).powi(2);
                        da.total_cmp(&db)
                    })
                    .unwrap();
            }
            let mut moved = false;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<_> = points.iter().zip(&labels).filter(|(_, &l)| l == c).collect();
                if members.is_empty() {
                    continue;
                }
                let n = members.len() as f64;
                let nc = (members.iter().map(|m| m.0 .0).sum::<f64>() / n, members.iter().map(|m| m.0 .1).sum::<f64>() / n);
                if nc != *center {
                    moved = true;
                }
                *center = nc;
            }
            if !moved {
                break;
            }
        }
        let used: std::collections::BTreeSet<_> = labels.iter().copied().collect();
        if used.len() == k {
            best = best.min(wcss(points, &labels, k));
        }
    }
    best
}

/// Index of the nearest point, ties to the smaller key.
pub fn nearest_label(p: (f64, f64), labelled: &[((f64, f64), usize)]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for &(q, l) in labelled {
        let d = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
        if d < best.0 || (d == best.0 && l < best.1) {
            best = (d, l);
        }
    }
    best.1
}

/// Sequential replay of a pool transfer: deletes applied first by
/// descending position with swap-with-last, then copies appended.
pub fn replay_pool(mut pool: Vec<u64>, mut deletes: Vec<usize>, copies: &[u64]) -> Vec<u64> {
    deletes.sort_unstable_by(|a, b| b.cmp(a));
    deletes.dedup();
    for d in deletes {
        pool.swap_remove(d);
    }
    pool.extend_from_slice(copies);
    pool
}
