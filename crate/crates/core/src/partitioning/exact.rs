use super::{PartitionAssignment, PartitionCostModel, PartitionError, TrafficGraph};

/// Largest graph the exhaustive solver accepts.
pub const MAX_EXACT_NODES: usize = 14;

struct Search<'a> {
    g: &'a TrafficGraph,
    k: usize,
    cap: usize,
    need_all: bool,
    tau: f64,
    cur: Vec<u32>,
    sizes: Vec<usize>,
    best: f64,
    best_assign: Option<Vec<u32>>,
}

impl Search<'_> {
    fn go(&mut self, i: usize, used: usize, cost: f64) {
        let n = self.cur.len();
        if cost >= self.best {
            return;
        }
        if self.need_all && n - i < self.k - used {
            return;
        }
        if i == n {
            self.best = cost;
            self.best_assign = Some(self.cur.clone());
            return;
        }
        // canonical labelling: a new shard index only right after the largest used
        for s in 0..(used + 1).min(self.k) {
            if self.sizes[s] >= self.cap {
                continue;
            }
            let mut c = cost;
            for &(j, w) in &self.g.adj[i] {
                let j = j as usize;
                if j < i && self.cur[j] as usize != s {
                    c = c.max(w * self.tau);
                }
            }
            self.cur[i] = s as u32;
            self.sizes[s] += 1;
            self.go(i + 1, used.max(s + 1), c);
            self.sizes[s] -= 1;
        }
    }
}

/// Exhaustive minimizer of the largest cut-pair cost `w_ij · tau_com`
/// subject to at most `capacity` nodes per shard and no empty shard when
/// `k <= |V|`. Ties go to the lexicographically smallest canonical
/// assignment (shard labels first used in increasing order).
pub fn solve_gp_exact(
    g: &TrafficGraph,
    k: usize,
    cost: &PartitionCostModel,
) -> Result<(PartitionAssignment, f64), PartitionError> {
    let n = g.node_count();
    if k == 0 {
        return Err(PartitionError::ZeroShards);
    }
    if n > MAX_EXACT_NODES {
        return Err(PartitionError::TooLarge { nodes: n, max: MAX_EXACT_NODES });
    }
    if k.saturating_mul(cost.capacity) < n {
        return Err(PartitionError::InfeasibleCapacity { k, capacity: cost.capacity, nodes: n });
    }
    let mut s = Search {
        g,
        k,
        cap: cost.capacity,
        need_all: k <= n,
        tau: cost.tau_com,
        cur: vec![0; n],
        sizes: vec![0; k],
        best: f64::INFINITY,
        best_assign: None,
    };
    s.go(0, 0, 0.0);
    let shard_of = s.best_assign.ok_or(PartitionError::InfeasibleCapacity { k, capacity: cost.capacity, nodes: n })?;
    Ok((PartitionAssignment { shard_of, k }, s.best))
}
