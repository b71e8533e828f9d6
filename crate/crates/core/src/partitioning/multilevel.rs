//! Multilevel k-way partitioning under node-count balance bounds.

use super::{PartitionAssignment, PartitionError, TrafficGraph};

const EPS: f64 = 1e-12;
const MAX_REFINE_PASSES: usize = 10;
const MAX_INITIAL_TRIALS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPartition {
    pub assignment: PartitionAssignment,
    pub cut: f64,
    /// Inclusive part-size bounds the assignment satisfies.
    pub bounds: (usize, usize),
}

/// `(⌈(1−ε)c⌉, ⌊(1+ε)c⌋)` with `c = ⌈n/k⌉`; a small slack absorbs
/// floating-point noise in `ε·c`.
pub fn balance_bounds(n: usize, k: usize, epsilon: f64) -> (usize, usize) {
    let c = n.div_ceil(k) as f64;
    let lo = ((1.0 - epsilon) * c - 1e-9).ceil().max(0.0) as usize;
    let hi = ((1.0 + epsilon) * c + 1e-9).floor() as usize;
    (lo, hi)
}

#[derive(Clone)]
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    vw: Vec<usize>,
}

impl Level {
    fn n(&self) -> usize {
        self.adj.len()
    }

    fn weight(&self, u: usize, v: usize) -> f64 {
        self.adj[u].iter().find(|p| p.0 == v).map_or(0.0, |p| p.1)
    }
}

/// Heavy-edge matching; returns the coarse level and the fine-to-coarse map.
fn coarsen(g: &Level, max_vw: usize) -> (Level, Vec<usize>) {
    let n = g.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (g.adj[v].len(), v));
    let mut mate = vec![usize::MAX; n];
    for &v in &order {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &(u, w) in &g.adj[v] {
            if mate[u] != usize::MAX || g.vw[u] + g.vw[v] > max_vw {
                continue;
            }
            if best.is_none_or(|(b, bw)| w > bw || (w == bw && u < b)) {
                best = Some((u, w));
            }
        }
        match best {
            Some((u, _)) => {
                mate[v] = u;
                mate[u] = v;
            }
            None => mate[v] = v,
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut vw = Vec::new();
    for v in 0..n {
        if map[v] == usize::MAX {
            map[v] = vw.len();
            map[mate[v]] = vw.len();
            vw.push(g.vw[v] + if mate[v] != v { g.vw[mate[v]] } else { 0 });
        }
    }
    let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); vw.len()];
    for v in 0..n {
        for &(u, w) in &g.adj[v] {
            if map[u] != map[v] {
                *rows[map[v]].entry(map[u]).or_default() += w;
            }
        }
    }
    let adj = rows.into_iter().map(|r| r.into_iter().collect()).collect();
    (Level { adj, vw }, map)
}

/// Part state with per-node connectivity to every part.
struct Parts<'a> {
    g: &'a Level,
    k: usize,
    part: Vec<usize>,
    size: Vec<usize>,
    conn: Vec<Vec<f64>>,
    lo: usize,
    hi: usize,
}

impl<'a> Parts<'a> {
    fn new(g: &'a Level, k: usize, part: Vec<usize>, lo: usize, hi: usize) -> Self {
        let mut size = vec![0; k];
        let mut conn = vec![vec![0.0; k]; g.n()];
        for v in 0..g.n() {
            size[part[v]] += g.vw[v];
            for &(u, w) in &g.adj[v] {
                conn[v][part[u]] += w;
            }
        }
        Self { g, k, part, size, conn, lo, hi }
    }

    fn cut(&self) -> f64 {
        (0..self.g.n())
            .map(|v| self.g.adj[v].iter().filter(|p| self.part[p.0] != self.part[v]).map(|p| p.1).sum::<f64>())
            .sum::<f64>()
            / 2.0
    }

    fn violation(&self) -> usize {
        self.size.iter().map(|&s| s.saturating_sub(self.hi) + self.lo.saturating_sub(s)).sum()
    }

    fn gain(&self, v: usize, to: usize) -> f64 {
        self.conn[v][to] - self.conn[v][self.part[v]]
    }

    fn move_node(&mut self, v: usize, to: usize) {
        let from = self.part[v];
        self.size[from] -= self.g.vw[v];
        self.size[to] += self.g.vw[v];
        self.part[v] = to;
        for &(u, w) in &self.g.adj[v] {
            self.conn[u][from] -= w;
            self.conn[u][to] += w;
        }
    }

    fn is_boundary(&self, v: usize) -> bool {
        self.g.adj[v].iter().any(|p| self.part[p.0] != self.part[v])
    }

    fn legal(&self, from: usize, to: usize, w: usize) -> bool {
        self.size[to] + w <= self.hi && self.size[from] >= self.lo + w
    }

    /// One sweep of best single-node moves over boundary nodes.
    fn move_pass(&mut self) -> bool {
        let mut any = false;
        for v in 0..self.g.n() {
            if !self.is_boundary(v) {
                continue;
            }
            let from = self.part[v];
            let mut best: Option<(usize, f64)> = None;
            for to in 0..self.k {
                if to == from || !self.legal(from, to, self.g.vw[v]) {
                    continue;
                }
                let gain = self.gain(v, to);
                if gain > EPS && best.is_none_or(|(_, b)| gain > b + EPS) {
                    best = Some((to, gain));
                }
            }
            if let Some((to, _)) = best {
                self.move_node(v, to);
                any = true;
            }
        }
        any
    }

    /// Pairwise exchanges between boundary nodes, for when balance forbids
    /// single moves.
    fn swap_pass(&mut self) -> bool {
        let boundary: Vec<usize> = (0..self.g.n()).filter(|&v| self.is_boundary(v)).collect();
        let mut any = false;
        for &u in &boundary {
            let p = self.part[u];
            let mut best: Option<(usize, f64)> = None;
            for &v in &boundary {
                let q = self.part[v];
                if q == p || self.conn[u][q] <= 0.0 && self.conn[v][p] <= 0.0 {
                    continue;
                }
                let (wu, wv) = (self.g.vw[u], self.g.vw[v]);
                let sp = self.size[p] + wv - wu;
                let sq = self.size[q] + wu - wv;
                if sp < self.lo || sp > self.hi || sq < self.lo || sq > self.hi {
                    continue;
                }
                let gain = self.gain(u, q) + self.gain(v, p) - 2.0 * self.g.weight(u, v);
                if gain > EPS && best.is_none_or(|(_, b)| gain > b + EPS) {
                    best = Some((v, gain));
                }
            }
            if let Some((v, _)) = best {
                let q = self.part[v];
                self.move_node(u, q);
                self.move_node(v, p);
                any = true;
            }
        }
        any
    }

    fn refine(&mut self) {
        for _ in 0..MAX_REFINE_PASSES {
            if !self.move_pass() && !self.swap_pass() {
                break;
            }
        }
    }

    /// Forces every part into `[lo, hi]` with the cheapest single moves.
    /// Terminates on unit weights whenever the bounds are feasible.
    fn balance(&mut self) {
        loop {
            let (src, dst) = if let Some(p) = (0..self.k).filter(|&p| self.size[p] > self.hi).max_by_key(|&p| (self.size[p], std::cmp::Reverse(p))) {
                let q = (0..self.k).min_by_key(|&q| (self.size[q], q)).unwrap();
                (p, q)
            } else if let Some(q) = (0..self.k).filter(|&q| self.size[q] < self.lo).min_by_key(|&q| (self.size[q], q)) {
                let p = (0..self.k).max_by_key(|&p| (self.size[p], std::cmp::Reverse(p))).unwrap();
                (p, q)
            } else {
                return;
            };
            let v = (0..self.g.n())
                .filter(|&v| self.part[v] == src)
                .max_by(|&a, &b| self.gain(a, dst).total_cmp(&self.gain(b, dst)).then(b.cmp(&a)))
                .expect("source part is nonempty");
            self.move_node(v, dst);
        }
    }
}

/// Sequential region growing from `seed`; the last part takes the rest.
fn grow(g: &Level, k: usize, seed: usize) -> Vec<usize> {
    let n = g.n();
    let mut part = vec![usize::MAX; n];
    let mut remaining: usize = g.vw.iter().sum();
    let mut next_seed = seed;
    for p in 0..k - 1 {
        let target = (remaining as f64 / (k - p) as f64).round() as usize;
        let mut size = 0;
        let mut conn = vec![0.0; n];
        let mut frontier: Vec<usize> = Vec::new();
        let start = if part[next_seed] == usize::MAX {
            next_seed
        } else {
            match (0..n).find(|&v| part[v] == usize::MAX) {
                Some(v) => v,
                None => break,
            }
        };
        let mut cand = Some(start);
        while let Some(v) = cand {
            if size > 0 && size + g.vw[v] > target && (size + g.vw[v] - target) >= (target - size) {
                break;
            }
            part[v] = p;
            size += g.vw[v];
            for &(u, w) in &g.adj[v] {
                if part[u] == usize::MAX {
                    if !frontier.contains(&u) {
                        frontier.push(u);
                    }
                    conn[u] += w;
                }
            }
            frontier.retain(|&u| part[u] == usize::MAX);
            if size >= target {
                break;
            }
            cand = frontier
                .iter()
                .copied()
                .max_by(|&a, &b| conn[a].total_cmp(&conn[b]).then(b.cmp(&a)))
                .or_else(|| (0..n).find(|&v| part[v] == usize::MAX));
        }
        remaining -= size;
        // next part starts from the unassigned frontier node least tied to this part
        next_seed = frontier
            .iter()
            .copied()
            .min_by(|&a, &b| conn[a].total_cmp(&conn[b]).then(a.cmp(&b)))
            .or_else(|| (0..n).find(|&v| part[v] == usize::MAX))
            .unwrap_or(0);
    }
    for x in part.iter_mut() {
        if *x == usize::MAX {
            *x = k - 1;
        }
    }
    part
}

/// Coarsens by heavy-edge matching to at most `10·k` nodes, grows an
/// initial partition from several seeds, then projects back refining with
/// boundary moves at every level and rebalancing at the finest.
pub fn balanced_partition(g: &TrafficGraph, k: usize, epsilon: f64) -> Result<BalancedPartition, PartitionError> {
    let n = g.node_count();
    if k == 0 {
        return Err(PartitionError::ZeroShards);
    }
    let (lo, hi) = balance_bounds(n, k, epsilon);
    if !(epsilon >= 0.0) || k * lo > n || n > k * hi {
        return Err(PartitionError::InfeasibleBalance { nodes: n, k, epsilon, lower: lo, upper: hi });
    }
    if k == 1 {
        return Ok(BalancedPartition { assignment: PartitionAssignment::single(n), cut: 0.0, bounds: (lo, hi) });
    }
    let fine = Level {
        adj: g.adj.iter().map(|r| r.iter().map(|&(j, w)| (j as usize, w)).collect()).collect(),
        vw: vec![1; n],
    };
    let mut levels = vec![fine];
    let mut maps: Vec<Vec<usize>> = Vec::new();
    while levels.last().unwrap().n() > 10 * k {
        let cur = levels.last().unwrap();
        let (c, map) = coarsen(cur, hi);
        if c.n() as f64 > 0.95 * cur.n() as f64 {
            break;
        }
        levels.push(c);
        maps.push(map);
    }

    let coarse = levels.last().unwrap();
    let trials = coarse.n().min(MAX_INITIAL_TRIALS);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for t in 0..trials {
        let seed = t * coarse.n() / trials;
        let mut parts = Parts::new(coarse, k, grow(coarse, k, seed), lo, hi);
        parts.refine();
        let key = (parts.violation(), parts.cut());
        if best.as_ref().is_none_or(|b| key.0 < b.0 || (key.0 == b.0 && key.1 < b.1 - EPS)) {
            best = Some((key.0, key.1, parts.part));
        }
    }
    let mut part = best.unwrap().2;

    for lvl in (0..maps.len()).rev() {
        let map = &maps[lvl];
        part = (0..levels[lvl].n()).map(|v| part[map[v]]).collect();
        let mut parts = Parts::new(&levels[lvl], k, part, lo, hi);
        if lvl == 0 {
            parts.balance();
        }
        parts.refine();
        part = parts.part;
    }
    let mut parts = Parts::new(&levels[0], k, part, lo, hi);
    parts.balance();
    parts.refine();
    debug_assert_eq!(parts.violation(), 0);
    let cut = parts.cut();
    let assignment = PartitionAssignment { shard_of: parts.part.iter().map(|&p| p as u32).collect(), k };
    Ok(BalancedPartition { assignment, cut, bounds: (lo, hi) })
}
