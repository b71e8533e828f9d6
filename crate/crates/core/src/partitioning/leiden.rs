//! Leiden community detection at resolution 1 (classic modularity).

use super::TrafficGraph;
use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeidenPhase {
    Start,
    LocalMoving,
    Refinement,
    Aggregation,
    Split,
}

/// Communities plus the modularity after every phase.
#[derive(Debug, Clone)]
pub struct LeidenTrace {
    pub communities: Vec<Vec<u32>>,
    pub q_history: Vec<(LeidenPhase, f64)>,
}

/// Working graph; aggregated levels carry self loops.
struct WGraph {
    adj: Vec<Vec<(usize, f64)>>,
    /// `A_ii`, already counted in both directions.
    loops: Vec<f64>,
    deg: Vec<f64>,
}

impl WGraph {
    fn new(adj: Vec<Vec<(usize, f64)>>, loops: Vec<f64>) -> Self {
        let deg = adj.iter().zip(&loops).map(|(r, l)| r.iter().map(|p| p.1).sum::<f64>() + l).collect();
        Self { adj, loops, deg }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    fn quality(&self, comm: &[usize], two_m: f64, gamma: f64) -> f64 {
        let mut s_in = vec![0.0; self.n()];
        let mut s_tot = vec![0.0; self.n()];
        for i in 0..self.n() {
            s_tot[comm[i]] += self.deg[i];
            s_in[comm[i]] += self.loops[i];
            for &(j, w) in &self.adj[i] {
                if comm[j] == comm[i] {
                    s_in[comm[i]] += w;
                }
            }
        }
        s_in.iter().zip(&s_tot).map(|(i, t)| i / two_m - gamma * (t / two_m).powi(2)).sum()
    }
}

/// Scratch accumulator of weights per community.
struct Accum {
    w: Vec<f64>,
    touched: Vec<usize>,
}

impl Accum {
    fn new(n: usize) -> Self {
        Self { w: vec![0.0; n], touched: Vec::new() }
    }

    fn add(&mut self, c: usize, w: f64) {
        if self.w[c] == 0.0 && !self.touched.contains(&c) {
            self.touched.push(c);
        }
        self.w[c] += w;
    }

    fn reset(&mut self) {
        for &c in &self.touched {
            self.w[c] = 0.0;
        }
        self.touched.clear();
    }
}

/// Queue-driven local moving. Returns true if any node moved.
fn local_moving(g: &WGraph, comm: &mut [usize], two_m: f64, gamma: f64) -> bool {
    let n = g.n();
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for i in 0..n {
        tot[comm[i]] += g.deg[i];
        size[comm[i]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).rev().filter(|&c| size[c] == 0).collect();
    let mut queue: VecDeque<usize> = (0..n).collect();
    let mut queued = vec![true; n];
    let mut acc = Accum::new(n);
    let mut moved = false;
    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let old = comm[v];
        let kv = g.deg[v];
        for &(u, w) in &g.adj[v] {
            acc.add(comm[u], w);
        }
        tot[old] -= kv;
        size[old] -= 1;
        let gain = |c: usize, acc: &Accum| acc.w[c] - gamma * kv * tot[c] / two_m;
        let mut best = old;
        let mut best_gain = gain(old, &acc);
        let mut cands = acc.touched.clone();
        cands.sort_unstable();
        for c in cands {
            let g_c = gain(c, &acc);
            if g_c > best_gain + EPS {
                best = c;
                best_gain = g_c;
            }
        }
        if best_gain < -EPS && size[old] > 0 {
            // isolating v beats every neighbor community
            if let Some(&c) = empty.last() {
                best = c;
            }
        }
        acc.reset();
        if size[old] == 0 && best != old {
            empty.push(old);
        }
        if size[best] == 0 && best != old {
            empty.retain(|&c| c != best);
        }
        tot[best] += kv;
        size[best] += 1;
        comm[v] = best;
        if best != old {
            moved = true;
            for &(u, _) in &g.adj[v] {
                if comm[u] != best && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved
}

/// Splits every community into well-connected refined subsets, merging
/// singletons greedily by best nonnegative gain.
fn refine(g: &WGraph, comm: &[usize], two_m: f64, gamma: f64) -> Vec<usize> {
    let n = g.n();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_tot: Vec<f64> = g.deg.clone();
    let mut r_size = vec![1usize; n];
    let mut c_tot = vec![0.0; n];
    for i in 0..n {
        c_tot[comm[i]] += g.deg[i];
    }
    // weight from each refined community to the rest of its parent
    let mut ext: Vec<f64> = (0..n)
        .map(|v| g.adj[v].iter().filter(|p| comm[p.0] == comm[v]).map(|p| p.1).sum())
        .collect();
    let mut acc = Accum::new(n);
    for v in 0..n {
        if r_size[refined[v]] != 1 {
            continue;
        }
        let c = comm[v];
        let kv = g.deg[v];
        if ext[v] < gamma * kv * (c_tot[c] - kv) / two_m - EPS {
            continue;
        }
        for &(u, w) in &g.adj[v] {
            if comm[u] == c {
                acc.add(refined[u], w);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        let mut cands = acc.touched.clone();
        cands.sort_unstable();
        for t in cands {
            if t == refined[v] || acc.w[t] <= 0.0 {
                continue;
            }
            let well = ext[t] >= gamma * r_tot[t] * (c_tot[c] - r_tot[t]) / two_m - EPS;
            if !well {
                continue;
            }
            let gain = acc.w[t] - gamma * kv * r_tot[t] / two_m;
            if gain >= -EPS && best.is_none_or(|(_, b)| gain > b + EPS) {
                best = Some((t, gain));
            }
        }
        if let Some((t, _)) = best {
            let own = refined[v];
            ext[t] = ext[t] + ext[own] - 2.0 * acc.w[t];
            r_tot[t] += kv;
            r_size[t] += 1;
            r_size[own] = 0;
            r_tot[own] = 0.0;
            refined[v] = t;
        }
        acc.reset();
    }
    refined
}

/// Collapses refined communities to nodes. Returns the aggregate graph and
/// the aggregate id of every current node.
fn aggregate(g: &WGraph, refined: &[usize]) -> (WGraph, Vec<usize>) {
    let n = g.n();
    let mut id = vec![usize::MAX; n];
    let mut next = 0;
    for v in 0..n {
        if id[refined[v]] == usize::MAX {
            id[refined[v]] = next;
            next += 1;
        }
    }
    let map: Vec<usize> = (0..n).map(|v| id[refined[v]]).collect();
    let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); next];
    let mut loops = vec![0.0; next];
    for v in 0..n {
        let a = map[v];
        loops[a] += g.loops[v];
        for &(u, w) in &g.adj[v] {
            let b = map[u];
            if a == b {
                loops[a] += w;
            } else {
                *rows[a].entry(b).or_default() += w;
            }
        }
    }
    let adj = rows.into_iter().map(|r| r.into_iter().collect()).collect();
    (WGraph::new(adj, loops), map)
}

/// Connected components of each community over positive-weight edges.
fn split_disconnected(g: &TrafficGraph, label: &[usize]) -> Vec<Vec<u32>> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s as u32];
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &(u, w) in &g.adj[v] {
                let u = u as usize;
                if !seen[u] && w > 0.0 && label[u] == label[s] {
                    seen[u] = true;
                    comp.push(u as u32);
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out.sort_unstable_by_key(|c| c[0]);
    out
}

fn labels_of(communities: &[Vec<u32>], n: usize) -> Vec<usize> {
    let mut label = vec![0; n];
    for (c, members) in communities.iter().enumerate() {
        for &m in members {
            label[m as usize] = c;
        }
    }
    label
}

/// Leiden with the modularity after each phase. Q is measured on the
/// unrefined partition, so refinement and aggregation leave it unchanged
/// and local moving only raises it.
pub fn leiden_traced(g: &TrafficGraph, gamma: f64) -> LeidenTrace {
    let n = g.node_count();
    let two_m: f64 = (0..n).map(|i| g.degree(i)).sum();
    if two_m <= 0.0 {
        return LeidenTrace { communities: (0..n as u32).map(|i| vec![i]).collect(), q_history: Vec::new() };
    }
    let base_adj = g.adj.iter().map(|r| r.iter().map(|&(j, w)| (j as usize, w)).collect()).collect();
    let mut wg = WGraph::new(base_adj, vec![0.0; n]);
    // current aggregate node of every original node
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut hist = vec![(LeidenPhase::Start, wg.quality(&comm, two_m, gamma))];
    loop {
        local_moving(&wg, &mut comm, two_m, gamma);
        hist.push((LeidenPhase::LocalMoving, wg.quality(&comm, two_m, gamma)));
        let ncomm = {
            let mut c = comm.clone();
            c.sort_unstable();
            c.dedup();
            c.len()
        };
        if ncomm == wg.n() {
            break;
        }
        let refined = refine(&wg, &comm, two_m, gamma);
        hist.push((LeidenPhase::Refinement, wg.quality(&comm, two_m, gamma)));
        let (agg, map) = aggregate(&wg, &refined);
        if agg.n() == wg.n() {
            break;
        }
        let mut agg_comm = vec![0; agg.n()];
        for v in 0..wg.n() {
            agg_comm[map[v]] = comm[v];
        }
        // community ids must index the aggregate's node range
        let mut relabel = std::collections::HashMap::new();
        for c in agg_comm.iter_mut() {
            let fresh = relabel.len();
            *c = *relabel.entry(*c).or_insert(fresh);
        }
        for x in node_of.iter_mut() {
            *x = map[*x];
        }
        wg = agg;
        comm = agg_comm;
        hist.push((LeidenPhase::Aggregation, wg.quality(&comm, two_m, gamma)));
    }
    let label: Vec<usize> = node_of.iter().map(|&a| comm[a]).collect();
    let communities = split_disconnected(g, &label);
    let final_label = labels_of(&communities, n);
    let fg = WGraph::new(g.adj.iter().map(|r| r.iter().map(|&(j, w)| (j as usize, w)).collect()).collect(), vec![0.0; n]);
    hist.push((LeidenPhase::Split, fg.quality(&final_label, two_m, gamma)));
    LeidenTrace { communities, q_history: hist }
}

/// Communities as sorted member lists, ordered by smallest member. Every
/// community is connected; isolated nodes are singletons.
pub fn leiden_communities(g: &TrafficGraph) -> Vec<Vec<u32>> {
    leiden_traced(g, 1.0).communities
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitioning::modularity;
    use proptest::prelude::*;

    fn clique(offset: usize, n: usize) -> Vec<(usize, usize, f64)> {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((offset + i, offset + j, 1.0));
            }
        }
        e
    }

    #[test]
    fn two_cliques() {
        let mut e = clique(0, 4);
        e.extend(clique(4, 4));
        let g = TrafficGraph::from_edges(8, &e, None);
        let c = leiden_communities(&g);
        assert_eq!(c, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn single_edge_merges() {
        let g = TrafficGraph::from_edges(2, &[(0, 1, 1.0)], None);
        assert_eq!(leiden_communities(&g), vec![vec![0, 1]]);
    }

    #[test]
    fn no_edges_all_singletons() {
        let g = TrafficGraph::from_edges(3, &[], None);
        assert_eq!(leiden_communities(&g), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn ring_of_cliques() {
        let mut e = Vec::new();
        for c in 0..6 {
            e.extend(clique(5 * c, 5));
            e.push((5 * c, (5 * c + 7) % 30, 1.0));
        }
        let g = TrafficGraph::from_edges(30, &e, None);
        let c = leiden_communities(&g);
        assert_eq!(c.len(), 6);
        for (k, m) in c.iter().enumerate() {
            assert_eq!(*m, (5 * k as u32..5 * k as u32 + 5).collect::<Vec<_>>());
        }
    }

    fn connected(g: &TrafficGraph, members: &[u32]) -> bool {
        let set: std::collections::HashSet<u32> = members.iter().copied().collect();
        let mut seen = std::collections::HashSet::from([members[0]]);
        let mut stack = vec![members[0]];
        while let Some(v) = stack.pop() {
            for &(u, w) in &g.adj[v as usize] {
                if w > 0.0 && set.contains(&u) && seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == members.len()
    }

    proptest! {
        #[test]
        fn phases_are_monotone_and_communities_connected(
            n in 2usize..60,
            edges in prop::collection::vec((0usize..60, 0usize..60, 0.1f64..5.0), 1..150),
        ) {
            let e: Vec<_> = edges.into_iter().map(|(a, b, w)| (a % n, b % n, w)).filter(|(a, b, _)| a != b).collect();
            prop_assume!(!e.is_empty());
            let g = TrafficGraph::from_edges(n, &e, None);
            let t = leiden_traced(&g, 1.0);
            for w in t.q_history.windows(2) {
                prop_assert!(w[1].1 >= w[0].1 - 1e-12, "{:?}", t.q_history);
            }
            let mut all: Vec<u32> = t.communities.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n as u32).collect::<Vec<_>>());
            for c in &t.communities {
                prop_assert!(connected(&g, c));
            }
            let label: Vec<u32> = labels_of(&t.communities, n).into_iter().map(|x| x as u32).collect();
            let q = modularity(&g, &label).unwrap();
            prop_assert!((q - t.q_history.last().unwrap().1).abs() < 1e-9);
            prop_assert!(q >= -1e-12);
        }
    }
}
