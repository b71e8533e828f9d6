use super::{PartitionError, TrafficGraph};

/// A set of nodes with its centroid and modularity sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Community {
    /// Sorted node ids.
    pub members: Vec<u32>,
    pub centroid: (f64, f64),
    /// Sum of `A_ij` over ordered member pairs (twice the internal weight).
    pub sigma_in: f64,
    /// Sum of member degrees.
    pub sigma_tot: f64,
}

impl Community {
    /// Builds a community of `g` with every field filled from `g`.
    pub fn of(g: &TrafficGraph, mut members: Vec<u32>, label: &[u32]) -> Self {
        members.sort_unstable();
        let me = members.first().map_or(u32::MAX, |&m| label[m as usize]);
        let mut sigma_in = 0.0;
        let mut sigma_tot = 0.0;
        for &m in &members {
            for &(j, w) in &g.adj[m as usize] {
                sigma_tot += w;
                if label[j as usize] == me {
                    sigma_in += w;
                }
            }
        }
        let n = members.len() as f64;
        let (sx, sy) = members
            .iter()
            .map(|&m| g.coords[m as usize])
            .fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        Self { members, centroid: (sx / n, sy / n), sigma_in, sigma_tot }
    }
}

/// Both closed forms: the pairwise sum and the per-community sum.
pub fn modularity_forms(g: &TrafficGraph, label: &[u32]) -> Result<(f64, f64), PartitionError> {
    let two_m: f64 = (0..g.node_count()).map(|i| g.degree(i)).sum();
    if two_m <= 0.0 {
        return Err(PartitionError::ZeroWeight);
    }
    let deg: Vec<f64> = (0..g.node_count()).map(|i| g.degree(i)).collect();

    // pairwise form: sum of A_ij over same-community pairs minus the
    // expected term, which factorizes per community
    let mut a_in = 0.0;
    for (i, row) in g.adj.iter().enumerate() {
        for &(j, w) in row {
            if label[i] == label[j as usize] {
                a_in += w;
            }
        }
    }
    let mut expected = 0.0;
    for i in 0..g.node_count() {
        for j in 0..g.node_count() {
            if label[i] == label[j] {
                expected += deg[i] * deg[j] / two_m;
            }
        }
    }
    let pairwise = (a_in - expected) / two_m;

    let ncom = label.iter().max().map_or(0, |&m| m as usize + 1);
    let mut s_in = vec![0.0; ncom];
    let mut s_tot = vec![0.0; ncom];
    for (i, row) in g.adj.iter().enumerate() {
        let c = label[i] as usize;
        s_tot[c] += deg[i];
        for &(j, w) in row {
            if label[j as usize] as usize == c {
                s_in[c] += w;
            }
        }
    }
    let per_comm = s_in.iter().zip(&s_tot).map(|(i, t)| i / two_m - (t / two_m).powi(2)).sum();
    Ok((pairwise, per_comm))
}

/// Modularity of the labelling, cross-checking both forms to 1e-9.
pub fn modularity(g: &TrafficGraph, label: &[u32]) -> Result<f64, PartitionError> {
    let (a, b) = modularity_forms(g, label)?;
    if (a - b).abs() > 1e-9 {
        return Err(PartitionError::ModularityMismatch(a, b));
    }
    Ok(b)
}

/// Per-community form only; linear time.
pub fn modularity_fast(g: &TrafficGraph, label: &[u32]) -> f64 {
    let two_m: f64 = (0..g.node_count()).map(|i| g.degree(i)).sum();
    if two_m <= 0.0 {
        return 0.0;
    }
    let ncom = label.iter().max().map_or(0, |&m| m as usize + 1);
    let mut s_in = vec![0.0; ncom];
    let mut s_tot = vec![0.0; ncom];
    for (i, row) in g.adj.iter().enumerate() {
        let c = label[i] as usize;
        for &(j, w) in row {
            s_tot[c] += w;
            if label[j as usize] as usize == c {
                s_in[c] += w;
            }
        }
    }
    s_in.iter().zip(&s_tot).map(|(i, t)| i / two_m - (t / two_m).powi(2)).sum()
}
