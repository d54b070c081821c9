//! Gradient-similarity distances and unweighted average-linkage (UPGMA)
//! agglomerative clustering.

use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Sample};
use crate::error::{Error, Result};

/// Gradient norms at or below this carry no direction.
pub const ZERO_GRADIENT_NORM: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `1 - |cos(g, h)|`, with zero gradients maximally dissimilar to
/// everything except another zero gradient.
fn cosine_term(g: &[f64], g_norm: f64, h: &[f64], h_norm: f64) -> f64 {
    let gz = g_norm <= ZERO_GRADIENT_NORM;
    let hz = h_norm <= ZERO_GRADIENT_NORM;
    match (gz, hz) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => {
            let dot: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
            let v = 1.0 - (dot / (g_norm * h_norm)).abs().min(1.0);
            // parallel gradients land within a few ulps of zero
            if v < 4.0 * f64::EPSILON {
                0.0
            } else {
                v
            }
        }
    }
}

fn blended(cos_term: f64, x: &[f64], x2: &[f64], eta: f64) -> f64 {
    let euclid = if eta < 1.0 {
        let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
        sq.sqrt() / (x.len() as f64).sqrt()
    } else {
        0.0
    };
    eta * cos_term + (1.0 - eta) * euclid
}

/// `eta * (1 - |cos(g, g')|) + (1 - eta) * |x - x'| / sqrt(d)`.
pub fn pair_distance(x: &[f64], g: &[f64], x2: &[f64], g2: &[f64], eta: f64) -> f64 {
    let c = cosine_term(g, norm(g), g2, norm(g2));
    blended(c, x, x2, eta)
}

/// Dense symmetric matrix of pairwise distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a full row-major `n x n` buffer, checking the invariants.
    pub fn from_full(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::arg("distance buffer has wrong size"));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::arg(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !(a.is_finite() && a >= 0.0) || (a - b).abs() > 1e-12 {
                    return Err(Error::arg(format!(
                        "entry ({i}, {j}) is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Distances between all samples; every sample must carry a gradient.
pub fn pairwise_distance(samples: &[Sample], eta: f64) -> Result<DistanceMatrix> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::arg(format!("eta {eta} outside [0, 1]")));
    }
    let grads: Vec<&[f64]> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.g.as_deref()
                .ok_or_else(|| Error::Contract(format!("sample {i} has no gradient")))
        })
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = grads.iter().map(|g| norm(g)).collect();
    let n = samples.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let c = cosine_term(grads[i], norms[i], grads[j], norms[j]);
            let v = blended(c, &samples[i].x, &samples[j].x, eta);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// One merge of the dendrogram. Clusters are named by their smallest
/// member index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

/// Full merge history of average-linkage clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Runs UPGMA to a single cluster. At each step the pair with the
    /// smallest mean inter-cluster distance merges; ties go to the
    /// lexicographically lowest `(left, right)` pair.
    pub fn build(dist: &DistanceMatrix) -> Self {
        let n = dist.n;
        let mut d = dist.data.clone();
        let mut size = vec![1usize; n];
        let mut active = vec![true; n];
        let mut nn = vec![usize::MAX; n];
        let mut nnd = vec![f64::INFINITY; n];

        let scan = |d: &[f64], active: &[bool], i: usize| -> (usize, f64) {
            let mut best = (usize::MAX, f64::INFINITY);
            for j in i + 1..n {
                if active[j] && d[i * n + j] < best.1 {
                    best = (j, d[i * n + j]);
                }
            }
            best
        };
        for i in 0..n {
            (nn[i], nnd[i]) = scan(&d, &active, i);
        }

        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for _ in 1..n {
            let mut a = usize::MAX;
            for i in 0..n {
                if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nnd[i] < nnd[a]) {
                    a = i;
                }
            }
            let b = nn[a];
            let height = nnd[a];
            if let Some(prev) = merges.last().map(|m: &Merge| m.height) {
                if height < prev - 1e-12 {
                    log::warn!("average-linkage merge height decreased: {prev} -> {height}");
                }
            }
            merges.push(Merge {
                left: a,
                right: b,
                height,
            });

            let (sa, sb) = (size[a] as f64, size[b] as f64);
            active[b] = false;
            for k in 0..n {
                if active[k] && k != a {
                    let v = (sa * d[k * n + a] + sb * d[k * n + b]) / (sa + sb);
                    d[k * n + a] = v;
                    d[a * n + k] = v;
                }
            }
            size[a] += size[b];
            nn[b] = usize::MAX;
            nnd[b] = f64::INFINITY;
            (nn[a], nnd[a]) = scan(&d, &active, a);
            for k in 0..a {
                if !active[k] {
                    continue;
                }
                if nn[k] == a || nn[k] == b {
                    (nn[k], nnd[k]) = scan(&d, &active, k);
                } else {
                    let v = d[k * n + a];
                    if v < nnd[k] || (v == nnd[k] && a < nn[k]) {
                        nn[k] = a;
                        nnd[k] = v;
                    }
                }
            }
            for k in a + 1..b {
                if active[k] && nn[k] == b {
                    (nn[k], nnd[k]) = scan(&d, &active, k);
                }
            }
        }
        Dendrogram { n, merges }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Partition into `clusters` groups by replaying the first
    /// `n - clusters` merges.
    pub fn cut(&self, clusters: usize) -> Result<Partition> {
        let n = self.n;
        if clusters == 0 || clusters > n {
            return Err(Error::arg(format!(
                "cluster count {clusters} outside 1..={n}"
            )));
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for m in &self.merges[..n - clusters] {
            let ra = find(&mut parent, m.left);
            let rb = find(&mut parent, m.right);
            parent[rb] = ra;
        }
        let mut label_of_root = vec![0usize; n];
        let mut next = 0;
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let r = find(&mut parent, i);
            if label_of_root[r] == 0 {
                next += 1;
                label_of_root[r] = next;
            }
            labels.push(label_of_root[r]);
        }
        Ok(Partition {
            labels,
            clusters,
            merge_heights: self.heights(),
        })
    }
}

/// Cluster labels `1..=clusters`, numbered in order of each cluster's
/// smallest member index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub clusters: usize,
    /// Linkage distance of every merge in the full dendrogram.
    pub merge_heights: Vec<f64>,
}

impl Partition {
    /// Sample indices of each cluster, cluster 1 first.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(i);
        }
        out
    }
}

/// UPGMA on `dist`, stopped at `clusters` groups.
pub fn agglomerate(dist: &DistanceMatrix, clusters: usize) -> Result<Partition> {
    if clusters == 0 || clusters > dist.n {
        return Err(Error::arg(format!(
            "cluster count {clusters} outside 1..={}",
            dist.n
        )));
    }
    Dendrogram::build(dist).cut(clusters)
}

/// Gradient-based clustering of a training set.
pub fn cluster_training_set(dataset: &DataSet, clusters: usize, eta: f64) -> Result<Partition> {
    training_dendrogram(dataset, eta)?.cut(clusters)
}

pub fn training_dendrogram(dataset: &DataSet, eta: f64) -> Result<Dendrogram> {
    if !dataset.has_gradients() {
        return Err(Error::Contract("clustering requires gradients".into()));
    }
    Ok(Dendrogram::build(&pairwise_distance(dataset.samples(), eta)?))
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let mut ka: Vec<usize> = a.to_vec();
    ka.sort_unstable();
    ka.dedup();
    let mut kb: Vec<usize> = b.to_vec();
    kb.sort_unstable();
    kb.dedup();
    let mut table = vec![vec![0u64; kb.len()]; ka.len()];
    for (x, y) in a.iter().zip(b) {
        let i = ka.binary_search(x).unwrap();
        let j = kb.binary_search(y).unwrap();
        table[i][j] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb.len())
        .map(|j| c2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = c2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_gradients_have_zero_distance() {
        let g = [0.3, -0.4, 1.0];
        let g2 = [0.6, -0.8, 2.0];
        let x = [0.0; 3];
        assert!(pair_distance(&x, &g, &x, &g2, 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_gradients() {
        let x = [0.0; 2];
        assert_eq!(pair_distance(&x, &[1.0, 0.0], &x, &[0.0, 1.0], 1.0), 1.0);
    }

    #[test]
    fn blended_example() {
        let x = [0.0; 4];
        let x2 = [1.0, 0.0, 0.0, 0.0];
        let g = [1.0, 0.0, 0.0, 0.0];
        let g2 = [0.0, 1.0, 0.0, 0.0];
        assert!((pair_distance(&x, &g, &x2, &g2, 0.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_convention() {
        let x = [0.0; 2];
        assert_eq!(pair_distance(&x, &[0.0, 0.0], &x, &[1.0, 0.0], 1.0), 1.0);
        assert_eq!(pair_distance(&x, &[0.0, 0.0], &x, &[0.0, 0.0], 1.0), 0.0);
    }

    fn sample(x: Vec<f64>, g: Vec<f64>) -> Sample {
        Sample::new(x, 0.0, Some(g))
    }

    #[test]
    fn identical_samples_zero_matrix() {
        let s: Vec<Sample> = (0..4).map(|_| sample(vec![0.1, 0.2], vec![1.0, 2.0])).collect();
        let d = pairwise_distance(&s, 0.5).unwrap();
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn antiparallel_same_location() {
        let s = vec![
            sample(vec![0.5, 0.5], vec![1.0, -2.0]),
            sample(vec![0.5, 0.5], vec![-1.0, 2.0]),
        ];
        for eta in [0.0, 0.3, 1.0] {
            assert!(pairwise_distance(&s, eta).unwrap().get(0, 1).abs() < 1e-15);
        }
    }

    #[test]
    fn pairwise_matches_pair_distance() {
        let s = vec![
            sample(vec![0.1, 0.9, -0.3], vec![1.0, 0.5, 0.0]),
            sample(vec![-0.4, 0.2, 0.8], vec![0.0, 1.0, 1.0]),
            sample(vec![0.7, -0.6, 0.1], vec![2.0, -1.0, 0.3]),
        ];
        let d = pairwise_distance(&s, 0.7).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j {
                    0.0
                } else {
                    pair_distance(
                        &s[i].x,
                        s[i].g.as_ref().unwrap(),
                        &s[j].x,
                        s[j].g.as_ref().unwrap(),
                        0.7,
                    )
                };
                assert_eq!(d.get(i, j), e);
            }
        }
    }

    #[test]
    fn pairwise_needs_gradients() {
        let s = vec![Sample::new(vec![0.0], 0.0, None)];
        assert!(matches!(pairwise_distance(&s, 1.0), Err(Error::Contract(_))));
    }

    fn two_groups() -> DistanceMatrix {
        // points 0, 2, 4 in group A; 1, 3 in group B
        let n = 5;
        let group = |i: usize| i % 2;
        let data = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i == j {
                    0.0
                } else if group(i) == group(j) {
                    0.01
                } else {
                    0.9
                }
            })
            .collect();
        DistanceMatrix::from_full(n, data).unwrap()
    }

    #[test]
    fn recovers_separated_groups() {
        let p = agglomerate(&two_groups(), 2).unwrap();
        assert_eq!(p.labels, vec![1, 2, 1, 2, 1]);
    }

    #[test]
    fn extreme_cluster_counts() {
        let d = two_groups();
        let all = agglomerate(&d, 5).unwrap();
        assert_eq!(all.labels, vec![1, 2, 3, 4, 5]);
        let one = agglomerate(&d, 1).unwrap();
        assert!(one.labels.iter().all(|&l| l == 1));
        assert!(agglomerate(&d, 0).is_err());
        assert!(agglomerate(&d, 6).is_err());
    }

    #[test]
    fn average_linkage_uses_mean_distance() {
        // 0-1 close; 2 is nearer to 0 than to 1 but the average decides
        let data = vec![
            0.0, 1.0, 2.0, 6.0, //
            1.0, 0.0, 4.0, 6.0, //
            2.0, 4.0, 0.0, 6.5, //
            6.0, 6.0, 6.5, 0.0,
        ];
        let dend = Dendrogram::build(&DistanceMatrix::from_full(4, data).unwrap());
        let h = dend.heights();
        assert_eq!(h[0], 1.0);
        assert_eq!(h[1], 3.0);
        assert!((h[2] - (6.0 + 6.0 + 6.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        let data = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let dend = Dendrogram::build(&DistanceMatrix::from_full(3, data).unwrap());
        assert_eq!((dend.merges()[0].left, dend.merges()[0].right), (0, 1));
    }

    #[test]
    fn ari_identical_and_permuted() {
        let a = [1, 1, 2, 2, 3, 3];
        let b = [3, 3, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
        let c = [1, 2, 1, 2, 1, 2];
        assert!(adjusted_rand_index(&a, &c) < 0.1);
    }
}
