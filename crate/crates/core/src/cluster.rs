//! Grouping series by target similarity: squared Euclidean distances and
//! bottom-up agglomerative clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;

/// Symmetric matrix of nonnegative distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut d = vec![0.0; n * n];
        for u in 0..n {
            for v in u + 1..n {
                let x = f(u, v);
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(Error::contract(format!("distance ({u}, {v}) = {x} is not a finite nonnegative value")));
                }
                d[u * n + v] = x;
                d[v * n + u] = x;
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.d[u * self.n + v]
    }

    /// Square CSV with a header row and a leading label column.
    pub fn to_csv_string(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.n {
            return Err(Error::contract("one label per row is required"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::from("series_id")];
        header.extend(labels.iter().cloned());
        w.write_record(&header)?;
        for u in 0..self.n {
            let mut rec = vec![labels[u].clone()];
            rec.extend((0..self.n).map(|v| self.get(u, v).to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// `Σ_t (a[t] − b[t])²`.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("sequence lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn pairwise_distance(targets: &[&[f64]]) -> Result<DistanceMatrix> {
    if let Some(first) = targets.first() {
        if let Some(bad) = targets.iter().find(|t| t.len() != first.len()) {
            return Err(Error::contract(format!(
                "sequence lengths differ: {} vs {}",
                first.len(),
                bad.len()
            )));
        }
    }
    DistanceMatrix::from_fn(targets.len(), |u, v| {
        squared_distance(targets[u], targets[v]).expect("lengths checked")
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            _ => Err(Error::Config(format!("unknown linkage `{s}`"))),
        }
    }
}

/// One agglomeration step. Clusters are named by their smallest member.
#[derive(Clone, Debug, PartialEq)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub distance: f64,
}

/// Full merge sequence from `n` singletons down to one cluster.
///
/// At each step the closest pair of clusters is merged; exact ties go to
/// the pair with the smallest (first, second) smallest-member indices.
pub fn dendrogram(d: &DistanceMatrix, linkage: Linkage) -> Vec<Merge> {
    let n = d.len();
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    // cluster distances indexed by the smallest member of each cluster
    let mut dist: Vec<f64> = (0..n * n).map(|k| d.get(k / n, k % n)).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                let x = dist[i * n + j];
                if best.is_none_or(|(_, _, b)| x < b) {
                    best = Some((i, j, x));
                }
            }
        }
        let (i, j, x) = best.expect("at least two clusters remain");
        let right = members[j].take().unwrap();
        let left = members[i].clone().unwrap();
        let (ni, nj) = (left.len() as f64, right.len() as f64);
        for k in 0..n {
            if k == i || members[k].is_none() {
                continue;
            }
            let (dik, djk) = (dist[i * n + k], dist[j * n + k]);
            let merged = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => (ni * dik + nj * djk) / (ni + nj),
            };
            dist[i * n + k] = merged;
            dist[k * n + i] = merged;
        }
        let mut joined = left.clone();
        joined.extend(&right);
        joined.sort_unstable();
        members[i] = Some(joined);
        merges.push(Merge {
            left,
            right,
            distance: x,
        });
    }
    merges
}

/// Disjoint groups covering every series; group ids are ordered by each
/// group's smallest member.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPartition {
    assignments: Vec<usize>,
    k: usize,
}

impl GroupPartition {
    pub fn from_assignments(assignments: Vec<usize>) -> Result<Self> {
        let k = assignments.iter().max().map_or(0, |m| m + 1);
        for g in 0..k {
            if !assignments.contains(&g) {
                return Err(Error::contract(format!("group {g} is empty")));
            }
        }
        Ok(Self { assignments, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &g) in self.assignments.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// CSV `series_id,group_id`.
    pub fn to_csv_string(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.assignments.len() {
            return Err(Error::contract("one label per series is required"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["series_id", "group_id"])?;
        for (l, g) in labels.iter().zip(&self.assignments) {
            w.write_record([l.as_str(), &g.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn from_clusters(n: usize, clusters: &[Vec<usize>]) -> Self {
        let mut sorted: Vec<&Vec<usize>> = clusters.iter().collect();
        sorted.sort_by_key(|c| c[0]);
        let mut assignments = vec![0; n];
        for (g, c) in sorted.iter().enumerate() {
            for &i in c.iter() {
                assignments[i] = g;
            }
        }
        Self {
            assignments,
            k: clusters.len(),
        }
    }
}

/// Cuts the dendrogram at `k` clusters.
pub fn agglomerate_with(d: &DistanceMatrix, k: usize, linkage: Linkage) -> Result<GroupPartition> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::contract(format!("cluster count {k} must lie in 1..={n}")));
    }
    let merges = dendrogram(d, linkage);
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for m in merges.iter().take(n - k) {
        let li = clusters.iter().position(|c| c.contains(&m.left[0])).unwrap();
        let ri = clusters.iter().position(|c| c.contains(&m.right[0])).unwrap();
        let right = clusters.remove(ri);
        let li = if ri < li { li - 1 } else { li };
        clusters[li].extend(right);
        clusters[li].sort_unstable();
    }
    Ok(GroupPartition::from_clusters(n, &clusters))
}

/// Average-linkage clustering into `k` groups.
pub fn agglomerate(d: &DistanceMatrix, k: usize) -> Result<GroupPartition> {
    agglomerate_with(d, k, Linkage::Average)
}

/// Splits the panel into one sub-panel per group.
pub fn screen(panel: &TimeSeriesPanel, ids: &[String], partition: &GroupPartition) -> Result<Vec<TimeSeriesPanel>> {
    if ids.len() != partition.assignments().len() {
        return Err(Error::contract("partition does not match the id list"));
    }
    let mut covered: Vec<&String> = ids.iter().collect();
    covered.sort();
    let mut all: Vec<String> = panel.ids();
    all.sort();
    if covered.into_iter().cloned().collect::<Vec<_>>() != all {
        for id in ids {
            if panel.position(id).is_none() {
                return Err(Error::contract(format!("unknown series id `{id}`")));
            }
        }
        return Err(Error::contract("partition does not cover the panel"));
    }
    partition
        .groups()
        .iter()
        .map(|g| panel.select(&g.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>()))
        .collect()
}

/// Mean silhouette width of a partition (extension; not used to pick K
/// automatically). Singleton clusters contribute 0.
pub fn silhouette(d: &DistanceMatrix, partition: &GroupPartition) -> Result<f64> {
    let n = d.len();
    if partition.assignments().len() != n {
        return Err(Error::contract("partition does not match the distance matrix"));
    }
    if partition.k() < 2 || partition.k() >= n {
        return Err(Error::contract("silhouette needs 2 <= K < n"));
    }
    let groups = partition.groups();
    let mut total = 0.0;
    for i in 0..n {
        let own = partition.assignments()[i];
        if groups[own].len() == 1 {
            continue;
        }
        let mean_to = |g: &Vec<usize>| {
            let others: Vec<usize> = g.iter().copied().filter(|&j| j != i).collect();
            others.iter().map(|&j| d.get(i, j)).sum::<f64>() / others.len() as f64
        };
        let a = mean_to(&groups[own]);
        let b = groups
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != own)
            .map(|(_, g)| mean_to(g))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Average linkage recomputed from raw pairwise distances at every step.
    fn brute_force(d: &DistanceMatrix) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
        let mut out = Vec::new();
        while clusters.len() > 1 {
            let mut best = (0, 1, f64::INFINITY);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut s = 0.0;
                    for &u in &clusters[a] {
                        for &v in &clusters[b] {
                            s += d.get(u, v);
                        }
                    }
                    let avg = s / (clusters[a].len() * clusters[b].len()) as f64;
                    if avg < best.2 {
                        best = (a, b, avg);
                    }
                }
            }
            let (a, b, _) = best;
            out.push((clusters[a].clone(), clusters[b].clone()));
            let right = clusters.remove(b);
            clusters[a].extend(right);
            clusters[a].sort_unstable();
            clusters.sort_by_key(|c| c[0]);
        }
        out
    }

    fn random_targets(r: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..len).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
    }

    fn matrix(t: &[Vec<f64>]) -> DistanceMatrix {
        let refs: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
        pairwise_distance(&refs).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(squared_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(squared_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(matches!(squared_distance(&[0.0], &[1.0, 2.0]), Err(Error::Contract(_))));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let d = matrix(&random_targets(&mut r, 5, 7));
        for u in 0..5 {
            assert_eq!(d.get(u, u), 0.0);
            for v in 0..5 {
                assert_eq!(d.get(u, v), d.get(v, u));
            }
        }
    }

    #[test]
    fn extreme_k_values() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let d = matrix(&random_targets(&mut r, 6, 4));
        assert_eq!(agglomerate(&d, 6).unwrap().assignments(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(agglomerate(&d, 1).unwrap().assignments(), &[0; 6]);
        assert!(agglomerate(&d, 0).is_err());
        assert!(agglomerate(&d, 7).is_err());
    }

    #[test]
    fn three_point_example() {
        let d = matrix(&[vec![0.0], vec![0.1], vec![10.0]]);
        assert_eq!(agglomerate(&d, 2).unwrap().groups(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn ties_prefer_the_lowest_pair() {
        // all distances equal
        let d = DistanceMatrix::from_fn(4, |_, _| 1.0).unwrap();
        let m = dendrogram(&d, Linkage::Average);
        assert_eq!((m[0].left.clone(), m[0].right.clone()), (vec![0], vec![1]));
        assert_eq!((m[1].left.clone(), m[1].right.clone()), (vec![0, 1], vec![2]));
    }

    #[test]
    fn merge_sequence_matches_brute_force() {
        for seed in 0..300 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let n = r.random_range(2..=6);
            let d = matrix(&random_targets(&mut r, n, 5));
            let fast: Vec<(Vec<usize>, Vec<usize>)> = dendrogram(&d, Linkage::Average)
                .into_iter()
                .map(|m| (m.left, m.right))
                .collect();
            assert_eq!(fast, brute_force(&d), "seed {seed}");
        }
    }

    #[test]
    fn partitions_are_nested() {
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            let d = matrix(&random_targets(&mut r, 9, 6));
            for k in 2..=9 {
                let fine = agglomerate_with(&d, k, linkage).unwrap();
                let coarse = agglomerate_with(&d, k - 1, linkage).unwrap();
                for g in fine.groups() {
                    let parent = coarse.assignments()[g[0]];
                    assert!(g.iter().all(|&i| coarse.assignments()[i] == parent));
                }
                assert_eq!(fine, agglomerate_with(&d, k, linkage).unwrap());
            }
        }
    }

    #[test]
    fn screening_splits_and_covers() {
        let p = crate::panel::tests::random_panel(2, 5, 8, 1);
        let ids = p.ids();
        let one = GroupPartition::from_assignments(vec![0; 5]).unwrap();
        assert_eq!(screen(&p, &ids, &one).unwrap(), vec![p.clone()]);

        let part = GroupPartition::from_assignments(vec![0, 1, 0, 2, 1]).unwrap();
        let subs = screen(&p, &ids, &part).unwrap();
        let mut seen: Vec<String> = subs.iter().flat_map(|s| s.ids()).collect();
        assert_eq!(seen.len(), 5);
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 5);
        assert_eq!(subs[0].ids(), vec!["s0", "s2"]);

        let mut bad = ids.clone();
        bad[4] = "nope".into();
        assert!(matches!(screen(&p, &bad, &part), Err(Error::Contract(_))));
    }

    #[test]
    fn silhouette_prefers_separated_groups() {
        let t = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.2]];
        let d = matrix(&t);
        let good = GroupPartition::from_assignments(vec![0, 0, 1, 1]).unwrap();
        let bad = GroupPartition::from_assignments(vec![0, 1, 0, 1]).unwrap();
        assert!(silhouette(&d, &good).unwrap() > 0.9);
        assert!(silhouette(&d, &bad).unwrap() < 0.0);
    }

    #[test]
    fn csv_exports() {
        let d = matrix(&[vec![0.0], vec![2.0]]);
        let labels = vec!["a".to_string(), "b".to_string()];
        assert_eq!(d.to_csv_string(&labels).unwrap(), "series_id,a,b\na,0,4\nb,4,0\n");
        let p = GroupPartition::from_assignments(vec![0, 0]).unwrap();
        assert_eq!(p.to_csv_string(&labels).unwrap(), "series_id,group_id\na,0\nb,0\n");
    }
}
