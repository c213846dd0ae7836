//! Partition of the bodies by equal asymptotic velocities.

use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::system::{dist, MassSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition<T: Real> {
    /// Zero-based body indices; each cluster sorted, clusters ordered by
    /// their smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub source_velocity: Configuration<T>,
    pub tol_cluster: T,
}

impl<T: Real> ClusterPartition<T> {
    /// Transitive closure of |aᵢ − aⱼ| ≤ tol.
    pub fn from_velocity(a: &Configuration<T>, tol_cluster: T) -> Result<Self> {
        if !(tol_cluster > T::zero()) {
            return Err(Error::InvalidInput("tol_cluster must be positive".into()));
        }
        let n = a.n_bodies();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if dist(a.body(i), a.body(j)) <= tol_cluster {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                        parent[hi] = lo;
                    }
                }
            }
        }
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = clusters.len();
                clusters.push(Vec::new());
            }
            clusters[slot[r]].push(i);
        }
        let limit = lit::<T>(10.0) * tol_cluster;
        for c in &clusters {
            for (k, &i) in c.iter().enumerate() {
                for &j in &c[k + 1..] {
                    let r = dist(a.body(i), a.body(j));
                    if r > limit {
                        return Err(Error::ChainingAmbiguity {
                            i,
                            j,
                            distance: r.f64(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            clusters,
            source_velocity: a.clone(),
            tol_cluster,
        })
    }

    /// All bodies in one cluster.
    pub fn single(a: &Configuration<T>, tol_cluster: T) -> Self {
        Self {
            clusters: vec![(0..a.n_bodies()).collect()],
            source_velocity: a.clone(),
            tol_cluster,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn all_singletons(&self) -> bool {
        self.clusters.iter().all(|c| c.len() == 1)
    }

    /// Index of the cluster containing each body.
    pub fn labels(&self) -> Vec<usize> {
        let n: usize = self.clusters.iter().map(|c| c.len()).sum();
        let mut lab = vec![0; n];
        for (k, c) in self.clusters.iter().enumerate() {
            for &i in c {
                lab[i] = k;
            }
        }
        lab
    }

    pub fn cluster_mass(&self, sys: &MassSystem<T>, k: usize) -> T {
        self.clusters[k].iter().map(|&i| sys.mass(i)).sum()
    }

    /// Checks that the sets cover 0..n disjointly and match the clustering
    /// rule for `a`.
    pub fn validate(&self, a: &Configuration<T>) -> Result<()> {
        let n = a.n_bodies();
        let mut seen = vec![false; n];
        for c in &self.clusters {
            for &i in c {
                if i >= n || seen[i] {
                    return Err(Error::RegimeMismatch(format!(
                        "partition is not a partition of 0..{n}"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::RegimeMismatch("partition does not cover every body".into()));
        }
        let lab = self.labels();
        for i in 0..n {
            for j in (i + 1)..n {
                let close = dist(a.body(i), a.body(j)) <= self.tol_cluster;
                if close && lab[i] != lab[j] {
                    return Err(Error::RegimeMismatch(format!(
                        "bodies {i} and {j} share an asymptotic velocity but lie in different clusters"
                    )));
                }
                if !close && lab[i] == lab[j] && dist(a.body(i), a.body(j)) > lit::<T>(10.0) * self.tol_cluster {
                    return Err(Error::RegimeMismatch(format!(
                        "bodies {i} and {j} are clustered but have distinct asymptotic velocities"
                    )));
                }
            }
        }
        Ok(())
    }
}
