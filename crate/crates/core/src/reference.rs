//! Reference motions r₀(t) = at + βb t^{2/3}.

use serde::{Deserialize, Serialize};

use crate::central::{find_cluster_ccs, find_minimal_cc, CcOptions, CentralConfigResult};
use crate::cluster::ClusterPartition;
use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::system::MassSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Hyperbolic,
    Parabolic,
    HyperbolicParabolic,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Hyperbolic => "hyperbolic",
            Regime::Parabolic => "parabolic",
            Regime::HyperbolicParabolic => "hyperbolic-parabolic",
        })
    }
}

/// Regime, asymptotic data and initial condition of one problem.
///
/// Body i in cluster K moves on the reference as aᵢt + β_K b^K_i t^{2/3}; the
/// per-body coefficient β_K b^K_i is stored as `c`. Inside a cluster, `a` is
/// replaced by the cluster's mass-weighted mean so intra-cluster differences
/// vanish exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMotion<T: Real> {
    pub regime: Regime,
    pub system: MassSystem<T>,
    pub a: Configuration<T>,
    pub partition: ClusterPartition<T>,
    /// One entry per cluster; `None` for singletons.
    pub cluster_configs: Vec<Option<CentralConfigResult<T>>>,
    pub x0: Configuration<T>,
    /// x⁰ − r₀(1).
    pub x0_shift: Configuration<T>,
    c: Configuration<T>,
}

impl<T: Real> ReferenceMotion<T> {
    /// Pure hyperbolic reference r₀ = at. `x0 = None` starts on the
    /// reference (x⁰ = a).
    pub fn hyperbolic(
        sys: &MassSystem<T>,
        a: &Configuration<T>,
        x0: Option<&Configuration<T>>,
        tol_cluster: T,
    ) -> Result<Self> {
        let a = sys.project_com(a)?;
        let partition = ClusterPartition::from_velocity(&a, tol_cluster)?;
        let configs = vec![None; partition.len()];
        Self::assemble(Regime::Hyperbolic, sys, a, partition, configs, x0)
    }

    /// Completely parabolic reference r₀ = βb t^{2/3} from a minimal central
    /// configuration of the whole system.
    pub fn parabolic(
        sys: &MassSystem<T>,
        cc: CentralConfigResult<T>,
        x0: Option<&Configuration<T>>,
        tol_cluster: T,
    ) -> Result<Self> {
        let a = sys.zeros();
        let partition = ClusterPartition::single(&a, tol_cluster);
        Self::assemble(Regime::Parabolic, sys, a, partition, vec![Some(cc)], x0)
    }

    pub fn hyperbolic_parabolic(
        sys: &MassSystem<T>,
        a: &Configuration<T>,
        partition: ClusterPartition<T>,
        configs: Vec<Option<CentralConfigResult<T>>>,
        x0: Option<&Configuration<T>>,
    ) -> Result<Self> {
        let a = sys.project_com(a)?;
        Self::assemble(Regime::HyperbolicParabolic, sys, a, partition, configs, x0)
    }

    /// Picks the regime from `a` (None or zero means parabolic), clusters
    /// it, and computes every central configuration needed.
    pub fn from_velocity(
        sys: &MassSystem<T>,
        a: Option<&Configuration<T>>,
        x0: Option<&Configuration<T>>,
        tol_cluster: T,
        cc: &CcOptions,
    ) -> Result<Self> {
        let a = match a {
            Some(a) => sys.project_com(a)?,
            None => sys.zeros(),
        };
        if a.max_abs() <= tol_cluster {
            let r = find_minimal_cc(sys, cc)?;
            return Self::parabolic(sys, r, x0, tol_cluster);
        }
        let partition = ClusterPartition::from_velocity(&a, tol_cluster)?;
        if partition.all_singletons() {
            return Self::hyperbolic(sys, &a, x0, tol_cluster);
        }
        let configs = find_cluster_ccs(sys, &partition, cc)?;
        Self::hyperbolic_parabolic(sys, &a, partition, configs, x0)
    }

    fn assemble(
        regime: Regime,
        sys: &MassSystem<T>,
        mut a: Configuration<T>,
        partition: ClusterPartition<T>,
        configs: Vec<Option<CentralConfigResult<T>>>,
        x0: Option<&Configuration<T>>,
    ) -> Result<Self> {
        sys.check_shape(&a)?;
        if configs.len() != partition.len() {
            return Err(Error::RegimeMismatch(format!(
                "{} central configurations for {} clusters",
                configs.len(),
                partition.len()
            )));
        }
        let scale = T::one() + a.max_abs();
        match regime {
            Regime::Hyperbolic => {
                partition.validate(&a)?;
                if !partition.all_singletons() {
                    return Err(Error::RegimeMismatch(
                        "hyperbolic regime needs pairwise distinct asymptotic velocities".into(),
                    ));
                }
            }
            Regime::Parabolic => {
                if a.max_abs() > partition.tol_cluster * scale || partition.len() != 1 {
                    return Err(Error::RegimeMismatch("parabolic regime needs a = 0".into()));
                }
                if configs[0].is_none() {
                    return Err(Error::RegimeMismatch(
                        "parabolic regime needs a central configuration".into(),
                    ));
                }
            }
            Regime::HyperbolicParabolic => {
                partition.validate(&a)?;
                if a.max_abs() <= partition.tol_cluster {
                    return Err(Error::RegimeMismatch(
                        "hyperbolic-parabolic regime needs a != 0".into(),
                    ));
                }
                if partition.all_singletons() {
                    return Err(Error::RegimeMismatch(
                        "hyperbolic-parabolic regime needs a cluster with two or more bodies".into(),
                    ));
                }
            }
        }
        // cluster data: mean velocity and embedded β_K b^K
        let mut c = sys.zeros();
        for (k, members) in partition.clusters.iter().enumerate() {
            let mk: T = members.iter().map(|&i| sys.mass(i)).sum();
            let d = sys.dim();
            let mut mean = vec![T::zero(); d];
            for &i in members {
                for (q, mq) in mean.iter_mut().enumerate() {
                    *mq += sys.mass(i) * a.body(i)[q] / mk;
                }
            }
            for &i in members {
                a.body_mut(i).copy_from_slice(&mean);
            }
            match (&configs[k], members.len()) {
                (None, 1) => {}
                (Some(cc), len) if len >= 2 => {
                    if cc.b.n_bodies() != len || cc.b.dim() != d {
                        return Err(Error::RegimeMismatch(format!(
                            "central configuration of cluster {k} has the wrong shape"
                        )));
                    }
                    let sub = sys.subsystem(members)?;
                    let nb = sub.mass_inner(&cc.b, &cc.b)?;
                    if (nb - T::one()).abs() > lit(1e-8) || !sub.is_centered(&cc.b) {
                        return Err(Error::RegimeMismatch(format!(
                            "central configuration of cluster {k} is not normalized"
                        )));
                    }
                    for (pos, &i) in members.iter().enumerate() {
                        for q in 0..d {
                            c.body_mut(i)[q] = cc.beta * cc.b.body(pos)[q];
                        }
                    }
                }
                (None, _) => {
                    return Err(Error::RegimeMismatch(format!(
                        "cluster {k} has no central configuration"
                    )))
                }
                (Some(_), _) => {
                    return Err(Error::RegimeMismatch(format!(
                        "singleton cluster {k} must not carry a central configuration"
                    )))
                }
            }
        }
        if regime == Regime::Hyperbolic {
            let (lo, _) = sys.separations(&a);
            if !(lo > T::zero()) {
                return Err(Error::RegimeMismatch("asymptotic velocity has a collision".into()));
            }
        }
        let r1 = a.add(&c);
        let x0 = match x0 {
            Some(x) => sys.project_com(x)?,
            None => r1.clone(),
        };
        let (lo, _) = sys.separations(&x0);
        if !(lo > sys.collision_threshold(&x0)) {
            let (i, j) = closest_pair(sys, &x0);
            return Err(Error::CollisionAtStart { i, j });
        }
        let x0_shift = x0.sub(&r1);
        Ok(Self {
            regime,
            system: sys.clone(),
            a,
            partition,
            cluster_configs: configs,
            x0,
            x0_shift,
            c,
        })
    }

    /// Same asymptotic data, new initial condition.
    pub fn with_x0(&self, x0: &Configuration<T>) -> Result<Self> {
        let x0 = self.system.project_com(x0)?;
        let (lo, _) = self.system.separations(&x0);
        if !(lo > self.system.collision_threshold(&x0)) {
            let (i, j) = closest_pair(&self.system, &x0);
            return Err(Error::CollisionAtStart { i, j });
        }
        let mut out = self.clone();
        out.x0_shift = x0.sub(&self.a.add(&self.c));
        out.x0 = x0;
        Ok(out)
    }

    /// Per-body coefficient β_K b^K_i of t^{2/3}.
    pub fn parabolic_coeff(&self) -> &Configuration<T> {
        &self.c
    }

    pub fn n_bodies(&self) -> usize {
        self.system.n_bodies()
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn cluster_mass(&self, k: usize) -> T {
        self.partition.cluster_mass(&self.system, k)
    }

    pub fn cluster_beta(&self, k: usize) -> T {
        self.cluster_configs[k].as_ref().map_or(T::zero(), |c| c.beta)
    }

    /// (r₀(t), ṙ₀(t), r̈₀(t)).
    pub fn eval(&self, t: T) -> (Configuration<T>, Configuration<T>, Configuration<T>) {
        let tau = t.cbrt() * t.cbrt();
        let two3 = lit::<T>(2.0 / 3.0);
        let r0 = self.a.scaled(t).add(&self.c.scaled(tau));
        let r1 = self.a.add(&self.c.scaled(two3 / t.cbrt()));
        let r2 = self.c.scaled(-lit::<T>(2.0 / 9.0) / (t * t.cbrt()));
        (r0, r1, r2)
    }

    /// Energy of the expansive motion: ½‖a‖²_𝓜 (zero when parabolic).
    pub fn h_expected(&self) -> T {
        self.system.kinetic(&self.a).unwrap_or(T::nan())
    }
}

fn closest_pair<T: Real>(sys: &MassSystem<T>, x: &Configuration<T>) -> (usize, usize) {
    let n = sys.n_bodies();
    let mut best = (0, 1, T::infinity());
    for i in 0..n {
        for j in (i + 1)..n {
            let r = crate::system::dist(x.body(i), x.body(j));
            if r < best.2 {
                best = (i, j, r);
            }
        }
    }
    (best.0, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(rows: &[[f64; 2]]) -> Configuration<f64> {
        Configuration::from_rows(rows).unwrap()
    }

    fn cc_opts() -> CcOptions {
        CcOptions {
            seeds: 8,
            ..CcOptions::default()
        }
    }

    #[test]
    fn hyperbolic_reference() {
        let sys = MassSystem::equal(2, 2).unwrap();
        let a = cfg(&[[1.0, 0.0], [-1.0, 0.0]]);
        let r = ReferenceMotion::hyperbolic(&sys, &a, None, 1e-9).unwrap();
        assert_eq!(r.regime, Regime::Hyperbolic);
        let (r0, r1, r2) = r.eval(3.0);
        assert_eq!(r0, a.scaled(3.0));
        assert_eq!(r1, a);
        assert_eq!(r2.max_abs(), 0.0);
        assert_eq!(r.x0_shift.max_abs(), 0.0);
        assert_eq!(r.h_expected(), 1.0);
    }

    #[test]
    fn parabolic_reference_is_homothetic_solution() {
        let sys = MassSystem::equal(3, 2).unwrap();
        let r = ReferenceMotion::from_velocity(&sys, None, None, 1e-9, &cc_opts()).unwrap();
        assert_eq!(r.regime, Regime::Parabolic);
        let cc = r.cluster_configs[0].as_ref().unwrap();
        let (r01, _, _) = r.eval(1.0);
        assert!(r01.sub(&cc.b.scaled(cc.beta)).max_abs() < 1e-15);
        let mut t = 1.0f64;
        while t <= 1e6 {
            let (r0, _, r2) = r.eval(t);
            let f = sys.potential_gradient(&r0).unwrap();
            let lhs = sys.lower(&r2);
            let res = sys.mass_norm(&lhs.sub(&f)).unwrap();
            assert!(res * t * t <= 1e-8, "t = {t}: {res}");
            if [1.0, 10.0, 100.0].contains(&t) {
                let rel = sys.inverse_mass_norm(&lhs.sub(&f)).unwrap() / sys.inverse_mass_norm(&f).unwrap();
                assert!(rel <= 1e-10);
            }
            t *= 10f64.powf(0.25);
        }
        assert_eq!(r.h_expected(), 0.0);
    }

    #[test]
    fn mixed_reference() {
        let sys = MassSystem::equal(3, 2).unwrap();
        let a = cfg(&[[0.5, 0.0], [0.5, 0.0], [-1.0, 0.0]]);
        let r = ReferenceMotion::from_velocity(&sys, Some(&a), None, 1e-9, &cc_opts()).unwrap();
        assert_eq!(r.regime, Regime::HyperbolicParabolic);
        assert_eq!(r.partition.clusters, vec![vec![0, 1], vec![2]]);
        assert_relative_eq!(r.cluster_beta(0), (4.5 * 0.5f64.sqrt()).cbrt(), max_relative = 1e-12);
        assert_eq!(r.cluster_beta(1), 0.0);
        let c = r.parabolic_coeff();
        // cluster barycenter of b vanishes
        assert!((c.body(0)[0] + c.body(1)[0]).abs() < 1e-14);
        assert_eq!(c.body(2), &[0.0, 0.0]);
        assert_relative_eq!(r.h_expected(), 0.5 * (0.25 + 0.25 + 1.0));
    }

    #[test]
    fn regime_mismatches() {
        let sys = MassSystem::equal(3, 2).unwrap();
        let a = cfg(&[[0.5, 0.0], [0.5, 0.0], [-1.0, 0.0]]);
        assert!(matches!(
            ReferenceMotion::hyperbolic(&sys, &a, None, 1e-9),
            Err(Error::RegimeMismatch(_))
        ));
        let p = ClusterPartition::from_velocity(&a, 1e-9).unwrap();
        assert!(ReferenceMotion::hyperbolic_parabolic(&sys, &a, p, vec![None, None], None).is_err());
        let x0 = cfg(&[[1.0, 0.0], [1.0, 0.0], [-2.0, 0.0]]);
        let b = cfg(&[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]);
        assert!(matches!(
            ReferenceMotion::hyperbolic(&sys, &b, Some(&x0), 1e-9),
            Err(Error::CollisionAtStart { i: 0, j: 1 })
        ));
    }
}
