//! Seeded instance generators mirroring the benchmark families: random and
//! quadratic-distance costs, random marginals, Birkhoff anchors with and
//! without prescribed entries, and partial-transport mass fractions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transolve_core::problem::{
    build_birkhoff_projection, build_optimal_transport, build_partial_transport, gen_cost,
    CostKind, GeneralizedTransportProblem, ProblemError,
};
use transolve_core::sparsela::DenseMat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    OtRandom,
    OtQuadratic,
    Birkhoff,
    BirkhoffFixed,
    PartialRandom,
    PartialQuadratic,
}

impl std::str::FromStr for GenKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ot-random" => Ok(GenKind::OtRandom),
            "ot-quadratic" => Ok(GenKind::OtQuadratic),
            "birkhoff" => Ok(GenKind::Birkhoff),
            "birkhoff-fixed" => Ok(GenKind::BirkhoffFixed),
            "partial-random" => Ok(GenKind::PartialRandom),
            "partial-quadratic" => Ok(GenKind::PartialQuadratic),
            other => Err(format!(
                "unknown kind `{other}`; expected one of ot-random, ot-quadratic, \
                 birkhoff, birkhoff-fixed, partial-random, partial-quadratic"
            )),
        }
    }
}

/// uniform-positive entries, normalized to unit total mass
fn random_marginal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// fraction of entries pinned by the birkhoff-fixed generator
const FIXED_FRACTION: f64 = 0.05;

pub fn generate(
    kind: GenKind,
    n: usize,
    seed: u64,
) -> Result<GeneralizedTransportProblem, ProblemError> {
    // marginal stream decoupled from the cost stream so the cost matrix
    // matches gen_cost(seed) exactly
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    match kind {
        GenKind::OtRandom | GenKind::OtQuadratic => {
            let cost_kind = if kind == GenKind::OtRandom {
                CostKind::Random
            } else {
                CostKind::QuadraticDistance
            };
            let c = gen_cost(cost_kind, n, seed)?;
            let mu = random_marginal(&mut rng, n);
            let nu = random_marginal(&mut rng, n);
            build_optimal_transport(&c, &mu, &nu)
        }
        GenKind::Birkhoff | GenKind::BirkhoffFixed => {
            let mut phi = DenseMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    phi.set(i, j, rng.gen::<f64>());
                }
            }
            if kind == GenKind::Birkhoff {
                build_birkhoff_projection(&phi, None)
            } else {
                let want = ((n * n) as f64 * FIXED_FRACTION).ceil() as usize;
                let mut picked = std::collections::BTreeSet::new();
                while picked.len() < want.min(n * n) {
                    picked.insert(rng.gen_range(0..n * n));
                }
                // pinned anchor entries are redrawn at the doubly-stochastic
                // magnitude ~1/n; unit-scale pins would exceed the row and
                // column budgets and make the polytope empty
                let fixed: Vec<(usize, usize, f64)> = picked
                    .into_iter()
                    .map(|flat| {
                        let (i, j) = (flat / n, flat % n);
                        let value = rng.gen::<f64>() * (2.0 / n as f64).min(1.0);
                        phi.set(i, j, value);
                        (i, j, value)
                    })
                    .collect();
                build_birkhoff_projection(&phi, Some(&fixed))
            }
        }
        GenKind::PartialRandom | GenKind::PartialQuadratic => {
            let cost_kind = if kind == GenKind::PartialRandom {
                CostKind::Random
            } else {
                CostKind::QuadraticDistance
            };
            let c = gen_cost(cost_kind, n, seed)?;
            let mu = random_marginal(&mut rng, n);
            let nu = random_marginal(&mut rng, n);
            let a_max: f64 = mu.iter().sum::<f64>().min(nu.iter().sum());
            // uniform in (0, a_max]
            let a = a_max * (1.0 - rng.gen::<f64>());
            build_partial_transport(&c, &mu, &nu, a)
        }
    }
}
