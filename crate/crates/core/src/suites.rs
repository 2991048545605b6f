//! Randomized property suites for the information-theoretic lemmas and the
//! forest rank bound. Each instance draws from its own seeded stream, so a
//! suite's result depends only on `(seed, instances)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{verify_turan, BipartiteGraph};
use crate::infotheory::{
    basic_inequality_violations, check_data_processing, check_fano, check_subadditivity, hamming_distance,
    JointDistribution, MarkovChain,
};
use crate::seed::{task_rng, task_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Fano,
    Subadditivity,
    DataProcessing,
    Turan,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Fano, Suite::Subadditivity, Suite::DataProcessing, Suite::Turan];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Fano => "fano",
            Suite::Subadditivity => "subadditivity",
            Suite::DataProcessing => "data_processing",
            Suite::Turan => "turan",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: u64,
    pub violations: u64,
    /// Largest `lhs - rhs` seen; negative when every instance has room.
    pub max_excess: f64,
    pub first_violation: Option<u64>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Result of one instance: `(violated, lhs - rhs)`.
type Outcome = (bool, f64);

fn random_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let sparse = rng.gen_bool(0.3);
    let mut w: Vec<f64> = (0..n)
        .map(|_| if sparse && rng.gen_bool(0.5) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let i = rng.gen_range(0..n);
        w[i] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn fano_instance(seed: u64) -> Outcome {
    let mut rng = task_rng(seed, 0);
    loop {
        let k = rng.gen_range(1..=8usize);
        let v = rng.gen_range(0..1u64 << k);
        // Weights decaying with distance from v keep the premise reachable.
        let decay: f64 = rng.gen_range(0.0..0.6);
        let mut w: Vec<f64> = (0..1u64 << k)
            .map(|u| rng.gen::<f64>() * decay.powi(hamming_distance(u, v) as i32))
            .collect();
        w[v as usize] += 1e-3;
        let total: f64 = w.iter().sum();
        let d = JointDistribution::new(1, w.iter().enumerate().map(|(u, &x)| (vec![u as u64], x / total)))
            .expect("normalized weights");
        let mean: f64 = d
            .entries()
            .iter()
            .map(|(u, p)| p * hamming_distance(u[0], v) as f64)
            .sum();
        let tight = mean / k as f64;
        if tight > 0.5 {
            continue;
        }
        let eps = if rng.gen_bool(0.5) { tight } else { rng.gen_range(tight..=0.5) };
        let r = check_fano(&d, k, v, eps).expect("arity 1");
        if !r.premise_met {
            continue;
        }
        return (r.pass == Some(false), r.entropy - r.bound);
    }
}

fn subadditivity_instance(seed: u64) -> Outcome {
    let mut rng = task_rng(seed, 0);
    let dims = rng.gen_range(2..=4usize);
    let sizes: Vec<u64> = (0..dims).map(|_| rng.gen_range(1..=4)).collect();
    let cells: u64 = sizes.iter().product();
    let w = random_weights(&mut rng, cells as usize);
    let entries = w.iter().enumerate().map(|(i, &p)| {
        let mut rest = i as u64;
        let tuple = sizes
            .iter()
            .map(|&s| {
                let c = rest % s;
                rest /= s;
                c
            })
            .collect();
        (tuple, p)
    });
    let d = JointDistribution::new(dims, entries).expect("normalized weights");
    let r = check_subadditivity(&d).expect("valid coordinates");
    let others: Vec<usize> = (1..dims).collect();
    let basic = basic_inequality_violations(&d, &[0], &others).expect("valid coordinates");
    (!r.pass || !basic.is_empty(), r.joint_entropy - r.marginal_sum)
}

fn stochastic<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| random_weights(rng, cols)).collect()
}

fn data_processing_instance(seed: u64) -> Outcome {
    let mut rng = task_rng(seed, 0);
    let (nx, ny, nz) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
    let chain = MarkovChain {
        px: random_weights(&mut rng, nx),
        y_given_x: stochastic(&mut rng, nx, ny),
        z_given_y: stochastic(&mut rng, ny, nz),
    };
    let r = check_data_processing(&chain).expect("valid chain");
    (!r.pass, r.i_xz - r.i_xy)
}

fn turan_instance(seed: u64) -> Outcome {
    let mut rng = task_rng(seed, 0);
    let (l, r) = (rng.gen_range(1..=64usize), rng.gen_range(1..=64usize));
    let density: f64 = rng.gen::<f64>().powi(2);
    let mut edges = Vec::new();
    for a in 0..l {
        for b in 0..r {
            if rng.gen_bool(density) {
                edges.push((a, b));
            }
        }
    }
    let g = BipartiteGraph::new(l, r, edges).expect("simple by construction");
    let t = verify_turan(&g);
    (!t.pass, t.edges as f64 - (t.rank * t.rank) as f64)
}

/// Runs `instances` random instances of `suite`.
pub fn run_suite(suite: Suite, instances: u64, seed: u64) -> SuiteReport {
    let f: fn(u64) -> Outcome = match suite {
        Suite::Fano => fano_instance,
        Suite::Subadditivity => subadditivity_instance,
        Suite::DataProcessing => data_processing_instance,
        Suite::Turan => turan_instance,
    };
    let root = task_seed(seed, suite.tag());
    let outcomes: Vec<Outcome> = (0..instances).into_par_iter().map(|i| f(task_seed(root, i))).collect();
    SuiteReport {
        suite,
        instances,
        violations: outcomes.iter().filter(|o| o.0).count() as u64,
        max_excess: outcomes.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max),
        first_violation: outcomes.iter().position(|o| o.0).map(|i| i as u64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_and_are_deterministic() {
        for s in Suite::ALL {
            let a = run_suite(s, 500, 11);
            assert!(a.pass(), "{a:?}");
            assert_eq!(a, run_suite(s, 500, 11));
        }
    }

    #[test]
    fn fano_instances_come_close_to_the_bound() {
        // Tight instances should reach within a bit of k H2(eps).
        let r = run_suite(Suite::Fano, 2000, 5);
        assert!(r.max_excess > -1.0, "{r:?}");
    }
}
