//! Small reference markets used by the examples, tests and benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::market::{ScenarioTree, Strategy, TreeBuilder};

/// One step, one asset, increments +1/-1 with probability 1/2 each.
pub fn symmetric_binomial() -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![10.0]);
    b.add_child(0, 0.5, vec![11.0]);
    b.add_child(0, 0.5, vec![9.0]);
    b.build().expect("valid fixture")
}

/// One step, one asset, increment +2 with probability 0.6 and -1 with
/// probability 0.4. Complete market; its unique martingale measure puts
/// 1/3 on the up branch.
pub fn skewed_binomial() -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![1.0]);
    b.add_child(0, 0.6, vec![3.0]);
    b.add_child(0, 0.4, vec![0.0]);
    b.build().expect("valid fixture")
}

/// Symmetric binomial with benchmark `bench` at both terminal nodes.
pub fn benchmarked_binomial(bench: f64) -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![10.0]);
    let u = b.add_child(0, 0.5, vec![11.0]);
    let d = b.add_child(0, 0.5, vec![9.0]);
    b.set_benchmark(u, bench);
    b.set_benchmark(d, bench);
    b.build().expect("valid fixture")
}

/// One-sided increments (+1 and +2): an arbitrage, fails the robust
/// no-arbitrage check in direction +1.
pub fn one_sided_tree() -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![1.0]);
    b.add_child(0, 0.5, vec![2.0]);
    b.add_child(0, 0.5, vec![3.0]);
    b.build().expect("valid fixture")
}

/// Two steps, one asset, +1/-1 increments, branch probabilities 0.6/0.4.
pub fn two_step_binomial() -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![10.0]);
    let u = b.add_child(0, 0.6, vec![11.0]);
    let d = b.add_child(0, 0.4, vec![9.0]);
    for parent in [u, d] {
        let s = b.price(parent)[0];
        b.add_child(parent, 0.6, vec![s + 1.0]);
        b.add_child(parent, 0.4, vec![s - 1.0]);
    }
    b.build().expect("valid fixture")
}

/// Three steps, one asset, +1/-1 symmetric increments.
pub fn three_step_binomial() -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![10.0]);
    let mut frontier = vec![0usize];
    for _ in 0..3 {
        let mut next = Vec::new();
        for parent in frontier {
            let s = b.price(parent)[0];
            next.push(b.add_child(parent, 0.5, vec![s + 1.0]));
            next.push(b.add_child(parent, 0.5, vec![s - 1.0]));
        }
        frontier = next;
    }
    b.build().expect("valid fixture")
}

/// One step, two assets, three increments spread 120 degrees apart so the
/// origin is interior to their convex hull.
pub fn trinomial_2d() -> ScenarioTree {
    let mut b = TreeBuilder::new(2, vec![10.0, 10.0]);
    for (k, p) in [(0usize, 0.3), (1, 0.3), (2, 0.4)] {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0 + 0.2;
        b.add_child(0, p, vec![10.0 + a.cos(), 10.0 + a.sin()]);
    }
    b.build().expect("valid fixture")
}

/// Two steps where the second step has zero increments under one node:
/// the objective is flat in that node's block. Deliberately fails the
/// no-arbitrage check there.
pub fn flat_block_tree() -> ScenarioTree {
    let mut b = TreeBuilder::new(1, vec![10.0]);
    let u = b.add_child(0, 0.5, vec![11.0]);
    let d = b.add_child(0, 0.5, vec![9.0]);
    // live block under u
    b.add_child(u, 0.5, vec![12.0]);
    b.add_child(u, 0.5, vec![10.0]);
    // frozen prices under d
    b.add_child(d, 0.5, vec![9.0]);
    b.add_child(d, 0.5, vec![9.0]);
    b.build().expect("valid fixture")
}

/// Seeded arbitrage-free tree with horizon <= 3, at most two assets and at
/// most three branches per node. One-asset nodes always carry both a
/// strictly positive and a strictly negative increment; two-asset nodes
/// carry three increments whose convex hull strictly contains the origin.
pub fn random_tree(seed: u64) -> ScenarioTree {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let horizon = rng.gen_range(1..=3usize);
    let assets = rng.gen_range(1..=2usize);
    let mut b = TreeBuilder::new(assets, vec![10.0; assets]);
    let mut frontier = vec![0usize];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for parent in frontier {
            let branches = if assets == 1 {
                rng.gen_range(2..=3usize)
            } else {
                3
            };
            let mut weights: Vec<f64> = (0..branches).map(|_| rng.gen_range(0.5..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let parent_price = b.price(parent).to_vec();
            if assets == 1 {
                let mut deltas = vec![rng.gen_range(0.3..1.5), -rng.gen_range(0.3..1.5)];
                if branches == 3 {
                    deltas.push(rng.gen_range(-1.5..1.5));
                }
                for (k, &dsv) in deltas.iter().enumerate() {
                    next.push(b.add_child(parent, weights[k], vec![parent_price[0] + dsv]));
                }
            } else {
                let base = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                for (k, &w) in weights.iter().enumerate().take(3) {
                    let a = base
                        + 2.0 * std::f64::consts::PI * k as f64 / 3.0
                        + rng.gen_range(-0.4..0.4);
                    let r = rng.gen_range(0.5..1.5);
                    next.push(b.add_child(
                        parent,
                        w,
                        vec![parent_price[0] + r * a.cos(), parent_price[1] + r * a.sin()],
                    ));
                }
            }
        }
        frontier = next;
    }
    b.build().expect("generated tree is structurally valid")
}

/// Seeded random strategy with holdings bounded by `bound` in every
/// coordinate.
pub fn random_strategy(tree: &ScenarioTree, seed: u64, bound: f64) -> Strategy {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xA076_1D64_78BD_642F).wrapping_add(3));
    let mut s = Strategy::zero(tree);
    let d = tree.assets();
    for &id in tree.non_terminal() {
        let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
        s.set_theta(id, &theta);
    }
    s
}
