//! Quantitative no-arbitrage certificates on scenario trees: per-node
//! loss thresholds and conditional loss probabilities, and a failing
//! market with the offending direction identified.
//!
//! ```bash
//! cargo run -p cptree --example na_check
//! ```

use cptree::fixtures;
use cptree::market::check_robust_na;

fn main() {
    // every unit position must lose at least kappa with probability beta
    let tree = fixtures::skewed_binomial();
    let cert = check_robust_na(&tree, 64);
    println!("skewed binomial (+2 w.p. 0.6, -1 w.p. 0.4):");
    println!("  pass = {}", cert.pass);
    for &id in tree.non_terminal() {
        let c = cert.cert(id).expect("certified node");
        println!("  node {id}: kappa = {:.4}, beta = {:.4}", c.kappa, c.beta);
    }

    let tree = fixtures::trinomial_2d();
    let cert = check_robust_na(&tree, 128);
    let c = cert.cert(tree.root()).expect("certified node");
    println!("two-asset trinomial (grid of 128 directions):");
    println!(
        "  pass = {}, kappa = {:.4}, beta = {:.4}",
        cert.pass, c.kappa, c.beta
    );

    // one-sided increments admit a riskless gain
    let tree = fixtures::one_sided_tree();
    let cert = check_robust_na(&tree, 64);
    let failure = cert.failure.expect("arbitrage detected");
    println!("one-sided increments (+1, +2):");
    println!(
        "  pass = {}, node {} never loses in direction {:?}",
        cert.pass, failure.node, failure.direction
    );
}
