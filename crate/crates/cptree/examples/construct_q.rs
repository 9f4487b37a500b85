//! Dual construction of an equivalent martingale measure: maximise the
//! expectation of a fixed concave utility of terminal wealth, normalise
//! the marginal utility into a density, verify the martingale property
//! and inspect the moment diagnostics it supports.
//!
//! ```bash
//! cargo run -p cptree --example construct_q
//! ```

use cptree::dual::{
    construct_q, moment_diagnostics, pi_admissible_sup, verify_martingale, ConstructConfig,
};
use cptree::fixtures;
use cptree::market::Strategy;

fn main() -> cptree::Result<()> {
    let tree = fixtures::skewed_binomial();
    let density = construct_q(&tree, &ConstructConfig::default())?;

    println!("complete one-step market, increments +2 (p = 0.6) and -1 (p = 0.4):");
    println!(
        "  solver: {} iterations, objective {:.9}",
        density.trace.iterations, density.trace.objective
    );
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        println!(
            "  leaf {leaf}: p = {:.3}, rho = {:.9}, q = {:.9}",
            density.leaf_p[k], density.rho[k], density.leaf_q[k]
        );
    }
    println!(
        "  density range [{:.6}, {:.6}]",
        density.min_rho, density.max_rho
    );
    println!(
        "  martingale residual = {:.3e} (recheck: {:.3e})",
        density.residual,
        verify_martingale(&tree, &density)
    );

    // the measure prices every strategy back to its initial capital
    let z = 1.0;
    let theta = Strategy::constant(&tree, &[3.0])?;
    let pi = 1.1_f64.min(pi_admissible_sup(0.9, 0.8, 1.0));
    let report = moment_diagnostics(&tree, &density, z, &theta, pi)?;
    println!("diagnostics for theta = 3 at z = {z} (pi = {pi:.3}):");
    println!(
        "  max_t |E_Q X_t - z|      = {:.3e}",
        report.identity_residual
    );
    println!(
        "  E_Q (X_T)_+              = {:.6}",
        report.terminal_pos_mean
    );
    println!(
        "  E_Q (X_T)_-^pi           = {:.6}",
        report.terminal_neg_moment
    );
    println!(
        "  E_Q |theta_t|^(1/2)      = {:?}",
        report.theta_half_moment
    );
    println!(
        "  pointwise gain-bound slack (<= 0 when it holds) = {:.3e}",
        report.pointwise_gain_violation
    );

    // a deeper market: the measure exists whenever the no-arbitrage
    // certificate passes
    let tree = fixtures::random_tree(7);
    let density = construct_q(&tree, &ConstructConfig::default())?;
    println!(
        "random tree (horizon {}, {} assets, {} leaves): residual {:.3e}, rho in [{:.4}, {:.4}]",
        tree.horizon(),
        tree.assets(),
        tree.leaves().len(),
        density.residual,
        density.min_rho,
        density.max_rho
    );
    Ok(())
}
