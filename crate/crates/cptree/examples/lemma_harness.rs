//! Stress-testing the distorted-moment inequalities on seeded families of
//! discrete laws: empirical constants, fitted exponents and scale
//! stability.
//!
//! ```bash
//! cargo run -p cptree --example lemma_harness
//! ```

use cptree::dual::{construct_q, ConstructConfig};
use cptree::fixtures;
use cptree::lemmas::{check_moz1, check_moz2, check_suti, StressFamily};

fn main() -> cptree::Result<()> {
    let family = StressFamily {
        count: 200,
        ..StressFamily::new(42, 200)
    };

    // E[X^s] <= 1 + D (integral of P(X^b > y)^a)^{1/a}
    let suti = check_suti(&family, 0.8, 1.2, 1.0)?;
    println!("moment-vs-tail check (a=0.8, b=1.2, s=1):");
    println!("  empirical D = {:.6}", suti.empirical_constant);
    println!(
        "  max ratio per doubling: first {:.4}, last {:.4}, trend slope {:.2e}",
        suti.scale_max_ratios.first().unwrap(),
        suti.scale_max_ratios.last().unwrap(),
        suti.trend_slope
    );
    println!("  stable = {}", suti.pass);

    // tail(a) <= R1 + R2 * tail(b)^zeta with zeta < 1
    let moz2 = check_moz2(&family, 0.5, 1.5, 0.5)?;
    println!("tail-vs-tail check (a=0.5, b=1.5, s=0.5):");
    println!(
        "  fitted zeta = {:.4} (residual {:.2e}), R2 = {:.6}",
        moz2.fitted_exponent.unwrap(),
        moz2.exponent_residual.unwrap(),
        moz2.empirical_constant
    );
    println!("  stable = {}", moz2.pass);

    // gain tail <= L1 + L2 * loss tail(eta) over mean-constrained laws
    let tree = fixtures::symmetric_binomial();
    let density = construct_q(&tree, &ConstructConfig::default())?;
    let two_point = StressFamily {
        count: 60,
        values: (0.0, 8.0),
        ..StressFamily::new(21, 60)
    };
    let (alpha, beta, gamma, delta) = (0.5, 0.9, 0.6, 0.8);
    let moz1 = check_moz1(&two_point, &density, alpha, beta, gamma, delta, 0.0)?;
    println!("gain-vs-loss check (alpha=0.5, beta=0.9, gamma=0.6, delta=0.8, mean 0):");
    println!(
        "  eta = {:.5} inside ({:.2}, {:.2}); L1 = {:.4}, L2 = {:.4}",
        moz1.fitted_exponent.unwrap(),
        alpha.max(delta),
        beta,
        moz1.intercept.unwrap(),
        moz1.empirical_constant
    );
    println!(
        "  constants over growing prefixes: {:?}",
        moz1.prefix_constants.as_ref().unwrap()
    );
    println!("  stable = {}", moz1.pass);
    Ok(())
}
