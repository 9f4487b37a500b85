//! Exact Choquet evaluation of distorted gain/loss functionals on a
//! discrete law, cross-checked against the brute-force Riemann oracle.
//!
//! ```bash
//! cargo run -p cptree --example choquet
//! ```

use cptree::cpt::{choquet_brute, cpt_value, CptSpec, DiscreteDistribution};

fn main() -> cptree::Result<()> {
    // a four-outcome payoff net of its benchmark
    let law = DiscreteDistribution::new(vec![(4.0, 0.1), (1.0, 0.4), (-0.5, 0.3), (-3.0, 0.2)])?;
    let spec = CptSpec::power(0.5, 0.9, 0.7, 0.8)?;
    spec.validate(64)?;

    let (v, v_plus, v_minus) = cpt_value(&law, &spec)?;
    println!("payoff law      {:?}", law.atoms());
    println!("distorted gains  V+ = {v_plus:.9}");
    println!("distorted losses V- = {v_minus:.9}");
    println!("objective        V  = {v:.9}");

    // the same integrals by a left-endpoint Riemann sum, step 1e-6
    let step = 1e-6;
    let brute_plus = choquet_brute(
        &law,
        |x| spec.u_plus.eval(x.max(0.0)),
        |p| spec.w_plus.eval(p),
        step,
        3.0,
    )?;
    let brute_minus = choquet_brute(
        &law,
        |x| spec.u_minus.eval((-x).max(0.0)),
        |p| spec.w_minus.eval(p),
        step,
        3.0,
    )?;
    println!(
        "oracle agreement: gains {:.2e}, losses {:.2e} (bound {:.2e})",
        (v_plus - brute_plus).abs(),
        (v_minus - brute_minus).abs(),
        10.0 * step
    );

    // the identity distortion collapses to plain expected utility
    let undistorted = CptSpec::power(0.5, 0.9, 1.0, 1.0)?;
    let (_, plain_plus, _) = cpt_value(&law, &undistorted)?;
    let direct: f64 = law.expectation(|x| undistorted.u_plus.eval(x.max(0.0)));
    println!("identity distortion: V+ = {plain_plus:.12} vs E[u(X+)] = {direct:.12}");

    // the 1992 Tversky-Kahneman calibration ships as a preset
    let kt = CptSpec::kt1992();
    let (v_kt, _, _) = cpt_value(&law, &kt)?;
    println!("kt1992 preset:   V  = {v_kt:.9}");
    Ok(())
}
