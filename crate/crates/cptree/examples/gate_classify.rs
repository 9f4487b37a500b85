//! Well-posedness gate: classify gain/loss exponent tuples by the
//! closed-form inequality tests.
//!
//! ```bash
//! cargo run -p cptree --example gate_classify
//! ```

use cptree::gate::{classify, BenchmarkMode};

fn main() -> cptree::Result<()> {
    let tuples = [
        (0.5, 0.9, 0.6, 0.8),     // first sufficient set
        (0.5, 2.0, 0.4, 1.0),     // second sufficient set only
        (0.9, 0.8, 1.0, 1.0),     // necessary condition fails
        (0.6, 0.65, 0.5, 0.5),    // open middle ground
        (0.88, 0.88, 0.61, 0.69), // the 1992 calibration: alpha = beta
    ];
    println!("{:<30} verdict", "(alpha, beta, gamma, delta)");
    for (alpha, beta, gamma, delta) in tuples {
        let v = classify(alpha, beta, gamma, delta, BenchmarkMode::Ba)?;
        println!(
            "({alpha:>4}, {beta:>4}, {gamma:>4}, {delta:>4})     {:?}{}",
            v.tag,
            if v.both_hold {
                " [both sufficient sets hold]"
            } else {
                ""
            }
        );
        println!("    {}", v.witness);
        if let Some(required) = v.required_benchmark {
            println!("    pairs with benchmark assumption {required:?}");
        }
    }
    Ok(())
}
