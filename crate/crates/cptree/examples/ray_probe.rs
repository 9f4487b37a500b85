//! Empirical ill-posedness detection: evaluate the objective along
//! geometric leverage rays, fit tail slopes in the log-log scale, and
//! flag divergence or eventual decrease.
//!
//! ```bash
//! cargo run -p cptree --example ray_probe
//! ```

use cptree::cpt::CptSpec;
use cptree::fixtures;
use cptree::gate::{default_directions, ray_probe, RayProbeConfig};

fn main() -> cptree::Result<()> {
    let tree = fixtures::symmetric_binomial();
    let directions = default_directions(&tree, 7);
    println!(
        "{} probe directions (coordinate rays plus seeded random)",
        directions.len()
    );

    // leverage out to 2^48 so empirical divergence can cross the
    // absolute threshold
    let config = RayProbeConfig {
        lambda_count: 49,
        ..RayProbeConfig::default()
    };

    // gains grow faster than losses: the supremum is infinite
    let ill = CptSpec::power(0.9, 0.8, 1.0, 1.0)?;
    let report = ray_probe(&tree, &ill, 0.0, &directions, &config)?;
    println!("alpha = 0.9 > beta = 0.8 (identity distortions):");
    println!("  divergence evidence = {}", report.divergent);
    let ray = &report.rays[0];
    println!(
        "  first ray: gain slope {:.4}, loss slope {:.4}, net slope {:.4}",
        ray.slope_plus.unwrap_or(f64::NAN),
        ray.slope_minus.unwrap_or(f64::NAN),
        ray.net_slope.unwrap_or(f64::NAN),
    );
    let tail = &ray.points[ray.points.len() - 3..];
    for p in tail {
        println!(
            "    lambda = 2^{:>2}: V = {:.4e}",
            p.lambda.log2() as i32,
            p.v
        );
    }

    // a well-posed tuple on the same rays: losses dominate eventually
    let well = CptSpec::power(0.5, 0.9, 0.6, 0.8)?;
    let report = ray_probe(&tree, &well, 0.0, &directions, &config)?;
    println!("alpha = 0.5, beta = 0.9, gamma = 0.6, delta = 0.8:");
    println!("  divergence evidence = {}", report.divergent);
    println!(
        "  eventually decreasing on all rays = {}",
        report.certified_bounded
    );
    Ok(())
}
