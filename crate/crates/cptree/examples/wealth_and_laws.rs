//! Scenario trees, predictable strategies and wealth processes: building a
//! market from code or JSON, rolling wealth forward, and collecting the
//! benchmark-relative terminal law.
//!
//! ```bash
//! cargo run -p cptree --example wealth_and_laws
//! ```

use cptree::fixtures;
use cptree::market::{terminal_distribution, wealth, Strategy, TreeBuilder};

fn main() -> cptree::Result<()> {
    // a two-step market built by hand, with a benchmark on each leaf
    let mut b = TreeBuilder::new(1, vec![10.0]);
    let up = b.add_child(0, 0.6, vec![11.0]);
    let down = b.add_child(0, 0.4, vec![9.0]);
    for (parent, bench) in [(up, 0.5), (down, -0.5)] {
        let s = b.price(parent)[0];
        let uu = b.add_child(parent, 0.7, vec![s + 1.0]);
        let dd = b.add_child(parent, 0.3, vec![s - 1.5]);
        b.set_benchmark(uu, bench);
        b.set_benchmark(dd, bench);
    }
    let tree = b.build()?;
    println!(
        "tree: horizon {}, {} nodes, {} leaves",
        tree.horizon(),
        tree.len(),
        tree.leaves().len()
    );

    // one holding vector per information node; deeper holdings react to
    // the first move
    let mut theta = Strategy::zero(&tree);
    theta.set_theta(0, &[2.0]);
    theta.set_theta(up, &[1.0]);
    theta.set_theta(down, &[3.0]);

    let z = 1.0;
    let w = wealth(&tree, z, &theta)?;
    println!("wealth along the tree (X = z + sum of theta . dS):");
    for id in 0..tree.len() {
        let node = tree.node(id);
        println!(
            "  node {id} (depth {}, path prob {:.3}): X = {:+.2}",
            node.depth, node.path_prob, w.values[id]
        );
    }

    let law = terminal_distribution(&tree, z, &theta)?;
    println!("terminal law of X_T - B:");
    for (value, prob) in law.atoms() {
        println!("  {value:+.2} with probability {prob:.3}");
    }

    // the zero strategy leaves wealth at z on every path
    let binomial = fixtures::two_step_binomial();
    let flat = terminal_distribution(&binomial, 3.0, &Strategy::zero(&binomial))?;
    println!("zero strategy at z = 3: {:?}", flat.atoms());
    Ok(())
}
