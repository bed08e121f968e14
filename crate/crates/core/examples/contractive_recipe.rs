//! Widths for a network whose layers shrink but still meet the width conditions.

use genprior::net;

fn main() -> genprior::Result<()> {
    for (k, d) in [(2, 2), (4, 3), (8, 4)] {
        let recipe = net::contractive_example_dims(k, d, 2.0, 1.0)?;
        println!(
            "k={k} d={d}: alpha {}, dims {:?}, contractive {}, feasible {}",
            recipe.alpha,
            recipe.dims,
            recipe.contractive,
            recipe.feasible()
        );
    }
    Ok(())
}
