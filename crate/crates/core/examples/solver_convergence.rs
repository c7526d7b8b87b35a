//! Empirical convergence order of the Heun and Euler probability-flow
//! solvers on the standard normal, where every trajectory is known in
//! closed form.
//!
//! cargo run --release --example solver_convergence

use biobridge::bridge::SolverKind;
use biobridge::diffusion::EdmConfig;
use biobridge::pipeline::gaussian_order;

fn main() -> biobridge::Result<()> {
    let edm = EdmConfig::default();
    let steps = [10, 20, 40, 80, 160];
    for kind in [SolverKind::Heun, SolverKind::Euler] {
        let (orders, errors) = gaussian_order(kind, &steps, &edm)?;
        println!("{kind}");
        for (i, (n, e)) in steps.iter().zip(&errors).enumerate() {
            let local = if i > 0 { format!("{:.3}", orders[i - 1]) } else { "-".into() };
            println!("  N={n:<4} error {e:.3e}  order {local}");
        }
    }
    Ok(())
}
