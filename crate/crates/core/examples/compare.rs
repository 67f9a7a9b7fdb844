//! Runs both solvers on one synthetic dataset and prints recovery metrics.
//!
//! ```bash
//! cargo run --release -p nnparafac2 --example compare -- 1e-3 5
//! ```

use nnparafac2::metrics::{relative_b_error, relative_fit};
use nnparafac2::solver::derive_seed;
use nnparafac2::{gen_dataset, random_init, SolverConfig, SolverKind, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let sigma: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let inits: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let (tensor, truth) = gen_dataset(&SynthSpec { sigma, seed, ..SynthSpec::default() })?;
    let config = SolverConfig::with_rank(3);
    for i in 0..inits {
        let init = random_init(&tensor, 3, derive_seed(seed, i))?;
        for solver in [SolverKind::Classic, SolverKind::Flexible] {
            let (f, rep) = solver.run(&tensor, &config, &init)?;
            println!(
                "init {i} {:>8}: B error {:.3e}  fit {:.3e}  iters {:4}  {:.2}s  max coupling {:.2e}",
                solver.name(),
                relative_b_error(&f, &truth)?,
                relative_fit(&tensor, &f)?,
                rep.iterations,
                rep.wall_seconds,
                rep.coupling_residuals.iter().cloned().fold(0.0, f64::max),
            );
        }
    }
    Ok(())
}
