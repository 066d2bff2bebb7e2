//! Plane-stress FE solve of a short cantilever: clamp the left edge, pull the
//! bottom-right corner down, print tip deflection and compliance.

use ortholattice::fem::{compliance, Analysis, BoundaryCondition};
use ortholattice::grid::Grid;
use ortholattice::material::e_base;

fn main() {
    let (nx, ny) = (64, 32);
    let g = Grid::without_padding(nx, ny, 1.0 / ny as f64);
    let e_field = vec![e_base(); g.num_elements()];

    let mut bc = BoundaryCondition::default();
    for iy in 0..=ny {
        bc.fixed.push(2 * g.nidx(0, iy));
        bc.fixed.push(2 * g.nidx(0, iy) + 1);
    }
    let tip = g.nidx(nx, 0);
    bc.loads.push((2 * tip + 1, -1.0));

    let analysis = Analysis::new(&g, &e_field, &bc);
    let u = analysis.solve_direct().unwrap();
    println!("tip deflection  {:+.6e}", u[2 * tip + 1]);
    println!("compliance      {:+.6e}", compliance(&u, &bc));

    // iterative solve reaches the same answer
    let u2 = analysis.solve_pcg(1e-10, 10_000, None).unwrap();
    println!("pcg tip         {:+.6e}", u2[2 * tip + 1]);
}
