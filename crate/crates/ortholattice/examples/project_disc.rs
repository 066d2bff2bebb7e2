//! De-homogenization of a synthetic design: a solid disc with a coating ring
//! and horizontal layer orientation becomes a fine solid/void lattice.

use std::path::Path;

use ortholattice::io::write_png;
use ortholattice::project::{project, solid_connected, ProjectOptions, ProjectionInput};

fn main() {
    let n = 48;
    let h = 1.0 / n as f64;
    let mut input = ProjectionInput {
        nx: n,
        ny: n,
        h,
        phi: vec![0.0; n * n],
        grad_norm: vec![0.0; n * n],
        theta: vec![0.0; n * n],
        a1: vec![0.7; n * n],
        a2: vec![0.7; n * n],
        beta: 64.0,
    };
    for iy in 0..n {
        for ix in 0..n {
            let x = (ix as f64 + 0.5) * h - 0.5;
            let y = (iy as f64 + 0.5) * h - 0.5;
            let r = (x * x + y * y).sqrt();
            let e = iy * n + ix;
            if r < 0.38 {
                input.phi[e] = 1.0;
            }
            if (r - 0.38).abs() < 0.035 {
                input.grad_norm[e] = 1.0;
            }
        }
    }

    let mut opts = ProjectOptions::new(0.08);
    opts.refine = 8;
    let p = project(&input, &opts).unwrap();

    let solid = p.rho.iter().filter(|&&v| v >= 0.5).count();
    println!("lattice {}x{}, solid fraction {:.3}", p.nx, p.ny, solid as f64 / p.rho.len() as f64);
    println!("seams {}, mapping residuals {:.2e} / {:.2e}", p.seams,
        p.mapping[0].constraint_residual, p.mapping[1].constraint_residual);
    let c = p.nx / 2;
    println!("connected through center: {}", solid_connected(&p.rho, p.nx, p.ny, &[(c, c)]));

    std::fs::create_dir_all("out").unwrap();
    write_png(Path::new("out/disc_lattice.png"), &p.rho, p.nx, p.ny).unwrap();
    println!("wrote out/disc_lattice.png");
}
