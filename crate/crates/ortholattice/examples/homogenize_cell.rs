//! Unit-cell homogenization of the square cell with a rectangular hole:
//! build a small database, inspect the effective stiffness, round-trip the
//! file format.

use ortholattice::homogenize::HomogDB;

fn main() {
    // coarse table for demonstration; production runs use `build-db`
    let a_grid: Vec<f64> = (0..9).map(|i| 0.2 + 0.08 * i as f64).collect();
    let db = HomogDB::build(&a_grid, 50).unwrap();

    println!("    a1     a2      C11      C22      C12      C66     mass");
    for &(a1, a2) in &[(0.2, 0.2), (0.6, 0.6), (0.84, 0.84), (0.3, 0.8), (0.8, 0.3)] {
        let (e, _, _) = db.interp(a1, a2).unwrap();
        println!(
            "  {a1:.2}   {a2:.2}   {:.4}   {:.4}   {:.4}   {:.4}   {:.3}",
            e.c11, e.c22, e.c12, e.c66, 1.0 - a1 * a2
        );
    }

    // anisotropy: widening the hole along y1 hurts the transverse stiffness
    let (narrow, _, _) = db.interp(0.3, 0.7).unwrap();
    let (wide, _, _) = db.interp(0.7, 0.3).unwrap();
    println!("\nC11 at (a1, a2) = (0.3, 0.7): {:.4}", narrow.c11);
    println!("C11 at (a1, a2) = (0.7, 0.3): {:.4}", wide.c11);

    let dir = std::env::temp_dir().join("ortholattice-demo.db");
    db.save(&dir).unwrap();
    let back = HomogDB::load(&dir).unwrap();
    let (e2, _, _) = back.interp(0.5, 0.5).unwrap();
    let (e1, _, _) = db.interp(0.5, 0.5).unwrap();
    println!("\nsave/load max diff: {:.2e}", (e1.c11 - e2.c11).abs().max((e1.c66 - e2.c66).abs()));
}
