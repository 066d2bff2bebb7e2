//! Fine-scale FE evaluation of a lattice stored as a PGM image: threshold,
//! solve, report compliance and volume fraction.
//!
//! Usage: evaluate_image <config.toml> <density.pgm>

use std::path::Path;

use ortholattice::config::parse_config;
use ortholattice::io::read_pgm;
use ortholattice::pipeline::evaluate_fine_density;

fn main() {
    let mut args = std::env::args().skip(1);
    let (cfg_path, img_path) = match (args.next(), args.next()) {
        (Some(c), Some(i)) => (c, i),
        _ => {
            eprintln!("usage: evaluate_image <config.toml> <density.pgm>");
            std::process::exit(2);
        }
    };
    let cfg = parse_config(Path::new(&cfg_path), &[]).unwrap();
    let (field, nx, ny) = read_pgm(Path::new(&img_path)).unwrap();
    let rho: Vec<f64> = field.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let (j, v) = evaluate_fine_density(&cfg, &rho, nx, ny).unwrap();
    println!("{nx}x{ny} lattice:  J = {j:.6}   V = {v:.6}");
}
