//! MMA on a tiny analytic problem: minimize sum((x_i - c_i)^2) subject to
//! sum(x) <= 1, x in [0, 1]. The optimum projects c onto the simplex bound.

use ortholattice::mma::{Mma, MmaOptions};

fn main() {
    let c = [0.9, 0.7, 0.2];
    let n = c.len();
    let mut x = vec![0.5; n];
    let mut mma = Mma::new(n, MmaOptions::default());
    let (lo, hi) = (vec![0.0; n], vec![1.0; n]);

    for it in 0..80 {
        let df0: Vec<f64> = (0..n).map(|i| 2.0 * (x[i] - c[i])).collect();
        let g = x.iter().sum::<f64>() - 1.0;
        let dg = vec![1.0; n];
        let xnew = mma.update(&x, &lo, &hi, &df0, g, &dg).unwrap();
        let change = x.iter().zip(&xnew).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        x = xnew;
        if change < 1e-9 {
            println!("converged after {} iterations", it + 1);
            break;
        }
    }

    let f: f64 = (0..n).map(|i| (x[i] - c[i]).powi(2)).sum();
    println!("x = {x:.4?}   f = {f:.6}   sum(x) = {:.6}", x.iter().sum::<f64>());
    // KKT: active constraint, equal multipliers c_i - x_i for interior coords
    for i in 0..n {
        println!("  lambda_{i} = {:+.5}", 2.0 * (c[i] - x[i]));
    }
}
