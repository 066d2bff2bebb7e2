use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ortholattice::config::{parse_config, RunConfig};
use ortholattice::homogenize::HomogDB;
use ortholattice::io;
use ortholattice::optimize::{IterRecord, Optimizer};
use ortholattice::pipeline::{self, PipelineError};

/// Homogenization-based topology optimization of coated structures and
/// projection to manufacturable fine-scale lattices.
#[derive(Parser)]
#[command(name = "ortholattice", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Precompute the unit-cell homogenization database
    BuildDb {
        /// output file
        #[arg(long, default_value = "homog.db")]
        out: PathBuf,
        /// hole-dimension samples per axis
        #[arg(long, default_value_t = 37)]
        samples: usize,
        #[arg(long, default_value_t = 0.05)]
        a_min: f64,
        #[arg(long, default_value_t = 0.95)]
        a_max: f64,
        /// unit-cell elements per side
        #[arg(long, default_value_t = 100)]
        cell: usize,
    },
    /// Coarse-scale compliance optimization
    Optimize {
        config: PathBuf,
        /// override a config key, e.g. --set m_infill=0.7
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// dump the reduced stiffness matrix of the initial design and exit
        #[arg(long, value_name = "FILE")]
        dump_stiffness: Option<PathBuf>,
    },
    /// De-homogenize an optimized design onto the fine grid
    Project {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// design checkpoint; defaults to <output>/design.json
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Full pipeline: optimize, project, evaluate
    Run {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Fine-scale FE evaluation of a lattice density image
    Evaluate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// solid/void density image (PGM)
        #[arg(long)]
        density: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("ORTHOLATTICE_THREADS") {
        match threads.parse::<usize>() {
            Ok(1) => faer::set_global_parallelism(faer::Parallelism::None),
            Ok(_) => {}
            Err(_) => {
                eprintln!("error: config: ORTHOLATTICE_THREADS must be a positive integer");
                return ExitCode::FAILURE;
            }
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_cfg(path: &PathBuf, set: &[String]) -> Result<RunConfig, PipelineError> {
    Ok(parse_config(path, set)?)
}

fn progress(rec: &IterRecord) {
    log::info!(
        "iter {:4}  J {:10.4}  V {:.4}  beta {:5.1}  change {:.4}",
        rec.iter,
        rec.j,
        rec.volume,
        rec.beta,
        rec.change
    );
}

fn dispatch(cmd: Cmd) -> Result<(), PipelineError> {
    match cmd {
        Cmd::BuildDb {
            out,
            samples,
            a_min,
            a_max,
            cell,
        } => {
            let grid: Vec<f64> = (0..samples)
                .map(|i| a_min + (a_max - a_min) * i as f64 / (samples - 1) as f64)
                .collect();
            log::info!("building {samples}x{samples} database, {cell}x{cell} cell");
            let db = HomogDB::build(&grid, cell)?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir).map_err(io::IoError::Io)?;
                }
            }
            db.save(&out)?;
            log::info!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Optimize {
            config,
            set,
            dump_stiffness,
        } => {
            let cfg = load_cfg(&config, &set)?;
            let db = pipeline::load_or_build_db(&cfg)?;
            if let Some(path) = dump_stiffness {
                let opt = Optimizer::new(pipeline::build_setup(&cfg), db.as_ref())?;
                let state = opt.initial_state();
                let eval = opt.evaluate(&state)?;
                let analysis = ortholattice::fem::Analysis::new(
                    &opt.setup.grid,
                    &eval.e_field,
                    &opt.setup.bc,
                );
                let mut w = std::io::BufWriter::new(
                    std::fs::File::create(&path).map_err(io::IoError::Io)?,
                );
                analysis.dump_stiffness(&mut w)?;
                log::info!("wrote {}", path.display());
                return Ok(());
            }
            let (state, history, eval) =
                pipeline::run_optimize(&cfg, db.as_ref(), |r, _| progress(r))?;
            std::fs::create_dir_all(&cfg.output).map_err(io::IoError::Io)?;
            io::write_checkpoint(&cfg.output.join("design.json"), &state)?;
            let g = &state.grid;
            let phi = pipeline::physical_field(g, &eval.phi);
            let tau = pipeline::physical_field(g, &eval.tau);
            io::write_pgm(&cfg.output.join("phi.pgm"), &phi, g.nx, g.ny)?;
            io::write_png(&cfg.output.join("phi.png"), &phi, g.nx, g.ny)?;
            io::write_pgm(&cfg.output.join("coating.pgm"), &tau, g.nx, g.ny)?;
            io::write_png(&cfg.output.join("coating.png"), &tau, g.nx, g.ny)?;
            let mut hist = String::from("iter,j,volume,beta,change\n");
            for r in &history {
                hist.push_str(&format!("{},{},{},{},{}\n", r.iter, r.j, r.volume, r.beta, r.change));
            }
            std::fs::write(cfg.output.join("history.csv"), hist).map_err(io::IoError::Io)?;
            log::info!(
                "done: J {:.4}  V {:.4} after {} iterations",
                eval.j,
                eval.volume,
                state.iter
            );
            Ok(())
        }
        Cmd::Project {
            config,
            set,
            checkpoint,
        } => {
            let cfg = load_cfg(&config, &set)?;
            let db = pipeline::load_or_build_db(&cfg)?;
            let cp = checkpoint.unwrap_or_else(|| cfg.output.join("design.json"));
            let state = io::read_checkpoint(&cp)?;
            let eval = pipeline::evaluate_state(&cfg, db.as_ref(), &state)?;
            let mut p = pipeline::project_design(&cfg, &state, &eval)?;
            let pruned = pipeline::prune_disconnected(&cfg, &mut p.rho, p.nx, p.ny);
            std::fs::create_dir_all(&cfg.output).map_err(io::IoError::Io)?;
            io::write_pgm(&cfg.output.join("rho.pgm"), &p.rho, p.nx, p.ny)?;
            io::write_png(&cfg.output.join("rho.png"), &p.rho, p.nx, p.ny)?;
            let mut fields: Vec<(&str, &[f64])> = vec![("rho", &p.rho), ("theta", &p.theta)];
            if cfg.adaptive {
                fields.push(("lambda1", &p.lambda[0]));
                fields.push(("lambda2", &p.lambda[1]));
                fields.push(("psi1", &p.psi[0]));
                fields.push(("psi2", &p.psi[1]));
            }
            io::write_vtk(&cfg.output.join("fields.vtk"), p.nx, p.ny, p.h, &fields)?;
            log::info!(
                "projected {}x{} lattice: {} seams, {} pruned pixels, residuals {:.3e}/{:.3e}",
                p.nx,
                p.ny,
                p.seams,
                pruned,
                p.mapping[0].constraint_residual,
                p.mapping[1].constraint_residual
            );
            Ok(())
        }
        Cmd::Run { config, set } => {
            let cfg = load_cfg(&config, &set)?;
            let db = pipeline::load_or_build_db(&cfg)?;
            let out = pipeline::run_full(&cfg, db.as_ref(), |r, _| progress(r))?;
            pipeline::emit_artifacts(&cfg, &out, &cfg.output)?;
            let m = &out.metrics;
            log::info!(
                "J_coarse {:.4}  J_fine {:.4}  J_proj {:.4}  V_proj {:.4}",
                m.j_coarse,
                m.j_fine,
                m.j_proj,
                m.v_proj
            );
            log::info!("artifacts in {}", cfg.output.display());
            Ok(())
        }
        Cmd::Evaluate {
            config,
            set,
            density,
        } => {
            let cfg = load_cfg(&config, &set)?;
            let (field, nx, ny) = io::read_pgm(&density)?;
            let rho: Vec<f64> = field.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
            let (j, v) = pipeline::evaluate_fine_density(&cfg, &rho, nx, ny)?;
            println!("J {j:.6}");
            println!("V {v:.6}");
            Ok(())
        }
    }
}
