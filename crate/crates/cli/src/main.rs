use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use lamimorph::designmap::{diagonal_shear_argmax, field_extrema, map_csv, map_svg, FieldExtrema};
use lamimorph::inverse::{
    load_target, plan_detailed, plan_sweep, target_geometry, torus_preview, verify_plan_with,
    PlanOutcome, SearchOptions, VerificationTolerances,
};
use lamimorph::io::write_atomic;
use lamimorph::torusgeom::obj_string;
use lamimorph::*;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "lamimorph",
    version,
    about = "Design engine for self-morphing SMP bilayer plates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deployed strains, curvatures and mode of one bilayer.
    Forward {
        #[arg(long)]
        material: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        theta1: f64,
        #[arg(long, allow_hyphen_values = true)]
        theta2: f64,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        ta: f64,
    },
    /// Sweep the (θ1, θ2) design map and write CSV and SVG heatmaps.
    Map {
        #[arg(long)]
        material: PathBuf,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        ta: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
        /// Heatmap fields: eps_x, eps_y, gamma_xy, kappa_x, kappa_y, kappa_xy, K, mode.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        svg: Vec<String>,
    },
    /// Plan a print for a target surface.
    Inverse {
        #[arg(long)]
        material: PathBuf,
        /// Analytic patch (.json) or grid mesh (.obj).
        #[arg(long)]
        target: PathBuf,
        /// Thickness ratio t1/t2.
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        /// Total thickness, mm.
        #[arg(long)]
        thickness: f64,
        #[arg(long)]
        ta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sweep_ratio: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        sweep_ta: Vec<f64>,
        #[arg(long)]
        max_a: Option<f64>,
        #[arg(long)]
        max_b: Option<f64>,
        /// Search grid step, degrees.
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Write the deployed shape of a plan as an OBJ grid.
    Preview {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        material: PathBuf,
        #[arg(long, value_enum, default_value_t = PreviewMode::Quadratic)]
        mode: PreviewMode,
        #[arg(long, default_value_t = 21)]
        nu: usize,
        #[arg(long, default_value_t = 21)]
        nv: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a plan against a target and write the report.
    Verify {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        material: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol_kappa: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_dims: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PreviewMode {
    Quadratic,
    Torus,
}

enum Failure {
    Engine(Error),
    /// Ran to completion, but the verdict is negative.
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(6),
        Err(Failure::Engine(e)) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::MaterialRange => 3,
        ErrorKind::Io => 4,
        ErrorKind::Infeasible => 5,
    }
}

fn error_json(e: &Error) -> String {
    let mut v = json!({ "error": e.tag(), "message": e.to_string() });
    match e {
        Error::Infeasible { best, threshold } => {
            v["best_residual_per_mm"] = json!(best);
            v["threshold_per_mm"] = json!(threshold);
        }
        Error::OverConstrained { reasons } => v["reasons"] = json!(reasons),
        Error::BelowTg { t_a, t_g } => {
            v["ta_c"] = json!(t_a);
            v["tg_c"] = json!(t_g);
        }
        _ => {}
    }
    v.to_string()
}

fn material(path: &Path) -> Result<Arc<MaterialCard>> {
    load_material_card(path).map(Arc::new)
}

fn distinct(out: &Path, inputs: &[&Path]) -> Result<()> {
    if inputs.contains(&out) {
        return Err(Error::Validation(format!(
            "output {} would overwrite an input",
            out.display()
        )));
    }
    Ok(())
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Forward {
            material: m,
            theta1,
            theta2,
            t1,
            t2,
            ta,
        } => {
            let card = material(&m)?;
            let layup = Layup::bilayer(card, theta1, theta2, t1, t2)?;
            let state = free_recovery(&layup, ta)?;
            let principal = principal_curvatures(state.kappa[0], state.kappa[1], state.kappa[2]);
            let mode = ModeTolerances::default().classify(&state);
            let doc = json!({
                "state": state,
                "principal": principal,
                "K": gaussian_curvature(&principal),
                "mode": mode,
            });
            println!("{}", pretty(&doc));
        }
        Command::Map {
            material: m,
            t1,
            t2,
            ta,
            step,
            out,
            svg,
        } => {
            let fields = svg
                .iter()
                .map(|s| s.parse::<MapField>())
                .collect::<Result<Vec<_>>>()?;
            let card = material(&m)?;
            let grid = sweep_map(&card, t1, t2, ta, step)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_atomic(&out.join("map.csv"), &map_csv(&grid))?;
            for field in &fields {
                let path = out.join(format!("map_{}.svg", field.name()));
                write_atomic(&path, map_svg(&grid, *field).as_bytes())?;
            }
            let extrema: Vec<FieldExtrema> = MapField::NUMERIC
                .iter()
                .filter_map(|f| field_extrema(&grid, *f))
                .collect();
            let mut modes = serde_json::Map::new();
            for label in ModeLabel::ALL {
                let count = grid.cells.iter().filter(|c| c.mode == label).count();
                modes.insert(label.as_str().to_owned(), json!(count));
            }
            let doc = json!({
                "cells": grid.cells.len(),
                "step_deg": step,
                "tol_kappa_per_mm": grid.tol_kappa,
                "extrema": extrema,
                "diagonal_gamma_xy_argmax_deg": diagonal_shear_argmax(&grid),
                "mode_counts": modes,
            });
            println!("{}", pretty(&doc));
        }
        Command::Inverse {
            material: m,
            target,
            ratio,
            thickness,
            ta,
            out,
            sweep_ratio,
            sweep_ta,
            max_a,
            max_b,
            step,
        } => {
            distinct(&out, &[&m, &target])?;
            let card = material(&m)?;
            let surface = load_target(&target)?;
            let mut options = PlanOptions::default();
            options.search = SearchOptions {
                step,
                ..options.search
            };
            options.filter.max_a = max_a;
            options.filter.max_b = max_b;
            let outcome = if sweep_ratio.is_empty() && sweep_ta.is_empty() {
                let ta = ta.ok_or_else(|| {
                    Error::Validation("--ta is required without --sweep-ta".into())
                })?;
                plan_detailed(&surface, &card, ratio, thickness, ta, &options)?
            } else {
                let ratios = if sweep_ratio.is_empty() {
                    vec![ratio]
                } else {
                    sweep_ratio
                };
                let tas = match (sweep_ta.is_empty(), ta) {
                    (false, _) => sweep_ta,
                    (true, Some(t)) => vec![t],
                    (true, None) => {
                        return Err(
                            Error::Validation("--ta or --sweep-ta is required".into()).into()
                        )
                    }
                };
                plan_sweep(&surface, &card, &ratios, &tas, thickness, &options)?
            };
            print_candidates(&outcome);
            write_atomic(&out, outcome.plan.to_json().as_bytes())?;
        }
        Command::Preview {
            plan,
            material: m,
            mode,
            nu,
            nv,
            out,
        } => {
            distinct(&out, &[&plan, &m])?;
            let plan = PrintPlan::load(&plan)?;
            let card = material(&m)?;
            let state = plan.deployed_state(&card)?;
            let mesh = match mode {
                PreviewMode::Quadratic => quadratic_preview(&state, plan.a, plan.b, nu, nv)?,
                PreviewMode::Torus => {
                    let surface = TargetSurface::from_deployed(&state, plan.a, plan.b)?;
                    torus_preview(&target_geometry(&surface)?, nu, nv)?
                }
            };
            write_atomic(&out, obj_string(&mesh).as_bytes())?;
        }
        Command::Verify {
            plan,
            target,
            material: m,
            out,
            tol_kappa,
            tol_dims,
        } => {
            distinct(&out, &[&plan, &target, &m])?;
            let plan = PrintPlan::load(&plan)?;
            let card = material(&m)?;
            let surface = load_target(&target)?;
            let tolerances = VerificationTolerances {
                kappa_per_mm: tol_kappa,
                dims_mm: tol_dims,
            };
            let report = verify_plan_with(&plan, &surface, &card, &tolerances, (2, 2))?;
            write_atomic(&out, report.to_json().as_bytes())?;
            println!(
                "{}",
                json!({
                    "passed": report.passed,
                    "kappa_residual_per_mm": report.residuals.kappa_per_mm,
                    "dims_residual_mm": report.residuals.dims_mm,
                })
            );
            if !report.passed {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn print_candidates(outcome: &PlanOutcome) {
    let p = &outcome.plan;
    println!("lamimorph {}", env!("CARGO_PKG_VERSION"));
    println!(
        "target kx={:.6e} ky={:.6e} kxy={:.6e} /mm; t1={} t2={} mm; ta={} C",
        outcome.target.kx, outcome.target.ky, outcome.target.kxy, p.t1, p.t2, p.t_a
    );
    println!(
        "{:>4} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10} {:>7}",
        "rank", "theta1_deg", "theta2_deg", "residual", "a_mm", "b_mm", "corner_deg", "flipped"
    );
    for (k, r) in outcome.ranked.iter().enumerate() {
        let c = &r.candidate;
        println!(
            "{:>4} {:>12.6} {:>12.6} {:>12.3e} {:>10.4} {:>10.4} {:>10.2e} {:>7}",
            k + 1,
            c.theta1_deg,
            c.theta2_deg,
            c.residual,
            r.a_mm,
            r.b_mm,
            r.corner_mismatch_deg,
            c.normal_flipped
        );
    }
}
