use std::fmt::Write as _;

use clap::Args;
use endoscope_core::actuation::{coil_resistance, ActuationCommand};
use endoscope_core::design::{ablation_csv, ablation_table, blocking_force, design_curve as sweep, GrasperModel, ABLATION_POWER_THRESHOLD};
use endoscope_core::ik::{find_equilibrium, steer_to, EquilibriumProblem, EquilibriumSearch, SteerTarget};
use endoscope_core::phantom::{compute_workspace, InsertionState};
use endoscope_core::rod::RodState;
use endoscope_core::Vec3;
use serde_json::{json, Value};

use crate::exit::{Class, CliError};
use crate::{Context, Format};

fn write_file(ctx: &Context, name: &str, content: &str) -> Result<(), CliError> {
    if let Some(dir) = &ctx.out {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::new(Class::Failure, format!("{}: {e}", path.display())))?;
        ctx.note(format!("wrote {}", path.display()));
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialise");
    s.push('\n');
    s
}

/// Writes both artifacts to `--out` and the one matching `--format` to stdout.
fn emit(ctx: &Context, csv_name: &str, csv: &str, json_name: &str, summary: &Value) -> Result<(), CliError> {
    let json = pretty(summary);
    write_file(ctx, csv_name, csv)?;
    write_file(ctx, json_name, &json)?;
    match ctx.format {
        Format::Csv => print!("{csv}"),
        Format::Json => print!("{json}"),
    }
    Ok(())
}

fn tip_json(state: &RodState) -> Value {
    let tip = state.tip_pose();
    json!({
        "position_m": [tip.origin.x, tip.origin.y, tip.origin.z],
        "quaternion_wxyz": tip.quaternion(),
        "bend_deg": state.bend_angle().to_degrees(),
    })
}

fn named(ctx: &Context, values: &[f64]) -> Value {
    ctx.config.coils.iter().zip(values).map(|(c, v)| (c.name.clone(), json!(v))).collect::<serde_json::Map<_, _>>().into()
}

#[derive(Debug, Args)]
pub struct FkArgs {
    /// Steering currents in configuration order, A (default all zero).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub currents: Vec<f64>,
    /// Overrides the rod segment count.
    #[arg(long)]
    pub segments: Option<usize>,
}

pub fn fk(ctx: &Context, a: &FkArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let currents = if a.currents.is_empty() { vec![0.0; cfg.coils.len()] } else { a.currents.clone() };
    ActuationCommand::new(currents.clone(), 0.0).check_limits(&cfg.coils)?;
    let rod = match a.segments {
        Some(n) => cfg.rod.with_segment_count(n)?,
        None => cfg.rod.clone(),
    };
    let base = cfg.base_frame();
    let env = cfg.env();
    let problem = EquilibriumProblem {
        rod: &rod,
        base: &base,
        coils: &cfg.coils,
        currents: &currents,
        env: &env,
        external_tip_force: Vec3::zeros(),
    };
    let eq = find_equilibrium(&problem, &EquilibriumSearch::default())?;
    let resistance: Vec<f64> = cfg.coils.iter().map(coil_resistance).collect::<Result<_, _>>()?;
    let power: f64 = currents.iter().zip(&resistance).map(|(i, r)| i * i * r).sum();
    let summary = json!({
        "schema": "fk/1",
        "currents_a": named(ctx, &currents),
        "power_w": power,
        "tip_pose": tip_json(&eq.rod_state),
        "energy_j": eq.energy,
        "residual_norm": eq.residual_norm,
        "iterations": eq.iterations,
    });
    ctx.note(format!("tip bend {:.4} deg", eq.rod_state.bend_angle().to_degrees()));
    emit(ctx, "rod_state.csv", &eq.rod_state.to_csv(), "tip_pose.json", &summary)
}

#[derive(Debug, Args)]
pub struct IkArgs {
    /// Commanded bend between base and tip tangents, degrees.
    #[arg(long, allow_negative_numbers = true)]
    pub angle_deg: f64,
    /// Bend direction from the base x axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub azimuth_deg: f64,
}

pub fn ik(ctx: &Context, a: &IkArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let setup = cfg.steer_setup();
    let target = SteerTarget { bend: a.angle_deg.to_radians(), azimuth: a.azimuth_deg.to_radians() };
    let r = steer_to(&setup, target)?;
    let resistance: Vec<f64> = cfg.coils.iter().map(coil_resistance).collect::<Result<_, _>>()?;
    let per_coil: Vec<f64> = r.allocation.currents.iter().zip(&resistance).map(|(i, r)| i * i * r).collect();
    let converged = r.ik.converged && r.consistent;
    let summary = json!({
        "schema": "ik/1",
        "target_deg": a.angle_deg,
        "azimuth_deg": a.azimuth_deg,
        "converged": converged,
        "ik_converged": r.ik.converged,
        "consistent": r.consistent,
        "ik_iterations": r.ik.iterations,
        "ik_residual_norm": r.ik.residual_norm,
        "rounds": r.rounds,
        "currents_a": named(ctx, &r.allocation.currents),
        "power_w": r.allocation.power,
        "saturated": r.allocation.saturated,
        "torque_residual_nm": r.allocation.torque_residual,
        "tip_torque_nm": [r.ik.tip_torque.x, r.ik.tip_torque.y, r.ik.tip_torque.z],
        "realized_tip_pose": tip_json(&r.realized),
    });
    let mut csv = format!("# ik/1 converged={converged} saturated={}\ncoil,current_a,power_w\n", r.allocation.saturated);
    for ((c, i), p) in cfg.coils.iter().zip(&r.allocation.currents).zip(&per_coil) {
        let _ = writeln!(csv, "{},{i},{p}", c.name);
    }
    let _ = writeln!(csv, "total,,{}", r.allocation.power);
    emit(ctx, "ik.csv", &csv, "ik.json", &summary)?;
    if !converged {
        return Err(CliError::new(
            Class::NonConvergence,
            format!(
                "no consistent solution for {} deg (ik converged: {}, residual {:.3e}, saturated: {})",
                a.angle_deg, r.ik.converged, r.ik.residual_norm, r.allocation.saturated
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Target bend, degrees.
    #[arg(long)]
    pub target_deg: Option<f64>,
    /// Coil plus free length, m.
    #[arg(long)]
    pub total_length_m: Option<f64>,
    /// Coil length ratios to evaluate, strictly increasing in (0, 1).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    /// Largest current a design point may use, A.
    #[arg(long)]
    pub ceiling_a: Option<f64>,
}

pub fn design_curve(ctx: &Context, a: &DesignArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let d = &cfg.design;
    let template = cfg
        .coil_index(&d.template_coil)
        .map(|i| &cfg.coils[i])
        .ok_or_else(|| CliError::config(format!("template coil {:?} not found", d.template_coil)))?;
    let mut opts = cfg.design_options();
    if !a.ratios.is_empty() {
        opts.ratio_grid = a.ratios.clone();
    }
    if let Some(c) = a.ceiling_a {
        opts.current_ceiling = c;
    }
    let target = a.target_deg.unwrap_or(d.target_angle_deg).to_radians();
    let total = a.total_length_m.unwrap_or(d.total_length_m);
    let s = sweep(total, target, template, &cfg.rod, &cfg.env(), &opts)?;
    let mut summary = s.summary_json();
    summary["seed"] = json!(ctx.seed);
    match s.optimum() {
        Some(p) => eprintln!("optimum ratio {:.4}: {:.6} W at {:.6} A", p.ratio, p.power.unwrap_or(f64::NAN), p.current.unwrap_or(f64::NAN)),
        None => eprintln!("no feasible ratio"),
    }
    emit(ctx, "design_curve.csv", &s.to_csv(), "design_summary.json", &summary)?;
    let bad = s.infeasible_ratios();
    if !bad.is_empty() {
        return Err(CliError::new(Class::Infeasible, format!("infeasible ratios (current above ceiling): {bad:?}")));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct WorkspaceArgs {
    /// Per-coil current cap, A.
    #[arg(long)]
    pub current_cap_a: Option<f64>,
    /// Total power cap, W.
    #[arg(long)]
    pub power_cap_w: Option<f64>,
    /// Lattice intervals per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Inserted (bending) length, mm.
    #[arg(long)]
    pub insertion_mm: Option<f64>,
    /// Largest lattice current, A.
    #[arg(long)]
    pub lattice_max_a: Option<f64>,
    /// Rod segment count for the sweep.
    #[arg(long)]
    pub segments: Option<usize>,
}

pub fn workspace(ctx: &Context, a: &WorkspaceArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut p = cfg.workspace_problem()?;
    if let Some(n) = a.segments {
        p.rod = p.rod.with_segment_count(n)?;
    }
    if let Some(mm) = a.insertion_mm {
        let l = mm * 1e-3;
        p.insertion = InsertionState::new(l, l.max(p.insertion.max_insertion()))?;
    }
    p.current_cap = a.current_cap_a.unwrap_or(p.current_cap);
    p.power_cap = a.power_cap_w.unwrap_or(p.power_cap);
    p.grid = a.grid.unwrap_or(p.grid);
    p.lattice_max = a.lattice_max_a.or(p.lattice_max);
    let region = compute_workspace(&p)?;
    let mut summary = region.hull_json();
    summary["seed"] = json!(ctx.seed);
    summary["current_cap_a"] = json!(p.current_cap);
    summary["power_cap_w"] = json!(p.power_cap);
    eprintln!("max bend {:.3} deg over {} samples", region.max_bend.to_degrees(), region.samples.len());
    if let Some(d) = &region.diagnostic {
        eprintln!("warning: {d}");
    }
    emit(ctx, "workspace.csv", &region.to_csv(), "workspace_hull.json", &summary)?;
    if region.samples.is_empty() {
        return Err(CliError::new(Class::Infeasible, region.diagnostic.unwrap_or_else(|| "empty workspace".into())));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GrasperArgs {
    /// Currents to evaluate, A (default 0 to 0.5 A in 50 mA steps).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub currents: Vec<f64>,
}

pub fn grasper(ctx: &Context, a: &GrasperArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let model = cfg.grasper_model()?;
    let ideal = GrasperModel::ideal(model.coil.clone())?;
    let env = cfg.env();
    let currents = if a.currents.is_empty() { (0..=10).map(|k| k as f64 * 0.05).collect() } else { a.currents.clone() };
    let resistance = coil_resistance(&model.coil)?;
    let limit = model.coil.current_limit;
    let mut csv = String::from("# grasper/1\ncurrent_a,ideal_force_n,model_force_n,power_w\n");
    let mut rows = Vec::new();
    let mut infeasible = Vec::new();
    for &i in &currents {
        match (blocking_force(&ideal, i, &env), blocking_force(&model, i, &env)) {
            (Ok(fi), Ok(fm)) => {
                let p = i * i * resistance;
                let _ = writeln!(csv, "{i},{fi},{fm},{p}");
                rows.push(json!({"current_a": i, "ideal_force_n": fi, "model_force_n": fm, "power_w": p}));
            }
            _ => infeasible.push(i),
        }
    }
    let ideal_max = blocking_force(&ideal, limit, &env)?;
    let measured = cfg.grasper_model.measured_max_force_n;
    let summary = json!({
        "schema": "grasper/1",
        "resistance_ohm": resistance,
        "wire_length_m": model.coil.wire_length()?,
        "current_limit_a": limit,
        "ideal_force_at_limit_n": ideal_max,
        "model_force_at_limit_n": blocking_force(&model, limit, &env)?,
        "measured_max_force_n": measured,
        "calibration_fit": measured / ideal_max,
        "points": rows,
    });
    eprintln!("grasper {resistance:.4} ohm, ideal force {ideal_max:.5} N at {limit} A");
    emit(ctx, "grasper.csv", &csv, "grasper_summary.json", &summary)?;
    if !infeasible.is_empty() {
        return Err(CliError::new(Class::Infeasible, format!("currents beyond the {limit} A limit: {infeasible:?}")));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long, default_value_t = 11.0)]
    pub resistance_ohm: f64,
    /// Currents, mA.
    #[arg(long, value_delimiter = ',', default_values_t = [50.0, 100.0, 200.0, 250.0])]
    pub currents_ma: Vec<f64>,
}

pub fn ablation(ctx: &Context, a: &AblationArgs) -> Result<(), CliError> {
    let currents: Vec<f64> = a.currents_ma.iter().map(|m| m * 1e-3).collect();
    let rows = ablation_table(a.resistance_ohm, &currents)?;
    let summary = json!({
        "schema": "ablation/1",
        "resistance_ohm": a.resistance_ohm,
        "threshold_w": ABLATION_POWER_THRESHOLD,
        "rows": rows,
    });
    emit(ctx, "ablation.csv", &ablation_csv(&rows), "ablation.json", &summary)
}
