//! Experiment orchestration. Every run computes raw traces first and then
//! derives its report from (config, traces) alone, so `replay` can rebuild
//! the report bit-for-bit from the stored artifacts.

use super::config::{ExperimentConfig, ExperimentKind};
use super::traces::{Table, TraceSet};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::models::{audit_derivatives, build_model, BuiltinModelSpec, MfgModel};
use crate::solve::{
    solve_equilibrium_grid, solve_equilibrium_particles, EquilibriumSolution, SolverConfig,
    TrajectoryBundle,
};
use crate::turnpike::{
    check_differential_inequality, ergodic_study, fit_decay, gap_functions,
    EquilibriumRoute, ErgodicReport, GapFunctions, ProbeGrid, StudyConfig,
};
use crate::verify::{check_confining, check_g_monotone, estimate_c0, Witness};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Gap magnitudes below `1e-9 + 1e-5 |lambda|` are treated as numerical
/// noise when forming geometric ratios; families whose ergodic constant is
/// already stationary produce gaps that are pure discretization noise.
fn gap_noise_floor(lambda_scale: f64) -> f64 {
    1e-9 + 1e-5 * lambda_scale.abs()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportItem {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_sha256: String,
    pub items: Vec<ReportItem>,
    pub pass: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn item(&self, name: &str) -> Option<&ReportItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_sha256: String,
}

pub fn config_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Executes the configured experiment, writing traces, report, manifest
/// and optional plots under `out_dir`. Returns the report.
pub fn run(
    config_text: &str,
    base_dir: &Path,
    out_dir: &Path,
    plots: bool,
) -> Result<RunReport> {
    let cfg = ExperimentConfig::parse(config_text)?;
    std::fs::create_dir_all(out_dir)?;
    let traces = compute_traces(&cfg, base_dir, out_dir)?;
    traces.save(out_dir)?;
    let report = report_from_traces(&cfg, &traces, config_hash(config_text))?;
    std::fs::write(out_dir.join("config.toml"), config_text)?;
    std::fs::write(out_dir.join("report.json"), report.to_json())?;
    let manifest = Manifest {
        schema_version: super::REPORT_SCHEMA_VERSION,
        kind: cfg.kind,
        seed: cfg.seed,
        config_sha256: report.config_sha256.clone(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest"),
    )?;
    if plots {
        super::plot::emit_plots(&cfg, &traces, out_dir)?;
    }
    Ok(report)
}

fn route(cfg: &ExperimentConfig) -> EquilibriumRoute {
    if cfg.experiment.route == "grid" {
        EquilibriumRoute::Grid
    } else {
        EquilibriumRoute::Particle
    }
}

fn solve_one(
    model: &dyn MfgModel,
    cfg: &ExperimentConfig,
    rho0: &EmpiricalMeasure,
    horizon: f64,
    solver: &SolverConfig,
) -> Result<EquilibriumSolution> {
    match route(cfg) {
        EquilibriumRoute::Particle => solve_equilibrium_particles(model, rho0, horizon, solver),
        EquilibriumRoute::Grid => {
            solve_equilibrium_grid(model, rho0, horizon, cfg.model.beta, solver)
        }
    }
}

fn compute_traces(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
) -> Result<TraceSet> {
    let model = build_model(&cfg.model)?;
    let solver = cfg
        .solver
        .to_solver_config(cfg.rho0.particles, cfg.seed);
    let mut traces = TraceSet::default();
    match cfg.kind {
        ExperimentKind::Verify => compute_verify_traces(cfg, model.as_ref(), &mut traces)?,
        ExperimentKind::Solve => {
            let rho0 = cfg.rho0.build(model.dim(), cfg.seed, base_dir)?;
            let eq = solve_one(model.as_ref(), cfg, &rho0, cfg.experiment.horizon_t, &solver)?;
            let mut residuals = Table::new(&["iteration", "w2_residual"]);
            for (i, r) in eq.diagnostics.residual_history.iter().enumerate() {
                residuals.push(vec![i as f64, *r]);
            }
            traces.insert("residuals", residuals);
            let mut summary = Table::new(&[
                "outer_iterations",
                "converged",
                "terminal_costate_residual",
                "horizon_t",
                "dt_t",
                "beta",
            ]);
            summary.push(vec![
                eq.diagnostics.outer_iterations as f64,
                if eq.diagnostics.converged { 1.0 } else { 0.0 },
                eq.terminal_costate_residual(model.as_ref()),
                eq.horizon,
                eq.dt,
                eq.beta,
            ]);
            traces.insert("summary", summary);
            save_solution(&out_dir.join("solution"), &eq, &cfg.model)?;
        }
        ExperimentKind::TurnpikePair => {
            let rho0 = cfg.rho0.build(model.dim(), cfg.seed, base_dir)?;
            let c0_hat = estimate_c0(
                model.as_ref(),
                cfg.experiment.estimate_c0_trials,
                cfg.experiment.estimate_c0_cloud,
                cfg.seed,
            )?
            .constant;
            let (gaps, same_rho) = solve_pair_gaps(cfg, model.as_ref(), &rho0, &solver, base_dir)?;
            let mut gap = Table::new(&["t", "phi", "Phi", "w2"]);
            for k in 0..gaps.times.len() {
                gap.push(vec![gaps.times[k], gaps.phi[k], gaps.phi_cap[k], gaps.w2_gap[k]]);
            }
            traces.insert("gap", gap);
            let mut consts = Table::new(&["c0_hat", "same_rho"]);
            consts.push(vec![c0_hat, if same_rho { 1.0 } else { 0.0 }]);
            traces.insert("constants", consts);
        }
        ExperimentKind::ErgodicStudy => {
            let rho0 = cfg.rho0.build(model.dim(), cfg.seed, base_dir)?;
            let c0_hat = estimate_c0(
                model.as_ref(),
                cfg.experiment.estimate_c0_trials,
                cfg.experiment.estimate_c0_cloud,
                cfg.seed,
            )?
            .constant;
            let study = run_study(cfg, model.as_ref(), &rho0, &solver)?;
            insert_study_traces(&mut traces, &study, "");
            let mut consts = Table::new(&["c0_hat"]);
            consts.push(vec![c0_hat]);
            traces.insert("constants", consts);
        }
        ExperimentKind::Uniqueness => {
            let rho0 = cfg.rho0.build(model.dim(), cfg.seed, base_dir)?;
            let c0_hat = estimate_c0(
                model.as_ref(),
                cfg.experiment.estimate_c0_trials,
                cfg.experiment.estimate_c0_cloud,
                cfg.seed,
            )?
            .constant;
            let study1 = run_study(cfg, model.as_ref(), &rho0, &solver)?;
            let second_spec = cfg.second_model().ok_or_else(|| {
                Error::ConfigInvalid("uniqueness needs [experiment.second] params".into())
            })?;
            let model2 = build_model(&second_spec)?;
            let study2 = run_study(cfg, model2.as_ref(), &rho0, &solver)?;
            insert_study_traces(&mut traces, &study1, "_1");
            insert_study_traces(&mut traces, &study2, "_2");
            let mut consts = Table::new(&["c0_hat"]);
            consts.push(vec![c0_hat]);
            traces.insert("constants", consts);
        }
    }
    Ok(traces)
}

fn compute_verify_traces(
    cfg: &ExperimentConfig,
    model: &dyn MfgModel,
    traces: &mut TraceSet,
) -> Result<()> {
    let audit = audit_derivatives(model, 6, 1e-5);
    let c0 = estimate_c0(
        model,
        cfg.experiment.estimate_c0_trials,
        cfg.experiment.estimate_c0_cloud,
        cfg.seed,
    )?;
    let gmon = check_g_monotone(
        model,
        cfg.experiment.estimate_c0_trials,
        cfg.experiment.estimate_c0_cloud,
        cfg.seed,
    )?;
    let mut consts = Table::new(&["audit_pass", "c0_hat", "g_monotone"]);
    consts.push(vec![
        if audit.all_pass { 1.0 } else { 0.0 },
        c0.constant,
        gmon.constant,
    ]);
    traces.insert("constants", consts);
    for hyp in &cfg.experiment.hypotheses {
        if hyp == "H2" || hyp == "H4" {
            continue; // covered by the constants above
        }
        let parsed: crate::verify::ConfiningHypothesis = hyp.parse()?;
        let rep = check_confining(
            model,
            parsed,
            cfg.experiment.estimate_c0_trials,
            cfg.experiment.estimate_c0_cloud,
            cfg.model.beta,
            cfg.seed,
        )?;
        let mut env = Table::new(&["moment", "value"]);
        if let Witness::Envelope {
            moments, values, ..
        } = &rep.witness
        {
            for (m, v) in moments.iter().zip(values) {
                env.push(vec![*m, *v]);
            }
        }
        traces.insert(&format!("envelope_{}", hyp_slug(hyp)), env);
    }
    Ok(())
}

fn hyp_slug(h: &str) -> String {
    h.replace('\'', "p")
}

fn solve_pair_gaps(
    cfg: &ExperimentConfig,
    model: &dyn MfgModel,
    rho0: &EmpiricalMeasure,
    solver: &SolverConfig,
    base_dir: &Path,
) -> Result<(GapFunctions, bool)> {
    let horizon = cfg.experiment.horizon_t;
    let second = cfg
        .experiment
        .second
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("turnpike_pair needs a second leg".into()))?;
    let same_rho = second.mean.is_none() && second.std.is_none();
    let eq1 = solve_one(model, cfg, rho0, horizon, solver)?;
    let (model2_spec, rho0_2) = if same_rho {
        (
            cfg.second_model().ok_or_else(|| {
                Error::ConfigInvalid("second leg must change g or rho0".into())
            })?,
            rho0.clone(),
        )
    } else {
        let spec = cfg.second_model().unwrap_or_else(|| cfg.model.clone());
        (spec, cfg.second_rho0(model.dim(), base_dir)?)
    };
    let model2 = build_model(&model2_spec)?;
    let eq2 = solve_one(model2.as_ref(), cfg, &rho0_2, horizon, solver)?;
    let b1 = TrajectoryBundle::from_equilibrium(&eq1, 0.0)?;
    let b2 = TrajectoryBundle::from_equilibrium(&eq2, 0.0)?;
    Ok((gap_functions(&b1, &b2)?, same_rho))
}

fn run_study(
    cfg: &ExperimentConfig,
    model: &dyn MfgModel,
    rho0: &EmpiricalMeasure,
    solver: &SolverConfig,
) -> Result<ErgodicReport> {
    let probes = ProbeGrid {
        times: cfg.experiment.probe_ts.clone(),
        xs: if cfg.experiment.probe_xs.is_empty() {
            vec![vec![0.0; model.dim()]]
        } else {
            cfg.experiment.probe_xs.clone()
        },
    };
    let study_cfg = StudyConfig {
        solver: solver.clone(),
        beta: cfg.model.beta,
        route: route(cfg),
    };
    let family = format!("{:?}", cfg.model.family);
    ergodic_study(
        model,
        &family,
        rho0,
        &cfg.experiment.horizons_t,
        &probes,
        &study_cfg,
    )
}

fn insert_study_traces(traces: &mut TraceSet, study: &ErgodicReport, suffix: &str) {
    let mut lambda = Table::new(&["horizon_t", "lambda"]);
    for (t, l) in study.horizons.iter().zip(&study.lambda) {
        lambda.push(vec![*t, *l]);
    }
    traces.insert(&format!("lambda{suffix}"), lambda);

    let nx = study.probes.xs.len();
    let mut probes = Table::new(&["horizon_t", "t", "x", "tilde_u", "grad_u"]);
    for (hi, t_h) in study.horizons.iter().enumerate() {
        for (ti, tp) in study.probes.times.iter().enumerate() {
            for (xi, xp) in study.probes.xs.iter().enumerate() {
                probes.push(vec![
                    *t_h,
                    *tp,
                    xp[0],
                    study.tilde_u[hi][ti * nx + xi],
                    study.grad_u[hi][ti * nx + xi],
                ]);
            }
        }
    }
    traces.insert(&format!("probes{suffix}"), probes);

    let mut w2 = Table::new(&["horizon_t", "w2_gap"]);
    for (t, g) in study.horizons.iter().zip(&study.w2_gaps) {
        w2.push(vec![*t, *g]);
    }
    traces.insert(&format!("w2_gaps{suffix}"), w2);

    let mut psi = Table::new(&["horizon_t", "t", "psi"]);
    for trace in &study.psi_traces {
        for (t, v) in trace.times.iter().zip(&trace.values) {
            psi.push(vec![trace.horizon, *t, *v]);
        }
    }
    traces.insert(&format!("psi{suffix}"), psi);

    let mut rho = Table::new(&["probe_time_index", "x", "w"]);
    for (ti, mu) in study.limit_rho.iter().enumerate() {
        for (p, w) in mu.iter() {
            rho.push(vec![ti as f64, p[0], w]);
        }
    }
    traces.insert(&format!("rho_limit{suffix}"), rho);
}

/// Builds the report purely from (config, traces); shared by run and replay.
pub fn report_from_traces(
    cfg: &ExperimentConfig,
    traces: &TraceSet,
    config_sha256: String,
) -> Result<RunReport> {
    let mut items = Vec::new();
    match cfg.kind {
        ExperimentKind::Verify => {
            let consts = traces.get("constants")?;
            let audit = consts.column("audit_pass")?[0];
            let c0 = consts.column("c0_hat")?[0];
            let gmon = consts.column("g_monotone")?[0];
            items.push(ReportItem {
                name: "derivative_audit".into(),
                value: audit,
                bound: Some(1.0),
                pass: Some(audit == 1.0),
            });
            items.push(ReportItem {
                name: "c0_hat".into(),
                value: c0,
                bound: Some(0.0),
                pass: Some(c0 >= -1e-9),
            });
            items.push(ReportItem {
                name: "g_monotone".into(),
                value: gmon,
                bound: Some(0.0),
                pass: Some(gmon >= -1e-9),
            });
            for hyp in &cfg.experiment.hypotheses {
                if hyp == "H2" || hyp == "H4" {
                    continue;
                }
                let env = traces.get(&format!("envelope_{}", hyp_slug(hyp)))?;
                let (slope, _offset) = crate::turnpike::log_linear_rate(
                    &env.column("moment")?,
                    &env.column("value")?,
                );
                let delta = 2.0 * slope;
                items.push(ReportItem {
                    name: format!("delta_{}", hyp_slug(hyp)),
                    value: delta,
                    bound: Some(0.05),
                    pass: Some(delta > 0.05),
                });
            }
        }
        ExperimentKind::Solve => {
            let summary = traces.get("summary")?;
            let converged = summary.column("converged")?[0];
            let terminal = summary.column("terminal_costate_residual")?[0];
            items.push(ReportItem {
                name: "converged".into(),
                value: converged,
                bound: Some(1.0),
                pass: Some(converged == 1.0),
            });
            items.push(ReportItem {
                name: "outer_iterations".into(),
                value: summary.column("outer_iterations")?[0],
                bound: None,
                pass: None,
            });
            items.push(ReportItem {
                name: "terminal_costate_residual".into(),
                value: terminal,
                bound: Some(1e-6),
                pass: Some(terminal <= 1e-6),
            });
        }
        ExperimentKind::TurnpikePair => {
            let gap = traces.get("gap")?;
            let consts = traces.get("constants")?;
            let c0_hat = consts.column("c0_hat")?[0];
            let same_rho = consts.column("same_rho")?[0] == 1.0;
            let times = gap.column("t")?;
            let phi_cap = gap.column("Phi")?;
            let w2: Vec<f64> = gap.column("w2")?.iter().map(|v| v * v).collect();
            let horizon = *times.last().expect("gap trace");
            let window = cfg
                .experiment
                .fit_window_t
                .unwrap_or((0.25 * horizon, 0.75 * horizon));
            let bound = cfg
                .experiment
                .rate_bound_per_t
                .unwrap_or(2.0 * c0_hat.max(0.0));
            let shape = cfg.experiment.decay_shape;
            let slack = cfg.experiment.rate_slack_frac;
            let phi_fit = fit_decay(&times, &phi_cap, window, shape, bound, slack)?;
            items.push(ReportItem {
                name: "phi_rate_per_t".into(),
                value: phi_fit.rate,
                bound: Some(bound * (1.0 - slack)),
                pass: Some(phi_fit.pass),
            });
            items.push(ReportItem {
                name: "phi_fit_residual".into(),
                value: phi_fit.residual,
                bound: Some(0.1),
                pass: Some(phi_fit.residual <= 0.1),
            });
            let w2_fit = fit_decay(&times, &w2, window, shape, bound, slack)?;
            items.push(ReportItem {
                name: "w2sq_rate_per_t".into(),
                value: w2_fit.rate,
                bound: Some(bound * (1.0 - slack)),
                pass: Some(w2_fit.pass),
            });
            let g = GapFunctions {
                times: times.clone(),
                phi: gap.column("phi")?,
                phi_cap: phi_cap.clone(),
                w2_gap: gap.column("w2")?,
            };
            let ineq = check_differential_inequality(&g, c0_hat.max(0.0), same_rho)?;
            items.push(ReportItem {
                name: "phi_envelope_slack".into(),
                value: ineq.slack_phi_envelope,
                bound: Some(-1e-9),
                pass: Some(ineq.slack_phi_envelope >= -1e-9),
            });
            items.push(ReportItem {
                name: "diff_ineq_min_slack".into(),
                value: ineq.min_slack,
                bound: Some(-ineq.tolerance),
                pass: Some(ineq.min_slack >= -ineq.tolerance),
            });
        }
        ExperimentKind::ErgodicStudy => {
            let consts = traces.get("constants")?;
            let c0_hat = consts.column("c0_hat")?[0];
            push_study_items(&mut items, cfg, traces, "", c0_hat)?;
        }
        ExperimentKind::Uniqueness => {
            let consts = traces.get("constants")?;
            let c0_hat = consts.column("c0_hat")?[0];
            push_study_items(&mut items, cfg, traces, "_1", c0_hat)?;
            push_study_items(&mut items, cfg, traces, "_2", c0_hat)?;
            push_uniqueness_items(&mut items, traces)?;
        }
    }
    let pass = items.iter().all(|i| i.pass.unwrap_or(true));
    Ok(RunReport {
        schema_version: super::REPORT_SCHEMA_VERSION,
        kind: cfg.kind,
        seed: cfg.seed,
        config_sha256,
        items,
        pass,
    })
}

fn push_study_items(
    items: &mut Vec<ReportItem>,
    cfg: &ExperimentConfig,
    traces: &TraceSet,
    suffix: &str,
    c0_hat: f64,
) -> Result<()> {
    let lambda = traces.get(&format!("lambda{suffix}"))?;
    let hs = lambda.column("horizon_t")?;
    let ls = lambda.column("lambda")?;
    let gaps: Vec<f64> = ls.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    items.push(ReportItem {
        name: format!("lambda_limit{suffix}"),
        value: *ls.last().expect("lambda trace"),
        bound: None,
        pass: None,
    });
    items.push(ReportItem {
        name: format!("lambda_error{suffix}"),
        value: gaps.last().copied().unwrap_or(0.0),
        bound: None,
        pass: None,
    });
    // Geometric decrease of successive gaps, guarded by the noise floor.
    let slack = cfg.experiment.rate_slack_frac;
    let floor = gap_noise_floor(*ls.last().expect("lambda trace"));
    for k in 1..gaps.len() {
        let dt_h = hs[k] - hs[k - 1];
        let bound = (-c0_hat.max(0.0) * dt_h * (1.0 - slack) * 0.5).exp();
        let (ratio, pass) = if gaps[k - 1] <= floor {
            (0.0, true) // both gaps at the noise floor: nothing to test
        } else {
            let r = gaps[k] / gaps[k - 1];
            (r, r <= bound || gaps[k] <= floor)
        };
        items.push(ReportItem {
            name: format!("lambda_gap_ratio_{k}{suffix}"),
            value: ratio,
            bound: Some(bound),
            pass: Some(pass),
        });
    }
    Ok(())
}

fn push_uniqueness_items(items: &mut Vec<ReportItem>, traces: &TraceSet) -> Result<()> {
    let l1 = traces.get("lambda_1")?.column("lambda")?;
    let l2 = traces.get("lambda_2")?.column("lambda")?;
    let gap = (l1.last().unwrap() - l2.last().unwrap()).abs();
    let err1 = lambda_error(&l1);
    let err2 = lambda_error(&l2);
    let tol = (err1 + err2).max(1e-6);
    items.push(ReportItem {
        name: "lambda_agreement".into(),
        value: gap,
        bound: Some(tol),
        pass: Some(gap <= tol),
    });

    // Limit flows must coincide on the probes.
    let rho_tol = 1e-2;
    let r1 = load_rho_limits(traces.get("rho_limit_1")?)?;
    let r2 = load_rho_limits(traces.get("rho_limit_2")?)?;
    if r1.len() != r2.len() {
        return Err(Error::IncompatibleStudies(
            "limit flows have different probe counts".into(),
        ));
    }
    let mut worst = 0.0f64;
    for (a, b) in r1.iter().zip(&r2) {
        worst = worst.max(crate::measures::wasserstein(a, b, 2)?);
    }
    items.push(ReportItem {
        name: "rho_agreement_w2".into(),
        value: worst,
        bound: Some(rho_tol),
        pass: Some(worst <= rho_tol),
    });

    // u^1 - u^2 spatially constant within 2% of the probe range of u.
    let p1 = traces.get("probes_1")?;
    let p2 = traces.get("probes_2")?;
    let (variation, range) = u_difference_variation(p1, p2)?;
    let tol = 0.02 * range.max(1e-9);
    items.push(ReportItem {
        name: "u_difference_variation".into(),
        value: variation,
        bound: Some(tol),
        pass: Some(variation <= tol),
    });
    Ok(())
}

fn lambda_error(ls: &[f64]) -> f64 {
    if ls.len() < 2 {
        return 0.0;
    }
    (ls[ls.len() - 1] - ls[ls.len() - 2]).abs()
}

fn load_rho_limits(table: &Table) -> Result<Vec<EmpiricalMeasure>> {
    let idx = table.column("probe_time_index")?;
    let xs = table.column("x")?;
    let ws = table.column("w")?;
    let mut out: Vec<(Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for ((i, x), w) in idx.iter().zip(&xs).zip(&ws) {
        let slot = *i as usize;
        while out.len() <= slot {
            out.push((Vec::new(), Vec::new()));
        }
        out[slot].0.push(vec![*x]);
        out[slot].1.push(*w);
    }
    out.into_iter()
        .map(|(pts, ws)| EmpiricalMeasure::new(1, pts, ws))
        .collect()
}

/// Max over probe times of the spatial variation of u1 - u2 at the richest
/// horizon, plus the spatial range of u1 there.
fn u_difference_variation(p1: &Table, p2: &Table) -> Result<(f64, f64)> {
    let h1 = p1.column("horizon_t")?;
    let richest = h1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t1 = p1.column("t")?;
    let u1 = p1.column("tilde_u")?;
    let u2 = p2.column("tilde_u")?;
    if u1.len() != u2.len() {
        return Err(Error::IncompatibleStudies(
            "probe tables have different sizes".into(),
        ));
    }
    use std::collections::BTreeMap;
    let mut per_time: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    let mut u_lo = f64::INFINITY;
    let mut u_hi = f64::NEG_INFINITY;
    for k in 0..u1.len() {
        if h1[k] != richest {
            continue;
        }
        let d = u1[k] - u2[k];
        let key = t1[k].to_bits();
        let e = per_time.entry(key).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(d);
        e.1 = e.1.max(d);
        u_lo = u_lo.min(u1[k]);
        u_hi = u_hi.max(u1[k]);
    }
    let variation = per_time
        .values()
        .map(|(lo, hi)| hi - lo)
        .fold(0.0, f64::max);
    Ok((variation, u_hi - u_lo))
}

/// Writes an equilibrium to a directory: meta document, one columnar
/// measure file per time node, the path matrices and the optional grid
/// value function.
pub fn save_solution(
    dir: &Path,
    eq: &EquilibriumSolution,
    model_spec: &BuiltinModelSpec,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("rho_flow"))?;
    #[derive(Serialize)]
    struct Meta<'a> {
        model: &'a BuiltinModelSpec,
        horizon_t: f64,
        dt_t: f64,
        beta: f64,
        n_times: usize,
        n_particles: usize,
        dim: usize,
        converged: bool,
        outer_iterations: usize,
        residual_history: &'a [f64],
    }
    let meta = Meta {
        model: model_spec,
        horizon_t: eq.horizon,
        dt_t: eq.dt,
        beta: eq.beta,
        n_times: eq.n_times(),
        n_particles: eq.x_paths.n_particles,
        dim: eq.x_paths.dim,
        converged: eq.diagnostics.converged,
        outer_iterations: eq.diagnostics.outer_iterations,
        residual_history: &eq.diagnostics.residual_history,
    };
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta"),
    )?;
    for (k, mu) in eq.rho_flow.iter().enumerate() {
        let file = std::fs::File::create(dir.join("rho_flow").join(format!("t{k:05}.csv")))?;
        mu.write_columnar(std::io::BufWriter::new(file))?;
    }
    let d = eq.x_paths.dim;
    let mut cols: Vec<String> = vec!["particle".into(), "time_index".into()];
    for c in 0..d {
        cols.push(format!("x{c}"));
    }
    for c in 0..d {
        cols.push(format!("y{c}"));
    }
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut paths = Table::new(&col_refs);
    for i in 0..eq.x_paths.n_particles {
        for k in 0..eq.n_times() {
            let mut row = vec![i as f64, k as f64];
            row.extend_from_slice(eq.x_paths.get(i, k));
            row.extend_from_slice(eq.y_paths.get(i, k));
            paths.push(row);
        }
    }
    let file = std::fs::File::create(dir.join("paths.csv"))?;
    paths.write_csv(std::io::BufWriter::new(file))?;
    if let Some(grid) = &eq.grid {
        let mut gu = Table::new(&["time_index", "x", "u"]);
        for k in 0..grid.n_times {
            for (j, x) in grid.xs.iter().enumerate() {
                gu.push(vec![k as f64, *x, grid.row(k)[j]]);
            }
        }
        let file = std::fs::File::create(dir.join("grid_u.csv"))?;
        gu.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}
