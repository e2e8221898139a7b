//! One function per subcommand. Each takes a resolved config and returns a
//! report; nothing here touches the filesystem.

use gwer_core::environment::{
    c_alpha, default_truncation, gw_singular_psi_check, mu_infinity_velocity, ray_moments,
    stationarity_residual, v_alpha_closed, EnvOptions, TestFn,
};
use gwer_core::montecarlo::map_replicas;
use gwer_core::recursion::{escape_linear_response, exit_times, hitting_crosscheck, phi_tree_estimate};
use gwer_core::spine::{
    cut_decay, h_estimate, phi_spine_estimate, rep1_closure, renewal_denominator, sandwich,
    velocity_representation, zjbis_trials, SpineOptions,
};
use gwer_core::tree::{sample_spine_m, PopulationSampler};
use gwer_core::walk::{estimate_diffusivity, estimate_diffusivity_w, estimate_velocity, VelocityOptions};
use gwer_core::{EstimateCI, MomentAccumulator, Replication, RngStream};

use crate::config::{Defaults, RunConfig};
use crate::error::CliError;
use crate::output::{Check, Report};

const SIGMAS: f64 = 3.0;

fn rep(cfg: &RunConfig, replicas: usize) -> Replication {
    Replication::new(replicas, cfg.parallelism, cfg.seed)
}

fn z_check(name: String, e: &EstimateCI, target: f64) -> Check {
    let z = e.z_score(target);
    Check::new(
        name,
        z.abs() < SIGMAS,
        format!("estimate {} ± {} vs {target} (z = {z:.3})", e.mean, e.stderr),
    )
}

fn spine_options(cfg: &RunConfig) -> SpineOptions {
    SpineOptions {
        pool_size: cfg.pool_size,
        samples: cfg.samples,
        inner: cfg.inner,
        ..SpineOptions::default()
    }
}

pub fn defaults(command: &str) -> Defaults {
    match command {
        "einstein" => Defaults {
            alphas: &[-0.2, -0.1, -0.05, 0.05, 0.1, 0.2],
            tol: 0.1,
            ..Defaults::default()
        },
        "velocity" => Defaults {
            alphas: &[-0.5, -0.3, -0.1, 0.1, 0.3],
            ..Defaults::default()
        },
        "diffusivity" => Defaults {
            alphas: &[0.0],
            horizon: 500.0,
            ..Defaults::default()
        },
        "recursion" => Defaults {
            alphas: &[0.05, 0.1, 0.2],
            pool_size: 16384,
            pools: 8,
            n: 100,
            check: "escape",
            checks: &["escape", "hitting", "phi"],
            tol: 0.05,
            ..Defaults::default()
        },
        "env" => Defaults {
            alphas: &[-0.5, -0.3, -0.1],
            check: "velocity",
            checks: &["velocity", "moments", "stationarity", "singular", "mu-infinity"],
            ..Defaults::default()
        },
        "spine" => Defaults {
            dist: Some("2:0.5,3:0.5"),
            alphas: &[0.2],
            samples: 5000,
            check: "zeta2",
            checks: &["zeta2", "phi", "sandwich", "vrep", "h", "renewal", "rep1", "decay"],
            ..Defaults::default()
        },
        "zjbis" => Defaults {
            dist: Some("2:1"),
            alphas: &[0.0],
            n: 8,
            tol: 1e-10,
            ..Defaults::default()
        },
        _ => Defaults::default(),
    }
}

pub fn run(command: &'static str, cfg: &RunConfig) -> Result<Report, CliError> {
    match command {
        "einstein" => einstein(cfg),
        "velocity" => velocity(cfg),
        "diffusivity" => diffusivity(cfg),
        "recursion" => recursion(cfg),
        "env" => env(cfg),
        "spine" => spine(cfg),
        "zjbis" => zjbis(cfg),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

fn velocity_rows(cfg: &RunConfig, report: &mut Report) -> Result<Vec<(f64, EstimateCI)>, CliError> {
    let opts = VelocityOptions {
        horizon: cfg.horizon,
        ..VelocityOptions::default()
    };
    let mut out = Vec::new();
    for &a in &cfg.alphas {
        let v = estimate_velocity(&cfg.dist, a, opts, rep(cfg, cfg.replicas).derive(&format!("v:{a}")))?;
        let (closed, z) = if a < 0.0 {
            let c = v_alpha_closed(&cfg.dist, a)?;
            (c, v.z_score(c))
        } else {
            (f64::NAN, f64::NAN)
        };
        report.row(vec![a.into(), v.mean.into(), v.stderr.into(), closed.into(), z.into()]);
        if a < 0.0 {
            report.check(z_check(format!("closed_form_alpha={a}"), &v, closed));
        }
        out.push((a, v));
    }
    Ok(out)
}

/// Least-squares slope through the origin with its standard error.
pub fn slope_through_origin(points: &[(f64, EstimateCI)]) -> EstimateCI {
    let sxx: f64 = points.iter().map(|(a, _)| a * a).sum();
    let sxy: f64 = points.iter().map(|(a, v)| a * v.mean).sum();
    let var: f64 = points.iter().map(|(a, v)| (a * v.stderr).powi(2)).sum();
    EstimateCI {
        mean: sxy / sxx,
        stderr: var.sqrt() / sxx,
        n: points.iter().map(|(_, v)| v.n).min().unwrap_or(0),
    }
}

pub fn einstein(cfg: &RunConfig) -> Result<Report, CliError> {
    let has_neg = cfg.alphas.iter().any(|&a| a < 0.0);
    let has_pos = cfg.alphas.iter().any(|&a| a > 0.0);
    if !cfg.one_sided && !(has_neg && has_pos) {
        return Err(CliError::Usage(
            "alphas must take both signs unless --one-sided is given".into(),
        ));
    }
    if cfg.alphas.iter().all(|&a| a == 0.0) {
        return Err(CliError::Usage("need a nonzero alpha to fit a slope".into()));
    }
    let mut report = Report::new("einstein", &["alpha", "v", "stderr", "v_closed", "z_closed"]);
    let points = velocity_rows(cfg, &mut report)?;
    let slope = slope_through_origin(&points);
    let target = cfg.dist.constants().einstein_slope();
    let rel = (slope.mean - target).abs() / target;
    report.summary("slope", slope.mean);
    report.summary("slope_stderr", slope.stderr);
    report.summary("target", target);
    report.summary("rel_err", rel);
    report.check(Check::new(
        "slope",
        rel <= cfg.tol,
        format!("slope {} vs {target}, relative error {rel:.4} (tol {})", slope.mean, cfg.tol),
    ));
    Ok(report)
}

pub fn velocity(cfg: &RunConfig) -> Result<Report, CliError> {
    let mut report = Report::new("velocity", &["alpha", "v", "stderr", "v_closed", "z_closed"]);
    velocity_rows(cfg, &mut report)?;
    Ok(report)
}

pub fn diffusivity(cfg: &RunConfig) -> Result<Report, CliError> {
    let target = cfg.dist.constants().d0;
    let mut report = Report::new("diffusivity", &["estimator", "value", "stderr", "target", "z"]);
    let direct = estimate_diffusivity(&cfg.dist, cfg.horizon, rep(cfg, cfg.replicas).derive("diff:direct"))?;
    let w = estimate_diffusivity_w(&cfg.dist, cfg.depth, rep(cfg, cfg.replicas).derive("diff:w"))?;
    let wm = w.diffusivity.estimate();
    for (name, e) in [("direct", direct), ("w_moment", wm)] {
        report.row(vec![name.into(), e.mean.into(), e.stderr.into(), target.into(), e.z_score(target).into()]);
        report.check(z_check(name.to_string(), &e, target));
    }
    report.summary("w2", w.w2.mean);
    report.summary("w2_stderr", w.w2.stderr);
    Ok(report)
}

pub fn recursion(cfg: &RunConfig) -> Result<Report, CliError> {
    let pools = rep(cfg, cfg.pools);
    match cfg.check.as_str() {
        "escape" => {
            let mut report = Report::new(
                "recursion",
                &["alpha", "e_beta_over_alpha", "stderr", "target", "e_big_b", "big_b_stderr", "b_lower", "b_upper"],
            );
            let res = escape_linear_response(&cfg.dist, &cfg.alphas, cfg.pool_size, pools)?;
            for e in &res {
                report.row(vec![
                    e.alpha.into(),
                    e.ratio.mean.into(),
                    e.ratio.stderr.into(),
                    e.target.into(),
                    e.big_b.mean.into(),
                    e.big_b.stderr.into(),
                    e.b_lower.into(),
                    e.b_upper.into(),
                ]);
            }
            let first = res
                .iter()
                .min_by(|a, b| a.alpha.total_cmp(&b.alpha))
                .expect("alphas are non-empty");
            let gap = (first.ratio.mean - first.target).abs();
            let allowed = cfg.tol * first.target + SIGMAS * first.ratio.stderr;
            report.check(Check::new(
                format!("linear_response_alpha={}", first.alpha),
                gap <= allowed,
                format!("E[beta]/alpha {} vs {} (gap {gap:.5}, allowed {allowed:.5})", first.ratio.mean, first.target),
            ));
            Ok(report)
        }
        "hitting" => {
            let a = cfg.alphas[0];
            let mut report = Report::new("recursion", &["quantity", "value", "stderr"]);
            let exit = exit_times(&cfg.dist, a, cfg.n, cfg.pool_size, pools)?;
            let esc = escape_linear_response(&cfg.dist, &[a], cfg.pool_size, pools)?[0];
            let beta = esc.ratio.scale(a);
            let opts = VelocityOptions {
                horizon: cfg.horizon,
                ..VelocityOptions::default()
            };
            let v = estimate_velocity(&cfg.dist, a, opts, rep(cfg, cfg.replicas).derive(&format!("v:{a}")))?;
            let x = hitting_crosscheck(&exit, beta, v);
            let n = cfg.n as f64;
            for (name, e) in [
                ("gamma_n_over_n", x.lhs),
                ("beta_over_v", x.rhs),
                ("big_gamma_n_over_n", exit.big_gamma_n.scale(1.0 / n)),
                ("e_beta", beta),
                ("v", v),
            ] {
                report.row(vec![name.into(), e.mean.into(), e.stderr.into()]);
            }
            report.summary("sigmas", x.sigmas);
            report.check(Check::new(
                "hitting_link",
                x.sigmas < SIGMAS,
                format!("E[gamma_n]/n {} vs E[beta]/v {} ({:.3} sigma)", x.lhs.mean, x.rhs.mean, x.sigmas),
            ));
            Ok(report)
        }
        "phi" => {
            let a = cfg.alphas[0];
            let mut report = Report::new("recursion", &["alpha", "n", "r", "phi", "stderr", "e_big_b", "bound"]);
            let t = phi_tree_estimate(&cfg.dist, a, cfg.n, cfg.r, cfg.samples, cfg.pool_size, pools)?;
            let bound = (a * cfg.r as f64).exp();
            report.row(vec![
                a.into(),
                cfg.n.into(),
                cfg.r.into(),
                t.phi.mean.into(),
                t.phi.stderr.into(),
                t.big_b.mean.into(),
                bound.into(),
            ]);
            report.summary("trees", t.trees as usize);
            report.summary("max_bound_ratio", t.max_bound_ratio);
            report.check(Check::new(
                "pointwise_bound",
                t.bound_violations == 0,
                format!("{} of {} trees above e^(alpha r) W(o,r)", t.bound_violations, t.trees),
            ));
            Ok(report)
        }
        _ => unreachable!("validated by the config"),
    }
}

pub fn env(cfg: &RunConfig) -> Result<Report, CliError> {
    let reps = rep(cfg, cfg.replicas);
    match cfg.check.as_str() {
        "velocity" => {
            let mut report = Report::new("env", &["alpha", "c_alpha", "v_closed", "v_sim", "stderr", "z"]);
            let opts = VelocityOptions {
                horizon: cfg.horizon,
                ..VelocityOptions::default()
            };
            for &a in &cfg.alphas {
                let c = c_alpha(&cfg.dist, a)?;
                let closed = v_alpha_closed(&cfg.dist, a)?;
                let v = estimate_velocity(&cfg.dist, a, opts, reps.derive(&format!("v:{a}")))?;
                report.row(vec![
                    a.into(),
                    c.into(),
                    closed.into(),
                    v.mean.into(),
                    v.stderr.into(),
                    v.z_score(closed).into(),
                ]);
                report.check(z_check(format!("closed_form_alpha={a}"), &v, closed));
            }
            Ok(report)
        }
        "moments" => {
            let a = cfg.alphas[0];
            let mut report = Report::new("env", &["quantity", "value", "stderr", "target", "z"]);
            let j_max = default_truncation(a);
            let m = ray_moments(&cfg.dist, a, j_max, &[0, 1, 2, 5], cfg.depth, reps.derive("moments"))?;
            let z = m.z_alpha;
            let ok = (z.mean - m.c_alpha).abs() <= SIGMAS * z.stderr + m.truncation_bound;
            report.row(vec!["z_alpha".into(), z.mean.into(), z.stderr.into(), m.c_alpha.into(), z.z_score(m.c_alpha).into()]);
            report.check(Check::new(
                "normalization",
                ok,
                format!("<Z_alpha> {} vs C_alpha {} (truncation bound {})", z.mean, m.c_alpha, m.truncation_bound),
            ));
            for (j, e, target) in &m.w_ray {
                report.row(vec![format!("w_minus_{j}").into(), e.mean.into(), e.stderr.into(), (*target).into(), e.z_score(*target).into()]);
                report.check(z_check(format!("w_minus_{j}"), e, *target));
            }
            let b = cfg.dist.constants().b;
            report.row(vec!["w_o_squared".into(), m.w2.mean.into(), m.w2.stderr.into(), b.into(), m.w2.z_score(b).into()]);
            report.check(z_check("w_o_squared".into(), &m.w2, b));
            let inv_m = inverse_spine_martingale(cfg, cfg.depth, reps.derive("inv-m"))?;
            report.row(vec!["q_inverse_m".into(), inv_m.mean.into(), inv_m.stderr.into(), 1.0.into(), inv_m.z_score(1.0).into()]);
            report.check(z_check("q_inverse_m".into(), &inv_m, 1.0));
            Ok(report)
        }
        "stationarity" => {
            let a = cfg.alphas[0];
            let mut report = Report::new("env", &["test_fn", "residual", "stderr", "z"]);
            let fns = [TestFn::Degree, TestFn::WRoot];
            let res = stationarity_residual(&cfg.dist, a, &fns, EnvOptions::for_alpha(a), reps.derive("stationarity"))?;
            for (f, e) in fns.iter().zip(&res) {
                report.row(vec![f.name().into(), e.mean.into(), e.stderr.into(), e.z_score(0.0).into()]);
                report.check(z_check(format!("stationarity_{}", f.name()), e, 0.0));
            }
            Ok(report)
        }
        "singular" => {
            let a = cfg.alphas[0];
            let mut report = Report::new("env", &["alpha", "j_max", "psi_mean", "stderr", "truncation_bound"]);
            let j = default_truncation(a);
            let g = gw_singular_psi_check(&cfg.dist, a, j, reps.derive("singular"))?;
            report.row(vec![a.into(), j.into(), g.psi.mean.into(), g.psi.stderr.into(), g.truncation_bound.into()]);
            let ok = (g.psi.mean - 1.0).abs() <= SIGMAS * g.psi.stderr + g.truncation_bound;
            report.check(Check::new(
                "singular_mean",
                ok,
                format!("mean {} ± {} vs 1", g.psi.mean, g.psi.stderr),
            ));
            Ok(report)
        }
        "mu-infinity" => {
            let mut report = Report::new("env", &["alpha", "v_sim", "stderr", "c_harmonic", "inv_c", "matches"]);
            let mu = mu_infinity_velocity(&cfg.dist, cfg.horizon, reps.derive("mu-inf"))?;
            report.row(vec![
                mu.alpha.into(),
                mu.v_simulated.mean.into(),
                mu.v_simulated.stderr.into(),
                mu.c_harmonic.into(),
                mu.inv_c.into(),
                format!("{:?}", mu.matches).into(),
            ]);
            Ok(report)
        }
        _ => unreachable!("validated by the config"),
    }
}

/// `Q[1/M_n(o)]` from count-based spine samples.
pub fn inverse_spine_martingale(cfg: &RunConfig, n: u32, reps: Replication) -> Result<EstimateCI, CliError> {
    let pop = PopulationSampler::new(&cfg.dist);
    let sb = cfg.dist.size_biased();
    let v = map_replicas(reps, |_, rng: &mut RngStream| Ok(1.0 / sample_spine_m(&pop, &sb, n, rng)))?;
    Ok(MomentAccumulator::from_slice(&v).estimate())
}

pub fn spine(cfg: &RunConfig) -> Result<Report, CliError> {
    let opts = spine_options(cfg);
    let pools = rep(cfg, cfg.pools);
    let dist = &cfg.dist;
    match cfg.check.as_str() {
        "zeta2" => {
            let mut report = Report::new("spine", &["alpha", "E_zeta2", "stderr"]);
            for &a in &cfg.alphas {
                let r = renewal_denominator(dist, a, 2, opts, pools)?;
                report.row(vec![a.into(), r.zeta2.mean.into(), r.zeta2.stderr.into()]);
                report.check(z_check(format!("zeta2_alpha={a}"), &r.zeta2, 1.0));
            }
            Ok(report)
        }
        "renewal" => {
            let mut report = Report::new(
                "spine",
                &["alpha", "denominator", "stderr", "displacement", "E_zeta2", "exp_moment_r1", "lag1_corr"],
            );
            for &a in &cfg.alphas {
                let r = renewal_denominator(dist, a, 6, opts, pools)?;
                report.row(vec![
                    a.into(),
                    r.denominator.mean.into(),
                    r.denominator.stderr.into(),
                    r.displacement.mean.into(),
                    r.zeta2.mean.into(),
                    r.exp_moment_r1.mean.into(),
                    r.zeta_lag1_corr.into(),
                ]);
                let band = SIGMAS / (r.lag_pairs as f64).sqrt();
                report.check(Check::new(
                    format!("block_independence_alpha={a}"),
                    r.zeta_lag1_corr.abs() < band,
                    format!("lag-1 correlation {} (band {band:.4})", r.zeta_lag1_corr),
                ));
            }
            Ok(report)
        }
        "h" => {
            let a = cfg.alphas[0];
            let y_max = cfg.n as usize;
            let h = h_estimate(dist, a, y_max, opts, pools)?;
            let mut report = Report::new("spine", &["y", "h", "stderr", "bound"]);
            let mut within = true;
            for y in 0..y_max {
                report.row(vec![(y + 1).into(), h.h[y].mean.into(), h.h[y].stderr.into(), h.bound_y[y].into()]);
                within &= h.h[y].mean <= h.bound_tau[y] + 1e-12;
            }
            report.summary("sum_h", h.sum.mean);
            report.summary("sum_h_stderr", h.sum.stderr);
            report.summary("acceptance", h.acceptance);
            report.check(Check::new("pathwise_bound", within, "h(y) below E[f_max^tau(-y)]"));
            Ok(report)
        }
        "phi" => {
            let a = cfg.alphas[0];
            let s = phi_spine_estimate(dist, a, cfg.n, cfg.r, opts, pools)?;
            let mut report = Report::new("spine", &["alpha", "n", "r", "phi", "stderr", "phi_exact", "stderr_exact"]);
            report.row(vec![
                a.into(),
                cfg.n.into(),
                cfg.r.into(),
                s.phi.mean.into(),
                s.phi.stderr.into(),
                s.phi_exact.mean.into(),
                s.phi_exact.stderr.into(),
            ]);
            let bound = (a * cfg.r as f64).exp();
            report.check(Check::new(
                "phi_bound",
                s.phi.mean - SIGMAS * s.phi.stderr <= bound,
                format!("phi {} vs e^(alpha r) = {bound}", s.phi.mean),
            ));
            Ok(report)
        }
        "sandwich" => {
            let a = cfg.alphas[0];
            let s = sandwich(dist, a, cfg.n, cfg.r, opts, pools)?;
            let mut report = Report::new("spine", &["alpha", "lower", "lower_stderr", "e_big_b", "stderr", "upper", "upper_stderr"]);
            report.row(vec![
                a.into(),
                s.lower.mean.into(),
                s.lower.stderr.into(),
                s.big_b.mean.into(),
                s.big_b.stderr.into(),
                s.upper.mean.into(),
                s.upper.stderr.into(),
            ]);
            report.check(Check::new(
                "sandwich",
                s.holds(SIGMAS),
                format!("{} <= {} <= {}", s.lower.mean, s.big_b.mean, s.upper.mean),
            ));
            Ok(report)
        }
        "vrep" => {
            let mut report = Report::new("spine", &["alpha", "v_rep", "v_sim", "stderr", "v_sim_stderr", "z"]);
            let vopts = VelocityOptions {
                horizon: cfg.horizon,
                ..VelocityOptions::default()
            };
            for &a in &cfg.alphas {
                let v = velocity_representation(dist, a, opts, pools)?;
                let vr = v.v.estimate();
                let sim = estimate_velocity(dist, a, vopts, rep(cfg, cfg.replicas).derive(&format!("v:{a}")))?;
                let z = (vr.mean - sim.mean) / vr.combined_stderr(&sim);
                report.row(vec![a.into(), vr.mean.into(), sim.mean.into(), vr.stderr.into(), sim.stderr.into(), z.into()]);
                report.check(Check::new(
                    format!("vrep_alpha={a}"),
                    z.abs() < SIGMAS,
                    format!("v_rep {} vs simulated {} (z = {z:.3})", vr.mean, sim.mean),
                ));
            }
            Ok(report)
        }
        "rep1" => {
            let a = cfg.alphas[0];
            let v = velocity_representation(dist, a, opts, pools.derive("rep1:v"))?;
            let h = h_estimate(dist, a, 1, opts, pools.derive("rep1:h"))?;
            let r = renewal_denominator(dist, a, 2, opts, pools.derive("rep1:r"))?;
            let vopts = VelocityOptions {
                horizon: cfg.horizon,
                ..VelocityOptions::default()
            };
            let sim = estimate_velocity(dist, a, vopts, rep(cfg, cfg.replicas).derive(&format!("v:{a}")))?;
            let c = rep1_closure(dist.mean(), v.beta, sim, v.denominator, r.denominator, h.sum);
            let mut report = Report::new("spine", &["side", "value", "stderr"]);
            report.row(vec!["m_beta_over_v".into(), c.lhs.mean.into(), c.lhs.stderr.into()]);
            report.row(vec!["renewal_form".into(), c.rhs.mean.into(), c.rhs.stderr.into()]);
            report.check(Check::new(
                "rep1_closure",
                c.sigmas < SIGMAS,
                format!("{} vs {} ({:.3} sigma)", c.lhs.mean, c.rhs.mean, c.sigmas),
            ));
            Ok(report)
        }
        "decay" => {
            let a = cfg.alphas[0];
            let mut rng = RngStream::new(cfg.seed, 0);
            let d = cut_decay(dist, a, &[8, 16, 32], cfg.pool_size, &mut rng)?;
            let mut report = Report::new("spine", &["cut", "share"]);
            for &(l, s) in &d.shares {
                report.row(vec![l.into(), s.into()]);
            }
            report.summary("rate", d.rate);
            let decreasing = d.shares.windows(2).all(|w| w[1].1 <= w[0].1);
            report.check(Check::new("decreasing", decreasing, "share non-increasing in the cut"));
            Ok(report)
        }
        _ => unreachable!("validated by the config"),
    }
}

pub fn zjbis(cfg: &RunConfig) -> Result<Report, CliError> {
    let mut rng = RngStream::new(cfg.seed, 0);
    let r = zjbis_trials(cfg.trials, cfg.n as usize, &mut rng)?;
    let mut report = Report::new("zjbis", &["trials", "n_max", "max_abs_diff"]);
    report.row(vec![r.trials.into(), r.n_max.into(), r.max_abs_diff.into()]);
    report.check(Check::new(
        "identity",
        r.max_abs_diff < cfg.tol,
        format!("max |lhs - rhs| = {:e} (tol {:e})", r.max_abs_diff, cfg.tol),
    ));
    Ok(report)
}
