//! Experiment execution. Each experiment turns a validated config into a report.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shpgr_core::dynamics::{integrate_trajectory, HamiltonianSpec, PhaseState};
use shpgr_core::entanglement::{chsh, circular_leg, correlation, form_pair, holonomy_rotation, sample_correlation, separate, AnalyzerDirection};
use shpgr_core::error::ShpError;
use shpgr_core::geometry::{metric_at, Chart, Mat4, MetricField, SpacetimePoint, Variance, Vec4};
use shpgr_core::induced_rep::{covariance_check, projective_composition_residual, wigner_d, LorentzTransform};
use shpgr_core::quantum_evolution::{
    evolve_with, hamiltonian_operator, lattice_geometry, momentum_operator, observables, Lattice, Solver, WaveGrid,
};
use shpgr_core::spin_algebra::{build_gammas, identity_residuals, InducingVector, C64};
use shpgr_core::transport::{
    circle_transport_exact, coverage_classes, cut_detection, holonomy, schwarzschild_circle_closed_form, transport_matrix,
    wrap_angle, FanSpec, GridAxis, SampleGrid, TransportMode, TransportPath, CUT_TOL,
};

use crate::config::{AxisConfig, Experiment, LegsConfig, MetricConfig, ScenarioConfig, SolverConfig};
use crate::output::{Cell, PlotSeries, RunReport, Table};

#[derive(Debug)]
pub enum RunError {
    /// Bad parameters discovered while running; exit code 2.
    Config(String),
    /// Numerical or invariant failure; exit code 1.
    Failed(String),
}

impl From<ShpError> for RunError {
    fn from(e: ShpError) -> Self {
        match e {
            ShpError::Usage(_) | ShpError::ChartDomain(_) => RunError::Config(e.to_string()),
            _ => RunError::Failed(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

pub fn run(cfg: &ScenarioConfig, seed: u64) -> Result<RunReport> {
    match cfg.experiment {
        Experiment::Geodesic => geodesic(cfg),
        Experiment::Transport => transport(cfg),
        Experiment::Holonomy => holonomy_loop(cfg),
        Experiment::SpinVerify => spin_verify(cfg, seed),
        Experiment::Induce => induce(cfg),
        Experiment::Evolve => evolve(cfg, seed),
        Experiment::Epr => epr(cfg, seed),
        Experiment::Cover => cover(cfg),
    }
}

fn metric(cfg: &ScenarioConfig) -> Result<MetricField> {
    cfg.metric().map_err(|e| RunError::Config(e.0))
}

fn config_err(e: String) -> RunError {
    RunError::Config(e)
}

fn geodesic(cfg: &ScenarioConfig) -> Result<RunReport> {
    let g = cfg.geodesic.as_ref().unwrap();
    let metric = metric(cfg)?;
    let spec = HamiltonianSpec::new(g.mass, metric.clone(), g.potential.build().map_err(config_err)?)?;
    let x0 = SpacetimePoint::new(metric.chart(), Vec4::from(g.position));
    let s0 = PhaseState::from_velocity(&spec, x0, Vec4::from(g.velocity), 0.0)?;
    let tr = integrate_trajectory(&spec, &s0, g.dtau, g.steps)?;

    let mut report = RunReport::default();
    let mut table = Table::new("trajectory.csv", &["tau", "x0", "x1", "x2", "x3", "p0", "p1", "p2", "p3", "K"]);
    let mut plot = PlotSeries {
        file: "trajectory.dat".into(),
        title: "trajectory".into(),
        columns: vec![("tau", ""), ("x1", ""), ("x2", ""), ("x3", ""), ("K", "")],
        rows: Vec::new(),
    };
    for (s, k) in tr.states.iter().zip(&tr.hamiltonian) {
        let (x, p) = (s.x.coords, s.p.components);
        let mut row: Vec<Cell> = vec![s.tau.into()];
        row.extend(x.iter().chain(p.iter()).map(|&v| Cell::from(v)));
        row.push((*k).into());
        table.push(row);
        plot.rows.push(vec![s.tau, x[1], x[2], x[3], *k]);
    }
    let k0 = tr.hamiltonian[0];
    let drift = tr.hamiltonian.iter().map(|k| (k - k0).abs()).fold(0.0, f64::max);
    report.check("hamiltonian_drift", drift, g.hamiltonian_tolerance);
    report.check("domain_exit", if tr.exited_domain { 1.0 } else { 0.0 }, 0.0);
    if let Some(tol) = g.radius_tolerance {
        let r0 = g.position[1];
        let dr = tr.states.iter().map(|s| (s.x.coords[1] - r0).abs()).fold(0.0, f64::max);
        report.check("radius_drift", dr, tol);
    }
    report.value("steps_completed", (tr.states.len() - 1) as f64);
    report.tables.push(table);
    report.plots.push(plot);
    Ok(report)
}

/// The closed form covers spherical-chart metrics whose angular connection is the flat one.
fn closed_form_applies(cfg: &ScenarioConfig, mode: TransportMode) -> bool {
    mode == TransportMode::Reduced && matches!(cfg.metric, Some(MetricConfig::Schwarzschild { .. }) | Some(MetricConfig::MinkowskiSpherical {}))
}

fn transport(cfg: &ScenarioConfig) -> Result<RunReport> {
    let t = cfg.transport.as_ref().unwrap();
    let metric = metric(cfg)?;
    let mode: TransportMode = t.mode.into();
    let s_r0 = match t.s_r {
        Some(v) => v,
        None => schwarzschild_circle_closed_form(t.a, t.c, t.theta, t.r, 0.0)
            .map_err(|e| RunError::Config(format!("transport.s_r has no closed-form default here ({e}); set it explicitly")))?
            .s_r,
    };
    let s0 = Vec4::new(0.0, s_r0, t.a, t.c);
    let oracle = closed_form_applies(cfg, mode);
    let x0 = SpacetimePoint::spherical(0.0, t.r, t.theta, t.phi_start);
    let ginv0 = metric.inverse_at(&x0)?;
    let norm0 = s0.dot(&(ginv0 * s0));

    let mut header = vec!["phi", "s_t", "s_r", "s_theta", "s_phi"];
    if oracle {
        header.extend(["exact_s_r", "exact_s_theta", "exact_s_phi"]);
    }
    let mut table = Table::new("transport.csv", &header);
    let mut plot = PlotSeries {
        file: "transport.dat".into(),
        title: format!("covector transport along the circle r = {}, theta = {}", t.r, t.theta),
        columns: vec![("phi", "rad"), ("S_r", ""), ("S_theta", ""), ("S_phi", "")],
        rows: Vec::new(),
    };
    let (mut worst, mut norm_drift): (f64, f64) = (0.0, 0.0);
    for k in 0..=t.rows {
        let frac = k as f64 / t.rows as f64;
        let phi = t.phi_start + (t.phi_end - t.phi_start) * frac;
        let s = if k == 0 {
            s0
        } else {
            let path = TransportPath::circle_arc(0.0, t.r, t.theta, t.phi_start, phi)?;
            let steps = ((t.steps as f64 * frac).round() as usize).max(1);
            transport_matrix(&path, &metric, mode, Variance::Covariant, steps)? * s0
        };
        let mut row: Vec<Cell> = vec![phi.into(), s[0].into(), s[1].into(), s[2].into(), s[3].into()];
        if oracle {
            let e = circle_transport_exact(t.a, t.c, s_r0, t.theta, t.r, phi - t.phi_start);
            worst = worst.max((s[1] - e.s_r).abs()).max((s[2] - e.s_theta).abs()).max((s[3] - e.s_phi).abs());
            row.extend([e.s_r.into(), e.s_theta.into(), e.s_phi.into()]);
        }
        let ginv = metric.inverse_at(&SpacetimePoint::spherical(0.0, t.r, t.theta, phi))?;
        norm_drift = norm_drift.max((s.dot(&(ginv * s)) - norm0).abs());
        table.push(row);
        plot.rows.push(vec![phi, s[1], s[2], s[3]]);
    }
    let mut report = RunReport::default();
    if oracle {
        report.check("closed_form_error", worst, t.tolerance);
    }
    match mode {
        TransportMode::Full => report.check("norm_drift", norm_drift, t.tolerance),
        TransportMode::Reduced => report.value("norm_drift", norm_drift),
    }
    report.value("initial_s_r", s_r0);
    report.tables.push(table);
    report.plots.push(plot);
    Ok(report)
}

fn matrix_table(file: &str, mats: &[(&str, &Mat4)]) -> Table {
    let mut table = Table::new(file, &["frame", "row", "c0", "c1", "c2", "c3"]);
    for (name, m) in mats {
        for i in 0..4 {
            let mut row: Vec<Cell> = vec![(*name).into(), i.into()];
            row.extend((0..4).map(|j| Cell::from(m[(i, j)])));
            table.push(row);
        }
    }
    table
}

fn holonomy_loop(cfg: &ScenarioConfig) -> Result<RunReport> {
    let h = cfg.holonomy.as_ref().unwrap();
    let metric = metric(cfg)?;
    let mode: TransportMode = h.mode.into();
    let path = TransportPath::circle(0.0, h.r, h.theta, h.turns)?;
    let res = holonomy(&path, &metric, mode, h.steps)?;
    let (cut, full) = cut_detection(&path, &metric, CUT_TOL, h.steps)?;

    let mut report = RunReport::default();
    report.value("rotation_angle", res.rotation_angle);
    report.value("spatial_rotation_angle", res.spatial_rotation_angle());
    report.value("deviation", res.deviation());
    report.value("cut_detected", if cut { 1.0 } else { 0.0 });
    let sweep = 2.0 * PI * h.turns;

    if closed_form_applies(cfg, mode) {
        let mut worst: f64 = 0.0;
        for k in 1..4 {
            let mut e = Vec4::zeros();
            e[k] = 1.0;
            let got = res.matrix * e;
            let want = circle_transport_exact(e[2], e[3], e[1], h.theta, h.r, sweep);
            worst = worst.max((got[1] - want.s_r).abs()).max((got[2] - want.s_theta).abs()).max((got[3] - want.s_phi).abs());
        }
        report.check("closed_form_error", worst, h.tolerance);
    }
    if mode == TransportMode::Full {
        let base = SpacetimePoint::spherical(0.0, h.r, h.theta, 0.0);
        let ginv = metric.inverse_at(&base)?;
        let compat = (res.matrix * ginv * res.matrix.transpose() - ginv).amax();
        report.check("metric_compatibility", compat, h.tolerance);
        match cfg.metric {
            Some(MetricConfig::SphereSlice { .. }) => {
                let err = wrap_angle(res.rotation_angle - sweep * h.theta.cos()).abs();
                report.check("rotation_angle_error", err, h.tolerance);
            }
            Some(MetricConfig::MinkowskiSpherical {}) => report.check("flat_deviation", res.deviation(), h.tolerance),
            Some(MetricConfig::Schwarzschild { mass }) => {
                let f = 1.0 - 2.0 * mass / h.r;
                let want = wrap_angle(sweep * (h.theta.cos().powi(2) + f * h.theta.sin().powi(2)).sqrt()).abs();
                report.check("spatial_angle_error", (res.spatial_rotation_angle() - want).abs(), h.tolerance);
            }
            _ => {}
        }
    }
    report.tables.push(matrix_table(
        "holonomy.csv",
        &[("coordinate", &res.matrix), ("orthonormal", &res.orthonormal), ("full_coordinate", &full.matrix)],
    ));
    Ok(report)
}

fn random_inducing(rng: &mut ChaCha8Rng) -> Result<InducingVector> {
    let dir = loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 {
            break v.normalize();
        }
    };
    let eta: f64 = rng.random_range(0.0..2.0);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let s = dir * eta.sinh();
    Ok(InducingVector::new(Vec4::new(eta.cosh(), s[0], s[1], s[2]) * sign)?)
}

fn spin_verify(cfg: &ScenarioConfig, seed: u64) -> Result<RunReport> {
    let s = cfg.spin_verify.as_ref().unwrap();
    let basis = build_gammas();
    let p = Vec4::from(s.momentum);
    let mut ns = vec![InducingVector::new(Vec4::from(s.n))?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..s.random_draws {
        ns.push(random_inducing(&mut rng)?);
    }
    let mut table = Table::new("spin_residuals.csv", &["sample", "n0", "n1", "n2", "n3", "check", "residual"]);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for (i, n) in ns.iter().enumerate() {
        for (name, r) in identity_residuals(&p, n, &basis) {
            let mut row: Vec<Cell> = vec![i.into()];
            row.extend(n.n.iter().map(|&v| Cell::from(v)));
            row.extend([name.into(), r.into()]);
            table.push(row);
            match worst.iter_mut().find(|(k, _)| *k == name) {
                Some(w) => w.1 = w.1.max(r),
                None => worst.push((name, r)),
            }
        }
    }
    let mut report = RunReport::default();
    for (name, r) in worst {
        report.check(name, r, s.tolerance);
    }
    report.tables.push(table);
    Ok(report)
}

fn induce(cfg: &ScenarioConfig) -> Result<RunReport> {
    let c = cfg.induce.as_ref().unwrap();
    let n = InducingVector::new(Vec4::from(c.n))?;
    let lambda = LorentzTransform::boost(c.rapidity, c.boost_direction)?.compose(&LorentzTransform::rotation(c.angle, c.rotation_axis)?);
    let d = wigner_d(&lambda, &n)?;
    let basis = build_gammas();

    let mut report = RunReport::default();
    report.check("unitarity", d.unitarity_residual(), c.tolerance);
    report.check("unit_determinant", d.det_residual(), c.tolerance);
    report.check("covariance", covariance_check(&lambda, &n, &basis)?, c.tolerance);
    report.check("projective_composition", projective_composition_residual(&lambda, &lambda)?, c.tolerance);
    let mut dm = Table::new("d_matrix.csv", &["row", "col", "re", "im"]);
    for i in 0..2 {
        for j in 0..2 {
            let z: C64 = d.matrix[(i, j)];
            dm.push(vec![i.into(), j.into(), z.re.into(), z.im.into()]);
        }
    }
    report.tables.push(dm);
    report.tables.push(matrix_table("lorentz.csv", &[("lambda", &lambda.matrix)]));
    Ok(report)
}

fn random_grid(lattice: Lattice, weights: &[f64], rng: &mut ChaCha8Rng) -> Result<WaveGrid> {
    let vals = (0..lattice.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    Ok(WaveGrid::new(lattice, vals, weights.to_vec(), 0.0)?)
}

fn evolve(cfg: &ScenarioConfig, seed: u64) -> Result<RunReport> {
    let e = cfg.evolve.as_ref().unwrap();
    let metric = metric(cfg)?;
    let spec = HamiltonianSpec::new(e.mass, metric.clone(), e.potential.build().map_err(config_err)?)?;
    let lattice = Lattice::periodic_box(e.n_t, e.n_x, e.t_length, e.x_length, e.t_origin, e.x_origin)?;
    let psi0 = WaveGrid::gaussian(lattice, &metric, e.packet.center, e.packet.width, e.packet.k_x, e.packet.k_t)?;
    let p_t = momentum_operator(&metric, &lattice, 0)?;
    let p_x = momentum_operator(&metric, &lattice, 1)?;
    let k = hamiltonian_operator(&spec, &lattice)?;
    let solver = match e.solver {
        SolverConfig::ConjugateGradient => Solver::default(),
        SolverConfig::DenseLu => Solver::DenseLu,
    };

    let mut table = Table::new("evolve.csv", &["tau", "norm", "mean_x", "mean_p", "mean_k"]);
    let mut plot = PlotSeries {
        file: "evolve.dat".into(),
        title: format!("Cayley evolution on a {}x{} lattice", e.n_t, e.n_x),
        columns: vec![("tau", ""), ("norm", ""), ("<x>", "")],
        rows: Vec::new(),
    };
    let n0 = psi0.norm_squared();
    let mut drift: f64 = 0.0;
    evolve_with(&psi0, &spec, e.dtau, e.steps, solver, |psi| {
        let o = observables(psi, &p_x, &k)?;
        drift = drift.max((o.norm - n0).abs() / n0);
        table.push(vec![o.tau.into(), o.norm.into(), o.mean_x.into(), o.mean_p.into(), o.mean_k.into()]);
        plot.rows.push(vec![o.tau, o.norm, o.mean_x]);
        Ok(())
    })?;

    let weights = lattice_geometry(&metric, &lattice)?.weights;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RunReport::default();
    report.check("norm_drift", drift, e.norm_tolerance);
    for (name, op) in [("hermiticity_p_t", &p_t), ("hermiticity_p_x", &p_x), ("hermiticity_k", &k)] {
        let (a, b) = (random_grid(lattice, &weights, &mut rng)?, random_grid(lattice, &weights, &mut rng)?);
        report.check(name, op.pair_hermiticity_residual(&a, &b)?, e.hermiticity_tolerance);
    }
    report.tables.push(table);
    report.plots.push(plot);
    Ok(report)
}

fn epr(cfg: &ScenarioConfig, seed: u64) -> Result<RunReport> {
    let c = cfg.epr.as_ref().unwrap();
    let metric = metric(cfg)?;
    let x = SpacetimePoint::new(metric.chart(), Vec4::from(c.formation));
    let pair = form_pair(&x, &Vec4::from(c.n), &metric)?;
    let mut report = RunReport::default();

    let sep = match c.legs {
        LegsConfig::Geodesic { velocity_1, velocity_2, length } => {
            separate(&pair, &Vec4::from(velocity_1), &Vec4::from(velocity_2), length, c.steps, &metric)?
        }
        LegsConfig::Circular { sweep } => {
            let mass = match cfg.metric {
                Some(MetricConfig::Schwarzschild { mass }) => mass,
                _ => unreachable!("validated"),
            };
            let f = c.formation;
            let (v1, len, p1) = circular_leg(mass, f[1], f[0], f[3], 1.0, sweep)?;
            let (v2, _, p2) = circular_leg(mass, f[1], f[0], f[3], -1.0, sweep)?;
            let sep = separate(&pair, &v1, &v2, len, c.steps, &metric)?;
            let rel = holonomy_rotation(&sep, &p1.reversed().concat(&p2)?, &metric, c.steps)?;
            let perp = rel.axis.cross(&Vector3::x());
            let perp = if perp.norm() > 1e-6 { perp.normalize() } else { rel.axis.cross(&Vector3::y()).normalize() };
            let a = AnalyzerDirection::new(perp.into())?;
            let err = (correlation(&sep, &a, &a, &metric)? + rel.angle.cos()).abs();
            report.value("relative_rotation_angle", rel.angle);
            report.check("holonomy_route_agreement", err, c.holonomy_tolerance);
            sep
        }
    };
    let truncated = sep.truncated.iter().filter(|&&t| t).count();
    report.check("legs_truncated", truncated as f64, 0.0);

    let mut table = Table::new("epr.csv", &["angle", "e_exact", "e_sampled", "stderr"]);
    let mut plot = PlotSeries {
        file: "epr.dat".into(),
        title: "spin correlation against analyzer angle".into(),
        columns: vec![("angle", "rad"), ("E_exact", ""), ("E_sampled", ""), ("stderr", "")],
        rows: Vec::new(),
    };
    let a0 = AnalyzerDirection::in_plane(0.0);
    let (mut worst_sigma, mut flat_err): (f64, f64) = (0.0, 0.0);
    for (k, &theta) in c.angles.iter().enumerate() {
        let e = correlation(&sep, &a0, &AnalyzerDirection::in_plane(theta), &metric)?;
        let s = sample_correlation(e, c.samples, seed.wrapping_add(k as u64));
        let sigma = if s.stderr > 0.0 {
            (s.mean - e).abs() / s.stderr
        } else if s.mean == e {
            0.0
        } else {
            f64::INFINITY
        };
        worst_sigma = worst_sigma.max(sigma);
        flat_err = flat_err.max((e + theta.cos()).abs());
        table.push(vec![theta.into(), e.into(), s.mean.into(), s.stderr.into()]);
        plot.rows.push(vec![theta, e, s.mean, s.stderr]);
    }
    report.check("sampler_sigma", worst_sigma, c.sigma_limit);
    if matches!(cfg.metric, Some(MetricConfig::Minkowski {})) {
        report.check("flat_correlation", flat_err, 1e-12);
    }

    let settings = c.chsh.map(AnalyzerDirection::in_plane);
    let ch = chsh(&sep, settings, c.samples, seed.wrapping_add(c.angles.len() as u64), &metric)?;
    report.value("chsh_exact", ch.exact);
    report.value("chsh_sampled", ch.sampled);
    report.check("chsh_sampling_error", (ch.sampled - ch.exact).abs(), c.chsh_tolerance);
    let mut chsh_table = Table::new("chsh.csv", &["setting", "e_sampled", "stderr"]);
    for (name, s) in ["a_b", "a_b2", "a2_b", "a2_b2"].iter().zip(&ch.settings) {
        chsh_table.push(vec![(*name).into(), s.mean.into(), s.stderr.into()]);
    }
    report.tables.push(table);
    report.tables.push(chsh_table);
    report.plots.push(plot);
    Ok(report)
}

fn axis(a: &AxisConfig) -> GridAxis {
    GridAxis { index: a.index, lo: a.lo, hi: a.hi, count: a.count, periodic: a.periodic }
}

fn cover(cfg: &ScenarioConfig) -> Result<RunReport> {
    let c = cfg.cover.as_ref().unwrap();
    let metric = metric(cfg)?;
    let chart: Chart = metric.chart();
    let grid = SampleGrid::plane(chart, Vec4::from(c.base), axis(&c.axis_a), axis(&c.axis_b), c.resolution);
    let fan = FanSpec::planar(c.fan_count, c.fan_plane[0], c.fan_plane[1], c.speed, c.length, c.steps);
    let seeds: Vec<(SpacetimePoint, Vec4)> =
        c.seeds.iter().map(|s| (SpacetimePoint::new(chart, Vec4::from(s.point)), Vec4::from(s.n))).collect();
    for (i, (p, n)) in seeds.iter().enumerate() {
        let g = metric_at(&metric, p)?;
        let nn = n.dot(&(g * n));
        if (nn + 1.0).abs() > 1e-9 {
            return Err(RunError::Config(format!("cover.seeds[{i}].n has N·N = {nn}, expected −1")));
        }
    }
    let mut report = RunReport::default();
    let mut table = Table::new("cover.csv", &["grid_index", "seed_index", "n0", "n1", "n2", "n3"]);
    match coverage_classes(&grid, &seeds, &fan, &metric) {
        Ok(ens) => {
            report.check("unreached_points", 0.0, 0.0);
            report.value("boundary_pairs", ens.boundary_pairs.len() as f64);
            report.value("boundary_rapidity_jump", ens.continuity);
            for (gi, (&si, n)) in ens.assignment.iter().zip(&ens.n_at_point).enumerate() {
                let mut row: Vec<Cell> = vec![gi.into(), si.into()];
                row.extend(n.iter().map(|&v| Cell::from(v)));
                table.push(row);
            }
        }
        Err(ShpError::IncompleteCover(missing)) => {
            report.check("unreached_points", missing.len() as f64, 0.0);
        }
        Err(e) => return Err(e.into()),
    }
    report.tables.push(table);
    Ok(report)
}
