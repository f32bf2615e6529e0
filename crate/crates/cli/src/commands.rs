//! One function per subcommand. Each takes its argument record, fills in
//! every value left to a preset, and returns the tables it produced together
//! with the resolved record.

use gmclab::dilatation::{dilatation_experiment, DilatationConfig};
use gmclab::estimate::experiments::{
    dyadic, modulus_experiment, multifractal_experiment, multipoint_factorization, ratio_moment_experiment,
    scaling_law_experiment, shifted_mass_experiment, smallball_experiment, FactorizationConfig, ModulusConfig,
    MultifractalConfig, RatioConfig, RatioMode, ScalingLawConfig, ShiftedMassConfig, SlopeReport, SmallBallConfig,
};
use gmclab::estimate::LogLogFit;
use gmclab::gmc::zeta;
use gmclab::graph::{
    bound_check, decoupling_margin, default_grid, deviation_experiment, exponential_choices, feasibility_decoupling,
    feasibility_ratio, simulate_overlap_graph, stats_row, threshold, DeviationConfig, DeviationKind, FeasibilityId,
    OverlapGraph, ScaleConfig,
};
use gmclab::inverse::{inverse_contract_experiment, lebesgue_deviation_experiment, ContractConfig, LebesgueConfig};
use gmclab::kernel::{area_oracle, GTable};
use gmclab::sampler::{sample_field, write_dump, FieldSampler};
use gmclab::table::{config_hash, ExperimentTable};
use gmclab::{Grid, KernelFamily, KernelSpec};

use crate::args::*;
use crate::{Ctx, Failure, Outcome};

fn trials(t: &mut Option<usize>, desk: usize, ctx: &Ctx) -> usize {
    *t.get_or_insert_with(|| ctx.profile.trials(desk))
}

fn fit_table(name: &str, hash: u64, seed: u64, rows: &[(f64, &LogLogFit, f64)]) -> ExperimentTable {
    let mut t = ExperimentTable::new(name, &["q", "slope", "stderr", "intercept", "points", "expected"], hash, seed);
    for (q, f, e) in rows {
        t.push(vec![*q, f.slope, f.stderr, f.intercept, f.points as f64, *e]);
    }
    t
}

fn slope_outcome(r: SlopeReport, hash: u64, seed: u64) -> Outcome {
    let fits: Vec<(f64, &LogLogFit, f64)> = r.curves.iter().map(|c| (c.p, &c.fit, c.expected)).collect();
    let line = r
        .curves
        .iter()
        .map(|c| format!("q={} slope {:.4} (expected {:.5})", c.p, c.fit.slope, c.expected))
        .collect::<Vec<_>>()
        .join(", ");
    let n = r.table.rows.len();
    let mut o = Outcome::default();
    let fit = fit_table("fits", hash, seed, &fits);
    o.table(r.table, format!("{n} moment estimates"));
    o.table(fit, line);
    o
}

fn g_table(path: &Option<std::path::PathBuf>) -> Result<Option<GTable>, Failure> {
    let Some(p) = path else { return Ok(None) };
    let text = std::fs::read_to_string(p)
        .map_err(|e| Failure::Precondition(format!("cannot read g table {}: {e}", p.display())))?;
    Ok(Some(GTable::from_csv(&text)?))
}

pub fn kernel_check(a: KernelCheckArgs, _ctx: &Ctx) -> Result<(Outcome, KernelCheckArgs), Failure> {
    let g = g_table(&a.g_table)?;
    let spec = KernelSpec { family: a.family, delta: a.delta, epsilon: a.epsilon, lambda: a.lambda, g, r: a.r };
    spec.validate()?;
    if a.points < 2 {
        return Err(Failure::Precondition(format!("points must be at least 2, got {}", a.points)));
    }
    let dmax = a.max_distance.unwrap_or(if spec.periodic() { 0.5 } else { 1.2 * a.delta });
    let mut t = ExperimentTable::new(
        "kernel_check",
        &["d", "covariance", "oracle", "abs_error", "negative_region"],
        config_hash(&spec),
        0,
    );
    let mut worst: f64 = 0.0;
    for i in 0..a.points {
        let d = dmax * i as f64 / (a.points - 1) as f64;
        let c = spec.covariance(d)?;
        let o = area_oracle(&spec, 0.0, d, a.quad_tol)?;
        worst = worst.max((c.value - o).abs());
        t.push(vec![d, c.value, o, (c.value - o).abs(), c.warning as u8 as f64]);
    }
    let mut out = Outcome::default();
    out.table(t, format!("max |closed form - quadrature| = {worst:.3e} over {} distances", a.points));
    let a = KernelCheckArgs { max_distance: Some(dmax), ..a };
    Ok((out, a))
}

pub fn sample(a: SampleArgs, ctx: &Ctx) -> Result<(Outcome, SampleArgs), Failure> {
    let grid = Grid::covering(a.start, a.end, a.cells)?;
    let eps = a.epsilon.unwrap_or(grid.h);
    let spec = KernelSpec { family: a.family, delta: a.delta, epsilon: eps, lambda: a.lambda, g: g_table(&a.g_table)?, r: None };
    let sampler = FieldSampler::new(&spec, &grid)?;
    let samples = sample_field(&spec, &grid, a.count, ctx.seed)?;
    let shown = samples.len().min(64);
    let mut cols = vec!["x".to_string()];
    cols.extend((0..shown).map(|k| format!("sample_{k}")));
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = ExperimentTable::new("field", &refs, config_hash(&(&spec, &grid)), ctx.seed);
    for i in 0..grid.n {
        let mut row = vec![grid.center(i)];
        row.extend(samples[..shown].iter().map(|s| s.values[i]));
        t.push(row);
    }
    let mut dump = Vec::new();
    write_dump(&samples, &mut dump)?;
    let mut out = Outcome::default();
    out.table(
        t,
        format!(
            "{} samples on {} points, {:?} sampling, jitter {:.1e}, min eigenvalue {:.3e}",
            a.count,
            grid.n,
            sampler.method(),
            sampler.jitter(),
            sampler.min_eigenvalue()
        ),
    );
    out.file("field.bin", dump, format!("binary dump of all {} samples", a.count));
    Ok((out, SampleArgs { epsilon: Some(eps), ..a }))
}

pub fn gmc_moments(mut a: GmcMomentsArgs, ctx: &Ctx) -> Result<(Outcome, GmcMomentsArgs), Failure> {
    let ts = dyadic(a.t_min, a.t_max);
    let p = a.p;
    if a.q.is_empty() {
        return Err(Failure::Usage("at least one exponent is required".into()));
    }
    let out = match a.target {
        MomentKind::Mass => {
            let base = if a.family == KernelFamily::CircleH {
                MultifractalConfig::circle(a.gamma, a.q.clone())
            } else {
                MultifractalConfig::line(a.gamma, a.q.clone())
            };
            let cfg = MultifractalConfig {
                family: a.family,
                delta: a.delta,
                ts,
                extent: *a.extent.get_or_insert(base.extent),
                cells: *a.cells.get_or_insert(base.cells),
                ..base
            };
            let n = trials(&mut a.trials, 5000, ctx);
            slope_outcome(multifractal_experiment(&cfg, n, ctx.seed)?, config_hash(&cfg), ctx.seed)
        }
        MomentKind::ShiftedMass => {
            let base = ShiftedMassConfig::default();
            let cfg = ShiftedMassConfig {
                gamma: a.gamma,
                delta: a.delta,
                a: a.a,
                p,
                ts,
                extent: *a.extent.get_or_insert(base.extent),
                cells: *a.cells.get_or_insert(base.cells),
            };
            let n = trials(&mut a.trials, 2000, ctx);
            slope_outcome(shifted_mass_experiment(&cfg, n, ctx.seed)?, config_hash(&cfg), ctx.seed)
        }
        MomentKind::SupModulus | MomentKind::InfModulus => {
            let base = ModulusConfig::default();
            let cfg = ModulusConfig {
                gamma: a.gamma,
                delta: a.delta,
                p,
                ls: a.l.clone(),
                xs: ts,
                extent: *a.extent.get_or_insert(base.extent),
                cells: *a.cells.get_or_insert(base.cells),
                sup: a.target == MomentKind::SupModulus,
            };
            let n = trials(&mut a.trials, 2000, ctx);
            let r = modulus_experiment(&cfg, n, ctx.seed)?;
            let hash = config_hash(&cfg);
            let mut o = Outcome::default();
            let rows = r.table.rows.len();
            o.table(r.table, format!("{rows} moment estimates"));
            o.table(
                fit_table("fits", hash, ctx.seed, &[(p, &r.fit, r.expected)]),
                format!("slope at the largest range {:.4} (zeta(p) - 1 = {:.4})", r.fit.slope, r.expected),
            );
            o
        }
    };
    Ok((out, a))
}

pub fn scaling_law(mut a: ScalingLawArgs, ctx: &Ctx) -> Result<(Outcome, ScalingLawArgs), Failure> {
    let cfg = ScalingLawConfig {
        family: a.family,
        delta: a.delta,
        lambda: a.lambda,
        a: (a.a_start, a.a_end),
        gamma: a.gamma,
        cells: a.cells,
        moments: a.moments.clone(),
    };
    let n = trials(&mut a.trials, 2000, ctx);
    let r = scaling_law_experiment(&cfg, n, ctx.seed)?;
    let hash = config_hash(&cfg);
    let mut ln = ExperimentTable::new("lognormal", &["p", "mean", "stderr", "expected", "within_3se"], hash, ctx.seed);
    for c in &r.lognormal {
        ln.push(vec![c.p, c.mean, c.stderr, c.expected, c.within_3se as u8 as f64]);
    }
    let mut ks = ExperimentTable::new("scaling_law_ks", &["statistic", "p_value", "variance", "draws"], hash, ctx.seed);
    ks.push(vec![r.ks.statistic, r.ks.p_value, r.variance, n as f64]);
    let mut o = Outcome::default();
    let rows = r.table.rows.len();
    let inside = r.lognormal.iter().filter(|c| c.within_3se).count();
    o.table(r.table, format!("{rows} rows"));
    o.table(ks, format!("KS D = {:.4}, p = {:.4}, log-factor variance {:.5}", r.ks.statistic, r.ks.p_value, r.variance));
    o.table(ln, format!("{inside}/{} lognormal moments within 3 SE", r.lognormal.len()));
    Ok((o, a))
}

pub fn inverse_check(mut a: InverseCheckArgs, ctx: &Ctx) -> Result<(Outcome, InverseCheckArgs), Failure> {
    let cfg = ContractConfig { gamma: a.gamma, delta: a.delta, extent: a.extent, cells: a.cells, probes: a.probes };
    let n = trials(&mut a.trials, 200, ctx);
    let t = inverse_contract_experiment(&cfg, n, ctx.seed)?;
    let max = |c: &str| t.column(c).map(|v| v.into_iter().fold(0.0, f64::max));
    let line = format!(
        "worst round trip {:.3} cell masses / {:.3} cell widths, semigroup {:.1e}, {} out-of-mass misfires",
        max("mass_error_cells")?,
        max("position_error_cells")?,
        max("semigroup_error")?,
        t.column("out_of_mass_misfires")?.iter().sum::<f64>()
    );
    let mut o = Outcome::default();
    o.table(t, line);
    Ok((o, a))
}

pub fn ratio_config(a: &RatioArgs) -> RatioConfig {
    let base = match a.mode {
        RatioMode::EqualLength => RatioConfig::equal_length(a.gamma.unwrap_or(0.5), a.p),
        RatioMode::DecreasingNumerator => RatioConfig::decreasing_numerator(a.gamma.unwrap_or(0.3), a.p),
    };
    RatioConfig {
        a: a.a.unwrap_or(base.a),
        c: a.c.unwrap_or(base.c),
        b: a.b.unwrap_or(base.b),
        r: a.r.unwrap_or(base.r),
        xs: dyadic(a.x_min, a.x_max),
        extent: a.extent.unwrap_or(base.extent),
        cells: a.cells.unwrap_or(base.cells),
        ..base
    }
}

pub fn ratio_moments(mut a: RatioArgs, ctx: &Ctx) -> Result<(Outcome, RatioArgs), Failure> {
    let cfg = ratio_config(&a);
    let n = trials(&mut a.trials, 10_000, ctx);
    let r = ratio_moment_experiment(&cfg, n, ctx.seed)?;
    let hash = config_hash(&cfg);
    let mut fit = ExperimentTable::new("ratio_fit", &["slope", "stderr", "intercept", "out_of_hypothesis"], hash, ctx.seed);
    fit.push(vec![r.fit.slope, r.fit.stderr, r.fit.intercept, r.out_of_hypothesis as u8 as f64]);
    let mut o = Outcome::default();
    let rows = r.table.rows.len();
    o.table(r.table, format!("{rows} lengths"));
    o.table(
        fit,
        format!(
            "fitted exponent {:.4} +- {:.4}{}",
            r.fit.slope,
            r.fit.stderr,
            if r.out_of_hypothesis { " (gamma outside the proven range)" } else { "" }
        ),
    );
    let a = RatioArgs {
        gamma: Some(cfg.gamma),
        a: Some(cfg.a),
        c: Some(cfg.c),
        b: Some(cfg.b),
        r: Some(cfg.r),
        extent: Some(cfg.extent),
        cells: Some(cfg.cells),
        ..a
    };
    Ok((o, a))
}

pub fn multipoint(mut a: MultipointArgs, ctx: &Ctx) -> Result<(Outcome, MultipointArgs), Failure> {
    let cfg = FactorizationConfig {
        gamma: a.gamma,
        heights: a.heights.clone(),
        terms: a.terms.clone(),
        gaps: a.gaps.clone(),
        gap_owner: a.gap_owner.clone(),
        extent: a.extent,
        cells: a.cells,
    };
    let n = trials(&mut a.trials, 2000, ctx);
    let r = multipoint_factorization(&cfg, n, ctx.seed)?;
    let line = format!(
        "joint {:.4} vs product {:.4} (combined se {:.4}): {}",
        r.joint.mean,
        r.product,
        r.combined_stderr,
        if r.holds { "factorizes" } else { "does not factorize" }
    );
    let mut o = Outcome::default();
    o.table(r.table, line);
    Ok((o, a))
}

pub fn graph_oracles(seed: u64) -> Result<ExperimentTable, Failure> {
    let mut t = ExperimentTable::new(
        "graph_oracles",
        &["graph", "N", "p", "edges", "alpha_exact", "alpha_greedy", "caro_wei", "bound_avg", "bound_max", "violations"],
        0,
        seed,
    );
    t.push(stats_row(0.0, f64::NAN, &OverlapGraph::cycle(5)?)?);
    t.push(stats_row(1.0, 1.0, &OverlapGraph::complete(5)?)?);
    Ok(t)
}

pub fn graph_independence(a: GraphArgs, ctx: &Ctx) -> Result<(Outcome, GraphArgs), Failure> {
    let bounds = bound_check(a.graphs, a.max_vertices, ctx.seed)?;
    let violations: f64 = bounds.column("violations")?.iter().sum();
    let oracles = graph_oracles(ctx.seed)?;
    let grid = default_grid(&a.scales, a.cells)?;
    let g = simulate_overlap_graph(&a.scales, &grid, a.gamma, ctx.seed)?;
    let mut sim = ExperimentTable::new(
        "overlap_graph",
        &["graph", "N", "p", "edges", "alpha_exact", "alpha_greedy", "caro_wei", "bound_avg", "bound_max", "violations"],
        config_hash(&(&a.scales, a.gamma, a.cells)),
        ctx.seed,
    );
    sim.push(stats_row(0.0, f64::NAN, &g)?);
    let mut o = Outcome::default();
    o.table(bounds, format!("{} random graphs, {violations} bound violations", a.graphs));
    o.table(oracles, "cycle C5 and complete K5".into());
    let (n, e, al) = (g.n, g.edge_count(), sim.rows[0][4]);
    o.table(sim, format!("overlap graph on {n} scales: {e} edges, independence number {al}"));
    o.file("overlap_edges.csv", g.to_edge_csv().into_bytes(), "edge list of the overlap graph".into());
    Ok((o, a))
}

fn deviation_config(scales: &ScaleConfig, cells: usize, sizes: Vec<usize>, alpha: f64, beta: f64, n: usize) -> Result<DeviationConfig, Failure> {
    Ok(DeviationConfig { scales: scales.clone(), grid: default_grid(scales, cells)?, sizes, alpha, beta, indicators: n })
}

/// Largest increase of a probability over the next scale gap, in units of the combined standard error.
pub fn worst_decay_excess(t: &ExperimentTable) -> Result<f64, Failure> {
    let (k, p, se) = (t.column("k")?, t.column("probability")?, t.column("stderr")?);
    let mut worst = f64::NEG_INFINITY;
    for i in 1..k.len() {
        if k[i] == k[i - 1] {
            let comb = (se[i].powi(2) + se[i - 1].powi(2)).sqrt().max(f64::MIN_POSITIVE);
            worst = worst.max((p[i] - p[i - 1]) / comb);
        }
    }
    Ok(worst)
}

pub fn overlap_decay(mut a: OverlapArgs, ctx: &Ctx) -> Result<(Outcome, OverlapArgs), Failure> {
    let n = trials(&mut a.trials, 2000, ctx);
    let cfg = deviation_config(&a.scales, a.cells, a.sizes.clone(), 0.25, 0.5, 40)?;
    let seq = exponential_choices(&a.scales, a.gamma)?;
    let mut rates = ExperimentTable::new("rates", &["f1", "f2"], config_hash(&(&a.scales, a.gamma)), ctx.seed);
    rates.push(vec![seq.f1, seq.f2]);
    let mut o = Outcome::default();
    o.table(rates, format!("decay rates f1 = {:.4}, f2 = {:.4}", seq.f1, seq.f2));
    for kind in overlap_kinds(&a.sizes) {
        let t = deviation_experiment(kind, &cfg, a.gamma, n, ctx.seed)?;
        let line = if kind == DeviationKind::OverlapDecay {
            format!("{} scale pairs, largest rise across m {:.2} SE", t.rows.len(), worst_decay_excess(&t)?)
        } else {
            let f = t.column("frequency")?;
            let mono = f.windows(2).all(|w| w[1] <= w[0]);
            format!("{} sizes, frequency {}", f.len(), if mono { "nonincreasing" } else { "not monotone" })
        };
        o.table(t, line);
    }
    Ok((o, a))
}

pub fn indicator_tail(mut a: IndicatorArgs, ctx: &Ctx) -> Result<(Outcome, IndicatorArgs), Failure> {
    let n = trials(&mut a.trials, 100_000, ctx);
    let cfg = deviation_config(&ScaleConfig::default(), 16, vec![], a.alpha, a.beta, a.n)?;
    let t = deviation_experiment(DeviationKind::IndicatorTail, &cfg, 0.0, n, ctx.seed)?;
    let r = &t.rows[0];
    let line = format!("frequency {:.3e} (se {:.1e}) vs bound {:.3e}, D = {:.6}", r[3], r[4], r[5], r[6]);
    let mut o = Outcome::default();
    o.table(t, line);
    Ok((o, a))
}

pub fn smallball(mut a: SmallBallArgs, ctx: &Ctx) -> Result<(Outcome, SmallBallArgs), Failure> {
    let cfg = SmallBallConfig { rs: a.r.clone(), t: a.t, delta: a.delta, gamma: a.gamma, cells: a.cells };
    let n = trials(&mut a.trials, 4000, ctx);
    let r = smallball_experiment(&cfg, n, ctx.seed)?;
    let mut o = Outcome::default();
    let line = match &r.fit {
        Some(f) => format!("{} values of r, fitted exponent {:.4}", r.table.rows.len(), f.slope),
        None => format!("{} values of r, too few with r t > 1 to fit", r.table.rows.len()),
    };
    o.table(r.table, line);
    Ok((o, a))
}

pub fn lebesgue_rate(mut a: LebesgueArgs, ctx: &Ctx) -> Result<(Outcome, LebesgueArgs), Failure> {
    let cfg = LebesgueConfig {
        heights: a.heights.clone(),
        grid: Grid::covering(0.0, a.extent, a.cells)?,
        a: (a.a_start, a.a_end),
        x: a.x,
        deviations: a.deviations.clone(),
        gamma: a.gamma,
    };
    let n = trials(&mut a.trials, 500, ctx);
    let t = lebesgue_deviation_experiment(&cfg, n, ctx.seed)?;
    let line = format!("{} heights x {} deviations", a.heights.len(), a.deviations.len());
    let mut o = Outcome::default();
    o.table(t, line);
    Ok((o, a))
}

pub fn dilatation(mut a: DilatationArgs, ctx: &Ctx) -> Result<(Outcome, DilatationArgs), Failure> {
    let cfg = DilatationConfig {
        gamma: a.gamma,
        delta: a.delta,
        max_depth: a.max_depth,
        offset: a.offset,
        extent: a.extent,
        cells: a.cells,
    };
    let n = trials(&mut a.trials, 200, ctx);
    let r = dilatation_experiment(&cfg, n, ctx.seed)?;
    let line = format!("estimate {:.5e}, relative se {:.3}", r.estimate, r.relative_stderr);
    let mut o = Outcome::default();
    o.table(r.table, line);
    Ok((o, a))
}

pub fn feasibility(a: FeasibilityArgs, ctx: &Ctx) -> Result<(Outcome, FeasibilityArgs), Failure> {
    let hash = config_hash(&a);
    let mut t =
        ExperimentTable::new("feasibility", &["beta", "feasible", "margin", "witness_p1", "witness_eps"], hash, ctx.seed);
    for &b in &a.beta {
        let f = match a.id {
            FeasibilityId::DecouplingBeta => feasibility_decoupling(b, a.eps_star, a.c_gap, a.r_a)?,
            FeasibilityId::RatioBeta => feasibility_ratio(b)?,
        };
        let (p1, e) = f.witness.unwrap_or((f64::NAN, f64::NAN));
        t.push(vec![b, f.feasible as u8 as f64, f.margin, p1, e]);
    }
    let thr = match a.id {
        FeasibilityId::DecouplingBeta => {
            feasibility_decoupling(0.5, a.eps_star, a.c_gap, a.r_a)?;
            threshold(|b| decoupling_margin(b, a.eps_star, a.c_gap, a.r_a), 1e-6, 0.999)
        }
        FeasibilityId::RatioBeta => threshold(|b| feasibility_ratio(b).map(|f| f.margin).unwrap_or(-1.0), 1e-3, 0.5),
    };
    let mut th = ExperimentTable::new("feasibility_threshold", &["threshold"], hash, ctx.seed);
    th.push(vec![thr]);
    let feasible = t.rows.iter().filter(|r| r[1] == 1.0).count();
    let mut o = Outcome::default();
    o.table(t, format!("{feasible}/{} values feasible", a.beta.len()));
    o.table(th, format!("largest feasible beta {thr:.6}"));
    Ok((o, a))
}

pub fn zeta_cmd(a: ZetaArgs, ctx: &Ctx) -> Result<(Outcome, ZetaArgs), Failure> {
    if !(a.gamma >= 0.0 && a.gamma.is_finite()) {
        return Err(Failure::Precondition(format!("gamma must be a nonnegative number, got {}", a.gamma)));
    }
    let mut t = ExperimentTable::new("zeta", &["q", "gamma", "zeta"], config_hash(&a), ctx.seed);
    let mut o = Outcome { quiet: true, ..Outcome::default() };
    for &q in &a.q {
        let z = zeta(q, a.gamma);
        o.notes.push(format!("{z}"));
        t.push(vec![q, a.gamma, z]);
    }
    o.table(t, String::new());
    Ok((o, a))
}
