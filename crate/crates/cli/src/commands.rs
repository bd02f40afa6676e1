//! The subcommands proper. Each returns its artifacts and a one-line summary;
//! an invariant violation still produces artifacts and is reported alongside.

use std::fmt::Write as _;
use std::time::Instant;

use mpsh_core::cones::{is_m_semipositive, strong_positivity_oracle};
use mpsh_core::fm::{fm_gradient_matrix, fm_value};
use mpsh_core::grid::{GridDomain, GridFunction, NodeTag};
use mpsh_core::hermitian::{relative_eigenvalues, HermitianMatrix};
use mpsh_core::regularize::{
    global_regularize, local_regularize, verify_monotone_convergence, ApproximationSchedule,
    RegularizationResult,
};
use mpsh_core::solver::{max_principle_check, solve_dirichlet, ClosureRhs};
use mpsh_core::subsets::subsets;
use mpsh_core::suites::run_pointwise_suites;
use serde::Serialize;

use crate::config::{
    is_torus, metric_field, ConeConfig, EigenConfig, FmConfig, Mode, RegularizeConfig, SolveConfig,
};
use crate::report::{num, opt, Artifact, Failure, FailureKind};

/// Gap above which the discrete maximum principle counts as violated.
const MAX_PRINCIPLE_TOLERANCE: f64 = 1e-8;
/// Allowed disagreement between the two cone routes.
const ORACLE_TOLERANCE: f64 = 1e-8;

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub summary: String,
    pub violation: Option<Failure>,
}

fn invalid(module: &'static str, operation: &'static str, message: impl Into<String>) -> Failure {
    Failure::new(FailureKind::Validation, module, operation, message)
}

pub fn eigen(cfg: &EigenConfig) -> Result<Outcome, Failure> {
    let (module, op) = ("hermitian-core", "relative_eigenvalues");
    let spectrum =
        relative_eigenvalues(&cfg.t, &cfg.omega).map_err(|e| Failure::from_core(module, op, &e))?;
    let mut csv = String::from("index,lambda\n");
    for (k, l) in spectrum.lambdas.iter().enumerate() {
        let _ = writeln!(csv, "{k},{}", num(*l));
    }
    #[derive(Serialize)]
    struct Report<'a> {
        n: usize,
        lambdas: &'a [f64],
    }
    let report = Report {
        n: spectrum.dim(),
        lambdas: &spectrum.lambdas,
    };
    Ok(Outcome {
        summary: format!("relative eigenvalues {:?}", spectrum.lambdas),
        artifacts: vec![
            Artifact::new("spectrum.csv", module, op, csv),
            Artifact::json("report.json", module, op, &report),
        ],
        violation: None,
    })
}

pub fn cone(cfg: &ConeConfig) -> Result<Outcome, Failure> {
    let module = "positivity-cones";
    let n = cfg.omega.dim();
    if cfg.m == 0 || cfg.m > n {
        return Err(invalid(
            module,
            "is_m_semipositive",
            format!("m = {} out of range 1..={n}", cfg.m),
        ));
    }
    let mut csv = String::from("m,member,margin,oracle_member,oracle_margin\n");
    let mut violation = None;
    let mut requested = None;
    for m in 1..=n {
        let fast = is_m_semipositive(&cfg.t, &cfg.omega, m)
            .map_err(|e| Failure::from_core(module, "is_m_semipositive", &e))?;
        let oracle = strong_positivity_oracle(&cfg.t, &cfg.omega, m)
            .map_err(|e| Failure::from_core(module, "strong_positivity_oracle", &e))?;
        let _ = writeln!(
            csv,
            "{m},{},{},{},{}",
            fast.member,
            num(fast.margin),
            oracle.member,
            num(oracle.margin)
        );
        if violation.is_none()
            && (fast.member != oracle.member
                || (fast.margin - oracle.margin).abs() > ORACLE_TOLERANCE)
        {
            violation = Some(Failure::new(
                FailureKind::Invariant,
                module,
                "strong_positivity_oracle",
                format!("routes disagree at m = {m}: {fast:?} vs {oracle:?}"),
            ));
        }
        if m == cfg.m {
            requested = Some((fast, oracle));
        }
    }
    let (fast, oracle) = requested.expect("m is in range");
    #[derive(Serialize)]
    struct Report {
        m: usize,
        member: bool,
        margin: f64,
        witness: Vec<usize>,
        oracle_member: bool,
        oracle_margin: f64,
    }
    let report = Report {
        m: cfg.m,
        member: fast.member,
        margin: fast.margin,
        witness: fast.witness.clone(),
        oracle_member: oracle.member,
        oracle_margin: oracle.margin,
    };
    Ok(Outcome {
        summary: format!(
            "m = {}: member = {}, margin = {}",
            cfg.m, fast.member, fast.margin
        ),
        artifacts: vec![
            Artifact::new("cone.csv", module, "is_m_semipositive", csv),
            Artifact::json("report.json", module, "is_m_semipositive", &report),
        ],
        violation,
    })
}

pub fn fm(cfg: &FmConfig) -> Result<Outcome, Failure> {
    let module = "fm-operator";
    let value = fm_value(&cfg.t, &cfg.omega, cfg.m)
        .map_err(|e| Failure::from_core(module, "fm_value", &e))?;
    let n = cfg.omega.dim();
    let mut csv = String::from("subset,msum\n");
    for (set, sum) in subsets(n, cfg.m).iter().zip(&value.msums) {
        let label: Vec<String> = set.iter().map(|j| j.to_string()).collect();
        let _ = writeln!(csv, "{},{}", label.join(" "), num(*sum));
    }
    let gradient = if cfg.gradient && value.min_msum() > 0.0 {
        let spectrum = relative_eigenvalues(&cfg.t, &cfg.omega)
            .map_err(|e| Failure::from_core(module, "fm_gradient", &e))?;
        let (_, matrix) = fm_gradient_matrix(&spectrum, cfg.m)
            .map_err(|e| Failure::from_core(module, "fm_gradient", &e))?;
        let re = (0..n)
            .map(|j| (0..n).map(|k| matrix[(j, k)].re).collect())
            .collect();
        let im = (0..n)
            .map(|j| (0..n).map(|k| matrix[(j, k)].im).collect())
            .collect();
        Some(GradientReport { re, im })
    } else {
        None
    };
    #[derive(Serialize)]
    struct GradientReport {
        re: Vec<Vec<f64>>,
        im: Vec<Vec<f64>>,
    }
    #[derive(Serialize)]
    struct Report {
        m: usize,
        value: f64,
        min_msum: f64,
        msums: Vec<f64>,
        gradient: Option<GradientReport>,
    }
    let report = Report {
        m: cfg.m,
        value: value.value,
        min_msum: value.min_msum(),
        msums: value.msums.clone(),
        gradient,
    };
    Ok(Outcome {
        summary: format!("F_{} = {}", cfg.m, value.value),
        artifacts: vec![
            Artifact::new("msums.csv", module, "fm_value", csv),
            Artifact::json("report.json", module, "fm_value", &report),
        ],
        violation: None,
    })
}

pub fn solve(cfg: &SolveConfig) -> Result<Outcome, Failure> {
    let (module, op) = ("elliptic-solver", "solve_dirichlet");
    if is_torus(&cfg.grid) {
        return Err(invalid(
            module,
            op,
            "the manufactured Dirichlet problem needs a ball grid",
        ));
    }
    if cfg.problem.amplitude.is_nan() || cfg.problem.amplitude < 0.0 {
        return Err(invalid(
            module,
            op,
            "problem.amplitude must be non-negative",
        ));
    }
    let domain = GridDomain::new(cfg.grid)
        .map_err(|e| Failure::from_core("grid-discretization", "GridDomain::new", &e))?;
    let n = domain.n();
    if cfg.m == 0 || cfg.m > n {
        return Err(invalid(
            module,
            op,
            format!("m = {} out of range 1..={n}", cfg.m),
        ));
    }
    let g = metric_field(&cfg.metric, n).map_err(|e| invalid(module, op, e))?;
    let metric = g.at(0).clone();
    let problem = cfg.problem.clone();
    let m = cfg.m;
    let exact = GridFunction::from_fn(&domain, |z| problem.exact(z));
    let rhs = ClosureRhs(move |z: &[f64], t: f64| {
        let f = fm_value(&problem.hessian(n, z), &metric, m)
            .map(|v| v.value)
            .unwrap_or(f64::NAN);
        let value = f * (t - problem.exact(z)).exp();
        (value, value)
    });
    let start = Instant::now();
    let report = solve_dirichlet(&exact, &rhs, &g, cfg.m, &cfg.solver)
        .map_err(|e| Failure::from_core(module, op, &e))?;
    let elapsed = start.elapsed().as_secs_f64();
    let max_error = report.solution.max_abs_diff(&exact).expect("same grid");
    let gap = max_principle_check(&report, &exact);
    let violation = (gap > MAX_PRINCIPLE_TOLERANCE).then(|| {
        Failure::new(
            FailureKind::Invariant,
            module,
            "max_principle_check",
            format!("interior sup exceeds boundary sup by {gap:e}"),
        )
    });
    #[derive(Serialize)]
    struct Report {
        #[serde(flatten)]
        summary: mpsh_core::solver::SolveSummary,
        max_error: f64,
        max_principle_gap: f64,
        elapsed_seconds: f64,
    }
    let summary = report.summary();
    let line = format!(
        "{} iterations, final residual {:e}, max error {max_error:e}",
        summary.iterations, summary.final_residual
    );
    let json = Report {
        summary,
        max_error,
        max_principle_gap: gap,
        elapsed_seconds: elapsed,
    };
    Ok(Outcome {
        summary: line,
        artifacts: vec![
            Artifact::new("solution.csv", module, op, report.solution.to_csv_string()),
            Artifact::new("solution.bin", module, op, report.solution.to_binary()),
            Artifact::json("report.json", module, op, &json),
        ],
        violation,
    })
}

pub fn regularize(cfg: &RegularizeConfig) -> Result<Outcome, Failure> {
    let module = "regularization-pipeline";
    let op = match cfg.mode {
        Mode::Local => "local_regularize",
        Mode::Global => "global_regularize",
    };
    if is_torus(&cfg.grid) != (cfg.mode == Mode::Global) {
        return Err(invalid(
            module,
            op,
            "local mode needs a ball grid, global mode a torus grid",
        ));
    }
    let domain = GridDomain::new(cfg.grid)
        .map_err(|e| Failure::from_core("grid-discretization", "GridDomain::new", &e))?;
    let n = domain.n();
    if cfg.m == 0 || cfg.m > n {
        return Err(invalid(
            module,
            op,
            format!("m = {} out of range 1..={n}", cfg.m),
        ));
    }
    cfg.target.validate(n).map_err(|e| invalid(module, op, e))?;
    let g = metric_field(&cfg.metric, n).map_err(|e| invalid(module, op, e))?;
    let target = cfg
        .target
        .evaluate(&domain)
        .map_err(|e| Failure::from_core(module, "target", &e))?;
    let schedule_err =
        |e: mpsh_core::Error| Failure::from_core(module, "ApproximationSchedule", &e);
    let start = Instant::now();
    let (schedule, result) = match cfg.mode {
        Mode::Local => {
            if cfg.chi.is_some() {
                return Err(invalid(module, op, "chi only applies to the global mode"));
            }
            let schedule = match &cfg.betas {
                Some(betas) => {
                    ApproximationSchedule::local_with_betas(&target, &g, cfg.m, betas.clone())
                }
                None => ApproximationSchedule::local(&target, &g, cfg.m, cfg.count),
            }
            .map_err(schedule_err)?;
            let result = local_regularize(&target, &g, cfg.m, &schedule, &cfg.pipeline);
            (schedule, result)
        }
        Mode::Global => {
            if cfg.betas.is_some() {
                return Err(invalid(module, op, "betas only apply to the local mode"));
            }
            let chi = cfg
                .chi
                .clone()
                .unwrap_or_else(|| HermitianMatrix::identity(n));
            if chi.dim() != n {
                return Err(invalid(
                    module,
                    op,
                    format!("chi has dimension {}, grid has n = {n}", chi.dim()),
                ));
            }
            let schedule = ApproximationSchedule::global(&target, &chi, &g, cfg.m, cfg.count)
                .map_err(schedule_err)?;
            let result = global_regularize(&target, &chi, &g, cfg.m, &schedule, &cfg.pipeline);
            (schedule, result)
        }
    };
    let result = result.map_err(|e| Failure::from_core(module, op, &e))?;
    let elapsed = start.elapsed().as_secs_f64();
    let convergence =
        verify_monotone_convergence(&result.u_sequence, &target, cfg.pipeline.convergence_target)
            .map_err(|e| Failure::from_core(module, "verify_monotone_convergence", &e))?;
    let holds = result.holds() && convergence.passed;
    let violation = (!holds).then(|| {
        let failed: Vec<String> = result
            .checks
            .iter()
            .flat_map(|c| c.violations.clone())
            .collect();
        Failure::new(
            FailureKind::Invariant,
            module,
            "verify_monotone_convergence",
            format!("pipeline bounds violated: {convergence:?}; {failed:?}"),
        )
    });

    let mut schedule_csv = String::from("index,beta,c_constant,sup_f\n");
    for j in 0..schedule.len() {
        let _ = writeln!(
            schedule_csv,
            "{j},{},{},{}",
            num(schedule.beta_schedule[j]),
            num(schedule.c_constants[j]),
            num(schedule.f_sequence[j].sup())
        );
    }
    #[derive(Serialize)]
    struct Report {
        mode: Mode,
        holds: bool,
        subsolution_constant: f64,
        #[serde(flatten)]
        summary: mpsh_core::regularize::RegularizationSummary,
        convergence: mpsh_core::regularize::ConvergenceReport,
        elapsed_seconds: f64,
    }
    let line = format!(
        "{} iterates at indices {:?}, sup deviations {:?}, bounds hold: {holds}",
        result.u_sequence.len(),
        result.indices,
        result.sup_deviation
    );
    let report = Report {
        mode: cfg.mode,
        holds,
        subsolution_constant: schedule.subsolution_constant,
        summary: result.summary(),
        convergence,
        elapsed_seconds: elapsed,
    };
    Ok(Outcome {
        summary: line,
        artifacts: vec![
            Artifact::new("iterates.csv", module, op, iterates_csv(&target, &result)),
            Artifact::new(
                "convergence.csv",
                module,
                "verify_monotone_convergence",
                convergence_csv(&result),
            ),
            Artifact::new(
                "schedule.csv",
                module,
                "ApproximationSchedule",
                schedule_csv,
            ),
            Artifact::json("report.json", module, op, &report),
        ],
        violation,
    })
}

fn iterates_csv(target: &GridFunction, result: &RegularizationResult) -> String {
    let domain = target.domain();
    let mut out = String::from("node");
    for j in 1..=domain.n() {
        let _ = write!(out, ",x{j},y{j}");
    }
    out.push_str(",tag,target");
    for k in 1..=result.u_sequence.len() {
        let _ = write!(out, ",u{k}");
    }
    out.push('\n');
    for node in 0..domain.num_nodes() {
        let _ = write!(out, "{node}");
        for c in domain.coords(node) {
            let _ = write!(out, ",{}", num(c));
        }
        let tag = domain.tag(node);
        let label = serde_json::to_value(tag).expect("tag serialises");
        let _ = write!(
            out,
            ",{},{}",
            label.as_str().unwrap_or_default(),
            num(target.value(node))
        );
        for u in &result.u_sequence {
            match tag {
                NodeTag::Exterior => out.push(','),
                _ => {
                    let _ = write!(out, ",{}", num(u.value(node)));
                }
            }
        }
        out.push('\n');
    }
    out
}

fn convergence_csv(result: &RegularizationResult) -> String {
    let mut out = String::from(
        "iterate,index,beta,iterations,final_residual,sup_deviation,cone_margin,upper_gap,lower_gap,scale_gap,max_principle_gap,passed\n",
    );
    for (k, check) in result.checks.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            k + 1,
            check.index,
            num(check.beta),
            check.iterations,
            num(check.final_residual),
            opt(result.sup_deviation.get(k).copied()),
            opt(result.cone_margins.get(k).copied()),
            num(check.upper_gap),
            num(check.lower_gap),
            opt(check.scale_gap),
            opt(check.max_principle_gap),
            check.passed()
        );
    }
    out
}

pub fn verify_suite(seed: u64) -> Result<Outcome, Failure> {
    let (module, op) = ("cli", "verify-suite");
    let outcomes = run_pointwise_suites(seed).map_err(|e| Failure::from_core(module, op, &e))?;
    let mut csv = String::from("suite,cases,failures,worst,passed\n");
    for o in &outcomes {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            o.name,
            o.cases,
            o.failures,
            num(o.worst),
            o.passed()
        );
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| o.name.as_str())
        .collect();
    let violation = (!failed.is_empty()).then(|| {
        Failure::new(
            FailureKind::Invariant,
            module,
            op,
            format!("suites failed: {}", failed.join(", ")),
        )
    });
    #[derive(Serialize)]
    struct Report<'a> {
        seed: u64,
        all_passed: bool,
        suites: &'a [mpsh_core::suites::SuiteOutcome],
    }
    let report = Report {
        seed,
        all_passed: failed.is_empty(),
        suites: &outcomes,
    };
    let passed = outcomes.len() - failed.len();
    Ok(Outcome {
        summary: format!("{passed}/{} suites passed (seed {seed})", outcomes.len()),
        artifacts: vec![
            Artifact::new("summary.csv", module, op, csv),
            Artifact::json("report.json", module, op, &report),
        ],
        violation,
    })
}
