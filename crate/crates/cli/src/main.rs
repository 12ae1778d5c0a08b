mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use sodegeom::conjugate::{
    confirm_with_expmap, find_conjugate_points, shooting_matrix, trace_csv, ConjugateOptions,
};
use sodegeom::flow::{default_fd_step, integrate_curve};
use sodegeom::gallery::{self, gallery_verify, GalleryEntry, VerifyOptions};
use sodegeom::geometry::{is_structural_zero, max_abs, panel, random_states, spray_check};
use sodegeom::liegroup::{
    find_relative_equilibria, releq_conjugate_times, NewtonOptions, ReducedSystem,
};
use sodegeom::linalg::to_rows;
use sodegeom::spectral::{decompose, eigenvector_condition, track_spectrum};
use sodegeom::{Error, SodeSystem, TangentState};

use output::to_json;

#[derive(Parser)]
#[command(
    name = "sodegeom",
    version,
    about = "Geometry and conjugate points of second-order ODE systems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Γ, Φ, ∇Φ, [∇Φ,Φ], spectrum and spray flags at one state
    Analyze(Common),
    /// Integrate the base curve
    Curve(Common),
    /// Conjugate points by Jacobi-field shooting
    Conjugate {
        #[command(flatten)]
        common: Common,
        /// Re-test each event with the finite-difference exponential-map Jacobian
        #[arg(long)]
        confirm: bool,
    },
    /// Eigenvalue predictor per spectral branch, compared with shooting
    Predict(Common),
    /// Track the spectrum of Φ along the curve
    Spectrum(Common),
    /// Relative equilibria of a reduced system and their conjugate times
    Releq {
        #[command(flatten)]
        common: Common,
        /// Algebra definition file
        #[arg(long, conflicts_with_all = ["system", "gallery"])]
        algebra: Option<PathBuf>,
        /// Newton seeds, `a,b,c;d,e,f`
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Built-in example systems
    Gallery {
        #[command(subcommand)]
        cmd: GalleryCmd,
    },
}

#[derive(Subcommand)]
enum GalleryCmd {
    List {
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Verify {
        /// Entry to verify; all entries when omitted
        name: Option<String>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// System definition file (JSON)
    #[arg(long, conflicts_with = "gallery")]
    system: Option<PathBuf>,
    /// Gallery entry name
    #[arg(long)]
    gallery: Option<String>,
    /// Initial state `q1,...,qn,v1,...,vn`
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    #[arg(long)]
    t_max: Option<f64>,
    /// Integration tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Threshold for reporting a matrix as zero
    #[arg(long, default_value_t = 1e-9)]
    zero_tol: f64,
    /// Relative singular-value threshold for rank decisions
    #[arg(long, default_value_t = 1e-7)]
    rank_tol: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent runs
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

enum CliError {
    Usage(String),
    Lib(Error),
    Io(String),
    /// Output was produced but some check failed.
    Failed,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(Error::Json(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed) => ExitCode::from(1),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_parse() {
                2
            } else if e.is_domain() {
                3
            } else {
                1
            })
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Analyze(c) => analyze(&c),
        Cmd::Curve(c) => curve(&c),
        Cmd::Conjugate { common, confirm } => conjugate(&common, confirm),
        Cmd::Predict(c) => predict(&c),
        Cmd::Spectrum(c) => spectrum(&c),
        Cmd::Releq {
            common,
            algebra,
            seeds,
        } => releq(&common, algebra, seeds),
        Cmd::Gallery {
            cmd: GalleryCmd::List { format, out },
        } => gallery_list(format, out),
        Cmd::Gallery {
            cmd:
                GalleryCmd::Verify {
                    name,
                    tol,
                    seed,
                    out,
                    jobs,
                },
        } => gallery_verify_cmd(name, tol, seed, out, jobs),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(c: &Common, v: &Value) -> CliResult<()> {
    emit(&c.out, &to_json(v)?)
}

fn pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::Io(e.to_string()))
}

struct Loaded {
    system: SodeSystem,
    entry: Option<GalleryEntry>,
}

fn load(c: &Common) -> CliResult<Loaded> {
    match (&c.system, &c.gallery) {
        (Some(p), None) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
            Ok(Loaded {
                system: SodeSystem::from_json(&text)?,
                entry: None,
            })
        }
        (None, Some(name)) => {
            let entry = gallery::lookup(name)?;
            Ok(Loaded {
                system: entry.system.clone(),
                entry: Some(entry),
            })
        }
        _ => Err(CliError::Usage(
            "exactly one of --system or --gallery is required".into(),
        )),
    }
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("`{x}` is not a number")))
        })
        .collect()
}

fn state(c: &Common, l: &Loaded) -> CliResult<TangentState> {
    let s = match (&c.state, &l.entry) {
        (Some(s), _) => {
            TangentState::from_flat(&parse_list(s)?).map_err(|e| CliError::Usage(e.to_string()))?
        }
        (None, Some(e)) => e.default_state().clone(),
        (None, None) => return Err(CliError::Usage("--state is required with --system".into())),
    };
    l.system
        .check_state(&s)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

fn default_t_max(name: &str) -> f64 {
    match name {
        "worked-example" => 10.0,
        "torus" => 6.0,
        "rigid-body" => 3.0,
        _ => 13.0,
    }
}

fn t_max(c: &Common, l: &Loaded) -> CliResult<f64> {
    match (c.t_max, &l.entry) {
        (Some(t), _) => Ok(t),
        (None, Some(e)) => Ok(default_t_max(&e.name)),
        (None, None) => Err(CliError::Usage("--t-max is required with --system".into())),
    }
}

fn conjugate_options(c: &Common) -> CliResult<ConjugateOptions> {
    let mut o = ConjugateOptions::with_tol(c.tol)?;
    if !(c.rank_tol > 0.0 && c.rank_tol < 1.0) {
        return Err(CliError::Usage("--rank-tol must lie in (0, 1)".into()));
    }
    o.rank_rel = c.rank_tol;
    Ok(o)
}

/// Adds `system`, `state` and, for gallery runs, `provenance`.
fn envelope(l: &Loaded, s: Option<&TangentState>, mut body: Value) -> CliResult<Value> {
    let map = body.as_object_mut().expect("reports are objects");
    map.insert(
        "system".into(),
        serde_json::to_value(l.system.to_definition())?,
    );
    if let Some(s) = s {
        map.insert("state".into(), json!({"q": s.q, "v": s.v}));
    }
    if let Some(e) = &l.entry {
        map.insert("gallery".into(), json!(e.name));
        map.insert("provenance".into(), serde_json::to_value(&e.expected)?);
    }
    Ok(body)
}

fn require_json(c: &Common, what: &str) -> CliResult<()> {
    if c.format == Format::Csv {
        return Err(CliError::Usage(format!("{what} has no CSV form")));
    }
    Ok(())
}

fn analyze(c: &Common) -> CliResult<()> {
    require_json(c, "analyze")?;
    let l = load(c)?;
    let s = state(c, &l)?;
    let p = panel(&l.system, &s)?;
    let spec = decompose(&p.phi);
    let scale = max_abs(&p.phi).max(max_abs(&p.nabla_phi));
    let spray = spray_check(&l.system, &random_states(l.system.dim(), 50, 1.0, c.seed))?;
    let spaces: Vec<Value> = spec
        .spaces
        .iter()
        .map(|e| json!({"re": e.value.re, "im": e.value.im, "multiplicity": e.multiplicity}))
        .collect();
    let body = json!({
        "gamma": to_rows(&p.gamma),
        "phi": to_rows(&p.phi),
        "nabla_phi": to_rows(&p.nabla_phi),
        "commutator": to_rows(&p.commutator),
        "flags": {
            "nabla_phi_zero": is_structural_zero(&p.nabla_phi, max_abs(&p.phi), c.zero_tol),
            "commutator_zero": is_structural_zero(&p.commutator, scale * scale, c.zero_tol),
            "phi_zero": is_structural_zero(&p.phi, 1.0, c.zero_tol),
        },
        "spectrum": spaces,
        "eigenvector_condition": finite_or_null(eigenvector_condition(&spec)),
        "warnings": spec.warnings,
        "spray": spray,
        "seed": c.seed,
    });
    emit_json(c, &envelope(&l, Some(&s), body)?)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn curve(c: &Common) -> CliResult<()> {
    let l = load(c)?;
    let s = state(c, &l)?;
    let traj = integrate_curve(&l.system, &s, t_max(c, &l)?, c.tol)?;
    if c.format == Format::Csv {
        return emit(&c.out, &traj.to_csv());
    }
    let n = l.system.dim();
    let body = json!({
        "t": traj.times(),
        "q": (0..traj.len()).map(|k| traj.node(k)[..n].to_vec()).collect::<Vec<_>>(),
        "v": (0..traj.len()).map(|k| traj.node(k)[n..].to_vec()).collect::<Vec<_>>(),
    });
    emit_json(c, &envelope(&l, Some(&s), body)?)
}

fn conjugate(c: &Common, confirm: bool) -> CliResult<()> {
    let l = load(c)?;
    let s = state(c, &l)?;
    let t = t_max(c, &l)?;
    let o = conjugate_options(c)?;
    if c.format == Format::Csv {
        return emit(&c.out, &trace_csv(&shooting_matrix(&l.system, &s, t, &o)?));
    }
    let report = find_conjugate_points(&l.system, &s, t, &o)?;
    let mut body = serde_json::to_value(&report)?;
    if confirm {
        let ev = confirm_with_expmap(&l.system, &s, &report.events, default_fd_step(&s.v))?;
        body["expmap"] = serde_json::to_value(ev)?;
    }
    emit_json(c, &envelope(&l, Some(&s), body)?)
}

fn predict(c: &Common) -> CliResult<()> {
    require_json(c, "predict")?;
    let l = load(c)?;
    let s = state(c, &l)?;
    let t = t_max(c, &l)?;
    let o = conjugate_options(c)?;
    let traj = integrate_curve(&l.system, &s, t, c.tol)?;
    let trace = track_spectrum(&traj)?;
    let branches: Vec<usize> = (0..trace.branches.len()).collect();
    let results = pool(c.jobs)?.install(|| {
        branches
            .par_iter()
            .map(|&b| sodegeom::conjugate::verify_predictor(&l.system, &s, &trace, b, t, &o))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let body = json!({
        "t_max": t,
        "branches": results.iter().enumerate().map(|(b, r)| json!({"branch": b, "comparison": r})).collect::<Vec<_>>(),
        "warnings": trace.warnings,
    });
    emit_json(c, &envelope(&l, Some(&s), body)?)
}

fn spectrum(c: &Common) -> CliResult<()> {
    let l = load(c)?;
    let s = state(c, &l)?;
    let traj = integrate_curve(&l.system, &s, t_max(c, &l)?, c.tol)?;
    let trace = track_spectrum(&traj)?;
    if c.format == Format::Csv {
        return emit(&c.out, &trace.to_csv());
    }
    let branches: Vec<Value> = (0..trace.branches.len())
        .map(|b| {
            let v = trace.branch(b);
            json!({
                "re": v.iter().map(|z| z.re).collect::<Vec<_>>(),
                "im": v.iter().map(|z| z.im).collect::<Vec<_>>(),
                "info": trace.branches[b],
            })
        })
        .collect();
    let body = json!({
        "t": trace.t,
        "branches": branches,
        "crossings": trace.crossings,
        "warnings": trace.warnings,
    });
    emit_json(c, &envelope(&l, Some(&s), body)?)
}

fn parse_seeds(s: &str, n: usize) -> CliResult<Vec<Vec<f64>>> {
    let seeds = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(parse_list)
        .collect::<CliResult<Vec<_>>>()?;
    if seeds.is_empty() || seeds.iter().any(|v| v.len() != n) {
        return Err(CliError::Usage(format!(
            "--seeds needs one or more groups of {n} numbers"
        )));
    }
    Ok(seeds)
}

fn releq(c: &Common, algebra: Option<PathBuf>, seeds: Option<String>) -> CliResult<()> {
    require_json(c, "releq")?;
    let (red, entry) = match (&algebra, &c.gallery) {
        (Some(p), None) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
            (ReducedSystem::from_json(&text)?, None)
        }
        (None, Some(name)) => {
            let e = gallery::lookup(name)?;
            let red = e.reduced.clone().ok_or_else(|| {
                CliError::Usage(format!("gallery entry `{name}` has no reduced system"))
            })?;
            (red, Some(e))
        }
        _ => {
            return Err(CliError::Usage(
                "releq needs --algebra FILE or --gallery NAME".into(),
            ))
        }
    };
    let n = red.dim();
    let seeds = match seeds {
        Some(s) => parse_seeds(&s, n)?,
        None => random_states(n, 8, 2.0, c.seed)
            .into_iter()
            .map(|s| s.v)
            .collect(),
    };
    let t = c.t_max.unwrap_or(10.0);
    let search = find_relative_equilibria(&red, &seeds, &NewtonOptions::default())?;
    let reports = pool(c.jobs)?.install(|| {
        search
            .equilibria
            .par_iter()
            .map(|e| releq_conjugate_times(&red, &e.w0, t))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut body = json!({
        "algebra": {
            "dimension": n,
            "structure_constants": red.algebra().entries().iter().map(|&(i, j, k, v)| json!([i, j, k, v])).collect::<Vec<_>>(),
            "gamma": red.gamma().iter().map(|g| g.to_string()).collect::<Vec<_>>(),
            "parameters": red.parameters(),
        },
        "seeds": seeds,
        "equilibria": search.equilibria,
        "failures": search.failures,
        "conjugate": reports,
        "t_max": t,
    });
    if let Some(e) = entry {
        body["gallery"] = json!(e.name);
        body["provenance"] = serde_json::to_value(&e.expected)?;
    }
    emit_json(c, &body)
}

fn gallery_list(format: Format, out: Option<PathBuf>) -> CliResult<()> {
    let entries = gallery::gallery_list()
        .into_iter()
        .map(gallery::lookup)
        .collect::<Result<Vec<_>, _>>()?;
    if format == Format::Csv {
        let mut s = String::from("name,description\n");
        for e in &entries {
            s.push_str(&format!(
                "{},\"{}\"\n",
                e.name,
                e.description.replace('"', "\"\"")
            ));
        }
        return emit(&out, &s);
    }
    let v: Vec<Value> = entries
        .iter()
        .map(|e| {
            json!({
                "name": e.name,
                "description": e.description,
                "system": e.system.to_definition(),
                "states": e.states.iter().map(|(label, s)| json!({"label": label, "q": s.q, "v": s.v})).collect::<Vec<_>>(),
                "expected": e.expected,
            })
        })
        .collect();
    emit(&out, &to_json(&v)?)
}

fn gallery_verify_cmd(
    name: Option<String>,
    tol: f64,
    seed: u64,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> CliResult<()> {
    let names: Vec<String> = match name {
        Some(n) => {
            gallery::lookup(&n)?;
            vec![n]
        }
        None => gallery::gallery_list()
            .into_iter()
            .map(String::from)
            .collect(),
    };
    let opts = VerifyOptions { tol, seed };
    let reports = pool(jobs)?.install(|| {
        names
            .par_iter()
            .map(|n| gallery_verify(n, &opts))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let passed = reports.iter().all(|r| r.passed);
    emit(
        &out,
        &to_json(&json!({"passed": passed, "reports": reports, "tol": tol, "seed": seed}))?,
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}
