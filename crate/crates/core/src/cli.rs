//! Command-line front end. Every subcommand resolves a config, validates it
//! before touching the file system, runs, and writes `config.json`,
//! `results.csv` and `summary.txt` into a fresh timestamped directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{
    self, ChaosConfig, EstimatorConfig, LqConfig, MflqConfig, OccupationConfig, SimulateConfig,
};
use crate::control::{evaluate_cost, CostSpec, Penalty};
use crate::error::{Error, Result};
use crate::experiments::{self, ChaosRow, CorridorConfig, OccupationRow};
use crate::girsanov::{estimator_equivalence_check, picard_solve, MeanFieldCurve};
use crate::io::{content_hash, fmt_f64, write_file};
use crate::sticky_sde::{simulate_path, NoiseStream};

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "STICKY_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "sticky",
    version,
    about = "Sticky reflected diffusions and mean-field crowd control"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output root (default: $STICKY_OUTPUT_ROOT, then ./runs)
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Print the resolved config and exit
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one ensemble and record raw trajectories
    Simulate,
    /// Boundary occupation fraction against the invariant boundary mass
    ValidateOccupation {
        /// Restrict to one shape: interval or disk
        #[arg(long)]
        shape: Option<String>,
        /// Restrict to one stickiness value
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Tracking control toward a fixed target
    Lq,
    /// Mean-field LQ fixed point
    Mflq,
    /// Corridor speed profiles, one per boundary cost coefficient
    Corridor {
        /// Congestion penalty: h1 or h2
        #[arg(long, value_parser = parse_penalty)]
        penalty: Option<Penalty>,
    },
    /// Propagation-of-chaos study
    Chaos,
    /// Weighted-reference against direct estimators
    CheckEstimators,
}

fn parse_penalty(s: &str) -> std::result::Result<Penalty, String> {
    match s.to_ascii_lowercase().as_str() {
        "h1" => Ok(Penalty::H1),
        "h2" => Ok(Penalty::H2),
        _ => Err(format!("unknown penalty {s:?} (expected h1 or h2)")),
    }
}

/// Files produced by a run, written only after the computation succeeds.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<(String, String)>,
    pub summary: String,
}

/// A resolved, validated config ready to run.
pub struct Plan {
    pub name: &'static str,
    pub seed: u64,
    pub resolved: serde_json::Value,
    run: Box<dyn FnOnce() -> Result<RunOutput> + Send>,
}

fn load_or<T: serde::de::DeserializeOwned>(
    path: Option<&Path>,
    fallback: impl FnOnce() -> Result<T>,
) -> Result<T> {
    match path {
        Some(p) => config::load(p),
        None => fallback(),
    }
}

fn require_config<T: serde::de::DeserializeOwned>(path: Option<&Path>, name: &str) -> Result<T> {
    load_or(path, || {
        Err(Error::Config(format!("{name} needs --config <file>")))
    })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serialises")
}

/// Resolves and validates the config of `command` without side effects.
pub fn plan(common: &Common, command: &Command) -> Result<Plan> {
    let path = common.config.as_deref();
    match command {
        Command::Simulate => {
            let mut c: SimulateConfig = require_config(path, "simulate")?;
            c.seed = common.seed.unwrap_or(c.seed);
            c.control = c.control.resolved();
            c.validate()?;
            Ok(Plan {
                name: "simulate",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_simulate(&c)),
            })
        }
        Command::ValidateOccupation { shape, gamma } => {
            let mut c: OccupationConfig = load_or(path, || Ok(OccupationConfig::default()))?;
            c.seed = common.seed.unwrap_or(c.seed);
            if let Some(s) = shape {
                c.shapes = vec![config::unit_shape(s)?];
            }
            if let Some(g) = gamma {
                c.gammas = vec![*g];
            }
            c.validate()?;
            Ok(Plan {
                name: "validate-occupation",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_occupation(&c)),
            })
        }
        Command::Lq => {
            let mut c: LqConfig = require_config(path, "lq")?;
            c.seed = common.seed.unwrap_or(c.seed);
            c.validate()?;
            Ok(Plan {
                name: "lq",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_lq(&c)),
            })
        }
        Command::Mflq => {
            let mut c: MflqConfig = require_config(path, "mflq")?;
            c.seed = common.seed.unwrap_or(c.seed);
            c.validate()?;
            Ok(Plan {
                name: "mflq",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_mflq(&c)),
            })
        }
        Command::Corridor { penalty } => {
            let mut c: CorridorConfig = load_or(path, || Ok(CorridorConfig::default()))?;
            c.seed = common.seed.unwrap_or(c.seed);
            if let Some(p) = penalty {
                c.penalty = *p;
            }
            c.validate()?;
            Ok(Plan {
                name: "corridor",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_corridor(&c)),
            })
        }
        Command::Chaos => {
            let mut c: ChaosConfig = require_config(path, "chaos")?;
            c.seed = common.seed.unwrap_or(c.seed);
            c.control = c.control.resolved();
            c.validate()?;
            Ok(Plan {
                name: "chaos",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_chaos(&c)),
            })
        }
        Command::CheckEstimators => {
            let mut c: EstimatorConfig = require_config(path, "check-estimators")?;
            c.seed = common.seed.unwrap_or(c.seed);
            c.control = c.control.resolved();
            c.validate()?;
            Ok(Plan {
                name: "check-estimators",
                seed: c.seed,
                resolved: to_json(&c),
                run: Box::new(move || run_check_estimators(&c)),
            })
        }
    }
}

/// `config.json`: resolved config, seed and content hash of the config.
pub fn config_document(plan: &Plan) -> String {
    let body = serde_json::to_string(&plan.resolved).expect("config serialises");
    let doc = serde_json::json!({
        "command": plan.name,
        "seed": plan.seed,
        "config": plan.resolved,
        "config_hash": content_hash(body.as_bytes()),
    });
    serde_json::to_string_pretty(&doc).expect("config serialises") + "\n"
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Mean-field curve for measure-dependent laws, `None` otherwise.
fn solve_mean_field(
    domain: &crate::geometry::Domain,
    initial: &crate::sticky_sde::InitialLaw,
    law: &crate::control::ControlLaw,
    picard: &config::PicardConfig,
    scheme: &crate::sticky_sde::SchemeParams,
    seed: u64,
) -> Result<Option<MeanFieldCurve>> {
    if !law.is_measure_dependent() {
        return Ok(None);
    }
    let fp = picard.to_fixed_point()?;
    Ok(Some(
        picard_solve(domain, initial, law, &fp, scheme, seed)?.curve,
    ))
}

fn run_simulate(c: &SimulateConfig) -> Result<RunOutput> {
    let law = c.control.to_law()?;
    let curve = solve_mean_field(&c.domain, &c.initial, &law, &c.picard, &c.scheme, c.seed)?;
    let parts = crate::ensemble::map_chunks(c.n_particles, |range| {
        range
            .map(|i| {
                let mut s = NoiseStream::for_particle(c.seed, i, &c.domain, &c.scheme);
                simulate_path(
                    &c.domain,
                    &c.initial,
                    &law,
                    curve.as_ref(),
                    &c.scheme,
                    &mut s,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let paths: Vec<_> = parts.into_iter().flatten().collect();
    let mut jsonl = String::new();
    let mut finals = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let keep: Vec<usize> = (0..p.len())
            .filter(|k| k % c.record_every == 0 || *k == p.len() - 1)
            .collect();
        let thinned = crate::sticky_sde::Trajectory {
            t: keep.iter().map(|&k| p.t[k]).collect(),
            x: keep.iter().map(|&k| p.x[k]).collect(),
            y: keep.iter().map(|&k| p.y[k]).collect(),
            phase: keep.iter().map(|&k| p.phase[k]).collect(),
            log_l: keep.iter().map(|&k| p.log_l[k]).collect(),
        };
        jsonl.push_str(&thinned.to_json_line(i));
        jsonl.push('\n');
        let k = p.len() - 1;
        finals.push(format!(
            "{},{},{},{},{}",
            i,
            fmt_f64(p.x[k]),
            fmt_f64(p.y[k]),
            if p.phase[k].is_attached() {
                "attached"
            } else {
                "interior"
            },
            fmt_f64(p.log_l[k])
        ));
    }
    let occupation = crate::sticky_sde::occupation_fraction(&paths)?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "simulate: {} paths on {}, control {}",
        paths.len(),
        c.domain.name(),
        law.name()
    );
    let _ = writeln!(
        summary,
        "attached fraction over the second half: {occupation:.4}"
    );
    let _ = writeln!(
        summary,
        "boundary mass of the invariant law: {:.4}",
        c.domain.boundary_mass(c.scheme.gamma)
    );
    Ok(RunOutput {
        files: vec![
            ("results.csv".into(), csv("particle,x,y,phase,logL", finals)),
            ("trajectories.jsonl".into(), jsonl),
        ],
        summary,
    })
}

fn run_occupation(c: &OccupationConfig) -> Result<RunOutput> {
    let mut rows = Vec::new();
    for shape in &c.shapes {
        for &g in &c.gammas {
            rows.push(experiments::occupation_study(
                shape,
                &c.scheme(g),
                c.n_particles,
                c.seed,
            )?);
        }
    }
    let mut summary =
        String::from("occupation fraction of the boundary, second half of each path\n");
    for r in &rows {
        let _ = writeln!(
            summary,
            "{:>9} gamma={:<6} predicted={:.4} observed={:.4} +/- {:.4} |diff|={:.4}",
            r.shape,
            r.gamma,
            r.predicted,
            r.observed,
            r.ci,
            (r.observed - r.predicted).abs()
        );
    }
    Ok(RunOutput {
        files: vec![(
            "results.csv".into(),
            csv(
                OccupationRow::csv_header(),
                rows.iter().map(OccupationRow::csv_row),
            ),
        )],
        summary,
    })
}

fn run_lq(c: &LqConfig) -> Result<RunOutput> {
    let r = experiments::run_lq(
        &c.domain,
        &c.initial,
        c.target,
        &c.scheme,
        c.n_particles,
        c.seed,
        c.u_max,
    )?;
    let rows = vec![
        format!(
            "initial_mean_distance,{},",
            fmt_f64(r.initial_mean_distance)
        ),
        format!(
            "terminal_mean_distance,{},",
            fmt_f64(r.terminal_mean_distance)
        ),
        format!("J_lq,{},{}", fmt_f64(r.cost.mean), fmt_f64(r.cost.se)),
        format!(
            "J_uncontrolled,{},{}",
            fmt_f64(r.cost_uncontrolled.mean),
            fmt_f64(r.cost_uncontrolled.se)
        ),
    ];
    let json = serde_json::json!({
        "J": r.cost.mean,
        "J_se": r.cost.se,
        "J_uncontrolled": r.cost_uncontrolled.mean,
        "J_uncontrolled_se": r.cost_uncontrolled.se,
        "seed": c.seed,
        "config_hash": content_hash(serde_json::to_string(&to_json(c)).unwrap().as_bytes()),
    });
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "mean distance to target: {:.4} at t=0, {:.4} at t=T",
        r.initial_mean_distance, r.terminal_mean_distance
    );
    let _ = writeln!(summary, "J(lq) = {:.5} +/- {:.5}", r.cost.mean, r.cost.se);
    let _ = writeln!(
        summary,
        "J(none) = {:.5} +/- {:.5}",
        r.cost_uncontrolled.mean, r.cost_uncontrolled.se
    );
    Ok(RunOutput {
        files: vec![
            ("results.csv".into(), csv("quantity,value,se", rows)),
            (
                "results.json".into(),
                serde_json::to_string_pretty(&json).unwrap() + "\n",
            ),
        ],
        summary,
    })
}

fn run_mflq(c: &MflqConfig) -> Result<RunOutput> {
    let fp = c.picard.to_fixed_point()?;
    let r = experiments::run_mean_field_lq(&c.domain, &c.initial, &fp, &c.scheme, c.seed, c.u_max)?;
    let json = serde_json::json!({
        "J": r.cost.mean,
        "J_se": r.cost.se,
        "iterations": r.picard.iterations(),
        "distances": r.picard.distances,
        "seed": c.seed,
        "config_hash": content_hash(serde_json::to_string(&to_json(c)).unwrap().as_bytes()),
    });
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "fixed point after {} iterations ({} mode)",
        r.picard.iterations(),
        fp.mode.name()
    );
    for (k, d) in r.picard.distances.iter().enumerate() {
        let _ = writeln!(summary, "  |m_{} - m_{}| = {d:.3e}", k + 1, k);
    }
    let _ = writeln!(summary, "J = {:.5} +/- {:.5}", r.cost.mean, r.cost.se);
    Ok(RunOutput {
        files: vec![
            ("results.csv".into(), r.picard.to_csv(fp.mode)),
            (
                "results.json".into(),
                serde_json::to_string_pretty(&json).unwrap() + "\n",
            ),
        ],
        summary,
    })
}

fn run_corridor(c: &CorridorConfig) -> Result<RunOutput> {
    let profiles = experiments::run_corridor(c)?;
    let mut files = Vec::new();
    let mut all = String::new();
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "corridor speed profiles, penalty {}, seed {}",
        c.penalty.name(),
        c.seed
    );
    for (i, p) in profiles.iter().enumerate() {
        let table = p.to_csv();
        if i == 0 {
            all.push_str(&table);
        } else {
            all.push_str(table.split_once('\n').map(|x| x.1).unwrap_or(""));
        }
        files.push((
            format!("speed_profile_{}_c{}.csv", p.penalty.name(), p.c_boundary),
            table,
        ));
        let (lo, hi) = p.walls();
        let _ = writeln!(
            summary,
            "c_boundary={:<5} picard iterations={} center={:.3} walls=({:.3}, {:.3}) center/wall={:.3}",
            p.c_boundary,
            p.picard_iterations,
            p.center(),
            lo,
            hi,
            p.center() / lo.max(hi)
        );
        let _ = writeln!(
            summary,
            "  speeds: {}",
            p.speeds
                .iter()
                .map(|s| format!("{s:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    files.insert(0, ("results.csv".into(), all));
    Ok(RunOutput { files, summary })
}

fn run_chaos(c: &ChaosConfig) -> Result<RunOutput> {
    let law = c.control.to_law()?;
    let study = experiments::run_chaos_study(
        &c.domain,
        &c.initial,
        &law,
        &c.ns,
        c.n_reference,
        c.replications,
        &c.scheme,
        c.seed,
    )?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "energy distance at T to a {}-particle mean-field reference ({} Picard iterations)",
        c.n_reference,
        study.reference.iterations()
    );
    for r in &study.rows {
        let _ = writeln!(
            summary,
            "N={:<6} median={:.5} se={:.5}",
            r.n, r.median, r.se
        );
    }
    Ok(RunOutput {
        files: vec![(
            "results.csv".into(),
            csv(
                ChaosRow::csv_header(),
                study.rows.iter().map(ChaosRow::csv_row),
            ),
        )],
        summary,
    })
}

fn run_check_estimators(c: &EstimatorConfig) -> Result<RunOutput> {
    let law = c.control.to_law()?;
    let curve = solve_mean_field(&c.domain, &c.initial, &law, &c.picard, &c.scheme, c.seed)?;
    let mut rows = Vec::new();
    let mut summary =
        String::from("E[g(X_T)] by reweighted reference paths and by direct simulation\n");
    for (name, idx) in [("x", 0usize), ("y", 1)] {
        let r = estimator_equivalence_check(
            &c.domain,
            &c.initial,
            &law,
            curve.as_ref(),
            |x| x[idx],
            c.n_particles,
            &c.scheme,
            c.seed,
        )?;
        rows.push(format!(
            "{name},{},{},{},{},{},{}",
            fmt_f64(r.weighted),
            fmt_f64(r.weighted_se),
            fmt_f64(r.direct),
            fmt_f64(r.direct_se),
            fmt_f64(r.gap()),
            fmt_f64(r.combined_se())
        ));
        let _ = writeln!(
            summary,
            "g={name}: weighted={:.5} +/- {:.5} direct={:.5} +/- {:.5} gap/se={:.2}",
            r.weighted,
            r.weighted_se,
            r.direct,
            r.direct_se,
            r.gap() / r.combined_se()
        );
    }
    let cost = CostSpec::for_control(&law);
    if let Ok(j) = evaluate_cost(
        &c.domain,
        &c.initial,
        &law,
        &cost,
        curve.as_ref(),
        c.n_particles,
        &c.scheme,
        c.seed,
    ) {
        let _ = writeln!(summary, "J = {:.5} +/- {:.5}", j.mean, j.se);
    }
    Ok(RunOutput {
        files: vec![(
            "results.csv".into(),
            csv(
                "g,weighted,weighted_se,direct,direct_se,gap,combined_se",
                rows,
            ),
        )],
        summary,
    })
}

/// Output root: flag, then environment, then `./runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<root>/<name>-<UTC timestamp>`, suffixed if it already exists.
fn fresh_run_dir(root: &Path, name: &str) -> std::io::Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    std::fs::create_dir_all(root)?;
    let mut dir = root.join(format!("{name}-{stamp}"));
    let mut k = 1;
    loop {
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = root.join(format!("{name}-{stamp}-{k}"));
                k += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs a plan and writes its outputs; returns the run directory.
pub fn execute(plan: Plan, root: &Path) -> Result<PathBuf> {
    let config_json = config_document(&plan);
    let name = plan.name;
    let out = (plan.run)()?;
    let io_err = |e: std::io::Error| Error::Config(format!("cannot write output: {e}"));
    let dir = fresh_run_dir(root, name).map_err(io_err)?;
    write_file(&dir.join("config.json"), &config_json).map_err(io_err)?;
    for (file, content) in &out.files {
        write_file(&dir.join(file), content).map_err(io_err)?;
    }
    write_file(&dir.join("summary.txt"), &out.summary).map_err(io_err)?;
    print!("{}", out.summary);
    println!("outputs written to {}", dir.display());
    Ok(dir)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidDomain(_)
        | Error::InvalidParams(_)
        | Error::InvalidControl(_)
        | Error::MissingMeanField
        | Error::UnsupportedControl(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn report(common: &Common, err: &Error) {
    match &common.config {
        Some(p) if exit_code(err) == 2 => eprintln!("error: {} : {err}", p.display()),
        _ => eprintln!("error: {err}"),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let plan = match plan(&cli.common, &cli.command) {
        Ok(p) => p,
        Err(e) => {
            report(&cli.common, &e);
            return exit_code(&e);
        }
    };
    if cli.common.dry_run {
        print!("{}", config_document(&plan));
        return 0;
    }
    let root = output_root(cli.common.out_dir.as_deref());
    let run = || execute(plan, &root);
    let result = match cli.common.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(Error::Config(format!("--threads: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            report(&cli.common, &e);
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::NoConvergence {
                iterations: 1,
                distances: vec![]
            }),
            3
        );
        assert_eq!(
            exit_code(&Error::DegenerateProjection { point: [0.0, 0.0] }),
            3
        );
    }

    #[test]
    fn penalty_flag() {
        assert_eq!(parse_penalty("H2").unwrap(), Penalty::H2);
        assert!(parse_penalty("h3").is_err());
    }

    #[test]
    fn occupation_flags_override() {
        let cli = Cli::try_parse_from([
            "sticky",
            "validate-occupation",
            "--shape",
            "interval",
            "--gamma",
            "0.5",
        ])
        .unwrap();
        let p = plan(&cli.common, &cli.command).unwrap();
        assert_eq!(p.resolved["gammas"], serde_json::json!([0.5]));
        assert_eq!(p.resolved["shapes"][0]["shape"], "interval");
    }

    #[test]
    fn corridor_dry_run_document() {
        let cli =
            Cli::try_parse_from(["sticky", "corridor", "--penalty", "h2", "--seed", "9"]).unwrap();
        let p = plan(&cli.common, &cli.command).unwrap();
        let doc = config_document(&p);
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["seed"], 9);
        assert_eq!(v["config"]["penalty"], "h2");
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    }
}
