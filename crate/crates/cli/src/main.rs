use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sdrmap::admm::{SolverConfig, SolverKind};
use sdrmap::error::Error;
use sdrmap::mrf::{brute_force_map_with_cap, PairwiseMrf, DEFAULT_ORACLE_CAP};
use sdrmap::probgen::{
    gen_labeling, gen_random_mrf, gen_rotation_sync, GraphFamily, LabelingSpec, PlantedInstance,
    PlantedMeta, RotationSpec,
};
use sdrmap::refine::RoundingConfig;
use sdrmap::report::{run, RunOptions, RunReport};
use sdrmap::sdr::build_sdr;
use sdrmap::theory::{
    check_marginalization, check_sdr2_feasibility, labeling_condition, rotation_condition, to_sdr2,
    DEFAULT_DELTA, DEFAULT_SAMPLING_C,
};
use sdrmap::uai::{parse_uai, UaiModel};

const EXIT_NOT_CONVERGED: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "sdrmap",
    version,
    about = "MAP inference for pairwise MRFs through a semidefinite relaxation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the relaxation of one or more UAI models and round the result.
    Solve(SolveArgs),
    /// Write a generated model in UAI format.
    Generate(GenerateArgs),
    /// Solve a model and check a structural property of the solution.
    Verify(VerifyArgs),
    /// Enumerate the exact MAP assignment.
    Brute(BruteArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverName {
    Sdpad,
    SdpadLr,
}

impl From<SolverName> for SolverKind {
    fn from(s: SolverName) -> Self {
        match s {
            SolverName::Sdpad => SolverKind::Sdpad,
            SolverName::SdpadLr => SolverKind::SdpadLr,
        }
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "sdpad-lr")]
    solver: SolverName,
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Initial rank of the low-rank solver.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    r_max: Option<usize>,
    /// Rank sufficiency ratio of the low-rank solver.
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
    /// Rounding threshold in (0.5, 1).
    #[arg(long, allow_negative_numbers = true)]
    t_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverArgs {
    fn options(&self) -> Result<RunOptions, Error> {
        let kind = SolverKind::from(self.solver);
        let mut c: SolverConfig = kind.default_config();
        c.log_every = 0;
        set(&mut c.eps, self.eps);
        set(&mut c.mu_min, self.mu_min);
        set(&mut c.mu_max, self.mu_max);
        set(&mut c.rho, self.rho);
        set(&mut c.k_max, self.k_max);
        set(&mut c.r_init, self.r);
        set(&mut c.r_max, self.r_max);
        set(&mut c.delta, self.delta);
        set(&mut c.seed, self.seed);
        if c.mu_max < c.mu_min && self.mu_max.is_none() {
            c.mu_max = c.mu_min;
        }
        c.validate()?;
        let mut rounding = RoundingConfig::default();
        set(&mut rounding.t_max, self.t_max);
        rounding.validate()?;
        Ok(RunOptions {
            kind,
            config: c,
            rounding,
            brute_force_cap: None,
        })
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Args)]
struct SolveArgs {
    /// UAI model files; more than one runs in batch mode.
    #[arg(required = true)]
    models: Vec<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Report file, or a directory of `<model>.json` reports in batch mode.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also enumerate the optimum when the state space is at most this large.
    #[arg(long)]
    brute_cap: Option<u64>,
    /// Instances solved in parallel in batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Evidence file (not supported).
    #[arg(long)]
    evidence: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(subcommand)]
    kind: GenerateKind,
    /// Output model file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output file for the generator spec and planted answer.
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphName {
    Complete,
    Grid,
    ErdosRenyi,
}

#[derive(Subcommand)]
enum GenerateKind {
    /// Planted labeling model with ground truth all zeros.
    Labeling {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value = "complete")]
        graph: GraphName,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        /// Edge probability of the Erdős–Rényi graph.
        #[arg(long, default_value_t = 0.5)]
        edge_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        unary_error: f64,
        #[arg(long, default_value_t = 0.0)]
        pairwise_error: f64,
    },
    /// Rotation synchronization with cyclic-shift potentials.
    Rotation {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p_obs: f64,
        #[arg(long)]
        p_false: f64,
    },
    /// Gaussian potentials on an Erdős–Rényi graph.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Check {
    Marginalization,
    Sdr2,
    Recovery,
}

#[derive(Args)]
struct VerifyArgs {
    model: PathBuf,
    #[arg(long, value_enum)]
    check: Check,
    #[command(flatten)]
    solver: SolverArgs,
    /// Residual tolerance of the marginalization and sdr2 checks.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Meta file written by `generate`; required by the recovery check.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// `δ` of the rotation bound.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    bound_delta: f64,
    /// Constant of the rotation sampling condition.
    #[arg(long, default_value_t = DEFAULT_SAMPLING_C)]
    sampling_c: f64,
}

#[derive(Args)]
struct BruteArgs {
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    cap: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "generator")]
enum GeneratorSpec {
    Labeling(LabelingSpec),
    Rotation(RotationSpec),
    Random {
        n: usize,
        m: usize,
        density: f64,
        scale: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceMeta {
    spec: GeneratorSpec,
    planted: Option<PlantedMeta>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EigenNotConverged { .. } | Error::EigenFailed(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Solve(a) => solve(a),
        Command::Generate(a) => generate(a),
        Command::Verify(a) => verify(a),
        Command::Brute(a) => brute(a),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SDRMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        input_error(format!(
            "SDRMAP_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input_error(e.to_string()))
}

fn read_model(path: &Path) -> Result<PairwiseMrf, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let u = parse_uai(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(u.to_mrf()?)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn instance_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn summary(r: &RunReport) -> String {
    let s = &r.solve;
    let mut out = format!(
        "instance    {}\nsolver      {}\nconverged   {}\niterations  {}\nobjective   {:.6}\nbound       {:.6}\ngap         {:.3e}\ninf         {:.3e}\nrank        {}\nassignment  {}\nenergy      {:.6}\n",
        r.instance,
        r.solver.name(),
        s.converged,
        s.iterations,
        s.objective,
        s.dual_objective,
        s.gap,
        s.inf,
        s.final_rank,
        join(r.rounding.assignment.as_slice()),
        r.rounding.energy,
    );
    if let Some(e) = r.brute_force_energy {
        out.push_str(&format!("optimum     {e:.6}\n"));
    }
    out
}

fn solve(a: SolveArgs) -> Result<u8, Failure> {
    if a.evidence.is_some() {
        return Err(input_error("evidence files are not supported"));
    }
    if a.jobs == 0 {
        return Err(input_error("--jobs must be positive"));
    }
    let mut opts = a.solver.options()?;
    opts.brute_force_cap = a.brute_cap;
    let batch = a.models.len() > 1;
    let models = a
        .models
        .iter()
        .map(|p| read_model(p).map(|m| (instance_id(p), m)))
        .collect::<Result<Vec<_>, _>>()?;
    if let (true, Some(dir)) = (batch, &a.report) {
        fs::create_dir_all(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| input_error(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        models
            .par_iter()
            .map(|(id, mrf)| run(mrf, id, &opts).map(|(r, _)| r))
            .collect()
    });
    let mut code = 0;
    for (k, result) in results.into_iter().enumerate() {
        let report = result?;
        print!("{}", summary(&report));
        if batch && k + 1 < models.len() {
            println!();
        }
        if let Some(path) = &a.report {
            let target = if batch {
                path.join(format!("{}.json", report.instance))
            } else {
                path.clone()
            };
            write_file(&target, &report.to_text())?;
        }
        if !report.solve.converged {
            eprintln!(
                "warning: {} did not converge in {} iterations",
                report.instance, report.solve.iterations
            );
            code = EXIT_NOT_CONVERGED;
        }
    }
    Ok(code)
}

fn generate(a: GenerateArgs) -> Result<u8, Failure> {
    let Some(out) = a.out else {
        return Err(input_error("--out is required"));
    };
    let (spec, mrf, planted) = match a.kind {
        GenerateKind::Labeling {
            n,
            m,
            graph,
            rows,
            cols,
            edge_prob,
            unary_error,
            pairwise_error,
        } => {
            let graph = match graph {
                GraphName::Complete => GraphFamily::Complete,
                GraphName::ErdosRenyi => GraphFamily::ErdosRenyi { p: edge_prob },
                GraphName::Grid => match (rows, cols) {
                    (Some(rows), Some(cols)) => GraphFamily::Grid { rows, cols },
                    _ => return Err(input_error("--graph grid needs --rows and --cols")),
                },
            };
            let spec = LabelingSpec {
                n,
                m,
                graph,
                unary_error_rate: unary_error,
                pairwise_error_rate: pairwise_error,
                seed: a.seed,
            };
            let inst = gen_labeling(&spec)?;
            (
                GeneratorSpec::Labeling(spec),
                inst.mrf.clone(),
                Some(inst.meta()),
            )
        }
        GenerateKind::Rotation {
            n,
            m,
            p_obs,
            p_false,
        } => {
            let spec = RotationSpec {
                n,
                m,
                p_obs,
                p_false,
                seed: a.seed,
            };
            let inst = gen_rotation_sync(&spec)?;
            (
                GeneratorSpec::Rotation(spec),
                inst.mrf.clone(),
                Some(inst.meta()),
            )
        }
        GenerateKind::Random {
            n,
            m,
            density,
            scale,
        } => {
            let mrf = gen_random_mrf(n, m, density, scale, a.seed)?;
            let spec = GeneratorSpec::Random {
                n,
                m,
                density,
                scale,
                seed: a.seed,
            };
            (spec, mrf, None)
        }
    };
    write_file(&out, &UaiModel::from_mrf(&mrf).print())?;
    if let Some(meta) = a.meta {
        let text = serde_json::to_string_pretty(&InstanceMeta { spec, planted })
            .expect("meta is serializable");
        write_file(&meta, &(text + "\n"))?;
    }
    println!(
        "wrote {} ({} variables, {} edges)",
        out.display(),
        mrf.num_vars(),
        mrf.edges().len()
    );
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8, Failure> {
    let mrf = read_model(&a.model)?;
    let meta = match &a.meta {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            let meta: InstanceMeta = serde_json::from_str(&text)
                .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            Some(meta)
        }
        None => None,
    };
    if a.check == Check::Recovery && meta.as_ref().and_then(|m| m.planted.as_ref()).is_none() {
        return Err(input_error(
            "the recovery check needs --meta from a planted generator",
        ));
    }
    let opts = a.solver.options()?;
    let (report, out) = run(&mrf, &instance_id(&a.model), &opts)?;
    let p = build_sdr(&mrf)?;
    let passed = match a.check {
        Check::Marginalization => {
            let r = check_marginalization(&p, &out.solution, a.tol)?;
            println!("row_residual     {:.3e}", r.row_residual);
            println!("col_residual     {:.3e}", r.col_residual);
            println!("null_residual    {:.3e}", r.null_residual);
            r.passed
        }
        Check::Sdr2 => {
            let s2 = to_sdr2(&mrf, &out.solution)?;
            let r = check_sdr2_feasibility(&s2, &mrf, a.tol)?;
            println!("psd              {:.3e}", r.psd);
            println!("block_sum        {:.3e}", r.block_sum);
            println!("shifted_nonneg   {:.3e}", r.shifted_nonneg);
            println!("diagonal_block   {:.3e}", r.diagonal_block);
            println!("unit_diagonal    {:.3e}", r.unit_diagonal);
            r.passed
        }
        Check::Recovery => {
            let meta = meta.expect("checked above");
            let planted = meta.planted.expect("checked above");
            let inst = PlantedInstance {
                mrf: mrf.clone(),
                ground_truth: planted.ground_truth,
                true_edges: planted.true_edges,
                false_edges: planted.false_edges,
                corrupted_unaries: planted.corrupted_unaries,
                gauge_degenerate: planted.gauge_degenerate,
            };
            let cert = match &meta.spec {
                GeneratorSpec::Rotation(spec) => {
                    Some(rotation_condition(spec, a.bound_delta, a.sampling_c)?)
                }
                GeneratorSpec::Labeling(_) => Some(labeling_condition(&inst)?),
                GeneratorSpec::Random { .. } => None,
            };
            if let Some(c) = cert {
                println!(
                    "certificate      {}",
                    if c.satisfied {
                        "satisfied"
                    } else {
                        "not satisfied"
                    }
                );
                println!("margin           {:.6}", c.margin);
            }
            let recovered = inst.recovered(&report.rounding.assignment);
            println!("recovered        {recovered}");
            recovered
        }
    };
    println!("converged        {}", report.solve.converged);
    println!("check            {}", if passed { "PASS" } else { "FAIL" });
    Ok(if passed && report.solve.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn brute(a: BruteArgs) -> Result<u8, Failure> {
    let mrf = read_model(&a.model)?;
    let (best, energy) = brute_force_map_with_cap(&mrf, a.cap)?;
    println!("energy      {energy:.6}");
    println!("assignment  {}", join(best.as_slice()));
    Ok(0)
}
