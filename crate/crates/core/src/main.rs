use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mpsynth::bounds::{corollary_bound, lower_bound_schedule, BoundInputs, Theorem};
use mpsynth::dataset::{encode, preprocess, write_csv, Dataset, RawTable, SchemaFile};
use mpsynth::error::{invalid, Result};
use mpsynth::eval::{accuracy, roc_auc, run_experiment, scores, write_outcome, ExperimentConfig};
use mpsynth::learn::{dp_sgd, empirical_risk, train_projected, DpSgdConfig, LinearModel, LossSpec, TrainConfig};
use mpsynth::marginals::{read_marginal_set, write_marginal_set};
use mpsynth::polyapprox::{
    approx_report, bernstein, iterated_bernstein, logistic_loss, remez_minimax, Interval, Polynomial,
};
use mpsynth::privacy::{PrivacyParams, SensitivityMode};
use mpsynth::synth::{gen_mechanism1, measure, synthesize, BruteConfig, FitConfig, NoisyMarginalSet, SynthMode, SynthOptions};

#[derive(Parser)]
#[command(name = "mpsynth", version, about = "Private marginal-preserving synthetic data and linear models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a private synthetic dataset from a real one, or from a saved
    /// noisy marginal set.
    Synth(SynthArgs),
    /// Train a norm-constrained linear classifier.
    Train(TrainArgs),
    /// Train with differentially private SGD.
    Dpsgd(DpSgdArgs),
    /// Score a model on a dataset.
    Eval(EvalArgs),
    /// Evaluate an excess-risk bound or the lower-bound parameter schedule.
    Bound(BoundArgs),
    /// Polynomial approximation of a loss on an interval, as CSV rows.
    Approx(ApproxArgs),
    /// Run a full experiment grid from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// TOML schema with per-attribute preprocessing rules.
    #[arg(long)]
    schema: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        preprocess(&RawTable::load_csv(&self.data)?, &SchemaFile::load(&self.schema)?)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, requires = "schema")]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Read noisy marginals from this directory instead of measuring.
    #[arg(long, conflicts_with = "data", requires = "n")]
    from_marginals: Option<PathBuf>,
    /// Rows to generate (defaults to the size of the real data).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long)]
    allow_large_epsilon: bool,
    #[arg(long, default_value = "fitted")]
    mode: SynthMode,
    /// `exact` or `coarse`.
    #[arg(long = "sensitivity-mode", alias = "sensitivity", default_value = "exact")]
    sensitivity: SensitivityMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = BruteConfig::default().node_cap)]
    node_cap: u64,
    #[arg(long, default_value_t = FitConfig::default().iters)]
    fit_iters: usize,
    /// Synthetic CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Provenance report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also save the noisy marginals here.
    #[arg(long)]
    save_marginals: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logistic,
    PhiGamma,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long, value_enum, default_value = "logistic")]
    loss: LossArg,
    /// Margin parameter for the phi-gamma loss.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
}

impl LossArgs {
    fn spec(&self) -> Result<LossSpec> {
        match self.loss {
            LossArg::Logistic => Ok(LossSpec::logistic()),
            LossArg::PhiGamma => LossSpec::phi_gamma(self.gamma),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    loss: LossArgs,
    /// Norm budget; omit for unconstrained training.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = TrainConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = TrainConfig::default().step_size)]
    step_size: f64,
    #[arg(long, default_value_t = TrainConfig::default().tolerance)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DpSgdArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Per-sample clip norm; `inf` disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Reference model for the excess empirical risk on the same data.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoremArg {
    Lipschitz,
    Logistic,
}

#[derive(Args)]
struct BoundArgs {
    /// TOML parameter file with the bound inputs.
    #[arg(long, required_unless_present = "lower_bound_m")]
    params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lipschitz")]
    theorem: TheoremArg,
    /// Derive the marginal error budget from the privacy parameters.
    #[arg(long)]
    privacy_nu: bool,
    /// Print the lower-bound schedule for this many features instead.
    #[arg(long, conflicts_with = "params")]
    lower_bound_m: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionArg {
    /// `ln(1 + e^{-x})`.
    Logistic,
    Exp,
    Abs,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum MethodArg {
    Bernstein,
    Iterated,
    Remez,
}

#[derive(Args)]
struct ApproxArgs {
    #[arg(long, value_enum, default_value = "logistic")]
    function: FunctionArg,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long, default_value_t = 4)]
    degree: usize,
    /// Methods to run; defaults to all.
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Vec<MethodArg>,
    /// Iteration counts for the iterated Bernstein operator.
    #[arg(long, value_delimiter = ',', default_value = "1,4,9")]
    iters: Vec<usize>,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let opts = SynthOptions {
        mode: a.mode,
        sensitivity: a.sensitivity,
        brute: BruteConfig { node_cap: a.node_cap },
        fit: FitConfig { iters: a.fit_iters, ..FitConfig::default() },
    };
    let privacy = PrivacyParams {
        epsilon: a.epsilon,
        delta: a.delta,
        lambda: a.lambda,
        allow_large_epsilon: a.allow_large_epsilon,
    };
    if let Some(dir) = &a.from_marginals {
        let (schema, marginals) = read_marginal_set(dir)?;
        let nm = NoisyMarginalSet::new(schema, marginals, f64::NAN, a.seed)?;
        let (ds, _, _) = synthesize(a.n.unwrap_or(0), &nm, &opts)?;
        return write_csv(&ds, &a.out);
    }
    let (Some(data), Some(schema)) = (&a.data, &a.schema) else {
        return Err(invalid("synth needs --data and --schema, or --from-marginals"));
    };
    let real = DataArgs { data: data.clone(), schema: schema.clone() }.load()?;
    if let Some(dir) = &a.save_marginals {
        let (nm, _) = measure(&real, a.d, &privacy, a.sensitivity, a.seed)?;
        write_marginal_set(dir, &nm.schema, &nm.marginals)?;
    }
    if let Some(n) = a.n.filter(|&n| n != real.len()) {
        // the provenance report compares against the real data, so it is
        // only produced when the sizes agree
        let (nm, cal) = measure(&real, a.d, &privacy, a.sensitivity, a.seed)?;
        let (ds, _, _) = synthesize(n, &nm, &opts)?;
        eprintln!("sigma = {}", cal.sigma);
        return write_csv(&ds, &a.out);
    }
    let (ds, report) = gen_mechanism1(&real, a.d, &privacy, &opts, a.seed)?;
    write_csv(&ds, &a.out)?;
    match &a.report {
        Some(p) => report.write_json(p),
        None => emit(&serde_json::to_string_pretty(&report)?, None),
    }
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let ds = a.data.load()?;
    let cfg = TrainConfig {
        max_iters: a.max_iters,
        step_size: a.step_size,
        tolerance: a.tolerance,
    };
    let model = train_projected(&ds, &a.loss.spec()?, a.tau.unwrap_or(f64::INFINITY), &cfg)?;
    model.save(&a.out)
}

fn run_dpsgd(a: &DpSgdArgs) -> Result<()> {
    let ds = a.data.load()?;
    let cfg = DpSgdConfig {
        iterations: a.iterations,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        clip_norm: a.clip_norm,
        lipschitz: a.lipschitz,
        epsilon: a.epsilon,
        delta: a.delta,
        zero_noise: false,
    };
    let out = dp_sgd(&ds, &a.loss.spec()?, &cfg, a.seed)?;
    eprintln!("sigma = {}", out.sigma);
    out.model.save(&a.out)
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ds = a.data.load()?;
    let model = LinearModel::load(&a.model)?;
    model.check_schema(ds.schema())?;
    let data = encode(&ds);
    let risk = empirical_risk(&model.loss, &model.w, &data)?;
    let mut doc = serde_json::json!({
        "rows": data.len(),
        "accuracy": accuracy(&model, &data)?,
        "roc_auc": roc_auc(&scores(&model, &data)?).ok(),
        "empirical_risk": risk,
        "constrained": model.constrained(),
    });
    if let Some(p) = &a.reference {
        let reference = LinearModel::load(p)?;
        reference.check_schema(ds.schema())?;
        doc["excess_empirical_risk"] = (risk - empirical_risk(&model.loss, &reference.w, &data)?).into();
    }
    emit(&serde_json::to_string_pretty(&doc)?, a.out.as_deref())
}

fn run_bound(a: &BoundArgs) -> Result<()> {
    let text = if let Some(m) = a.lower_bound_m {
        serde_json::to_string_pretty(&lower_bound_schedule(m)?)?
    } else {
        let path = a.params.as_ref().ok_or_else(|| invalid("--params is required"))?;
        let inputs: BoundInputs = toml::from_str(&std::fs::read_to_string(path)?)?;
        let theorem = match a.theorem {
            TheoremArg::Lipschitz => Theorem::Lipschitz,
            TheoremArg::Logistic => Theorem::Logistic,
        };
        serde_json::to_string_pretty(&corollary_bound(&inputs, a.privacy_nu, theorem)?)?
    };
    emit(&text, a.out.as_deref())
}

fn run_approx(a: &ApproxArgs) -> Result<()> {
    let iv = Interval::new(a.lo, a.hi)?;
    let f = |x: f64| match a.function {
        FunctionArg::Logistic => logistic_loss(x),
        FunctionArg::Exp => x.exp(),
        FunctionArg::Abs => x.abs(),
    };
    let methods = if a.methods.is_empty() {
        vec![MethodArg::Bernstein, MethodArg::Iterated, MethodArg::Remez]
    } else {
        a.methods.clone()
    };
    let mut rows: Vec<(String, Option<usize>, Polynomial)> = Vec::new();
    for m in methods {
        match m {
            MethodArg::Bernstein => rows.push(("bernstein".into(), None, bernstein(f, a.degree, iv)?)),
            MethodArg::Iterated => {
                for &k in &a.iters {
                    rows.push(("iterated".into(), Some(k), iterated_bernstein(f, a.degree, k, iv)?));
                }
            }
            MethodArg::Remez => {
                let p = match remez_minimax(f, a.degree, iv, a.tol) {
                    Ok(p) => p,
                    Err(mpsynth::error::Error::NonConvergence { best, iterations, .. }) => {
                        eprintln!("remez did not converge after {iterations} iterations; reporting best iterate");
                        *best
                    }
                    Err(e) => return Err(e),
                };
                rows.push(("remez".into(), None, p));
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "iterations".into(), "degree".into(), "max_abs_error".into(), "coeff_abs_sum".into()];
    header.extend((0..=a.degree).map(|k| format!("a{k}")));
    w.write_record(&header)?;
    for (name, k, p) in &rows {
        let rep = approx_report(p, f);
        let mut rec = vec![
            name.clone(),
            k.map(|k| k.to_string()).unwrap_or_default(),
            p.degree().to_string(),
            rep.max_abs_error.to_string(),
            rep.coeff_abs_sum.to_string(),
        ];
        rec.extend(p.coeffs.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
    emit(String::from_utf8_lossy(&bytes).trim_end(), a.out.as_deref())
}

fn run_pipeline(a: &PipelineArgs) -> Result<bool> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let dir = a
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .ok_or_else(|| invalid("no output directory: pass --out or set output_dir"))?;
    let outcome = run_experiment(&cfg, base)?;
    write_outcome(&outcome, &dir)?;
    for r in outcome.runs.iter().filter(|r| !r.ok()) {
        eprintln!("epsilon {} repeat {}: {}", r.epsilon, r.repeat, r.status);
    }
    Ok(outcome.all_ok())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Synth(a) => run_synth(a).map(|_| true),
        Cmd::Train(a) => run_train(a).map(|_| true),
        Cmd::Dpsgd(a) => run_dpsgd(a).map(|_| true),
        Cmd::Eval(a) => run_eval(a).map(|_| true),
        Cmd::Bound(a) => run_bound(a).map(|_| true),
        Cmd::Approx(a) => run_approx(a).map(|_| true),
        Cmd::Pipeline(a) => run_pipeline(a),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
