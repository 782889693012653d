use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use regulus_core::conditions::{
    ball_condition_count, ball_condition_volume, BallConditionReport, DEFAULT_CONSTANT,
};
use regulus_core::experiments::{
    lemma_suite, run_regression, run_scaling, write_ball_reports, write_records, write_rows,
    NikodymRow, Row, ScalingConfig, SliceRow,
};
use regulus_core::family::{
    clustered_violation_count, gen_clustered_family, gen_random_family, gen_sl2_example, ParamBox,
    StripFamily, SL2_BOX,
};
use regulus_core::geom::Vec3;
use regulus_core::heisenberg::{ball_indicator, family_indicator, lp_ratio, tube_indicator, GridFunction};
use regulus_core::measure::{
    kakeya_ratio, make_shading, mc_union_measure, rasterize, regularize, slice_correspondence,
    Shading, ShadingMode,
};
use regulus_core::Error;

#[derive(Parser)]
#[command(name = "regulus", version, about = "Regulus strip experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a strip family.
    Gen(GenArgs),
    /// Check the ball condition of a family.
    CheckBall(CheckBallArgs),
    /// Measure the union of a family.
    Measure(MeasureArgs),
    /// Compare slices of the union with the plank unions.
    SliceVerify(SliceVerifyArgs),
    /// Check the closed-form identities.
    DualityVerify(DualityVerifyArgs),
    /// Build a shading of a family.
    Shading(ShadingArgs),
    /// Kakeya ratio of a shaded family.
    Kakeya(KakeyaArgs),
    /// Lp ratio of the Nikodym maximal function.
    Nikodym(NikodymArgs),
    /// Run a scaling experiment from a JSON config.
    Scaling(ScalingArgs),
    /// Run the invariant suite over a corpus directory.
    Regress(RegressArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Sl2,
    Random,
    Clustered,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    delta: f64,
    /// A number or `auto` for sqrt(delta).
    #[arg(long, default_value = "auto")]
    rho: String,
    #[arg(long)]
    n: Option<usize>,
    /// Cluster radius, or `auto` for sqrt(delta).
    #[arg(long, default_value = "auto")]
    r: String,
    /// Parameter box "a0,a1,b0,b1,c0,c1" for sl2.
    #[arg(long = "box")]
    bx: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_rejects: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormArg {
    Count,
    Volume,
    Both,
}

#[derive(Args)]
struct CheckBallArgs {
    #[arg(long)]
    family: PathBuf,
    #[arg(long, value_enum, default_value = "count")]
    form: FormArg,
    #[arg(long)]
    constant: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Grid,
    Mc,
    Both,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    family: PathBuf,
    #[arg(long, value_enum, default_value = "grid")]
    method: MethodArg,
    /// Grid cell side (default delta/2).
    #[arg(long)]
    res: Option<f64>,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SliceVerifyArgs {
    #[arg(long)]
    family: PathBuf,
    #[arg(long, default_value_t = 7)]
    t_samples: usize,
    /// Grid cell side (default delta/4).
    #[arg(long)]
    res: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DualityVerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShadingModeArg {
    Full,
    Random,
    Region,
}

#[derive(Args)]
struct ShadingArgs {
    #[arg(long)]
    family: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: ShadingModeArg,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Box "x0,x1,y0,y1,z0,z1" for region mode.
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    regularize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KakeyaArgs {
    #[arg(long)]
    family: PathBuf,
    #[arg(long)]
    shading: PathBuf,
    /// Grid cell side (default delta/2).
    #[arg(long)]
    res: Option<f64>,
}

#[derive(Args)]
struct NikodymArgs {
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 6.0)]
    p: f64,
    /// `const`, `tube`, `ball` or `family:FILE`.
    #[arg(long = "f", default_value = "const")]
    f_kind: String,
    #[arg(long, default_value_t = 0.0625)]
    res: f64,
    /// Base-point net step (default delta).
    #[arg(long)]
    net_step: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegressArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Exit status of a command that ran to completion.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = Ctx { quiet: cli.quiet };
    match run(&ctx, cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Failures of a computation exit 1, everything else is an input error.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::GenerationExhausted { .. } | Error::InsufficientSamples { .. }) => 1,
        _ => 2,
    }
}

fn run(ctx: &Ctx, command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Gen(a) => gen(ctx, a),
        Command::CheckBall(a) => check_ball(ctx, a),
        Command::Measure(a) => measure(ctx, a),
        Command::SliceVerify(a) => slice_verify(ctx, a),
        Command::DualityVerify(a) => duality_verify(a),
        Command::Shading(a) => shading(ctx, a),
        Command::Kakeya(a) => kakeya(a),
        Command::Nikodym(a) => nikodym(ctx, a),
        Command::Scaling(a) => scaling(ctx, a),
        Command::Regress(a) => regress(ctx, a),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_auto(s: &str, delta: f64) -> anyhow::Result<f64> {
    if s == "auto" {
        Ok(delta.sqrt())
    } else {
        s.parse().with_context(|| format!("expected a number or `auto`, got {s:?}"))
    }
}

fn parse_list(s: &str, len: usize) -> anyhow::Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad number list {s:?}"))?;
    if v.len() != len {
        bail!("expected {len} comma-separated numbers, got {}", v.len());
    }
    Ok(v)
}

fn read_family(path: &Path) -> anyhow::Result<StripFamily> {
    StripFamily::read(path).with_context(|| format!("reading {}", path.display()))
}

fn family_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("family").to_string()
}

fn gen(ctx: &Ctx, a: GenArgs) -> anyhow::Result<Outcome> {
    let rho = parse_auto(&a.rho, a.delta)?;
    let family = match a.kind {
        GenKind::Sl2 => {
            let bx = match &a.bx {
                Some(s) => ParamBox::from_slice(&parse_list(s, 6)?)?,
                None => SL2_BOX,
            };
            gen_sl2_example(a.delta, &bx, a.seed)?
        }
        GenKind::Random => {
            let n = a.n.context("--n is required for random families")?;
            gen_random_family(a.delta, rho, n, a.seed, a.max_rejects)?
        }
        GenKind::Clustered => {
            let r = parse_auto(&a.r, a.delta)?;
            let n = a.n.unwrap_or_else(|| clustered_violation_count(a.delta, rho, r, 4.0));
            gen_clustered_family(a.delta, rho, r, n, a.seed)?
        }
    };
    family.write(&a.out)?;
    ctx.note(format!("wrote {} strips to {}", family.len(), a.out.display()));
    Ok(Outcome::Pass)
}

fn check_ball(ctx: &Ctx, a: CheckBallArgs) -> anyhow::Result<Outcome> {
    let family = read_family(&a.family)?;
    let mut reports: Vec<BallConditionReport> = Vec::new();
    if a.form != FormArg::Volume {
        reports.push(ball_condition_count(&family, a.constant.unwrap_or(DEFAULT_CONSTANT)));
    }
    if a.form != FormArg::Count {
        let constant = a.constant.unwrap_or(regulus_core::conditions::VOLUME_CONSTANT);
        reports.push(ball_condition_volume(&family, a.samples, a.seed, constant)?);
    }
    for r in &reports {
        ctx.note(format!(
            "{}: {} (worst ratio {:.4})",
            r.form.name(),
            if r.overall_pass { "pass" } else { "fail" },
            r.worst_ratio
        ));
    }
    let refs: Vec<&BallConditionReport> = reports.iter().collect();
    write_ball_reports(&refs, output(a.report.as_deref())?)?;
    Ok(Outcome::from_pass(reports.iter().all(|r| r.overall_pass)))
}

fn measure(ctx: &Ctx, a: MeasureArgs) -> anyhow::Result<Outcome> {
    let family = read_family(&a.family)?;
    let name = family_name(&a.family);
    let row = |method: &str, value: f64, stderr: f64| Row {
        name: name.clone(),
        delta: family.delta,
        rho: family.rho,
        n_strips: family.len(),
        lambda: None,
        method: method.into(),
        value,
        stderr,
    };
    let mut rows = Vec::new();
    if a.method != MethodArg::Mc {
        let h = a.res.unwrap_or(family.delta / 2.0);
        rows.push(row("grid", rasterize(&family, h)?.measure(), 0.0));
    }
    if a.method != MethodArg::Grid {
        let (m, se) = mc_union_measure(&family, a.samples, a.seed);
        rows.push(row("mc", m, se));
    }
    ctx.note(format!("{} strips", family.len()));
    write_rows(&rows, output(a.out.as_deref())?)?;
    Ok(Outcome::Pass)
}

fn slice_verify(ctx: &Ctx, a: SliceVerifyArgs) -> anyhow::Result<Outcome> {
    let family = read_family(&a.family)?;
    let h = a.res.unwrap_or(family.delta / 4.0);
    let k = a.t_samples.max(1);
    let mut rows = Vec::new();
    for i in 1..=k {
        let c = slice_correspondence(&family, i as f64 / (k + 1) as f64, h)?;
        rows.push(SliceRow {
            t: c.t,
            slice_area: c.slice_area,
            plank_volume: c.plank.volume3d,
            projected_area: c.plank.projected_area,
            ratio_volume: c.ratio_volume,
            ratio_projected: c.ratio_projected,
        });
    }
    let pass = rows
        .iter()
        .filter(|r| r.slice_area > 0.0)
        .all(|r| (1.0 / 16.0..=16.0).contains(&r.ratio_volume));
    ctx.note(if pass { "all ratios within [1/16, 16]" } else { "ratio outside [1/16, 16]" });
    write_records(&rows, output(a.report.as_deref())?)?;
    Ok(Outcome::from_pass(pass))
}

fn duality_verify(a: DualityVerifyArgs) -> anyhow::Result<Outcome> {
    let checks = lemma_suite(a.seed)?;
    let mut out = io::stdout().lock();
    for c in &checks {
        writeln!(
            out,
            "{:<22} max error {:.3e} tolerance {:.0e} {}",
            c.name,
            c.max_error,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(Outcome::from_pass(checks.iter().all(|c| c.pass)))
}

fn shading(ctx: &Ctx, a: ShadingArgs) -> anyhow::Result<Outcome> {
    let family = read_family(&a.family)?;
    let mode = match a.mode {
        ShadingModeArg::Full => ShadingMode::Full,
        ShadingModeArg::Random => ShadingMode::Random { lambda: a.lambda, seed: a.seed },
        ShadingModeArg::Region => {
            let v = parse_list(a.region.as_deref().context("--region is required for region mode")?, 6)?;
            ShadingMode::Region { lo: Vec3::new(v[0], v[2], v[4]), hi: Vec3::new(v[1], v[3], v[5]) }
        }
    };
    let mut shading = make_shading(&family, mode)?;
    if a.regularize {
        let reg = regularize(&family, &shading)?;
        ctx.note(format!(
            "mu = {}, kept {} of {} strips, mass {} of {}",
            reg.mu,
            reg.family.len(),
            family.len(),
            reg.shading.mass(),
            shading.mass()
        ));
        shading = Shading {
            selected: reg
                .shading
                .selected
                .into_iter()
                .map(|(j, ts)| (reg.indices[j], ts))
                .collect(),
        };
    }
    std::fs::write(&a.out, shading.to_json()? + "\n")?;
    Ok(Outcome::Pass)
}

fn kakeya(a: KakeyaArgs) -> anyhow::Result<Outcome> {
    let family = read_family(&a.family)?;
    let text = std::fs::read_to_string(&a.shading).with_context(|| format!("reading {}", a.shading.display()))?;
    let shading = Shading::from_json(&text)?;
    // strips without selected tubes (e.g. dropped by --regularize) are left out
    let keep: Vec<usize> = shading.selected.iter().filter(|(_, ts)| !ts.is_empty()).map(|(&i, _)| i).collect();
    if let Some(&i) = keep.iter().find(|&&i| i >= family.len()) {
        bail!("shading refers to strip {i} of a {}-strip family", family.len());
    }
    let sub = family.subfamily(&keep);
    let shading = Shading {
        selected: keep.iter().enumerate().map(|(j, i)| (j, shading.selected[i].clone())).collect(),
    };
    let k = kakeya_ratio(&sub, &shading, a.res.unwrap_or(family.delta / 2.0))?;
    let mut out = io::stdout().lock();
    writeln!(out, "lambda,lhs,rhs_basis,ratio")?;
    writeln!(out, "{},{},{},{}", k.lambda, k.lhs, k.rhs_basis, k.ratio)?;
    Ok(Outcome::Pass)
}

fn nikodym(ctx: &Ctx, a: NikodymArgs) -> anyhow::Result<Outcome> {
    let f: GridFunction = match a.f_kind.as_str() {
        "const" => GridFunction::constant(a.res, 1.0),
        "tube" => tube_indicator(a.res),
        "ball" => ball_indicator(a.res, a.delta),
        s => match s.strip_prefix("family:") {
            Some(path) => family_indicator(a.res, &read_family(Path::new(path))?),
            None => bail!("unknown function kind {s:?}"),
        },
    };
    let net_step = a.net_step.unwrap_or(a.delta);
    let ratio = lp_ratio(&f, a.p, a.delta, net_step)?;
    ctx.note(format!("lp ratio {ratio:.4}"));
    let row = NikodymRow { delta: a.delta, p: a.p, f_kind: a.f_kind, lp_ratio: ratio, net_step };
    write_records(&[row], output(a.out.as_deref())?)?;
    Ok(Outcome::Pass)
}

fn scaling(ctx: &Ctx, a: ScalingArgs) -> anyhow::Result<Outcome> {
    let config = ScalingConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let outcome = run_scaling(&config)?;
    write_rows(&outcome.result.rows, output(a.out.as_deref())?)?;
    ctx.note(format!(
        "{}: slope {:.4} +- {:.4}",
        config.experiment, outcome.result.fitted_slope, outcome.result.slope_stderr
    ));
    for f in &outcome.failures {
        eprintln!("invariant failed: {} ({})", f.invariant, f.detail);
    }
    Ok(Outcome::from_pass(outcome.failures.is_empty()))
}

fn regress(ctx: &Ctx, a: RegressArgs) -> anyhow::Result<Outcome> {
    let report = run_regression(&a.corpus)?;
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    for c in &report.checks {
        ctx.note(format!("{} {} {}", if c.pass { "ok  " } else { "FAIL" }, c.file, c.invariant));
    }
    match report.first_failure() {
        Some(c) => {
            eprintln!("first failing invariant: {} ({}) {}", c.invariant, c.file, c.detail);
            Ok(Outcome::Fail)
        }
        None => Ok(Outcome::Pass),
    }
}
