//! Command-line front end: parse expressions, run one operation, print a
//! text or JSON report.

pub mod expr;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use microdiff::charvar::{
    self, Bounds, CharVariety, CyclicModule, LevelSupport, OrderStandardBasis,
};
use microdiff::diffop::Side;
use microdiff::microloc::{
    self, Chart, InvertOutcome, Localizer, MembershipVerdict, MicroOp,
};
use microdiff::{DiffOp, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use expr::{Context, Value};
use report::{diffop_to_json, symbol_to_json, Report, Status};

#[derive(Debug, Parser)]
#[command(name = "microdiff", version, about = "Arithmetic differential operators and their microlocalizations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// The prime.
    #[arg(long, global = true)]
    pub p: Option<u64>,
    /// Work modulo p^N.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub precision: Option<i64>,
    /// Lowest order kept in microdifferential series.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub window_floor: Option<i64>,
    #[arg(long, global = true)]
    pub max_order: Option<u64>,
    #[arg(long, global = true)]
    pub max_xdeg: Option<u64>,
    /// Default level for `d<j>`.
    #[arg(long, global = true)]
    pub level: Option<u32>,
    /// Number of variables.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file whose keys mirror the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `name=expr`, usable in later expressions.
    #[arg(long = "bind", global = true)]
    pub bind: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Evaluate and multiply the expressions left to right.
    Mul {
        #[arg(required = true)]
        exprs: Vec<String>,
    },
    /// Order and principal symbol.
    Symbol {
        expr: String,
    },
    /// Level-change map applied to an operator or symbol.
    Levelmap {
        expr: String,
        #[arg(long)]
        to: u32,
        /// Use the rational rewriting (any direction) instead of the integral map.
        #[arg(long)]
        rational: bool,
    },
    /// Rewrite a microdifferential operator at a lower level.
    Psi {
        expr: String,
        #[arg(long)]
        to: u32,
    },
    /// Invert a microdifferential operator (or an operator along `--theta`).
    Invert {
        expr: String,
        #[arg(long, default_value = "xi1")]
        theta: String,
        /// Localizer level for operator input; defaults to the operator level.
        #[arg(long = "localizer-level")]
        localizer_level: Option<u32>,
        #[arg(long)]
        chart: Option<ChartArg>,
        #[arg(long, default_value = "left")]
        side: SideArg,
    },
    /// Membership in the intermediate ring.
    Member {
        #[arg(long = "P", allow_hyphen_values = true)]
        op: String,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        mprime: u32,
    },
    /// Characteristic variety of D/(relations).
    Char {
        #[arg(long = "rel", allow_hyphen_values = true)]
        rels: Vec<String>,
    },
    /// Microlocal support test, compared with Char at each level.
    Supp {
        #[arg(long = "rel", allow_hyphen_values = true)]
        rels: Vec<String>,
        /// Highest level tested; defaults to `--level`.
        #[arg(long)]
        mprime_max: Option<u32>,
    },
    /// Char and support for every level up to `--mprime-max`.
    Stability {
        #[arg(long = "rel", allow_hyphen_values = true)]
        rels: Vec<String>,
        #[arg(long)]
        mprime_max: u32,
    },
    /// The counterexample checks on the line.
    VerifyCounterexample {
        #[arg(long, default_value_t = 30)]
        nmax: u64,
        #[arg(long, default_value_t = 2)]
        deg_bound: u64,
    },
    /// Norm-comparison exponents, with an optional brute-force scan.
    NormcalcBounds {
        #[arg(long, default_value_t = 1)]
        d: u64,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        mprime: u32,
        #[arg(long, allow_hyphen_values = true)]
        k: i64,
        #[arg(long)]
        observed: bool,
        #[arg(long, default_value_t = 3)]
        i_max: u64,
        #[arg(long, default_value_t = 2)]
        n_max: u64,
    },
    /// Randomized window and precision refinement checks.
    Battery {
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ChartArg {
    Affine,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SideArg {
    Left,
    Right,
}

/// Settings after merging flags over the config file over defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub p: u64,
    pub precision: Option<i64>,
    pub window_floor: i64,
    pub max_order: u64,
    pub max_xdeg: u64,
    pub level: u32,
    pub dim: Option<usize>,
    pub json: bool,
    pub seed: u64,
    pub bind: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        let b = Bounds::default();
        Config {
            p: 2,
            precision: None,
            window_floor: -12,
            max_order: b.max_order,
            max_xdeg: b.max_xdeg,
            level: 0,
            dim: None,
            json: false,
            seed: 0,
            bind: Vec::new(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    p: Option<u64>,
    precision: Option<i64>,
    #[serde(alias = "window-floor")]
    window_floor: Option<i64>,
    #[serde(alias = "max-order")]
    max_order: Option<u64>,
    #[serde(alias = "max-xdeg")]
    max_xdeg: Option<u64>,
    level: Option<u32>,
    dim: Option<usize>,
    json: Option<bool>,
    seed: Option<u64>,
    #[serde(default)]
    bind: std::collections::BTreeMap<String, String>,
}

impl Config {
    pub fn resolve(g: &GlobalArgs) -> Result<Config> {
        let file = match &g.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::InvalidArgument(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let d = Config::default();
        let mut bind: Vec<String> = file.bind.iter().map(|(k, v)| format!("{k}={v}")).collect();
        bind.extend(g.bind.iter().cloned());
        let cfg = Config {
            p: g.p.or(file.p).unwrap_or(d.p),
            precision: g.precision.or(file.precision),
            window_floor: g.window_floor.or(file.window_floor).unwrap_or(d.window_floor),
            max_order: g.max_order.or(file.max_order).unwrap_or(d.max_order),
            max_xdeg: g.max_xdeg.or(file.max_xdeg).unwrap_or(d.max_xdeg),
            level: g.level.or(file.level).unwrap_or(d.level),
            dim: g.dim.or(file.dim),
            json: g.json || file.json.unwrap_or(false),
            seed: g.seed.or(file.seed).unwrap_or(d.seed),
            bind,
        };
        microdiff::padic::check_prime(cfg.p)?;
        Ok(cfg)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            max_order: self.max_order,
            max_xdeg: self.max_xdeg,
            precision: self.precision.map_or(Bounds::default().precision, |n| n.max(1) as u32),
        }
    }

    pub fn context(&self) -> Result<Context> {
        let mut ctx = Context::new(self.p);
        ctx.level = self.level;
        ctx.nvars = self.dim;
        ctx.floor = self.window_floor;
        ctx.precision = self.precision;
        for b in &self.bind {
            let (name, src) = b
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("binding {b:?} is not name=expr")))?;
            let name = name.trim().to_string();
            if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(Error::InvalidArgument(format!("bad binding name {name:?}")));
            }
            let v = expr::parse(src, &ctx)?;
            ctx.bindings.insert(name, v);
        }
        Ok(ctx)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Mul { .. } => "mul",
        Command::Symbol { .. } => "symbol",
        Command::Levelmap { .. } => "levelmap",
        Command::Psi { .. } => "psi",
        Command::Invert { .. } => "invert",
        Command::Member { .. } => "member",
        Command::Char { .. } => "char",
        Command::Supp { .. } => "supp",
        Command::Stability { .. } => "stability",
        Command::VerifyCounterexample { .. } => "verify-counterexample",
        Command::NormcalcBounds { .. } => "normcalc-bounds",
        Command::Battery { .. } => "battery",
    }
}

/// Run one command line (including the program name) and return the output
/// and exit code: 0 success, 2 partial result, 1 error.
pub fn run<I, S>(args: I) -> (String, i32)
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            return (e.to_string(), code);
        }
    };
    let name = command_name(&cli.command);
    let cfg = match Config::resolve(&cli.global) {
        Ok(c) => c,
        Err(e) => return (format!("error: {e}\n"), 1),
    };
    let config_json = serde_json::to_value(&cfg).expect("config serializes");
    let mut report = Report::new(name, config_json);
    if let Err(e) = execute(&cli.command, &cfg, &mut report) {
        report.status = Status::Error;
        report.result = json!({ "error": e.to_string() });
        report.summary = vec![format!("error: {e}")];
    }
    (report.render(cfg.json), report.status.exit_code())
}

fn eval(src: &str, ctx: &Context) -> Result<Value> {
    expr::parse(src, ctx)
}

fn as_diffop(v: Value, ctx: &Context) -> Result<DiffOp> {
    let n = ctx.nvars.unwrap_or(1);
    match v {
        Value::Diff(d) => Ok(d),
        Value::Coefficient(a) => Ok(DiffOp::coefficient(ctx.p, ctx.level, a)),
        Value::Scalar(c) => Ok(DiffOp::coefficient(
            ctx.p,
            ctx.level,
            microdiff::Poly::constant(n, c),
        )),
        other => Err(Error::InvalidArgument(format!(
            "expected a differential operator, got a {}",
            other.kind()
        ))),
    }
}

fn as_micro(v: Value) -> Result<MicroOp> {
    match v {
        Value::Micro(m) => Ok(m),
        other => Err(Error::InvalidArgument(format!(
            "expected a microdifferential operator, got a {}",
            other.kind()
        ))),
    }
}

fn module(rels: &[String], cfg: &Config, ctx: &Context) -> Result<CyclicModule> {
    let mut ctx = ctx.clone();
    ctx.nvars = Some(1);
    let ops = rels
        .iter()
        .map(|r| eval(r, &ctx).and_then(|v| as_diffop(v, &ctx)))
        .collect::<Result<Vec<_>>>()?;
    let precision = cfg.precision.map(|n| n.max(1) as u32);
    CyclicModule::new(cfg.p, cfg.level, ops, precision)
}

fn execute(cmd: &Command, cfg: &Config, rep: &mut Report) -> Result<()> {
    let ctx = cfg.context()?;
    match cmd {
        Command::Mul { exprs } => cmd_mul(exprs, cfg, &ctx, rep),
        Command::Symbol { expr } => cmd_symbol(expr, &ctx, rep),
        Command::Levelmap { expr, to, rational } => cmd_levelmap(expr, *to, *rational, &ctx, rep),
        Command::Psi { expr, to } => {
            let op = as_micro(eval(expr, &ctx)?)?;
            let out = microloc::psi_level_lower(&op, *to)?;
            rep.line(format!("{out}"));
            rep.line(format!("integral: {}", out.is_integral()));
            rep.result = json!({ "input": op.to_json(), "image": out.to_json(), "integral": out.is_integral() });
            Ok(())
        }
        Command::Invert {
            expr,
            theta,
            localizer_level,
            chart,
            side,
        } => cmd_invert(expr, theta, *localizer_level, *chart, *side, cfg, &ctx, rep),
        Command::Member { op, m, mprime } => cmd_member(op, *m, *mprime, &ctx, rep),
        Command::Char { rels } => {
            let module = module(rels, cfg, &ctx)?;
            let sb = charvar::order_standard_basis(&module, cfg.bounds())?;
            let cv = charvar::classify(sb.p, sb.level, &sb.leading, sb.complete);
            char_report(&cv, &sb, &[], cfg, rep);
            Ok(())
        }
        Command::Supp { rels, mprime_max } => {
            let module = module(rels, cfg, &ctx)?;
            let top = mprime_max.unwrap_or(cfg.level);
            let bounds = cfg.bounds();
            let sup = charvar::micro_support_test(
                &module,
                cfg.level..=top,
                cfg.window_floor,
                cfg.precision,
                Some(bounds),
            )?;
            let sb = charvar::order_standard_basis(&module, bounds)?;
            let cv = charvar::classify(sb.p, sb.level, &sb.leading, sb.complete);
            char_report(&cv, &sb, &sup, cfg, rep);
            Ok(())
        }
        Command::Stability { rels, mprime_max } => {
            let module = module(rels, cfg, &ctx)?;
            let r = charvar::stability_probe(
                &module,
                *mprime_max,
                cfg.bounds(),
                cfg.window_floor,
                cfg.precision,
            )?;
            for row in &r.rows {
                rep.line(format!(
                    "level {}: Char {}; support generic {}, fibers {}",
                    row.level,
                    row.char_variety.describe(),
                    row.support.generic,
                    row.support.fibers
                ));
            }
            rep.line(match r.stable_from {
                Some(l) => format!("stable from level {l}"),
                None => "not stable in the probed range".to_string(),
            });
            for f in &r.flags {
                rep.partial(f.clone());
            }
            rep.result = serde_json::to_value(&r).expect("serializable");
            Ok(())
        }
        Command::VerifyCounterexample { nmax, deg_bound } => {
            let r = charvar::verify_counterexample(cfg.p, *nmax, *deg_bound)?;
            let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).collect();
            rep.line(format!(
                "{} checks, {} failed: {}",
                r.checks.len(),
                failed.len(),
                if r.all_passed { "all checks pass" } else { "FAILED" }
            ));
            for c in &failed {
                rep.line(format!("failed {} (n = {:?}): {}", c.name, c.n, c.detail));
            }
            if !r.all_passed {
                rep.status = Status::Error;
            }
            rep.result = serde_json::to_value(&r).expect("serializable");
            Ok(())
        }
        Command::NormcalcBounds {
            d,
            m,
            mprime,
            k,
            observed,
            i_max,
            n_max,
        } => {
            let b = microloc::normcalc_bounds(*d, cfg.p, *m, *mprime, *k)?;
            rep.line(format!("a_k = {}, b_k = {}", b.a_k, b.b_k));
            let mut result = serde_json::to_value(&b).expect("serializable");
            if *observed {
                let (a, bb) = microloc::normcalc_observed(*d, cfg.p, *m, *mprime, *k, *i_max, *n_max);
                rep.line(format!("observed a = {a}, b = {bb}"));
                let ok = a <= b.a_k && bb <= b.b_k;
                rep.line(format!("bounds certified on the scan: {ok}"));
                result["observed"] = json!({ "a": a, "b": bb, "within_bounds": ok });
                if !ok {
                    rep.status = Status::Error;
                }
            }
            rep.result = result;
            Ok(())
        }
        Command::Battery { cases } => cmd_battery(*cases, cfg, &ctx, rep),
    }
}

fn cmd_mul(exprs: &[String], cfg: &Config, ctx: &Context, rep: &mut Report) -> Result<()> {
    let mut src = exprs[0].clone();
    if exprs.len() > 1 {
        src = exprs.iter().map(|e| format!("({e})")).collect::<Vec<_>>().join(" * ");
    }
    let mut v = eval(&src, ctx)?;
    if let (Value::Diff(d), Some(n)) = (&v, cfg.precision) {
        v = Value::Diff(d.with_precision(Some(n.max(0) as u32))?);
    }
    rep.line(v.to_string());
    if let Value::Micro(m) = &v {
        let (lo, hi) = m.window();
        rep.line(format!(
            "window: orders {lo}..{}; exact: {}",
            hi.map_or("-".to_string(), |h| h.to_string()),
            m.is_exact()
        ));
    }
    rep.result = report::value_to_json(&v);
    Ok(())
}

fn cmd_symbol(src: &str, ctx: &Context, rep: &mut Report) -> Result<()> {
    match eval(src, ctx)? {
        Value::Symbol(s) => {
            let lead = s.leading_part();
            rep.line(format!("{s}"));
            match &lead {
                Some((d, l)) => rep.line(format!("degree {d}, leading part {l}")),
                None => rep.line("zero symbol"),
            }
            rep.result = json!({
                "symbol": symbol_to_json(&s),
                "homogeneous_degree": s.homogeneous_degree(),
                "leading": lead.map(|(d, l)| json!({ "degree": d, "part": symbol_to_json(&l), "text": l.to_string() })),
            });
        }
        Value::Micro(m) => {
            let Some(top) = m.order() else {
                rep.line("zero");
                rep.result = json!({ "order": null });
                return Ok(());
            };
            let principal = m.truncate(top);
            rep.line(format!("order {top}, principal part {principal}"));
            rep.result = json!({ "order": top, "principal": principal.to_json() });
        }
        v => {
            let d = as_diffop(v, ctx)?;
            let os = d.order_and_symbol()?;
            rep.line(format!("order {}, symbol mod p: {}", os.order, os.symbol));
            if let Some((k, s)) = &os.first_nonvanishing {
                rep.line(format!("first order surviving mod p: {k}, {s}"));
            }
            rep.result = json!({
                "operator": diffop_to_json(&d),
                "order": os.order,
                "symbol": symbol_to_json(&os.symbol),
                "symbol_text": os.symbol.to_string(),
                "first_nonvanishing": os.first_nonvanishing.as_ref().map(|(k, s)| json!({ "order": k, "symbol": symbol_to_json(s), "text": s.to_string() })),
            });
        }
    }
    Ok(())
}

fn cmd_levelmap(src: &str, to: u32, rational: bool, ctx: &Context, rep: &mut Report) -> Result<()> {
    match eval(src, ctx)? {
        Value::Symbol(s) => {
            let out = s.rational_level_change(to)?;
            rep.line(out.to_string());
            rep.result = json!({ "image": symbol_to_json(&out), "text": out.to_string() });
        }
        Value::Micro(m) => {
            let out = m.represent_at(to, m.localizer().localizer_level().max(to))?;
            rep.line(out.to_string());
            rep.result = json!({ "image": out.to_json(), "text": out.to_string() });
        }
        v => {
            let d = as_diffop(v, ctx)?;
            let out = if rational {
                d.level_change_rational(to)?
            } else {
                d.level_map_phi(to)?
            };
            rep.line(out.to_string());
            rep.result = json!({ "image": diffop_to_json(&out), "text": out.to_string(), "integral": out.is_integral() });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_invert(
    src: &str,
    theta: &str,
    localizer_level: Option<u32>,
    chart: Option<ChartArg>,
    side: SideArg,
    cfg: &Config,
    ctx: &Context,
    rep: &mut Report,
) -> Result<()> {
    let op = match eval(src, ctx)? {
        Value::Micro(m) => m,
        v => {
            let d = as_diffop(v, ctx)?;
            let mut tctx = ctx.clone();
            tctx.nvars = Some(d.nvars());
            let th = match eval(theta, &tctx)? {
                Value::Symbol(s) => s,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "--theta must be a symbol, got a {}",
                        other.kind()
                    )))
                }
            };
            let chart = match chart {
                Some(ChartArg::Affine) => Chart::Affine,
                Some(ChartArg::Torus) => Chart::Torus,
                None if th.to_k_basis().values().all(|c| c.is_constant()) => Chart::Affine,
                None => Chart::Torus,
            };
            let level = d.level();
            let loc = Localizer::new(&th, level, localizer_level.unwrap_or(level), chart)?;
            let side = match side {
                SideArg::Left => Side::Left,
                SideArg::Right => Side::Right,
            };
            let m = MicroOp::from_diffop(&d, &loc, side, cfg.window_floor)?;
            m.with_precision(cfg.precision)
        }
    };
    match microloc::try_invert(&op, cfg.window_floor, cfg.precision)? {
        InvertOutcome::Inverted(inv) => {
            rep.line(format!("inverse: {}", inv.inverse));
            rep.line(format!(
                "residuals vanish at orders >= {}: {}",
                inv.residual_floor, inv.residual_ok
            ));
            rep.result = json!({
                "inverted": true,
                "inverse": inv.inverse.to_json(),
                "residual_floor": inv.residual_floor,
                "residual_ok": inv.residual_ok,
                "profile": inv.profile,
            });
        }
        InvertOutcome::Failed(diag) => {
            rep.line(format!("not invertible in the window: {}", diag.message));
            rep.result = json!({
                "inverted": false,
                "failure": diag.kind,
                "message": diag.message,
                "first_nonintegral": diag.first_nonintegral,
                "profile": diag.profile,
                "candidate": diag.candidate.to_json(),
            });
        }
    }
    Ok(())
}

fn cmd_member(src: &str, m: u32, mprime: u32, ctx: &Context, rep: &mut Report) -> Result<()> {
    let op = as_micro(eval(src, ctx)?)?;
    let r = microloc::membership_query(&op, m, mprime)?;
    let short = match r.verdict {
        MembershipVerdict::InEmm => "InEmm'",
        MembershipVerdict::OnlyInEmPrime => "OnlyInEm'",
        MembershipVerdict::NotInEmPrime => "NotInEm'",
        MembershipVerdict::Undetermined => "Undetermined",
    };
    rep.line(format!("{short}: {}", r.verdict));
    if let Some(w) = &r.witness {
        rep.line(format!(
            "witness: k = {:?}, i = {}, order {}, valuation {}",
            w.k, w.i, w.order, w.valuation
        ));
    }
    if r.verdict == MembershipVerdict::Undetermined {
        rep.partial(format!(
            "truncation hides orders up to {}",
            r.blocking_order.map_or("?".to_string(), |o| o.to_string())
        ));
    }
    rep.result = json!({
        "verdict": r.verdict,
        "verdict_text": short,
        "witness": r.witness,
        "blocking_order": r.blocking_order,
        "psi_image": r.psi_image.to_json(),
    });
    Ok(())
}

fn char_report(
    cv: &CharVariety,
    sb: &OrderStandardBasis,
    sup: &[LevelSupport],
    cfg: &Config,
    rep: &mut Report,
) {
    rep.line(format!("Char^({}): {}", cv.level, cv.describe()));
    let gens: Vec<String> = charvar::minimal_generators(sb.p, &cv.generators)
        .iter()
        .map(|g| {
            let c = charvar::fp_poly_to_string(&g.coefficient);
            match (g.order, c.as_str()) {
                (0, _) => c,
                (q, "1") => format!("eta^{q}"),
                (q, _) if g.coefficient.iter().filter(|&&v| v != 0).count() > 1 => format!("({c})*eta^{q}"),
                (q, _) => format!("{c}*eta^{q}"),
            }
        })
        .collect();
    if !gens.is_empty() {
        rep.line(format!("gr generated by: {}", gens.join(", ")));
    }
    let mut flags = Vec::new();
    if !cv.complete {
        flags.push("standard basis incomplete within bounds".to_string());
    }
    for s in sup {
        rep.line(format!(
            "level {}: support generic {}, fibers {}{}",
            s.level,
            s.generic,
            s.fibers,
            match s.char_agrees {
                Some(true) => ", agrees with Char",
                Some(false) => ", disagrees with Char",
                None => "",
            }
        ));
        if s.char_agrees == Some(false) {
            flags.push(format!("level {}: Char and support disagree", s.level));
        }
        if let Some(c) = &s.char_variety {
            if !c.complete {
                flags.push(format!("level {}: standard basis incomplete within bounds", s.level));
            }
        }
    }
    flags.dedup();
    for f in &flags {
        rep.partial(f.clone());
    }
    rep.result = json!({
        "level": cv.level,
        "char_class": cv.class.to_string(),
        "char_variety": cv,
        "generators": gens,
        "support_verdicts": sup,
        "certificates": [sb.certificate],
        "basis": sb.basis.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
        "bounds": cfg.bounds(),
        "flags": flags,
    });
}

/// A random operator `sum c x^e D[m,k]` with small integer coefficients.
fn random_diffop(rng: &mut ChaCha8Rng, p: u64, level: u32) -> DiffOp {
    let mut d = DiffOp::zero(p, level, 1);
    for _ in 0..rng.gen_range(1..=3) {
        let k = rng.gen_range(0..=3u64);
        let e = rng.gen_range(0..=2i64);
        let c = rng.gen_range(-3..=3i64);
        if c != 0 {
            d.add_term(vec![k], microloc::coefficient(1, vec![e], c));
        }
    }
    d
}

/// Window refinement: products computed with a lower floor and then
/// truncated agree with products computed at the higher floor; likewise
/// reducing mod `p^N'` then mod `p^N` equals reducing mod `p^N`.
fn cmd_battery(cases: usize, cfg: &Config, ctx: &Context, rep: &mut Report) -> Result<()> {
    let _ = ctx;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.p;
    let theta = microdiff::SymbolPoly::power_monomial(p, &[1], microdiff::Poly::one(1));
    let coarse = cfg.window_floor;
    let fine = coarse - 6;
    let n = cfg.precision.unwrap_or(6);
    let mut rows = Vec::new();
    let mut failures = 0;
    for case in 0..cases {
        let level = rng.gen_range(0..=1u32);
        let side = if rng.gen_bool(0.5) { Side::Left } else { Side::Right };
        let loc = Localizer::new(&theta, level, level, Chart::Affine)?;
        let a = random_diffop(&mut rng, p, level);
        let b = random_diffop(&mut rng, p, level);
        let inv_power = rng.gen_range(1..=2u64);
        let build = |floor: i64| -> Result<MicroOp> {
            let t = MicroOp::from_terms(
                &loc,
                side,
                [((vec![0], inv_power), microdiff::Poly::one(1))],
                floor,
            )?;
            let ma = MicroOp::from_diffop(&a, &loc, side, floor)?;
            let mb = MicroOp::from_diffop(&b, &loc, side, floor)?;
            microloc::micro_multiply(&microloc::micro_multiply(&ma, &t)?, &mb)
        };
        let c = build(coarse)?;
        let f = build(fine)?;
        let window_ok = f.truncate(c.floor()).terms().eq(c.terms());
        let prec_ok = f.with_precision(Some(n + 3)).with_precision(Some(n)).terms().eq(f.with_precision(Some(n)).terms());
        let ok = window_ok && prec_ok;
        if !ok {
            failures += 1;
        }
        rows.push(json!({
            "case": case,
            "a": a.to_string(),
            "b": b.to_string(),
            "level": level,
            "side": side,
            "inverse_power": inv_power,
            "window_ok": window_ok,
            "precision_ok": prec_ok,
        }));
    }
    rep.line(format!("{} cases, {} failed", cases, failures));
    if failures > 0 {
        rep.status = Status::Error;
    }
    rep.result = json!({ "seed": cfg.seed, "coarse_floor": coarse, "fine_floor": fine, "precision": n, "cases": rows });
    Ok(())
}
