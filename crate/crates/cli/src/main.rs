//! `urnedge`: batch front end for expansions, exact laws, simulation,
//! diagnostics and closed-form catalogs.

mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use urnedge::catalog::{
    chisq_closed_form, cross_check, dixon_closed_form, samplesum_closed_form, ClosedForm, DiffReport, Field,
    SampleSumParams,
};
use urnedge::diagnostics::gates;
use urnedge::oracle::{expansion_cdf, sample, sup_cdf_error};
use urnedge::{build_w, center, exact_pmf, Error, ExactOptions, GumSpec, IncrementLaw, Kernel};

use output::{Meta, Table};

#[derive(Parser, Debug)]
#[command(name = "urnedge", version, about = "Edgeworth expansions for decomposable statistics in urn models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Expansion CDF over a u-grid plus the expansion coefficients.
    Expand(Options),
    /// Exact conditional law of the statistic.
    Exact(Options),
    /// Monte-Carlo empirical law.
    Simulate(Options),
    /// Exact CDF against the one-, two- and three-term expansions.
    Compare(Options),
    /// Applicability gates and bound ingredients.
    Diagnose(Options),
    /// Closed-form parameters and their comparison with the generic engine.
    Catalog(Options),
}

impl Command {
    fn options(&self) -> &Options {
        match self {
            Command::Expand(a)
            | Command::Exact(a)
            | Command::Simulate(a)
            | Command::Compare(a)
            | Command::Diagnose(a)
            | Command::Catalog(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Expand(_) => "expand",
            Command::Exact(_) => "exact",
            Command::Simulate(_) => "simulate",
            Command::Compare(_) => "compare",
            Command::Diagnose(_) => "diagnose",
            Command::Catalog(_) => "catalog",
        }
    }
}

/// File paths are left out of the config hash; the parsed documents enter it instead.
#[derive(Args, Debug, Clone, Serialize)]
struct Options {
    /// Urn model JSON: {"family", "shapes", "n", optional "nu"}.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    model: Option<PathBuf>,
    /// Kernel JSON: {"builtin": "power", "k": 2}, {"tables": ...} or {"compound": ...}.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    kernel: Option<PathBuf>,
    /// Closed-form parameters for `catalog`.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    params: Option<PathBuf>,
    /// Expansion order.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(3..=5))]
    s: u8,
    /// Upper-tail mass cut from each cell's support [default: 1e-14, 1e-20 for catalog].
    #[arg(long = "tail-eps")]
    tail_eps: Option<f64>,
    /// Value quantum for binning non-integer kernels.
    #[arg(long)]
    qv: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    umin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    umax: Option<f64>,
    #[arg(long)]
    usteps: Option<usize>,
    /// Moment exponent 2 + δ used by `diagnose`.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Relative tolerance of `catalog` on unflagged fields.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

impl Options {
    fn eps(&self) -> f64 {
        self.tail_eps.unwrap_or(1e-14)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Csv,
    Json,
}

/// Failure carrying the exit code and the name printed on standard error.
struct Failure {
    code: u8,
    name: String,
    message: String,
}

impl Failure {
    fn config(name: &str, message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            name: name.to_string(),
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_)
            | Error::InfeasibleTotal { .. }
            | Error::NonpositiveShape { .. }
            | Error::UnsupportedOrder { .. }
            | Error::SupportTooShort { .. }
            | Error::NonRepresentableValues(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            name: e.name().to_string(),
            message: e.to_string(),
        }
    }
}

type Run<T> = std::result::Result<T, Failure>;

/// Closed-form parameter documents accepted by `catalog`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CatalogSpec {
    Chisq {
        n: u64,
        p: Vec<f64>,
    },
    Samplesum {
        omega: Vec<f64>,
        n: u64,
        /// Y laws per stratum; alternatively raw moments E Y^1..E Y^4.
        #[serde(default)]
        laws: Option<Vec<IncrementLaw>>,
        #[serde(default)]
        moments: Option<Vec<[f64; 4]>>,
    },
    Dixon {
        m: u64,
        n: u64,
        k: u64,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprint!("{e}");
            eprintln!("error: ConfigError: invalid command line");
            return ExitCode::from(1);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.name, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Option<PathBuf>, what: &str) -> Run<String> {
    let path = path
        .as_ref()
        .ok_or_else(|| Failure::config("ConfigError", format!("--{what} FILE is required")))?;
    fs::read_to_string(path).map_err(|e| Failure::config("ConfigError", format!("{}: {e}", path.display())))
}

fn load_model(o: &Options) -> Run<GumSpec> {
    let text = read(&o.model, "model")?;
    Ok(GumSpec::from_json(&text)?)
}

fn load_kernel(o: &Options) -> Run<Kernel> {
    let text = read(&o.kernel, "kernel")?;
    Ok(Kernel::from_json(&text)?)
}

fn exact_options(o: &Options) -> ExactOptions {
    ExactOptions {
        q_v: o.qv,
        ..ExactOptions::with_tail_eps(o.eps())
    }
}

fn u_grid(o: &Options) -> Run<Option<Vec<f64>>> {
    if o.umin.is_none() && o.umax.is_none() && o.usteps.is_none() {
        return Ok(None);
    }
    let lo = o.umin.unwrap_or(-4.0);
    let hi = o.umax.unwrap_or(4.0);
    let steps = o.usteps.unwrap_or(81);
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || steps == 0 {
        return Err(Failure::config("ConfigError", "u-grid needs finite umin <= umax and usteps >= 1"));
    }
    if steps == 1 {
        return Ok(Some(vec![lo]));
    }
    let d = (hi - lo) / (steps - 1) as f64;
    Ok(Some((0..steps).map(|i| lo + d * i as f64).collect()))
}

fn run(command: &Command) -> Run<()> {
    let mut o = command.options().clone();
    let default_eps = if matches!(command, Command::Catalog(_)) { 1e-20 } else { 1e-14 };
    o.tail_eps = Some(o.tail_eps.unwrap_or(default_eps));
    let o = &o;
    let mut config = json!({ "command": command.name(), "options": o });
    let body = match command {
        Command::Catalog(_) => {
            let text = read(&o.params, "params")?;
            let spec: CatalogSpec =
                serde_json::from_str(&text).map_err(|e| Failure::config("ConfigError", format!("params: {e}")))?;
            config["params"] = serde_json::to_value(&spec).expect("params serialize");
            let meta = Meta::new(command.name(), &config, o.eps(), o.qv, o.seed, o.reps);
            catalog(&spec, o, &meta)?
        }
        _ => {
            let gum = load_model(o)?;
            let kernel = load_kernel(o)?;
            config["model"] = serde_json::to_value(gum.config()).expect("model serializes");
            config["kernel"] = serde_json::to_value(kernel.config()).expect("kernel serializes");
            let meta = Meta::new(command.name(), &config, o.eps(), o.qv, o.seed, o.reps);
            match command {
                Command::Expand(_) => expand(&gum, &kernel, o, &meta)?,
                Command::Exact(_) => exact(&gum, &kernel, o, &meta)?,
                Command::Simulate(_) => simulate(&gum, &kernel, o, &meta)?,
                Command::Compare(_) => compare(&gum, &kernel, o, &meta)?,
                Command::Diagnose(_) => diagnose(&gum, &kernel, o, &meta)?,
                Command::Catalog(_) => unreachable!(),
            }
        }
    };
    match &o.out {
        Some(path) => fs::write(path, body)
            .map_err(|e| Failure::config("ConfigError", format!("{}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn expand(gum: &GumSpec, kernel: &Kernel, o: &Options, meta: &Meta) -> Run<String> {
    let c = center(gum, kernel, o.eps())?;
    let exp = build_w(&c, o.s as usize, gum.x_n)?;
    let grid = u_grid(o)?.unwrap_or_else(|| (0..81).map(|i| -4.0 + 0.1 * i as f64).collect());
    let col = format!("W{}", o.s);
    let mut table = Table::new(&["u", "z", &col]);
    for &u in &grid {
        table.push(vec![u, exp.z_of(u), exp.cdf(u)]);
    }
    Ok(match o.format {
        Format::Csv => {
            let extra = [("expansion", exp.to_json().to_string())];
            meta.csv_header(&extra) + &table.to_csv()
        }
        Format::Json => output::json_doc(meta, json!({ "expansion": exp.to_json(), "grid": table.to_json() })),
    })
}

fn exact(gum: &GumSpec, kernel: &Kernel, o: &Options, meta: &Meta) -> Run<String> {
    let dist = exact_pmf(gum, kernel, &exact_options(o))?;
    Ok(match o.format {
        Format::Csv => {
            let extra = [
                ("span", output::num(dist.span)),
                ("offset", output::num(dist.offset)),
                ("local_prob", dist.local_prob.map_or("none".into(), output::num)),
            ];
            meta.csv_header(&extra) + &dist.to_csv()
        }
        Format::Json => output::json_doc(meta, json!({ "exact": dist.to_json() })),
    })
}

fn simulate(gum: &GumSpec, kernel: &Kernel, o: &Options, meta: &Meta) -> Run<String> {
    let dist = sample(gum, kernel, o.reps, o.seed)?;
    let mut table = Table::new(&["value", "prob", "cdf"]);
    let mut acc = 0.0;
    for &(z, p) in &dist.values {
        acc += p;
        table.push(vec![z, p, acc]);
    }
    Ok(match o.format {
        Format::Csv => meta.csv_header(&[]) + &table.to_csv(),
        Format::Json => output::json_doc(meta, json!({ "empirical": table.to_json() })),
    })
}

fn compare(gum: &GumSpec, kernel: &Kernel, o: &Options, meta: &Meta) -> Run<String> {
    let dist = exact_pmf(gum, kernel, &exact_options(o))?;
    let c = center(gum, kernel, o.eps())?;
    let w5 = build_w(&c, 5, gum.x_n)?;
    let exps = [w5.truncated(3)?, w5.truncated(4)?, w5];
    let lat = dist.lattice();
    // Default grid: the standardized support points.
    let grid = u_grid(o)?.unwrap_or_else(|| dist.values.iter().map(|v| exps[0].u_of(v.0)).collect());
    let mut table = Table::new(&["u", "z", "exact", "W3", "W4", "W5", "err3", "err4", "err5"]);
    for &u in &grid {
        let z = exps[0].z_of(u);
        let f = dist.cdf(z);
        let w: Vec<f64> = exps.iter().map(|e| expansion_cdf(e, u, lat.as_ref(), false)).collect();
        table.push(vec![u, z, f, w[0], w[1], w[2], (f - w[0]).abs(), (f - w[1]).abs(), (f - w[2]).abs()]);
    }
    let sup: Vec<f64> = exps.iter().map(|e| sup_cdf_error(&dist, e)).collect();
    Ok(match o.format {
        Format::Csv => {
            let mut body = meta.csv_header(&[("lattice_span", output::num(dist.span))]) + &table.to_csv();
            body.push_str(&format!(
                "sup,,,,,,{},{},{}\n",
                output::num(sup[0]),
                output::num(sup[1]),
                output::num(sup[2])
            ));
            body
        }
        Format::Json => output::json_doc(
            meta,
            json!({
                "rows": table.to_json(),
                "sup": { "err3": sup[0], "err4": sup[1], "err5": sup[2] },
                "lattice_span": dist.span,
            }),
        ),
    })
}

fn diagnose(gum: &GumSpec, kernel: &Kernel, o: &Options, meta: &Meta) -> Run<String> {
    let c = center(gum, kernel, o.eps())?;
    let report = gates(&c, o.s as usize, o.delta)?;
    Ok(match o.format {
        Format::Csv => {
            let mut body = meta.csv_header(&[("omitted", report.expansion_bound_omitted.to_string())]);
            body.push_str("name,value\n");
            for (name, v) in report.rows() {
                body.push_str(&format!("{},{}\n", output::quote(&name), output::num(v)));
            }
            body
        }
        Format::Json => output::json_doc(meta, json!({ "report": report })),
    })
}

fn catalog(spec: &CatalogSpec, o: &Options, meta: &Meta) -> Run<String> {
    let (params, boxed): (serde_json::Value, Box<dyn ClosedForm>) = match spec {
        CatalogSpec::Chisq { n, p } => {
            let params = chisq_closed_form(*n, p);
            (serde_json::to_value(&params).expect("serializes"), Box::new(params))
        }
        CatalogSpec::Samplesum {
            omega,
            n,
            laws,
            moments,
        } => {
            let params = match (laws, moments) {
                (Some(laws), None) => SampleSumParams::from_laws(omega, laws, *n)?,
                (None, Some(m)) => samplesum_closed_form(omega, m, *n)?,
                _ => return Err(Failure::config("ConfigError", "samplesum needs exactly one of laws or moments")),
            };
            (serde_json::to_value(&params).expect("serializes"), Box::new(params))
        }
        CatalogSpec::Dixon { m, n, k } => {
            let params = dixon_closed_form(*m, *n, *k)?;
            (serde_json::to_value(&params).expect("serializes"), Box::new(params))
        }
    };
    let centered = boxed.centered(o.eps())?;
    let report = cross_check(boxed.as_ref(), &centered, o.tol)?;
    Ok(match o.format {
        Format::Csv => meta.csv_header(&[]) + &catalog_csv(boxed.fields(), &report),
        Format::Json => output::json_doc(meta, json!({ "params": params, "diff": report })),
    })
}

fn flag_text(flag: &urnedge::catalog::Flag) -> String {
    let v = serde_json::to_value(flag).expect("flag serializes");
    let kind = v["kind"].as_str().unwrap_or("").to_string();
    match v.get("note").and_then(|n| n.as_str()) {
        Some(note) => format!("{kind}: {note}"),
        None => kind,
    }
}

fn catalog_csv(fields: &[Field], report: &DiffReport) -> String {
    let mut out = String::from("# section: fields\nname,printed,value,flag\n");
    for f in fields {
        out.push_str(&format!(
            "{},{},{},{}\n",
            f.name,
            output::num(f.printed),
            output::num(f.value),
            output::quote(&flag_text(&f.flag))
        ));
    }
    out.push_str(&format!("# section: cross_check tol={}\n", output::num(report.tol)));
    out.push_str("name,printed,value,engine,rel_diff,flag,ok\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            output::num(r.printed),
            output::num(r.value),
            output::num(r.engine),
            output::num(r.rel_diff),
            output::quote(&flag_text(&r.flag)),
            r.ok
        ));
    }
    out
}
