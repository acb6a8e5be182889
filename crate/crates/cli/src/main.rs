use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use shillbench::defaults::MC_SAMPLES;
use shillbench::distributions::{optimal_reserve, virtual_valuation};
use shillbench::experiment::{
    run_scenario, write_outputs, CheckConfig, EngineConfig, ExperimentConfig, MechanismConfig, OutputFormat,
    PopulationConfig, TypeConfig,
};
use shillbench::identity::{Notion, Verdict};
use shillbench::reproduce::{golden_csv, reproduce};
use shillbench::revenue::{optimal_posted_price, posted_price_revenue};
use shillbench::{PopulationModel, Rational, Scalar, TypeModel};

#[derive(Parser)]
#[command(name = "shillbench", version, about = "Auctions under population uncertainty and shill-bidding checks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for JSON and CSV outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Enumeration budget in evaluated profiles.
    #[arg(long, global = true)]
    budget: Option<u64>,
    #[arg(long, global = true, value_parser = ["json", "csv", "both"])]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium bid of a type, or a table of bids.
    Bid(BidArgs),
    /// Expected revenue of the configured mechanisms.
    Revenue(RevenueArgs),
    /// Identity-compatibility check of the configured mechanisms.
    CheckIc(CheckArgs),
    /// Revenue-maximizing posted price.
    PostedPrice(PostedArgs),
    /// Optimal reserve and virtual values.
    Reserve,
    /// Runs the bundled scenario suite against the golden file.
    Reproduce(ReproduceArgs),
    /// Runs a full experiment config.
    Run,
}

#[derive(Args)]
struct BidArgs {
    /// Mechanism descriptor, e.g. `dark-first-price:reserve=optimal`.
    #[arg(long)]
    mech: String,
    #[arg(long, required_unless_present = "table")]
    theta: Option<String>,
    /// Number of bidders; defaults to the largest count in the population.
    #[arg(long)]
    n: Option<usize>,
    /// Emit a CSV lattice of (theta, bid).
    #[arg(long)]
    table: bool,
    /// Lattice steps of `--table` on continuous types.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Population when no config is given: `2` or `1:0.5,2:0.5`.
    #[arg(long)]
    population: Option<String>,
}

#[derive(Args)]
struct RevenueArgs {
    #[arg(long, conflicts_with_all = ["mc", "formula"])]
    exact: bool,
    #[arg(long, conflicts_with = "formula")]
    mc: bool,
    #[arg(long)]
    formula: bool,
    #[arg(long)]
    samples: Option<u64>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    notion: String,
    #[arg(long)]
    max_identities: Option<usize>,
    /// Strategy lattice steps on continuous types.
    #[arg(long)]
    lattice: Option<usize>,
    /// Midpoint cells for ex-post checks on continuous types.
    #[arg(long)]
    cells: Option<usize>,
}

#[derive(Args)]
struct PostedArgs {
    /// Evaluate this price instead of optimizing.
    #[arg(long)]
    price: Option<String>,
    /// Population when no config is given: `2` or `1:0.5,2:0.5`.
    #[arg(long)]
    population: Option<String>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Comma-separated scenario names.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Golden CSV to compare against instead of the bundled one.
    #[arg(long)]
    golden: Option<PathBuf>,
    /// Write the computed values as a golden CSV.
    #[arg(long)]
    write_golden: Option<PathBuf>,
    /// Run scenarios in parallel.
    #[arg(long)]
    parallel: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SHILLBENCH_THREADS") {
        let n: usize = v.parse().with_context(|| format!("SHILLBENCH_THREADS='{v}' is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Bid(a) => bid(g, a),
        Command::Revenue(a) => revenue(g, a),
        Command::CheckIc(a) => check_ic(g, a),
        Command::PostedPrice(a) => posted_price(g, a),
        Command::Reserve => reserve(g),
        Command::Reproduce(a) => run_reproduce(a),
        Command::Run => {
            let cfg = apply_globals(g, load(g)?)?;
            let result = run_scenario(&cfg)?;
            emit(g, &cfg, &result)?;
            Ok(0)
        }
    }
}

fn load(g: &Global) -> Result<ExperimentConfig> {
    let path = g.config.as_ref().ok_or_else(|| anyhow!("--config is required for this command"))?;
    Ok(ExperimentConfig::load(path)?)
}

fn apply_globals(g: &Global, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
        if let Some(EngineConfig::Mc { seed, .. }) = &mut cfg.engine {
            *seed = Some(s);
        }
    }
    if let Some(b) = g.budget {
        cfg.budget = Some(b);
    }
    if let Some(dir) = &g.out {
        let mut out = cfg.output.take().unwrap_or_default();
        out.dir = Some(dir.clone());
        cfg.output = Some(out);
    }
    if let Some(f) = &g.format {
        let mut out = cfg.output.take().unwrap_or_default();
        out.format = Some(f.parse()?);
        cfg.output = Some(out);
    }
    Ok(cfg)
}

fn output_format(g: &Global, cfg: Option<&ExperimentConfig>) -> Result<OutputFormat> {
    if let Some(f) = &g.format {
        return Ok(f.parse()?);
    }
    Ok(cfg.and_then(|c| c.output.as_ref()).and_then(|o| o.format).unwrap_or(OutputFormat::Json))
}

fn out_dir(g: &Global, cfg: Option<&ExperimentConfig>) -> Option<PathBuf> {
    g.out.clone().or_else(|| cfg.and_then(|c| c.output.as_ref()).and_then(|o| o.dir.clone()))
}

fn emit(g: &Global, cfg: &ExperimentConfig, result: &shillbench::experiment::ExperimentResult) -> Result<()> {
    if let Some(dir) = out_dir(g, Some(cfg)) {
        let format = output_format(g, Some(cfg)).map(|f| if g.format.is_none() { OutputFormat::Both } else { f })?;
        for path in write_outputs(result, &dir, format)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_rows(g: &Global, cfg: Option<&ExperimentConfig>, json: serde_json::Value, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let format = output_format(g, cfg)?;
    if format != OutputFormat::Csv {
        println!("{}", serde_json::to_string_pretty(&json)?);
    }
    if format != OutputFormat::Json {
        println!("{}", header.join(","));
        for r in rows {
            println!("{}", r.join(","));
        }
    }
    Ok(())
}

/// Type model and population from the config, or uniform types and the
/// `--population` descriptor.
fn setting(g: &Global, population: Option<&str>, n: Option<usize>) -> Result<(TypeConfig, PopulationConfig)> {
    if let Some(path) = &g.config {
        let cfg = ExperimentConfig::load(path)?;
        return Ok((cfg.types, cfg.population));
    }
    let pop = match (population, n) {
        (Some(p), _) => PopulationConfig::from_descriptor(p)?,
        (None, Some(n)) => PopulationConfig::Fixed { n },
        (None, None) => PopulationConfig::Fixed { n: 2 },
    };
    Ok((TypeConfig::Uniform, pop))
}

fn bid(g: &Global, a: &BidArgs) -> Result<u8> {
    let (types, pop) = setting(g, a.population.as_deref(), a.n)?;
    let mech = MechanismConfig::from_descriptor(&a.mech)?;
    if types.is_finite() {
        bid_typed::<Rational>(g, a, &types, &pop, &mech)
    } else {
        bid_typed::<f64>(g, a, &types, &pop, &mech)
    }
}

fn bid_typed<T: Scalar>(
    g: &Global,
    a: &BidArgs,
    types: &TypeConfig,
    pop: &PopulationConfig,
    mech: &MechanismConfig,
) -> Result<u8> {
    let model: TypeModel<T> = types.build()?;
    let population: PopulationModel<T> = pop.build()?;
    let m = mech.build(&model, &population)?;
    let n = a.n.unwrap_or_else(|| population.max_buyers());
    let thetas: Vec<T> = if a.table {
        match &model {
            TypeModel::Finite(grid) => grid.grid().to_vec(),
            TypeModel::Continuous(_) => (0..=a.steps).map(|i| T::ratio(i as i64, a.steps.max(1) as i64)).collect(),
        }
    } else {
        let text = a.theta.as_deref().expect("clap requires --theta without --table");
        vec![T::parse_exact(text).ok_or_else(|| anyhow!("--theta '{text}' is not a number"))?]
    };
    let bids = thetas.iter().map(|t| m.equilibrium_bid(t, n)).collect::<Result<Vec<T>, _>>()?;
    if a.table {
        let mut text = String::from("theta,bid\n");
        for (t, b) in thetas.iter().zip(&bids) {
            text.push_str(&format!("{},{}\n", t.as_f64(), b.as_f64()));
        }
        match out_dir(g, None) {
            Some(dir) => {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("bid_table.csv");
                std::fs::write(&path, text)?;
                eprintln!("wrote {}", path.display());
            }
            None => print!("{text}"),
        }
        return Ok(0);
    }
    let exact = T::EXACT.then(|| bids[0].to_string());
    let value = json!({"mechanism": m.label(), "theta": thetas[0].as_f64(), "n": n, "bid": bids[0].as_f64(), "exact": exact});
    print_rows(
        g,
        None,
        value,
        &["mechanism", "theta", "n", "bid"],
        vec![vec![m.label().to_string(), thetas[0].to_string(), n.to_string(), bids[0].as_f64().to_string()]],
    )?;
    Ok(0)
}

fn revenue(g: &Global, a: &RevenueArgs) -> Result<u8> {
    let mut cfg = apply_globals(g, load(g)?)?;
    cfg.checks.clear();
    if a.exact {
        cfg.engine = Some(EngineConfig::Exact);
    } else if a.formula {
        cfg.engine = Some(EngineConfig::Formula);
    } else if a.mc || a.samples.is_some() {
        let samples = a.samples.unwrap_or(MC_SAMPLES);
        cfg.engine = Some(EngineConfig::Mc { samples, seed: g.seed.or(cfg.seed) });
        if cfg.arithmetic == Some(shillbench::experiment::Arithmetic::Exact) {
            cfg.arithmetic = None;
        }
    }
    let result = run_scenario(&cfg)?;
    emit(g, &cfg, &result)?;
    let rows = result
        .revenues
        .iter()
        .map(|r| {
            vec![
                r.mechanism.clone(),
                r.estimate.value.to_string(),
                r.estimate.se.to_string(),
                r.estimate.samples.to_string(),
                r.estimate.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.estimate.exact.clone().unwrap_or_default(),
            ]
        })
        .collect();
    print_rows(g, Some(&cfg), serde_json::to_value(&result.revenues)?, &["mechanism", "value", "se", "samples", "seed", "exact"], rows)?;
    Ok(0)
}

fn check_ic(g: &Global, a: &CheckArgs) -> Result<u8> {
    let notion: Notion = a.notion.parse()?;
    let mut cfg = apply_globals(g, load(g)?)?;
    let mut check = CheckConfig::new(notion);
    check.max_identities = a.max_identities;
    check.lattice = a.lattice;
    check.cells = a.cells;
    cfg.checks = vec![check];
    let result = run_scenario(&cfg)?;
    emit(g, &cfg, &result)?;
    let rows = result
        .checks
        .iter()
        .map(|c| vec![c.notion.to_string(), c.mechanism.clone(), c.gain.to_string(), c.verdict.as_str().to_string()])
        .collect();
    print_rows(g, Some(&cfg), serde_json::to_value(&result.checks)?, &["notion", "mechanism", "gain", "verdict"], rows)?;
    let mut code = 0;
    for c in &result.checks {
        eprintln!("{}", c.summary());
        code = match (code, c.verdict) {
            (_, Verdict::Violated) | (2, _) => 2,
            (_, Verdict::Qualified) => 3,
            (c, Verdict::Compatible) => c,
        };
    }
    Ok(code)
}

fn posted_price(g: &Global, a: &PostedArgs) -> Result<u8> {
    let (types, pop) = setting(g, a.population.as_deref(), None)?;
    if types.is_finite() {
        posted_typed::<Rational>(g, a, &types, &pop)
    } else {
        posted_typed::<f64>(g, a, &types, &pop)
    }
}

fn posted_typed<T: Scalar>(g: &Global, a: &PostedArgs, types: &TypeConfig, pop: &PopulationConfig) -> Result<u8> {
    let model: TypeModel<T> = types.build()?;
    let population: PopulationModel<T> = pop.build()?;
    let (price, rev) = match &a.price {
        Some(text) => {
            let p = T::parse_exact(text).ok_or_else(|| anyhow!("--price '{text}' is not a number"))?;
            let r = posted_price_revenue(&model, &population, &p);
            (p, r)
        }
        None => optimal_posted_price(&model, &population)?,
    };
    let exact = T::EXACT.then(|| json!({"price": price.to_string(), "revenue": rev.to_string()}));
    print_rows(
        g,
        None,
        json!({"price": price.as_f64(), "revenue": rev.as_f64(), "exact": exact}),
        &["price", "revenue"],
        vec![vec![price.as_f64().to_string(), rev.as_f64().to_string()]],
    )?;
    Ok(0)
}

fn reserve(g: &Global) -> Result<u8> {
    let (types, _) = setting(g, None, None)?;
    if types.is_finite() {
        let model: TypeModel<Rational> = types.build()?;
        let grid = model.as_finite().expect("finite config");
        let r = optimal_reserve(&model)?;
        let rows: Vec<Vec<String>> = grid
            .grid()
            .iter()
            .zip(grid.virtual_values())
            .map(|(t, v)| vec![t.to_string(), v.to_string(), v.as_f64().to_string()])
            .collect();
        let virtual_values: Vec<_> = rows.iter().map(|r| json!({"theta": r[0], "virtual_value": r[1]})).collect();
        print_rows(
            g,
            None,
            json!({"reserve": r.value.as_f64(), "exact": r.value.to_string(), "index": r.index, "virtual_values": virtual_values}),
            &["theta", "virtual_value", "virtual_value_f64"],
            rows,
        )?;
    } else {
        let model: TypeModel<f64> = types.build()?;
        let r = optimal_reserve(&model)?;
        let rows: Vec<Vec<String>> = (0..=10)
            .map(|i| {
                let t = i as f64 / 10.0;
                let v = virtual_valuation(&model, &t).map(|v| v.to_string()).unwrap_or_else(|_| "undefined".into());
                vec![t.to_string(), v]
            })
            .collect();
        print_rows(g, None, json!({"reserve": r.value}), &["theta", "virtual_value"], rows)?;
    }
    Ok(0)
}

fn run_reproduce(a: &ReproduceArgs) -> Result<u8> {
    let golden = a.golden.as_deref().map(read).transpose()?;
    let summary = reproduce(&a.only, golden.as_deref(), a.parallel)?;
    print!("{}", summary.matrix());
    if let Some(path) = &a.write_golden {
        std::fs::write(path, golden_csv(&summary.outcomes)).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    if summary.passed() {
        println!("all {} scenarios pass", summary.outcomes.len());
        Ok(0)
    } else {
        let failing = summary.failing();
        if failing.is_empty() {
            bail!("reproduction failed");
        }
        eprintln!("failing: {}", failing.join(", "));
        Ok(1)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
