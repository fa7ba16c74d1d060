use clap::{Args, Parser, Subcommand};
use kdv_core::asympt::{self, Scalar, DEFAULT_N_SET};
use kdv_core::floquet;
use kdv_core::hill::{spectral_table_with, Hill};
use kdv_core::nfmap::{self, NormalFormMap, OneGapChart, TruncConfig};
use kdv_core::paracalc::{self, ConstantRow, Cutoff};
use kdv_core::potential::{lame_one_gap, Potential, PotentialJson};
use kdv_core::verify::{self, Suite, VerifyOptions};
use num_complex::Complex64 as C64;
use serde::Serialize;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "kdvnf", version, about = "Spectral data, Birkhoff-type coordinates and normal forms of KdV near one-gap potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Periodic/antiperiodic and Dirichlet/Neumann spectrum
    Spectrum(RunConfig),
    /// Floquet coefficients, gap factors and W samples per closed gap
    Floquet(RunConfig),
    /// Actions and frequencies
    Freqs(RunConfig),
    /// Asymptotic expansion of one family over n_set
    Expand(RunConfig),
    /// Symplectic corrector diagnostics on the one-gap chart
    Corrector(RunConfig),
    /// Normal-form diagnostics on the one-gap chart
    Normalform(RunConfig),
    /// Measured composition constants and remainder norms
    Paracalc(RunConfig),
    /// The acceptance suite
    Verify(RunConfig),
}

#[derive(Args, Serialize, Clone)]
struct RunConfig {
    /// zero | lame:<k> | trig:<file.json>
    #[arg(long, default_value = "zero")]
    potential: String,
    #[arg(long = "nmax", default_value_t = 8)]
    n_max: usize,
    /// Expansion order
    #[arg(long = "N", default_value_t = 2)]
    order: usize,
    /// Comma-separated indices
    #[arg(long = "nset", value_delimiter = ',', default_values_t = DEFAULT_N_SET.to_vec())]
    n_set: Vec<i64>,
    /// f | W | tau | a | xi | d | beta | omega
    #[arg(long, default_value = "f")]
    family: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
    #[arg(long)]
    quick: bool,
}

enum Failure {
    Config(String),
    Compute(kdv_core::error::Error),
    Verification(usize),
}

impl From<kdv_core::error::Error> for Failure {
    fn from(e: kdv_core::error::Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o: {e}"))
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match &cli.command {
        Command::Spectrum(c) => spectrum(c),
        Command::Floquet(c) => cmd_floquet(c),
        Command::Freqs(c) => freqs(c),
        Command::Expand(c) => expand(c),
        Command::Corrector(c) => corrector(c),
        Command::Normalform(c) => normalform(c),
        Command::Paracalc(c) => cmd_paracalc(c),
        Command::Verify(c) => cmd_verify(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("computation error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(n)) => {
            eprintln!("{n} criteria failed");
            ExitCode::from(3)
        }
    }
}

fn parse_potential(spec: &str) -> Res<Potential> {
    if spec == "zero" {
        return Ok(Potential::zero());
    }
    if let Some(k) = spec.strip_prefix("lame:") {
        let k: f64 = k.parse().map_err(|_| Failure::Config(format!("bad modulus in {spec}")))?;
        if !(0.0..1.0).contains(&k) {
            return Err(Failure::Config(format!("modulus {k} outside [0, 1)")));
        }
        return Ok(lame_one_gap(k)?.0);
    }
    if let Some(file) = spec.strip_prefix("trig:") {
        let text = std::fs::read_to_string(file).map_err(|e| Failure::Config(format!("{file}: {e}")))?;
        let j: PotentialJson = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{file}: {e}")))?;
        return Potential::from_json(&j).map_err(|e| Failure::Config(e.to_string()));
    }
    Err(Failure::Config(format!("unknown potential {spec}")))
}

fn lame_modulus(spec: &str) -> Res<f64> {
    spec.strip_prefix("lame:")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| Failure::Config("this command needs --potential lame:<k>".into()))
}

fn c(v: C64) -> [f64; 2] {
    [v.re, v.im]
}

fn write(cfg: &RunConfig, name: &str, contents: &str) -> Res<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    let p = cfg.out.join(name);
    std::fs::write(&p, contents)?;
    Ok(p)
}

fn report(cfg: &RunConfig, command: &str, result: Value) -> Res<()> {
    let v = json!({
        "schema": 1,
        "tool": "kdvnf",
        "version": VERSION,
        "command": command,
        "config": cfg,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&v).expect("plain data") + "\n";
    let p = write(cfg, &format!("{command}.json"), &text)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn plot_data(cfg: &RunConfig, name: &str, rows: &[(f64, f64)]) -> Res<()> {
    let text: String = rows.iter().map(|(x, y)| format!("{x:e} {y:e}\n")).collect();
    let p = write(cfg, name, &text)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn spectrum(cfg: &RunConfig) -> Res<()> {
    let q = parse_potential(&cfg.potential)?;
    let t = spectral_table_with(&Hill::new(&q), cfg.n_max)?;
    let p = write(cfg, "spectrum.csv", &t.to_csv())?;
    println!("wrote {}", p.display());
    report(cfg, "spectrum", json!({ "open_gaps": t.open_gaps(), "table": t }))
}

fn cmd_floquet(cfg: &RunConfig) -> Res<()> {
    let q = parse_potential(&cfg.potential)?;
    let h = Hill::new(&q);
    let t = spectral_table_with(&h, cfg.n_max)?;
    let fl = floquet::floquet(&h, &t)?;
    let mut records = Vec::new();
    for n in 1..=cfg.n_max {
        if t.is_open(n) {
            records.push(json!({ "n": n, "open": true, "gamma": t.gamma(n) }));
            continue;
        }
        let grid = 32;
        let d = fl.data(n, grid)?;
        let w: Vec<[f64; 2]> = d.w_plus.iter().map(|v| c(*v)).collect();
        records.push(json!({
            "n": n, "a_plus": c(d.a_plus), "beta": d.beta, "xi": d.xi, "d": d.d, "W_samples": w,
        }));
    }
    report(cfg, "floquet", Value::Array(records))
}

fn freqs(cfg: &RunConfig) -> Res<()> {
    let q = parse_potential(&cfg.potential)?;
    let h = Hill::new(&q);
    let t = spectral_table_with(&h, cfg.n_max)?;
    let fl = floquet::floquet(&h, &t)?;
    let mut csv = String::from("n,omega,Omega\n");
    let mut rows = Vec::new();
    for n in 1..=cfg.n_max {
        let (omega, _) = fl.frequency(n)?;
        let big_omega = omega / (2.0 * PI * n as f64);
        csv.push_str(&format!("{n},{omega:e},{big_omega:e}\n"));
        let action = if t.is_open(n) { fl.action(n)? } else { 0.0 };
        rows.push(json!({ "n": n, "action": action, "omega": omega, "Omega": big_omega }));
    }
    let p = write(cfg, "freqs.csv", &csv)?;
    println!("wrote {}", p.display());
    report(cfg, "freqs", Value::Array(rows))
}

fn expand(cfg: &RunConfig) -> Res<()> {
    if cfg.n_set.len() < 3 || cfg.n_set.iter().any(|&n| n < 1) {
        return Err(Failure::Config("--nset needs at least three positive indices".into()));
    }
    let q = parse_potential(&cfg.potential)?;
    let h = Hill::new(&q);
    let n_top = *cfg.n_set.iter().max().unwrap() as usize;
    let t = spectral_table_with(&h, n_top + 3)?;
    let fl = floquet::floquet(&h, &t)?;
    let r = match cfg.family.as_str() {
        "f" => asympt::floquet_expansion(&fl, cfg.order, &cfg.n_set)?,
        "W" => asympt::w_expansion(&fl, cfg.order, &cfg.n_set)?,
        other => {
            let which: Scalar = other.parse().map_err(|_| Failure::Config(format!("unknown family {other}")))?;
            asympt::scalar_expansions(&fl, which, cfg.order, &cfg.n_set)?
        }
    };
    let rows: Vec<(f64, f64)> = r.n.iter().zip(&r.sup_remainder).map(|(n, v)| (*n as f64, *v)).collect();
    plot_data(cfg, &format!("expand_{}.dat", cfg.family), &rows)?;
    let table: Vec<Value> = rows.iter().map(|(n, v)| json!({ "n": n, "sup_remainder": v })).collect();
    println!("bounded: {}  slope {:.3}  ratio {:.3}", r.bounded(), r.decay_slope, r.ratio);
    report(cfg, "expand", json!({ "family": cfg.family, "bounded": r.bounded(), "sup_remainder_table": table, "report": r }))
}

fn chart_for(cfg: &RunConfig) -> Res<OneGapChart> {
    let k = lame_modulus(&cfg.potential)?;
    if cfg.n_max < 4 {
        return Err(Failure::Config("--nmax must be at least 4 for the chart".into()));
    }
    let i1 = nfmap::lame_action(k)?;
    Ok(nfmap::finite_gap_chart(&TruncConfig::new(cfg.n_max), verify::CHART_THETA, i1)?)
}

fn corrector(cfg: &RunConfig) -> Res<()> {
    let chart = chart_for(cfg)?;
    let nf = NormalFormMap::new(&chart);
    let base = chart.base_state();
    let z = base.add(&nfmap::random_perp(cfg.n_max, verify::PERP_RADIUS, true, cfg.seed));
    let fixed = nf.corrector(&base)?.dist(&base);
    let w = nf.corrector(&z)?;
    let inverse = nf.flow(1.0, 0.0, &w)?.dist(&z);
    let n_lim = cfg.n_max / 2;
    let raw = nfmap::symplectic_residual(&nf, &z, n_lim, 4, cfg.seed, false)?;
    let corrected = nfmap::symplectic_residual(&nf, &z, n_lim, 4, cfg.seed, true)?;
    let tr = nfmap::psi1_transpose_identity(&chart)?;
    let (rows, slope) = nfmap::l_perp_s_decay(&nf, &z)?;
    let x1 = nf.x_field(1.0, &z)?.norm(0.0);
    let x2 = nf.x_field(1.0, &base.add(&z.sub(&base).scale(C64::new(2.0, 0.0))))?.norm(0.0);
    let l = nf.l_matrix(&z)?;
    let p = chart.psi1_matrix()?;
    std::fs::create_dir_all(&cfg.out)?;
    nfmap::write_matrix(&cfg.out.join("corrector_L.bin"), &l)?;
    nfmap::write_matrix(&cfg.out.join("corrector_psi1.bin"), &p)?;
    let plot: Vec<(f64, f64)> = rows.iter().map(|(n, v)| (*n as f64, *v)).collect();
    plot_data(cfg, "corrector_l_rows.dat", &plot)?;
    report(
        cfg,
        "corrector",
        json!({
            "residuals": {
                "fixed_point": fixed, "inverse_flow": inverse,
                "symplectic_uncorrected": raw, "symplectic_corrected": corrected,
                "transpose": tr.residual, "a1_relation": tr.a1_relation,
            },
            "scalings": { "x_field_quadratic_ratio": x2 / x1 },
            "slopes": { "l_perp_s_rows": slope },
            "matrices": ["corrector_L.bin", "corrector_psi1.bin"],
        }),
    )
}

fn normalform(cfg: &RunConfig) -> Res<()> {
    let chart = chart_for(cfg)?;
    let nf = NormalFormMap::new(&chart);
    let r = nfmap::hamiltonian_normal_form_check(&nf, cfg.seed)?;
    let dir = nfmap::random_perp(cfg.n_max, 1.0, true, cfg.seed);
    let z1 = chart.base_state().add(&dir.scale(C64::new(verify::PERP_RADIUS, 0.0)));
    let z2 = chart.base_state().add(&dir.scale(C64::new(2.0 * verify::PERP_RADIUS, 0.0)));
    let p1 = nfmap::parametrix_coeffs(&nf, &z1)?;
    let p2 = nfmap::parametrix_coeffs(&nf, &z2)?;
    plot_data(cfg, "normalform_cubic.dat", &r.cubic_samples)?;
    let a1: Vec<Value> = p1.a1.iter().map(|(d, v)| json!([d, v.re, v.im])).collect();
    report(
        cfg,
        "normalform",
        json!({
            "residuals": {
                "quadratic_rel": r.quad_rel, "offdiagonal_rel": r.offdiag_rel, "operator_identity_rel": r.identity_rel,
            },
            "scalings": { "cubic_exponent": r.cubic_exponent, "a1_ratio": p2.a1_norm / p1.a1_norm },
            "slopes": { "parametrix_remainder": p1.remainder_slope },
            "omega1": chart.omega1,
            "a1": a1,
        }),
    )
}

fn cmd_paracalc(cfg: &RunConfig) -> Res<()> {
    let chi = Cutoff::default();
    let a = example_symbol();
    let mut rows: Vec<ConstantRow> = Vec::new();
    let mut reports = Vec::new();
    for k in 0..=2u32 {
        for j in 0..=2u32 {
            let n = (cfg.order as u32).max(k + j).max(1);
            let r = paracalc::psido_compose_expand(&a, k, j, n, &[64, 128], 0.0)?;
            let p = paracalc::para_compose_expand(&chi, &a, k, j, n, &[64, 128], 0.0)?;
            rows.extend(r.constants.iter().cloned());
            reports.push(json!({ "k": k, "j": j, "N": n, "psido_remainder": r.remainder_norms, "para_remainder": p.remainder_norms }));
        }
    }
    let p = write(cfg, "paracalc_constants.csv", &paracalc::constants_csv(&rows))?;
    println!("wrote {}", p.display());
    let bony: Vec<Value> =
        [16usize, 32, 64].iter().map(|&b| json!({ "band": b, "ratio": paracalc::bony_smoothing_ratio(&chi, b, 1.0, 1.0, 30, cfg.seed) })).collect();
    let interp: Vec<Value> =
        [1.0, 2.0, 3.0].iter().map(|&s| json!({ "s": s, "ratio": paracalc::interpolation_ratio(s, 32, 20, cfg.seed) })).collect();
    report(cfg, "paracalc", json!({ "compositions": reports, "bony_smoothing": bony, "interpolation": interp }))
}

/// Band-8 real symbol with a fixed coefficient pattern.
fn example_symbol() -> Vec<C64> {
    let mut a = vec![C64::new(0.0, 0.0); 17];
    a[8] = C64::new(1.0, 0.0);
    for d in 1..=8usize {
        let v = C64::new(0.5 / (d * d) as f64, 0.25 / (d * d * d) as f64);
        a[8 + d] = v;
        a[8 - d] = v.conj();
    }
    a
}

fn cmd_verify(cfg: &RunConfig) -> Res<()> {
    let mut suite = Suite::new(VerifyOptions { quick: cfg.quick, seed: cfg.seed });
    let mut results = Vec::new();
    for id in suite.ids() {
        let r = suite.run(id);
        println!("{}", verify::format_line(&r));
        results.push(r);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    report(cfg, "verify", json!({ "passed": failed == 0, "criteria": results }))?;
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

