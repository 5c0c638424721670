//! Command-line front end: configuration, dispatch and run manifests.
//!
//! A run reads an optional TOML file, overlays the command-line flags (flags
//! win), validates the result and writes `<name>.json`, an optional
//! `<name>.csv` and `<name>.manifest.json` into the output directory. Without
//! an output directory the JSON report goes to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bnf::{approx_constant, full_bnf_degree4, linear_corrections, weak_bnf_report};
use crate::divisors::{divisor_stability, measure_estimate, Cutoffs, IndexDomain, MelnikovKind};
use crate::dynamics::{
    energy, floquet_spectrum, index_mode, integrate, measured_frequencies, rhs_bnf_into, ApproxSolution, FloquetOptions,
    SpectralState, VectorField,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{build_zakharov, HamPolynomial};
use crate::resonance::{is_generic, Class};
use crate::spectrum::{corrections, twist_check, twist_matrix, TangentialSet};

/// Version string recorded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Bumped whenever stored coefficient tables change meaning.
pub const NORMALIZATION_VERSION: u32 = 1;
/// Environment variable naming the coefficient cache directory.
pub const CACHE_ENV: &str = "WWKAM_CACHE_DIR";

/// Every tunable parameter; unset fields fall back to per-command defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sites: Option<Vec<i64>>,
    pub cutoff: Option<i32>,
    pub eps: Option<Vec<f64>>,
    pub a: Option<f64>,
    pub zeta: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub shards: Option<usize>,
    pub threads: Option<usize>,
    pub precision: Option<String>,
    pub mode: Option<String>,
    pub spec: Option<String>,
    pub samples: Option<usize>,
    pub order: Option<usize>,
    pub p: Option<usize>,
    pub l_max: Option<i64>,
    pub j_max: Option<i64>,
    pub t_end: Option<f64>,
    pub n_out: Option<usize>,
    pub flow: Option<String>,
    pub domain: Option<String>,
}

impl RunConfig {
    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: &RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            sites, cutoff, eps, a, zeta, tol, seed, shards, threads, precision, mode, spec, samples, order, p, l_max,
            j_max, t_end, n_out, flow, domain
        );
        self
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    fn tangential(&self) -> Result<TangentialSet> {
        match &self.sites {
            Some(s) => TangentialSet::new(s),
            None => Err(Error::Config("--sites is required".into())),
        }
    }

    fn zeta_for(&self, nu: usize) -> Result<Vec<f64>> {
        let z = self.zeta.clone().unwrap_or_else(|| vec![1.0; nu]);
        if z.len() != nu {
            return Err(Error::Config(format!("ζ has {} entries for ν = {nu}", z.len())));
        }
        Ok(z)
    }

    fn eps_list(&self, default: &[f64]) -> Result<Vec<f64>> {
        let e = self.eps.clone().unwrap_or_else(|| default.to_vec());
        if e.is_empty() || e.iter().any(|&x| !(0.0..1.0).contains(&x)) {
            return Err(Error::Config(format!("ε values must lie in [0,1): {e:?}")));
        }
        Ok(e)
    }

    fn check_precision(&self) -> Result<()> {
        match self.precision.as_deref() {
            None | Some("double") => Ok(()),
            Some(p) => Err(Error::Config(format!("precision mode {p:?} is not available; use \"double\""))),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wwkam", version, about = "Normal forms and small-divisor diagnostics for deep-water waves")]
pub struct Cli {
    /// TOML configuration file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving outputs and manifests.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sites: Option<Vec<i64>>,
    #[arg(long)]
    pub cutoff: Option<i32>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub zeta: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Genericity test and linear data of a tangential set.
    Sites {
        #[command(flatten)]
        common: Common,
        /// Largest resonance order scanned.
        #[arg(long)]
        order: Option<usize>,
    },
    /// Non-trivial resonances with at most one index outside the sites.
    Resonances {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        order: Option<usize>,
    },
    /// Birkhoff normal form reports.
    Bnf {
        #[command(flatten)]
        common: Common,
        /// full, weak, constant or corrections.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        precision: Option<String>,
    },
    /// Twist matrix certificates.
    Twist {
        #[command(flatten)]
        common: Common,
    },
    /// Frequency-amplitude map and eigenvalue corrections.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        j_max: Option<i64>,
    },
    /// Minimum of the momentum-constrained small divisors.
    Divisors {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        j_max: Option<i64>,
        /// nonzero or complement.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Monte-Carlo estimate of the excluded frequency measure.
    Measure {
        #[command(flatten)]
        common: Common,
        /// g0, g1, g2, q, first, second-plus or second-minus.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        shards: Option<usize>,
        #[arg(long)]
        l_max: Option<i64>,
        #[arg(long)]
        j_max: Option<i64>,
    },
    /// Integrate the truncated or normal-form flow from the approximate torus.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// bnf or full.
        #[arg(long)]
        flow: Option<String>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        n_out: Option<usize>,
    },
    /// Finite Floquet spectrum at the approximate torus.
    Floquet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        l_max: Option<i64>,
        #[arg(long)]
        j_max: Option<i64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sites { .. } => "sites",
            Command::Resonances { .. } => "resonances",
            Command::Bnf { .. } => "bnf",
            Command::Twist { .. } => "twist",
            Command::Spectrum { .. } => "spectrum",
            Command::Divisors { .. } => "divisors",
            Command::Measure { .. } => "measure",
            Command::Simulate { .. } => "simulate",
            Command::Floquet { .. } => "floquet",
        }
    }

    /// Flags as a partial configuration.
    fn flags(&self) -> RunConfig {
        let mut c = RunConfig::default();
        let common = |c: &mut RunConfig, x: &Common| {
            c.sites = x.sites.clone();
            c.cutoff = x.cutoff;
            c.eps = x.eps.clone();
            c.zeta = x.zeta.clone();
        };
        match self {
            Command::Sites { common: x, order } | Command::Resonances { common: x, order } => {
                common(&mut c, x);
                c.order = *order;
            }
            Command::Bnf { common: x, mode, precision } => {
                common(&mut c, x);
                c.mode = mode.clone();
                c.precision = precision.clone();
            }
            Command::Twist { common: x } => common(&mut c, x),
            Command::Spectrum { common: x, j_max } => {
                common(&mut c, x);
                c.j_max = *j_max;
            }
            Command::Divisors { common: x, p, j_max, domain } => {
                common(&mut c, x);
                c.p = *p;
                c.j_max = *j_max;
                c.domain = domain.clone();
            }
            Command::Measure { common: x, spec, a, samples, shards, l_max, j_max } => {
                common(&mut c, x);
                c.spec = spec.clone();
                c.a = *a;
                c.samples = *samples;
                c.shards = *shards;
                c.l_max = *l_max;
                c.j_max = *j_max;
            }
            Command::Simulate { common: x, flow, t_end, tol, n_out } => {
                common(&mut c, x);
                c.flow = flow.clone();
                c.t_end = *t_end;
                c.tol = *tol;
                c.n_out = *n_out;
            }
            Command::Floquet { common: x, l_max, j_max } => {
                common(&mut c, x);
                c.l_max = *l_max;
                c.j_max = *j_max;
            }
        }
        c
    }
}

/// Tabular output of a command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Result of a dispatched command.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub report: Value,
    pub table: Option<Table>,
    pub config: RunConfig,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Zakharov coefficients up to degree 4, read from the cache when the stored
/// key and content hash both match.
pub fn cached_zakharov(cutoff: i32) -> Result<HamPolynomial> {
    let key = format!("zakharov|cutoff={cutoff}|degree=4|norm={NORMALIZATION_VERSION}");
    let dir = match std::env::var_os(CACHE_ENV) {
        Some(d) => PathBuf::from(d),
        None => return build_zakharov(cutoff, 4),
    };
    let path = dir.join(format!("{}.json", &sha256_hex(key.as_bytes())[..16]));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(v) = serde_json::from_str::<Value>(&text) {
            if v["key"] == json!(key) {
                if let Ok(p) = HamPolynomial::from_json(&v["poly"]) {
                    if v["hash"] == json!(p.content_hash()) {
                        return Ok(p);
                    }
                }
            }
        }
    }
    let p = build_zakharov(cutoff, 4)?;
    fs::create_dir_all(&dir)?;
    let entry = json!({"key": key, "hash": p.content_hash(), "poly": p.to_json()});
    fs::write(&path, serde_json::to_string(&entry).expect("cache entry serializes"))?;
    Ok(p)
}

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.check_precision()?;
    let name = cmd.name();
    let (report, table) = match cmd {
        Command::Sites { .. } => run_sites(cfg)?,
        Command::Resonances { .. } => run_resonances(cfg)?,
        Command::Bnf { .. } => run_bnf(cfg)?,
        Command::Twist { .. } => run_twist(cfg)?,
        Command::Spectrum { .. } => run_spectrum(cfg)?,
        Command::Divisors { .. } => run_divisors(cfg)?,
        Command::Measure { .. } => run_measure(cfg)?,
        Command::Simulate { .. } => run_simulate(cfg)?,
        Command::Floquet { .. } => run_floquet(cfg)?,
    };
    Ok(Outcome {
        name,
        report,
        table,
        config: cfg.clone(),
    })
}

fn run_sites(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let g = is_generic(&s, cfg.order.unwrap_or(8));
    let tw = twist_check(&s);
    let report = json!({
        "sites": s.sites(),
        "omega_bar": s.omega_bar().iter().copied().collect::<Vec<f64>>(),
        "generic": g.generic,
        "n_max": g.n_max,
        "certificate": g.certificate_text(),
        "min_abs_frequency": g.min_abs_frequency(),
        "twist": tw,
    });
    Ok((report, None))
}

fn run_resonances(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let n_max = cfg.order.unwrap_or(4);
    if !(3..=crate::resonance::MAX_ORDER).contains(&n_max) {
        return Err(Error::Config(format!("order must lie in 3..=15, got {n_max}")));
    }
    let mut table = Table::new(&["order", "j", "sigma", "class"]);
    let mut summary = Vec::new();
    for n in 3..=n_max {
        let r = crate::resonance::enumerate_low_outside(n, &s);
        for t in &r.nontrivial {
            let js: Vec<String> = t.pairs.iter().map(|p| p.0.to_string()).collect();
            let ss: Vec<String> = t.pairs.iter().map(|p| if p.1 > 0 { "+" } else { "-" }.to_string()).collect();
            table.push([n.to_string(), js.join(" "), ss.join(" "), Class::NonTrivial.to_string()]);
        }
        summary.push(json!({
            "order": n,
            "radius": r.radius,
            "candidates": r.candidates,
            "nontrivial": r.nontrivial.len(),
            "min_abs_frequency": r.min_abs_frequency,
        }));
    }
    Ok((json!({"sites": s.sites(), "orders": summary}), Some(table)))
}

fn run_bnf(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let mode = cfg.mode.as_deref().unwrap_or("full");
    let k = cfg.cutoff.unwrap_or(12);
    let mut table = Table::new(&["monomial", "relative_error"]);
    let report = match mode {
        "full" => {
            let r = full_bnf_degree4(k)?;
            for (m, e) in &r.offending {
                table.push([m.clone(), format!("{e:e}")]);
            }
            to_value(&r)
        }
        "weak" => {
            let s = cfg.tangential()?;
            let r = weak_bnf_report(k, &s)?;
            for (m, e) in &r.offending {
                table.push([m.clone(), format!("{e:e}")]);
            }
            to_value(&r)
        }
        "constant" => {
            let c = approx_constant(k)?;
            for (d, r) in c.residual.iter().enumerate() {
                if *r > crate::bnf::CANCEL_TOL {
                    table.push([format!("degree {}", d + 2), format!("{r:e}")]);
                }
            }
            json!({
                "cutoff": k,
                "residual_by_degree": c.residual,
                "k2_terms": c.k2.len(),
                "k3_terms": c.k3.len(),
                "k4_terms": c.k4.len(),
                "k4_hash": c.k4.content_hash(),
                "tolerance": crate::bnf::CANCEL_TOL,
            })
        }
        "corrections" => {
            let s = cfg.tangential()?;
            let z = cfg.zeta_for(s.nu())?;
            let rows = linear_corrections(k, &s, &z)?;
            for r in rows.iter().filter(|r| r.rel_err > crate::bnf::CANCEL_TOL) {
                table.push([format!("kappa_{}", r.j), format!("{:e}", r.rel_err)]);
            }
            json!({"cutoff": k, "sites": s.sites(), "zeta": z, "kappa": rows})
        }
        other => return Err(Error::Config(format!("unknown bnf mode {other:?}"))),
    };
    Ok((report, Some(table)))
}

fn run_twist(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let data = twist_matrix(&s);
    let check = twist_check(&s);
    let mut table = Table::new(&["row", "four_pi_a"]);
    for (i, r) in data.four_pi_a.iter().enumerate() {
        let cells: Vec<String> = r.iter().map(|x| x.to_string()).collect();
        table.push([i.to_string(), cells.join(" ")]);
    }
    Ok((json!({"sites": s.sites(), "int_cert": data.int_cert, "matrix": data, "check": check}), Some(table)))
}

fn run_spectrum(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let z = cfg.zeta_for(s.nu())?;
    let eps = cfg.eps_list(&[0.05])?[0];
    let jm = cfg.j_max.unwrap_or(2 * s.max_abs());
    let c = corrections(&s, &z, eps, jm)?;
    let omega = crate::spectrum::freq_amp(&s, &z, eps)?;
    let mut table = Table::new(&["j", "c_j", "d_j"]);
    for ((j, cj), (_, dj)) in c.c.iter().zip(&c.d) {
        table.push([j.to_string(), format!("{cj:.17e}"), format!("{dj:.17e}")]);
    }
    Ok((
        json!({"sites": s.sites(), "zeta": z, "eps": eps, "omega": omega.iter().copied().collect::<Vec<f64>>(), "corrections": c}),
        Some(table),
    ))
}

fn run_divisors(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let p = cfg.p.unwrap_or(1);
    if !(1..=6).contains(&p) {
        return Err(Error::Config(format!("p must lie in 1..=6, got {p}")));
    }
    let jm = cfg.j_max.unwrap_or(10_000);
    let domain = match cfg.domain.as_deref() {
        None | Some("nonzero") => IndexDomain::Nonzero,
        Some("complement") => IndexDomain::Complement,
        Some(d) => return Err(Error::Config(format!("unknown index domain {d:?}"))),
    };
    let (a, b, change) = divisor_stability(&s, p, jm, domain);
    let mut table = Table::new(&["j_max", "ell", "j", "k", "sigma", "sigma_p", "value"]);
    for scan in [&a, &b] {
        if let Some(r) = &scan.argmin {
            let ell: Vec<String> = r.ell.iter().map(|x| x.to_string()).collect();
            table.push([
                scan.j_max.to_string(),
                ell.join(" "),
                r.j.to_string(),
                r.k.to_string(),
                r.sigma.to_string(),
                r.sigma_p.to_string(),
                format!("{:.17e}", r.value),
            ]);
        }
    }
    Ok((json!({"sites": s.sites(), "scan": a, "doubled": b, "relative_change": change}), Some(table)))
}

fn run_measure(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let kind = MelnikovKind::parse(cfg.spec.as_deref().unwrap_or("g0"))?;
    let eps = cfg.eps_list(&[0.1, 0.07, 0.05, 0.035])?;
    let samples = cfg.samples.unwrap_or(100_000);
    if samples < 10_000 {
        return Err(Error::Config(format!("measure needs at least 10^4 samples, got {samples}")));
    }
    let cut = Cutoffs {
        l_max: cfg.l_max.unwrap_or(50),
        j_max: cfg.j_max.unwrap_or(1000),
        ..Cutoffs::default()
    };
    let t = measure_estimate(
        &s,
        cfg.a.unwrap_or(0.2),
        kind,
        &cut,
        &eps,
        samples,
        cfg.seed.unwrap_or(0),
        cfg.shards.unwrap_or(8),
        None,
    )?;
    let spec = cfg.spec.clone().unwrap_or_else(|| "g0".into());
    let slope = t.slope.map(|x| x.to_string()).unwrap_or_default();
    let mut table = Table::new(&["eps", "spec", "fraction", "ci_lo", "ci_hi", "slope"]);
    for r in &t.rows {
        table.push([
            r.eps.to_string(),
            spec.clone(),
            format!("{:e}", r.fraction),
            format!("{:e}", r.ci_lo),
            format!("{:e}", r.ci_hi),
            slope.clone(),
        ]);
    }
    Ok((to_value(&t), Some(table)))
}

fn run_simulate(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let z = cfg.zeta_for(s.nu())?;
    let eps = cfg.eps_list(&[0.05])?[0];
    let k = cfg.cutoff.unwrap_or(8);
    if (k as i64) < s.max_abs() {
        return Err(Error::Config(format!("cutoff {k} below max|S| = {}", s.max_abs())));
    }
    let tol = cfg.tol.unwrap_or(1e-10);
    let t_end = cfg.t_end.unwrap_or(100.0);
    let n_out = cfg.n_out.unwrap_or(400);
    let approx = ApproxSolution::new(&s, &z, eps)?;
    let y0 = approx.state(k, &vec![0.0; s.nu()]);
    let flow = cfg.flow.as_deref().unwrap_or("bnf");
    let h = cached_zakharov(k)?;
    let traj = match flow {
        "bnf" => integrate(|y, o| rhs_bnf_into(k, y, o), &y0.z, k, t_end, tol, n_out)?,
        "full" => {
            let f = VectorField::new(&h, k)?;
            integrate(|y, o| f.eval(y, o), &y0.z, k, t_end, tol, n_out)?
        }
        other => return Err(Error::Config(format!("unknown flow {other:?}"))),
    };
    let modes: Vec<i32> = s.sites().iter().map(|&j| j as i32).collect();
    let fits = measured_frequencies(&traj, &modes);
    let last = SpectralState {
        cutoff: k,
        z: traj.states.last().unwrap().clone(),
        t: t_end,
    };
    let drift = y0
        .actions()
        .iter()
        .zip(last.actions())
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let mut table = Table::new(&["t", "mode", "re", "im"]);
    for (t, st) in traj.times.iter().zip(&traj.states) {
        for (i, c) in st.iter().enumerate() {
            table.push([t.to_string(), index_mode(k, i).to_string(), format!("{:.17e}", c.re), format!("{:.17e}", c.im)]);
        }
    }
    Ok((
        json!({
            "flow": flow,
            "sites": s.sites(),
            "zeta": z,
            "eps": eps,
            "predicted": approx.omega,
            "frequencies": fits,
            "action_drift": drift,
            "energy_start": energy(&h, &y0),
            "energy_end": energy(&h, &last),
            "accepted": traj.accepted,
            "rejected": traj.rejected,
        }),
        Some(table),
    ))
}

fn run_floquet(cfg: &RunConfig) -> Result<(Value, Option<Table>)> {
    let s = cfg.tangential()?;
    let z = cfg.zeta_for(s.nu())?;
    let eps = cfg.eps_list(&[0.02, 0.04, 0.08])?;
    let lm = cfg.l_max.unwrap_or(3);
    let jm = cfg.j_max.unwrap_or(10);
    if jm < s.max_abs() {
        return Err(Error::Config(format!("j_max {jm} below max|S| = {}", s.max_abs())));
    }
    let h = cached_zakharov(jm as i32)?;
    let opts = FloquetOptions::new(lm, jm, &s);
    let mut reports = Vec::new();
    let mut table = Table::new(&["eps", "dimension", "max_distance", "max_distance_uncorrected"]);
    for &e in &eps {
        let a = ApproxSolution::new(&s, &z, e)?;
        let r = floquet_spectrum(&h, &a, &opts)?;
        table.push([
            e.to_string(),
            r.dimension.to_string(),
            format!("{:e}", r.max_distance),
            format!("{:e}", r.max_distance_uncorrected),
        ]);
        reports.push(r);
    }
    let pos: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.max_distance > 0.0)
        .map(|r| (r.eps.ln(), r.max_distance.ln()))
        .collect();
    let slope = crate::divisors::fit_slope(&pos.iter().map(|p| p.0).collect::<Vec<_>>(), &pos.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok((json!({"sites": s.sites(), "zeta": z, "options": opts, "slope": slope, "reports": reports}), Some(table)))
}

/// Manifest written next to every output.
pub fn manifest(out: &Outcome, seed: u64, wall_seconds: f64, outputs: &[(String, String)]) -> Value {
    let config_json = serde_json::to_string(&out.config).expect("config serializes");
    let hashes: serde_json::Map<String, Value> = outputs.iter().map(|(n, h)| (n.clone(), json!(h))).collect();
    json!({
        "command": out.name,
        "config": out.config,
        "seed": seed,
        "input_hashes": {"config": sha256_hex(config_json.as_bytes())},
        "output_hashes": hashes,
        "version": VERSION,
        "normalization_version": NORMALIZATION_VERSION,
        "wall_time_seconds": wall_seconds,
    })
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<String> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Io(_) => 2,
        Error::NonGeneric { .. } => 3,
        Error::Singular(_) | Error::Numerical(_) => 4,
    }
}

/// Machine-readable error report.
pub fn error_report(e: &Error) -> Value {
    let kind = match e {
        Error::Config(_) => "config",
        Error::Domain(_) => "domain",
        Error::Io(_) => "io",
        Error::NonGeneric { .. } => "non_generic",
        Error::Singular(_) => "singular",
        Error::Numerical(_) => "numerical",
    };
    let mut v = json!({"error": kind, "message": e.to_string(), "exit_code": exit_code(e)});
    if let Error::NonGeneric { certificate } = e {
        v["certificate"] = json!(certificate);
    }
    v
}

/// Parses, runs and writes; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match run_inner(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", error_report(&e));
            exit_code(&e)
        }
    }
}

fn run_inner(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let file_cfg = match &cli.config {
        Some(p) => RunConfig::from_toml(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    let mut flags = cli.command.flags();
    flags.seed = cli.seed;
    flags.threads = cli.threads;
    let cfg = file_cfg.overlay(&flags);
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = dispatch(&cli.command, &cfg)?;
    let report = serde_json::to_string_pretty(&out.report).expect("report serializes");
    match &cli.out {
        None => {
            println!("{report}");
        }
        Some(dir) => {
            let mut hashes = vec![(format!("{}.json", out.name), write_file(dir, &format!("{}.json", out.name), &report)?)];
            if let Some(t) = &out.table {
                let csv = t.to_csv()?;
                hashes.push((format!("{}.csv", out.name), write_file(dir, &format!("{}.csv", out.name), &csv)?));
            }
            let m = manifest(&out, cfg.seed.unwrap_or(0), start.elapsed().as_secs_f64(), &hashes);
            write_file(dir, &format!("{}.manifest.json", out.name), &serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = RunConfig::from_toml("sites = [3, 2]\ncutoff = 10\n").unwrap();
        let flags = RunConfig {
            cutoff: Some(12),
            ..Default::default()
        };
        let c = file.overlay(&flags);
        assert_eq!(c.sites, Some(vec![3, 2]));
        assert_eq!(c.cutoff, Some(12));
        assert!(RunConfig::from_toml("unknown = 1").is_err());
    }

    #[test]
    fn twist_command_reports_certificate() {
        let cli = Cli::parse_from(["wwkam", "twist", "--sites", "3,2"]);
        let cfg = cli.command.flags();
        let out = dispatch(&cli.command, &cfg).unwrap();
        assert_eq!(out.report["int_cert"], json!("-1440"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonGeneric { certificate: "c".into() }), 3);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        let cli = Cli::parse_from(["wwkam", "bnf", "--mode", "weak", "--sites", "-1,4,9", "--cutoff", "12"]);
        let e = dispatch(&cli.command, &cli.command.flags()).unwrap_err();
        assert_eq!(exit_code(&e), 3);
        assert!(error_report(&e)["certificate"].as_str().unwrap().contains("(9,-)"));
    }

    #[test]
    fn csv_quotes_fields() {
        let mut t = Table::new(&["a", "b"]);
        t.push(["x,y".to_string(), "z".to_string()]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n\"x,y\",z\n");
    }
}
