//! Command-line front end: configuration, subcommands and exit codes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bep::{estimate_mode, solve_bep1, solve_bep2, ModePriors};
use crate::continuation::{apply_t_minus_to_plus, apply_t_plus_to_minus, generate_pair, GraphPair};
use crate::grid::{gauss_legendre, Cap, SphereGrid};
use crate::hardy::{self, apply_bminus, apply_bplus, apply_curl, synthesize, VectorFieldCoeffs};
use crate::harmonics::{coeff_len, LegendreTable, ScalarCoeffs};
use crate::io::{self, fmt_f64, ReportRow, Table};
use crate::locality::{build_context, laplace_spectrum, trace_spectrum, LocalityContext, Trace};
use crate::potentials::{derive_multipliers, multiplier_oracle, LayerMultipliers, ORACLE_TOLERANCE};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "SPHARDY_OUT";

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::PreconditionViolation(_) | Error::Parse(_) => EXIT_INVALID_CONFIG,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_INVALID_CONFIG,
        Error::NotInDomain { .. } | Error::NumericalFailure(_) | Error::Infeasible(_) => EXIT_NUMERICAL,
        Error::InternalConsistency(_) => EXIT_INVARIANT,
    }
}

/// Run settings. Parsed from `key = value` lines, then overridden by flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_trial: usize,
    pub n_test: usize,
    pub theta_c: f64,
    pub eps: f64,
    /// Sample grid for field files; 0 picks the smallest exact grid.
    pub grid_theta: usize,
    pub grid_phi: usize,
    pub noise: f64,
    /// Fixed bound for `BEP1`; when absent, `bound_factor * |psi|`.
    pub c: Option<f64>,
    pub bound_factor: f64,
    /// Bounds swept by `BEP2`; the mode estimate uses the one with the
    /// smallest error bound.
    pub c_grid: Vec<f64>,
    pub seed: u64,
    pub tail_amplitude: f64,
    pub membership_tolerance: f64,
    /// Modes `(n, m)` reported by `estimate-mode` and `demo`.
    pub modes: Vec<(usize, i64)>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let modes = (0..=3usize)
            .flat_map(|n| (-(n as i64)..=n as i64).map(move |m| (n, m)))
            .collect();
        Self {
            n_trial: 24,
            n_test: 16,
            theta_c: PI / 3.0,
            eps: 1e-6,
            grid_theta: 0,
            grid_phi: 0,
            noise: 1e-3,
            c: None,
            bound_factor: 1.05,
            c_grid: (0..7).map(|k| 10f64.powi(k)).collect(),
            seed: 7,
            tail_amplitude: 0.5,
            membership_tolerance: crate::locality::DEFAULT_MEMBERSHIP_TOLERANCE,
            modes,
            out_dir: PathBuf::from("sphardy_out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_modes(v: &str) -> Result<Vec<(usize, i64)>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (n, m) = s
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("mode {s:?} is not n:m")))?;
            let (n, m): (usize, i64) = (parse_num("modes", n)?, parse_num("modes", m)?);
            if m.unsigned_abs() as usize > n {
                return Err(Error::Parse(format!("mode {n}:{m} has |m| > n")));
            }
            Ok((n, m))
        })
        .collect()
}

fn format_modes(modes: &[(usize, i64)]) -> String {
    modes.iter().map(|(n, m)| format!("{n}:{m}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "n_trial" => self.n_trial = parse_num(key, v)?,
            "n_test" => self.n_test = parse_num(key, v)?,
            "theta_c" => self.theta_c = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "grid_theta" => self.grid_theta = parse_num(key, v)?,
            "grid_phi" => self.grid_phi = parse_num(key, v)?,
            "noise" => self.noise = parse_num(key, v)?,
            "c" => self.c = if v.is_empty() || v == "auto" { None } else { Some(parse_num(key, v)?) },
            "bound_factor" => self.bound_factor = parse_num(key, v)?,
            "c_grid" => self.c_grid = parse_list(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "tail_amplitude" => self.tail_amplitude = parse_num(key, v)?,
            "membership_tolerance" => self.membership_tolerance = parse_num(key, v)?,
            "modes" => self.modes = parse_modes(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = BTreeMap::new();
        kv.insert("n_trial", self.n_trial.to_string());
        kv.insert("n_test", self.n_test.to_string());
        kv.insert("theta_c", fmt_f64(self.theta_c));
        kv.insert("eps", fmt_f64(self.eps));
        kv.insert("grid_theta", self.grid_theta.to_string());
        kv.insert("grid_phi", self.grid_phi.to_string());
        kv.insert("noise", fmt_f64(self.noise));
        kv.insert("c", self.c.map(fmt_f64).unwrap_or_else(|| "auto".into()));
        kv.insert("bound_factor", fmt_f64(self.bound_factor));
        kv.insert("c_grid", self.c_grid.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        kv.insert("seed", self.seed.to_string());
        kv.insert("tail_amplitude", fmt_f64(self.tail_amplitude));
        kv.insert("membership_tolerance", fmt_f64(self.membership_tolerance));
        kv.insert("modes", format_modes(&self.modes));
        kv.insert("out_dir", self.out_dir.display().to_string());
        for (k, v) in kv {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Check the documented ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_trial < 1 || self.n_test < 1 {
            return bad("degrees must be at least 1".into());
        }
        if self.n_test > self.n_trial {
            return bad(format!("n_test {} exceeds n_trial {}", self.n_test, self.n_trial));
        }
        if !(self.theta_c > 0.0 && self.theta_c < PI) {
            return bad(format!("theta_c {} outside (0, pi)", self.theta_c));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps {} outside (0, 1)", self.eps));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be nonnegative", self.noise));
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("bound c {c} must be positive"));
            }
        }
        if !(self.bound_factor > 0.0 && self.bound_factor.is_finite()) {
            return bad(format!("bound_factor {} must be positive", self.bound_factor));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("c_grid must hold positive values".into());
        }
        if !(self.tail_amplitude >= 0.0 && self.tail_amplitude.is_finite()) {
            return bad("tail_amplitude must be nonnegative".into());
        }
        if !(self.membership_tolerance > 0.0) {
            return bad("membership_tolerance must be positive".into());
        }
        if let Some((n, m)) = self.modes.iter().find(|(n, _)| *n > self.n_trial) {
            return bad(format!("mode {n}:{m} above the trial degree"));
        }
        if (self.grid_theta == 0) != (self.grid_phi == 0) {
            return bad("set both grid_theta and grid_phi or neither".into());
        }
        Ok(())
    }

    pub fn cap(&self) -> Result<Cap> {
        Cap::new(self.theta_c)
    }

    /// Field-file grid for degree `nmax`.
    pub fn field_grid(&self, nmax: usize) -> Result<SphereGrid> {
        if self.grid_theta == 0 {
            Ok(SphereGrid::for_vector_degree(nmax))
        } else {
            SphereGrid::new(self.grid_theta, self.grid_phi)
        }
    }

    pub fn context(&self) -> Result<LocalityContext> {
        let mut ctx = build_context(self.cap()?, self.n_trial, self.n_test, self.eps)?;
        ctx.set_membership_tolerance(self.membership_tolerance);
        Ok(ctx)
    }
}

/// Flags mirroring the config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// `key = value` config file applied before the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n_trial: Option<usize>,
    #[arg(long, global = true)]
    pub n_test: Option<usize>,
    /// Cap half-angle in radians.
    #[arg(long, global = true)]
    pub theta_c: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub grid_theta: Option<usize>,
    #[arg(long, global = true)]
    pub grid_phi: Option<usize>,
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub bound_factor: Option<f64>,
    /// Comma-separated bounds.
    #[arg(long, global = true)]
    pub c_grid: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tail_amplitude: Option<f64>,
    #[arg(long, global = true)]
    pub membership_tolerance: Option<f64>,
    /// Comma-separated `n:m` pairs.
    #[arg(long, global = true)]
    pub modes: Option<String>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    /// Defaults, then the config file, then flags, then `SPHARDY_OUT`.
    pub fn resolve(&self, env_out: Option<String>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_text(&std::fs::read_to_string(p)?)?;
        }
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { cfg.$f = v; })*};
        }
        take!(n_trial, n_test, theta_c, eps, grid_theta, grid_phi, noise, bound_factor, seed, tail_amplitude, membership_tolerance, out_dir);
        if let Some(c) = self.c {
            cfg.c = Some(c);
        }
        if let Some(v) = &self.c_grid {
            cfg.set("c_grid", v)?;
        }
        if let Some(v) = &self.modes {
            cfg.set("modes", v)?;
        }
        if let Some(dir) = env_out.filter(|s| !s.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "sphardy", version, about = "Hardy-Hodge continuation and bounded extremal problems on a spherical cap")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the self-checks and print the multiplier table.
    Validate {
        /// Degree of the checks (defaults to n_trial).
        #[arg(long)]
        nmax: Option<usize>,
        /// Perturb the K+1/2 multiplier at this degree (negative control).
        #[arg(long, hide = true)]
        corrupt_degree: Option<usize>,
    },
    /// Split a sampled vector field into its Hardy-Hodge potentials.
    Decompose {
        field: PathBuf,
        #[arg(long)]
        nmax: Option<usize>,
    },
    /// Generate a potential pair whose field is locally divergence-free on the cap.
    Pairgen,
    /// Continue one Hardy potential to the other.
    Continue {
        phi: PathBuf,
        /// Treat the input as the outer potential and map it back.
        #[arg(long)]
        inverse: bool,
    },
    /// Solve the first bounded extremal problem.
    Bep1 {
        /// Data file; a noisy generated pair is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sweep the second bounded extremal problem over c_grid.
    Bep2,
    /// Estimate modes of the continuation from data.
    EstimateMode {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Prior bound on the data potential norm.
        #[arg(long)]
        norm_phi: Option<f64>,
        /// Prior bound on the continued potential norm.
        #[arg(long)]
        norm_tphi: Option<f64>,
    },
    /// Write singular spectra of the cap operators.
    SvdReport,
    /// End-to-end reconstruction from noisy data.
    Demo,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = cli.overrides.resolve(std::env::var(OUT_ENV).ok())?;
    if let Command::Validate { nmax, corrupt_degree } = &cli.command {
        let opts = ValidateOptions {
            nmax: nmax.unwrap_or(cfg.n_trial),
            corrupt_degree: *corrupt_degree,
        };
        let report = cmd_validate(&cfg, &opts)?;
        std::fs::create_dir_all(&cfg.out_dir)?;
        report.multipliers.write(&cfg.out_dir.join("multipliers.csv"))?;
        report.checks.write(&cfg.out_dir.join("validate.csv"))?;
        print!("{}", report.multipliers.to_csv()?);
        print!("{}", report.checks.to_csv()?);
        return Ok(if report.all_pass { EXIT_OK } else { EXIT_INVARIANT });
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let out = cfg.out_dir.clone();
    match &cli.command {
        Command::Validate { .. } => unreachable!(),
        Command::Decompose { field, nmax } => {
            let v = cmd_decompose(field, nmax.unwrap_or(cfg.n_trial))?;
            std::fs::write(out.join("decomposition.json"), io::vector_to_json(&v)?)?;
        }
        Command::Pairgen => {
            let (pair, field) = cmd_pairgen(&cfg)?;
            std::fs::write(out.join("pair.json"), io::pair_to_json(&pair)?)?;
            io::write_coeffs(&out.join("phi.json"), &pair.phi)?;
            io::write_coeffs(&out.join("psi.json"), &pair.psi)?;
            field.write(&out.join("field.csv"))?;
            println!(
                "locality_residual,divfree_residual\n{},{}",
                fmt_f64(pair.locality_residual),
                fmt_f64(pair.divfree_residual)
            );
        }
        Command::Continue { phi, inverse } => {
            let input = io::read_coeffs(phi)?;
            let ctx = cfg.context()?;
            let r = if *inverse {
                apply_t_minus_to_plus(&ctx, &input)?
            } else {
                apply_t_plus_to_minus(&ctx, &input)?
            };
            let name = if *inverse { "phi_continued.json" } else { "psi_continued.json" };
            io::write_coeffs(&out.join(name), &r.output)?;
            io::write_coeffs(&out.join("witness.json"), &r.witness)?;
            println!("fit_residual,condition\n{},{}", fmt_f64(r.fit_residual), fmt_f64(r.condition));
        }
        Command::Bep1 { data } => {
            let ctx = cfg.context()?;
            let (rows, phi_c, psi_c) = cmd_bep1(&ctx, &cfg, data.as_deref())?;
            io::write_coeffs(&out.join("phi_c.json"), &phi_c)?;
            io::write_coeffs(&out.join("psi_c.json"), &psi_c)?;
            emit(&io::report_table(&rows), &out.join("bep1_report.csv"))?;
        }
        Command::Bep2 => {
            let ctx = cfg.context()?;
            emit(&io::report_table(&cmd_bep2(&ctx, &cfg)?), &out.join("bep2_report.csv"))?;
        }
        Command::EstimateMode {
            data,
            norm_phi,
            norm_tphi,
        } => {
            let ctx = cfg.context()?;
            let t = cmd_estimate_mode(&ctx, &cfg, data.as_deref(), *norm_phi, *norm_tphi)?;
            emit(&t, &out.join("estimates.csv"))?;
        }
        Command::SvdReport => {
            let ctx = cfg.context()?;
            for (name, t) in cmd_svd_report(&ctx)? {
                t.write(&out.join(format!("svd_{name}.csv")))?;
            }
            println!("wrote svd_laplace.csv, svd_plus.csv, svd_minus.csv to {}", out.display());
        }
        Command::Demo => {
            let ctx = cfg.context()?;
            let d = cmd_demo(&ctx, &cfg)?;
            d.write(&out)?;
            print!("{}", d.modes.to_csv()?);
            if !d.all_within_bound {
                eprintln!("mode estimate outside its error bound");
                return Ok(EXIT_INVARIANT);
            }
        }
    }
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(EXIT_OK)
}

fn emit(t: &Table, path: &Path) -> Result<()> {
    t.write(path)?;
    print!("{}", t.to_csv()?);
    Ok(())
}

/// Options of `validate`.
#[derive(Debug, Clone, Default)]
pub struct ValidateOptions {
    pub nmax: usize,
    pub corrupt_degree: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ValidateReport {
    /// `n,single_layer,double_layer,k_plus,k_minus,laplace_single,identity_residual`.
    pub multipliers: Table,
    /// `suite,index,value,tolerance,pass`.
    pub checks: Table,
    pub all_pass: bool,
}

struct Checks {
    table: Table,
    all_pass: bool,
}

impl Checks {
    fn add(&mut self, suite: &str, index: usize, value: f64, tolerance: f64) {
        let pass = value <= tolerance;
        self.all_pass &= pass;
        self.table.push(vec![
            suite.into(),
            index.to_string(),
            fmt_f64(value),
            fmt_f64(tolerance),
            pass.to_string(),
        ]);
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

fn random_coeffs(nmax: usize, rng: &mut ChaCha8Rng, zero_mean: bool) -> ScalarCoeffs {
    let mut v: Vec<f64> = (0..coeff_len(nmax)).map(|_| StandardNormal.sample(rng)).collect();
    if zero_mean {
        v[0] = 0.0;
    }
    ScalarCoeffs::from_values(nmax, v).expect("length")
}

/// Multiplier oracle, operator identity, constants, Hardy orthogonality,
/// decomposition round trip and cap Gram exactness.
pub fn cmd_validate(cfg: &RunConfig, opts: &ValidateOptions) -> Result<ValidateReport> {
    let nmax = opts.nmax;
    let mut table = LayerMultipliers::closed_form(nmax);
    if let Some(d) = opts.corrupt_degree {
        if d > nmax {
            return Err(Error::InvalidArgument(format!("corrupt degree {d} above {nmax}")));
        }
        table.k_plus.lambda[d] *= 1.0 + 1e-3;
    }
    let identity = table.identity_residuals();
    let mut mult = Table::new(&[
        "n",
        "single_layer",
        "double_layer",
        "k_plus",
        "k_minus",
        "laplace_single",
        "identity_residual",
    ]);
    for n in 0..=nmax {
        mult.push(vec![
            n.to_string(),
            fmt_f64(table.single_layer.at(n)),
            fmt_f64(table.double_layer.at(n)),
            fmt_f64(table.k_plus.at(n)),
            fmt_f64(table.k_minus.at(n)),
            fmt_f64(table.laplace_single.at(n)),
            fmt_f64(identity[n]),
        ]);
    }
    let mut checks = Checks {
        table: Table::new(&["suite", "index", "value", "tolerance", "pass"]),
        all_pass: true,
    };

    let oracle = multiplier_oracle(nmax);
    for r in &oracle {
        let n = r.n;
        let dev = rel(r.single_layer, table.single_layer.at(n))
            .max(rel(r.k_minus, table.k_minus.at(n)))
            .max(rel(r.k_plus, table.k_plus.at(n)));
        checks.add("oracle", n, dev, ORACLE_TOLERANCE);
    }
    for (n, r) in identity.iter().enumerate() {
        checks.add("identity", n, *r, 1e-12);
    }
    // constants, from the table and from the kernel oracle
    checks.add("const_k_minus", 0, table.k_minus.at(0).abs(), 1e-12);
    checks.add("const_k_plus", 0, (table.k_plus.at(0) - 1.0).abs(), 1e-12);
    checks.add("const_single_layer", 0, (table.single_layer.at(0) + 1.0).abs(), 1e-12);
    checks.add("const_oracle_single_layer", 0, (oracle[0].single_layer + 1.0).abs(), 1e-12);
    checks.add("const_oracle_k_minus", 0, oracle[0].k_minus.abs(), 1e-12);
    checks.add("const_oracle_k_plus", 0, (oracle[0].k_plus - 1.0).abs(), 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = SphereGrid::for_vector_degree(nmax);
    let mut worst_orth: f64 = 0.0;
    for _ in 0..100 {
        let phi = random_coeffs(nmax, &mut rng, true);
        let psi = random_coeffs(nmax, &mut rng, false);
        let a = apply_bplus(&table, &phi)?.sample(&grid);
        let b = apply_bminus(&table, &psi)?.sample(&grid);
        let scale = (phi.norm() * psi.norm()).max(f64::MIN_POSITIVE);
        worst_orth = worst_orth.max(grid.inner_vector(&a, &b).abs() / scale);
    }
    checks.add("hardy_orthogonality", 100, worst_orth, 1e-10);
    let (mut worst_norm, mut worst_round): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let v = VectorFieldCoeffs::new(
            random_coeffs(nmax, &mut rng, true),
            random_coeffs(nmax, &mut rng, false),
            random_coeffs(nmax, &mut rng, true),
        )?;
        let samples = synthesize(&table, &v)?.sample(&grid);
        let total = grid.inner_vector(&samples, &samples);
        let parts = apply_bplus(&table, &v.phi)?.norm_squared()
            + apply_bminus(&table, &v.psi)?.norm_squared()
            + apply_curl(&v.chi).norm_squared();
        worst_norm = worst_norm.max(rel(total, parts));
        let back = hardy::decompose(&table, &samples, &grid, nmax)?;
        let scale = v.phi.norm().max(v.psi.norm()).max(v.chi.norm());
        worst_round = worst_round.max(back.max_abs_diff(&v) / scale);
    }
    checks.add("norm_identity", 10, worst_norm, 1e-10);
    checks.add("decompose_roundtrip", 10, worst_round, 1e-10);

    // cap Gram against an independent quadrature in theta
    let ctx = build_context(cfg.cap()?, nmax, cfg.n_test.min(nmax), cfg.eps)?;
    let (nodes, weights) = gauss_legendre(2 * nmax + 16, 0.0, cfg.theta_c);
    let tables: Vec<LegendreTable> = nodes.iter().map(|t| LegendreTable::new(nmax, *t)).collect();
    for b in ctx.blocks() {
        let m = b.m.unsigned_abs() as usize;
        let mut worst: f64 = 0.0;
        for (i, &ni) in b.trial_degrees.iter().enumerate() {
            for (j, &nj) in b.trial_degrees.iter().enumerate() {
                let q: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .zip(&tables)
                    .map(|((t, w), tab)| w * t.sin() * tab.value(ni, m) * tab.value(nj, m))
                    .sum();
                worst = worst.max((2.0 * PI * q - b.gram_tt[(i, j)]).abs());
            }
        }
        if b.m >= 0 {
            checks.add("gram_exactness", m, worst, 1e-12);
        }
    }

    Ok(ValidateReport {
        multipliers: mult,
        all_pass: checks.all_pass,
        checks: checks.table,
    })
}

/// Decompose a vector field file.
pub fn cmd_decompose(field: &Path, nmax: usize) -> Result<VectorFieldCoeffs> {
    let (grid, samples) = io::read_vector_grid(field)?;
    let m = derive_multipliers(nmax)?;
    hardy::decompose(&m, &samples, &grid, nmax)
}

/// A generated pair and its field `B+ phi + B- psi` sampled on the field grid.
pub fn cmd_pairgen(cfg: &RunConfig) -> Result<(GraphPair, Table)> {
    let ctx = cfg.context()?;
    let pair = generate_pair(&ctx, cfg.seed, cfg.tail_amplitude)?;
    let grid = cfg.field_grid(cfg.n_trial)?;
    let field = apply_bplus(ctx.multipliers(), &pair.phi)?.add(&apply_bminus(ctx.multipliers(), &pair.psi)?);
    Ok((pair, io::vector_grid_table(&grid, &field.sample(&grid))))
}

/// Unit-norm noise of degree `nmax` from the run's seeded stream.
pub fn noise_direction(nmax: usize, seed: u64) -> ScalarCoeffs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let v = random_coeffs(nmax, &mut rng, false);
    let n = v.norm();
    &v * (1.0 / n)
}

/// Generated pair plus noisy data `phi + noise * eta`.
pub fn noisy_pair(ctx: &LocalityContext, cfg: &RunConfig) -> Result<(GraphPair, ScalarCoeffs)> {
    let pair = generate_pair(ctx, cfg.seed, cfg.tail_amplitude)?;
    let eta = noise_direction(ctx.n_trial(), cfg.seed);
    let f = &pair.phi + &(&eta * cfg.noise);
    Ok((pair, f))
}

fn bep1_bound(cfg: &RunConfig, pair: Option<&GraphPair>, data: &ScalarCoeffs) -> f64 {
    cfg.c.unwrap_or_else(|| {
        cfg.bound_factor * pair.map(|p| p.psi.norm()).unwrap_or_else(|| data.norm())
    })
}

/// `BEP1` on a data file or on a noisy generated pair.
pub fn cmd_bep1(
    ctx: &LocalityContext,
    cfg: &RunConfig,
    data: Option<&Path>,
) -> Result<(Vec<ReportRow>, ScalarCoeffs, ScalarCoeffs)> {
    let (pair, f) = match data {
        Some(p) => (None, io::read_coeffs(p)?),
        None => {
            let (pair, f) = noisy_pair(ctx, cfg)?;
            (Some(pair), f)
        }
    };
    let c = bep1_bound(cfg, pair.as_ref(), &f);
    let sol = solve_bep1(ctx, &f, c)?;
    let (bound, empirical) = match &pair {
        Some(p) => (
            (&p.phi - &f.resized(ctx.n_trial())).norm(),
            cfg.modes
                .iter()
                .map(|&(n, m)| (sol.psi_c.get(n, m) - p.psi.get(n, m)).abs())
                .fold(0.0, f64::max),
        ),
        None => (f64::NAN, f64::NAN),
    };
    let rows = vec![ReportRow {
        case: "bep1".into(),
        c,
        gamma_or_lambda: sol.multiplier,
        saturated: sol.constraint_active,
        objective: sol.objective,
        residual: sol.psi_c.norm(),
        bound,
        empirical_error: empirical,
    }];
    Ok((rows, sol.phi_c, sol.psi_c))
}

/// `BEP2` over `c_grid` for each configured mode.
pub fn cmd_bep2(ctx: &LocalityContext, cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &(n, m) in &cfg.modes {
        let e = ScalarCoeffs::unit(ctx.n_trial(), n, m);
        for &c in &cfg.c_grid {
            let s = solve_bep2(ctx, &e, c)?;
            rows.push(ReportRow {
                case: format!("bep2 {n}:{m}"),
                c,
                gamma_or_lambda: s.gamma,
                saturated: s.saturated,
                objective: s.residual,
                residual: s.normal_residual,
                bound: s.h_norm,
                empirical_error: f64::NAN,
            });
        }
    }
    Ok(rows)
}

/// Best mode estimate over `c_grid`, chosen by the smallest error bound.
pub fn best_estimate(
    ctx: &LocalityContext,
    data: &ScalarCoeffs,
    e: &ScalarCoeffs,
    c_grid: &[f64],
    priors: ModePriors,
) -> Result<(f64, crate::bep::ModeEstimate)> {
    let mut best: Option<(f64, crate::bep::ModeEstimate)> = None;
    for &c in c_grid {
        let est = estimate_mode(ctx, data, e, c, priors)?;
        if best.as_ref().is_none_or(|(_, b)| est.bound < b.bound) {
            best = Some((c, est));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty c_grid".into()))
}

/// Mode estimates from a data file (with explicit priors) or a noisy pair.
pub fn cmd_estimate_mode(
    ctx: &LocalityContext,
    cfg: &RunConfig,
    data: Option<&Path>,
    norm_phi: Option<f64>,
    norm_tphi: Option<f64>,
) -> Result<Table> {
    let (pair, f) = match data {
        Some(p) => (None, io::read_coeffs(p)?),
        None => {
            let (pair, f) = noisy_pair(ctx, cfg)?;
            (Some(pair), f)
        }
    };
    let priors = ModePriors {
        eps_noise: cfg.noise,
        norm_phi: norm_phi.or(pair.as_ref().map(|p| p.phi.norm())).unwrap_or(f.norm() + cfg.noise),
        norm_tphi: match norm_tphi.or(pair.as_ref().map(|p| p.psi.norm())) {
            Some(v) => v,
            None => return Err(Error::InvalidArgument("norm_tphi prior is required with --data".into())),
        },
    };
    let mut t = Table::new(&["n", "m", "c", "estimate", "bound", "truth", "error"]);
    for &(n, m) in &cfg.modes {
        let e = ScalarCoeffs::unit(ctx.n_trial(), n, m);
        let (c, est) = best_estimate(ctx, &f, &e, &cfg.c_grid, priors)?;
        let truth = pair.as_ref().map(|p| p.psi.get(n, m)).unwrap_or(f64::NAN);
        t.push(vec![
            n.to_string(),
            m.to_string(),
            fmt_f64(c),
            fmt_f64(est.estimate),
            fmt_f64(est.bound),
            fmt_f64(truth),
            fmt_f64((est.estimate - truth).abs()),
        ]);
    }
    Ok(t)
}

/// Spectra of `A`, `P (K+1/2)` and `P (K-1/2)` on `D_eps`.
pub fn cmd_svd_report(ctx: &LocalityContext) -> Result<Vec<(&'static str, Table)>> {
    let (nt, ns, tc) = (ctx.n_trial(), ctx.n_test(), ctx.cap().theta_c());
    Ok(vec![
        ("laplace", io::spectrum_table(nt, ns, tc, &laplace_spectrum(ctx))),
        ("plus", io::spectrum_table(nt, ns, tc, &trace_spectrum(ctx, Trace::Plus)?.sigma)),
        ("minus", io::spectrum_table(nt, ns, tc, &trace_spectrum(ctx, Trace::Minus)?.sigma)),
    ])
}

/// Output of the end-to-end run.
#[derive(Debug, Clone)]
pub struct DemoOutput {
    pub pair: GraphPair,
    /// `n,m,true_mode,bep1_mode,bep1_error,estimate,estimate_error,bound,c_mode,within_bound`.
    pub modes: Table,
    pub report: Vec<ReportRow>,
    pub spectra: Vec<(&'static str, Table)>,
    pub all_within_bound: bool,
    pub max_bep1_error: f64,
}

impl DemoOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("pair.json"), io::pair_to_json(&self.pair)?)?;
        self.modes.write(&dir.join("modes.csv"))?;
        io::report_table(&self.report).write(&dir.join("report.csv"))?;
        for (name, t) in &self.spectra {
            t.write(&dir.join(format!("svd_{name}.csv")))?;
        }
        Ok(())
    }
}

/// Generate a pair, perturb `phi`, reconstruct `psi` by `BEP1` and estimate
/// its modes by `BEP2` with error bounds.
pub fn cmd_demo(ctx: &LocalityContext, cfg: &RunConfig) -> Result<DemoOutput> {
    let (pair, f) = noisy_pair(ctx, cfg)?;
    let c = bep1_bound(cfg, Some(&pair), &f);
    let sol = solve_bep1(ctx, &f, c)?;
    let priors = ModePriors {
        eps_noise: cfg.noise,
        norm_phi: pair.phi.norm(),
        norm_tphi: pair.psi.norm(),
    };
    let mut modes = Table::new(&[
        "n",
        "m",
        "true_mode",
        "bep1_mode",
        "bep1_error",
        "estimate",
        "estimate_error",
        "bound",
        "c_mode",
        "within_bound",
    ]);
    let mut report = Vec::new();
    let mut all_within = true;
    let mut max_bep1: f64 = 0.0;
    for &(n, m) in &cfg.modes {
        let e = ScalarCoeffs::unit(ctx.n_trial(), n, m);
        let truth = pair.psi.get(n, m);
        let rec = sol.psi_c.get(n, m);
        let (cm, est) = best_estimate(ctx, &f, &e, &cfg.c_grid, priors)?;
        let err = (est.estimate - truth).abs();
        let within = err <= est.bound;
        all_within &= within;
        max_bep1 = max_bep1.max((rec - truth).abs());
        modes.push(vec![
            n.to_string(),
            m.to_string(),
            fmt_f64(truth),
            fmt_f64(rec),
            fmt_f64((rec - truth).abs()),
            fmt_f64(est.estimate),
            fmt_f64(err),
            fmt_f64(est.bound),
            fmt_f64(cm),
            within.to_string(),
        ]);
        report.push(ReportRow {
            case: format!("bep2 {n}:{m}"),
            c: cm,
            gamma_or_lambda: est.solution.gamma,
            saturated: est.solution.saturated,
            objective: est.solution.residual,
            residual: est.solution.normal_residual,
            bound: est.bound,
            empirical_error: err,
        });
    }
    report.insert(
        0,
        ReportRow {
            case: "bep1".into(),
            c,
            gamma_or_lambda: sol.multiplier,
            saturated: sol.constraint_active,
            objective: sol.objective,
            residual: sol.psi_c.norm(),
            bound: (&pair.phi - &f).norm(),
            empirical_error: max_bep1,
        },
    );
    Ok(DemoOutput {
        pair,
        modes,
        report,
        spectra: cmd_svd_report(ctx)?,
        all_within_bound: all_within,
        max_bep1_error: max_bep1,
    })
}
