//! Configuration files, ledger and snapshot IO, and the invariant suite run
//! by `chns check`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chd::{ModelParams, StepContext};
use crate::coupled::{coupled_step, RunConfig, ScenarioKind, SimState};
use crate::diagnostics::{chemical_potential, free_energy, EnergyLedger, LEDGER_HEADER};
use crate::elliptic::{Elliptic, SolverMode};
use crate::error::{ChnsError, Result};
use crate::grid::{self, div_faces, face_inner, grad_to_faces, l2_inner, laplacian_neumann, GridSpec, MacVelocity, ScalarField};
use crate::potential::PotentialKind;

/// Tolerances of the `check` suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    /// Relative tolerance of the operator identities.
    pub rel_tol: f64,
    pub steps: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-10, steps: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub run: RunConfig,
    pub check: CheckConfig,
    /// Non-fatal findings such as repeated keys.
    pub warnings: Vec<String>,
}

type Entries = BTreeMap<(String, String), (String, usize)>;

fn parse_entries(text: &str, warnings: &mut Vec<String>) -> Result<Entries> {
    let mut entries = Entries::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ChnsError::ConfigParse {
                line: line_no,
                msg: format!("unterminated section header `{line}`"),
            })?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ChnsError::ConfigParse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let sec = section.clone().ok_or_else(|| ChnsError::ConfigParse {
            line: line_no,
            msg: "key outside of any section".into(),
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ChnsError::ConfigParse {
                line: line_no,
                msg: "empty key".into(),
            });
        }
        let value = value.trim().trim_matches('"').to_string();
        if let Some((_, first)) = entries.insert((sec.clone(), key.clone()), (value, line_no)) {
            let msg = format!("duplicate key {sec}.{key} (lines {first} and {line_no}); using the last value");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(entries)
}

/// Error for a config entry; line 0 marks a command-line override.
fn located(line: usize, msg: String) -> ChnsError {
    if line == 0 {
        ChnsError::Config(format!("override: {msg}"))
    } else {
        ChnsError::ConfigParse { line, msg }
    }
}

fn parse_num<T: std::str::FromStr>(sec: &str, key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| located(line, format!("{sec}.{key}: cannot parse `{value}`")))
}

/// Reads `path`, applies `section.key=value` overrides and validates.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| ChnsError::io(path, e))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<Config> {
    let mut warnings = Vec::new();
    let mut entries = parse_entries(text, &mut warnings)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ChnsError::Config(format!("override `{o}` is not KEY=VALUE")))?;
        let (sec, key) = k
            .trim()
            .split_once('.')
            .ok_or_else(|| ChnsError::Config(format!("override key `{k}` is not section.key")))?;
        entries.insert((sec.to_string(), key.to_string()), (v.trim().to_string(), 0));
    }

    let mut nx = 64usize;
    let mut ny = 64usize;
    let mut lx = 32.0;
    let mut ly = 32.0;
    let mut p = ModelParams::default();
    let mut theta = None;
    let mut theta0 = None;
    let mut kind = PotentialKind::Logarithmic;
    let mut check = CheckConfig::default();
    let placeholder = GridSpec::new(4, 4, 1.0, 1.0)?;
    let mut run = RunConfig::new(placeholder, p);

    for ((sec, key), (value, line)) in &entries {
        let (sec, key, value, line) = (sec.as_str(), key.as_str(), value.as_str(), *line);
        macro_rules! num {
            () => {
                parse_num(sec, key, value, line)?
            };
        }
        match (sec, key) {
            ("grid", "nx") => nx = num!(),
            ("grid", "ny") => ny = num!(),
            ("grid", "lx") => lx = num!(),
            ("grid", "ly") => ly = num!(),
            ("params", "potential") => {
                kind = PotentialKind::parse(value).ok_or_else(|| located(line, format!("unknown potential `{value}` (logarithmic or quartic)")))?
            }
            ("params", "theta") => theta = Some(num!()),
            ("params", "theta0") => theta0 = Some(num!()),
            ("params", "chi") => p.chi = num!(),
            ("params", "alpha") => p.alpha = num!(),
            ("params", "beta") => p.beta = num!(),
            ("params", "c0") => p.c0 = num!(),
            ("params", "gamma") => p.gamma = num!(),
            ("params", "nu1") => p.nu1 = num!(),
            ("params", "nu2") => p.nu2 = num!(),
            ("time", "dt") => run.dt = num!(),
            ("time", "t_end") => run.t_end = num!(),
            ("time", "cfl_safety") => run.cfl_safety = num!(),
            ("scenario", "name") => {
                run.scenario.kind = ScenarioKind::parse(value).ok_or_else(|| located(line, format!("unknown scenario `{value}` (spinodal, droplet or drift)")))?
            }
            ("scenario", "seed") => run.seed = num!(),
            ("scenario", "phi_mean") => run.scenario.phi_mean = Some(num!()),
            ("scenario", "sigma_mean") => run.scenario.sigma_mean = num!(),
            ("scenario", "noise") => run.scenario.noise = num!(),
            ("scenario", "radius") => run.scenario.radius = num!(),
            ("scenario", "drift_amplitude") => run.scenario.drift_amplitude = num!(),
            ("output", "ledger_every") => run.output.ledger_every = num!(),
            ("output", "snapshot_every") => run.output.snapshot_every = num!(),
            ("solver", "mode") => {
                run.solver.mode = match value {
                    "spectral" => SolverMode::Spectral,
                    "iterative" | "cg" => SolverMode::Iterative,
                    "dense" => SolverMode::Dense,
                    _ => {
                        return Err(located(line, format!("unknown solver mode `{value}` (spectral, iterative or dense)")))
                    }
                }
            }
            ("solver", "rel_tol") => run.solver.rel_tol = num!(),
            ("solver", "max_iter") => run.solver.max_iter = Some(num!()),
            ("check", "rel_tol") => check.rel_tol = num!(),
            ("check", "steps") => check.steps = num!(),
            _ => {
                return Err(located(line, format!("unknown key {sec}.{key}")));
            }
        }
    }

    p.potential = match kind {
        PotentialKind::Logarithmic => crate::potential::PotentialParams::logarithmic(theta.unwrap_or(1.0), theta0.unwrap_or(2.0)),
        PotentialKind::Quartic => {
            let mut q = crate::potential::PotentialParams::quartic();
            q.theta0 = theta0.unwrap_or(q.theta0);
            q.theta = theta.unwrap_or(q.theta0 - 1.0);
            q
        }
    };
    run.grid = GridSpec::new(nx, ny, lx, ly)?;
    run.params = p;
    run.validate()?;
    if !(check.rel_tol > 0.0) {
        return Err(ChnsError::Config(format!("check.rel_tol must be positive, got {}", check.rel_tol)));
    }
    Ok(Config { run, check, warnings })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ChnsError::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ChnsError::io(path, e))
}

/// One CSV line per row; floats use the shortest representation that parses
/// back to the same value.
pub fn format_ledger_csv(series: &[EnergyLedger]) -> String {
    let mut out = LEDGER_HEADER.join(",");
    out.push('\n');
    for r in series {
        let v = r.values();
        out.push_str(&r.step.to_string());
        for x in &v[1..15] {
            out.push(',');
            out.push_str(&format!("{x:e}"));
        }
        out.push(',');
        out.push_str(&r.newton_iters.to_string());
        out.push('\n');
    }
    out
}

pub fn write_ledger_csv(series: &[EnergyLedger], path: &Path) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(format_ledger_csv(series).as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| ChnsError::io(path, e))
}

pub fn read_ledger_csv(path: &Path) -> Result<Vec<EnergyLedger>> {
    let text = fs::read_to_string(path).map_err(|e| ChnsError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ChnsError::Format(format!("{}: empty ledger", path.display())))?;
    if header != LEDGER_HEADER.join(",") {
        return Err(ChnsError::Format(format!("{}: unexpected ledger header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || ChnsError::Format(format!("{}: malformed row {}", path.display(), i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != LEDGER_HEADER.len() {
            return Err(bad());
        }
        let f = |k: usize| fields[k].parse::<f64>().map_err(|_| bad());
        rows.push(EnergyLedger {
            step: fields[0].parse().map_err(|_| bad())?,
            t: f(1)?,
            kinetic: f(2)?,
            free_energy: f(3)?,
            total_energy: f(4)?,
            diss_visc: f(5)?,
            diss_mu: f(6)?,
            diss_cross: f(7)?,
            oono_work: f(8)?,
            bel_residual: f(9)?,
            mean_phi: f(10)?,
            mean_sigma: f(11)?,
            sep_delta: f(12)?,
            div_inf: f(13)?,
            sigma_l4: f(14)?,
            newton_iters: fields[15].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

pub const SNAPSHOT_MAGIC: &str = "CHNS1";

pub fn encode_snapshot(s: &SimState) -> Vec<u8> {
    let g = s.grid();
    let mut out = format!("{SNAPSHOT_MAGIC} {} {} {:e} {:e} {:e}\n", g.nx, g.ny, g.lx, g.ly, s.t).into_bytes();
    for field in [&s.phi.values, &s.mu.values, &s.sigma.values, &s.pressure.values, &s.vel.u, &s.vel.v] {
        for x in field.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<SimState> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ChnsError::Format("snapshot header not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| ChnsError::Format("snapshot header is not ASCII".into()))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.first() != Some(&SNAPSHOT_MAGIC) {
        return Err(ChnsError::Format(format!("bad snapshot magic `{}`", parts.first().unwrap_or(&""))));
    }
    if parts.len() != 6 {
        return Err(ChnsError::Format(format!("snapshot header has {} fields, expected 6", parts.len())));
    }
    let bad = |what: &str| ChnsError::Format(format!("snapshot header: bad {what}"));
    let nx: usize = parts[1].parse().map_err(|_| bad("nx"))?;
    let ny: usize = parts[2].parse().map_err(|_| bad("ny"))?;
    let lx: f64 = parts[3].parse().map_err(|_| bad("lx"))?;
    let ly: f64 = parts[4].parse().map_err(|_| bad("ly"))?;
    let t: f64 = parts[5].parse().map_err(|_| bad("t"))?;
    let g = GridSpec::new(nx, ny, lx, ly)?;
    let body = &bytes[nl + 1..];
    let counts = [g.n_cells(), g.n_cells(), g.n_cells(), g.n_cells(), g.n_u(), g.n_v()];
    let expected: usize = counts.iter().sum::<usize>() * 8;
    if body.len() != expected {
        return Err(ChnsError::Format(format!("snapshot body has {} bytes, expected {expected}", body.len())));
    }
    let mut fields = Vec::with_capacity(6);
    let mut off = 0;
    for n in counts {
        let v: Vec<f64> = body[off..off + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        off += 8 * n;
        fields.push(v);
    }
    let mut it = fields.into_iter();
    let mut next = || it.next().expect("six fields");
    let scalar = |values| ScalarField { grid: g, values };
    Ok(SimState {
        phi: scalar(next()),
        mu: scalar(next()),
        sigma: scalar(next()),
        pressure: scalar(next()),
        vel: MacVelocity { grid: g, u: next(), v: next() },
        t,
        step: 0,
    })
}

pub fn write_snapshot(s: &SimState, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(&encode_snapshot(s))
        .and_then(|_| f.flush())
        .map_err(|e| ChnsError::io(path, e))
}

/// Reads a snapshot; the step counter is not stored and comes back as 0.
pub fn read_snapshot(path: &Path) -> Result<SimState> {
    let bytes = fs::read(path).map_err(|e| ChnsError::io(path, e))?;
    decode_snapshot(&bytes).map_err(|e| match e {
        ChnsError::Format(msg) => ChnsError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Snapshot file name used for step `step` inside a run's `snapshots/` dir.
pub fn snapshot_name(step: usize) -> String {
    format!("step_{step:08}.chns")
}

/// Snapshots in `dir`, sorted by time.
pub fn read_snapshot_dir(dir: &Path) -> Result<Vec<(PathBuf, SimState)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| ChnsError::io(dir, e))? {
        let path = entry.map_err(|e| ChnsError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("chns") {
            let s = read_snapshot(&path)?;
            out.push((path, s));
        }
    }
    out.sort_by(|a, b| a.1.t.total_cmp(&b.1.t));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: value <= tol,
        detail: format!("{value:.3e} (tolerance {tol:.1e})"),
    }
}

fn random_field(g: GridSpec, rng: &mut ChaCha8Rng, amp: f64) -> ScalarField {
    ScalarField {
        grid: g,
        values: (0..g.n_cells()).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// The fast invariant suite: operator identities, a free-energy gradient
/// check and the mean laws over a few coupled steps. Every check runs; the
/// caller reports the first failure.
pub fn run_checks(cfg: &Config) -> Result<Vec<CheckOutcome>> {
    let run = &cfg.run;
    let g = run.grid;
    let p = run.params;
    let tol = cfg.check.rel_tol;
    let ell = Elliptic::new(g, run.solver)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut out = Vec::new();

    let f = random_field(g, &mut rng, 1.0);
    let h = random_field(g, &mut rng, 1.0);
    let mut w = MacVelocity::zeros(g);
    w.u.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    w.v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    w.enforce_no_penetration();

    let gf = grad_to_faces(&f);
    let lhs = face_inner(&gf, &w)?;
    let rhs = -l2_inner(&f, &div_faces(&w))?;
    let scale = face_inner(&gf, &gf)?.sqrt() * face_inner(&w, &w)?.sqrt();
    out.push(outcome("gradient/divergence adjointness", (lhs - rhs).abs() / scale, tol));

    let a = l2_inner(&laplacian_neumann(&f), &h)?;
    let b = l2_inner(&f, &laplacian_neumann(&h))?;
    out.push(outcome("Neumann Laplacian self-adjointness", (a - b).abs() / a.abs().max(b.abs()), tol));

    let fz = f.zero_mean();
    let nf = ell.inverse_neumann_laplacian(&fz)?;
    let back = laplacian_neumann(&nf).scale(-1.0).axpy(-1.0, &fz);
    out.push(outcome("inverse Laplacian round trip", back.max_abs() / fz.max_abs(), tol.max(1e-12)));

    let gn = grad_to_faces(&nf);
    let grad_form = face_inner(&gn, &gn)?;
    let quad_form = l2_inner(&fz, &nf)?;
    out.push(outcome("dual norm identity", (grad_form - quad_form).abs() / quad_form, tol));

    // central differences of the free energy against the assembled μ
    let bound = if p.potential.is_singular() { 0.9 } else { 1.2 };
    let phi = random_field(g, &mut rng, bound);
    let sigma = random_field(g, &mut rng, 1.0);
    let delta = random_field(g, &mut rng, 1.0).zero_mean();
    let step = 1e-5;
    let fp = free_energy(&phi.axpy(step, &delta), &sigma, &p, &ell)?;
    let fm = free_energy(&phi.axpy(-step, &delta), &sigma, &p, &ell)?;
    let fd = (fp - fm) / (2.0 * step);
    let exact = l2_inner(&chemical_potential(&phi, &sigma, &p, &ell)?, &delta)?;
    out.push(outcome("free-energy gradient", (fd - exact).abs() / exact.abs().max(1e-300), 1e-6));

    let ctx = StepContext::new(g, run.solver)?;
    let mut s = run.scenario.initial_state(g, &p, run.seed, &ell)?;
    let (phi0, sigma0) = (grid::mean(&s.phi), grid::mean(&s.sigma));
    let mut phi_dev = 0.0_f64;
    let mut sigma_dev = 0.0_f64;
    let mut bound_ok = true;
    let mut factor = 1.0;
    let dt = run.dt;
    for _ in 0..cfg.check.steps {
        let (next, _) = if run.scenario.kind == ScenarioKind::Drift {
            crate::chd::chd_step(&ctx, &s, &s.vel, &p, dt, None).map(|(n, r)| (n, r.newton_iters))?
        } else {
            coupled_step(&ctx, &s, &p, dt).map(|(n, r)| (n, r.chd.newton_iters))?
        };
        s = next;
        factor /= 1.0 + p.alpha * dt;
        let expected = p.c0 + (phi0 - p.c0) * factor;
        phi_dev = phi_dev.max((grid::mean(&s.phi) - expected).abs());
        sigma_dev = sigma_dev.max((grid::mean(&s.sigma) - sigma0).abs());
        if p.potential.is_singular() && s.phi.max_abs() > crate::chd::PHASE_BOUND {
            bound_ok = false;
        }
    }
    let phi_scale = (phi0 - p.c0).abs().max(1.0);
    out.push(outcome("phase mean law", phi_dev / phi_scale, 1e-9));
    out.push(outcome("nutrient mean conservation", sigma_dev, 1e-11 * sigma0.abs().max(1.0)));
    out.push(CheckOutcome {
        name: "strict phase bound",
        passed: bound_ok,
        detail: format!("max|phi| = {:.6}", s.phi.max_abs()),
    });
    Ok(out)
}
