use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use symred::central_force::{
    self, align_initial_frame, builtin_hamiltonian, integrate_reduced, integrate_reduced_every, reconstruct_orbit,
    RelativePeriodicity,
};
use symred::linalg::{numerical_rank, seeded_rng};
use symred::poisson::{self, IntegratorConfig, Method, Trajectory};
use symred::portrait::{self, LeafKind};
use symred::rigid_body::{self, Attitude, FullRigidState, InertiaTensor};
use symred::sp2k::{self, ManyBodyState, Sp2kDualPoint};
use symred::verify::{self, Suite};

use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

/// Time stepping shared by the simulation commands.
#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct Stepping {
    /// Final time.
    #[arg(long = "t", allow_hyphen_values = true)]
    pub t: Option<f64>,
    /// Step size (shrunk to land exactly on the final time).
    #[arg(long = "h", allow_hyphen_values = true)]
    pub h: Option<f64>,
    /// `implicit_midpoint` (or `midpoint`) or `rk4`.
    #[arg(long)]
    pub method: Option<String>,
    /// Newton tolerance of the implicit solver.
    #[arg(long)]
    pub newton_tol: Option<f64>,
    /// Keep every N-th sample in the output.
    #[arg(long)]
    pub every: Option<usize>,
}

impl Stepping {
    fn resolve(&self, t: f64, h: f64) -> CliResult<(f64, IntegratorConfig, usize)> {
        let mut cfg = IntegratorConfig::default();
        if let Some(m) = &self.method {
            cfg.method = Method::from_str(m)?;
        }
        cfg.step = self.h.unwrap_or(h);
        if let Some(tol) = self.newton_tol {
            cfg.newton_tol = tol;
        }
        cfg.validate()?;
        let t = self.t.unwrap_or(t);
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Config(format!("--t must be positive, got {t}")));
        }
        let every = self.every.unwrap_or(1);
        if every == 0 {
            return Err(CliError::Config("--every must be at least 1".into()));
        }
        Ok((t, cfg, every))
    }
}

fn vec3(flag: &str, v: &Option<Vec<f64>>, default: [f64; 3]) -> CliResult<Vector3<f64>> {
    match v {
        None => Ok(Vector3::from(default)),
        Some(v) if v.len() == 3 => Ok(Vector3::new(v[0], v[1], v[2])),
        Some(v) => Err(CliError::Config(format!("--{flag} needs 3 comma-separated values, got {}", v.len()))),
    }
}

fn inertia(v: &Option<Vec<f64>>) -> CliResult<InertiaTensor> {
    let i = vec3("inertia", v, [3.0, 2.0, 1.0])?;
    Ok(InertiaTensor::new(i.x, i.y, i.z)?)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}"))),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_output(Some(path), text.as_bytes())
}

/// Keeps every `every`-th row and the last one.
fn thin(traj: &Trajectory, every: usize) -> Trajectory {
    if every <= 1 {
        return traj.clone();
    }
    let mut out = Trajectory::new(traj.labels.clone());
    out.declare_audits(&traj.audits.iter().map(|a| a.name.clone()).collect::<Vec<_>>());
    let last = traj.len().saturating_sub(1);
    for i in (0..traj.len()).filter(|i| i % every == 0 || *i == last) {
        let values: Vec<f64> = traj.audits.iter().map(|a| a.values[i]).collect();
        out.push(traj.times[i], traj.states[i].clone(), &values);
    }
    out
}

fn warn(traj: &Trajectory) {
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
}

// ------------------------------------------------------------ simulate-rigid

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct RigidArgs {
    /// Principal moments I1 >= I2 >= I3 > 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub inertia: Option<Vec<f64>>,
    /// Initial body angular momentum.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub m0: Option<Vec<f64>>,
    /// Also integrate the attitude (columns m, Q and spatial momentum).
    #[arg(long)]
    pub full: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub stepping: Stepping,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate_rigid(a: &RigidArgs) -> CliResult {
    let inertia = inertia(&a.inertia)?;
    let m0 = vec3("m0", &a.m0, [0.2, 1.0, 0.3])?;
    let (t, cfg, every) = a.stepping.resolve(10.0, 1e-3)?;
    let traj = if a.full {
        let s0 = FullRigidState::new(Attitude::identity(), m0);
        thin(&rigid_body::integrate_full(&inertia, &s0, t, &cfg)?.to_trajectory(), every)
    } else {
        let sys = rigid_body::rigid_body_structure(&inertia);
        let w0 = DVector::from_column_slice(m0.as_slice());
        let mut traj = poisson::integrate_every(&sys.structure, &sys.hamiltonian, &w0, t, &cfg, every)?;
        traj.labels = vec!["m1".into(), "m2".into(), "m3".into()];
        traj
    };
    warn(&traj);
    write_output(a.out.as_deref(), traj.to_csv().as_bytes())
}

// ------------------------------------------------------------ hammer

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct HammerArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub inertia: Option<Vec<f64>>,
    /// Initial body angular momentum; defaults to a throw about axis 2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub m0: Option<Vec<f64>>,
    /// Throw about each principal axis in turn (report only).
    #[arg(long)]
    pub all_axes: bool,
    /// Off-axis perturbation used with --all-axes.
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub stepping: Stepping,
    /// CSV of attitude frames (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON flip report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn hammer(a: &HammerArgs) -> CliResult {
    let inertia = inertia(&a.inertia)?;
    let (t, cfg, every) = a.stepping.resolve(100.0, 1e-3)?;
    if a.all_axes {
        let eps = a.eps.unwrap_or(1e-3);
        let magnitude = a.m0.as_ref().map_or(1.0, |m| m.iter().fold(0.0, |x: f64, y| x.max(y.abs())));
        let reports = rigid_body::hammer_experiment(&inertia, magnitude, eps, t, &cfg)?;
        for r in &reports {
            eprintln!(
                "axis {}: {:?}, max direction deviation {:.3e}",
                r.launch_axis, r.behaviour, r.max_direction_deviation
            );
        }
        let value = serde_json::to_value(&reports).map_err(|e| CliError::Io(e.to_string()))?;
        return match &a.report {
            Some(p) => write_json(p, &value),
            None => write_output(None, format!("{}\n", serde_json::to_string_pretty(&value).unwrap_or_default()).as_bytes()),
        };
    }
    let m0 = vec3("m0", &a.m0, [1e-3, 1.0, 1e-3])?;
    let s0 = FullRigidState::new(Attitude::identity(), m0);
    let (traj, report) = rigid_body::hammer_throw(&inertia, &s0, t, &cfg)?;
    match report.twists.first() {
        Some(tw) => eprintln!(
            "flip: first sign change at t = {:?}, twist angle {:.6} rad over [{:.4}, {:.4}]",
            report.first_sign_change, tw.angle, tw.t_start, tw.t_end
        ),
        None => eprintln!("no flip: {:?}", report.behaviour),
    }
    if let Some(p) = &a.report {
        write_json(p, &serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?)?;
    }
    write_output(a.out.as_deref(), thin(&traj.to_trajectory(), every).to_csv().as_bytes())
}

// ------------------------------------------------------------ simulate-reduced

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct ReducedArgs {
    /// One of kepler, homoclinic, homoclinic_linear, cosine.
    #[arg(long)]
    pub hamiltonian: Option<String>,
    /// Initial invariants (|q|^2, q.p, |p|^2).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub w0: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub stepping: Stepping,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate_reduced(a: &ReducedArgs) -> CliResult {
    let h = builtin_hamiltonian(a.hamiltonian.as_deref().unwrap_or("kepler"))?;
    let w0 = vec3("w0", &a.w0, [1.0, 0.0, 1.0])?;
    let (t, cfg, every) = a.stepping.resolve(10.0, 1e-3)?;
    let traj = integrate_reduced_every(h, &w0, t, &cfg, every)?;
    warn(&traj);
    write_output(a.out.as_deref(), traj.to_csv().as_bytes())
}

// ------------------------------------------------------------ reconstruct

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub hamiltonian: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub w0: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub stepping: Stepping,
    /// CSV with columns qx..pz, theta (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON with the momentum, its drift and the first-return analysis.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn reconstruct(a: &ReconstructArgs) -> CliResult {
    let name = a.hamiltonian.as_deref().unwrap_or("kepler");
    let h = builtin_hamiltonian(name)?;
    let w0 = vec3("w0", &a.w0, [1.0, 0.0, 1.0])?;
    let (t, cfg, every) = a.stepping.resolve(10.0, 1e-3)?;
    let (z0, mu) = align_initial_frame(&w0)?;
    let reduced = integrate_reduced(h.clone(), &w0, t, &cfg)?;
    let rec = reconstruct_orbit(h.as_ref(), &reduced, mu.norm())?;
    let periodicity = match central_force::detect_relative_periodic(h.as_ref(), &reduced, mu.norm())? {
        RelativePeriodicity::FixedPoint => json!({ "kind": "relative_equilibrium" }),
        RelativePeriodicity::Periodic { period, phase } => {
            json!({ "kind": "relative_periodic", "period": period, "phase": phase })
        }
        RelativePeriodicity::NoReturn => json!({ "kind": "no_return" }),
    };
    eprintln!("momentum drift {:.3e}; {}", rec.momentum_drift(), periodicity);
    if let Some(p) = &a.report {
        let report = json!({
            "hamiltonian": name,
            "w0": w0.as_slice(),
            "q0": z0.q.as_slice(),
            "p0": z0.p.as_slice(),
            "mu": rec.mu.as_slice(),
            "momentum_drift": rec.momentum_drift(),
            "periodicity": periodicity,
        });
        write_json(p, &report)?;
    }
    write_output(a.out.as_deref(), thin(&rec.to_trajectory(), every).to_csv().as_bytes())
}

// ------------------------------------------------------------ portrait

/// `auto` or explicit H-levels.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum LevelSpec {
    List(Vec<f64>),
    Text(String),
}

impl FromStr for LevelSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(LevelSpec::Text(s.to_string()))
    }
}

impl LevelSpec {
    fn explicit(&self) -> CliResult<Option<Vec<f64>>> {
        match self {
            LevelSpec::List(v) => Ok(Some(v.clone())),
            LevelSpec::Text(s) if s.trim() == "auto" => Ok(None),
            LevelSpec::Text(s) => s
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("--levels must be `auto` or numbers, got `{s}`"))),
        }
    }
}

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct PortraitArgs {
    /// A reduced Hamiltonian, or `rigid` for the rigid-body energy.
    #[arg(long)]
    pub hamiltonian: Option<String>,
    /// Casimir value: w1 w3 - w2^2, or |m|^2 for the rigid body.
    #[arg(long, allow_hyphen_values = true)]
    pub casimir: Option<f64>,
    /// auto, hyperboloid, cone, plane or sphere.
    #[arg(long)]
    pub chart: Option<String>,
    /// `auto` or comma-separated H values.
    #[arg(long, allow_hyphen_values = true)]
    pub levels: Option<LevelSpec>,
    /// Upper grid quantile used by `--levels auto` (default 0.5).
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Grid nodes per chart axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Side of the plotted region in w-space.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Chart rectangle u0,u1,v0,v1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub domain: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub inertia: Option<Vec<f64>>,
    /// svg or csv; inferred from the --out extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn portrait(a: &PortraitArgs) -> CliResult {
    let name = a.hamiltonian.as_deref().unwrap_or("kepler");
    let casimir = a.casimir.unwrap_or(if name == "rigid" { 1.0 } else { 0.6 });
    let (h, auto_kind) = if name == "rigid" {
        if casimir <= 0.0 {
            return Err(symred::Error::NoLeaf(casimir).into());
        }
        let kind = LeafKind::Sphere { radius: casimir.sqrt() };
        (rigid_body::rigid_body_structure(&inertia(&a.inertia)?).hamiltonian, kind)
    } else {
        let kind = if casimir == 0.0 { LeafKind::Cone } else { LeafKind::Hyperboloid { c: casimir } };
        (central_force::as_smooth_function(builtin_hamiltonian(name)?), kind)
    };
    let kind = match a.chart.as_deref().unwrap_or("auto") {
        "auto" => auto_kind,
        "sphere" if name == "rigid" => auto_kind,
        "hyperboloid" | "cone" if name != "rigid" => auto_kind,
        "plane" if name != "rigid" => LeafKind::PlaneChart { c: casimir },
        other => return Err(CliError::Config(format!("chart `{other}` does not fit Hamiltonian `{name}`"))),
    };
    let domain = match &a.domain {
        None => None,
        Some(d) if d.len() == 4 => Some(portrait::ChartDomain::new((d[0], d[1]), (d[2], d[3]))?),
        Some(_) => return Err(CliError::Config("--domain needs u0,u1,v0,v1".into())),
    };
    let extent = a.extent.unwrap_or_else(|| if name == "rigid" { 1.0 } else { portrait::plot_extent(name) });
    let chart = portrait::make_chart(kind, domain, extent)?;
    let grid = a.grid.unwrap_or(portrait::DEFAULT_GRID);
    let levels = match a.levels.as_ref().map(LevelSpec::explicit).transpose()?.flatten() {
        Some(l) => l,
        None => portrait::auto_levels(&chart, &h, grid, a.quantile.unwrap_or(portrait::DEFAULT_LEVEL_QUANTILE))?,
    };
    let cs = portrait::extract_contours(&chart, &h, &levels, (grid, grid))?;
    if let Some(c) = cs.degenerate {
        eprintln!("warning: H is constant ({c}) on this chart; no contours");
    }
    for m in &cs.markers {
        eprintln!("{:?} at w = {:?}, H = {}", m.kind, m.point, m.energy);
    }
    let format = match (&a.format, &a.out) {
        (Some(f), _) => f.clone(),
        (None, Some(p)) if p.extension().is_some_and(|e| e == "csv") => "csv".into(),
        _ => "svg".into(),
    };
    let bytes = match format.as_str() {
        "svg" => {
            let style = portrait::SvgStyle {
                title: format!("{name}, Casimir {casimir}"),
                ..Default::default()
            };
            portrait::emit_svg(&cs, &style)
        }
        "csv" => portrait::emit_csv(&cs),
        other => return Err(CliError::Config(format!("unknown format `{other}` (svg or csv)"))),
    };
    write_output(a.out.as_deref(), &bytes)
}

// ------------------------------------------------------------ nbody-reduce

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct NbodyArgs {
    /// Dimension of the configuration space of each body.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of bodies.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub masses: Option<Vec<f64>>,
    /// linear, harmonic or newton.
    #[arg(long)]
    pub potential: Option<String>,
    /// Positions, body by body (k*n values); random when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    /// Momenta, body by body (k*n values).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,
    /// Seed for the random initial state and the rank audit.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Do not move to the centre-of-mass frame.
    #[arg(long)]
    pub keep_com: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub stepping: Stepping,
    /// CSV of the flattened 2k x 2k matrix X over time.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON audit: dimensions, ranks and conservation.
    #[arg(long, alias = "audit")]
    pub report: Option<PathBuf>,
}

pub fn nbody_reduce(a: &NbodyArgs) -> CliResult {
    let (n, k) = (a.n.unwrap_or(3), a.k.unwrap_or(2));
    if n == 0 || k == 0 {
        return Err(CliError::Config("--n and --k must be positive".into()));
    }
    let masses = a.masses.clone().unwrap_or_else(|| vec![1.0; k]);
    if masses.len() != k {
        return Err(CliError::Config(format!("--masses needs {k} values, got {}", masses.len())));
    }
    let potential = a.potential.as_deref().unwrap_or("harmonic");
    let h = sp2k::builtin_pairwise(&masses, potential)?;
    let seed = a.seed.unwrap_or(verify::DEFAULT_SEED);
    let (t, cfg, every) = a.stepping.resolve(10.0, 1e-2)?;

    let state = match (&a.q, &a.p) {
        (None, None) => ManyBodyState::random(n, k, &mut seeded_rng(seed)),
        (Some(q), Some(p)) if q.len() == n * k && p.len() == n * k => {
            let bodies = |v: &[f64]| v.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
            ManyBodyState::from_bodies(&bodies(q), &bodies(p))?
        }
        _ => return Err(CliError::Config(format!("--q and --p need {} values each", n * k))),
    };
    let state = if a.keep_com { state } else { sp2k::remove_center_of_mass(&state, &masses)? };
    let x0 = sp2k::momentum_map_phi(&state);
    let traj = sp2k::integrate_coadjoint(&h, &x0, n, t, &cfg)?;

    let mut labels = Vec::new();
    for r in 1..=2 * k {
        for c in 1..=2 * k {
            labels.push(format!("X{r}_{c}"));
        }
    }
    let mut flat = Trajectory::new(labels);
    flat.declare_audits(&traj.audits.iter().map(|a| a.name.clone()).collect::<Vec<_>>());
    for (i, (time, xi)) in traj.times.iter().zip(&traj.states).enumerate() {
        let x = Sp2kDualPoint::from_xi(xi, k)?.assemble();
        let row_major: Vec<f64> = (0..2 * k).flat_map(|r| (0..2 * k).map(move |c| (r, c))).map(|rc| x[rc]).collect();
        let values: Vec<f64> = traj.audits.iter().map(|a| a.values[i]).collect();
        flat.push(*time, DVector::from_vec(row_major), &values);
    }

    let drift: serde_json::Map<String, serde_json::Value> =
        traj.audits.iter().map(|a| (a.name.clone(), json!(a.max_drift()))).collect();
    eprintln!("conservation drift: {}", serde_json::Value::Object(drift.clone()));
    if let Some(p) = &a.report {
        let audit = sp2k::phi_rank_audit_with_seed(n, k, seed)?;
        let report = json!({
            "n": n,
            "k": k,
            "masses": masses,
            "potential": potential,
            "seed": seed,
            "center_of_mass_removed": !a.keep_com,
            "jacobian_rank_at_initial_state": numerical_rank(&sp2k::phi_jacobian(&state)),
            "rank_audit": audit,
            "drift": drift,
        });
        write_json(p, &report)?;
    }
    write_output(a.out.as_deref(), thin(&flat, every).to_csv().as_bytes())
}

// ------------------------------------------------------------ verify

#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default)]
pub struct VerifyArgs {
    /// structure, dynamics, reduction, portrait or all.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with every check result.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn verify(a: &VerifyArgs) -> CliResult {
    let suite = Suite::from_str(a.suite.as_deref().unwrap_or("all"))?;
    let results = verify::run_suite(suite, a.seed.unwrap_or(verify::DEFAULT_SEED));
    write_output(None, verify::format_table(&results).as_bytes())?;
    if let Some(p) = &a.report {
        write_json(p, &serde_json::to_value(&results).map_err(|e| CliError::Io(e.to_string()))?)?;
    }
    match results.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}
