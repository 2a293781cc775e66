//! TOML run configuration.
//!
//! Quantities with a physical dimension accept either a bare number in the
//! base unit (ns for times, GHz for energies, rates and temperatures, with
//! ħ = k_B = 1) or a `"value unit"` string. Parsing walks every section and
//! reports all problems at once, including unknown keys.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::ame::{FeedbackKind, FeedbackSpec, PulseBasis};
use crate::fluctuators::{FluctuatorCount, FluctuatorEnsembleSpec};
use crate::model::{Axis, IsingProblem, Protocol, ProtocolKind, Representation, Topology, DEFAULT_QUBIT_CAP};
use crate::spectral::DEFAULT_OMEGA_TOL;
use crate::svmc::Variant;

/// 12.1 mK corresponds to 1.57 GHz.
pub const GHZ_PER_MK: f64 = 1.57 / 12.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Time,
    /// Energy, frequency, rate and temperature share GHz.
    Energy,
}

impl Dimension {
    fn label(self) -> &'static str {
        match self {
            Dimension::Time => "a time unit (ns, us, ...)",
            Dimension::Energy => "an energy unit (GHz, MHz, mK, ...)",
        }
    }
}

fn unit_scale(dim: Dimension, unit: &str) -> Option<f64> {
    match (dim, unit) {
        (Dimension::Time, "ns" | "sweeps") => Some(1.0),
        (Dimension::Time, "ps") => Some(1e-3),
        (Dimension::Time, "us") => Some(1e3),
        (Dimension::Time, "ms") => Some(1e6),
        (Dimension::Energy, "GHz") => Some(1.0),
        (Dimension::Energy, "MHz") => Some(1e-3),
        (Dimension::Energy, "kHz") => Some(1e-6),
        (Dimension::Energy, "mK") => Some(GHZ_PER_MK),
        (Dimension::Energy, "K") => Some(1e3 * GHZ_PER_MK),
        _ => None,
    }
}

/// Parses `"12.1 mK"` style strings into the base unit.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let mut parts = text.split_whitespace();
    let (Some(num), Some(unit), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected \"<number> <unit>\", got {text:?}"));
    };
    let v: f64 = num.parse().map_err(|_| format!("bad number {num:?}"))?;
    let scale = unit_scale(dim, unit).ok_or_else(|| format!("unit {unit:?} is not {}", dim.label()))?;
    Ok(v * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Ame,
    Traj,
    Fluct,
    Svmc,
    Sweep,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Ame => "ame",
            Engine::Traj => "traj",
            Engine::Fluct => "fluct",
            Engine::Svmc => "svmc",
            Engine::Sweep => "sweep",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Engine::Ame, Engine::Traj, Engine::Fluct, Engine::Svmc, Engine::Sweep].into_iter().find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Chain { n: usize, h: f64, j: f64 },
    Ising(IsingProblem),
    PSpin { n: usize, p: u32, representation: Representation },
}

impl ProblemSpec {
    pub fn n_qubits(&self) -> usize {
        match self {
            ProblemSpec::Chain { n, .. } | ProblemSpec::PSpin { n, .. } => *n,
            ProblemSpec::Ising(p) => p.n_qubits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Linear { a0: f64, b1: f64 },
    Bundled,
    /// CSV with columns `s,A,B` (GHz).
    Table(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Ground state of H at t = 0.
    Ground,
    /// Ground state of the driver, |+⟩^N.
    Plus,
    /// Computational basis state, bit 0 = up, qubit 0 first.
    Pattern(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathSection {
    pub coupling: f64,
    pub cutoff: f64,
    pub temperature: f64,
    pub topology: Topology,
    pub axis: Axis,
    pub lamb_shift: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseDrive {
    /// No system Hamiltonian: pure dephasing of the initial state.
    Idle,
    Anneal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSection {
    pub spec: FluctuatorEnsembleSpec,
    pub axis: Axis,
    pub drive: NoiseDrive,
    pub max_substep: f64,
    pub fresh_parameters: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmcSection {
    pub variant: Variant,
    pub temperature: f64,
    pub random_order: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericSection {
    pub rtol: f64,
    pub atol: f64,
    /// Trajectories, realizations or SVMC samples.
    pub samples: usize,
    pub workers: Option<usize>,
    pub output_points: usize,
    pub bootstrap: usize,
    pub omega_tol: f64,
    pub levels: usize,
    /// Success states; defaults to the problem's ground states.
    pub targets: Option<Vec<usize>>,
    /// Desired confidence for time-to-solution columns.
    pub tts_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    SInv,
    Tau,
    Gamma,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::SInv => "s_inv",
            SweepParameter::Tau => "tau",
            SweepParameter::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub engine: Engine,
    pub parameter: SweepParameter,
    /// Grid values in base units.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSection {
    pub workers: Vec<usize>,
    pub speedup_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub engine: Engine,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub schedule: ScheduleSpec,
    pub protocol: Protocol,
    pub initial: InitialState,
    pub bath: BathSection,
    pub feedback: Option<FeedbackSpec>,
    pub noise: NoiseSection,
    pub svmc: SvmcSection,
    pub numeric: NumericSection,
    pub sweep: Option<SweepSection>,
    pub output_dir: PathBuf,
    pub bench: BenchSection,
}

/// Every problem found while parsing, in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    seen: BTreeSet<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str, errs: &mut Vec<String>) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                errs.push(format!("[{name}] must be a table"));
                None
            }
        };
        Self { name, table, seen: BTreeSet::new() }
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn bad(&self, key: &str, what: &str, errs: &mut Vec<String>) {
        errs.push(format!("{}.{key}: {what}", self.name));
    }

    fn num(&mut self, key: &'static str, default: f64, errs: &mut Vec<String>) -> f64 {
        match self.raw(key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.bad(key, "expected a number", errs);
                default
            }
        }
    }

    fn opt_num(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<f64> {
        match self.raw(key) {
            None => None,
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.bad(key, "expected a number", errs);
                None
            }
        }
    }

    fn qty(&mut self, key: &'static str, dim: Dimension, default: f64, errs: &mut Vec<String>) -> f64 {
        match self.raw(key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(Value::String(s)) => parse_quantity(s, dim).unwrap_or_else(|e| {
                self.bad(key, &e, errs);
                default
            }),
            Some(_) => {
                self.bad(key, "expected a number or \"<number> <unit>\"", errs);
                default
            }
        }
    }

    fn uint(&mut self, key: &'static str, default: usize, errs: &mut Vec<String>) -> usize {
        self.opt_uint(key, errs).unwrap_or(default)
    }

    fn opt_uint(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<usize> {
        match self.raw(key) {
            None => None,
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as usize),
            Some(_) => {
                self.bad(key, "expected a non-negative integer", errs);
                None
            }
        }
    }

    fn boolean(&mut self, key: &'static str, default: bool, errs: &mut Vec<String>) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.bad(key, "expected true or false", errs);
                default
            }
        }
    }

    fn string(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<&'a str> {
        match self.raw(key) {
            None => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.bad(key, "expected a string", errs);
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &'static str, options: &[(&str, T)], default: T, errs: &mut Vec<String>) -> T {
        let Some(s) = self.string(key, errs) else { return default };
        match options.iter().find(|(n, _)| *n == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.bad(key, &format!("unknown value {s:?}, expected one of {names:?}"), errs);
                default
            }
        }
    }

    fn array(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<&'a Vec<Value>> {
        match self.raw(key) {
            None => None,
            Some(Value::Array(a)) => Some(a),
            Some(_) => {
                self.bad(key, "expected an array", errs);
                None
            }
        }
    }

    fn finish(self, errs: &mut Vec<String>) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.seen.contains(k.as_str()) {
                    errs.push(format!("unknown key {}.{k}", self.name));
                }
            }
        }
    }
}

fn value_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

const SECTIONS: [&str; 11] =
    ["model", "protocol", "initial", "bath", "feedback", "noise", "svmc", "numeric", "sweep", "output", "bench"];

const AXES: [(&str, Axis); 3] = [("x", Axis::X), ("y", Axis::Y), ("z", Axis::Z)];

const PROTOCOLS: [(&str, ProtocolKind); 5] = [
    ("forward", ProtocolKind::Forward),
    ("ira", ProtocolKind::Ira),
    ("ira_experimental", ProtocolKind::IraExperimental),
    ("ara", ProtocolKind::Ara),
    ("fixed", ProtocolKind::FixedPoint),
];

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![e.to_string()]))?;
    from_table(&root)
}

/// Like [`parse_config`] with the seed and worker count replaced first.
pub fn parse_config_with(text: &str, seed: Option<u64>, workers: Option<usize>) -> Result<RunConfig, ConfigErrors> {
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![e.to_string()]))?;
    if let Some(s) = seed {
        root.insert("seed".into(), Value::Integer(s as i64));
    }
    if let Some(w) = workers {
        let numeric = root.entry("numeric").or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = numeric {
            t.insert("workers".into(), Value::Integer(w as i64));
        }
    }
    from_table(&root)
}

pub fn from_table(root: &Table) -> Result<RunConfig, ConfigErrors> {
    let mut errs = Vec::new();
    for k in root.keys() {
        if k != "engine" && k != "seed" && !SECTIONS.contains(&k.as_str()) {
            errs.push(format!("unknown key {k}"));
        }
    }
    let engine = match root.get("engine") {
        Some(Value::String(s)) => Engine::parse(s).unwrap_or_else(|| {
            errs.push(format!("engine: unknown engine {s:?}, expected ame, traj, fluct, svmc or sweep"));
            Engine::Ame
        }),
        Some(_) => {
            errs.push("engine: expected a string".into());
            Engine::Ame
        }
        None => {
            errs.push("engine is required".into());
            Engine::Ame
        }
    };
    let seed = match root.get("seed") {
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => {
            errs.push("seed: expected a non-negative integer".into());
            0
        }
        None => {
            errs.push("seed is required".into());
            0
        }
    };

    // [model]
    let mut m = Section::new(root, "model", &mut errs);
    let kind = m.choice("problem", &[("chain", 0), ("ising", 1), ("pspin", 2)], 0, &mut errs);
    let n = m.uint("qubits", 1, &mut errs);
    let problem = match kind {
        0 => ProblemSpec::Chain { n, h: m.num("h", 0.25, &mut errs), j: m.num("j", -1.0, &mut errs) },
        1 => {
            let fields = match m.array("fields", &mut errs) {
                Some(a) => a.iter().filter_map(value_f64).collect(),
                None => vec![0.0; n],
            };
            let mut couplings = Vec::new();
            if let Some(a) = m.array("couplings", &mut errs) {
                for (k, c) in a.iter().enumerate() {
                    let parsed = c.as_array().and_then(|c| match c.as_slice() {
                        [i, j, w] => Some((i.as_integer()? as usize, j.as_integer()? as usize, value_f64(w)?)),
                        _ => None,
                    });
                    match parsed {
                        Some(t) => couplings.push(t),
                        None => errs.push(format!("model.couplings[{k}]: expected [i, j, J]")),
                    }
                }
            }
            ProblemSpec::Ising(IsingProblem { n_qubits: n, fields, couplings })
        }
        _ => ProblemSpec::PSpin {
            n,
            p: m.uint("p", 2, &mut errs) as u32,
            representation: m.choice(
                "representation",
                &[("full", Representation::Full), ("maxspin", Representation::MaxSpin)],
                Representation::Full,
                &mut errs,
            ),
        },
    };
    let schedule = match m.string("schedule", &mut errs).unwrap_or("linear") {
        "linear" => ScheduleSpec::Linear {
            a0: m.qty("a0", Dimension::Energy, 1.0, &mut errs),
            b1: m.qty("b1", Dimension::Energy, 1.0, &mut errs),
        },
        "bundled" => ScheduleSpec::Bundled,
        path => {
            if !Path::new(path).is_file() {
                errs.push(format!("model.schedule: file {path:?} does not exist"));
            }
            ScheduleSpec::Table(PathBuf::from(path))
        }
    };
    m.finish(&mut errs);

    // [protocol]
    let mut p = Section::new(root, "protocol", &mut errs);
    let pkind = p.choice("kind", &PROTOCOLS, ProtocolKind::Forward, &mut errs);
    let mut protocol = Protocol::forward(1.0);
    protocol.kind = pkind;
    protocol.tau = p.qty("tau", Dimension::Time, 10.0, &mut errs);
    protocol.s_inv = p.num("s_inv", 0.5, &mut errs);
    protocol.pause = p.qty("pause", Dimension::Time, 0.0, &mut errs);
    protocol.gamma = p.num("gamma", 1.0, &mut errs);
    protocol.lambda = p.opt_num("lambda", &mut errs);
    protocol.iterations = p.uint("iterations", 1, &mut errs);
    protocol.s_fixed = p.num("s", 0.5, &mut errs);
    if let Some(a) = p.array("bits", &mut errs) {
        protocol.bits = a.iter().map(|v| v.as_integer().unwrap_or(0) as i8).collect();
    }
    p.finish(&mut errs);
    if let Err(e) = protocol.validate() {
        errs.push(format!("protocol: {e}"));
    }
    if pkind == ProtocolKind::Ara && protocol.bits.len() != problem.n_qubits() {
        errs.push(format!("protocol.bits: ARA needs {} entries", problem.n_qubits()));
    }

    // [initial]
    let mut i = Section::new(root, "initial", &mut errs);
    let initial = match i.string("state", &mut errs).unwrap_or("ground") {
        "ground" => InitialState::Ground,
        "plus" => InitialState::Plus,
        bits => {
            let parsed: Option<Vec<u8>> = bits
                .chars()
                .map(|c| match c {
                    '0' => Some(0),
                    '1' => Some(1),
                    _ => None,
                })
                .collect();
            match parsed {
                Some(b) if b.len() == problem.n_qubits() => InitialState::Pattern(b),
                _ => {
                    errs.push(format!(
                        "initial.state: expected \"ground\", \"plus\" or a {}-bit pattern, got {bits:?}",
                        problem.n_qubits()
                    ));
                    InitialState::Ground
                }
            }
        }
    };
    i.finish(&mut errs);

    // [bath]
    let mut b = Section::new(root, "bath", &mut errs);
    let bath = BathSection {
        coupling: b.num("coupling", 1e-3, &mut errs),
        cutoff: b.qty("cutoff", Dimension::Energy, 1e3, &mut errs),
        temperature: b.qty("temperature", Dimension::Energy, 12.1 * GHZ_PER_MK, &mut errs),
        topology: b.choice(
            "topology",
            &[("independent", Topology::Independent), ("collective", Topology::Collective)],
            Topology::Independent,
            &mut errs,
        ),
        axis: b.choice("axis", &AXES, Axis::Z, &mut errs),
        lamb_shift: b.boolean("lamb_shift", false, &mut errs),
    };
    b.finish(&mut errs);
    for (name, v) in [("coupling", bath.coupling), ("cutoff", bath.cutoff), ("temperature", bath.temperature)] {
        if !(v > 0.0 && v.is_finite()) {
            errs.push(format!("bath.{name}: must be positive, got {v}"));
        }
    }

    // [feedback]
    let mut f = Section::new(root, "feedback", &mut errs);
    let feedback = if f.present() {
        let kind = f.choice(
            "kind",
            &[
                ("lindblad", FeedbackKind::LindbladCooling),
                ("pulse_energy", FeedbackKind::HamiltonianPulse(PulseBasis::Energy)),
                ("pulse_x", FeedbackKind::HamiltonianPulse(PulseBasis::SigmaX)),
                ("pulse_z", FeedbackKind::HamiltonianPulse(PulseBasis::SigmaZ)),
            ],
            FeedbackKind::LindbladCooling,
            &mut errs,
        );
        let spec = FeedbackSpec { kind, delay: f.qty("delay", Dimension::Time, 0.0, &mut errs) };
        if let Err(e) = spec.validate() {
            errs.push(format!("feedback: {e}"));
        }
        Some(spec)
    } else {
        None
    };
    f.finish(&mut errs);

    // [noise]
    let mut nz = Section::new(root, "noise", &mut errs);
    let per_decade = nz.opt_num("per_decade", &mut errs);
    let total = nz.opt_uint("count", &mut errs);
    let count = match (per_decade, total) {
        (Some(_), Some(_)) => {
            errs.push("noise: give either per_decade or count, not both".into());
            FluctuatorCount::PerDecade(10.0)
        }
        (Some(d), None) => FluctuatorCount::PerDecade(d),
        (None, Some(c)) => FluctuatorCount::Total(c),
        (None, None) => FluctuatorCount::PerDecade(10.0),
    };
    let noise = NoiseSection {
        spec: FluctuatorEnsembleSpec {
            gamma_min: nz.qty("gamma_min", Dimension::Energy, 1e-4, &mut errs),
            gamma_max: nz.qty("gamma_max", Dimension::Energy, 1.0, &mut errs),
            count,
            mean_b: nz.qty("mean_b", Dimension::Energy, 0.01, &mut errs),
            spread: nz.num("spread", 0.0, &mut errs),
            dp_eq: nz.num("dp_eq", 0.0, &mut errs),
        },
        axis: nz.choice("axis", &AXES, Axis::Z, &mut errs),
        drive: nz.choice("drive", &[("idle", NoiseDrive::Idle), ("anneal", NoiseDrive::Anneal)], NoiseDrive::Idle, &mut errs),
        max_substep: nz.qty("max_substep", Dimension::Time, 0.05, &mut errs),
        fresh_parameters: nz.boolean("fresh_parameters", false, &mut errs),
    };
    let noise_used = nz.present() || engine == Engine::Fluct;
    nz.finish(&mut errs);
    if noise_used {
        if let Err(e) = noise.spec.validate() {
            errs.push(format!("noise: {e}"));
        }
    }

    // [svmc]
    let mut sv = Section::new(root, "svmc", &mut errs);
    let svmc = SvmcSection {
        variant: sv.choice("variant", &[("svmc", Variant::Svmc), ("svmc_tf", Variant::SvmcTf)], Variant::Svmc, &mut errs),
        temperature: sv.qty("temperature", Dimension::Energy, 12.1 * GHZ_PER_MK, &mut errs),
        random_order: sv.boolean("random_order", false, &mut errs),
    };
    sv.finish(&mut errs);

    // [numeric]
    let mut nu = Section::new(root, "numeric", &mut errs);
    let numeric = NumericSection {
        rtol: nu.num("rtol", 1e-8, &mut errs),
        atol: nu.num("atol", 1e-10, &mut errs),
        samples: nu.uint("samples", 1000, &mut errs),
        workers: nu.opt_uint("workers", &mut errs),
        output_points: nu.uint("output_points", 101, &mut errs),
        bootstrap: nu.uint("bootstrap", 1000, &mut errs),
        omega_tol: nu.num("omega_tol", DEFAULT_OMEGA_TOL, &mut errs),
        levels: nu.uint("levels", 2, &mut errs),
        targets: nu
            .array("targets", &mut errs)
            .map(|a| a.iter().map(|v| v.as_integer().unwrap_or(-1).max(0) as usize).collect()),
        tts_target: nu.num("tts_target", 0.99, &mut errs),
    };
    nu.finish(&mut errs);
    if !(numeric.rtol > 0.0 && numeric.atol > 0.0) {
        errs.push("numeric: rtol and atol must be positive".into());
    }
    if numeric.samples == 0 {
        errs.push("numeric.samples: must be at least 1".into());
    }
    if numeric.workers == Some(0) {
        errs.push("numeric.workers: must be at least 1".into());
    }
    if numeric.output_points < 2 {
        errs.push("numeric.output_points: must be at least 2".into());
    }
    if !(numeric.tts_target > 0.0 && numeric.tts_target < 1.0) {
        errs.push(format!("numeric.tts_target: must lie in (0, 1), got {}", numeric.tts_target));
    }

    // [sweep]
    let mut sw = Section::new(root, "sweep", &mut errs);
    let sweep = if sw.present() {
        let target = match sw.string("engine", &mut errs).and_then(Engine::parse) {
            Some(Engine::Sweep) | None => {
                errs.push("sweep.engine: expected ame, traj, fluct or svmc".into());
                Engine::Ame
            }
            Some(e) => e,
        };
        let parameter = sw.choice(
            "parameter",
            &[("s_inv", SweepParameter::SInv), ("tau", SweepParameter::Tau), ("gamma", SweepParameter::Gamma)],
            SweepParameter::SInv,
            &mut errs,
        );
        let dim = (parameter == SweepParameter::Tau).then_some(Dimension::Time);
        let mut values = Vec::new();
        for v in sw.array("values", &mut errs).map(Vec::as_slice).unwrap_or(&[]) {
            let x = match (v, dim) {
                (Value::String(s), Some(d)) => parse_quantity(s, d).map_err(|e| format!("sweep.values: {e}")),
                _ => value_f64(v).ok_or_else(|| "sweep.values: expected numbers".to_string()),
            };
            match x {
                Ok(x) => values.push(x),
                Err(e) => errs.push(e),
            }
        }
        if values.is_empty() {
            errs.push("sweep.values: needs at least one grid point".into());
        }
        for &v in &values {
            let mut probe = protocol.clone();
            apply_parameter(&mut probe, parameter, v);
            if let Err(e) = probe.validate() {
                errs.push(format!("sweep.values: {v}: {e}"));
            }
        }
        Some(SweepSection { engine: target, parameter, values })
    } else {
        None
    };
    sw.finish(&mut errs);
    if engine == Engine::Sweep && sweep.is_none() {
        errs.push("engine \"sweep\" needs a [sweep] section".into());
    }

    // [output]
    let mut o = Section::new(root, "output", &mut errs);
    let output_dir = PathBuf::from(o.string("dir", &mut errs).unwrap_or("out"));
    o.finish(&mut errs);

    // [bench]
    let mut be = Section::new(root, "bench", &mut errs);
    let workers = match be.array("workers", &mut errs) {
        Some(a) => a.iter().map(|v| v.as_integer().unwrap_or(0).max(0) as usize).collect(),
        None => vec![1, 2, 4],
    };
    let bench = BenchSection { workers, speedup_threshold: be.num("speedup_threshold", 2.8, &mut errs) };
    be.finish(&mut errs);
    if bench.workers.is_empty() || bench.workers.contains(&0) {
        errs.push("bench.workers: needs positive worker counts".into());
    }

    let n = problem.n_qubits();
    let full = !matches!(problem, ProblemSpec::PSpin { representation: Representation::MaxSpin, .. });
    if n == 0 {
        errs.push("model.qubits: must be at least 1".into());
    } else if full && n > DEFAULT_QUBIT_CAP {
        errs.push(format!("model.qubits: {n} exceeds the cap of {DEFAULT_QUBIT_CAP}"));
    }
    if let ProblemSpec::Ising(ip) = &problem {
        if let Err(e) = ip.validate() {
            errs.push(format!("model: {e}"));
        }
    }
    if let ProblemSpec::PSpin { p, .. } = &problem {
        if *p < 2 {
            errs.push("model.p: must be >= 2".into());
        }
    }
    let uses_svmc = engine == Engine::Svmc || sweep.as_ref().is_some_and(|s| s.engine == Engine::Svmc);
    if uses_svmc && !matches!(problem, ProblemSpec::PSpin { .. }) {
        errs.push("svmc engine needs model.problem = \"pspin\"".into());
    }
    if uses_svmc && matches!(initial, InitialState::Ground | InitialState::Plus) {
        errs.push("svmc engine needs initial.state to be a bit pattern".into());
    }
    if let Some(t) = &numeric.targets {
        let dim = if full { 1usize << n.min(62) } else { n + 1 };
        if t.iter().any(|&x| x >= dim) {
            errs.push(format!("numeric.targets: indices must be < {dim}"));
        }
    }
    if !(svmc.temperature > 0.0) {
        errs.push("svmc.temperature: must be positive".into());
    }

    if errs.is_empty() {
        Ok(RunConfig {
            engine,
            seed,
            problem,
            schedule,
            protocol,
            initial,
            bath,
            feedback,
            noise,
            svmc,
            numeric,
            sweep,
            output_dir,
            bench,
        })
    } else {
        Err(ConfigErrors(errs))
    }
}

pub fn apply_parameter(protocol: &mut Protocol, parameter: SweepParameter, v: f64) {
    match parameter {
        SweepParameter::SInv => protocol.s_inv = v,
        SweepParameter::Tau => protocol.tau = v,
        SweepParameter::Gamma => protocol.gamma = v,
    }
}

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, x)| *x == v).map(|(n, _)| *n).unwrap_or("?")
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

impl RunConfig {
    /// Canonical form: every field present, base units, fixed key order.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("engine".into(), self.engine.name().into());
        root.insert("seed".into(), Value::Integer(self.seed as i64));

        let mut m = Table::new();
        match &self.problem {
            ProblemSpec::Chain { n, h, j } => {
                m.insert("problem".into(), "chain".into());
                m.insert("qubits".into(), Value::Integer(*n as i64));
                m.insert("h".into(), Value::Float(*h));
                m.insert("j".into(), Value::Float(*j));
            }
            ProblemSpec::Ising(ip) => {
                m.insert("problem".into(), "ising".into());
                m.insert("qubits".into(), Value::Integer(ip.n_qubits as i64));
                m.insert("fields".into(), floats(&ip.fields));
                let cs = ip
                    .couplings
                    .iter()
                    .map(|&(i, j, w)| Value::Array(vec![Value::Integer(i as i64), Value::Integer(j as i64), Value::Float(w)]))
                    .collect();
                m.insert("couplings".into(), Value::Array(cs));
            }
            ProblemSpec::PSpin { n, p, representation } => {
                m.insert("problem".into(), "pspin".into());
                m.insert("qubits".into(), Value::Integer(*n as i64));
                m.insert("p".into(), Value::Integer(*p as i64));
                let r = if *representation == Representation::Full { "full" } else { "maxspin" };
                m.insert("representation".into(), r.into());
            }
        }
        match &self.schedule {
            ScheduleSpec::Linear { a0, b1 } => {
                m.insert("schedule".into(), "linear".into());
                m.insert("a0".into(), Value::Float(*a0));
                m.insert("b1".into(), Value::Float(*b1));
            }
            ScheduleSpec::Bundled => {
                m.insert("schedule".into(), "bundled".into());
            }
            ScheduleSpec::Table(p) => {
                m.insert("schedule".into(), p.display().to_string().into());
            }
        }
        root.insert("model".into(), Value::Table(m));

        let pr = &self.protocol;
        let mut p = Table::new();
        p.insert("kind".into(), name_of(&PROTOCOLS, pr.kind).into());
        p.insert("tau".into(), Value::Float(pr.tau));
        p.insert("s_inv".into(), Value::Float(pr.s_inv));
        p.insert("pause".into(), Value::Float(pr.pause));
        p.insert("gamma".into(), Value::Float(pr.gamma));
        if let Some(l) = pr.lambda {
            p.insert("lambda".into(), Value::Float(l));
        }
        p.insert("iterations".into(), Value::Integer(pr.iterations as i64));
        p.insert("s".into(), Value::Float(pr.s_fixed));
        p.insert("bits".into(), Value::Array(pr.bits.iter().map(|&b| Value::Integer(b as i64)).collect()));
        root.insert("protocol".into(), Value::Table(p));

        let state = match &self.initial {
            InitialState::Ground => "ground".to_string(),
            InitialState::Plus => "plus".to_string(),
            InitialState::Pattern(b) => b.iter().map(|x| if *x == 0 { '0' } else { '1' }).collect(),
        };
        let mut i = Table::new();
        i.insert("state".into(), state.into());
        root.insert("initial".into(), Value::Table(i));

        let mut b = Table::new();
        b.insert("coupling".into(), Value::Float(self.bath.coupling));
        b.insert("cutoff".into(), Value::Float(self.bath.cutoff));
        b.insert("temperature".into(), Value::Float(self.bath.temperature));
        let topo = if self.bath.topology == Topology::Collective { "collective" } else { "independent" };
        b.insert("topology".into(), topo.into());
        b.insert("axis".into(), name_of(&AXES, self.bath.axis).into());
        b.insert("lamb_shift".into(), Value::Boolean(self.bath.lamb_shift));
        root.insert("bath".into(), Value::Table(b));

        if let Some(fb) = &self.feedback {
            let kind = match fb.kind {
                FeedbackKind::LindbladCooling => "lindblad",
                FeedbackKind::HamiltonianPulse(PulseBasis::Energy) => "pulse_energy",
                FeedbackKind::HamiltonianPulse(PulseBasis::SigmaX) => "pulse_x",
                FeedbackKind::HamiltonianPulse(PulseBasis::SigmaZ) => "pulse_z",
            };
            let mut f = Table::new();
            f.insert("kind".into(), kind.into());
            f.insert("delay".into(), Value::Float(fb.delay));
            root.insert("feedback".into(), Value::Table(f));
        }

        let ns = &self.noise;
        let mut n = Table::new();
        n.insert("gamma_min".into(), Value::Float(ns.spec.gamma_min));
        n.insert("gamma_max".into(), Value::Float(ns.spec.gamma_max));
        match ns.spec.count {
            FluctuatorCount::PerDecade(d) => n.insert("per_decade".into(), Value::Float(d)),
            FluctuatorCount::Total(c) => n.insert("count".into(), Value::Integer(c as i64)),
        };
        n.insert("mean_b".into(), Value::Float(ns.spec.mean_b));
        n.insert("spread".into(), Value::Float(ns.spec.spread));
        n.insert("dp_eq".into(), Value::Float(ns.spec.dp_eq));
        n.insert("axis".into(), name_of(&AXES, ns.axis).into());
        n.insert("drive".into(), (if ns.drive == NoiseDrive::Idle { "idle" } else { "anneal" }).into());
        n.insert("max_substep".into(), Value::Float(ns.max_substep));
        n.insert("fresh_parameters".into(), Value::Boolean(ns.fresh_parameters));
        root.insert("noise".into(), Value::Table(n));

        let mut s = Table::new();
        s.insert("variant".into(), (if self.svmc.variant == Variant::Svmc { "svmc" } else { "svmc_tf" }).into());
        s.insert("temperature".into(), Value::Float(self.svmc.temperature));
        s.insert("random_order".into(), Value::Boolean(self.svmc.random_order));
        root.insert("svmc".into(), Value::Table(s));

        let nu = &self.numeric;
        let mut t = Table::new();
        t.insert("rtol".into(), Value::Float(nu.rtol));
        t.insert("atol".into(), Value::Float(nu.atol));
        t.insert("samples".into(), Value::Integer(nu.samples as i64));
        if let Some(w) = nu.workers {
            t.insert("workers".into(), Value::Integer(w as i64));
        }
        t.insert("output_points".into(), Value::Integer(nu.output_points as i64));
        t.insert("bootstrap".into(), Value::Integer(nu.bootstrap as i64));
        t.insert("omega_tol".into(), Value::Float(nu.omega_tol));
        t.insert("levels".into(), Value::Integer(nu.levels as i64));
        if let Some(ts) = &nu.targets {
            t.insert("targets".into(), Value::Array(ts.iter().map(|&x| Value::Integer(x as i64)).collect()));
        }
        t.insert("tts_target".into(), Value::Float(nu.tts_target));
        root.insert("numeric".into(), Value::Table(t));

        if let Some(sw) = &self.sweep {
            let mut w = Table::new();
            w.insert("engine".into(), sw.engine.name().into());
            w.insert("parameter".into(), sw.parameter.name().into());
            w.insert("values".into(), floats(&sw.values));
            root.insert("sweep".into(), Value::Table(w));
        }

        let mut o = Table::new();
        o.insert("dir".into(), self.output_dir.display().to_string().into());
        root.insert("output".into(), Value::Table(o));

        let mut be = Table::new();
        be.insert("workers".into(), Value::Array(self.bench.workers.iter().map(|&w| Value::Integer(w as i64)).collect()));
        be.insert("speedup_threshold".into(), Value::Float(self.bench.speedup_threshold));
        root.insert("bench".into(), Value::Table(be));

        toml::to_string(&root).expect("a TOML table always serializes")
    }

    /// SHA-256 of the canonical form, hex encoded. The worker count is left
    /// out because results do not depend on it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.numeric.workers = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
