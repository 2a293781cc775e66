//! Engine dispatch and table assembly.

use std::time::Instant;

use crate::ame::{frames_along, observables, propagate, uniform_grid, AmeConfig, QuantumState};
use crate::error::{Error, Result};
use crate::fluctuators::{run_ensemble, FluctuatorRunConfig, NoiseOperator, NoisySystem, SystemDrive};
use crate::linalg::{basis_state, eigh, outer, CMat, CVec};
use crate::model::{AnnealModel, IsingProblem, PSpinProblem, Protocol, Schedule, SystemTerms, DEFAULT_QUBIT_CAP};
use crate::ode::Tolerances;
use crate::spectral::{BathSpec, OpenSystem, SpectralOptions};
use crate::svmc::{run_reverse_anneal, SvmcConfig};
use crate::trajectories::{ensemble, TrajectoryConfig};

use super::config::{apply_parameter, Engine, InitialState, NoiseDrive, ProblemSpec, RunConfig, ScheduleSpec, SweepParameter};
use super::table::{add_tts, ResultTable};

pub fn build_terms(cfg: &RunConfig) -> Result<SystemTerms> {
    match &cfg.problem {
        ProblemSpec::Chain { n, h, j } => SystemTerms::ising(&IsingProblem::chain(*n, *h, *j), DEFAULT_QUBIT_CAP),
        ProblemSpec::Ising(p) => SystemTerms::ising(p, DEFAULT_QUBIT_CAP),
        ProblemSpec::PSpin { n, p, representation } => SystemTerms::pspin(
            &PSpinProblem { n_qubits: *n, p: *p, representation: *representation },
            DEFAULT_QUBIT_CAP,
        ),
    }
}

/// Schedule files hold `s, A/h, B/h` in GHz and are scaled by 2π like the
/// bundled table.
pub fn build_schedule(cfg: &RunConfig) -> Result<Schedule> {
    match &cfg.schedule {
        ScheduleSpec::Linear { a0, b1 } => Schedule::linear(*a0, *b1),
        ScheduleSpec::Bundled => Ok(Schedule::bundled()),
        ScheduleSpec::Table(path) => {
            let mut r = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .from_path(path)
                .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
            let two_pi = 2.0 * std::f64::consts::PI;
            let mut knots = Vec::new();
            for rec in r.records() {
                let rec = rec.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
                let v: Vec<f64> = rec.iter().map(|c| c.trim().parse().unwrap_or(f64::NAN)).collect();
                if v.len() != 3 || v.iter().any(|x| x.is_nan()) {
                    return Err(Error::Invalid(format!("{}: expected rows `s,A,B`", path.display())));
                }
                knots.push((v[0], two_pi * v[1], two_pi * v[2]));
            }
            Schedule::from_table(knots)
        }
    }
}

pub fn build_model(cfg: &RunConfig, protocol: &Protocol) -> Result<AnnealModel> {
    AnnealModel::new(build_terms(cfg)?, build_schedule(cfg)?, protocol.clone())
}

pub fn build_open_system(cfg: &RunConfig, protocol: &Protocol) -> Result<OpenSystem> {
    let b = &cfg.bath;
    let bath = BathSpec { topology: b.topology, axis: b.axis, ..BathSpec::ohmic(b.coupling, b.cutoff, b.temperature) };
    let options = SpectralOptions { omega_tol: cfg.numeric.omega_tol, lamb_shift: b.lamb_shift, n_keep: None };
    OpenSystem::new(build_model(cfg, protocol)?, bath, options)
}

pub fn initial_vector(cfg: &RunConfig, model: &AnnealModel) -> Result<CVec> {
    let lowest = |h: &CMat| {
        let (_, v) = eigh(h);
        v.column(0).into_owned()
    };
    match &cfg.initial {
        InitialState::Ground => Ok(lowest(&model.hamiltonian(0.0)?)),
        InitialState::Plus => Ok(lowest(&model.terms.driver)),
        InitialState::Pattern(bits) => {
            let spins: Vec<i8> = bits.iter().map(|&b| if b == 0 { 1 } else { -1 }).collect();
            Ok(basis_state(model.dim(), model.terms.pattern_index(&spins)?))
        }
    }
}

fn targets(cfg: &RunConfig, terms: &SystemTerms) -> Vec<usize> {
    cfg.numeric.targets.clone().unwrap_or_else(|| terms.problem_ground_states())
}

fn workers(cfg: &RunConfig) -> usize {
    cfg.numeric.workers.unwrap_or(1).max(1)
}

fn tolerances(cfg: &RunConfig) -> Tolerances {
    Tolerances { rtol: cfg.numeric.rtol, atol: cfg.numeric.atol, ..Tolerances::default() }
}

fn header(cfg: &RunConfig, columns: Vec<String>) -> ResultTable {
    ResultTable::new(columns)
        .with_meta("version", env!("CARGO_PKG_VERSION"))
        .with_meta("engine", cfg.engine.name())
        .with_meta("config_hash", cfg.hash())
        .with_meta("seed", cfg.seed)
}

fn level_columns(prefix: &[&str], levels: usize, suffix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((0..levels).map(|k| format!("p{k}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect()
}

fn ame_table(cfg: &RunConfig, protocol: &Protocol) -> Result<ResultTable> {
    let sys = build_open_system(cfg, protocol)?;
    let psi0 = initial_vector(cfg, &sys.model)?;
    let acfg = AmeConfig { tol: tolerances(cfg), output_points: cfg.numeric.output_points, ..AmeConfig::default() };
    let run = propagate(&sys, &outer(&psi0), 0.0, sys.model.duration(), &acfg, cfg.feedback.as_ref())
        .map_err(|e| e.error)?;
    let times: Vec<f64> = run.states.iter().map(|s| s.t).collect();
    let frames = frames_along(&sys, &times)?;
    let tg = targets(cfg, &sys.model.terms);
    let levels = cfg.numeric.levels.min(sys.dim()).max(1);
    let mut table = header(cfg, level_columns(&["t", "s"], levels, &["success"]));
    for (st, fr) in run.states.iter().zip(&frames) {
        let obs = observables(&QuantumState::Mixed(st.in_computational(fr)), fr, &tg);
        let mut row = vec![Some(st.t), Some(sys.model.s_at(st.t)?)];
        row.extend(obs.populations[..levels].iter().map(|&p| Some(p)));
        row.push(Some(obs.success));
        table.push(row);
    }
    table.set_meta("max_trace_drift", run.max_trace_drift);
    table.set_meta("min_eigenvalue", run.min_eigenvalue);
    Ok(table)
}

fn traj_table(cfg: &RunConfig, protocol: &Protocol) -> Result<ResultTable> {
    let sys = build_open_system(cfg, protocol)?;
    let psi0 = initial_vector(cfg, &sys.model)?;
    let tcfg = TrajectoryConfig {
        tol: tolerances(cfg),
        output_points: cfg.numeric.output_points,
        levels: cfg.numeric.levels,
        targets: targets(cfg, &sys.model.terms),
        bootstrap: cfg.numeric.bootstrap,
        ..TrajectoryConfig::default()
    };
    let st = ensemble(&sys, &psi0, cfg.numeric.samples, cfg.seed, workers(cfg), &tcfg, cfg.feedback.as_ref())?;
    let levels = st.populations.first().map_or(0, Vec::len);
    let mut cols: Vec<String> = ["t", "s"].iter().map(|s| s.to_string()).collect();
    for name in ["ground", "success"] {
        for suffix in ["", "_se", "_lo", "_hi"] {
            cols.push(format!("{name}{suffix}"));
        }
    }
    cols.extend((1..levels).map(|k| format!("p{k}")));
    let mut table = header(cfg, cols);
    for (i, &t) in st.times.iter().enumerate() {
        let mut row = vec![Some(t), Some(sys.model.s_at(t)?)];
        for series in [&st.ground, &st.success] {
            let ci = series.interval[i];
            row.extend([Some(series.mean[i]), series.se[i], ci.map(|c| c.0), ci.map(|c| c.1)]);
        }
        row.extend(st.populations[i][1..].iter().map(|&p| Some(p)));
        table.push(row);
    }
    table.set_meta("trajectories", st.trajectories);
    table.set_meta("relaxations", st.relaxations);
    table.set_meta("excitations", st.excitations);
    table.set_meta("dephasing", st.dephasing);
    table.set_meta("feedback_applied", st.feedback_applied);
    Ok(table)
}

fn fluct_table(cfg: &RunConfig, protocol: &Protocol) -> Result<ResultTable> {
    let model = build_model(cfg, protocol)?;
    let psi0 = initial_vector(cfg, &model)?;
    let duration = model.duration();
    let drive = match cfg.noise.drive {
        NoiseDrive::Idle => SystemDrive::Static(CMat::zeros(model.dim(), model.dim())),
        NoiseDrive::Anneal => SystemDrive::Anneal(model.clone()),
    };
    let sys = NoisySystem::new(drive, NoiseOperator::Collective(cfg.noise.axis))?;
    let rcfg = FluctuatorRunConfig {
        grid: uniform_grid(0.0, duration, cfg.numeric.output_points),
        realizations: cfg.numeric.samples,
        master: cfg.seed,
        workers: workers(cfg),
        max_substep: cfg.noise.max_substep,
        fresh_parameters: cfg.noise.fresh_parameters,
    };
    let ens = run_ensemble(&sys, &psi0, &cfg.noise.spec, &rcfg)?;
    let means = [ens.mean(0), ens.mean(1), ens.mean(2)];
    let ses = [ens.standard_error(0), ens.standard_error(1), ens.standard_error(2)];
    let coherence = (model.dim() == 2).then(|| ens.coherence());
    let mut cols = vec!["t", "mx", "mx_se", "my", "my_se", "mz", "mz_se"];
    if coherence.is_some() {
        cols.push("coherence");
    }
    let mut table = header(cfg, cols.into_iter().map(String::from).collect());
    for (i, &t) in ens.times.iter().enumerate() {
        let mut row = vec![Some(t)];
        for c in 0..3 {
            row.extend([Some(means[c][i]), ses[c][i]]);
        }
        if let Some(c) = &coherence {
            row.push(Some(c[i]));
        }
        table.push(row);
    }
    table.set_meta("realizations", cfg.numeric.samples);
    table.set_meta("max_norm_error", ens.max_norm_error);
    Ok(table)
}

fn svmc_table(cfg: &RunConfig, protocol: &Protocol) -> Result<ResultTable> {
    let ProblemSpec::PSpin { n, p, .. } = cfg.problem else {
        return Err(Error::Invalid("svmc needs a p-spin problem".into()));
    };
    let InitialState::Pattern(bits) = &cfg.initial else {
        return Err(Error::Invalid("svmc needs an initial bit pattern".into()));
    };
    let scfg = SvmcConfig {
        n,
        p,
        schedule: build_schedule(cfg)?,
        protocol: protocol.clone(),
        temperature: cfg.svmc.temperature,
        variant: cfg.svmc.variant,
        initial_bits: bits.clone(),
        samples: cfg.numeric.samples,
        master: cfg.seed,
        workers: workers(cfg),
        random_order: cfg.svmc.random_order,
    };
    let r = run_reverse_anneal(&scfg)?;
    let cols = [
        "s_inv", "tau", "sweeps", "total", "total_2sigma", "all_up", "all_up_2sigma", "all_down", "all_down_2sigma",
        "acceptance",
    ];
    let mut table = header(cfg, cols.into_iter().map(String::from).collect());
    table.push(vec![
        Some(protocol.s_inv),
        Some(protocol.tau),
        Some(r.sweeps as f64),
        Some(r.total.p),
        Some(r.total.two_sigma),
        Some(r.all_up.p),
        Some(r.all_up.two_sigma),
        Some(r.all_down.p),
        Some(r.all_down.two_sigma),
        Some(r.acceptance),
    ]);
    add_tts(&mut table, "sweeps", "total", cfg.numeric.tts_target);
    table.set_meta("samples", cfg.numeric.samples);
    Ok(table)
}

/// One row per grid value: the parameter followed by the last row of the
/// target engine's table.
fn sweep_table(cfg: &RunConfig) -> Result<ResultTable> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::Invalid("missing [sweep] section".into()))?;
    let mut table: Option<ResultTable> = None;
    for &v in &sw.values {
        let mut protocol = cfg.protocol.clone();
        apply_parameter(&mut protocol, sw.parameter, v);
        let inner = run_engine(cfg, sw.engine, &protocol)?;
        let last = inner.rows.last().cloned().ok_or_else(|| Error::Logic("engine produced no rows".into()))?;
        let t = table.get_or_insert_with(|| {
            let cols = std::iter::once(sw.parameter.name().to_string())
                .chain(inner.columns.iter().map(|c| if c == sw.parameter.name() { format!("{c}_run") } else { c.clone() }))
                .collect();
            header(cfg, cols).with_meta("sweep_engine", sw.engine.name()).with_meta("parameter", sw.parameter.name())
        });
        t.push(std::iter::once(Some(v)).chain(last).collect());
    }
    let mut table = table.ok_or_else(|| Error::Invalid("sweep grid is empty".into()))?;
    if sw.parameter == SweepParameter::Tau && matches!(sw.engine, Engine::Ame | Engine::Traj) {
        add_tts(&mut table, "tau", "success", cfg.numeric.tts_target);
    }
    Ok(table)
}

pub fn run_engine(cfg: &RunConfig, engine: Engine, protocol: &Protocol) -> Result<ResultTable> {
    match engine {
        Engine::Ame => ame_table(cfg, protocol),
        Engine::Traj => traj_table(cfg, protocol),
        Engine::Fluct => fluct_table(cfg, protocol),
        Engine::Svmc => svmc_table(cfg, protocol),
        Engine::Sweep => sweep_table(cfg),
    }
}

pub fn run(cfg: &RunConfig) -> Result<ResultTable> {
    let table = run_engine(cfg, cfg.engine, &cfg.protocol)?;
    if matches!(cfg.engine, Engine::Ame | Engine::Traj | Engine::Fluct) && !table.is_monotone() {
        return Err(Error::Logic("output rows are not monotone in time".into()));
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub table: ResultTable,
    pub warnings: Vec<String>,
}

/// Times the configured engine at each worker count. Outputs must agree
/// exactly across counts; the speedup threshold is only reported.
pub fn benchmark(cfg: &RunConfig, counts: &[usize]) -> Result<Benchmark> {
    if !matches!(cfg.engine, Engine::Traj | Engine::Fluct) {
        return Err(Error::Invalid("bench needs the traj or fluct engine".into()));
    }
    let k = cfg.numeric.samples;
    let mut warnings = Vec::new();
    let mut table = header(cfg, ["workers", "wall_seconds", "speedup", "identical"].map(String::from).to_vec());
    let mut reference: Option<(String, f64)> = None;
    let mut last_speedup = None;
    for &c in counts {
        let used = if c > k {
            warnings.push(format!("{c} workers exceed {k} samples; using {k}"));
            k
        } else {
            c.max(1)
        };
        let mut local = cfg.clone();
        local.numeric.workers = Some(used);
        let start = Instant::now();
        let out = run_engine(&local, local.engine, &local.protocol)?.to_csv();
        let wall = start.elapsed().as_secs_f64();
        let (same, base) = match &reference {
            None => {
                reference = Some((out, wall));
                (true, wall)
            }
            Some((r, base)) => (*r == out, *base),
        };
        if !same {
            return Err(Error::Logic(format!("results with {used} workers differ from the first run")));
        }
        let speedup = base / wall;
        last_speedup = Some(speedup);
        table.push(vec![Some(used as f64), Some(wall), Some(speedup), Some(1.0)]);
    }
    table.set_meta("speedup_threshold", cfg.bench.speedup_threshold);
    if let Some(s) = last_speedup {
        table.set_meta("speedup_met", s >= cfg.bench.speedup_threshold);
    }
    Ok(Benchmark { table, warnings })
}
