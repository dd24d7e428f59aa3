use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rcdcm::dcm::{self, DcmConfig, MetricsReport};
use rcdcm::driverlib::{characterize as build_table, default_cap_grid, CharacterizeOptions, DriverCharTable, DriverModel, LibrarySet};
use rcdcm::mor::reduce;
use rcdcm::netlist::{assemble_mna, parse_netlist, RcNetwork};
use rcdcm::response::write_waveform_csv;
use rcdcm::suite::{self, generate_suite, Benchmark, BenchmarkResult, SuiteConfig, SuiteRun, Topology};

use crate::error::{CliError, Kind};
use crate::{CharacterizeArgs, ModelKind, RespondArgs, RunArgs, SuiteArgs, SweepArgs, VerifyArgs};

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn slew_tag(slew: f64) -> String {
    format!("{}ps", (slew * 1e15).round() / 1e3)
}

pub fn characterize(a: &CharacterizeArgs) -> Result<()> {
    let model = match a.model {
        ModelKind::Thevenin => DriverModel::TheveninRamp { r_drv: a.r_drv },
        ModelKind::Mos => DriverModel::MosLike {
            i_sat: a.i_sat,
            v_knee: a.v_knee,
            v_th: a.v_th,
            c_couple: a.c_couple,
            c_int: a.c_int,
        },
    };
    let grid = match &a.grid {
        Some(g) => g.clone(),
        None => default_cap_grid(a.c_max),
    };
    if a.slews.is_empty() {
        return Err(CliError::usage("no slews given"));
    }
    create_dir(&a.out)?;
    let opts = CharacterizeOptions::new(a.window, a.dt);
    for &slew in &a.slews {
        for dir in a.direction.directions() {
            let start = Instant::now();
            let t = build_table(&a.driver, &model, a.vdd, slew, dir, &grid, &opts)?;
            let secs = start.elapsed().as_secs_f64();
            let name = format!("{}_{}_{}.json", a.driver, dir_name(dir), slew_tag(slew));
            let path = a.out.join(&name);
            let json = t.to_json();
            write_file(&path, |w| w.write_all(json.as_bytes()))?;
            println!(
                "{name}: {} caps {:.3e}..{:.3e} F, {} samples over {:.3e} s, {:?} blend, {secs:.2} s",
                t.cap_grid.len(),
                t.c_min(),
                t.c_max(),
                t.time_grid.len(),
                t.window(),
                t.blend_domain(),
            );
        }
    }
    Ok(())
}

fn dir_name(d: rcdcm::driverlib::Direction) -> &'static str {
    match d {
        rcdcm::driverlib::Direction::Rising => "rising",
        rcdcm::driverlib::Direction::Falling => "falling",
    }
}

struct Net {
    name: String,
    net: RcNetwork,
}

fn load_nets(run: &RunArgs) -> Result<Vec<Net>> {
    let mut seen = BTreeSet::new();
    let mut nets = Vec::new();
    for path in &run.netlists {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let net = parse_netlist(&text, &run.port)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "net".into());
        let mut name = stem.clone();
        let mut k = 1;
        while !seen.insert(name.clone()) {
            k += 1;
            name = format!("{stem}_{k}");
        }
        nets.push(Net { name, net });
    }
    Ok(nets)
}

fn load_table(run: &RunArgs) -> Result<DriverCharTable> {
    if !run.tables.is_dir() {
        return Err(CliError::usage(format!("{}: not a directory", run.tables.display())));
    }
    let set = LibrarySet::load_dir(&run.tables)?;
    if set.is_empty() {
        return Err(CliError::usage(format!("{}: no table files", run.tables.display())));
    }
    let direction = run.direction.into();
    let driver = match &run.driver {
        Some(d) => d.clone(),
        None => {
            let names: BTreeSet<&str> = set.tables().map(|t| t.driver.as_str()).collect();
            if names.len() != 1 {
                return Err(CliError::usage(format!(
                    "several drivers in {} ({}); pick one with --driver",
                    run.tables.display(),
                    names.into_iter().collect::<Vec<_>>().join(", ")
                )));
            }
            names.into_iter().next().unwrap().to_string()
        }
    };
    let slew = match run.slew {
        Some(s) => s,
        None => set
            .tables()
            .find(|t| t.driver == driver && t.direction == direction)
            .map(|t| t.slew)
            .ok_or_else(|| CliError::new(Kind::Domain, format!("no {} table for driver '{driver}'", dir_name(direction))))?,
    };
    let sel = set.select(&driver, direction, slew)?;
    if sel.out_of_range {
        eprintln!(
            "warning: slew {slew:e} s outside the characterized range; using the {:e} s table",
            sel.table.slew
        );
    }
    Ok(sel.table)
}

/// Run `f` over every net on the `--jobs` pool; failures are reported per
/// net and the first one (in input order) becomes the command's error.
fn for_each_net<T: Send>(run: &RunArgs, nets: &[Net], f: impl Fn(&Net) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = pool(run.jobs)?.install(|| nets.par_iter().map(|n| f(n).map_err(|e| e.context(&n.name))).collect());
    let mut ok = Vec::new();
    let mut first = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                eprintln!("error: {e}");
                first.get_or_insert(e);
            }
        }
    }
    match first {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}

fn check_q(q: usize) -> Result<()> {
    if q == 0 {
        return Err(CliError::usage("--q must be at least 1"));
    }
    Ok(())
}

struct Responded {
    name: String,
    c_total: f64,
    report: MetricsReport,
    c_first: f64,
    c_last: f64,
}

fn respond_one(n: &Net, table: &DriverCharTable, q: usize, cfg: &DcmConfig, out: &Path) -> Result<Responded> {
    let sys = assemble_mna(&n.net).map_err(|e| CliError::usage(e.to_string()))?;
    let ya = reduce(&sys, q).map_err(|e| CliError::new(Kind::Numerical, e.to_string()))?;
    if let Some(note) = &ya.notice {
        eprintln!("note: {}: {note}", n.name);
    }
    let start = Instant::now();
    let trace = dcm::run_dcm(table, &ya, cfg)?;
    let window = trace
        .records
        .last()
        .map(|r| r.t)
        .ok_or_else(|| CliError::new(Kind::Numerical, "no matched steps"))?;
    let metrics = dcm::trace_metrics(&trace, window)?;
    let report = MetricsReport {
        metrics,
        runtime_s: start.elapsed().as_secs_f64(),
        residual_max: trace.residual_max(),
    };
    let dir = out.join(&n.name);
    create_dir(&dir)?;
    let volt = trace.voltage_waveform();
    let ts: Vec<f64> = volt.points().iter().map(|p| p.0).collect();
    let is = trace.currents(&ts);
    write_file(&dir.join("waveform.csv"), |w| {
        write_waveform_csv(w, volt.points().iter().zip(&is).map(|(&(t, v), &i)| (t, v, i)))
    })?;
    write_file(&dir.join("trace.csv"), |w| trace.write_csv(w))?;
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    write_file(&dir.join("metrics.json"), |w| writeln!(w, "{json}"))?;
    Ok(Responded {
        name: n.name.clone(),
        c_total: n.net.total_capacitance(),
        report,
        c_first: trace.c_eff_first,
        c_last: trace.c_eff_last,
    })
}

pub fn respond(a: &RespondArgs) -> Result<()> {
    let run = &a.run;
    check_q(run.q)?;
    let cfg = run.dcm();
    cfg.validate()?;
    let nets = load_nets(run)?;
    let table = load_table(run)?;
    create_dir(&run.out)?;
    let rows = for_each_net(run, &nets, |n| respond_one(n, &table, run.q, &cfg, &run.out))?;
    println!(
        "{:<20} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>9}",
        "net", "C_total_F", "C_first_F", "C_last_F", "avg_A", "rms_A", "peak_A", "time_s"
    );
    for r in rows {
        let m = r.report.metrics;
        println!(
            "{:<20} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>9.2e}",
            r.name, r.c_total, r.c_first, r.c_last, m.avg, m.rms, m.peak, r.report.runtime_s
        );
    }
    Ok(())
}

fn suite_config(run: &RunArgs, table: &DriverCharTable, oracle_dt: f64) -> SuiteConfig {
    SuiteConfig {
        q: run.q,
        dcm: run.dcm(),
        oracle_dt,
        char_dt: table.meta.dt,
        char_window: table.window(),
    }
}

fn prepare_net(n: &Net, table: &DriverCharTable, cfg: &SuiteConfig) -> Result<suite::Prepared> {
    let b = Benchmark::new(
        n.name.clone(),
        Topology::Custom,
        n.net.clone(),
        table.driver.clone(),
        table.meta.model.clone(),
        table.vdd,
        table.slew,
        table.direction,
    );
    Ok(suite::prepare(&b, table, cfg)?)
}

fn print_rows(label: &str, r: &BenchmarkResult, m: &rcdcm::dcm::CurrentMetrics, e: &rcdcm::dcm::CurrentMetrics) {
    println!(
        "{:<20} {:<9} {:>11.4e} {:>11.4e} {:>11.4e} {:>8.3}% {:>8.3}% {:>8.3}%",
        r.name,
        label,
        m.avg,
        m.rms,
        m.peak,
        100.0 * e.avg,
        100.0 * e.rms,
        100.0 * e.peak
    );
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let run = &a.run;
    check_q(run.q)?;
    let dcm_cfg = run.dcm();
    dcm_cfg.validate()?;
    let nets = load_nets(run)?;
    let table = load_table(run)?;
    let cfg = suite_config(run, &table, a.oracle.oracle_dt);
    create_dir(&run.out)?;
    let results = for_each_net(run, &nets, |n| {
        respond_one(n, &table, run.q, &dcm_cfg, &run.out)?;
        let p = prepare_net(n, &table, &cfg)?;
        let r = suite::evaluate(&p, &table, &dcm_cfg)?;
        let dir = run.out.join(&n.name);
        write_file(&dir.join("oracle.csv"), |w| {
            write_waveform_csv(
                w,
                p.oracle
                    .time
                    .iter()
                    .zip(&p.oracle.v_port)
                    .zip(&p.oracle.i_port)
                    .map(|((&t, &v), &i)| (t, v, i)),
            )
        })?;
        let json = serde_json::to_string_pretty(&r).expect("result serializes");
        write_file(&dir.join("verify.json"), |w| writeln!(w, "{json}"))?;
        Ok(r)
    })?;
    println!(
        "{:<20} {:<9} {:>11} {:>11} {:>11} {:>9} {:>9} {:>9}",
        "net", "model", "avg_A", "rms_A", "peak_A", "avg_err", "rms_err", "peak_err"
    );
    let mut worst: f64 = 0.0;
    for r in &results {
        println!(
            "{:<20} {:<9} {:>11.4e} {:>11.4e} {:>11.4e}",
            r.name, "oracle", r.oracle.avg, r.oracle.rms, r.oracle.peak
        );
        print_rows("dcm", r, &r.dcm, &r.dcm_error);
        if a.baseline {
            print_rows("c_total", r, &r.baseline, &r.baseline_error);
        }
        println!(
            "{:<20} speedup {:.1}x (dcm {:.2e} s, oracle {:.2e} s)",
            r.name,
            r.oracle_runtime_s / r.dcm_runtime_s.max(1e-9),
            r.dcm_runtime_s,
            r.oracle_runtime_s
        );
        worst = worst.max(r.dcm_error.max_of_three());
    }
    if worst > a.max_err {
        return Err(CliError::new(
            Kind::Threshold,
            format!("worst error {:.3}% exceeds --max-err {:.3}%", 100.0 * worst, 100.0 * a.max_err),
        ));
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let run = &a.run;
    check_q(run.q)?;
    if a.ns.is_empty() {
        return Err(CliError::usage("no step counts given"));
    }
    for &n in &a.ns {
        DcmConfig { n_steps: n, ..run.dcm() }.validate()?;
    }
    let nets = load_nets(run)?;
    let table = load_table(run)?;
    let cfg = suite_config(run, &table, a.oracle.oracle_dt);
    create_dir(&run.out)?;
    let rows = for_each_net(run, &nets, |n| {
        let p = prepare_net(n, &table, &cfg)?;
        a.ns
            .iter()
            .map(|&k| {
                let c = DcmConfig { n_steps: k, ..run.dcm() };
                Ok((k, suite::evaluate(&p, &table, &c)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let path = run.out.join("sweep.csv");
    write_file(&path, |w| {
        writeln!(w, "net,n_steps,avg_err,rms_err,peak_err,runtime_s,residual_max")?;
        for (k, r) in rows.iter().flatten() {
            let e = r.dcm_error;
            writeln!(
                w,
                "{},{k},{:e},{:e},{:e},{:e},{:e}",
                r.name, e.avg, e.rms, e.peak, r.dcm_runtime_s, r.residual_max
            )?;
        }
        Ok(())
    })?;
    println!("{:<20} {:>6} {:>9} {:>9} {:>9} {:>9}", "net", "N", "avg_err", "rms_err", "peak_err", "time_s");
    for (k, r) in rows.iter().flatten() {
        let e = r.dcm_error;
        println!(
            "{:<20} {k:>6} {:>8.3}% {:>8.3}% {:>8.3}% {:>9.2e}",
            r.name,
            100.0 * e.avg,
            100.0 * e.rms,
            100.0 * e.peak,
            r.dcm_runtime_s
        );
    }
    Ok(())
}

pub fn suite(a: &SuiteArgs) -> Result<()> {
    check_q(a.q)?;
    if a.sizes.is_empty() {
        return Err(CliError::usage("no net sizes given"));
    }
    let base = SuiteConfig::default();
    let dcm_cfg = DcmConfig {
        n_steps: a.n_steps,
        tol: a.tol,
        crossing: match a.crossing {
            crate::CrossingArg::Incremental => dcm::Crossing::Incremental,
            crate::CrossingArg::Absolute => dcm::Crossing::Absolute,
        },
        ..base.dcm.clone()
    };
    dcm_cfg.validate()?;
    for &n in &a.ns {
        DcmConfig { n_steps: n, ..dcm_cfg.clone() }.validate()?;
    }
    let cfg = SuiteConfig {
        q: a.q,
        dcm: dcm_cfg,
        ..base
    };
    create_dir(&a.out)?;
    let benches = generate_suite(a.seed, &a.sizes);
    let report = pool(a.jobs)?.install(|| -> Result<_> {
        let run = SuiteRun::new(&benches, &cfg)?;
        let results = run.evaluate_all(&cfg.dcm)?;
        let fastest = benches.iter().map(|b| b.slew).fold(f64::INFINITY, f64::min);
        let sweep = run.n_sweep(&a.ns, &cfg.dcm, |b| b.slew == fastest)?;
        Ok(run.report(results, sweep))
    })?;
    let path: PathBuf = a.out.join("report.json");
    let json = report.to_json();
    write_file(&path, |w| writeln!(w, "{json}"))?;
    print!("{}", report.to_table());
    if let Some(limit) = a.max_err {
        let worst = report
            .results
            .iter()
            .map(|r| r.dcm_error.max_of_three())
            .fold(0.0, f64::max);
        if worst > limit {
            return Err(CliError::new(
                Kind::Threshold,
                format!("worst error {:.3}% exceeds --max-err {:.3}%", 100.0 * worst, 100.0 * limit),
            ));
        }
    }
    Ok(())
}
