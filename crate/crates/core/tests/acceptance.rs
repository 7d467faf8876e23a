//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hopbound::envelope::{effective_envelope, sum_envelopes, FlowSpec, PeakRate};
use hopbound::node::{busy_period, AdmissionMode, RouterConfig, RouterState};
use hopbound::oracle::{grid_delay_bound, lindley_queue, GridSpec};
use hopbound::scenario::{load_scenario, Scenario, SweepParam};
use hopbound::signaling::{HandoverOutcome, Verdict};
use hopbound::sim::{fifo_link_service, run, RunOptions};
use hopbound::{FlowId, NodeId, Nonce};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.toml"))
}

fn load(name: &str) -> Scenario {
    load_scenario(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const FIXTURES: [&str; 7] = [
    "single_flow_greedy",
    "n50_stat",
    "saturation_sweep",
    "handover_disjoint",
    "handover_overlap",
    "handover_reject",
    "lossy_mesh",
];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hard_bound_soundness() -> Outcome {
    let s = load("single_flow_greedy");
    let flow = &s.flow_instances().unwrap()[0].spec;
    let (c, l) = (1.5e6, s.packet_size);

    let env = flow.envelope();
    let grid = grid_delay_bound(|t| env.eval(t).unwrap(), c, GridSpec::new(0.2, 1_000_000).unwrap());
    ensure((grid - 0.1 / 3.0).abs() <= 1e-7, || format!("grid oracle gives {grid}"))?;

    let router = RouterState::new(RouterConfig::new("r1", c, 1e-6, l).with_mode(AdmissionMode::Deterministic)).unwrap();
    let hop = router.local_delay_bound(flow).unwrap().value;
    let expected = 0.1 / 3.0 + l / c;
    ensure((hop - expected).abs() <= 1e-12, || format!("per-hop bound {hop}, expected {expected}"))?;

    let r = run(&s, &RunOptions::summary_only()).map_err(|e| e.to_string())?;
    let m = &r.summary;
    ensure(m.admitted == 1, || format!("admitted {}", m.admitted))?;
    ensure(m.samples == 100_000, || format!("{} samples", m.samples))?;
    ensure(m.violations == 0 && m.hop_violations == 0, || {
        format!("{} end-to-end and {} per-hop violations", m.violations, m.hop_violations)
    })?;
    Ok(format!("bound {hop:.9} s, {} packets, 0 violations", m.samples))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let c = rng.random_range(1e6..1e7);
        let n = rng.random_range(1..=5usize);
        let l = rng.random_range(0.0..12_000.0);
        let specs: Vec<FlowSpec> = (0..n)
            .map(|i| {
                let rho = rng.random_range(0.01..0.8 / n as f64) * c;
                let sigma = rng.random_range(0.0..0.02 / n as f64) * c;
                let peak = if rng.random_bool(0.2) {
                    PeakRate::Unbounded
                } else {
                    PeakRate::Finite(rho * rng.random_range(1.0..6.0))
                };
                FlowSpec::new(format!("f{i}"), peak, rho, sigma, 1e-3, 1.0).unwrap()
            })
            .collect();
        let agg = sum_envelopes(&specs.iter().map(FlowSpec::envelope).collect::<Vec<_>>()).unwrap();
        let b = busy_period(c, &agg).unwrap();
        let peak_sum: f64 = specs.iter().map(|s| s.peak_rate.as_f64()).sum();
        // Keep the grid's worst-case error (max slope · step / C) under 1e-7.
        if peak_sum.is_finite() && (peak_sum / c).max(1.0) * b > 0.1 {
            continue;
        }
        let mut router =
            RouterState::new(RouterConfig::new("r", c, 1e-6, l).with_mode(AdmissionMode::Deterministic)).unwrap();
        for (i, s) in specs[..n - 1].iter().enumerate() {
            router.reserve_tentative(s, Nonce(i as u64), 0.0).unwrap();
            router.commit(&s.flow_id, Nonce(i as u64)).unwrap();
        }
        let local = router.local_delay_bound(&specs[n - 1]).unwrap().value - l / c;
        let grid = if b > 0.0 {
            grid_delay_bound(|t| agg.eval(t).unwrap(), c, GridSpec::new(b, 1_000_000).unwrap())
        } else {
            0.0
        };
        let diff = (local - grid).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-7, || format!("case {cases}: local {local} vs grid {grid}"))?;
        cases += 1;
    }
    Ok(format!("200 configurations, worst |difference| {worst:.3e} s"))
}

fn statistical_guarantee() -> Outcome {
    let s = load("n50_stat");
    let mut det = s.clone();
    det.admission_mode = AdmissionMode::Deterministic;
    let d = run(&det, &RunOptions::admit_only()).map_err(|e| e.to_string())?.summary;
    ensure(d.admitted < 50, || format!("deterministic mode admitted {}", d.admitted))?;

    let m = run(&s, &RunOptions::summary_only()).map_err(|e| e.to_string())?.summary;
    ensure(m.admitted == 50, || format!("effective mode admitted {}", m.admitted))?;
    ensure(m.samples >= 1_000_000, || format!("only {} samples", m.samples))?;
    let limit = 1e-2 + 3.0 * (1e-2 / m.samples as f64).sqrt();
    ensure(m.violation_freq <= limit, || format!("violation frequency {} > {limit}", m.violation_freq))?;
    Ok(format!(
        "effective admits 50 vs deterministic {}, {} samples, violation frequency {} ≤ {limit:.5}",
        d.admitted, m.samples, m.violation_freq
    ))
}

fn utilization_gain() -> Outcome {
    let specs: Vec<_> = (0..100)
        .map(|i| FlowSpec::new(format!("f{i}"), PeakRate::Unbounded, 1e4, 1e3, 1e-6, 1.0).unwrap())
        .collect();
    let g0 = effective_envelope(&specs, 1e-6).unwrap().eval(0.0).unwrap();
    ensure((g0 - 26_283.0).abs() < 1.0, || format!("G(0) = {g0}"))?;

    let s = load("saturation_sweep");
    let capacities = [5e5, 1e6, 2e6, 4e6, 8e6];
    let mut strict = Vec::new();
    let mut table = Vec::new();
    for c in capacities {
        let point = s.with_param(SweepParam::Capacity, c).map_err(|e| e.to_string())?;
        let mut det = point.clone();
        det.admission_mode = AdmissionMode::Deterministic;
        let mut eff = point;
        eff.admission_mode = AdmissionMode::Effective;
        let d = run(&det, &RunOptions::admit_only()).map_err(|e| e.to_string())?.summary;
        let e = run(&eff, &RunOptions::admit_only()).map_err(|e| e.to_string())?.summary;
        ensure(e.admitted >= d.admitted && e.utilization >= d.utilization, || {
            format!("C={c}: effective {}/{} < deterministic {}/{}", e.admitted, e.utilization, d.admitted, d.utilization)
        })?;
        if e.admitted > d.admitted && e.utilization > d.utilization {
            strict.push(c);
        }
        table.push(format!("{c:e}:{}/{}", e.admitted, d.admitted));
    }
    ensure(strict.contains(&2e6), || "no strict gain at C = 2e6".into())?;
    Ok(format!("admitted effective/deterministic {}", table.join(" ")))
}

fn decision_soundness() -> Outcome {
    let mut admits = 0;
    for name in FIXTURES {
        let base = load(name);
        let opts = if name == "n50_stat" {
            RunOptions::admit_only()
        } else {
            RunOptions::summary_only()
        };
        for seed in 1..=20 {
            let s = base.with_param(SweepParam::Seed, seed as f64).map_err(|e| e.to_string())?;
            for mode in [AdmissionMode::Deterministic, AdmissionMode::Effective] {
                let mut s = s.clone();
                s.admission_mode = mode;
                let r = run(&s, &opts).map_err(|e| e.to_string())?;
                for d in r.decisions.iter().filter(|d| d.decision.verdict == Verdict::Admit) {
                    admits += 1;
                    ensure(d.decision.cumulative_bound <= d.app_delay_bound, || {
                        format!(
                            "{name} seed {seed}: admitted `{}` with bound {} > {}",
                            d.decision.flow_id, d.decision.cumulative_bound, d.app_delay_bound
                        )
                    })?;
                }
            }
        }
    }
    Ok(format!("{admits} admits over 7 scenarios × 20 seeds × 2 modes, 0 counterexamples"))
}

fn handover_conservation() -> Outcome {
    let route_of = |r: &hopbound::sim::RunResult, flow: &str| {
        let ha = &r.network.home_agents[&NodeId::new("ha")];
        let s = ha.session(&FlowId::new(flow)).unwrap();
        (
            s.active.as_ref().map(|a| a.route.hops.iter().map(|h| h.as_str().to_owned()).collect::<Vec<_>>()),
            s.degraded,
        )
    };
    let mut notes = Vec::new();
    for (name, expected_route, outcome) in [
        ("handover_disjoint", vec!["r2", "ar3"], HandoverOutcome::Admitted),
        ("handover_overlap", vec!["r0", "r1", "ar1"], HandoverOutcome::Admitted),
        ("handover_reject", vec!["r0", "r1", "ar1"], HandoverOutcome::Degraded),
    ] {
        let s = load(name);
        let r = run(&s, &RunOptions::summary_only()).map_err(|e| e.to_string())?;
        r.network.check_conservation().map_err(|e| format!("{name}: {e}"))?;
        let records = &r.summary.handovers;
        ensure(records.len() == 2 * s.handovers.len(), || format!("{name}: {} handover records", records.len()))?;
        ensure(records.iter().all(|h| h.outcome == outcome), || format!("{name}: outcomes {records:?}"))?;
        for flow in ["video", "voice"] {
            let (route, degraded) = route_of(&r, flow);
            ensure(route.as_deref() == Some(&expected_route.iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]), || {
                format!("{name}/{flow}: active route {route:?}")
            })?;
            ensure(degraded == (outcome == HandoverOutcome::Degraded), || format!("{name}/{flow}: degraded = {degraded}"))?;
        }
        ensure(r.summary.protocol_errors == 0, || format!("{name}: {} protocol errors", r.summary.protocol_errors))?;
        notes.push(format!("{name} ok"));
    }
    Ok(notes.join(", "))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for name in FIXTURES {
        let mut s = load(name);
        if name == "n50_stat" {
            s = s.with_param(SweepParam::Horizon, 200.0).map_err(|e| e.to_string())?;
        }
        let scenario = tmp.path().join(format!("{name}.toml"));
        std::fs::write(&scenario, s.to_toml()).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let out = tmp.path().join(format!("{name}-{attempt}"));
            let status = hopbound::cli::main_with_args([
                "hopbound".as_ref(),
                "run".as_ref(),
                scenario.as_os_str(),
                "--out".as_ref(),
                out.as_os_str(),
            ]);
            ensure(status == 0, || format!("{name}: exit {status}"))?;
            let mut files: Vec<_> = std::fs::read_dir(&out)
                .map_err(|e| e.to_string())?
                .map(|e| {
                    let p = e.unwrap().path();
                    (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap())
                })
                .collect();
            files.sort();
            outputs.push(files);
        }
        ensure(outputs[0].len() == 4, || format!("{name}: {} output files", outputs[0].len()))?;
        ensure(outputs[0] == outputs[1], || format!("{name}: outputs differ between runs"))?;
        compared += outputs[0].len();
    }
    Ok(format!("{compared} output files byte-identical across repeated runs"))
}

fn lindley_equivalence() -> Outcome {
    // Dyadic times and sizes keep both computations exact, so equality is bitwise.
    let capacity = (1u64 << 20) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut busy = 0;
    for k in 0..100 {
        let mut t = 0.0;
        let schedule: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                t += rng.random_range(0..64u32) as f64 / 1024.0;
                (t, rng.random_range(1..64u32) as f64 * 1024.0)
            })
            .collect();
        let fifo = fifo_link_service(&schedule, capacity);
        let oracle = lindley_queue(&schedule, capacity).map_err(|e| e.to_string())?;
        ensure(fifo == oracle, || format!("schedule {k}: waits differ"))?;
        busy += fifo.iter().filter(|w| **w > 0.0).count();
    }
    Ok(format!("100 schedules × 1000 packets identical ({busy} packets waited)"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("hard-bound soundness", hard_bound_soundness),
        ("oracle equivalence", oracle_equivalence),
        ("statistical guarantee", statistical_guarantee),
        ("utilization gain", utilization_gain),
        ("decision soundness", decision_soundness),
        ("handover conservation", handover_conservation),
        ("determinism", determinism),
        ("Lindley equivalence", lindley_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
