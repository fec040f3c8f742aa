//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of the outcome so `cargo test` reports the lines
//! without aborting; set RWRE_ACCEPTANCE_STRICT=1 to exit nonzero on any FAIL.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num::BigRational;
use rwre_core::env::{builtin, EnvironmentModel};
use rwre_core::lattice;
use rwre_core::oracle::{forward_time_moment, pair_tally, regen_tally};
use rwre_core::pair::YOptions;
use rwre_core::regen::{degeneracy_check, detect_regenerations, estimate_diffusion, estimate_velocity, slabs, Confirm};
use rwre_core::renewal::{forward_recurrence, forward_recurrence_bound, halfline_green, occupation_experiment, OneDimWalk, SampledChain};
use rwre_core::rng::StreamKey;
use rwre_core::walk::simulate;
use rwre_lab::config::powers_of_two;
use rwre_lab::experiments::*;
use rwre_lab::run::{run, Command, RunOptions};
use rwre_lab::ExperimentConfig;

type Outcome = Result<(bool, String), String>;

fn model(name: &str) -> Arc<EnvironmentModel> {
    Arc::new(builtin(name).expect("built-in model"))
}

fn key(tag: &str) -> StreamKey {
    StreamKey::new(20_240_601, tag)
}

fn ci(fit: &rwre_core::stats::FitResult) -> String {
    format!("slope {:.4} CI ({:.4}, {:.4})", fit.slope, fit.ci95.0, fit.ci95.1)
}

fn closed_form() -> Outcome {
    let m = model("half-half");
    let mut first_ok = 0;
    let paths = 1000;
    for i in 0..paths {
        let k = key("half-half").with(i);
        let env = rwre_core::env::Environment::new(Arc::clone(&m), k.tagged("env").hash());
        let p = simulate(&env, &lattice::origin(2), 1024, &mut k.tagged("walk").stream());
        let rec = detect_regenerations(&p, 1, Confirm::Horizon(512)).map_err(|e| e.to_string())?;
        first_ok += usize::from(rec.times.first() == Some(&1));
    }
    let k = key("half-half-long");
    let env = rwre_core::env::Environment::new(Arc::clone(&m), k.tagged("env").hash());
    let p = simulate(&env, &lattice::origin(2), 100_002, &mut k.tagged("walk").stream());
    let rec = detect_regenerations(&p, 1, Confirm::ToEnd).map_err(|e| e.to_string())?;
    let sl = slabs(&p, &rec);
    let v = estimate_velocity(&sl).map_err(|e| e.to_string())?;
    let d = estimate_diffusion(&sl, &v).map_err(|e| e.to_string())?;
    let v_ok = (0..2).all(|i| (v.v_hat[i] - 0.5).abs() <= 3.0 * v.se[i]);
    let target = [[0.25, -0.25], [-0.25, 0.25]];
    let d_err = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (d.d_hat[i][j] - target[i][j]).abs()).fold(0.0, f64::max);
    let deg = degeneracy_check(&m, &d.d_hat);
    let u = 1.0 / 2f64.sqrt();
    let along = deg.complement.iter().zip(&deg.quadratic).find(|(c, _)| (c[0] * u + c[1] * u).abs() > 1.0 - 1e-9).map(|(_, q)| *q);
    let pass = first_ok == paths as usize && v_ok && d.slab_count >= 100_000 && d_err <= 0.02 && along.is_some_and(|q| q.abs() < 0.01);
    Ok((
        pass,
        format!(
            "tau1=1 on {first_ok}/{paths} paths; v=({:.5}, {:.5}) se ({:.5}, {:.5}); {} slabs, max |D-target| {:.5}; u'Du along (1,1)/sqrt2 {:?}",
            v.v_hat[0], v.v_hat[1], v.se[0], v.se[1], d.slab_count, d_err, along
        ),
    ))
}

fn oracles() -> Outcome {
    let r = regen_tally(12);
    let (p, _) = pair_tally(8);
    let pass = r.mismatches.is_empty() && p.mismatches.is_empty();
    Ok((pass, format!("{} paths, {} mismatches; {} pair-paths, {} mismatches", r.checked, r.mismatches.len(), p.checked, p.mismatches.len())))
}

fn tails() -> Outcome {
    let m = model("benchmark-A");
    let tau = tau1_tail(&m, 10_000, 2048, 1, Confirm::Horizon(512), &key("tau1")).map_err(|e| e.to_string())?;
    let mu = mu1_tail(&m, 10_000, 4096, Confirm::Horizon(512), &key("mu1")).map_err(|e| e.to_string())?;
    let ok = |t: &TailResult| !t.fit.degenerate && t.fit.rate > 0.0 && t.fit.ci95.0 > 0.0 && t.fit.samples >= 10_000;
    let line = |t: &TailResult| format!("rate {:.4} CI ({:.4}, {:.4}) n={} censored {}", t.fit.rate, t.fit.ci95.0, t.fit.ci95.1, t.fit.samples, t.censored);
    Ok((ok(&tau) && ok(&mu), format!("tau1 {}; max(mu1, mu1~) {}", line(&tau), line(&mu))))
}

fn variance() -> Outcome {
    let grid = powers_of_two(6, 12);
    let r = quenched_mean_variance(&model("benchmark-A"), &grid, 200, 64, &key("variance")).map_err(|e| e.to_string())?;
    let c = synthetic_ballistic_variance(&grid, 200, 64, &key("control")).map_err(|e| e.to_string())?;
    let clipped = r.rows.iter().filter(|x| x.clipped).count();
    let (main_ok, main) = match &r.fit {
        Some(fit) => (fit.upper() < 1.0, ci(fit)),
        None => (false, format!("no fit: {clipped} of {} estimates clipped at 0, largest se {:.3}", r.rows.len(), r.rows.iter().map(|x| x.se).fold(0.0, f64::max))),
    };
    let slope = c.fit.as_ref().map_or(f64::NAN, |f| f.slope);
    Ok((main_ok && (slope - 2.0).abs() <= 0.1, format!("quenched mean {main}; ballistic control slope {slope:.4}")))
}

fn intersections() -> Outcome {
    let origin = lattice::origin(2);
    let r = intersection_experiment(&model("benchmark-A"), &powers_of_two(6, 13), 200, (&origin, &origin), &key("intersections"))
        .map_err(|e| e.to_string())?;
    match &r.fit {
        Some(fit) => Ok((fit.upper() < 1.0, ci(fit))),
        None => Ok((false, "no fit".into())),
    }
}

fn comparison_walk() -> Outcome {
    let m = model("micro");
    let opts = YOptions::default();
    let sym = qbar_symmetry(&m, 100_000, &opts, &key("qbar")).map_err(|e| e.to_string())?;
    let e = hyperplane_direction(&m).map_err(|e| e.to_string())?;
    let starts = vec![lattice::origin(m.d), e.clone(), e.iter().map(|c| 2 * c).collect()];
    let inc = support_inclusion(&m, &starts, 100_000, &opts, &key("inclusion")).map_err(|e| e.to_string())?;
    Ok((
        sym.pass && inc.violations.is_empty(),
        format!("TV {:.5} vs 3 x MC bound {:.5}; {} inclusion violations over {} starts", sym.tv, 3.0 * sym.mc_bound, inc.violations.len(), starts.len()),
    ))
}

fn coupling() -> Outcome {
    let r = coupling_decay(&model("benchmark-A"), &[2, 4, 8, 16], 10_000, &YOptions::default(), &key("coupling")).map_err(|e| e.to_string())?;
    let ps: Vec<String> = r.rows.iter().map(|x| format!("{:.4}", x.p)).collect();
    let (fit_ok, fit) = match &r.fit {
        Some(f) => (f.upper() < 0.0, ci(f)),
        None => (false, "no disagreements".into()),
    };
    Ok((
        r.strictly_decreasing && fit_ok && r.mechanism_violations() == 0,
        format!("p = [{}]; {fit}; {} mechanism violations", ps.join(", "), r.mechanism_violations()),
    ))
}

fn green() -> Outcome {
    let t = halfline_green(&OneDimWalk::simple(), 0, 30, 64).map_err(|e| e.to_string())?;
    let mut err: f64 = 0.0;
    for s in 1..=30 {
        for u in 1..=30 {
            let g = t.get(s, u).ok_or("outside window")?;
            err = err.max((g - 2.0 * s.min(u) as f64).abs());
        }
    }
    let mut within = 0;
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for w in 0..3 {
        let walk = OneDimWalk::random_symmetric(3, &mut key("green-walk").with(w).stream());
        let table = halfline_green(&walk, 0, 12, 64).map_err(|e| e.to_string())?;
        let rows = green_mc_check(&walk, &table, 4, &[1, 2, 4, 8], 100_000, 3.0, &key("green-mc").with(w)).map_err(|e| e.to_string())?;
        for r in &rows {
            total += 1;
            within += usize::from(r.within);
            worst = worst.max((r.mc_mean - r.exact).abs() / r.mc_se);
        }
    }
    Ok((err <= 1e-9 && within == total, format!("simple walk max error {err:.2e}; {within}/{total} Monte Carlo values within 3 se (worst {worst:.2} se)")))
}

fn recurrence() -> Outcome {
    let rat = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    let exact_laws = [
        vec![rat(1, 2), rat(1, 2)],
        vec![rat(1, 3), rat(0, 1), rat(2, 3)],
        vec![rat(1, 10), rat(2, 10), rat(3, 10), rat(4, 10)],
        vec![rat(0, 1), rat(0, 1), rat(0, 1), rat(1, 1)],
        vec![rat(5, 7), rat(1, 7), rat(0, 1), rat(1, 7)],
    ];
    let mut mismatches = 0;
    let mut compared = 0;
    for law in &exact_laws {
        for p in 1..=2 {
            let rec = forward_recurrence(law, 20, p);
            for (n, b) in rec.iter().enumerate() {
                compared += 1;
                mismatches += usize::from(*b != forward_time_moment(law, n, p));
            }
        }
    }
    let float_laws: [&[f64]; 6] = [&[0.5, 0.5], &[1.0 / 3.0, 0.0, 2.0 / 3.0], &[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0, 0.0, 1.0], &[0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1], &[0.25; 4]];
    let mut violations = 0;
    for law in float_laws {
        for p in 1..=2 {
            let bound = forward_recurrence_bound(law, p);
            let sup = forward_recurrence(law, 400, p).into_iter().fold(0.0, f64::max);
            violations += usize::from(sup > bound + 1e-12);
        }
    }
    Ok((
        mismatches == 0 && violations == 0,
        format!("{compared} exact comparisons, {mismatches} mismatches; {violations} bound violations over {} laws", float_laws.len()),
    ))
}

fn occupation() -> Outcome {
    let m = model("benchmark-A");
    let chain = SampledChain { model: Arc::clone(&m), opts: YOptions::default(), independent: false };
    let r = occupation_experiment(&chain, &lattice::origin(m.d), 1.0, 1.0, &powers_of_two(8, 13), 64, &key("occupation")).map_err(|e| e.to_string())?;
    match &r.fit {
        Some(fit) => Ok((fit.upper() < 1.0, ci(fit))),
        None => Ok((false, "occupation sums vanish".into())),
    }
}

fn clt() -> Outcome {
    let m = model("benchmark-A");
    let est = estimate_from_paths(&m, 200, 100_000, 1, Confirm::Horizon(512), &key("clt-estimate")).map_err(|e| e.to_string())?;
    let v = &est.diffusion;
    let mut pass = true;
    let mut parts = vec![format!(
        "v=({:.5}, {:.5}) D=[[{:.4}, {:.4}], [{:.4}, {:.4}]]",
        v.v_hat[0], v.v_hat[1], v.d_hat[0][0], v.d_hat[0][1], v.d_hat[1][0], v.d_hat[1][1]
    )];
    for seed in [1u64, 2] {
        let r = clt_experiment(&m, seed, 4096, 10_000, &v.v_hat, &v.d_hat, &key("clt").with(seed)).map_err(|e| e.to_string())?;
        for (axis, dir) in r.directions.iter().take(2).enumerate() {
            let p = dir.p_value.unwrap_or(0.0);
            pass &= p > KS_LEVEL;
            parts.push(format!(
                "env {seed} e{}: p={p:.4} (offset {:.4} +- {:.4}, recentred p={:.4})",
                axis + 1,
                dir.mean_offset,
                dir.mean_offset_se,
                dir.p_value_recentred.unwrap_or(f64::NAN)
            ));
        }
    }
    Ok((pass, parts.join("; ")))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (p.file_name().expect("file name").to_string_lossy().into_owned(), fs::read(&p).expect("readable"))
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cmds = [
        ("benchmark-A", Command::Hypotheses),
        ("benchmark-A", Command::Simulate),
        ("benchmark-A", Command::Regen),
        ("benchmark-A", Command::Estimate),
        ("benchmark-A", Command::Pair),
        ("micro", Command::Ychain),
        ("benchmark-A", Command::Green),
        ("benchmark-A", Command::Variance),
        ("benchmark-A", Command::Intersections),
        ("benchmark-A", Command::Clt),
        ("benchmark-A", Command::Occupation),
    ];
    let mut differing = Vec::new();
    let mut compared = 0;
    for (name, cmd) in cmds {
        let mut outs = Vec::new();
        for (i, threads) in [1usize, 4, 1].into_iter().enumerate() {
            let dir = root.path().join(format!("{}-{i}", cmd.name()));
            let cfg = ExperimentConfig {
                model: name.into(),
                master_seed: 5,
                n_grid: Some(vec![32, 64, 128, 256]),
                replicas: 16,
                environments: 8,
                walks_per_env: 8,
                steps: 5_000,
                samples: 500,
                confirm_horizon: 128,
                y_horizon: 64,
                radii: vec![1, 2],
                exit_cap: 1000,
                clt_n: 512,
                clt_walks: 300,
                threads,
                out: dir.clone(),
                ..ExperimentConfig::default()
            };
            run(cmd, &cfg, RunOptions::default()).map_err(|e| e.to_string())?;
            outs.push(files(&dir));
        }
        compared += outs[0].len();
        if outs[0] != outs[1] || outs[0] != outs[2] {
            differing.push(cmd.name());
        }
    }
    Ok((differing.is_empty(), format!("{compared} files from {} commands compared at 1 and 4 threads; differing: {differing:?}", cmds.len())))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("closed-form half-half model", closed_form),
        ("regeneration oracle equivalence", oracles),
        ("exponential regeneration tails", tails),
        ("subdiffusive quenched mean", variance),
        ("intersection sublinearity", intersections),
        ("symmetric comparison walk", comparison_walk),
        ("coupling decay", coupling),
        ("half-line Green function", green),
        ("forward recurrence", recurrence),
        ("occupation sublinearity", occupation),
        ("quenched CLT diagnostic", clt),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{} [{}] {name}: {detail} ({:.1}s)", if pass { "PASS" } else { "FAIL" }, i + 1, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var("RWRE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
