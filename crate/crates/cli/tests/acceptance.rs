//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::fs;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vistrack::costs::formation;
use vistrack::gradcheck::{run_audit, AuditConfig};
use vistrack::minco::Minco;
use vistrack::sim::config::{MembershipEvent, ScenarioConfig};
use vistrack::sim::metrics::compute_metrics_filtered;
use vistrack::sim::run_scenario;
use vistrack::ssdf::bench::{bench_scene, bundled_scenes};
use vistrack::ssdf::{distance_transform_2d, SphericalGridSpec, SsdfConfig};

type V3 = Vector3<f64>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn ssdf_bench() -> (Verdict, Verdict) {
    let cfg = SsdfConfig::default();
    let mut accuracy = true;
    let mut speed = true;
    let mut acc_notes = Vec::new();
    let mut speed_notes = Vec::new();
    for scene in bundled_scenes() {
        let clock = Instant::now();
        let [inc, bf] = bench_scene(&scene, &cfg, 5);
        let secs = clock.elapsed().as_secs_f64();
        let ratio = bf.time_ms / inc.time_ms;
        accuracy &= inc.cum_error_rad <= 1e-4 && secs <= 10.0;
        speed &= inc.time_ms < bf.time_ms && ratio >= 1.5;
        acc_notes.push(format!(
            "{} err {:.2e} rad in {:.1} s",
            scene.name, inc.cum_error_rad, secs
        ));
        speed_notes.push(format!(
            "{} {:.1}/{:.1} ms ({ratio:.2}x)",
            scene.name, inc.time_ms, bf.time_ms
        ));
    }
    (
        verdict(accuracy, acc_notes.join("; ")),
        verdict(speed, speed_notes.join("; ")),
    )
}

fn unit(theta: f64, phi: f64) -> V3 {
    V3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

fn random_layer(n: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let density = rng.random_range(0.02..0.9);
    (0..n).map(|_| rng.random_bool(density)).collect()
}

/// Nearest visible direction by exhaustive search.
fn exhaustive(dirs: &[V3], visible: &[bool]) -> Vec<f64> {
    let seen: Vec<V3> = dirs
        .iter()
        .zip(visible)
        .filter(|(_, &v)| v)
        .map(|(d, _)| *d)
        .collect();
    dirs.iter()
        .zip(visible)
        .map(|(d, &v)| {
            if v {
                return 0.0;
            }
            if seen.is_empty() {
                return -std::f64::consts::PI;
            }
            let best = seen
                .iter()
                .map(|s| d.cross(s).norm().atan2(d.dot(s)))
                .fold(f64::INFINITY, f64::min);
            -best
        })
        .collect()
}

fn transform_exactness() -> Verdict {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for dang in [0.05, 0.1, 0.2] {
        let spec = SphericalGridSpec::new(V3::zeros(), 1.0, 0.5, dang).unwrap();
        let dirs: Vec<V3> = (0..spec.n_theta)
            .flat_map(|i| (0..spec.n_phi).map(move |j| (i, j)))
            .map(|(i, j)| unit(spec.theta_at(i), spec.phi_at(j)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut local = 0.0f64;
        for _ in 0..100 {
            let layer = random_layer(spec.directions(), &mut rng);
            let got = distance_transform_2d(&spec, &layer);
            let want = exhaustive(&dirs, &layer);
            for (g, w) in got.d.iter().zip(&want) {
                local = local.max((g - w).abs());
            }
        }
        worst = worst.max(local);
        notes.push(format!("dang {dang}: max dev {local:.1e}"));
    }
    // both sides evaluate the same arc length; only rounding may differ
    verdict(worst <= 1e-12, notes.join("; "))
}

fn gradient_audit() -> Verdict {
    let results = run_audit(&AuditConfig {
        instances: 100,
        ..AuditConfig::default()
    });
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let lib_ok = results
        .iter()
        .all(|r| r.passed && r.instances >= 100 && r.max_rel_error <= 1e-4);
    let status = Command::new(env!("CARGO_BIN_EXE_vistrack"))
        .args(["gradcheck", "--instances", "100"])
        .output()
        .expect("binary runs")
        .status
        .code();
    verdict(
        lib_ok && status == Some(0),
        format!(
            "{} checks, worst rel err {worst:.2e}, exit {status:?}",
            results.len()
        ),
    )
}

/// Projected gradient flow of the formation energy on the unit sphere.
fn settle(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pts: Vec<V3> = (0..n)
        .map(|_| {
            V3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize()
        })
        .collect();
    for _ in 0..5000 {
        let grads: Vec<V3> = (0..n)
            .map(|i| {
                let others: Vec<V3> = (0..n).filter(|&j| j != i).map(|j| pts[j]).collect();
                formation(&pts[i], &others, 1.0).1
            })
            .collect();
        for (p, g) in pts.iter_mut().zip(&grads) {
            *p = (*p - (g - *p * g.dot(p)) * 0.05).normalize();
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push(pts[i].dot(&pts[j]).clamp(-1.0, 1.0).acos().to_degrees());
        }
    }
    out
}

fn thomson() -> Verdict {
    let four = settle(4);
    let two = settle(2);
    let tetra = (-1.0f64 / 3.0).acos().to_degrees();
    let ok4 = four.iter().all(|a| (a - tetra).abs() <= 1.0);
    let ok2 = (two[0] - 180.0).abs() <= 0.5;
    verdict(
        ok4 && ok2,
        format!("N=4 angles {four:.2?}; N=2 angle {:.3}", two[0]),
    )
}

/// Degree-(2s-1) polynomial on `[0, h]` whose derivatives `0..s` take the
/// given values at both ends.
fn hermite(s: usize, h: f64, left: &[f64], right: &[f64]) -> Vec<f64> {
    let n = 2 * s;
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = nalgebra::DVector::zeros(n);
    for d in 0..s {
        for j in d..n {
            let fall: f64 = ((j - d + 1)..=j).map(|v| v as f64).product();
            a[(d, j)] = if j == d { fall } else { 0.0 };
            a[(s + d, j)] = fall * h.powi((j - d) as i32);
        }
        rhs[d] = left[d];
        rhs[s + d] = right[d];
    }
    a.lu()
        .solve(&rhs)
        .expect("hermite system")
        .iter()
        .copied()
        .collect()
}

fn minco_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut interp = 0.0f64;
    let mut cont = 0.0f64;
    let mut optimal = true;
    let mut perturbations = 0;
    for s in [2usize, 3, 4] {
        let m = 5;
        let dims = 2;
        let head = DMatrix::from_fn(s, dims, |_, _| rng.random_range(-1.0..1.0));
        let tail = DMatrix::from_fn(s, dims, |_, _| rng.random_range(-1.0..1.0));
        let pts = DMatrix::from_fn(m - 1, dims, |_, _| rng.random_range(-3.0..3.0));
        let times: Vec<f64> = (0..m).map(|_| rng.random_range(0.3..1.5)).collect();
        let tr = Minco::new(s, &head, &tail, &pts, &times).unwrap().traj;
        for i in 0..m - 1 {
            let p = tr.eval_piece(i, times[i], 0);
            for k in 0..dims {
                interp = interp.max((p[k] - pts[(i, k)]).abs());
            }
            for d in 0..=2 * s - 2 {
                let a = tr.eval_piece(i, times[i], d);
                let b = tr.eval_piece(i + 1, 0.0, d);
                for k in 0..dims {
                    cont = cont.max((a[k] - b[k]).abs() / (1.0 + a[k].abs()));
                }
            }
        }
        // feasible perturbations keep the points, the boundary states and
        // continuity up to order s - 1: shift the interior junction
        // derivatives 1..s and re-interpolate each piece
        let (energy, _, _) = tr.control_effort();
        let n = tr.n_coeff();
        for _ in 0..100 {
            let mut other = tr.clone();
            let shifts: Vec<Vec<Vec<f64>>> = (0..=m)
                .map(|j| {
                    (0..dims)
                        .map(|_| {
                            (0..s)
                                .map(|d| {
                                    if d == 0 || j == 0 || j == m {
                                        0.0
                                    } else {
                                        rng.random_range(-1e-2..1e-2)
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            for piece in 0..m {
                for k in 0..dims {
                    let c = hermite(s, times[piece], &shifts[piece][k], &shifts[piece + 1][k]);
                    for (j, cj) in c.iter().enumerate() {
                        other.coeffs[(piece * n + j) * dims + k] += cj;
                    }
                }
            }
            let (e2, _, _) = other.control_effort();
            if e2 < energy - 1e-9 * (1.0 + energy) {
                optimal = false;
            }
            perturbations += 1;
        }
    }
    verdict(
        interp <= 1e-8 && cont <= 1e-8 && optimal && single_cubic_matches(),
        format!("interp {interp:.1e}, continuity {cont:.1e}, no descent in {perturbations} perturbations: {optimal}"),
    )
}

/// One piece, s = 2, rest-to-rest from 0 to 1 over duration T: the
/// minimum-acceleration trajectory is 3τ² - 2τ³ with τ = t/T.
fn single_cubic_matches() -> bool {
    let big_t = 1.7;
    let head = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
    let tail = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let tr = Minco::new(2, &head, &tail, &DMatrix::zeros(0, 1), &[big_t])
        .unwrap()
        .traj;
    (0..=20).all(|k| {
        let t = big_t * k as f64 / 20.0;
        let tau = t / big_t;
        (tr.at1(t, 0) - (3.0 * tau * tau - 2.0 * tau * tau * tau)).abs() <= 1e-8
    })
}

fn forest(seed: u64, density: f64, duration: f64) -> ScenarioConfig {
    ScenarioConfig::forest(seed, density, 1.0, duration)
}

fn end_to_end() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for seed in 1..=5 {
        let cfg = forest(seed, 1.0 / 32.0, 60.0);
        let (_, r) = run_scenario(&cfg).unwrap();
        let m = &r.metrics;
        let ok = m.gamma_vis >= 95.0
            && m.theta_avg >= 3.9
            && r.collisions == 0
            && (cfg.params.d_lb..=cfg.params.d_ub + 0.5).contains(&m.d_avg)
            && r.replans.mean_ms <= 66.0
            && r.min_separation >= cfg.params.r_s - 0.05;
        pass &= ok;
        notes.push(format!(
            "seed {seed}: gamma {:.2} theta {:.3} d {:.2} coll {} sep {:.2} replan {:.1} ms",
            m.gamma_vis, m.theta_avg, m.d_avg, r.collisions, r.min_separation, r.replans.mean_ms
        ));
    }
    verdict(pass, notes.join("; "))
}

fn ablation() -> Verdict {
    let variants: [(&str, fn(&mut ScenarioConfig)); 3] = [
        ("full", |_| {}),
        ("w/o visibility", |c| c.weights.visibility = 0.0),
        ("w/o formation", |c| c.weights.formation = 0.0),
    ];
    let mut means = [0.0; 3];
    let mut notes = Vec::new();
    for seed in 1..=3 {
        let mut row = Vec::new();
        for (k, (_, tweak)) in variants.iter().enumerate() {
            let mut cfg = forest(seed, 1.0 / 9.0, 30.0);
            tweak(&mut cfg);
            let (_, r) = run_scenario(&cfg).unwrap();
            means[k] += r.metrics.gamma_vis / 3.0;
            row.push(format!("{:.1}", r.metrics.gamma_vis));
        }
        notes.push(format!("seed {seed} [{}]", row.join(", ")));
    }
    notes.push(format!(
        "mean full {:.2}, w/o visibility {:.2}, w/o formation {:.2}",
        means[0], means[1], means[2]
    ));
    verdict(means[0] > means[1] && means[0] > means[2], notes.join("; "))
}

fn churn() -> Verdict {
    let drop_at = 10.0;
    let mut cfg = forest(2, 1.0 / 32.0, 30.0);
    cfg.events.push(MembershipEvent::Drop {
        at: drop_at,
        agent: 3,
    });
    let (out, _) = run_scenario(&cfg).unwrap();
    let after = compute_metrics_filtered(&out.log, drop_at, cfg.duration, |i| i != 3).unwrap();
    let survivors_ok = after.gamma_vis >= 90.0;

    let mut cfg = forest(2, 1.0 / 32.0, 20.0);
    cfg.agents[3].join_at = Some(3.0);
    let ready = 3.0 + cfg.join_delay;
    let limit = ready + 2.0 * cfg.period();
    let (out, _) = run_scenario(&cfg).unwrap();
    let late: Vec<_> = out
        .replans
        .iter()
        .filter(|r| r.agent != 3 && r.t >= limit)
        .collect();
    let join_ok = !late.is_empty() && late.iter().all(|r| r.teammates.contains(&3));
    let first_seen: Vec<String> = (0..3)
        .map(|a| {
            out.replans
                .iter()
                .find(|r| r.agent == a && r.t >= ready && r.teammates.contains(&3))
                .map_or("never".into(), |r| format!("{:.3}", r.t - ready))
        })
        .collect();
    verdict(
        survivors_ok && join_ok,
        format!(
            "survivor gamma after drop {:.2}; joiner seen by 0,1,2 after {} s (limit {:.3})",
            after.gamma_vis,
            first_seen.join("/"),
            2.0 * cfg.period()
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    fs::write(&scenario, forest(4, 1.0 / 32.0, 10.0).to_json()).unwrap();
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_vistrack"))
            .args([
                "run",
                scenario.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .expect("binary runs");
        assert!(status.code().is_some_and(|c| c == 0 || c == 2));
        csvs.push(fs::read(out.join("timeseries.csv")).unwrap());
    }
    verdict(
        csvs[0] == csvs[1] && !csvs[0].is_empty(),
        format!("{} bytes per run", csvs[0].len()),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &'static str, v: Verdict| {
        println!(
            "criterion {n:>2} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((n, name, v));
    };
    let (accuracy, speed) = ssdf_bench();
    report(1, "ssdf oracle equivalence", accuracy);
    report(2, "ssdf speedup", speed);
    report(3, "2-d transform exactness", transform_exactness());
    report(4, "gradient audit", gradient_audit());
    report(5, "thomson distribution", thomson());
    report(6, "minco correctness", minco_checks());
    report(7, "end-to-end forest", end_to_end());
    report(8, "ablation ordering", ablation());
    report(9, "membership churn", churn());
    report(10, "determinism", determinism());
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, v)| !v.pass)
        .map(|(n, name, _)| format!("{n} {name}"))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
