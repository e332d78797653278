//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Criteria 5-8 and 10 execute the scenario files
//! shipped under `configs/scenarios/`; the rest drive the library directly
//! with independent oracles.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;

use geonav::env::{
    generate_tasks, objective, EnvConfig, ObsNormalizer, NO_FLOORS,
};
use geonav::eval::{heading_deviation, spl, success_rate, EpisodeRecord};
use geonav::field::{
    derive_elements, gradient, DipoleField, DipoleFieldSpec, Element, FieldProvider, FieldVector,
    LinearElementField,
};
use geonav::geo::{angular_distance, GeoPoint, LocalFrame, RegionBounds};
use geonav::neural::{BatchTrace, Mlp, OutputActivation};
use geonav::reward::predicted_heading;
use geonav::rng::rng_from;
use geonav::scenario::run_scenario;

fn pass(criterion: u32, detail: &str) {
    println!("criterion {criterion}: PASS - {detail}");
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/scenarios")
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../target/acceptance/{name}"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Criterion 1: element-math identities on 1e5 random vectors within 1e-9
/// relative; degenerate vertical fields flagged, never NaN. Under 5 s.
#[test]
fn criterion_1_element_math_identities() {
    let t0 = Instant::now();
    let mut rng = rng_from(1, "acceptance/elements");
    let n = 100_000;
    let mut degenerate_seen = 0usize;
    for i in 0..n {
        let v = if i % 1000 == 0 {
            // Force vertical-field degeneracy regularly.
            FieldVector {
                bx: 0.0,
                by: 0.0,
                bz: rng.gen_range(-60000.0..60000.0),
            }
        } else {
            FieldVector {
                bx: rng.gen_range(-60000.0..60000.0),
                by: rng.gen_range(-60000.0..60000.0),
                bz: rng.gen_range(-60000.0..60000.0),
            }
        };
        let s = derive_elements(v).unwrap();
        assert!(
            s.bf.is_finite()
                && s.bh.is_finite()
                && s.decl_rad.is_finite()
                && s.incl_rad.is_finite(),
            "non-finite element for {v:?}"
        );
        if s.degenerate_horizontal {
            degenerate_seen += 1;
            assert_eq!(s.decl_rad, 0.0);
            continue;
        }
        let w = s.vector_from_elements();
        let scale = s.bf.max(1.0);
        assert!(
            (w.bx - v.bx).abs() / scale < 1e-9
                && (w.by - v.by).abs() / scale < 1e-9
                && (w.bz - v.bz).abs() / scale < 1e-9,
            "round-trip off for {v:?}"
        );
    }
    let dt = t0.elapsed();
    assert!(degenerate_seen >= n / 1000, "degenerate cases not exercised");
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}");
    pass(
        1,
        &format!("{n} vectors round-tripped, {degenerate_seen} degenerate flagged, {dt:?}"),
    );
}

/// Criterion 2: analytic backprop vs central finite differences on every
/// architecture the repo uses, 100 random parameterizations, max relative
/// error < 1e-4. Under 30 s.
#[test]
fn criterion_2_gradient_correctness() {
    let t0 = Instant::now();
    let actor_head = OutputActivation::TanhBounded {
        lo: vec![-std::f64::consts::FRAC_PI_2, 0.0],
        hi: vec![std::f64::consts::FRAC_PI_2, 50.0],
    };
    let architectures: Vec<(Vec<usize>, OutputActivation)> = vec![
        (vec![6, 64, 64, 2], actor_head.clone()),
        (vec![8, 64, 64, 1], OutputActivation::Identity),
        (vec![6, 16, 2], actor_head),
        (vec![8, 16, 16, 1], OutputActivation::Identity),
    ];
    let mut rng = rng_from(2, "acceptance/gradcheck");
    let mut worst_overall: f64 = 0.0;
    let mut parameterizations = 0usize;
    let per_arch = 25;
    for (dims, head) in &architectures {
        for _ in 0..per_arch {
            parameterizations += 1;
            let net = Mlp::new(dims, head.clone(), &mut rng).unwrap();
            let batch = 3;
            let inputs: Vec<f64> = (0..batch * dims[0])
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let dout = *dims.last().unwrap();
            let coeffs: Vec<f64> = (0..batch * dout)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let loss = |p: &Mlp| -> f64 {
                let mut t = BatchTrace::new(p, batch);
                p.forward_batch(&inputs, batch, &mut t).unwrap();
                t.output()
                    .iter()
                    .zip(coeffs.iter())
                    .map(|(o, c)| o * c)
                    .sum()
            };
            let mut trace = BatchTrace::new(&net, batch);
            net.forward_batch(&inputs, batch, &mut trace).unwrap();
            let mut grads = vec![0.0; net.params().len()];
            net.backward_batch(&mut trace, &coeffs, &mut grads).unwrap();
            let mut probe = net.clone();
            let h = 1e-5;
            for i in 0..net.params().len() {
                let orig = probe.params()[i];
                probe.params_mut()[i] = orig + h;
                let up = loss(&probe);
                probe.params_mut()[i] = orig - h;
                let down = loss(&probe);
                probe.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let denom = fd.abs().max(grads[i].abs()).max(1e-6);
                worst_overall = worst_overall.max((fd - grads[i]).abs() / denom);
            }
            assert!(
                worst_overall < 1e-4,
                "gradient check failed on {dims:?}: {worst_overall}"
            );
        }
    }
    let dt = t0.elapsed();
    assert_eq!(parameterizations, 100);
    assert!(dt.as_secs_f64() < 30.0, "took {dt:?}");
    pass(
        2,
        &format!("100 parameterizations, max relative error {worst_overall:.2e}, {dt:?}"),
    );
}

/// Orthogonal-gradient linear field with a diagonal task: the setting where
/// the parallel-approach heading provably minimizes next-step objective.
fn oracle_field() -> (LinearElementField, GeoPoint, GeoPoint) {
    let region = RegionBounds::new(0.0, 6.0, 0.0, 6.0).unwrap();
    let s = 1e-3;
    let field = LinearElementField::new(region)
        .unwrap()
        .decl(-0.3, (s, 0.0))
        .incl(-0.5, (0.0, s))
        // The third element varies along the task diagonal; its deficit
        // vanishes on the anti-diagonal through the destination.
        .bh(30000.0, (2.0, 2.0));
    let frame = *field.frame();
    let dest = frame.to_geo(300.0, 300.0);
    let origin = frame.to_geo(220.0, 220.0);
    (field, origin, dest)
}

/// Criterion 3: predicted heading matches the exhaustive 3600-heading argmin
/// of next-step objective within 1e-3 rad on 1000 random states, and
/// following it drives the objective monotonically below the threshold.
/// Under 10 s.
#[test]
fn criterion_3_parallel_approach_oracle() {
    let t0 = Instant::now();
    let (field, task_origin, task_dest) = oracle_field();
    let frame = *field.frame();
    let so = field.sample(&task_origin).unwrap();
    let sd = field.sample(&task_dest).unwrap();
    let pair = (Element::Decl, Element::Incl);
    let (dx, dy) = frame.to_km(&task_dest);
    let mut rng = rng_from(3, "acceptance/parallel");
    let probe = 1.0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t: f64 = rng.gen_range(-80.0..80.0);
        let t = if t.abs() < 2.0 { t.signum().max(1.0) * 10.0 } else { t };
        let (x, y) = (dx + t, dy - t);
        let p = frame.to_geo(x, y);
        let cur = field.sample(&p).unwrap();
        let g1 = gradient(&field, &frame, &p, pair.0, 1.0).unwrap();
        let g2 = gradient(&field, &frame, &p, pair.1, 1.0).unwrap();
        let pred = predicted_heading(&cur, &sd, &g1, &g2, pair).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..3600 {
            let th = k as f64 / 3600.0 * std::f64::consts::TAU - std::f64::consts::PI;
            let q = frame.to_geo(x + probe * th.cos(), y + probe * th.sin());
            let s = field.sample(&q).unwrap();
            let f = objective(&s, &sd, &so).unwrap();
            if f < best.0 {
                best = (f, th);
            }
        }
        let err = angular_distance(pred, best.1);
        worst = worst.max(err);
        assert!(err < 1e-3, "prediction {pred} vs argmin {} (err {err})", best.1);
    }

    // Monotone convergence from a far state on the same line.
    let zeta = 0.01;
    let mut pos = (dx - 60.0, dy + 60.0);
    let mut f_prev = {
        let s = field.sample(&frame.to_geo(pos.0, pos.1)).unwrap();
        objective(&s, &sd, &so).unwrap()
    };
    let mut steps = 0;
    while f_prev >= zeta {
        steps += 1;
        assert!(steps < 500, "did not converge");
        let p = frame.to_geo(pos.0, pos.1);
        let cur = field.sample(&p).unwrap();
        let g1 = gradient(&field, &frame, &p, pair.0, 1.0).unwrap();
        let g2 = gradient(&field, &frame, &p, pair.1, 1.0).unwrap();
        let h = predicted_heading(&cur, &sd, &g1, &g2, pair).unwrap();
        pos = (pos.0 + probe * h.cos(), pos.1 + probe * h.sin());
        let s = field.sample(&frame.to_geo(pos.0, pos.1)).unwrap();
        let f_now = objective(&s, &sd, &so).unwrap();
        assert!(
            f_now < f_prev,
            "objective rose from {f_prev} to {f_now} at step {steps}"
        );
        f_prev = f_now;
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}");
    pass(
        3,
        &format!(
            "1000 states matched the exhaustive argmin (worst {worst:.2e} rad), converged in {steps} steps, {dt:?}"
        ),
    );
}

/// Criterion 4: objective fixed points, exact: 3 at the origin, 0 at the
/// destination, for every generated task. Under 1 s.
#[test]
fn criterion_4_objective_fixed_points() {
    let t0 = Instant::now();
    let field = DipoleField::new(DipoleFieldSpec::default()).unwrap();
    let region = RegionBounds::new(90.0, 95.0, -15.0, -10.0).unwrap();
    let frame = LocalFrame::for_region(&region);
    let mut rng = rng_from(4, "acceptance/fixed-points");
    let tasks = generate_tasks(
        &field, &frame, &region, 300, 30.0, 50.0, 0.05, 250, &NO_FLOORS, &mut rng,
    )
    .unwrap();
    for task in &tasks {
        let so = field.sample(&task.origin).unwrap();
        let sd = field.sample(&task.destination).unwrap();
        assert_eq!(objective(&so, &sd, &so).unwrap(), 3.0);
        assert_eq!(objective(&sd, &sd, &so).unwrap(), 0.0);
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    pass(4, &format!("{} tasks, both fixed points exact, {dt:?}", tasks.len()));
}

/// Criterion 9: metric unit cases. SPL = 1000 for all-optimal successes,
/// SPL <= SR on every battery, heading MAE/RMSE hand cases exact. Under 1 s.
#[test]
fn criterion_9_metric_unit_cases() {
    let t0 = Instant::now();
    let record = |success: bool, path: f64, straight: f64, devs: &[f64]| EpisodeRecord {
        task: geonav::env::NavTask {
            origin: GeoPoint { lon_deg: 0.0, lat_deg: 0.0 },
            destination: GeoPoint { lon_deg: 1.0, lat_deg: 0.0 },
            zeta: 0.05,
            max_steps: 250,
        },
        success,
        termination: if success {
            geonav::env::Termination::Goal
        } else {
            geonav::env::Termination::StepBudget
        },
        path_km: path,
        straight_km: straight,
        steps: 10,
        final_km: 1.0,
        sum_abs_dev: devs.iter().map(|d| d.abs()).sum(),
        sum_sq_dev: devs.iter().map(|d| d * d).sum(),
        n_moving_steps: devs.len() as u32,
    };

    // SPL = 1000 permille when every episode succeeds along an optimal path.
    let optimal: Vec<EpisodeRecord> = (0..7).map(|_| record(true, 42.0, 42.0, &[0.0])).collect();
    assert_eq!(spl(&optimal).unwrap(), 1000.0);

    // SPL <= SR on randomized batteries.
    let mut rng = rng_from(9, "acceptance/metrics");
    for _ in 0..200 {
        let records: Vec<EpisodeRecord> = (0..rng.gen_range(1..30))
            .map(|_| {
                record(
                    rng.gen_bool(0.6),
                    rng.gen_range(30.0..400.0),
                    rng.gen_range(30.0..50.0),
                    &[rng.gen_range(0.0..1.0)],
                )
            })
            .collect();
        let sr = success_rate(&records).unwrap();
        let s = spl(&records).unwrap();
        assert!(s <= sr + 1e-9, "spl {s} exceeds sr {sr}");
    }

    // Hand cases for heading deviation.
    let recs = vec![record(true, 40.0, 40.0, &[0.0, 0.0])];
    assert_eq!(heading_deviation(&recs), (0.0, 0.0));
    let d = 0.37;
    let recs = vec![record(true, 40.0, 40.0, &[d, d, d])];
    let (mae, rmse) = heading_deviation(&recs);
    assert!((mae - d).abs() < 1e-15 && (rmse - d).abs() < 1e-15);
    let recs = vec![record(true, 40.0, 40.0, &[0.0, std::f64::consts::FRAC_PI_2])];
    let (mae, rmse) = heading_deviation(&recs);
    assert!((mae - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    assert!((rmse - std::f64::consts::PI / (2.0 * 2.0f64.sqrt())).abs() < 1e-15);

    // One early-success that undershoots the straight line still caps at 1.
    let recs = vec![record(true, 30.0, 60.0, &[0.1])];
    assert_eq!(spl(&recs).unwrap(), 1000.0);
    let recs = vec![record(true, 60.0, 30.0, &[0.1])];
    assert_eq!(spl(&recs).unwrap(), 500.0);

    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    pass(9, &format!("metric unit cases exact, {dt:?}"));
}

fn run_criterion_scenario(criterion: u32, file: &str, pinned: &[(&str, &str)]) {
    let path = scenario_dir().join(file);
    assert!(path.exists(), "scenario file missing: {}", path.display());
    // The pinned tolerances must appear verbatim in the scenario file.
    let text = std::fs::read_to_string(&path).unwrap();
    for (needle, why) in pinned {
        assert!(
            text.contains(needle),
            "scenario {file} lost its pinned threshold `{needle}` ({why})"
        );
    }
    let out = out_dir(&format!("criterion_{criterion}"));
    let outcome = run_scenario(&path, Some(out), false).unwrap();
    for line in &outcome.report_lines {
        println!("criterion {criterion}: {line}");
    }
    assert!(
        outcome.passed,
        "criterion {criterion} scenario failed:\n{}",
        outcome.failures.join("\n")
    );
    pass(criterion, &format!("scenario {} passed", outcome.name));
}

/// Criterion 5: desk-scale teacher competence. One 5x5-degree dipole region,
/// shaped rewards, hidden (64, 64), at most 50k env steps, 5 seeds: median
/// SR >= 950 permille on 200 held-out in-region tasks, within 15 min/seed.
#[test]
fn criterion_5_teacher_competence() {
    run_criterion_scenario(
        5,
        "teacher_competence.toml",
        &[
            ("rhs = \"950\"", "median SR threshold"),
            ("sr_median", "median SR assertion"),
        ],
    );
}

/// Criterion 6: reward-shaping ablation. Median first-success episode
/// ordering ST < ER < SR over 5 seeds, with ST at most half of SR.
#[test]
fn criterion_6_reward_ablation() {
    run_criterion_scenario(
        6,
        "reward_ablation.toml",
        &[
            ("factor = 0.5", "ST at most half of SR"),
            ("first_success_median.ST", "variant ordering"),
        ],
    );
}

/// Criterion 7: distillation generalization. Student SR beats each teacher
/// by at least 100 permille on the unexplored middle battery and stays
/// within 100 permille of each teacher at home.
#[test]
fn criterion_7_distill_generalization() {
    run_criterion_scenario(
        7,
        "distill_generalization.toml",
        &[
            ("margin = 100", "plus-100-permille margin"),
            ("margin = -100", "within-100-permille adjacency"),
        ],
    );
}

/// Criterion 8: baseline comparison on the same unexplored battery. Every
/// metaheuristic achieves SR > 0 and the student is at least as good as each.
#[test]
fn criterion_8_baseline_comparison() {
    run_criterion_scenario(
        8,
        "baseline_comparison.toml",
        &[
            ("sr.baseline_PSO", "PSO compared"),
            ("sr.baseline_AFSA", "AFSA compared"),
            ("op = \">\"", "strictly positive baseline SR"),
        ],
    );
}

/// Criterion 10: determinism. Re-running the reduced-budget versions of the
/// training and distillation pipelines yields byte-identical logs and
/// reports (wall-time columns excluded).
#[test]
fn criterion_10_determinism() {
    run_criterion_scenario(
        10,
        "determinism.toml",
        &[("mismatched_files", "zero-mismatch assertion")],
    );
}
